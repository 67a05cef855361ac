"""Reference sample budgets for the acceptance test, computed with mpmath.

The cap probability is integrated directly from the sin^(n-2) colatitude
density rather than through the incomplete beta function the library uses.
Prints a Rust array (values rounded to the nearest f64) of (gamma, mu, lambda, first_loss, delta0, n, n_real).
"""

import random

import mpmath as mp

mp.mp.dps = 50


def cap_probability(r, delta0, n):
    s = min(r / (2 * delta0), mp.mpf(1))
    theta = 2 * mp.asin(s)
    dens = lambda u: mp.sin(u) ** (n - 2)
    return mp.quad(dens, [0, theta]) / mp.quad(dens, [0, mp.pi])


def budget(gamma, mu, lam, l1, delta0, n):
    gamma, mu, lam, l1, delta0 = map(mp.mpf, (gamma, mu, lam, l1, delta0))
    r = (1 - mu) * l1 / lam
    if r * r >= 2 * delta0 * delta0:
        p = cap_probability(min(r, 2 * delta0), delta0, n)
    else:
        rho = r * mp.sqrt(1 - r * r / (4 * delta0 * delta0))
        c = mp.gamma(mp.mpf(n) / 2) / mp.gamma(mp.mpf(n + 1) / 2) / (2 * mp.sqrt(mp.pi))
        p = c * (rho / delta0) ** (n - 1)
    if p >= 1:
        return mp.mpf(0)
    return mp.log(gamma) / mp.log(1 - p)


def main():
    rng = random.Random(20240611)
    rows = []
    while len(rows) < 50:
        gamma = round(rng.choice([0.001, 0.01, 0.05, 0.1, 0.2, 0.5]) * rng.uniform(0.5, 1.0), 6)
        mu = round(rng.uniform(1.01, 2.0), 4)
        lam = round(10 ** rng.uniform(-1, 1), 5)
        delta0 = round(10 ** rng.uniform(-2, 0), 5)
        l1 = -round(delta0 * 10 ** rng.uniform(-1, 0.8), 6)
        n = rng.choice([2, 3, 4, 6])
        nr = budget(gamma, mu, lam, l1, delta0, n)
        if nr > 1e15 or nr == 0:
            continue
        rows.append((gamma, mu, lam, l1, delta0, n, nr))
    print("const PLAN_REFERENCE: [(f64, f64, f64, f64, f64, usize, f64); 50] = [")
    for g, m, la, l1, d, n, nr in rows:
        print(f"    ({g!r}, {m!r}, {la!r}, {l1!r}, {d!r}, {n}, {float(nr)!r}),")
    print("];")


if __name__ == "__main__":
    main()
