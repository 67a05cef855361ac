//! Outward-rounded interval arithmetic and interval enclosures of the flow's
//! sensitivity matrix.
//!
//! Rounding is emulated with error-free transformations: every `+`, `−`, `×`,
//! `÷` computes the round-to-nearest result together with the sign of its
//! rounding error and steps one ulp outward only when the result is inexact,
//! so exact operations stay exact. Transcendental functions are inflated by
//! four ulps on each side.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Result, SlrError};
use crate::field::VectorField;

const TRANSCENDENTAL_ULPS: u32 = 4;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn overflow_down(s: f64) -> f64 {
    if s == f64::INFINITY {
        f64::MAX
    } else {
        s
    }
}

#[inline]
fn overflow_up(s: f64) -> f64 {
    if s == f64::NEG_INFINITY {
        f64::MIN
    } else {
        s
    }
}

#[inline]
pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    let (s, e) = two_sum(a, b);
    if !s.is_finite() {
        return if a.is_finite() && b.is_finite() {
            overflow_down(s)
        } else {
            s
        };
    }
    if e < 0.0 {
        s.next_down()
    } else {
        s
    }
}

#[inline]
pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    let (s, e) = two_sum(a, b);
    if !s.is_finite() {
        return if a.is_finite() && b.is_finite() {
            overflow_up(s)
        } else {
            s
        };
    }
    if e > 0.0 {
        s.next_up()
    } else {
        s
    }
}

#[inline]
pub(crate) fn mul_down(a: f64, b: f64) -> f64 {
    let p = a * b;
    if !p.is_finite() {
        return if a.is_finite() && b.is_finite() {
            overflow_down(p)
        } else {
            p
        };
    }
    let e = a.mul_add(b, -p);
    if e < 0.0 || (p == 0.0 && e != 0.0) {
        p.next_down()
    } else {
        p
    }
}

#[inline]
pub(crate) fn mul_up(a: f64, b: f64) -> f64 {
    let p = a * b;
    if !p.is_finite() {
        return if a.is_finite() && b.is_finite() {
            overflow_up(p)
        } else {
            p
        };
    }
    let e = a.mul_add(b, -p);
    if e > 0.0 || (p == 0.0 && e != 0.0) {
        p.next_up()
    } else {
        p
    }
}

#[inline]
fn div_round(a: f64, b: f64, up: bool) -> f64 {
    let q = a / b;
    if !q.is_finite() {
        return q;
    }
    // sign of (a - q*b) relative to the sign of b tells which side the exact quotient is on
    let r = (-q).mul_add(b, a);
    let exact_greater = if b > 0.0 { r > 0.0 } else { r < 0.0 };
    let exact_smaller = if b > 0.0 { r < 0.0 } else { r > 0.0 };
    if up && exact_greater {
        q.next_up()
    } else if !up && exact_smaller {
        q.next_down()
    } else {
        q
    }
}

fn down_ulps(x: f64, k: u32) -> f64 {
    (0..k).fold(x, |v, _| v.next_down())
}

fn up_ulps(x: f64, k: u32) -> f64 {
    (0..k).fold(x, |v, _| v.next_up())
}

/// A closed real interval `[lo, hi]`.
#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

impl Interval {
    /// Panics if `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub const ZERO: Interval = Interval::point(0.0);
    pub const ONE: Interval = Interval::point(1.0);

    pub fn entire() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// `[-r, r]`.
    pub fn symmetric(r: f64) -> Self {
        let r = r.abs();
        Self { lo: -r, hi: r }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    /// Radius about [`Interval::mid`], rounded up so `mid ± rad` encloses `self`.
    pub fn rad(&self) -> f64 {
        let m = self.mid();
        add_up(self.hi, -m).max(add_up(m, -self.lo))
    }

    pub fn width(&self) -> f64 {
        add_up(self.hi, -self.lo)
    }

    /// Magnitude `max |x|` over the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn sqr(self) -> Interval {
        if self.lo >= 0.0 {
            Interval::new(mul_down(self.lo, self.lo), mul_up(self.hi, self.hi))
        } else if self.hi <= 0.0 {
            Interval::new(mul_down(self.hi, self.hi), mul_up(self.lo, self.lo))
        } else {
            let m = self.mag();
            Interval::new(0.0, mul_up(m, m))
        }
    }

    pub fn exp(self) -> Interval {
        let lo = down_ulps(self.lo.exp(), TRANSCENDENTAL_ULPS).max(0.0);
        let hi = up_ulps(self.hi.exp(), TRANSCENDENTAL_ULPS);
        Interval::new(lo, hi)
    }

    pub fn tanh(self) -> Interval {
        let lo = down_ulps(self.lo.tanh(), TRANSCENDENTAL_ULPS).max(-1.0);
        let hi = up_ulps(self.hi.tanh(), TRANSCENDENTAL_ULPS).min(1.0);
        Interval::new(lo, hi)
    }

    /// Logistic function `1 / (1 + e^{-x})`.
    pub fn sigmoid(self) -> Interval {
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let lo = down_ulps(s(self.lo), TRANSCENDENTAL_ULPS).max(0.0);
        let hi = up_ulps(s(self.hi), TRANSCENDENTAL_ULPS).min(1.0);
        Interval::new(lo, hi)
    }

    pub fn scale(self, k: f64) -> Interval {
        self * Interval::point(k)
    }
}

impl From<f64> for Interval {
    fn from(x: f64) -> Self {
        Interval::point(x)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval {
            lo: add_down(self.lo, rhs.lo),
            hi: add_up(self.hi, rhs.hi),
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval {
            lo: add_down(self.lo, -rhs.hi),
            hi: add_up(self.hi, -rhs.lo),
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let (a, b, c, d) = (self.lo, self.hi, rhs.lo, rhs.hi);
        if a == b && c == d {
            return Interval {
                lo: mul_down(a, c),
                hi: mul_up(a, c),
            };
        }
        let lo = mul_down(a, c)
            .min(mul_down(a, d))
            .min(mul_down(b, c))
            .min(mul_down(b, d));
        let hi = mul_up(a, c)
            .max(mul_up(a, d))
            .max(mul_up(b, c))
            .max(mul_up(b, d));
        Interval { lo, hi }
    }
}

impl std::ops::Div for Interval {
    type Output = Interval;
    /// Division by an interval containing zero yields the entire real line.
    fn div(self, rhs: Interval) -> Interval {
        if rhs.contains(0.0) {
            return Interval::entire();
        }
        let (a, b, c, d) = (self.lo, self.hi, rhs.lo, rhs.hi);
        let lo = div_round(a, c, false)
            .min(div_round(a, d, false))
            .min(div_round(b, c, false))
            .min(div_round(b, d, false));
        let hi = div_round(a, c, true)
            .max(div_round(a, d, true))
            .max(div_round(b, c, true))
            .max(div_round(b, d, true));
        Interval { lo, hi }
    }
}

/// Dense interval matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Interval::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Interval::ONE;
        }
        m
    }

    pub fn from_point(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| Interval::point(m[(i, j)]))
            .collect();
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Interval) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.data[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> &[Interval] {
        &self.data
    }

    pub fn mid(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).mid())
    }

    pub fn rad(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).rad())
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).lo())
    }

    pub fn upper(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).hi())
    }

    /// Entrywise containment of a point matrix.
    pub fn contains(&self, m: &DMatrix<f64>) -> bool {
        m.shape() == (self.rows, self.cols)
            && (0..self.rows).all(|i| (0..self.cols).all(|j| self.get(i, j).contains(m[(i, j)])))
    }

    pub fn contains_matrix(&self, other: &IntervalMatrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.contains_interval(b))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(Interval::is_finite)
    }

    pub fn max_width(&self) -> f64 {
        self.data.iter().map(Interval::width).fold(0.0, f64::max)
    }

    /// Upper bound on the induced ∞-norm (max absolute row sum) of every member.
    pub fn mag_inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).fold(0.0, |acc, j| add_up(acc, self.get(i, j).mag())))
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, rhs: &IntervalMatrix) -> IntervalMatrix {
        assert_eq!(self.cols, rhs.rows, "interval matrix shape mismatch");
        IntervalMatrix::from_fn(self.rows, rhs.cols, |i, j| {
            (0..self.cols).fold(Interval::ZERO, |acc, k| {
                acc + self.get(i, k) * rhs.get(k, j)
            })
        })
    }

    pub fn mul_vec(&self, v: &[Interval]) -> Vec<Interval> {
        assert_eq!(self.cols, v.len(), "interval matrix-vector shape mismatch");
        (0..self.rows)
            .map(|i| (0..self.cols).fold(Interval::ZERO, |acc, k| acc + self.get(i, k) * v[k]))
            .collect()
    }

    pub fn add(&self, rhs: &IntervalMatrix) -> IntervalMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| *a + *b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &IntervalMatrix) -> IntervalMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| *a - *b)
                .collect(),
        }
    }

    pub fn scale(&self, k: Interval) -> IntervalMatrix {
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| *a * k).collect(),
        }
    }

    /// Entrywise intersection; `None` when some entries are disjoint.
    pub fn intersect(&self, other: &IntervalMatrix) -> Option<IntervalMatrix> {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.intersect(b))
            .collect::<Option<Vec<_>>>()?;
        Some(IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Grows every entry by `[-r, r]`.
    pub fn inflate(&self, r: f64) -> IntervalMatrix {
        let pad = Interval::symmetric(r);
        IntervalMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| *a + pad).collect(),
        }
    }
}

/// Axis-aligned box in state space.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionBox(pub Vec<Interval>);

impl RegionBox {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && self.0.iter().zip(x).all(|(iv, v)| iv.contains(*v))
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.0.iter().map(Interval::mid).collect()
    }
}

/// Axis-aligned box enclosing the spherical cap of chord radius `s` around
/// `anchor` on the sphere `‖x − x₀‖ = δ₀`: `[anchor ± s]` clipped to the
/// sphere's bounding box.
pub fn box_of_cap(anchor: &[f64], s: f64, x0: &[f64], delta0: f64) -> RegionBox {
    assert_eq!(anchor.len(), x0.len());
    let s = s.max(0.0);
    RegionBox(
        anchor
            .iter()
            .zip(x0)
            .map(|(&a, &c)| {
                let (mut lo, mut hi) = if s == 0.0 {
                    (a, a)
                } else {
                    (add_down(a, -s), add_up(a, s))
                };
                lo = lo.max(add_down(c, -delta0));
                hi = hi.min(add_up(c, delta0));
                // keep the anchor itself even if it sits a rounding error outside the sphere box
                Interval::new(lo.min(a), hi.max(a))
            })
            .collect(),
    )
}

/// Enclosure of `A⁻¹` for a point matrix `A`, via an approximate inverse `Q`
/// and the Neumann bound `‖A⁻¹ − Q‖ ≤ β/(1−β)·‖Q‖` with `β = ‖I − QA‖∞`.
pub fn inverse_enclosure(a: &DMatrix<f64>) -> Result<IntervalMatrix> {
    let n = a.nrows();
    if a.is_identity(0.0) {
        return Ok(IntervalMatrix::identity(n));
    }
    let q = a
        .clone()
        .try_inverse()
        .ok_or_else(|| SlrError::Domain("matrix is not invertible".into()))?;
    let q_int = IntervalMatrix::from_point(&q);
    enclose_inverse_with(&q_int, &IntervalMatrix::from_point(a), &q)
}

fn enclose_inverse_with(
    q_int: &IntervalMatrix,
    a_int: &IntervalMatrix,
    q: &DMatrix<f64>,
) -> Result<IntervalMatrix> {
    let n = q.nrows();
    let residual = IntervalMatrix::identity(n).sub(&q_int.matmul(a_int));
    let beta = residual.mag_inf_norm();
    if beta >= 0.5 {
        return Err(SlrError::Domain(format!(
            "inverse enclosure failed: residual norm {beta:e}"
        )));
    }
    let q_norm = q_int.mag_inf_norm();
    let eta = mul_up(div_round(beta, add_down(1.0, -beta), true), q_norm);
    Ok(q_int.inflate(eta))
}

/// Right-hand side enclosure `f(X, [t])`; fails when the field has no interval extension.
fn field_interval(field: &VectorField, x: &[Interval], t: Interval) -> Result<Vec<Interval>> {
    field.eval_interval(x, t).ok_or_else(|| {
        SlrError::Unsupported(format!(
            "field kind {:?} has no interval extension; use the sampled Lipschitz mode",
            field.kind()
        ))
    })
}

fn jacobian_interval(field: &VectorField, x: &[Interval], t: Interval) -> Result<IntervalMatrix> {
    field.jacobian_interval(x, t).ok_or_else(|| {
        SlrError::Unsupported(format!(
            "field kind {:?} has no interval Jacobian; use the sampled Lipschitz mode",
            field.kind()
        ))
    })
}

const APRIORI_ROUNDS: usize = 40;

/// First-order a-priori enclosure: a box `B` with `X + [0,h]·f(B) ⊆ B`,
/// so every trajectory starting in `X` stays inside it over `[t, t+h]`.
fn apriori_box(field: &VectorField, x: &[Interval], t: f64, h: f64) -> Result<Vec<Interval>> {
    let span = Interval::new(0.0, h);
    let t_iv = Interval::new(t, add_up(t, h));
    let picard = |b: &[Interval]| -> Result<Vec<Interval>> {
        let fb = field_interval(field, b, t_iv)?;
        Ok(x.iter().zip(&fb).map(|(xi, fi)| *xi + span * *fi).collect())
    };
    let mut b = picard(x)?;
    for round in 0..APRIORI_ROUNDS {
        let grow = if round < APRIORI_ROUNDS / 2 { 0.1 } else { 0.5 };
        let candidate: Vec<Interval> = b
            .iter()
            .map(|iv| {
                let pad = grow * iv.width() + 1e-13 * (1.0 + iv.mag());
                *iv + Interval::symmetric(pad)
            })
            .collect();
        let image = picard(&candidate)?;
        if !image.iter().all(Interval::is_finite) {
            break;
        }
        if image
            .iter()
            .zip(&candidate)
            .all(|(i, c)| c.contains_interval(i))
        {
            return Ok(image);
        }
        b = image;
    }
    Err(SlrError::EnclosureFailure { t })
}

/// Running state of the interval variational integration.
///
/// The sensitivity enclosure is kept in Lohner form `P + C·[E]`, with `P` a
/// point matrix, `C` orthonormal, `[E]` a small interval matrix; the center
/// trajectory is a point `y` with a rigorous ∞-norm error radius.
struct SensitivityEnclosure {
    center: Vec<f64>,
    center_err: f64,
    p: DMatrix<f64>,
    c: DMatrix<f64>,
    e: IntervalMatrix,
    f: IntervalMatrix,
}

impl SensitivityEnclosure {
    fn new(center: Vec<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            center_err: 0.0,
            p: DMatrix::identity(n, n),
            c: DMatrix::identity(n, n),
            e: IntervalMatrix::zeros(n, n),
            f: IntervalMatrix::identity(n),
        }
    }

    fn step(&mut self, field: &VectorField, offsets: &[Interval], t: f64, h: f64) -> Result<()> {
        let n = self.center.len();
        let t_iv = Interval::new(t, add_up(t, h));
        let h_iv = Interval::point(h);

        // states of the whole region at t, in mean-value form around the center trajectory
        let spread = self.f.mul_vec(offsets);
        let x_start: Vec<Interval> = self
            .center
            .iter()
            .zip(&spread)
            .map(|(&y, s)| Interval::point(y) + Interval::symmetric(self.center_err) + *s)
            .collect();
        let region_box = apriori_box(field, &x_start, t, h)?;
        let jac = jacobian_interval(field, &region_box, t_iv)?;

        // transition matrix enclosure I + h[J] + [-ε, ε], ε = e^{Lh} − 1 − Lh ≤ (Lh)²/2·e^{Lh}
        let lh = mul_up(jac.mag_inf_norm(), h);
        let remainder = mul_up(mul_up(mul_up(lh, lh), 0.5), up_ulps(lh.exp(), 4));
        let phi = IntervalMatrix::identity(n)
            .add(&jac.scale(h_iv))
            .inflate(remainder);
        if !phi.is_finite() {
            return Err(SlrError::EnclosureFailure { t });
        }

        // center trajectory: second-order Taylor step with Lagrange remainder
        let y_iv: Vec<Interval> = self.center.iter().copied().map(Interval::point).collect();
        let point_box = apriori_box(field, &y_iv, t, h)?;
        let f_y = field_interval(field, &y_iv, Interval::point(t))?;
        let f_box = field_interval(field, &point_box, t_iv)?;
        let jf = jacobian_interval(field, &point_box, t_iv)?.mul_vec(&f_box);
        let half_h2 = Interval::point(mul_up(h, h)) * Interval::point(0.5);
        let err_ball = vec![Interval::symmetric(self.center_err); n];
        let propagated_err = phi.mul_vec(&err_ball);
        let next_center: Vec<Interval> = (0..n)
            .map(|i| y_iv[i] + h_iv * f_y[i] + half_h2 * jf[i] + propagated_err[i])
            .collect();
        self.center = next_center.iter().map(Interval::mid).collect();
        self.center_err = next_center.iter().map(Interval::rad).fold(0.0, f64::max);

        // sensitivity: F_{k+1} ∈ M·P + M·C·[E] + [D]·[F_k] with M = mid(Φ), [D] = Φ − M
        let m = phi.mid();
        let m_int = IntervalMatrix::from_point(&m);
        let d = phi.sub(&m_int);
        let mp = m_int.matmul(&IntervalMatrix::from_point(&self.p));
        let p_next = mp.mid();
        let mc = m_int.matmul(&IntervalMatrix::from_point(&self.c));
        let c_next = mc.mid().qr().q();
        let c_next_t = c_next.transpose();
        let c_inv = enclose_inverse_with(
            &IntervalMatrix::from_point(&c_next_t),
            &IntervalMatrix::from_point(&c_next),
            &c_next_t,
        )?;
        let r = c_inv.matmul(&mc);
        let local = mp
            .sub(&IntervalMatrix::from_point(&p_next))
            .add(&d.matmul(&self.f));
        let e_next = r.matmul(&self.e).add(&c_inv.matmul(&local));
        let lohner = IntervalMatrix::from_point(&p_next)
            .add(&IntervalMatrix::from_point(&c_next).matmul(&e_next));
        let direct = phi.matmul(&self.f);
        let f_next = lohner.intersect(&direct).unwrap_or(lohner);
        if !f_next.is_finite() {
            return Err(SlrError::EnclosureFailure { t });
        }

        self.p = p_next;
        self.c = c_next;
        self.e = e_next;
        self.f = f_next;
        Ok(())
    }
}

const MAX_SPLIT_DEPTH: u32 = 10;

fn step_with_splitting(
    enc: &mut SensitivityEnclosure,
    field: &VectorField,
    offsets: &[Interval],
    t: f64,
    h: f64,
    depth: u32,
) -> Result<()> {
    let snapshot = (enc.center.clone(), enc.center_err);
    match enc.step(field, offsets, t, h) {
        Err(SlrError::EnclosureFailure { .. }) if depth < MAX_SPLIT_DEPTH => {
            enc.center = snapshot.0;
            enc.center_err = snapshot.1;
            let half = 0.5 * h;
            step_with_splitting(enc, field, offsets, t, half, depth + 1)?;
            step_with_splitting(enc, field, offsets, t + half, h - half, depth + 1)
        }
        other => other,
    }
}

/// Interval matrix `[F]` containing `∂χ_{t0}^{t1}(x)/∂x` for every `x` in `region`.
///
/// The interval variational equation `F' = J([X])·F` is stepped with a
/// first-order interval Euler step whose truncation error is covered by the
/// exponential remainder `e^{‖J‖h} − 1 − ‖J‖h`; `[X]` comes from a Picard
/// a-priori box around a mean-value enclosure of the region's states. Steps
/// whose a-priori box cannot be validated are bisected.
pub fn interval_sensitivity(
    field: &VectorField,
    region: &RegionBox,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<IntervalMatrix> {
    let n = field.dim();
    if region.dim() != n {
        return Err(SlrError::DimensionMismatch {
            what: "region box",
            expected: n,
            got: region.dim(),
        });
    }
    if t1 < t0 {
        return Err(SlrError::Domain(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    if t1 == t0 {
        return Ok(IntervalMatrix::identity(n));
    }
    let steps = steps.max(1);
    let center = region.midpoint();
    let offsets: Vec<Interval> = region
        .0
        .iter()
        .zip(&center)
        .map(|(iv, &c)| *iv - Interval::point(c))
        .collect();
    let mut enc = SensitivityEnclosure::new(center);
    let h = (t1 - t0) / steps as f64;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let h_k = if k + 1 == steps { t1 - t } else { h };
        step_with_splitting(&mut enc, field, &offsets, t, h_k, 0)?;
    }
    Ok(enc.f)
}

/// Largest singular value, inflated slightly to cover the SVD's own rounding.
pub(crate) fn sigma_max_upper(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    // backward-stable SVD: computed values are within a small multiple of n·ε·σ_max
    let n = m.nrows().max(m.ncols()) as f64;
    let s = m.clone().singular_values().max();
    up_ulps(s * (1.0 + 32.0 * n * f64::EPSILON), 2)
}

/// Upper bound on `max ‖A_j·F·A_0⁻¹‖₂` over all `F ∈ [F]`.
///
/// With `[A_j F A_0⁻¹] = mid ± rad` (entrywise), every member is `mid + Δ`,
/// `|Δ| ≤ rad`, so `‖·‖₂ ≤ σ_max(mid) + σ_max(rad)`.
pub fn lipschitz_bound(
    f_interval: &IntervalMatrix,
    a_j: &DMatrix<f64>,
    a_0: &DMatrix<f64>,
) -> Result<f64> {
    let n = f_interval.rows();
    if a_j.shape() != (n, n) || a_0.shape() != (n, n) || f_interval.cols() != n {
        return Err(SlrError::DimensionMismatch {
            what: "metric factor",
            expected: n,
            got: a_j.nrows(),
        });
    }
    let a0_inv = inverse_enclosure(a_0)?;
    let product = IntervalMatrix::from_point(a_j)
        .matmul(f_interval)
        .matmul(&a0_inv);
    if !product.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(add_up(
        sigma_max_upper(&product.mid()),
        sigma_max_upper(&product.rad()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn exact_operations_stay_exact() {
        assert_eq!(iv(1.0, 2.0) + iv(3.0, 4.0), iv(4.0, 6.0));
        assert_eq!(
            Interval::point(3.0) * Interval::point(0.5),
            Interval::point(1.5)
        );
        assert_eq!(Interval::ONE * Interval::ONE, Interval::ONE);
    }

    #[test]
    fn inexact_sum_is_widened() {
        let s = Interval::point(0.1) + Interval::point(0.2);
        assert!(s.lo() < s.hi());
        // 0.1 + 0.2 in exact rational arithmetic of the two doubles
        assert!(s.contains(0.30000000000000004) || s.contains(0.3));
    }

    #[test]
    fn division_by_zero_containing_interval_is_entire() {
        let q = iv(1.0, 2.0) / iv(-1.0, 1.0);
        assert_eq!(q, Interval::entire());
    }

    #[test]
    fn sqr_of_straddling_interval_starts_at_zero() {
        assert_eq!(iv(-2.0, 1.0).sqr(), iv(0.0, 4.0));
    }

    #[test]
    fn box_of_cap_degenerate_and_full() {
        let x0 = [0.0, 0.0];
        let anchor = [1.0, 0.0];
        let b = box_of_cap(&anchor, 0.0, &x0, 1.0);
        assert_eq!(b.0, vec![Interval::point(1.0), Interval::point(0.0)]);
        let full = box_of_cap(&anchor, 2.0, &x0, 1.0);
        for comp in &full.0 {
            assert!(comp.contains_interval(&iv(-1.0, 1.0)));
        }
    }

    #[test]
    fn identity_sensitivity_bound_is_one() {
        let f = IntervalMatrix::identity(3);
        let i3 = DMatrix::identity(3, 3);
        let l = lipschitz_bound(&f, &i3, &i3).unwrap();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
    }

    #[test]
    fn inverse_enclosure_contains_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let inv = inverse_enclosure(&a).unwrap();
        let exact = DMatrix::from_row_slice(2, 2, &[0.6, -0.2, -0.2, 0.4]);
        assert!(inv.contains(&exact));
        assert!(inv.max_width() < 1e-14);
    }

    #[test]
    fn zero_span_sensitivity_is_identity() {
        let field = VectorField::van_der_pol(1.0);
        let region = RegionBox(vec![iv(1.9, 2.1), iv(-0.1, 0.1)]);
        let f = interval_sensitivity(&field, &region, 0.5, 0.5, 10).unwrap();
        assert_eq!(f, IntervalMatrix::identity(2));
    }

    fn arb_interval() -> impl Strategy<Value = (Interval, f64)> {
        (-1e3f64..1e3, 0.0f64..1e2, 0.0f64..=1.0).prop_map(|(lo, w, s)| {
            let i = Interval::new(lo, lo + w);
            (i, lo + s * w)
        })
    }

    proptest! {
        #[test]
        fn arithmetic_encloses_members((a, x) in arb_interval(), (b, y) in arb_interval()) {
            prop_assert!((a + b).contains(x + y));
            prop_assert!((a - b).contains(x - y));
            prop_assert!((a * b).contains(x * y));
            if !b.contains(0.0) {
                prop_assert!((a / b).contains(x / y));
            }
        }

        #[test]
        fn transcendental_enclosures((a, x) in arb_interval()) {
            let small = Interval::new(a.lo() / 100.0, a.hi() / 100.0);
            prop_assert!(small.tanh().contains((x / 100.0).tanh()));
            prop_assert!(small.exp().contains((x / 100.0).exp()));
            prop_assert!(small.sigmoid().contains(1.0 / (1.0 + (-x / 100.0).exp())));
        }
    }
}
