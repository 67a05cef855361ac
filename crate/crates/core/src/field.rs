//! Right-hand sides `f(x, x(0), t, θ)` with exact Jacobians `∂f/∂x`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::interval::{Interval, IntervalMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Linear,
    Vanderpol,
    Neural,
    UserRegistered,
}

/// A smooth ODE right-hand side.
///
/// Implementors write into caller-provided buffers; the Jacobian is row-major
/// `n × n` with respect to `x` only. Interval extensions are optional; fields
/// without them can only be used with the sampled Lipschitz mode.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn kind(&self) -> FieldKind {
        FieldKind::UserRegistered
    }

    /// Flat parameter vector θ.
    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Whether `f` reads the trajectory's initial state `x(0)`.
    fn depends_on_initial(&self) -> bool {
        false
    }

    fn eval_into(&self, x: &[f64], x0: &[f64], t: f64, out: &mut [f64]);

    fn jacobian_into(&self, x: &[f64], x0: &[f64], t: f64, out: &mut [f64]);

    fn eval_interval(&self, _x: &[Interval], _t: Interval) -> Option<Vec<Interval>> {
        None
    }

    fn jacobian_interval(&self, _x: &[Interval], _t: Interval) -> Option<IntervalMatrix> {
        None
    }
}

/// Cheaply clonable handle to a vector field.
#[derive(Clone, Debug)]
pub struct VectorField(Arc<dyn Dynamics>);

impl VectorField {
    pub fn new(dynamics: impl Dynamics + 'static) -> Self {
        Self(Arc::new(dynamics))
    }

    /// `f(x) = A x` for a square matrix `A`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(SlrError::DimensionMismatch {
                what: "linear field matrix columns",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if a.nrows() == 0 {
            return Err(SlrError::UnsupportedDimension(0));
        }
        Ok(Self::new(LinearField { a }))
    }

    /// Zero field in dimension `n` (every point is an equilibrium).
    pub fn zero(n: usize) -> Result<Self> {
        Self::linear(DMatrix::zeros(n, n))
    }

    /// The harmonic rotation `x' = (x₂, −x₁)`.
    pub fn rotation() -> Self {
        Self::new(LinearField {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        })
    }

    /// Van der Pol oscillator `x₁' = x₂`, `x₂' = μ(1 − x₁²)x₂ − x₁`.
    pub fn van_der_pol(mu: f64) -> Self {
        Self::new(VanDerPol { mu })
    }

    pub fn neural(spec: NeuralFieldSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self::new(NeuralField { spec }))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn kind(&self) -> FieldKind {
        self.0.kind()
    }

    pub fn params(&self) -> Vec<f64> {
        self.0.params()
    }

    pub fn depends_on_initial(&self) -> bool {
        self.0.depends_on_initial()
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.0.as_ref()
    }

    fn check_dims(&self, x: &[f64], x0: &[f64]) -> Result<()> {
        let n = self.dim();
        if x.len() != n {
            return Err(SlrError::DimensionMismatch {
                what: "state",
                expected: n,
                got: x.len(),
            });
        }
        if x0.len() != n {
            return Err(SlrError::DimensionMismatch {
                what: "initial state",
                expected: n,
                got: x0.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x0: &[f64], t: f64) -> Result<DVector<f64>> {
        self.check_dims(x, x0)?;
        let mut out = DVector::zeros(self.dim());
        self.0.eval_into(x, x0, t, out.as_mut_slice());
        Ok(out)
    }

    pub fn jacobian(&self, x: &[f64], x0: &[f64], t: f64) -> Result<DMatrix<f64>> {
        self.check_dims(x, x0)?;
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.0.jacobian_into(x, x0, t, &mut buf);
        Ok(DMatrix::from_row_slice(n, n, &buf))
    }

    #[inline]
    pub(crate) fn eval_raw(&self, x: &[f64], x0: &[f64], t: f64, out: &mut [f64]) {
        self.0.eval_into(x, x0, t, out);
    }

    #[inline]
    pub(crate) fn jacobian_raw(&self, x: &[f64], x0: &[f64], t: f64, out: &mut [f64]) {
        self.0.jacobian_into(x, x0, t, out);
    }

    pub fn eval_interval(&self, x: &[Interval], t: Interval) -> Option<Vec<Interval>> {
        self.0.eval_interval(x, t)
    }

    pub fn jacobian_interval(&self, x: &[Interval], t: Interval) -> Option<IntervalMatrix> {
        self.0.jacobian_interval(x, t)
    }
}

#[derive(Debug)]
struct LinearField {
    a: DMatrix<f64>,
}

impl Dynamics for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Linear
    }

    fn params(&self) -> Vec<f64> {
        self.a.transpose().iter().copied().collect()
    }

    fn eval_into(&self, x: &[f64], _x0: &[f64], _t: f64, out: &mut [f64]) {
        let n = self.a.nrows();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
        }
    }

    fn jacobian_into(&self, _x: &[f64], _x0: &[f64], _t: f64, out: &mut [f64]) {
        let n = self.a.nrows();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.a[(i, j)];
            }
        }
    }

    fn eval_interval(&self, x: &[Interval], _t: Interval) -> Option<Vec<Interval>> {
        Some(IntervalMatrix::from_point(&self.a).mul_vec(x))
    }

    fn jacobian_interval(&self, _x: &[Interval], _t: Interval) -> Option<IntervalMatrix> {
        Some(IntervalMatrix::from_point(&self.a))
    }
}

#[derive(Debug)]
struct VanDerPol {
    mu: f64,
}

impl Dynamics for VanDerPol {
    fn dim(&self) -> usize {
        2
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Vanderpol
    }

    fn params(&self) -> Vec<f64> {
        vec![self.mu]
    }

    fn eval_into(&self, x: &[f64], _x0: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[1];
        out[1] = self.mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
    }

    fn jacobian_into(&self, x: &[f64], _x0: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
        out[2] = -2.0 * self.mu * x[0] * x[1] - 1.0;
        out[3] = self.mu * (1.0 - x[0] * x[0]);
    }

    fn eval_interval(&self, x: &[Interval], _t: Interval) -> Option<Vec<Interval>> {
        let mu = Interval::point(self.mu);
        let damping = mu * (Interval::ONE - x[0].sqr());
        Some(vec![x[1], damping * x[1] - x[0]])
    }

    fn jacobian_interval(&self, x: &[Interval], _t: Interval) -> Option<IntervalMatrix> {
        let mu = Interval::point(self.mu);
        let mut j = IntervalMatrix::zeros(2, 2);
        j.set(0, 1, Interval::ONE);
        j.set(
            1,
            0,
            -(Interval::point(2.0) * mu * x[0] * x[1]) - Interval::ONE,
        );
        j.set(1, 1, mu * (Interval::ONE - x[0].sqr()));
        Some(j)
    }
}

/// Smooth activation applied after every layer, including the last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation value `a = σ(z)`.
    #[inline]
    fn derivative_from_value(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    fn apply_interval(self, z: Interval) -> Interval {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.sigmoid(),
        }
    }

    fn derivative_interval(self, a: Interval) -> Interval {
        match self {
            Activation::Tanh => (Interval::ONE - a.sqr())
                .intersect(&Interval::new(0.0, 1.0))
                .unwrap_or(Interval::new(0.0, 1.0)),
            Activation::Sigmoid => {
                // s(1 − s) is increasing below 1/2 and decreasing above
                let g = |s: f64| Interval::point(s) * (Interval::ONE - Interval::point(s));
                let ends = g(a.lo()).hull(&g(a.hi()));
                let upper = if a.contains(0.5) {
                    0.25
                } else {
                    ends.hi().min(0.25)
                };
                Interval::new(ends.lo().clamp(0.0, upper), upper)
            }
        }
    }
}

/// Dense network `x ↦ σ(W_L ⋯ σ(W_1 u + b_1) ⋯ + b_L)` with `u = x`, or
/// `u = [x, x(0)]` when the field depends on the initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralFieldSpec {
    /// Layer widths `[input, hidden…, n]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Row-major weight matrices; layer `l` is `widths[l+1] × widths[l]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub depends_on_initial: bool,
}

impl NeuralFieldSpec {
    pub fn state_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(SlrError::Config(
                "neural field needs at least two positive layer widths".into(),
            ));
        }
        let n = self.state_dim();
        let expected_input = if self.depends_on_initial { 2 * n } else { n };
        if self.widths[0] != expected_input {
            return Err(SlrError::Config(format!(
                "neural field input width {} must equal {} (state dimension {n}{})",
                self.widths[0],
                expected_input,
                if self.depends_on_initial {
                    ", doubled for x(0) input"
                } else {
                    ""
                }
            )));
        }
        if self.weights.len() != self.layers() || self.biases.len() != self.layers() {
            return Err(SlrError::Config(format!(
                "neural field has {} layers but {} weight matrices and {} bias vectors",
                self.layers(),
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            if self.weights[l].len() != fan_in * fan_out {
                return Err(SlrError::Config(format!(
                    "layer {l}: weight matrix has {} entries, expected {fan_out}x{fan_in}",
                    self.weights[l].len()
                )));
            }
            if self.biases[l].len() != fan_out {
                return Err(SlrError::Config(format!(
                    "layer {l}: bias has {} entries, expected {fan_out}",
                    self.biases[l].len()
                )));
            }
        }
        if self
            .weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(SlrError::Config(
                "neural field parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Gaussian weights `N(0, scale²/fan_in)` and zero biases from a fixed seed.
    pub fn seeded(widths: &[usize], activation: Activation, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = scale / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect(),
            );
            biases.push(
                (0..fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.1 * z
                    })
                    .collect(),
            );
        }
        Self {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
            depends_on_initial: false,
        }
    }
}

const STACK_WIDTH: usize = 64;

#[derive(Debug)]
struct NeuralField {
    spec: NeuralFieldSpec,
}

impl NeuralField {
    fn input(&self, x: &[f64], x0: &[f64]) -> Vec<f64> {
        if self.spec.depends_on_initial {
            x.iter().chain(x0).copied().collect()
        } else {
            x.to_vec()
        }
    }

    /// Forward pass keeping every layer's activations (index 0 is the input).
    fn forward(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let mut acts = vec![input];
        for l in 0..self.spec.layers() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = &self.spec.weights[l];
            let prev = &acts[l];
            let next = (0..fan_out)
                .map(|i| {
                    let z = self.spec.biases[l][i]
                        + (0..fan_in)
                            .map(|j| w[i * fan_in + j] * prev[j])
                            .sum::<f64>();
                    self.spec.activation.apply(z)
                })
                .collect();
            acts.push(next);
        }
        acts
    }
}

impl Dynamics for NeuralField {
    fn dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn kind(&self) -> FieldKind {
        FieldKind::Neural
    }

    fn params(&self) -> Vec<f64> {
        self.spec
            .weights
            .iter()
            .zip(&self.spec.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    fn depends_on_initial(&self) -> bool {
        self.spec.depends_on_initial
    }

    fn eval_into(&self, x: &[f64], x0: &[f64], _t: f64, out: &mut [f64]) {
        let widest = self.spec.widths.iter().copied().max().unwrap_or(0);
        if widest > STACK_WIDTH {
            let acts = self.forward(self.input(x, x0));
            out.copy_from_slice(acts.last().expect("at least one layer"));
            return;
        }
        // ping-pong between two stack buffers; this is the integrators' hot path
        let mut a = [0.0; STACK_WIDTH];
        let mut b = [0.0; STACK_WIDTH];
        let n = x.len();
        a[..n].copy_from_slice(x);
        if self.spec.depends_on_initial {
            a[n..2 * n].copy_from_slice(x0);
        }
        for l in 0..self.spec.layers() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = &self.spec.weights[l];
            let bias = &self.spec.biases[l];
            for i in 0..fan_out {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                let z = bias[i]
                    + row
                        .iter()
                        .zip(&a[..fan_in])
                        .map(|(p, q)| p * q)
                        .sum::<f64>();
                b[i] = self.spec.activation.apply(z);
            }
            std::mem::swap(&mut a, &mut b);
        }
        out.copy_from_slice(&a[..out.len()]);
    }

    fn jacobian_into(&self, x: &[f64], x0: &[f64], _t: f64, out: &mut [f64]) {
        let acts = self.forward(self.input(x, x0));
        let n = self.dim();
        // chain rule from the input side: G ← diag(σ'(z_l)) W_l G, G₀ = ∂u/∂x
        let in_w = self.spec.widths[0];
        let mut g = vec![0.0; in_w * n];
        for i in 0..n {
            g[i * n + i] = 1.0;
        }
        for l in 0..self.spec.layers() {
            let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
            let w = &self.spec.weights[l];
            let mut next = vec![0.0; fan_out * n];
            for i in 0..fan_out {
                let d = self.spec.activation.derivative_from_value(acts[l + 1][i]);
                for c in 0..n {
                    let s: f64 = (0..fan_in).map(|k| w[i * fan_in + k] * g[k * n + c]).sum();
                    next[i * n + c] = d * s;
                }
            }
            g = next;
        }
        out.copy_from_slice(&g);
    }

    fn eval_interval(&self, x: &[Interval], _t: Interval) -> Option<Vec<Interval>> {
        if self.spec.depends_on_initial {
            return None;
        }
        let mut a = x.to_vec();
        for l in 0..self.spec.layers() {
            let w = self.layer_matrix(l);
            a = w
                .mul_vec(&a)
                .into_iter()
                .zip(&self.spec.biases[l])
                .map(|(z, &b)| self.spec.activation.apply_interval(z + Interval::point(b)))
                .collect();
        }
        Some(a)
    }

    fn jacobian_interval(&self, x: &[Interval], _t: Interval) -> Option<IntervalMatrix> {
        if self.spec.depends_on_initial {
            return None;
        }
        let n = self.dim();
        let mut a = x.to_vec();
        let mut g = IntervalMatrix::identity(n);
        for l in 0..self.spec.layers() {
            let w = self.layer_matrix(l);
            a = w
                .mul_vec(&a)
                .into_iter()
                .zip(&self.spec.biases[l])
                .map(|(z, &b)| self.spec.activation.apply_interval(z + Interval::point(b)))
                .collect();
            let wg = w.matmul(&g);
            g = IntervalMatrix::from_fn(wg.rows(), n, |i, c| {
                self.spec.activation.derivative_interval(a[i]) * wg.get(i, c)
            });
        }
        Some(g)
    }
}

impl NeuralField {
    fn layer_matrix(&self, l: usize) -> IntervalMatrix {
        let (fan_in, fan_out) = (self.spec.widths[l], self.spec.widths[l + 1]);
        let w = &self.spec.weights[l];
        IntervalMatrix::from_fn(fan_out, fan_in, |i, j| Interval::point(w[i * fan_in + j]))
    }
}
