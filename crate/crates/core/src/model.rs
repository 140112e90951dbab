//! Network definition: activation, weights, stimulus, the learning and
//! retrieval vector fields, their Jacobian and the energy diagnostic.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, SymmetricEigen};
use crate::rng;
use crate::scalar::Scalar;
use rand::Rng;
use std::f64::consts::PI;

/// Parameters of the learning network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig<T> {
    /// Neuron count.
    pub n: usize,
    /// Coupling gain.
    pub g: T,
    /// Input strength.
    pub a: T,
    /// Learning-rate time constant.
    pub b: T,
    /// Activation steepness.
    pub lambda: T,
    /// Exposure time of a single training vector.
    pub t_s: T,
    /// Total training duration.
    pub t_train: T,
}

impl<T: Scalar> Default for NetworkConfig<T> {
    fn default() -> Self {
        Self {
            n: 81,
            g: T::of(0.3),
            a: T::of(30.0),
            b: T::of(300.0),
            lambda: T::of(1.4),
            t_s: T::of(12.0),
            t_train: T::of(6000.0),
        }
    }
}

impl<T: Scalar> NetworkConfig<T> {
    pub fn with_n(n: usize) -> Self {
        Self { n, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.g > T::zero()) {
            return bad("g must be positive");
        }
        if !(self.a >= T::zero()) {
            return bad("A must be non-negative");
        }
        if !(self.b > T::zero()) {
            return bad("B must be positive");
        }
        if !(self.lambda > T::zero()) {
            return bad("lambda must be positive");
        }
        if !(self.t_s > T::zero()) {
            return bad("t_s must be positive");
        }
        if !(self.t_train > T::zero()) {
            return bad("T_train must be positive");
        }
        Ok(())
    }

    /// Number of distinct weights, `n(n-1)/2`.
    pub fn weight_count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }
}

/// `F(x) = (2/π) atan(λπx/2)`.
#[inline]
pub fn activation<T: Scalar>(x: T, lambda: T) -> T {
    let half_pi = T::of(PI / 2.0);
    (lambda * half_pi * x).atan() / half_pi
}

/// `F'(x) = λ / (1 + (λπx/2)²)`.
#[inline]
pub fn activation_deriv<T: Scalar>(x: T, lambda: T) -> T {
    let z = lambda * T::of(PI / 2.0) * x;
    lambda / (T::one() + z * z)
}

/// `F''(x) = -λ · 2c²x / (1 + (cx)²)²` with `c = λπ/2`.
#[inline]
pub fn activation_second_deriv<T: Scalar>(x: T, lambda: T) -> T {
    let c = lambda * T::of(PI / 2.0);
    let z = c * x;
    let den = T::one() + z * z;
    -lambda * T::of(2.0) * c * z / (den * den)
}

/// Symmetric, zero-diagonal coupling matrix stored once per unordered pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

/// Flat index of the unordered pair `(i, j)`, `i < j`, in row-major
/// upper-triangular order.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![T::zero(); n * n.saturating_sub(1) / 2],
        }
    }

    /// Builds from the upper-triangular entries in [`pair_index`] order.
    pub fn from_entries(n: usize, entries: Vec<T>) -> Result<Self> {
        check_dim(n * n.saturating_sub(1) / 2, entries.len())?;
        Ok(Self { n, entries })
    }

    /// Builds from `f(i, j)` evaluated for every `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut entries = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                entries.push(f(i, j));
            }
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => T::zero(),
            std::cmp::Ordering::Less => self.entries[pair_index(self.n, i, j)],
            std::cmp::Ordering::Greater => self.entries[pair_index(self.n, j, i)],
        }
    }

    /// Sets `ω_ij = ω_ji = v`. Writing the diagonal is rejected.
    pub fn set(&mut self, i: usize, j: usize, v: T) -> Result<()> {
        if i == j {
            return Err(Error::Domain(format!("diagonal weight ({i},{i}) is fixed at zero")));
        }
        if i >= self.n || j >= self.n {
            return Err(Error::Domain(format!("weight ({i},{j}) outside n = {}", self.n)));
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.entries[pair_index(self.n, a, b)] = v;
        Ok(())
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [T] {
        &mut self.entries
    }

    /// Pair `(i, j)` for every flat index, in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, &w| m.max(w.abs()))
    }

    pub fn mean_abs(&self) -> T {
        if self.entries.is_empty() {
            return T::zero();
        }
        self.entries.iter().map(|w| w.abs()).sum::<T>() / T::of(self.entries.len() as f64)
    }

    /// Dense `F(W)` with zero diagonal.
    pub fn activated(&self, lambda: T) -> Mat<T> {
        let mut m = Mat::zeros(self.n, self.n);
        for ((i, j), &w) in self.pairs().zip(&self.entries) {
            let f = activation(w, lambda);
            m[(i, j)] = f;
            m[(j, i)] = f;
        }
        m
    }

    pub fn to_dense(&self) -> Mat<T> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `(1-s)·a + s·b`, entrywise.
    pub fn lerp(a: &Self, b: &Self, s: T) -> Self {
        Self {
            n: a.n,
            entries: a
                .entries
                .iter()
                .zip(&b.entries)
                .map(|(&x, &y)| x + (y - x) * s)
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> WeightMatrix<U> {
        WeightMatrix {
            n: self.n,
            entries: self.entries.iter().map(|w| U::of(w.f64())).collect(),
        }
    }
}

/// `K` training vectors with components in {+1, −1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSet {
    n: usize,
    vectors: Vec<Vec<i8>>,
    seed: Option<u64>,
}

impl TrainingSet {
    /// Draws `k` vectors of dimension `n`; each component is ±1 with
    /// probability 1/2, independently.
    pub fn generate(n: usize, k: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed);
        let vectors = (0..k)
            .map(|_| (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
            .collect();
        Self {
            n,
            vectors,
            seed: Some(seed),
        }
    }

    pub fn from_vectors(vectors: Vec<Vec<i8>>, seed: Option<u64>) -> Result<Self> {
        let n = vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("empty training set".into()))?;
        for v in &vectors {
            check_dim(n, v.len())?;
            if v.iter().any(|&c| c != 1 && c != -1) {
                return Err(Error::Config("training components must be +1 or -1".into()));
            }
        }
        Ok(Self { n, vectors, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn vectors(&self) -> &[Vec<i8>] {
        &self.vectors
    }

    pub fn vector<T: Scalar>(&self, k: usize) -> Vec<T> {
        self.vectors[k].iter().map(|&c| T::of(c as f64)).collect()
    }
}

/// The periodic telegraph input built from a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusSchedule<T> {
    pub training_set: TrainingSet,
    pub t_s: T,
}

impl<T: Scalar> StimulusSchedule<T> {
    pub fn new(training_set: TrainingSet, t_s: T) -> Self {
        Self { training_set, t_s }
    }

    pub fn period(&self) -> T {
        self.t_s * T::of(self.training_set.k() as f64)
    }

    /// Zero-based index of the vector applied at `t`; windows are half-open
    /// `[start, end)`.
    pub fn pattern_index_at(&self, t: T) -> Result<usize> {
        if !(t >= T::zero()) {
            return Err(Error::Domain(format!("stimulus requested at negative time {t}")));
        }
        let k = self.training_set.k();
        let slot = (t / self.t_s).floor().to_usize().unwrap_or(usize::MAX);
        Ok(slot % k)
    }

    pub fn stimulus_at(&self, t: T) -> Result<Vec<T>> {
        Ok(self.training_set.vector(self.pattern_index_at(t)?))
    }

    /// First switch time strictly after `t`.
    pub fn next_switch_after(&self, t: T) -> T {
        let slot = (t / self.t_s).floor() + T::one();
        let next = slot * self.t_s;
        if next > t {
            next
        } else {
            next + self.t_s
        }
    }
}

/// Full state of the learning system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState<T> {
    pub x: Vec<T>,
    pub w: WeightMatrix<T>,
    pub t: T,
}

/// Time derivative of a [`SystemState`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative<T> {
    pub dx: Vec<T>,
    pub dw: WeightMatrix<T>,
}

/// Right-hand side of the learning system at `state.t`.
pub fn learning_rhs<T: Scalar>(
    state: &SystemState<T>,
    schedule: &StimulusSchedule<T>,
    cfg: &NetworkConfig<T>,
) -> Result<StateDerivative<T>> {
    check_dim(cfg.n, state.x.len())?;
    check_dim(cfg.n, state.w.n())?;
    check_dim(cfg.n, schedule.training_set.n())?;
    let input = schedule.stimulus_at(state.t)?;
    let mut dx = vec![T::zero(); cfg.n];
    let mut dw = WeightMatrix::zeros(cfg.n);
    learning_rhs_flat(cfg, &state.x, state.w.entries(), &input, &mut dx, dw.entries_mut());
    Ok(StateDerivative { dx, dw })
}

/// Learning field on flat storage: `x` (n values) and the upper-triangular
/// weights (n(n-1)/2 values), with a fixed input vector.
pub(crate) fn learning_rhs_flat<T: Scalar>(
    cfg: &NetworkConfig<T>,
    x: &[T],
    w: &[T],
    input: &[T],
    dx: &mut [T],
    dw: &mut [T],
) {
    let n = cfg.n;
    let fx: Vec<T> = x.iter().map(|&v| activation(v, cfg.lambda)).collect();
    for i in 0..n {
        dx[i] = T::zero();
    }
    let inv_b = T::one() / cfg.b;
    let mut p = 0;
    for i in 0..n {
        let fi = fx[i];
        let mut acc = T::zero();
        for j in i + 1..n {
            let wij = w[p];
            let fw = activation(wij, cfg.lambda);
            acc += fw * fx[j];
            dx[j] += fw * fi;
            dw[p] = (fi * fx[j] - wij) * inv_b;
            p += 1;
        }
        dx[i] += acc;
    }
    for i in 0..n {
        dx[i] = cfg.g * dx[i] - x[i] + cfg.a * input[i];
    }
}

/// The retrieval field `u(x) = −x + g F(W) F(x)` with `F(W)` precomputed.
#[derive(Clone, Debug)]
pub struct RetrievalField<T> {
    pub g: T,
    pub lambda: T,
    fw: Mat<T>,
}

impl<T: Scalar> RetrievalField<T> {
    pub fn new(w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> Result<Self> {
        check_dim(cfg.n, w.n())?;
        Ok(Self {
            g: cfg.g,
            lambda: cfg.lambda,
            fw: w.activated(cfg.lambda),
        })
    }

    pub fn n(&self) -> usize {
        self.fw.rows()
    }

    /// Elementwise activated weights `F(W)`.
    pub fn activated_weights(&self) -> &Mat<T> {
        &self.fw
    }

    pub fn eval_into(&self, x: &[T], out: &mut [T]) {
        let fx: Vec<T> = x.iter().map(|&v| activation(v, self.lambda)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let s: T = self.fw.row(i).iter().zip(&fx).map(|(&a, &b)| a * b).sum();
            *o = self.g * s - x[i];
        }
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// `J_ij = −δ_ij + g F(ω_ij) F'(x_j)`.
    pub fn jacobian(&self, x: &[T]) -> Mat<T> {
        let n = self.n();
        let dfx: Vec<T> = x.iter().map(|&v| activation_deriv(v, self.lambda)).collect();
        let mut j = Mat::zeros(n, n);
        for r in 0..n {
            let row = self.fw.row(r);
            let out = j.row_mut(r);
            for c in 0..n {
                out[c] = self.g * row[c] * dfx[c];
            }
            out[r] -= T::one();
        }
        j
    }

    /// `D^{1/2} J D^{-1/2} = −I + g D^{1/2} F(W) D^{1/2}`, `D = diag F'(x)`.
    pub fn symmetrized_jacobian(&self, x: &[T]) -> Mat<T> {
        let n = self.n();
        let s: Vec<T> = x.iter().map(|&v| activation_deriv(v, self.lambda).sqrt()).collect();
        let mut m = Mat::zeros(n, n);
        for r in 0..n {
            let row = self.fw.row(r);
            let out = m.row_mut(r);
            for c in 0..n {
                out[c] = self.g * s[r] * row[c] * s[c];
            }
            out[r] -= T::one();
        }
        m
    }

    /// Real Jacobian spectrum at `x`, descending.
    pub fn eigenvalues(&self, x: &[T]) -> Vec<T> {
        SymmetricEigen::values_only(&self.symmetrized_jacobian(x))
    }

    /// Leading eigenvalue and its right eigenvector of `J(x)` (unit 2-norm).
    pub fn leading_mode(&self, x: &[T]) -> (T, Vec<T>) {
        self.mode(x, 0)
    }

    /// Eigenpair `rank` (0 = largest) of `J(x)`, mapped back from the
    /// symmetrised problem.
    pub fn mode(&self, x: &[T], rank: usize) -> (T, Vec<T>) {
        let eig = SymmetricEigen::new(&self.symmetrized_jacobian(x));
        let y = eig.vector(rank).expect("vectors requested");
        let mut v: Vec<T> = y
            .iter()
            .zip(x)
            .map(|(&yi, &xi)| yi / activation_deriv(xi, self.lambda).sqrt())
            .collect();
        let nrm = crate::scalar::norm2(&v);
        for c in &mut v {
            *c /= nrm;
        }
        (eig.values[rank], v)
    }
}

/// `u(x)` for the frozen-weight, zero-input network.
pub fn retrieval_rhs<T: Scalar>(x: &[T], w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> Result<Vec<T>> {
    check_dim(cfg.n, x.len())?;
    Ok(RetrievalField::new(w, cfg)?.eval(x))
}

/// Exact Jacobian of [`retrieval_rhs`].
pub fn retrieval_jacobian<T: Scalar>(x: &[T], w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> Result<Mat<T>> {
    check_dim(cfg.n, x.len())?;
    Ok(RetrievalField::new(w, cfg)?.jacobian(x))
}

/// `V = Σ_i [ (x_i − A I_i)²/2 − g x_i Σ_j F(ω_ij) F(x_j) ]`.
///
/// A diagnostic only: `u = −∇V` holds in the λ → ∞ limit, not at finite λ.
pub fn energy<T: Scalar>(x: &[T], w: &WeightMatrix<T>, input: &[T], cfg: &NetworkConfig<T>) -> Result<T> {
    check_dim(cfg.n, x.len())?;
    check_dim(cfg.n, input.len())?;
    check_dim(cfg.n, w.n())?;
    let fw = w.activated(cfg.lambda);
    let fx: Vec<T> = x.iter().map(|&v| activation(v, cfg.lambda)).collect();
    let half = T::of(0.5);
    let mut v = T::zero();
    for i in 0..cfg.n {
        let d = x[i] - cfg.a * input[i];
        let coupling: T = fw.row(i).iter().zip(&fx).map(|(&a, &b)| a * b).sum();
        v += half * d * d - cfg.g * x[i] * coupling;
    }
    Ok(v)
}
