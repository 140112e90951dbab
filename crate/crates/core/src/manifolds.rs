//! Bifurcation manifolds in weight space: the pitchfork test, sections of
//! the pitchfork and fold manifolds by pseudo-arclength continuation, and
//! crossings of the learning path with a manifold.

use crate::error::{Error, Result};
use crate::fixedpoints::{BifurcationEvent, BifurcationKind, StabilityClass};
use crate::linalg::{solve, solve_min_norm, Mat, SymmetricEigen};
use crate::model::{
    activation, activation_deriv, activation_second_deriv, NetworkConfig, RetrievalField, WeightMatrix,
};
use crate::scalar::{dot, norm2, norm_inf, Scalar};
use crate::simulate::WeightTrajectory;
use rayon::prelude::*;

/// `h(w) = λ_max(gλF(W)) − 1`: the leading eigenvalue of the Jacobian at
/// the origin. Negative inside the region where the origin is stable.
pub fn pitchfork_test<T: Scalar>(w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> T {
    let n = w.n();
    if n < 2 {
        return -T::one();
    }
    let scale = cfg.g * cfg.lambda;
    let fw = w.activated(cfg.lambda);
    let m = Mat::from_fn(n, n, |i, j| scale * fw[(i, j)]);
    SymmetricEigen::values_only(&m)[0] - T::one()
}

/// Gradient of [`pitchfork_test`] with respect to the weight entries, in
/// storage order.
pub fn pitchfork_test_gradient<T: Scalar>(w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> Vec<T> {
    let n = w.n();
    let scale = cfg.g * cfg.lambda;
    let fw = w.activated(cfg.lambda);
    let eig = SymmetricEigen::new(&Mat::from_fn(n, n, |i, j| scale * fw[(i, j)]));
    let v = eig.vector(0).expect("vectors");
    w.pairs()
        .map(|(a, b)| T::of(2.0) * scale * activation_deriv(w.get(a, b), cfg.lambda) * v[a] * v[b])
        .collect()
}

/// Three distinct weight pairs spanning a section.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubspaceAxes {
    pub pairs: [(usize, usize); 3],
}

impl SubspaceAxes {
    pub fn new(n: usize, pairs: [(usize, usize); 3]) -> Result<Self> {
        for &(i, j) in &pairs {
            if !(i < j && j < n) {
                return Err(Error::Argument(format!("invalid weight pair ({i}, {j}) for N = {n}")));
            }
        }
        if pairs[0] == pairs[1] || pairs[0] == pairs[2] || pairs[1] == pairs[2] {
            return Err(Error::Argument("section axes must be distinct".into()));
        }
        Ok(Self { pairs })
    }

    /// `(ω₁₂, ω₁₃, ω₂₃)` in zero-based indices.
    pub fn first_three() -> Self {
        Self {
            pairs: [(0, 1), (0, 2), (1, 2)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionKind {
    Pitchfork,
    SaddleNode,
}

/// Section curve in the plane of the first two axes at one value of the
/// third.
#[derive(Clone, Debug)]
pub struct Polyline<T> {
    pub slice: T,
    pub vertices: Vec<[T; 2]>,
    /// Residual of the defining system at each vertex.
    pub residuals: Vec<T>,
    /// Fixed point at each vertex (fold sections only).
    pub states: Vec<Vec<T>>,
    pub closed: bool,
    pub stalled: bool,
}

#[derive(Clone, Debug)]
pub struct ManifoldSection<T> {
    pub axes: SubspaceAxes,
    pub frozen: WeightMatrix<T>,
    pub t_n: Option<T>,
    pub kind: SectionKind,
    pub curves: Vec<Polyline<T>>,
    pub notes: Vec<String>,
}

impl<T: Scalar> ManifoldSection<T> {
    pub fn max_residual(&self) -> T {
        self.curves
            .iter()
            .flat_map(|c| c.residuals.iter().copied())
            .fold(T::zero(), T::max)
    }
}

/// Step control of the pseudo-arclength continuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuationSettings {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Corrector convergence on the defining residual.
    pub tol: f64,
    pub max_points: usize,
    /// Continuation stops when a plane coordinate leaves
    /// `[centre - half_width, centre + half_width]`.
    pub half_width: f64,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            h0: 1e-2,
            h_min: 1e-5,
            h_max: 1e-1,
            tol: 1e-10,
            max_points: 4000,
            half_width: 1.0,
        }
    }
}

/// An implicitly defined curve `F(z) = 0`, `F: R^d → R^{d-1}`.
trait Curve<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, z: &[T]) -> Vec<T>;
    fn jac(&self, z: &[T]) -> Mat<T>;
    fn plane(&self, z: &[T]) -> [T; 2];
}

struct Trace<T> {
    points: Vec<Vec<T>>,
    closed: bool,
    stalled: bool,
}

fn bordered<T: Scalar>(jac: &Mat<T>, row: &[T]) -> Mat<T> {
    let d = jac.cols();
    Mat::from_fn(d, d, |i, j| if i + 1 < d { jac[(i, j)] } else { row[j] })
}

fn tangent<T: Scalar>(c: &impl Curve<T>, z: &[T], orient: &[T]) -> Option<Vec<T>> {
    let d = c.dim();
    let mut rhs = vec![T::zero(); d];
    rhs[d - 1] = T::one();
    let y = solve(bordered(&c.jac(z), orient), &rhs)?;
    let nrm = norm2(&y);
    let mut t: Vec<T> = y.iter().map(|&v| v / nrm).collect();
    if dot(&t, orient) < T::zero() {
        t.iter_mut().for_each(|v| *v = -*v);
    }
    Some(t)
}

fn initial_tangent<T: Scalar>(c: &impl Curve<T>, z: &[T]) -> Option<Vec<T>> {
    let d = c.dim();
    // Try the plane coordinates (last two) first, then any other axis.
    for k in [d - 2, d - 1].into_iter().chain(0..d - 2) {
        let mut e = vec![T::zero(); d];
        e[k] = T::one();
        if let Some(t) = tangent(c, z, &e) {
            if t[k].abs() > T::of(1e-6) {
                return Some(t);
            }
        }
    }
    None
}

fn residual<T: Scalar>(c: &impl Curve<T>, z: &[T]) -> T {
    norm_inf(&c.eval(z))
}

/// Newton on `{F(z) = 0, τ·(z − z_pred) = 0}`.
fn correct<T: Scalar>(c: &impl Curve<T>, z_pred: &[T], tau: &[T], tol: T) -> Option<(Vec<T>, usize)> {
    let d = c.dim();
    let mut z = z_pred.to_vec();
    for it in 0..20 {
        let f = c.eval(&z);
        if norm_inf(&f) < tol && it > 0 {
            return Some((z, it));
        }
        let mut rhs: Vec<T> = f.iter().map(|&v| -v).collect();
        let diff: Vec<T> = z.iter().zip(z_pred).map(|(&a, &b)| a - b).collect();
        rhs.push(-dot(tau, &diff));
        let dz = solve(bordered(&c.jac(&z), tau), &rhs)?;
        for i in 0..d {
            z[i] += dz[i];
        }
        if !norm_inf(&z).is_finite() {
            return None;
        }
    }
    (residual(c, &z) < tol).then_some((z, 20))
}

/// Underdetermined Newton from a nearby guess onto the curve.
fn project<T: Scalar>(c: &impl Curve<T>, z0: &[T], tol: T) -> Option<Vec<T>> {
    let mut z = z0.to_vec();
    for _ in 0..50 {
        let f = c.eval(&z);
        if norm_inf(&f) < tol {
            return Some(z);
        }
        let rhs: Vec<T> = f.iter().map(|&v| -v).collect();
        let dz = solve_min_norm(&c.jac(&z), &rhs)?;
        for (zi, d) in z.iter_mut().zip(dz) {
            *zi += d;
        }
        if !norm_inf(&z).is_finite() {
            return None;
        }
    }
    None
}

/// Moves `z` along the curve until one plane coordinate equals that of
/// `target`, using the coordinate the curve crosses most steeply.
fn pin<T: Scalar>(c: &impl Curve<T>, z: &[T], target: [T; 2], tol: T) -> Option<Vec<T>> {
    let d = c.dim();
    let tau = initial_tangent(c, z)?;
    let k = if tau[d - 2].abs() >= tau[d - 1].abs() { 0 } else { 1 };
    let mut pred = z.to_vec();
    pred[d - 2 + k] = target[k];
    let mut e = vec![T::zero(); d];
    e[d - 2 + k] = T::one();
    correct(c, &pred, &e, tol).map(|(z, _)| z)
}

fn trace_direction<T: Scalar>(
    c: &impl Curve<T>,
    z0: &[T],
    tau0: Vec<T>,
    centre: [T; 2],
    s: &ContinuationSettings,
) -> Trace<T> {
    let tol = T::of(s.tol);
    let half = T::of(s.half_width);
    let start_plane = c.plane(z0);
    let mut points = vec![z0.to_vec()];
    let mut z = z0.to_vec();
    let mut tau = tau0;
    let mut h = T::of(s.h0);
    let mut arc = T::zero();
    while points.len() < s.max_points {
        let pred: Vec<T> = z.iter().zip(&tau).map(|(&a, &t)| a + h * t).collect();
        match correct(c, &pred, &tau, tol) {
            Some((zn, iters)) => {
                let Some(tn) = tangent(c, &zn, &tau) else {
                    return Trace {
                        points,
                        closed: false,
                        stalled: true,
                    };
                };
                arc += h;
                let p = c.plane(&zn);
                points.push(zn.clone());
                let back = (p[0] - start_plane[0]).abs().max((p[1] - start_plane[1]).abs());
                if arc > T::of(4.0) * h && back < h && dot(&tn, &initial_dir(&points)) > T::zero() {
                    points.pop();
                    return Trace {
                        points,
                        closed: true,
                        stalled: false,
                    };
                }
                if (p[0] - centre[0]).abs() > half || (p[1] - centre[1]).abs() > half {
                    return Trace {
                        points,
                        closed: false,
                        stalled: false,
                    };
                }
                z = zn;
                tau = tn;
                if iters <= 3 {
                    h = (h * T::of(1.5)).min(T::of(s.h_max));
                }
            }
            None => {
                h = h * T::of(0.5);
                if h < T::of(s.h_min) {
                    return Trace {
                        points,
                        closed: false,
                        stalled: true,
                    };
                }
            }
        }
    }
    Trace {
        points,
        closed: false,
        stalled: false,
    }
}

fn initial_dir<T: Scalar>(points: &[Vec<T>]) -> Vec<T> {
    points[1].iter().zip(&points[0]).map(|(&a, &b)| a - b).collect()
}

/// Full curve through `z0`: forward until it closes, otherwise both ways.
fn trace_curve<T: Scalar>(c: &impl Curve<T>, z0: &[T], centre: [T; 2], s: &ContinuationSettings) -> Option<Trace<T>> {
    let tau = initial_tangent(c, z0)?;
    let fwd = trace_direction(c, z0, tau.clone(), centre, s);
    if fwd.closed {
        return Some(fwd);
    }
    let neg: Vec<T> = tau.iter().map(|&v| -v).collect();
    let bwd = trace_direction(c, z0, neg, centre, s);
    let mut points: Vec<Vec<T>> = bwd.points.into_iter().skip(1).rev().collect();
    points.extend(fwd.points);
    Some(Trace {
        points,
        closed: false,
        stalled: fwd.stalled || bwd.stalled,
    })
}

fn polyline<T: Scalar>(c: &impl Curve<T>, slice: T, tr: Trace<T>, states: impl Fn(&[T]) -> Vec<T>) -> Polyline<T> {
    Polyline {
        slice,
        vertices: tr.points.iter().map(|z| c.plane(z)).collect(),
        residuals: tr.points.iter().map(|z| residual(c, z)).collect(),
        states: tr.points.iter().map(|z| states(z)).filter(|v| !v.is_empty()).collect(),
        closed: tr.closed,
        stalled: tr.stalled,
    }
}

/// `h = 0` in the plane of two weights, the others frozen.
struct PitchforkCurve<'a, T> {
    base: WeightMatrix<T>,
    axes: [(usize, usize); 2],
    cfg: &'a NetworkConfig<T>,
}

impl<T: Scalar> PitchforkCurve<'_, T> {
    fn weights(&self, z: &[T]) -> WeightMatrix<T> {
        let mut w = self.base.clone();
        w.set(self.axes[0].0, self.axes[0].1, z[0]).expect("valid axis");
        w.set(self.axes[1].0, self.axes[1].1, z[1]).expect("valid axis");
        w
    }
}

impl<T: Scalar> Curve<T> for PitchforkCurve<'_, T> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, z: &[T]) -> Vec<T> {
        vec![pitchfork_test(&self.weights(z), self.cfg)]
    }

    fn jac(&self, z: &[T]) -> Mat<T> {
        let w = self.weights(z);
        let grad = pitchfork_test_gradient(&w, self.cfg);
        let n = w.n();
        let i0 = crate::model::pair_index(n, self.axes[0].0, self.axes[0].1);
        let i1 = crate::model::pair_index(n, self.axes[1].0, self.axes[1].1);
        Mat::from_fn(1, 2, |_, j| if j == 0 { grad[i0] } else { grad[i1] })
    }

    fn plane(&self, z: &[T]) -> [T; 2] {
        [z[0], z[1]]
    }
}

/// Sample values `lo, lo+step, ..., hi`.
pub fn sample_range<T: Scalar>(lo: f64, hi: f64, step: f64) -> Vec<T> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| T::of(lo + k as f64 * step)).collect()
}

/// Pitchfork surface of the three-neuron network as a family of level
/// curves of `h` in the `(ω₁₂, ω₁₃)` plane, one per `ω₂₃` sample.
pub fn pitchfork_surface_n3<T: Scalar>(
    cfg: &NetworkConfig<T>,
    w23_samples: &[T],
    s: &ContinuationSettings,
) -> Result<ManifoldSection<T>> {
    if cfg.n != 3 {
        return Err(Error::Argument(format!("pitchfork surface needs N = 3, got {}", cfg.n)));
    }
    let axes = SubspaceAxes::first_three();
    let results: Vec<std::result::Result<Polyline<T>, String>> = w23_samples
        .par_iter()
        .map(|&c| {
            let mut base = WeightMatrix::zeros(3);
            base.set(1, 2, c).expect("valid pair");
            let curve = PitchforkCurve {
                base,
                axes: [(0, 1), (0, 2)],
                cfg,
            };
            let seed = seed_on_ray(&curve, T::of(s.tol)).ok_or_else(|| format!("no level set at w23 = {c}"))?;
            let wide = ContinuationSettings {
                half_width: s.half_width.max(10.0),
                ..*s
            };
            let tr = trace_curve(&curve, &seed, [T::zero(), T::zero()], &wide)
                .ok_or_else(|| format!("singular level set at w23 = {c}"))?;
            Ok(polyline(&curve, c, tr, |_| Vec::new()))
        })
        .collect();
    let mut curves = Vec::new();
    let mut notes = Vec::new();
    for r in results {
        match r {
            Ok(p) => curves.push(p),
            Err(e) => notes.push(e),
        }
    }
    Ok(ManifoldSection {
        axes,
        frozen: WeightMatrix::zeros(3),
        t_n: None,
        kind: SectionKind::Pitchfork,
        curves,
        notes,
    })
}

/// First root of `h` along the positive first axis, by bisection and a
/// final projection.
fn seed_on_ray<T: Scalar>(c: &PitchforkCurve<'_, T>, tol: T) -> Option<Vec<T>> {
    let h = |a: T| c.eval(&[a, T::zero()])[0];
    if h(T::zero()) >= T::zero() {
        return None;
    }
    let mut hi = T::of(0.01);
    while h(hi) < T::zero() {
        hi = hi * T::of(2.0);
        if hi > T::of(100.0) {
            return None;
        }
    }
    let mut lo = T::zero();
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if h(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < T::of(1e-14) {
            break;
        }
    }
    project(c, &[(lo + hi) * T::of(0.5), T::zero()], tol)
}

/// Fold system `{u = 0, Jv = 0, |v|² = 1}` in `(x, v, p₁, p₂)` with the
/// third section axis frozen.
struct FoldCurve<'a, T> {
    base: WeightMatrix<T>,
    axes: [(usize, usize); 2],
    cfg: &'a NetworkConfig<T>,
}

impl<T: Scalar> FoldCurve<'_, T> {
    fn n(&self) -> usize {
        self.base.n()
    }

    fn weights(&self, z: &[T]) -> WeightMatrix<T> {
        let n = self.n();
        let mut w = self.base.clone();
        w.set(self.axes[0].0, self.axes[0].1, z[2 * n]).expect("valid axis");
        w.set(self.axes[1].0, self.axes[1].1, z[2 * n + 1]).expect("valid axis");
        w
    }
}

impl<T: Scalar> Curve<T> for FoldCurve<'_, T> {
    fn dim(&self) -> usize {
        2 * self.n() + 2
    }

    fn eval(&self, z: &[T]) -> Vec<T> {
        let n = self.n();
        let field = RetrievalField::new(&self.weights(z), self.cfg).expect("consistent dims");
        let (x, v) = (&z[..n], &z[n..2 * n]);
        let mut out = field.eval(x);
        out.extend(field.jacobian(x).mul_vec(v));
        out.push(dot(v, v) - T::one());
        out
    }

    fn jac(&self, z: &[T]) -> Mat<T> {
        let n = self.n();
        let lam = self.cfg.lambda;
        let g = self.cfg.g;
        let w = self.weights(z);
        let field = RetrievalField::new(&w, self.cfg).expect("consistent dims");
        let fw = field.activated_weights();
        let (x, v) = (&z[..n], &z[n..2 * n]);
        let jx = field.jacobian(x);
        let mut m = Mat::zeros(2 * n + 1, 2 * n + 2);
        for i in 0..n {
            for k in 0..n {
                m[(i, k)] = jx[(i, k)];
                m[(n + i, n + k)] = jx[(i, k)];
                m[(n + i, k)] = g * fw[(i, k)] * activation_second_deriv(x[k], lam) * v[k];
            }
            m[(2 * n, n + i)] = T::of(2.0) * v[i];
        }
        for (col, &(a, b)) in self.axes.iter().enumerate() {
            let c = 2 * n + col;
            let dw = g * activation_deriv(w.get(a, b), lam);
            m[(a, c)] = dw * activation(x[b], lam);
            m[(b, c)] = dw * activation(x[a], lam);
            m[(n + a, c)] = dw * activation_deriv(x[b], lam) * v[b];
            m[(n + b, c)] = dw * activation_deriv(x[a], lam) * v[a];
        }
        m
    }

    fn plane(&self, z: &[T]) -> [T; 2] {
        let n = self.n();
        [z[2 * n], z[2 * n + 1]]
    }
}

/// Residual of the fold system at `(x, v)` for weights `w`.
pub fn fold_residual<T: Scalar>(x: &[T], v: &[T], w: &WeightMatrix<T>, cfg: &NetworkConfig<T>) -> Result<T> {
    let field = RetrievalField::new(w, cfg)?;
    let mut r = norm_inf(&field.eval(x)).max(norm_inf(&field.jacobian(x).mul_vec(v)));
    r = r.max((dot(v, v) - T::one()).abs());
    Ok(r)
}

/// Fold-manifold section at `t_n`: all weights frozen at `ω(t_n)` except
/// the three axes. The curve in the slice through `ω(t_n)` is seeded from
/// the fold point of `event`; the other slices are seeded from their
/// neighbour.
pub fn saddle_node_section<T: Scalar>(
    traj: &WeightTrajectory<T>,
    event: &BifurcationEvent<T>,
    axes: SubspaceAxes,
    cfg: &NetworkConfig<T>,
    third_samples: &[T],
    s: &ContinuationSettings,
) -> Result<ManifoldSection<T>> {
    if !matches!(
        event.kind,
        BifurcationKind::SaddleNodeBirth | BifurcationKind::SaddleNodeDeath
    ) {
        return Err(Error::Argument("saddle-node section needs a saddle-node event".into()));
    }
    let t_n = event.t_star;
    if t_n < traj.t_start() || t_n > traj.t_end() {
        return Err(Error::Argument(format!("t_n = {t_n} outside the trajectory span")));
    }
    let n = cfg.n;
    axes.pairs.iter().try_for_each(|&(_, j)| {
        if j < n {
            Ok(())
        } else {
            Err(Error::Argument("axis outside N".into()))
        }
    })?;
    let frozen = traj.weights_at(t_n)?;
    let tol = T::of(s.tol);
    let [(a1, b1), (a2, b2), (a3, b3)] = axes.pairs;
    let p0 = [frozen.get(a1, b1), frozen.get(a2, b2)];
    let c0 = frozen.get(a3, b3);

    let stable = event.participants.iter().find(|p| p.class == StabilityClass::Stable);
    let saddle = event
        .participants
        .iter()
        .find(|p| p.class == StabilityClass::UsefulSaddle);
    let x0: Vec<T> = match (stable, saddle) {
        (Some(a), Some(b)) => a
            .location
            .iter()
            .zip(&b.location)
            .map(|(&p, &q)| (p + q) * T::of(0.5))
            .collect(),
        _ => event.participants[0].location.clone(),
    };
    let field = RetrievalField::new(&frozen, cfg)?;
    let eig = SymmetricEigen::new(&field.symmetrized_jacobian(&x0));
    let rank = (0..n)
        .min_by(|&i, &j| {
            eig.values[i]
                .abs()
                .partial_cmp(&eig.values[j].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let (_, v0) = field.mode(&x0, rank);

    let curve_at = |c: T| {
        let mut base = frozen.clone();
        base.set(a3, b3, c).expect("valid axis");
        FoldCurve {
            base,
            axes: [(a1, b1), (a2, b2)],
            cfg,
        }
    };
    let mut z0 = x0.clone();
    z0.extend(v0);
    z0.extend(p0);
    let seed_curve = curve_at(c0);
    let seed = project(&seed_curve, &z0, tol).ok_or_else(|| Error::Domain("fold seed did not converge".into()))?;
    let seed = pin(&seed_curve, &seed, p0, tol).unwrap_or(seed);

    let mut curves = Vec::new();
    let mut notes = Vec::new();
    let state = |z: &[T]| z[..n].to_vec();
    match trace_curve(&seed_curve, &seed, p0, s) {
        Some(tr) => curves.push(polyline(&seed_curve, c0, tr, state)),
        None => notes.push(format!("no tangent at seeding slice {c0}")),
    }
    // Walk the other slices outwards from the seeding value.
    let mut below: Vec<T> = third_samples.iter().copied().filter(|&c| c < c0).collect();
    below.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut above: Vec<T> = third_samples.iter().copied().filter(|&c| c > c0).collect();
    above.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for side in [below, above] {
        let mut prev = seed.clone();
        for c in side {
            let curve = curve_at(c);
            let Some(z) = project(&curve, &prev, tol) else {
                notes.push(format!("lost the fold curve at slice {c}"));
                break;
            };
            match trace_curve(&curve, &z, p0, s) {
                Some(tr) => curves.push(polyline(&curve, c, tr, state)),
                None => notes.push(format!("no tangent at slice {c}")),
            }
            prev = z;
        }
    }
    curves.sort_by(|a, b| a.slice.partial_cmp(&b.slice).unwrap());
    Ok(ManifoldSection {
        axes,
        frozen,
        t_n: Some(t_n),
        kind: SectionKind::SaddleNode,
        curves,
        notes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingDirection {
    /// The test function turns positive.
    Leaving,
    /// The test function turns negative.
    Entering,
}

impl CrossingDirection {
    pub fn label(self) -> &'static str {
        match self {
            CrossingDirection::Leaving => "leaving",
            CrossingDirection::Entering => "entering",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossingRecord<T> {
    pub t_cross: T,
    pub direction: CrossingDirection,
    pub test_value_before: T,
    pub test_value_after: T,
}

/// Sign changes of `test` along the samples of `traj`, bisected in `t` to
/// `width`.
pub fn crossing_detect<T: Scalar>(
    traj: &WeightTrajectory<T>,
    test: impl Fn(&WeightMatrix<T>) -> T + Sync,
    width: T,
) -> Result<Vec<CrossingRecord<T>>> {
    let values: Vec<T> = traj.snapshots.par_iter().map(&test).collect();
    let mut out = Vec::new();
    for k in 1..values.len() {
        let (v0, v1) = (values[k - 1], values[k]);
        if (v0 < T::zero()) == (v1 < T::zero()) {
            continue;
        }
        let mut lo = traj.sample_times[k - 1];
        let mut hi = traj.sample_times[k];
        let (mut f_lo, mut f_hi) = (v0, v1);
        while hi - lo > width {
            let mid = (lo + hi) * T::of(0.5);
            let f = test(&traj.weights_at(mid)?);
            if (f < T::zero()) == (f_lo < T::zero()) {
                lo = mid;
                f_lo = f;
            } else {
                hi = mid;
                f_hi = f;
            }
        }
        out.push(CrossingRecord {
            t_cross: (lo + hi) * T::of(0.5),
            direction: if v1 >= T::zero() {
                CrossingDirection::Leaving
            } else {
                CrossingDirection::Entering
            },
            test_value_before: f_lo,
            test_value_after: f_hi,
        });
    }
    Ok(out)
}

/// Triangle mesh joining consecutive section curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

/// Resamples each curve to `per_curve` points by arclength and joins
/// neighbouring slices with triangle strips.
pub fn section_mesh<T: Scalar>(section: &ManifoldSection<T>, per_curve: usize) -> Mesh {
    let mut mesh = Mesh::default();
    let per_curve = per_curve.max(3);
    let mut rings: Vec<(usize, bool)> = Vec::new();
    for c in section.curves.iter().filter(|c| c.vertices.len() >= 2) {
        let start = mesh.vertices.len();
        for p in resample(&c.vertices, c.closed, per_curve) {
            mesh.vertices.push([p[0], p[1], c.slice.f64()]);
        }
        rings.push((start, c.closed));
    }
    for w in rings.windows(2) {
        let ((a, ca), (b, cb)) = (w[0], w[1]);
        let segs = if ca && cb { per_curve } else { per_curve - 1 };
        for i in 0..segs {
            let j = (i + 1) % per_curve;
            mesh.faces.push([a + i, b + i, b + j]);
            mesh.faces.push([a + i, b + j, a + j]);
        }
    }
    mesh
}

fn resample<T: Scalar>(pts: &[[T; 2]], closed: bool, count: usize) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = pts.iter().map(|q| [q[0].f64(), q[1].f64()]).collect();
    if closed {
        p.push(p[0]);
    }
    let mut cum = vec![0.0];
    for w in p.windows(2) {
        cum.push(cum.last().unwrap() + ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt());
    }
    let total = *cum.last().unwrap();
    let denom = if closed { count } else { count - 1 } as f64;
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let s = total * k as f64 / denom;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        out.push([
            p[seg][0] + f * (p[seg + 1][0] - p[seg][0]),
            p[seg][1] + f * (p[seg + 1][1] - p[seg][1]),
        ]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoints::{detect_bifurcations, track_along_trajectory, SeedBattery, TrackSettings};
    use crate::rng;

    #[test]
    fn pitchfork_test_basics() {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(2)
        };
        assert_eq!(pitchfork_test(&WeightMatrix::zeros(2), &cfg), -1.0);
        let a_star = 0.103788791936173674791;
        let h = pitchfork_test(&WeightMatrix::from_fn(2, |_, _| a_star), &cfg);
        assert!(h.abs() < 1e-10, "h = {h}");
    }

    #[test]
    fn pitchfork_test_matches_origin_stability() {
        for &n in &[3usize, 8, 16] {
            let cfg = NetworkConfig {
                g: 1.0,
                ..NetworkConfig::<f64>::with_n(n)
            };
            let mut r = rng::stream(n as u64);
            for _ in 0..100 {
                let w = WeightMatrix::from_fn(n, |_, _| rng::uniform(&mut r, -0.3, 0.3));
                let h = pitchfork_test(&w, &cfg);
                let lead = RetrievalField::new(&w, &cfg).unwrap().eigenvalues(&vec![0.0; n])[0];
                assert!((h - lead).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pitchfork_gradient_matches_finite_differences() {
        let cfg = NetworkConfig {
            g: 2.0,
            ..NetworkConfig::<f64>::with_n(5)
        };
        let mut r = rng::stream(8);
        let w = WeightMatrix::from_fn(5, |_, _| rng::uniform(&mut r, -0.5, 0.5));
        let grad = pitchfork_test_gradient(&w, &cfg);
        for k in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.entries_mut()[k] += 1e-6;
            wm.entries_mut()[k] -= 1e-6;
            let fd = (pitchfork_test(&wp, &cfg) - pitchfork_test(&wm, &cfg)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6, "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn n3_surface_is_closed_symmetric_and_on_level_set() {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(3)
        };
        let samples = [-0.1, 0.0, 0.05];
        let sec = pitchfork_surface_n3(&cfg, &samples, &ContinuationSettings::default()).unwrap();
        assert_eq!(sec.curves.len(), 3, "{:?}", sec.notes);
        for c in &sec.curves {
            assert!(c.closed);
            assert!(c.residuals.iter().all(|&r| r < 1e-8));
            // Swapping neurons 2 and 3 maps the curve onto itself.
            for v in c.vertices.iter().step_by(7) {
                let d = c
                    .vertices
                    .iter()
                    .map(|u| (u[0] - v[1]).abs().max((u[1] - v[0]).abs()))
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 0.05, "swap distance {d}");
            }
            // Grid oracle: sign changes of h on a dense row lie near the curve.
            let base = {
                let mut w = WeightMatrix::zeros(3);
                w.set(1, 2, c.slice).unwrap();
                w
            };
            let hval = |a: f64, b: f64| {
                let mut w = base.clone();
                w.set(0, 1, a).unwrap();
                w.set(0, 2, b).unwrap();
                pitchfork_test(&w, &cfg)
            };
            let step = 0.002;
            for b in [-0.05, 0.0, 0.03] {
                let mut prev = hval(-1.0, b);
                let mut a = -1.0;
                while a < 1.0 {
                    let next = hval(a + step, b);
                    if (prev < 0.0) != (next < 0.0) {
                        let near = c
                            .vertices
                            .iter()
                            .any(|u| (u[0] - (a + step / 2.0)).abs() <= 0.06 && (u[1] - b).abs() <= 0.06);
                        assert!(near, "grid crossing at ({a}, {b}) not on curve");
                    }
                    prev = next;
                    a += step;
                }
            }
        }
    }

    #[test]
    fn tiny_weights_never_cross_the_pitchfork_manifold() {
        let cfg = NetworkConfig::<f64>::with_n(4);
        let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let mut r = rng::stream(2);
        let snaps = times
            .iter()
            .map(|_| WeightMatrix::from_fn(4, |_, _| rng::uniform(&mut r, -0.01, 0.01)))
            .collect();
        let traj = WeightTrajectory::from_snapshots(times, snaps).unwrap();
        assert!(crossing_detect(&traj, |w| pitchfork_test(w, &cfg), 1e-3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn ramp_crossing_is_bisected() {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(2)
        };
        let times: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let snaps = times
            .iter()
            .map(|&t| WeightMatrix::from_fn(2, |_, _| 0.1 * t))
            .collect();
        let traj = WeightTrajectory::from_snapshots(times, snaps).unwrap();
        let cr = crossing_detect(&traj, |w| pitchfork_test(w, &cfg), 1e-3).unwrap();
        assert_eq!(cr.len(), 1);
        assert_eq!(cr[0].direction, CrossingDirection::Leaving);
        assert!((cr[0].t_cross - 1.03788791936).abs() < 1e-3);
    }

    #[test]
    fn fold_section_passes_through_the_event() {
        let n = 16;
        let cfg = NetworkConfig {
            g: 1.6,
            t_train: 25.0,
            ..NetworkConfig::<f64>::with_n(n)
        };
        let set = crate::model::TrainingSet::generate(n, 6, 1);
        let sched = crate::model::StimulusSchedule::new(set.clone(), cfg.t_s);
        let ics = crate::simulate::make_initial_conditions(&cfg, 2);
        let traj = crate::simulate::integrate_learning(&cfg, &sched, &ics, 0.1, Default::default()).unwrap();
        let ts = TrackSettings::default();
        let battery = SeedBattery::new(n, Some(&set), 5, 40, 3);
        let tr = track_along_trajectory(&traj, &cfg, &battery, (21.0, 25.0), &ts).unwrap();
        let ev = detect_bifurcations(&tr, &traj, &cfg, &ts).unwrap();
        let Some(fold) = ev.iter().find(|e| e.kind == BifurcationKind::SaddleNodeBirth) else {
            panic!("no fold among {:?}", ev.iter().map(|e| e.kind).collect::<Vec<_>>());
        };
        let axes = SubspaceAxes::first_three();
        let s = ContinuationSettings {
            max_points: 400,
            ..Default::default()
        };
        let sec = saddle_node_section(&traj, fold, axes, &cfg, &sample_range(-0.2, 0.2, 0.1), &s).unwrap();
        assert!(sec.max_residual() < 1e-8);
        let w = traj.weights_at(fold.t_star).unwrap();
        let target = [w.get(0, 1), w.get(0, 2)];
        let seeding = sec.curves.iter().find(|c| c.slice == w.get(1, 2)).unwrap();
        let d = seeding
            .vertices
            .iter()
            .map(|v| (v[0] - target[0]).abs().max((v[1] - target[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        assert!(d < 1e-4, "distance {d}");
        for (c, x) in seeding.vertices.iter().zip(&seeding.states).step_by(10) {
            let mut wc = w.clone();
            wc.set(0, 1, c[0]).unwrap();
            wc.set(0, 2, c[1]).unwrap();
            let field = RetrievalField::new(&wc, &cfg).unwrap();
            let crit = field.eigenvalues(x).iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
            assert!(crit < 1e-6);
        }
    }

    #[test]
    fn mesh_connects_closed_rings() {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(3)
        };
        let sec = pitchfork_surface_n3(&cfg, &[0.0, 0.01], &ContinuationSettings::default()).unwrap();
        let m = section_mesh(&sec, 40);
        assert_eq!(m.vertices.len(), 80);
        assert_eq!(m.faces.len(), 80);
        assert!(m.faces.iter().flatten().all(|&i| i < 80));
    }
}
