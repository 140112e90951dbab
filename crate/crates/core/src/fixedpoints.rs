//! Fixed points of the retrieval system: Newton solves, stability
//! classification, continuation along the learning path and bifurcation
//! detection.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{solve, Mat};
use crate::memory;
use crate::model::{activation_second_deriv, NetworkConfig, RetrievalField, TrainingSet, WeightMatrix};
use crate::rng;
use crate::scalar::{dist_inf, dot, norm_inf, Scalar};
use crate::simulate::WeightTrajectory;
use rayon::prelude::*;
use std::cmp::Ordering;

/// Stability of a fixed point by its count of positive eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StabilityClass {
    Stable,
    /// Exactly one positive eigenvalue.
    UsefulSaddle,
    /// `k >= 2` positive eigenvalues.
    OtherUnstable(usize),
}

impl StabilityClass {
    pub fn from_unstable_dims(k: usize) -> Self {
        match k {
            0 => StabilityClass::Stable,
            1 => StabilityClass::UsefulSaddle,
            k => StabilityClass::OtherUnstable(k),
        }
    }

    pub fn unstable_dims(self) -> usize {
        match self {
            StabilityClass::Stable => 0,
            StabilityClass::UsefulSaddle => 1,
            StabilityClass::OtherUnstable(k) => k,
        }
    }

    pub fn label(self) -> String {
        match self {
            StabilityClass::Stable => "stable".into(),
            StabilityClass::UsefulSaddle => "useful_saddle".into(),
            StabilityClass::OtherUnstable(k) => format!("unstable_{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint<T> {
    pub location: Vec<T>,
    /// Real spectrum of the Jacobian, descending.
    pub eigenvalues: Vec<T>,
    pub stability_class: StabilityClass,
    /// `‖u‖∞` at `location`.
    pub residual: T,
}

impl<T: Scalar> FixedPoint<T> {
    pub fn leading_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn is_origin(&self) -> bool {
        self.location.iter().all(|&v| v == T::zero())
    }

    /// Eigenvalue closest to zero.
    pub fn critical_eigenvalue(&self) -> T {
        self.eigenvalues
            .iter()
            .copied()
            .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap_or(Ordering::Equal))
            .unwrap_or_else(T::zero)
    }
}

/// Newton, deduplication and classification tolerances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub max_iter: usize,
    /// Converged once `‖u‖∞` falls below this.
    pub tol: f64,
    /// Largest residual a reported fixed point may carry.
    pub residual_max: f64,
    /// Roots closer than this (∞-norm) are the same point.
    pub dedup: f64,
    /// Eigenvalues above this count as positive.
    pub zero_threshold: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-12,
            residual_max: 1e-10,
            dedup: 1e-6,
            zero_threshold: 1e-9,
        }
    }
}

/// Damped Newton iteration on `u(x) = 0`. Returns `None` when the Jacobian
/// turns singular or the iteration fails to converge.
pub fn newton_solve<T: Scalar>(field: &RetrievalField<T>, seed: &[T], s: &NewtonSettings) -> Option<Vec<T>> {
    let tol = T::of(s.tol);
    let accept = T::of(s.residual_max);
    let mut x = seed.to_vec();
    let mut u = field.eval(&x);
    let mut res = norm_inf(&u);
    if !res.is_finite() {
        return None;
    }
    for _ in 0..s.max_iter {
        if res < tol {
            return Some(x);
        }
        let rhs: Vec<T> = u.iter().map(|&v| -v).collect();
        let dx = crate::linalg::solve(field.jacobian(&x), &rhs)?;
        let mut step = T::one();
        let mut improved = false;
        let mut trial = x.clone();
        let mut u_trial = u.clone();
        let mut res_trial = res;
        for _ in 0..30 {
            for i in 0..x.len() {
                trial[i] = x[i] + step * dx[i];
            }
            field.eval_into(&trial, &mut u_trial);
            res_trial = norm_inf(&u_trial);
            if res_trial < res {
                improved = true;
                break;
            }
            step = step * T::of(0.5);
        }
        if !improved {
            // Stagnation at rounding level still counts when the residual is acceptable.
            return (res < accept).then_some(x);
        }
        x.copy_from_slice(&trial);
        u.copy_from_slice(&u_trial);
        res = res_trial;
    }
    (res < tol || res < accept).then_some(x)
}

/// Eigenvalues and stability class of a fixed point of `field`.
pub fn classify_in_field<T: Scalar>(
    field: &RetrievalField<T>,
    location: &[T],
    s: &NewtonSettings,
) -> Result<FixedPoint<T>> {
    check_dim(field.n(), location.len())?;
    let residual = norm_inf(&field.eval(location));
    if !(residual < T::of(s.residual_max)) {
        return Err(Error::NotAFixedPoint {
            residual: residual.f64(),
            tolerance: s.residual_max,
        });
    }
    let eigenvalues = field.eigenvalues(location);
    let thr = T::of(s.zero_threshold);
    let k = eigenvalues.iter().filter(|&&l| l > thr).count();
    Ok(FixedPoint {
        location: location.to_vec(),
        eigenvalues,
        stability_class: StabilityClass::from_unstable_dims(k),
        residual,
    })
}

pub fn classify<T: Scalar>(
    location: &[T],
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    s: &NewtonSettings,
) -> Result<FixedPoint<T>> {
    classify_in_field(&RetrievalField::new(w, cfg)?, location, s)
}

/// Solves from every seed, deduplicates, closes the set under negation and
/// classifies. The origin is always included.
pub fn find_in_field<T: Scalar>(field: &RetrievalField<T>, seeds: &[Vec<T>], s: &NewtonSettings) -> Vec<FixedPoint<T>> {
    let n = field.n();
    let roots: Vec<Option<Vec<T>>> = seeds.par_iter().map(|seed| newton_solve(field, seed, s)).collect();
    let mut pts: Vec<Vec<T>> = vec![vec![T::zero(); n]];
    let dedup = T::of(s.dedup);
    for r in roots.into_iter().flatten() {
        push_unique(&mut pts, r, dedup);
    }
    close_under_negation(&mut pts, dedup);
    pts.par_iter()
        .filter_map(|p| classify_in_field(field, p, s).ok())
        .collect()
}

fn push_unique<T: Scalar>(pts: &mut Vec<Vec<T>>, p: Vec<T>, tol: T) -> bool {
    if pts.iter().any(|q| dist_inf(q, &p) < tol) {
        false
    } else {
        pts.push(p);
        true
    }
}

fn close_under_negation<T: Scalar>(pts: &mut Vec<Vec<T>>, tol: T) {
    let count = pts.len();
    for i in 0..count {
        let neg: Vec<T> = pts[i].iter().map(|&v| -v).collect();
        push_unique(pts, neg, tol);
    }
}

/// [`find_in_field`] for a weight matrix and explicit seeds.
pub fn find_fixed_points<T: Scalar>(
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    seeds: &[Vec<T>],
    s: &NewtonSettings,
) -> Result<Vec<FixedPoint<T>>> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    for seed in seeds {
        check_dim(cfg.n, seed.len())?;
    }
    Ok(find_in_field(&RetrievalField::new(w, cfg)?, seeds, s))
}

/// Standard seeds: origin, training vectors and their perturbations, and a
/// fresh batch of uniform random points per sample index.
#[derive(Clone, Debug)]
pub struct SeedBattery<T> {
    pub n: usize,
    pub pattern_seeds: Vec<Vec<T>>,
    pub random_count: usize,
    /// Half side of the hypercube random seeds are drawn from.
    pub extent: f64,
    pub seed: u64,
}

impl<T: Scalar> SeedBattery<T> {
    pub fn new(
        n: usize,
        training_set: Option<&TrainingSet>,
        per_pattern: usize,
        random_count: usize,
        seed: u64,
    ) -> Self {
        let mut pattern_seeds = Vec::new();
        if let Some(set) = training_set {
            for k in 0..set.k() {
                pattern_seeds.push(set.vector(k));
            }
            pattern_seeds.extend(
                memory::type2_starts::<T>(set, per_pattern, seed ^ 0x7479_7065_325f_7365)
                    .into_iter()
                    .map(|(_, v)| v),
            );
        }
        Self {
            n,
            pattern_seeds,
            random_count,
            extent: 5.0,
            seed,
        }
    }

    /// Seeds for sample `index`. Negated seeds are not listed: the field is
    /// odd, so their roots are the negations of these roots, which the
    /// solver adds by closure.
    pub fn seeds(&self, index: u64) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(1 + self.pattern_seeds.len() + self.random_count);
        out.push(vec![T::zero(); self.n]);
        out.extend(self.pattern_seeds.iter().cloned());
        let mut r = rng::substream(self.seed, index);
        for _ in 0..self.random_count {
            out.push(
                (0..self.n)
                    .map(|_| rng::uniform(&mut r, -self.extent, self.extent))
                    .collect(),
            );
        }
        out
    }
}

/// Counts of fixed points by class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CensusCounts {
    pub stable: usize,
    pub useful_saddle: usize,
    pub other: usize,
}

#[derive(Clone, Debug)]
pub struct Census<T> {
    pub counts: CensusCounts,
    pub points: Vec<FixedPoint<T>>,
}

impl<T: Scalar> Census<T> {
    pub fn from_points(points: Vec<FixedPoint<T>>) -> Self {
        Self {
            counts: count_classes(&points),
            points,
        }
    }

    pub fn attractors(&self) -> impl Iterator<Item = &FixedPoint<T>> {
        self.points
            .iter()
            .filter(|p| p.stability_class == StabilityClass::Stable)
    }

    pub fn useful_saddles(&self) -> impl Iterator<Item = &FixedPoint<T>> {
        self.points
            .iter()
            .filter(|p| p.stability_class == StabilityClass::UsefulSaddle)
    }
}

pub fn count_classes<T: Scalar>(points: &[FixedPoint<T>]) -> CensusCounts {
    let mut c = CensusCounts::default();
    for p in points {
        match p.stability_class {
            StabilityClass::Stable => c.stable += 1,
            StabilityClass::UsefulSaddle => c.useful_saddle += 1,
            StabilityClass::OtherUnstable(_) => c.other += 1,
        }
    }
    c
}

/// Extra seeds along the unstable directions of the origin, where a
/// pitchfork pair sits shortly after it is born.
fn origin_mode_seeds<T: Scalar>(field: &RetrievalField<T>, thr: T) -> Vec<Vec<T>> {
    let n = field.n();
    let zero = vec![T::zero(); n];
    let eig = crate::linalg::SymmetricEigen::new(&field.symmetrized_jacobian(&zero));
    let mut out = Vec::new();
    for (rank, &l) in eig.values.iter().enumerate().take(4) {
        if l <= thr {
            break;
        }
        let v = eig.vector(rank).expect("vectors");
        for c in [0.05, 0.3, 1.0, 3.0] {
            out.push(v.iter().map(|&vi| vi * T::of(c) * T::of((n as f64).sqrt())).collect());
        }
    }
    out
}

/// Census with the standard battery at sample index 0.
pub fn attractor_census<T: Scalar>(
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    battery: &SeedBattery<T>,
    s: &NewtonSettings,
) -> Result<Census<T>> {
    let field = RetrievalField::new(w, cfg)?;
    let mut seeds = battery.seeds(0);
    seeds.extend(origin_mode_seeds(&field, T::of(s.zero_threshold)));
    Ok(Census::from_points(find_in_field(&field, &seeds, s)))
}

/// Continuation and event-localisation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackSettings {
    pub newton: NewtonSettings,
    /// Largest ∞-norm displacement of a branch between consecutive samples.
    pub continuity_bound: f64,
    /// Event brackets are bisected to this width in `t`.
    pub bisection_width: f64,
    /// How many samples a newly found branch may be continued backwards.
    pub max_backfill: usize,
}

impl Default for TrackSettings {
    fn default() -> Self {
        Self {
            newton: NewtonSettings::default(),
            continuity_bound: 0.5,
            bisection_width: 1e-4,
            max_backfill: 400,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchSample<T> {
    pub t: T,
    /// Index of the trajectory sample.
    pub index: usize,
    pub point: FixedPoint<T>,
}

/// A fixed point followed along learning time.
#[derive(Clone, Debug)]
pub struct Branch<T> {
    pub id: usize,
    pub samples: Vec<BranchSample<T>>,
    /// Branch tracing the negated point.
    pub partner: Option<usize>,
}

impl<T: Scalar> Branch<T> {
    pub fn is_origin(&self) -> bool {
        self.samples.first().is_some_and(|s| s.point.is_origin())
    }

    pub fn first(&self) -> &BranchSample<T> {
        &self.samples[0]
    }

    pub fn last(&self) -> &BranchSample<T> {
        self.samples.last().expect("non-empty branch")
    }
}

/// Fixed-point sets per sample and the branches linking them.
#[derive(Clone, Debug)]
pub struct Tracking<T> {
    pub sample_times: Vec<T>,
    /// Index into the trajectory of each tracked sample.
    pub sample_indices: Vec<usize>,
    pub points: Vec<Vec<FixedPoint<T>>>,
    pub branches: Vec<Branch<T>>,
}

impl<T: Scalar> Tracking<T> {
    pub fn census(&self) -> Vec<CensusCounts> {
        self.points.iter().map(|p| count_classes(p)).collect()
    }
}

/// Follows all fixed points found by the seed battery across the samples of
/// `traj` within `t_range`, then links them into branches.
pub fn track_along_trajectory<T: Scalar>(
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    battery: &SeedBattery<T>,
    t_range: (T, T),
    s: &TrackSettings,
) -> Result<Tracking<T>> {
    check_dim(cfg.n, traj.n())?;
    let indices: Vec<usize> = (0..traj.len())
        .filter(|&i| traj.sample_times[i] >= t_range.0 && traj.sample_times[i] <= t_range.1)
        .collect();
    if indices.is_empty() {
        return Err(Error::Argument("t_range contains no trajectory samples".into()));
    }
    let bound = T::of(s.continuity_bound);
    let dedup = T::of(s.newton.dedup);
    let fields: Vec<RetrievalField<T>> = indices
        .iter()
        .map(|&i| RetrievalField::new(&traj.snapshots[i], cfg))
        .collect::<Result<_>>()?;

    let mut sets: Vec<Vec<FixedPoint<T>>> = Vec::with_capacity(indices.len());
    for (k, &idx) in indices.iter().enumerate() {
        let field = &fields[k];
        let mut seeds: Vec<Vec<T>> = Vec::new();
        if let Some(prev) = sets.last() {
            seeds.extend(prev.iter().map(|p| p.location.clone()));
        }
        seeds.extend(battery.seeds(idx as u64));
        seeds.extend(origin_mode_seeds(field, T::of(s.newton.zero_threshold)));
        let pts = find_in_field(field, &seeds, &s.newton);

        // Continue points with no predecessor backwards to fill sets where
        // the battery missed them.
        if k > 0 {
            let novel: Vec<Vec<T>> = pts
                .iter()
                .filter(|q| !has_neighbour(&sets[k - 1], q, bound))
                .map(|q| q.location.clone())
                .collect();
            for q in novel {
                backfill(&mut sets, &fields, k, q, s, bound, dedup);
            }
        }
        sets.push(pts);
    }

    let branches = link_branches(&sets, &indices, traj, bound);
    Ok(Tracking {
        sample_times: indices.iter().map(|&i| traj.sample_times[i]).collect(),
        sample_indices: indices,
        points: sets,
        branches,
    })
}

fn compatible<T: Scalar>(a: &FixedPoint<T>, b: &FixedPoint<T>) -> bool {
    let ao = a.is_origin();
    let bo = b.is_origin();
    if ao || bo {
        return ao && bo;
    }
    a.stability_class == b.stability_class
}

fn has_neighbour<T: Scalar>(set: &[FixedPoint<T>], q: &FixedPoint<T>, bound: T) -> bool {
    set.iter()
        .any(|p| compatible(p, q) && dist_inf(&p.location, &q.location) < bound)
}

fn backfill<T: Scalar>(
    sets: &mut [Vec<FixedPoint<T>>],
    fields: &[RetrievalField<T>],
    k: usize,
    start: Vec<T>,
    s: &TrackSettings,
    bound: T,
    dedup: T,
) {
    let mut q = start;
    let mut class = None;
    for j in (0..k).rev().take(s.max_backfill) {
        let field = &fields[j];
        let Some(r) = newton_solve(field, &q, &s.newton) else {
            return;
        };
        if dist_inf(&r, &q) >= bound || norm_inf(&r) < dedup {
            return;
        }
        let Ok(fp) = classify_in_field(field, &r, &s.newton) else {
            return;
        };
        if let Some(c) = class {
            if fp.stability_class != c {
                return;
            }
        }
        class = Some(fp.stability_class);
        if sets[j].iter().any(|p| dist_inf(&p.location, &r) < dedup) {
            return;
        }
        let neg: Vec<T> = r.iter().map(|&v| -v).collect();
        let neg_fp = FixedPoint {
            location: neg,
            ..fp.clone()
        };
        sets[j].push(fp);
        if !sets[j].iter().any(|p| dist_inf(&p.location, &neg_fp.location) < dedup) {
            sets[j].push(neg_fp);
        }
        q = r;
    }
}

fn link_branches<T: Scalar>(
    sets: &[Vec<FixedPoint<T>>],
    indices: &[usize],
    traj: &WeightTrajectory<T>,
    bound: T,
) -> Vec<Branch<T>> {
    let mut branches: Vec<Branch<T>> = Vec::new();
    // Branch id currently holding each point of the previous sample.
    let mut owner: Vec<usize> = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        let t = traj.sample_times[indices[k]];
        let mut new_owner = vec![usize::MAX; set.len()];
        if k > 0 {
            let prev = &sets[k - 1];
            let mut cands: Vec<(T, usize, usize)> = Vec::new();
            for (a, p) in prev.iter().enumerate() {
                for (b, q) in set.iter().enumerate() {
                    if compatible(p, q) {
                        let d = dist_inf(&p.location, &q.location);
                        if d < bound {
                            cands.push((d, a, b));
                        }
                    }
                }
            }
            cands.sort_by(|x, y| {
                x.0.partial_cmp(&y.0)
                    .unwrap_or(Ordering::Equal)
                    .then(x.1.cmp(&y.1))
                    .then(x.2.cmp(&y.2))
            });
            let mut used_prev = vec![false; prev.len()];
            for (_, a, b) in cands {
                if used_prev[a] || new_owner[b] != usize::MAX {
                    continue;
                }
                used_prev[a] = true;
                new_owner[b] = owner[a];
            }
        }
        for (b, q) in set.iter().enumerate() {
            if new_owner[b] == usize::MAX {
                new_owner[b] = branches.len();
                branches.push(Branch {
                    id: branches.len(),
                    samples: Vec::new(),
                    partner: None,
                });
            }
            branches[new_owner[b]].samples.push(BranchSample {
                t,
                index: indices[k],
                point: q.clone(),
            });
        }
        owner = new_owner;
    }
    // Pair branches whose first points are negations of each other.
    for i in 0..branches.len() {
        if branches[i].partner.is_some() || branches[i].is_origin() {
            continue;
        }
        let first = branches[i].first().clone();
        let neg: Vec<T> = first.point.location.iter().map(|&v| -v).collect();
        let found = branches.iter().position(|b| {
            b.id != i
                && b.partner.is_none()
                && b.first().index == first.index
                && dist_inf(&b.first().point.location, &neg) < T::of(1e-6)
        });
        if let Some(j) = found {
            branches[i].partner = Some(j);
            branches[j].partner = Some(i);
        }
    }
    branches
}

/// Kind of a localised bifurcation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BifurcationKind {
    /// The origin loses a stable direction and sheds a symmetric pair.
    Pitchfork,
    /// A symmetric pair collapses back into the origin.
    ReversePitchfork,
    SaddleNodeBirth,
    SaddleNodeDeath,
    Unknown,
}

impl BifurcationKind {
    pub fn label(self) -> &'static str {
        match self {
            BifurcationKind::Pitchfork => "pitchfork",
            BifurcationKind::ReversePitchfork => "reverse_pitchfork",
            BifurcationKind::SaddleNodeBirth => "saddle_node_birth",
            BifurcationKind::SaddleNodeDeath => "saddle_node_death",
            BifurcationKind::Unknown => "unknown",
        }
    }

    pub fn is_birth(self) -> bool {
        matches!(self, BifurcationKind::Pitchfork | BifurcationKind::SaddleNodeBirth)
    }

    pub fn is_death(self) -> bool {
        matches!(
            self,
            BifurcationKind::ReversePitchfork | BifurcationKind::SaddleNodeDeath
        )
    }
}

#[derive(Clone, Debug)]
pub struct Participant<T> {
    pub location: Vec<T>,
    pub class: StabilityClass,
    /// Tracked branch, when the point belongs to one.
    pub branch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct BifurcationEvent<T> {
    pub t_star: T,
    /// Final bisection bracket `[t_lo, t_hi]`.
    pub bracket: (T, T),
    pub kind: BifurcationKind,
    /// Fixed points taking part, located on the side of the bracket where
    /// they exist (the origin is listed first for pitchforks).
    pub participants: Vec<Participant<T>>,
    /// Index (into the event list) of the negation-symmetric event.
    pub symmetry_partner: Option<usize>,
}

#[derive(Clone, Debug)]
struct Boundary<T> {
    branch: usize,
    birth: bool,
    bracket: (T, T),
    /// Point on the existing side of the bracket.
    point: FixedPoint<T>,
    /// Whether the branch merged into the origin at the boundary.
    into_origin: bool,
}

/// Localises every branch birth/death and every change in the origin's
/// stability, and classifies them.
pub fn detect_bifurcations<T: Scalar>(
    tracking: &Tracking<T>,
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    s: &TrackSettings,
) -> Result<Vec<BifurcationEvent<T>>> {
    let bound = T::of(s.continuity_bound);
    let width = T::of(s.bisection_width);
    let thr = T::of(s.newton.zero_threshold);
    let first_index = *tracking.sample_indices.first().unwrap();
    let last_index = *tracking.sample_indices.last().unwrap();
    let mut events: Vec<BifurcationEvent<T>> = Vec::new();

    // Origin stability changes.
    let origin_counts: Vec<usize> = tracking
        .points
        .iter()
        .map(|set| {
            set.iter()
                .find(|p| p.is_origin())
                .map(|p| p.stability_class.unstable_dims())
                .unwrap_or(0)
        })
        .collect();
    let zero = vec![T::zero(); cfg.n];
    for k in 1..origin_counts.len() {
        let (a, b) = (origin_counts[k - 1], origin_counts[k]);
        if a == b {
            continue;
        }
        let (lo_rank, hi_rank, up) = if b > a { (a, b, true) } else { (b, a, false) };
        for rank in lo_rank..hi_rank {
            let eig_at = |t: T| -> Result<T> {
                let f = RetrievalField::new(&traj.weights_at(t)?, cfg)?;
                Ok(f.eigenvalues(&zero)[rank])
            };
            let mut lo = tracking.sample_times[k - 1];
            let mut hi = tracking.sample_times[k];
            let mut e_lo = eig_at(lo)?;
            let mut e_hi = eig_at(hi)?;
            while hi - lo > width {
                let mid = (lo + hi) * T::of(0.5);
                let e = eig_at(mid)?;
                if (e > thr) == (e_hi > thr) {
                    hi = mid;
                    e_hi = e;
                } else {
                    lo = mid;
                    e_lo = e;
                }
            }
            let t_star = if e_hi != e_lo {
                lo - e_lo * (hi - lo) / (e_hi - e_lo)
            } else {
                (lo + hi) * T::of(0.5)
            };
            // Origin class on the far side of the event.
            let field = RetrievalField::new(&traj.weights_at(hi)?, cfg)?;
            let origin_class = classify_in_field(&field, &zero, &s.newton)?.stability_class;
            events.push(BifurcationEvent {
                t_star: t_star.max(lo).min(hi),
                bracket: (lo, hi),
                kind: if up {
                    BifurcationKind::Pitchfork
                } else {
                    BifurcationKind::ReversePitchfork
                },
                participants: vec![Participant {
                    location: zero.clone(),
                    class: origin_class,
                    branch: tracking.branches.iter().position(|b| b.is_origin()),
                }],
                symmetry_partner: None,
            });
        }
    }

    // Branch ends.
    let mut boundaries: Vec<Boundary<T>> = Vec::new();
    for br in &tracking.branches {
        if br.is_origin() {
            continue;
        }
        if br.first().index > first_index {
            let k = tracking
                .sample_indices
                .iter()
                .position(|&i| i == br.first().index)
                .unwrap();
            boundaries.push(localise(
                br,
                true,
                tracking.sample_times[k - 1],
                br.first(),
                traj,
                cfg,
                s,
                bound,
                width,
            )?);
        }
        if br.last().index < last_index {
            let k = tracking
                .sample_indices
                .iter()
                .position(|&i| i == br.last().index)
                .unwrap();
            boundaries.push(localise(
                br,
                false,
                tracking.sample_times[k + 1],
                br.last(),
                traj,
                cfg,
                s,
                bound,
                width,
            )?);
        }
    }

    // Pitchfork pairs: births/deaths into the origin near an origin event.
    let mut consumed = vec![false; boundaries.len()];
    let pitchforks: Vec<usize> = (0..events.len()).collect();
    let slack = traj.sample_dt * T::of(2.0);
    for e in pitchforks {
        let ev_birth = events[e].kind == BifurcationKind::Pitchfork;
        let t_star = events[e].t_star;
        for (bi, b) in boundaries.iter().enumerate() {
            if consumed[bi] || b.birth != ev_birth || !b.into_origin {
                continue;
            }
            if (b.bracket.0 - t_star).abs() <= slack || (b.bracket.1 - t_star).abs() <= slack {
                consumed[bi] = true;
                events[e].participants.push(Participant {
                    location: b.point.location.clone(),
                    class: b.point.stability_class,
                    branch: Some(b.branch),
                });
            }
        }
    }

    // Fold pairs: two boundaries of the same direction, bracket overlap,
    // adjacent indices and nearby locations.
    let pair_tol = width * T::of(10.0);
    for i in 0..boundaries.len() {
        if consumed[i] {
            continue;
        }
        consumed[i] = true;
        let bi = boundaries[i].clone();
        let mate = (0..boundaries.len()).find(|&j| {
            let bj = &boundaries[j];
            !consumed[j]
                && bj.birth == bi.birth
                && (bj.bracket.0 - bi.bracket.0).abs() <= pair_tol
                && bj
                    .point
                    .stability_class
                    .unstable_dims()
                    .abs_diff(bi.point.stability_class.unstable_dims())
                    == 1
                && dist_inf(&bj.point.location, &bi.point.location) < bound
        });
        let mut participants = vec![Participant {
            location: bi.point.location.clone(),
            class: bi.point.stability_class,
            branch: Some(bi.branch),
        }];
        let mut lo = bi.bracket.0;
        let mut hi = bi.bracket.1;
        let twin = match mate {
            Some(j) => {
                consumed[j] = true;
                lo = lo.min(boundaries[j].bracket.0);
                hi = hi.max(boundaries[j].bracket.1);
                Some(Participant {
                    location: boundaries[j].point.location.clone(),
                    class: boundaries[j].point.stability_class,
                    branch: Some(boundaries[j].branch),
                })
            }
            None => {
                let t_exist = if bi.birth { bi.bracket.1 } else { bi.bracket.0 };
                find_twin(&bi.point, t_exist, traj, cfg, s, bound)?.map(|fp| Participant {
                    location: fp.location,
                    class: fp.stability_class,
                    branch: None,
                })
            }
        };
        let kind = match (&twin, bi.into_origin) {
            (Some(_), _) => {
                if bi.birth {
                    BifurcationKind::SaddleNodeBirth
                } else {
                    BifurcationKind::SaddleNodeDeath
                }
            }
            (None, _) => BifurcationKind::Unknown,
        };
        if let Some(p) = twin {
            participants.push(p);
        }
        participants.sort_by_key(|p| p.class.unstable_dims());
        let mut t_star = (lo + hi) * T::of(0.5);
        if kind != BifurcationKind::Unknown {
            let reach = traj.sample_dt;
            if let Some(t) =
                fold_time(&participants, t_star, traj, cfg, &s.newton)?.filter(|&t| (t - t_star).abs() <= reach)
            {
                t_star = t;
            }
        }
        events.push(BifurcationEvent {
            t_star,
            bracket: (lo, hi),
            kind,
            participants,
            symmetry_partner: None,
        });
    }

    events.sort_by(|a, b| a.t_star.partial_cmp(&b.t_star).unwrap_or(Ordering::Equal));
    pair_symmetric_events(&mut events, T::of(1e-3), bound);
    Ok(events)
}

#[allow(clippy::too_many_arguments)]
fn localise<T: Scalar>(
    br: &Branch<T>,
    birth: bool,
    t_missing: T,
    known: &BranchSample<T>,
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    s: &TrackSettings,
    bound: T,
    width: T,
) -> Result<Boundary<T>> {
    let dedup = T::of(s.newton.dedup);
    let mut t_exist = known.t;
    let mut t_gone = t_missing;
    let mut point = known.point.clone();
    let mut into_origin = false;
    // Existence test: Newton from the last known point lands near it, away
    // from the origin, with the same stability class.
    let probe = |t: T, from: &FixedPoint<T>| -> Result<(Option<FixedPoint<T>>, bool)> {
        let field = RetrievalField::new(&traj.weights_at(t)?, cfg)?;
        match newton_solve(&field, &from.location, &s.newton) {
            Some(r) if norm_inf(&r) < dedup => Ok((None, true)),
            Some(r) if dist_inf(&r, &from.location) < bound => {
                let fp = classify_in_field(&field, &r, &s.newton)?;
                Ok((Some(fp), false))
            }
            _ => Ok((None, false)),
        }
    };
    let (_, origin_at_gone) = probe(t_gone, &point)?;
    into_origin |= origin_at_gone;
    while (t_exist - t_gone).abs() > width {
        let mid = (t_exist + t_gone) * T::of(0.5);
        match probe(mid, &point)? {
            (Some(fp), _) => {
                t_exist = mid;
                point = fp;
            }
            (None, to_origin) => {
                into_origin |= to_origin;
                t_gone = mid;
            }
        }
    }
    if norm_inf(&point.location) < bound {
        // Close to the origin at the boundary: a pitchfork pair.
        into_origin = true;
    }
    let bracket = if t_exist < t_gone {
        (t_exist, t_gone)
    } else {
        (t_gone, t_exist)
    };
    Ok(Boundary {
        branch: br.id,
        birth,
        bracket,
        point,
        into_origin,
    })
}

/// Solves `{u = 0, J v = 0, |v|² = 1}` for `(x, v, t)` from the midpoint of
/// a fold pair, with `∂/∂t` by central differences along the trajectory.
fn fold_time<T: Scalar>(
    pair: &[Participant<T>],
    t0: T,
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    s: &NewtonSettings,
) -> Result<Option<T>> {
    let [a, b] = pair else { return Ok(None) };
    let n = cfg.n;
    let x0: Vec<T> = a
        .location
        .iter()
        .zip(&b.location)
        .map(|(&p, &q)| (p + q) * T::of(0.5))
        .collect();
    let field = RetrievalField::new(&traj.weights_at(t0)?, cfg)?;
    let eig = crate::linalg::SymmetricEigen::values_only(&field.symmetrized_jacobian(&x0));
    let rank = (0..n)
        .min_by(|&i, &j| eig[i].abs().partial_cmp(&eig[j].abs()).unwrap_or(Ordering::Equal))
        .unwrap_or(0);
    let (_, v0) = field.mode(&x0, rank);
    let residual = |x: &[T], v: &[T], t: T| -> Result<Vec<T>> {
        let f = RetrievalField::new(&traj.weights_at(t)?, cfg)?;
        let mut r = f.eval(x);
        r.extend(f.jacobian(x).mul_vec(v));
        r.push(dot(v, v) - T::one());
        Ok(r)
    };
    let (mut x, mut v, mut t) = (x0, v0, t0);
    let dt = T::of(1e-5);
    for _ in 0..s.max_iter.min(30) {
        let f = RetrievalField::new(&traj.weights_at(t)?, cfg)?;
        let r = residual(&x, &v, t)?;
        if norm_inf(&r) < T::of(s.tol) {
            return Ok(Some(t));
        }
        if t - dt < traj.t_start() || t + dt > traj.t_end() {
            return Ok(None);
        }
        let rp = residual(&x, &v, t + dt)?;
        let rm = residual(&x, &v, t - dt)?;
        let jx = f.jacobian(&x);
        let fw = f.activated_weights();
        let mut m = Mat::zeros(2 * n + 1, 2 * n + 1);
        for i in 0..n {
            for k in 0..n {
                m[(i, k)] = jx[(i, k)];
                m[(n + i, n + k)] = jx[(i, k)];
                m[(n + i, k)] = cfg.g * fw[(i, k)] * activation_second_deriv(x[k], cfg.lambda) * v[k];
            }
            m[(2 * n, n + i)] = T::of(2.0) * v[i];
        }
        for i in 0..=2 * n {
            m[(i, 2 * n)] = (rp[i] - rm[i]) / (dt + dt);
        }
        let rhs: Vec<T> = r.iter().map(|&q| -q).collect();
        let Some(d) = solve(m, &rhs) else { return Ok(None) };
        for k in 0..n {
            x[k] += d[k];
            v[k] += d[n + k];
        }
        t += d[2 * n];
        if !t.is_finite() || t < traj.t_start() || t > traj.t_end() {
            return Ok(None);
        }
    }
    Ok(None)
}

/// Searches for the fold partner of `p` along its critical direction.
fn find_twin<T: Scalar>(
    p: &FixedPoint<T>,
    t: T,
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    s: &TrackSettings,
    bound: T,
) -> Result<Option<FixedPoint<T>>> {
    let field = RetrievalField::new(&traj.weights_at(t)?, cfg)?;
    let crit = p.critical_eigenvalue();
    let rank = p.eigenvalues.iter().position(|&l| l == crit).unwrap_or(0);
    let (_, v) = field.mode(&p.location, rank);
    let dedup = T::of(s.newton.dedup);
    for c in [1e-3, 1e-2, 3e-2, 0.1, 0.3] {
        for sign in [1.0, -1.0] {
            let seed: Vec<T> = p
                .location
                .iter()
                .zip(&v)
                .map(|(&x, &vi)| x + T::of(sign * c) * vi)
                .collect();
            if let Some(r) = newton_solve(&field, &seed, &s.newton) {
                if dist_inf(&r, &p.location) > dedup && dist_inf(&r, &p.location) < bound && norm_inf(&r) > dedup {
                    let fp = classify_in_field(&field, &r, &s.newton)?;
                    if fp
                        .stability_class
                        .unstable_dims()
                        .abs_diff(p.stability_class.unstable_dims())
                        == 1
                    {
                        return Ok(Some(fp));
                    }
                }
            }
        }
    }
    Ok(None)
}

fn pair_symmetric_events<T: Scalar>(events: &mut [BifurcationEvent<T>], t_tol: T, bound: T) {
    for i in 0..events.len() {
        if events[i].symmetry_partner.is_some()
            || matches!(
                events[i].kind,
                BifurcationKind::Pitchfork | BifurcationKind::ReversePitchfork
            )
        {
            continue;
        }
        let neg: Vec<T> = events[i].participants[0].location.iter().map(|&v| -v).collect();
        let found = (0..events.len()).find(|&j| {
            j != i
                && events[j].symmetry_partner.is_none()
                && events[j].kind == events[i].kind
                && (events[j].t_star - events[i].t_star).abs() <= t_tol
                && events[j]
                    .participants
                    .iter()
                    .any(|p| dist_inf(&p.location, &neg) < bound)
        });
        if let Some(j) = found {
            events[i].symmetry_partner = Some(j);
            events[j].symmetry_partner = Some(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::activation;

    fn n2(a: f64, g: f64) -> (WeightMatrix<f64>, NetworkConfig<f64>) {
        let cfg = NetworkConfig {
            g,
            ..NetworkConfig::with_n(2)
        };
        (WeightMatrix::from_fn(2, |_, _| a), cfg)
    }

    fn grid_seeds(n_per_axis: usize) -> Vec<Vec<f64>> {
        let mut out = vec![];
        for i in 0..n_per_axis {
            for j in 0..n_per_axis {
                let s = |k: usize| -5.0 + 10.0 * k as f64 / (n_per_axis - 1) as f64;
                out.push(vec![s(i), s(j)]);
            }
        }
        out
    }

    #[test]
    fn zero_weights_have_only_stable_origin() {
        let cfg = NetworkConfig::<f64>::with_n(5);
        let battery = SeedBattery::new(5, None, 0, 30, 1);
        let census = attractor_census(&WeightMatrix::zeros(5), &cfg, &battery, &NewtonSettings::default()).unwrap();
        assert_eq!(census.points.len(), 1);
        assert!(census.points[0].is_origin());
        assert_eq!(
            census.counts,
            CensusCounts {
                stable: 1,
                useful_saddle: 0,
                other: 0
            }
        );
        assert!(census.points[0].eigenvalues.iter().all(|&l| (l + 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_neuron_pitchfork_regime_has_three_points() {
        let (w, cfg) = n2(0.5, 5.0);
        assert!(5.0 * 1.4 * activation(0.5, 1.4) > 1.0);
        let pts = find_fixed_points(&w, &cfg, &grid_seeds(11), &NewtonSettings::default()).unwrap();
        let c = count_classes(&pts);
        assert_eq!((pts.len(), c.stable, c.useful_saddle), (3, 2, 1));
        let origin = pts.iter().find(|p| p.is_origin()).unwrap();
        assert_eq!(origin.stability_class, StabilityClass::UsefulSaddle);
        // Brute-force oracle: sign changes of u on a dense grid in each
        // quadrant-symmetric line x1 = x2 (a > 0 puts the pair there).
        let field = RetrievalField::new(&w, &cfg).unwrap();
        let mut roots = 0;
        let mut prev = field.eval(&[-5.0, -5.0])[0];
        for i in 1..=20000 {
            let x = -5.0 + 10.0 * i as f64 / 20000.0;
            let u = field.eval(&[x, x])[0];
            if u == 0.0 || u.signum() != prev.signum() {
                roots += 1;
            }
            prev = u;
        }
        assert_eq!(roots, 3);
    }

    #[test]
    fn returned_sets_are_closed_under_negation() {
        let cfg = NetworkConfig {
            g: 1.5,
            ..NetworkConfig::<f64>::with_n(6)
        };
        let mut r = rng::stream(4);
        let w = WeightMatrix::from_fn(6, |_, _| rng::uniform(&mut r, -1.0, 1.0));
        let battery = SeedBattery::new(6, None, 0, 100, 2);
        let census = attractor_census(&w, &cfg, &battery, &NewtonSettings::default()).unwrap();
        for p in &census.points {
            let neg: Vec<f64> = p.location.iter().map(|v| -v).collect();
            let q = census
                .points
                .iter()
                .find(|q| dist_inf(&q.location, &neg) < 1e-8)
                .expect("negation present");
            for (a, b) in p.eigenvalues.iter().zip(&q.eigenvalues) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!(p.residual < 1e-10);
        }
    }

    #[test]
    fn classify_rejects_non_fixed_points() {
        let (w, cfg) = n2(0.5, 5.0);
        let err = classify(&[1.0, 0.0], &w, &cfg, &NewtonSettings::default()).unwrap_err();
        assert!(matches!(err, Error::NotAFixedPoint { .. }));
        let origin = classify(&[0.0, 0.0], &WeightMatrix::zeros(2), &cfg, &NewtonSettings::default()).unwrap();
        assert_eq!(origin.stability_class, StabilityClass::Stable);
        assert_eq!(origin.eigenvalues, vec![-1.0, -1.0]);
    }

    #[test]
    fn classification_agrees_with_finite_difference_spectrum() {
        let cfg = NetworkConfig {
            g: 2.0,
            ..NetworkConfig::<f64>::with_n(8)
        };
        for seed in 0..5 {
            let mut r = rng::stream(50 + seed);
            let w = WeightMatrix::from_fn(8, |_, _| rng::uniform(&mut r, -1.0, 1.0));
            let battery = SeedBattery::new(8, None, 0, 40, seed);
            let census = attractor_census(&w, &cfg, &battery, &NewtonSettings::default()).unwrap();
            let field = RetrievalField::new(&w, &cfg).unwrap();
            for p in &census.points {
                let h = 1e-6;
                let fd = nalgebra::DMatrix::from_fn(8, 8, |i, j| {
                    let mut xp = p.location.clone();
                    let mut xm = p.location.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    (field.eval(&xp)[i] - field.eval(&xm)[i]) / (2.0 * h)
                });
                let ev = fd.complex_eigenvalues();
                let positives = ev.iter().filter(|c| c.re > 1e-6).count();
                assert_eq!(positives, p.stability_class.unstable_dims());
            }
        }
    }

    #[test]
    fn zero_trajectory_has_single_stable_branch() {
        let cfg = NetworkConfig::<f64>::with_n(4);
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let traj = WeightTrajectory::from_snapshots(times, vec![WeightMatrix::zeros(4); 20]).unwrap();
        let battery = SeedBattery::new(4, None, 0, 10, 3);
        let tr = track_along_trajectory(&traj, &cfg, &battery, (0.0, 2.0), &TrackSettings::default()).unwrap();
        assert_eq!(tr.branches.len(), 1);
        assert!(tr.branches[0].is_origin());
        assert_eq!(tr.branches[0].samples.len(), 20);
        assert!(tr.branches[0]
            .samples
            .iter()
            .all(|s| s.point.stability_class == StabilityClass::Stable));
        let ev = detect_bifurcations(&tr, &traj, &cfg, &TrackSettings::default()).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn linear_ramp_gives_single_pitchfork_at_closed_form_threshold() {
        let cfg = NetworkConfig {
            g: 5.0,
            ..NetworkConfig::<f64>::with_n(2)
        };
        let a_star = 2.0 / (1.4 * std::f64::consts::PI) * (std::f64::consts::PI / (2.0 * 5.0 * 1.4)).tan();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let snaps = times
            .iter()
            .map(|&t| WeightMatrix::from_fn(2, |_, _| 0.01 * t))
            .collect();
        let traj = WeightTrajectory::from_snapshots(times, snaps).unwrap();
        let battery = SeedBattery::new(2, None, 0, 20, 9);
        let s = TrackSettings::default();
        let tr = track_along_trajectory(&traj, &cfg, &battery, (0.0, 20.0), &s).unwrap();
        let ev = detect_bifurcations(&tr, &traj, &cfg, &s).unwrap();
        assert_eq!(ev.len(), 1, "{ev:?}");
        assert_eq!(ev[0].kind, BifurcationKind::Pitchfork);
        let a = 0.01 * ev[0].t_star;
        assert!((a - a_star).abs() < 1e-6, "a = {a}, a* = {a_star}");
        assert_eq!(ev[0].participants.len(), 3);
    }
}
