//! Initial-condition protocol, memory labels and the forgetting log.

use crate::error::{check_dim, Error, Result};
use crate::fixedpoints::{newton_solve, BifurcationEvent, BifurcationKind, NewtonSettings, StabilityClass, Tracking};
use crate::model::{NetworkConfig, RetrievalField, TrainingSet, WeightMatrix};
use crate::rng;
use crate::scalar::{dist_inf, Scalar};
use crate::simulate::{converge_in_field, ConvergenceResult, ConvergenceSettings, WeightTrajectory};
use rayon::prelude::*;
use std::collections::BTreeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IcType {
    /// A training vector.
    Type1,
    /// A training vector plus a uniform perturbation in `[-0.5, 0.5]^N`.
    Type2,
    /// Uniform in `[-5, 5]^N`.
    Type3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcStart<T> {
    pub ic_type: IcType,
    pub source_pattern: Option<usize>,
    pub start: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct IcTrial<T> {
    pub ic_type: IcType,
    pub source_pattern: Option<usize>,
    pub start: Vec<T>,
    pub result: ConvergenceResult<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialCounts {
    /// Type-2 starts per pattern.
    pub per_pattern: usize,
    pub type3: usize,
}

impl Default for TrialCounts {
    fn default() -> Self {
        Self {
            per_pattern: 20,
            type3: 1000,
        }
    }
}

pub const PERTURBATION: f64 = 0.5;
pub const TYPE3_EXTENT: f64 = 5.0;

/// Type-2 starts, `per_pattern` for each training vector in pattern order.
pub fn type2_starts<T: Scalar>(set: &TrainingSet, per_pattern: usize, seed: u64) -> Vec<(usize, Vec<T>)> {
    let mut r = rng::stream(seed);
    let mut out = Vec::with_capacity(set.k() * per_pattern);
    for k in 0..set.k() {
        let base: Vec<T> = set.vector(k);
        for _ in 0..per_pattern {
            out.push((
                k,
                base.iter()
                    .map(|&b| b + rng::uniform(&mut r, -PERTURBATION, PERTURBATION))
                    .collect(),
            ));
        }
    }
    out
}

/// Type-3 starts uniform in the side-10 hypercube.
pub fn type3_starts<T: Scalar>(n: usize, count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut r = rng::stream(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| rng::uniform(&mut r, -TYPE3_EXTENT, TYPE3_EXTENT))
                .collect()
        })
        .collect()
}

/// All Type-1, Type-2 and Type-3 starts, in that order.
pub fn generate_ic_trials<T: Scalar>(set: &TrainingSet, counts: TrialCounts, seed: u64) -> Vec<IcStart<T>> {
    let mut out: Vec<IcStart<T>> = (0..set.k())
        .map(|k| IcStart {
            ic_type: IcType::Type1,
            source_pattern: Some(k),
            start: set.vector(k),
        })
        .collect();
    let mut s = rng::stream(seed);
    let (s2, s3): (u64, u64) = (rand::Rng::gen(&mut s), rand::Rng::gen(&mut s));
    out.extend(
        type2_starts(set, counts.per_pattern, s2)
            .into_iter()
            .map(|(k, start)| IcStart {
                ic_type: IcType::Type2,
                source_pattern: Some(k),
                start,
            }),
    );
    out.extend(
        type3_starts(set.n(), counts.type3, s3)
            .into_iter()
            .map(|start| IcStart {
                ic_type: IcType::Type3,
                source_pattern: None,
                start,
            }),
    );
    out
}

/// Runs every start to convergence in parallel; results keep input order.
pub fn run_trials<T: Scalar>(
    field: &RetrievalField<T>,
    starts: &[IcStart<T>],
    settings: &ConvergenceSettings,
) -> Result<Vec<IcTrial<T>>> {
    starts
        .par_iter()
        .map(|s| {
            check_dim(field.n(), s.start.len())?;
            Ok(IcTrial {
                ic_type: s.ic_type,
                source_pattern: s.source_pattern,
                start: s.start.clone(),
                result: converge_in_field(field, &s.start, settings)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    True(usize),
    Blended(Vec<usize>),
    Spurious,
}

impl Label {
    pub fn from_patterns(p: &BTreeSet<usize>) -> Self {
        match p.len() {
            0 => Label::Spurious,
            1 => Label::True(*p.iter().next().unwrap()),
            _ => Label::Blended(p.iter().copied().collect()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Label::True(_) => "true",
            Label::Blended(_) => "blended",
            Label::Spurious => "spurious",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryLabel<T> {
    pub attractor_id: usize,
    pub location: Vec<T>,
    pub attracted_patterns: BTreeSet<usize>,
    pub label: Label,
}

#[derive(Clone, Debug)]
pub struct LabelReport<T> {
    pub labels: Vec<MemoryLabel<T>>,
    /// Indices of trials that did not converge.
    pub unresolved: Vec<usize>,
    /// Patterns whose Type-1 trial did not converge.
    pub pattern_errors: Vec<usize>,
    /// Attractor id reached by each trial, `None` when unresolved.
    pub trial_attractor: Vec<Option<usize>>,
}

impl<T: Scalar> LabelReport<T> {
    /// Label of the attractor at `x`, if one lies within `tol`.
    pub fn label_at(&self, x: &[T], tol: T) -> Option<&MemoryLabel<T>> {
        self.labels.iter().find(|l| dist_inf(&l.location, x) < tol)
    }
}

/// Attractor-matching tolerance.
pub const MATCH_TOL: f64 = 1e-4;

/// Labels the attractors reached from `starts`. `known` attractors (for
/// example from a census) are entered first so they receive a label even
/// when no trial reaches them.
pub fn label_in_field<T: Scalar>(
    field: &RetrievalField<T>,
    set: &TrainingSet,
    starts: &[IcStart<T>],
    known: &[Vec<T>],
    settings: &ConvergenceSettings,
) -> Result<LabelReport<T>> {
    check_dim(field.n(), set.n())?;
    let trials = run_trials(field, starts, settings)?;
    let newton = NewtonSettings::default();
    let polished: Vec<Option<Vec<T>>> = trials
        .par_iter()
        .map(|t| {
            t.result.location().map(|x| {
                newton_solve(field, x, &newton)
                    .filter(|p| dist_inf(p, x) < T::of(1e-3))
                    .unwrap_or_else(|| x.to_vec())
            })
        })
        .collect();

    let tol = T::of(MATCH_TOL);
    let mut locations: Vec<Vec<T>> = Vec::new();
    let mut find_or_add = |x: &[T]| -> usize {
        match locations.iter().position(|a| dist_inf(a, x) < tol) {
            Some(i) => i,
            None => {
                locations.push(x.to_vec());
                locations.len() - 1
            }
        }
    };
    for k in known {
        find_or_add(k);
    }
    let trial_attractor: Vec<Option<usize>> = polished.iter().map(|p| p.as_deref().map(&mut find_or_add)).collect();

    let unresolved: Vec<usize> = trial_attractor
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_none())
        .map(|(i, _)| i)
        .collect();
    let mut pattern_errors = Vec::new();
    let mut attracted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); locations.len()];
    for k in 0..set.k() {
        let type1 = trials
            .iter()
            .position(|t| t.ic_type == IcType::Type1 && t.source_pattern == Some(k));
        let Some(i1) = type1 else { continue };
        let Some(a) = trial_attractor[i1] else {
            pattern_errors.push(k);
            continue;
        };
        let type2: Vec<usize> = (0..trials.len())
            .filter(|&i| trials[i].ic_type == IcType::Type2 && trials[i].source_pattern == Some(k))
            .collect();
        let hits = type2.iter().filter(|&&i| trial_attractor[i] == Some(a)).count();
        if type2.is_empty() || 2 * hits > type2.len() {
            attracted[a].insert(k);
        }
    }
    let labels = locations
        .into_iter()
        .zip(attracted)
        .enumerate()
        .map(|(id, (location, p))| MemoryLabel {
            attractor_id: id,
            location,
            label: Label::from_patterns(&p),
            attracted_patterns: p,
        })
        .collect();
    Ok(LabelReport {
        labels,
        unresolved,
        pattern_errors,
        trial_attractor,
    })
}

pub fn label_memories<T: Scalar>(
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    set: &TrainingSet,
    starts: &[IcStart<T>],
    settings: &ConvergenceSettings,
) -> Result<LabelReport<T>> {
    label_in_field(&RetrievalField::new(w, cfg)?, set, starts, &[], settings)
}

#[derive(Clone, Debug)]
pub struct ForgettingIncident<T> {
    pub t_star: T,
    /// Time at which the lost attractor was labelled.
    pub labelled_at: T,
    pub lost_label: MemoryLabel<T>,
    /// Index into the event list.
    pub event: usize,
    pub kind: BifurcationKind,
}

#[derive(Clone, Debug, Default)]
pub struct ForgettingLog<T> {
    pub incidents: Vec<ForgettingIncident<T>>,
    /// Deaths of attractors that held no pattern.
    pub pruned: Vec<ForgettingIncident<T>>,
}

/// Slowest decay rate at which an attractor is labelled: retrieval runs
/// reach it within the default time budget.
pub const LABEL_DECAY: f64 = 0.05;

/// Labels every attractor that dies in `events` and sorts the deaths into
/// forgetting incidents and spurious pruning. A dying attractor is
/// labelled at the latest tracked sample before its death where its leading
/// eigenvalue is below `-LABEL_DECAY`; close to the bifurcation retrieval
/// runs cannot resolve it.
#[allow(clippy::too_many_arguments)]
pub fn forgetting_log<T: Scalar>(
    traj: &WeightTrajectory<T>,
    cfg: &NetworkConfig<T>,
    set: &TrainingSet,
    tracking: &Tracking<T>,
    events: &[BifurcationEvent<T>],
    counts: TrialCounts,
    seed: u64,
    settings: &ConvergenceSettings,
) -> Result<ForgettingLog<T>> {
    if set.n() != cfg.n {
        return Err(Error::Dimension {
            expected: cfg.n,
            got: set.n(),
        });
    }
    let starts: Vec<IcStart<T>> = generate_ic_trials(set, TrialCounts { type3: 0, ..counts }, seed);
    let mut log = ForgettingLog::default();
    for (ei, ev) in events.iter().enumerate() {
        if !ev.kind.is_death() {
            continue;
        }
        for p in &ev.participants {
            if p.class != StabilityClass::Stable || p.location.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let (t_label, x) = p
                .branch
                .and_then(|b| tracking.branches.get(b))
                .and_then(|br| {
                    br.samples.iter().rev().filter(|q| q.t <= ev.bracket.0).find(|q| {
                        q.point.stability_class == StabilityClass::Stable
                            && q.point.leading_eigenvalue() < T::of(-LABEL_DECAY)
                    })
                })
                .map(|q| (q.t, q.point.location.clone()))
                .unwrap_or((ev.bracket.0, p.location.clone()));
            let field = RetrievalField::new(&traj.weights_at(t_label)?, cfg)?;
            let report = label_in_field(&field, set, &starts, std::slice::from_ref(&x), settings)?;
            let lost = report
                .label_at(&x, T::of(MATCH_TOL))
                .cloned()
                .expect("known attractors are always labelled");
            let inc = ForgettingIncident {
                t_star: ev.t_star,
                labelled_at: t_label,
                lost_label: lost,
                event: ei,
                kind: ev.kind,
            };
            if inc.lost_label.label == Label::Spurious {
                log.pruned.push(inc);
            } else {
                log.incidents.push(inc);
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_starts_respect_protocol_bounds() {
        let set = TrainingSet::generate(10, 4, 3);
        let starts: Vec<IcStart<f64>> = generate_ic_trials(&set, TrialCounts::default(), 5);
        assert_eq!(starts.len(), 4 + 80 + 1000);
        for s in &starts {
            match s.ic_type {
                IcType::Type1 => assert_eq!(s.start, set.vector::<f64>(s.source_pattern.unwrap())),
                IcType::Type2 => {
                    let p: Vec<f64> = set.vector(s.source_pattern.unwrap());
                    assert!(dist_inf(&p, &s.start) <= 0.5);
                }
                IcType::Type3 => {
                    assert!(s.source_pattern.is_none());
                    assert!(s.start.iter().all(|v| (-5.0..=5.0).contains(v)));
                }
            }
        }
        let again: Vec<IcStart<f64>> = generate_ic_trials(&set, TrialCounts::default(), 5);
        assert_eq!(starts, again);
        let other: Vec<IcStart<f64>> = generate_ic_trials(&set, TrialCounts::default(), 6);
        assert_ne!(starts, other);
    }

    #[test]
    fn zero_weights_blend_everything_into_the_origin() {
        let set = TrainingSet::generate(6, 3, 1);
        let cfg = NetworkConfig::<f64>::with_n(6);
        let starts = generate_ic_trials(
            &set,
            TrialCounts {
                per_pattern: 5,
                type3: 20,
            },
            2,
        );
        let r = label_memories(
            &WeightMatrix::zeros(6),
            &cfg,
            &set,
            &starts,
            &ConvergenceSettings::default(),
        )
        .unwrap();
        assert_eq!(r.labels.len(), 1);
        assert!(r.labels[0].location.iter().all(|v| v.abs() < 1e-6));
        assert_eq!(r.labels[0].label, Label::Blended(vec![0, 1, 2]));
        assert!(r.unresolved.is_empty());
    }

    #[test]
    fn hebbian_weights_store_a_single_pattern_as_true_memory() {
        // One stored pattern: W ∝ p pᵀ makes ±p attractors; ±p are reached
        // from the pattern and from the negated pattern.
        let set = TrainingSet::from_vectors(vec![vec![1, -1, 1, 1, -1]], None).unwrap();
        let cfg = NetworkConfig {
            g: 2.0,
            ..NetworkConfig::<f64>::with_n(5)
        };
        let p: Vec<f64> = set.vector(0);
        let w = WeightMatrix::from_fn(5, |i, j| 0.8 * p[i] * p[j]);
        let starts = generate_ic_trials(
            &set,
            TrialCounts {
                per_pattern: 10,
                type3: 50,
            },
            7,
        );
        let r = label_memories(&w, &cfg, &set, &starts, &ConvergenceSettings::default()).unwrap();
        let trues: Vec<_> = r.labels.iter().filter(|l| l.label == Label::True(0)).collect();
        assert_eq!(trues.len(), 1);
        assert!(trues[0].location.iter().zip(&p).all(|(x, s)| x * s > 0.0));
        let neg: Vec<f64> = trues[0].location.iter().map(|v| -v).collect();
        let mirror = r
            .label_at(&neg, 1e-4)
            .expect("negated attractor reached by type-3 trials");
        assert_eq!(mirror.label, Label::Spurious);
        // Pattern sets across attractors are disjoint.
        let total: usize = r.labels.iter().map(|l| l.attracted_patterns.len()).sum();
        assert!(total <= set.k());
    }

    #[test]
    fn labels_partition_patterns_and_are_deterministic() {
        let set = TrainingSet::generate(8, 3, 11);
        let cfg = NetworkConfig {
            g: 1.5,
            ..NetworkConfig::<f64>::with_n(8)
        };
        let w = WeightMatrix::from_fn(8, |i, j| {
            (0..3)
                .map(|k| set.vectors()[k][i] as f64 * set.vectors()[k][j] as f64)
                .sum::<f64>()
                / 3.0
                * 0.6
        });
        let starts = generate_ic_trials(
            &set,
            TrialCounts {
                per_pattern: 8,
                type3: 40,
            },
            3,
        );
        let a = label_memories(&w, &cfg, &set, &starts, &ConvergenceSettings::default()).unwrap();
        let b = label_memories(&w, &cfg, &set, &starts, &ConvergenceSettings::default()).unwrap();
        assert_eq!(a.labels, b.labels);
        let mut seen = BTreeSet::new();
        for l in &a.labels {
            for k in &l.attracted_patterns {
                assert!(seen.insert(*k), "pattern {k} attracted twice");
            }
            assert_eq!(l.label, Label::from_patterns(&l.attracted_patterns));
        }
    }
}
