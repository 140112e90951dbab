//! Experiment configuration: a JSON document in which every field is
//! optional and falls back to the defaults below.
//!
//! ```json
//! {
//!   "seed": 1,
//!   "network": { "n": 81, "g": 0.3, "a": 30, "b": 300, "lambda": 1.4, "t_s": 12, "t_train": 6000 },
//!   "training_set": { "k": 6, "csv": null },
//!   "integrator": { "method": "adaptive", "rtol": 1e-9, "atol": 1e-9, "dt": 0.005 },
//!   "train": { "sample_dt": 0.5 },
//!   "newton": { "max_iter": 100, "tol": 1e-12, "residual_max": 1e-10, "dedup": 1e-6, "zero_threshold": 1e-9 },
//!   "retrieval": { "tol": 1e-8, "t_max": 500, "rtol": 1e-9, "atol": 1e-9 },
//!   "scan": { "t_range": [0, 40], "sample_dt": 0.1, "random_seeds": 200, "per_pattern_seeds": 20, ... },
//!   "memories": { "t": null, "per_pattern": 20, "type3": 1000 },
//!   "basins": { "t": null, "extent": [-5, 5], "resolution": 101, "x3_values": [...], "saddles": 4, ... },
//!   "manifold": { "axes": [[0, 1], [0, 2], [1, 2]], ... },
//!   "demo_n3": { "g": 5, "k": 3, "t_train": 96, "sample_dt": 0.1, ... }
//! }
//! ```
//!
//! All randomness derives from `seed`, split per purpose.

use hbl_core::fixedpoints::{NewtonSettings, TrackSettings};
use hbl_core::integrate::Integrator;
use hbl_core::manifolds::ContinuationSettings;
use hbl_core::model::NetworkConfig;
use hbl_core::simulate::ConvergenceSettings;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub network: Network,
    pub training_set: TrainingSetSpec,
    pub integrator: IntegratorSpec,
    pub train: Train,
    pub newton: Newton,
    pub retrieval: Retrieval,
    pub scan: Scan,
    pub memories: Memories,
    pub basins: Basins,
    pub manifold: Manifold,
    pub demo_n3: DemoN3,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            network: Network::default(),
            training_set: TrainingSetSpec::default(),
            integrator: IntegratorSpec::default(),
            train: Train::default(),
            newton: Newton::default(),
            retrieval: Retrieval::default(),
            scan: Scan::default(),
            memories: Memories::default(),
            basins: Basins::default(),
            manifold: Manifold::default(),
            demo_n3: DemoN3::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Network {
    pub n: usize,
    pub g: f64,
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub t_s: f64,
    pub t_train: f64,
}

impl Default for Network {
    fn default() -> Self {
        let c = NetworkConfig::<f64>::default();
        Self {
            n: c.n,
            g: c.g,
            a: c.a,
            b: c.b,
            lambda: c.lambda,
            t_s: c.t_s,
            t_train: c.t_train,
        }
    }
}

impl Network {
    pub fn to_core(&self) -> NetworkConfig<f64> {
        NetworkConfig {
            n: self.n,
            g: self.g,
            a: self.a,
            b: self.b,
            lambda: self.lambda,
            t_s: self.t_s,
            t_train: self.t_train,
        }
    }
}

/// Either `k` patterns drawn from the training-set seed, or a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSetSpec {
    pub k: usize,
    pub csv: Option<PathBuf>,
}

impl Default for TrainingSetSpec {
    fn default() -> Self {
        Self { k: 6, csv: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adaptive,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Step of the fixed-step method.
    pub dt: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            rtol: 1e-9,
            atol: 1e-9,
            dt: 0.005,
        }
    }
}

impl IntegratorSpec {
    pub fn to_core(&self) -> Integrator {
        match self.method {
            Method::Adaptive => Integrator::Adaptive {
                rtol: self.rtol,
                atol: self.atol,
            },
            Method::Rk4 => Integrator::FixedRk4 { dt: self.dt },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    /// Spacing of the stored samples; must divide `t_s`.
    pub sample_dt: f64,
    /// Start of the window used for the period estimate; defaults to
    /// half the training time.
    pub period_from: Option<f64>,
}

impl Default for Train {
    fn default() -> Self {
        Self {
            sample_dt: 0.5,
            period_from: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Newton {
    pub max_iter: usize,
    pub tol: f64,
    pub residual_max: f64,
    pub dedup: f64,
    pub zero_threshold: f64,
}

impl Default for Newton {
    fn default() -> Self {
        let s = NewtonSettings::default();
        Self {
            max_iter: s.max_iter,
            tol: s.tol,
            residual_max: s.residual_max,
            dedup: s.dedup,
            zero_threshold: s.zero_threshold,
        }
    }
}

impl Newton {
    pub fn to_core(&self) -> NewtonSettings {
        NewtonSettings {
            max_iter: self.max_iter,
            tol: self.tol,
            residual_max: self.residual_max,
            dedup: self.dedup,
            zero_threshold: self.zero_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retrieval {
    pub tol: f64,
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Retrieval {
    fn default() -> Self {
        let s = ConvergenceSettings::default();
        Self {
            tol: s.tol,
            t_max: s.t_max,
            rtol: s.rtol,
            atol: s.atol,
        }
    }
}

impl Retrieval {
    pub fn to_core(&self) -> ConvergenceSettings {
        ConvergenceSettings {
            tol: self.tol,
            t_max: self.t_max,
            rtol: self.rtol,
            atol: self.atol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scan {
    pub t_range: (f64, f64),
    /// Spacing at which the range is re-integrated when the stored samples
    /// are coarser.
    pub sample_dt: f64,
    pub random_seeds: usize,
    pub per_pattern_seeds: usize,
    pub continuity_bound: f64,
    pub bisection_width: f64,
    pub max_backfill: usize,
}

impl Default for Scan {
    fn default() -> Self {
        let s = TrackSettings::default();
        Self {
            t_range: (0.0, 40.0),
            sample_dt: 0.1,
            random_seeds: 200,
            per_pattern_seeds: 20,
            continuity_bound: s.continuity_bound,
            bisection_width: s.bisection_width,
            max_backfill: s.max_backfill,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Memories {
    /// Snapshot time; the end of the trajectory when absent.
    pub t: Option<f64>,
    pub per_pattern: usize,
    pub type3: usize,
}

impl Default for Memories {
    fn default() -> Self {
        Self {
            t: None,
            per_pattern: 20,
            type3: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Basins {
    /// Snapshot time; the end of the trajectory when absent.
    pub t: Option<f64>,
    pub free_axes: (usize, usize),
    /// Coordinate set to each of `x3_values`; all others are zero.
    pub fixed_axis: usize,
    pub x3_values: Vec<f64>,
    pub extent: (f64, f64),
    pub resolution: usize,
    /// Number of saddle-centred planes, one per symmetric saddle pair.
    pub saddles: usize,
}

impl Default for Basins {
    fn default() -> Self {
        Self {
            t: None,
            free_axes: (0, 1),
            fixed_axis: 2,
            x3_values: (0..12)
                .map(|k| ((-0.6 + 0.2 * k as f64) * 10.0).round() / 10.0)
                .collect(),
            extent: (-5.0, 5.0),
            resolution: 101,
            saddles: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Continuation {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub tol: f64,
    pub max_points: usize,
    pub half_width: f64,
}

impl Default for Continuation {
    fn default() -> Self {
        let s = ContinuationSettings::default();
        Self {
            h0: s.h0,
            h_min: s.h_min,
            h_max: s.h_max,
            tol: s.tol,
            max_points: s.max_points,
            half_width: s.half_width,
        }
    }
}

impl Continuation {
    pub fn to_core(&self) -> ContinuationSettings {
        ContinuationSettings {
            h0: self.h0,
            h_min: self.h_min,
            h_max: self.h_max,
            tol: self.tol,
            max_points: self.max_points,
            half_width: self.half_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifold {
    /// Weight pairs spanning the section subspace; the third is sliced.
    pub axes: [(usize, usize); 3],
    /// Slices of the third axis at offsets `k * slice_step`, `|k| <= slices`,
    /// around its value at the event.
    pub slices: usize,
    pub slice_step: f64,
    /// Saddle-node sections computed at most.
    pub max_sections: usize,
    pub crossing_width: f64,
    pub mesh_points: usize,
    pub continuation: Continuation,
}

impl Default for Manifold {
    fn default() -> Self {
        Self {
            axes: [(0, 1), (0, 2), (1, 2)],
            slices: 2,
            slice_step: 0.05,
            max_sections: 4,
            crossing_width: 1e-6,
            mesh_points: 64,
            continuation: Continuation {
                max_points: 600,
                ..Continuation::default()
            },
        }
    }
}

/// Overrides applied by `demo-n3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoN3 {
    pub g: f64,
    pub k: usize,
    pub t_train: f64,
    pub sample_dt: f64,
    pub random_seeds: usize,
    /// Slices of the third weight for the pitchfork surface.
    pub surface_range: (f64, f64),
    pub surface_step: f64,
}

impl Default for DemoN3 {
    fn default() -> Self {
        Self {
            g: 5.0,
            k: 3,
            t_train: 96.0,
            sample_dt: 0.1,
            random_seeds: 50,
            surface_range: (-0.8, 0.8),
            surface_step: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn track_settings(&self) -> TrackSettings {
        TrackSettings {
            newton: self.newton.to_core(),
            continuity_bound: self.scan.continuity_bound,
            bisection_width: self.scan.bisection_width,
            max_backfill: self.scan.max_backfill,
        }
    }

    /// Checks what the core does not check on its own.
    pub fn validate(&self) -> Result<(), String> {
        self.network.to_core().validate().map_err(|e| e.to_string())?;
        self.integrator.to_core().validate().map_err(|e| e.to_string())?;
        if self.training_set.csv.is_none() && self.training_set.k == 0 {
            return Err("training_set.k must be positive".into());
        }
        let positive = [
            ("train.sample_dt", self.train.sample_dt),
            ("scan.sample_dt", self.scan.sample_dt),
            ("scan.continuity_bound", self.scan.continuity_bound),
            ("scan.bisection_width", self.scan.bisection_width),
            ("manifold.slice_step", self.manifold.slice_step),
            ("manifold.crossing_width", self.manifold.crossing_width),
            ("demo_n3.sample_dt", self.demo_n3.sample_dt),
            ("demo_n3.surface_step", self.demo_n3.surface_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if !(self.scan.t_range.0 < self.scan.t_range.1) {
            return Err("scan.t_range must be increasing".into());
        }
        if self.basins.resolution < 2 {
            return Err("basins.resolution must be at least 2".into());
        }
        if !(self.basins.extent.0 < self.basins.extent.1) {
            return Err("basins.extent must be increasing".into());
        }
        Ok(())
    }
}
