//! The subcommands. Each writes its artifacts into the output directory and
//! returns the metrics for the run summary.

use crate::config::ExperimentConfig;
use crate::svg;
use hbl_core::basins::{
    basin_section, boundary_saddle_report, saddle_plane_section, AttractorCatalog, BasinRaster, PlaneSpec,
};
use hbl_core::fixedpoints::{
    attractor_census, detect_bifurcations, track_along_trajectory, BifurcationEvent, BifurcationKind, Census,
    FixedPoint, SeedBattery, Tracking,
};
use hbl_core::io::{self, join, Table};
use hbl_core::manifolds::{
    crossing_detect, pitchfork_surface_n3, pitchfork_test, saddle_node_section, sample_range, section_mesh,
    CrossingRecord, ManifoldSection, SubspaceAxes,
};
use hbl_core::memory::{
    forgetting_log, generate_ic_trials, label_in_field, ForgettingLog, IcType, LabelReport, TrialCounts,
};
use hbl_core::model::{NetworkConfig, RetrievalField, StimulusSchedule, TrainingSet};
use hbl_core::rng::{Purpose, SeedSplitter};
use hbl_core::simulate::{integrate_learning, make_initial_conditions, weight_period, WeightTrajectory};
use serde_json::{json, Map, Value};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

/// Failure classes, mapped to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<hbl_core::Error> for Failure {
    fn from(e: hbl_core::Error) -> Self {
        use hbl_core::Error as E;
        match e {
            E::Blowup { .. } | E::NotAFixedPoint { .. } | E::Domain(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

pub type Outcome<T> = Result<T, Failure>;

/// Everything a subcommand needs.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub snapshot: Option<PathBuf>,
    pub t_range: Option<(f64, f64)>,
    pub outputs: Vec<String>,
    pub metrics: Map<String, Value>,
}

impl Context {
    fn split(&self) -> SeedSplitter {
        SeedSplitter::new(self.cfg.seed)
    }

    fn create(&mut self, name: &str) -> Outcome<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn metric(&mut self, key: &str, value: Value) {
        self.metrics.insert(key.to_string(), value);
    }

    fn snapshot_path(&self) -> Outcome<&Path> {
        self.snapshot.as_deref().ok_or_else(|| {
            Failure::Usage("this command needs --snapshot PATH (a trajectory file written by train)".into())
        })
    }
}

fn load_trajectory(path: &Path) -> Outcome<WeightTrajectory<f64>> {
    let f = File::open(path).map_err(|e| Failure::Usage(format!("cannot open trajectory {}: {e}", path.display())))?;
    Ok(io::read_trajectory(BufReader::new(f))?)
}

fn training_set(cfg: &ExperimentConfig, n: usize) -> Outcome<TrainingSet> {
    match &cfg.training_set.csv {
        Some(p) => {
            let f =
                File::open(p).map_err(|e| Failure::Usage(format!("cannot open training set {}: {e}", p.display())))?;
            let set = io::read_training_set(BufReader::new(f))?;
            if set.n() != n {
                return Err(Failure::Usage(format!(
                    "training set has N = {}, network has N = {n}",
                    set.n()
                )));
            }
            Ok(set)
        }
        None => Ok(TrainingSet::generate(
            n,
            cfg.training_set.k,
            SeedSplitter::new(cfg.seed).seed_for(Purpose::TrainingSet),
        )),
    }
}

/// Network and training set of a stored trajectory; the provenance wins
/// over the configuration.
fn trajectory_setup(
    cfg: &ExperimentConfig,
    traj: &WeightTrajectory<f64>,
) -> Outcome<(NetworkConfig<f64>, TrainingSet)> {
    match &traj.provenance {
        Some(p) => Ok((p.cfg.clone(), p.training_set.clone())),
        None => {
            let net = NetworkConfig {
                n: traj.n(),
                ..cfg.network.to_core()
            };
            let set = training_set(cfg, traj.n())?;
            Ok((net, set))
        }
    }
}

fn check_time(traj: &WeightTrajectory<f64>, t: f64) -> Outcome<()> {
    if t < traj.t_start() || t > traj.t_end() {
        return Err(Failure::Usage(format!(
            "t = {t} outside the trajectory span [{}, {}]",
            traj.t_start(),
            traj.t_end()
        )));
    }
    Ok(())
}

fn train_run(
    cfg: &ExperimentConfig,
    net: &NetworkConfig<f64>,
    sample_dt: f64,
) -> Outcome<(TrainingSet, WeightTrajectory<f64>)> {
    let set = training_set(cfg, net.n)?;
    let ics = make_initial_conditions(net, SeedSplitter::new(cfg.seed).seed_for(Purpose::InitialConditions));
    let schedule = StimulusSchedule::new(set.clone(), net.t_s);
    let traj = integrate_learning(net, &schedule, &ics, sample_dt, cfg.integrator.to_core())?;
    Ok((set, traj))
}

fn write_trajectory(ctx: &mut Context, traj: &WeightTrajectory<f64>, default_name: &str) -> Outcome<()> {
    match ctx.snapshot.clone() {
        Some(p) => {
            let f = File::create(&p).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", p.display())))?;
            io::write_trajectory(traj, BufWriter::new(f))?;
            ctx.outputs.push(p.display().to_string());
        }
        None => {
            let w = ctx.create(default_name)?;
            io::write_trajectory(traj, w)?;
        }
    }
    Ok(())
}

pub fn train(ctx: &mut Context) -> Outcome<()> {
    let net = ctx.cfg.network.to_core();
    let (set, traj) = train_run(&ctx.cfg, &net, ctx.cfg.train.sample_dt)?;
    write_trajectory(ctx, &traj, "trajectory.hbl")?;
    let w = ctx.create("training_set.csv")?;
    io::write_training_set(&set, w)?;
    let w = ctx.create("weights_summary.csv")?;
    io::write_weight_summary(&traj, w)?;

    let max_w = traj.snapshots.iter().map(|w| w.max_abs()).fold(0.0, f64::max);
    let from = ctx.cfg.train.period_from.unwrap_or(0.5 * net.t_train);
    ctx.metric("samples", json!(traj.len()));
    ctx.metric("max_abs_weight", json!(max_w));
    ctx.metric("weights_within_box", json!(max_w < 1.0));
    ctx.metric("period_from", json!(from));
    ctx.metric("period", json!(weight_period(&traj, from)));
    Ok(())
}

/// Trajectory restricted to `range` at the scan spacing, re-integrated when
/// the stored samples are coarser.
fn scan_trajectory(ctx: &Context, traj: &WeightTrajectory<f64>, range: (f64, f64)) -> Outcome<WeightTrajectory<f64>> {
    let dt = ctx.cfg.scan.sample_dt;
    if traj.sample_dt > dt * (1.0 + 1e-9) && traj.provenance.is_some() && traj.x_samples.is_some() {
        Ok(traj.refine(range.0, range.1, dt)?)
    } else {
        Ok(traj.clone())
    }
}

fn clamp_range(traj: &WeightTrajectory<f64>, range: (f64, f64)) -> Outcome<(f64, f64)> {
    let r = (range.0.max(traj.t_start()), range.1.min(traj.t_end()));
    if !(r.0 < r.1) {
        return Err(Failure::Usage(format!(
            "t-range {}:{} does not overlap the trajectory span [{}, {}]",
            range.0,
            range.1,
            traj.t_start(),
            traj.t_end()
        )));
    }
    Ok(r)
}

struct ScanResult {
    traj: WeightTrajectory<f64>,
    tracking: Tracking<f64>,
    events: Vec<BifurcationEvent<f64>>,
}

fn run_scan(
    ctx: &Context,
    traj: &WeightTrajectory<f64>,
    net: &NetworkConfig<f64>,
    set: &TrainingSet,
    range: (f64, f64),
    random_seeds: usize,
) -> Outcome<ScanResult> {
    let range = clamp_range(traj, range)?;
    let traj = scan_trajectory(ctx, traj, range)?;
    let s = ctx.cfg.track_settings();
    let battery = SeedBattery::new(
        net.n,
        Some(set),
        ctx.cfg.scan.per_pattern_seeds,
        random_seeds,
        ctx.split().seed_for(Purpose::SeedBattery),
    );
    let tracking = track_along_trajectory(&traj, net, &battery, range, &s)?;
    let events = detect_bifurcations(&tracking, &traj, net, &s)?;
    Ok(ScanResult { traj, tracking, events })
}

fn write_scan(ctx: &mut Context, scan: &ScanResult) -> Outcome<()> {
    let mut t = Table::new(
        ctx.create("branches.csv")?,
        &[
            "branch",
            "partner",
            "t",
            "class",
            "x1",
            "leading_eigenvalue",
            "location",
        ],
    )?;
    for b in &scan.tracking.branches {
        for s in &b.samples {
            t.row([
                b.id.to_string(),
                b.partner.map_or(String::new(), |p| p.to_string()),
                s.t.to_string(),
                s.point.stability_class.label(),
                s.point.location[0].to_string(),
                s.point.leading_eigenvalue().to_string(),
                join(&s.point.location),
            ])?;
        }
    }
    t.finish()?;

    let mut t = Table::new(ctx.create("census.csv")?, &["t", "stable", "useful_saddle", "other"])?;
    for (time, c) in scan.tracking.sample_times.iter().zip(scan.tracking.census()) {
        t.row([
            time.to_string(),
            c.stable.to_string(),
            c.useful_saddle.to_string(),
            c.other.to_string(),
        ])?;
    }
    t.finish()?;

    let mut t = Table::new(
        ctx.create("events.csv")?,
        &[
            "event",
            "t_star",
            "t_lo",
            "t_hi",
            "kind",
            "symmetry_partner",
            "classes",
            "branches",
            "locations",
        ],
    )?;
    for (i, e) in scan.events.iter().enumerate() {
        t.row([
            i.to_string(),
            e.t_star.to_string(),
            e.bracket.0.to_string(),
            e.bracket.1.to_string(),
            e.kind.label().to_string(),
            e.symmetry_partner.map_or(String::new(), |p| p.to_string()),
            e.participants
                .iter()
                .map(|p| p.class.label())
                .collect::<Vec<_>>()
                .join(";"),
            e.participants
                .iter()
                .map(|p| p.branch.map_or("-".to_string(), |b| b.to_string()))
                .collect::<Vec<_>>()
                .join(";"),
            e.participants
                .iter()
                .map(|p| join(&p.location))
                .collect::<Vec<_>>()
                .join("|"),
        ])?;
    }
    t.finish()?;

    let mut w = ctx.create("diagram.svg")?;
    std::io::Write::write_all(&mut w, svg::diagram(&scan.tracking, &scan.events).as_bytes())?;
    std::io::Write::flush(&mut w)?;

    let kinds: Vec<&str> = scan.events.iter().map(|e| e.kind.label()).collect();
    ctx.metric("branches", json!(scan.tracking.branches.len()));
    ctx.metric("events", json!(scan.events.len()));
    ctx.metric("event_kinds", json!(kinds));
    ctx.metric(
        "event_times",
        json!(scan.events.iter().map(|e| e.t_star).collect::<Vec<_>>()),
    );
    Ok(())
}

pub fn scan(ctx: &mut Context) -> Outcome<()> {
    let traj = load_trajectory(ctx.snapshot_path()?)?;
    let (net, set) = trajectory_setup(&ctx.cfg, &traj)?;
    let range = ctx.t_range.unwrap_or(ctx.cfg.scan.t_range);
    let result = run_scan(ctx, &traj, &net, &set, range, ctx.cfg.scan.random_seeds)?;
    ctx.metric("t_range", json!([range.0, range.1]));
    write_scan(ctx, &result)
}

fn write_forgetting(ctx: &mut Context, log: &ForgettingLog<f64>) -> Outcome<()> {
    let mut t = Table::new(
        ctx.create("forgetting.csv")?,
        &[
            "t_star",
            "labelled_at",
            "event",
            "kind",
            "label",
            "patterns",
            "pruned",
            "location",
        ],
    )?;
    let mut all: Vec<(bool, _)> = log
        .incidents
        .iter()
        .map(|i| (false, i))
        .chain(log.pruned.iter().map(|i| (true, i)))
        .collect();
    all.sort_by(|a, b| a.1.t_star.partial_cmp(&b.1.t_star).unwrap().then(a.0.cmp(&b.0)));
    for (pruned, i) in all {
        t.row([
            i.t_star.to_string(),
            i.labelled_at.to_string(),
            i.event.to_string(),
            i.kind.label().to_string(),
            i.lost_label.label.name().to_string(),
            i.lost_label
                .attracted_patterns
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            pruned.to_string(),
            join(&i.lost_label.location),
        ])?;
    }
    t.finish()?;
    ctx.metric("forgetting_incidents", json!(log.incidents.len()));
    ctx.metric("pruned_spurious", json!(log.pruned.len()));
    ctx.metric(
        "forgetting_times",
        json!(log.incidents.iter().map(|i| i.t_star).collect::<Vec<_>>()),
    );
    Ok(())
}

fn write_labels(ctx: &mut Context, report: &LabelReport<f64>, name: &str) -> Outcome<()> {
    let mut t = Table::new(ctx.create(name)?, &["attractor", "label", "patterns", "location"])?;
    for l in &report.labels {
        t.row([
            l.attractor_id.to_string(),
            l.label.name().to_string(),
            l.attracted_patterns
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            join(&l.location),
        ])?;
    }
    Ok(t.finish()?)
}

pub fn memories(ctx: &mut Context) -> Outcome<()> {
    let traj = load_trajectory(ctx.snapshot_path()?)?;
    let (net, set) = trajectory_setup(&ctx.cfg, &traj)?;
    let t = ctx.cfg.memories.t.unwrap_or(traj.t_end());
    check_time(&traj, t)?;
    let counts = TrialCounts {
        per_pattern: ctx.cfg.memories.per_pattern,
        type3: ctx.cfg.memories.type3,
    };
    let starts = generate_ic_trials(&set, counts, ctx.split().seed_for(Purpose::Perturbations));
    let field = RetrievalField::new(&traj.weights_at(t)?, &net)?;
    let report = label_in_field(&field, &set, &starts, &[], &ctx.cfg.retrieval.to_core())?;
    write_labels(ctx, &report, "labels.csv")?;

    let mut tab = Table::new(ctx.create("trials.csv")?, &["trial", "type", "pattern", "attractor"])?;
    for (i, (s, a)) in starts.iter().zip(&report.trial_attractor).enumerate() {
        let ty = match s.ic_type {
            IcType::Type1 => "1",
            IcType::Type2 => "2",
            IcType::Type3 => "3",
        };
        tab.row([
            i.to_string(),
            ty.to_string(),
            s.source_pattern.map_or(String::new(), |p| p.to_string()),
            a.map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    tab.finish()?;

    let count = |name: &str| report.labels.iter().filter(|l| l.label.name() == name).count();
    ctx.metric("t", json!(t));
    ctx.metric("attractors", json!(report.labels.len()));
    ctx.metric("true", json!(count("true")));
    ctx.metric("blended", json!(count("blended")));
    ctx.metric("spurious", json!(count("spurious")));
    ctx.metric("unresolved_trials", json!(report.unresolved.len()));
    ctx.metric("pattern_errors", json!(report.pattern_errors));

    if let Some(range) = ctx.t_range {
        let scan = run_scan(ctx, &traj, &net, &set, range, ctx.cfg.scan.random_seeds)?;
        let log = forgetting_log(
            &scan.traj,
            &net,
            &set,
            &scan.tracking,
            &scan.events,
            counts,
            ctx.split().seed_for(Purpose::Perturbations),
            &ctx.cfg.retrieval.to_core(),
        )?;
        ctx.metric("t_range", json!([range.0, range.1]));
        write_forgetting(ctx, &log)?;
    }
    Ok(())
}

/// Useful saddles, one per symmetric pair, at most `count`.
fn pick_saddles(census: &Census<f64>, count: usize) -> Vec<FixedPoint<f64>> {
    let mut out: Vec<FixedPoint<f64>> = Vec::new();
    for p in census.useful_saddles() {
        if out.len() == count {
            break;
        }
        let mirrored = out
            .iter()
            .any(|q| q.location.iter().zip(&p.location).all(|(a, b)| (a + b).abs() < 1e-6));
        if !mirrored {
            out.push(p.clone());
        }
    }
    out
}

fn write_raster(ctx: &mut Context, raster: &BasinRaster<f64>, stem: &str) -> Outcome<()> {
    let w = ctx.create(&format!("{stem}.ppm"))?;
    io::write_ppm(raster, w)?;
    let w = ctx.create(&format!("{stem}.csv"))?;
    io::write_raster_csv(raster, w)?;
    Ok(())
}

pub fn basins(ctx: &mut Context) -> Outcome<()> {
    let traj = load_trajectory(ctx.snapshot_path()?)?;
    let (net, set) = trajectory_setup(&ctx.cfg, &traj)?;
    let t = ctx.cfg.basins.t.unwrap_or(traj.t_end());
    check_time(&traj, t)?;
    let b = ctx.cfg.basins.clone();
    let (fa, fb) = b.free_axes;
    if fa == fb || fa >= net.n || fb >= net.n {
        return Err(Failure::Usage(format!(
            "basins.free_axes {:?} invalid for N = {}",
            b.free_axes, net.n
        )));
    }
    let w = traj.weights_at(t)?;
    let battery = SeedBattery::new(
        net.n,
        Some(&set),
        ctx.cfg.scan.per_pattern_seeds,
        ctx.cfg.scan.random_seeds,
        ctx.split().seed_for(Purpose::SeedBattery),
    );
    let newton = ctx.cfg.newton.to_core();
    let census = attractor_census(&w, &net, &battery, &newton)?;
    let mut catalog = AttractorCatalog::from_points(&census.points);
    let settings = ctx.cfg.retrieval.to_core();

    let mut rasters = 0;
    let mut unresolved = 0;
    let planes_possible = b.fixed_axis < net.n && b.fixed_axis != fa && b.fixed_axis != fb;
    if planes_possible {
        for (k, &x3) in b.x3_values.iter().enumerate() {
            let mut fixed = vec![0.0; net.n];
            fixed[b.fixed_axis] = x3;
            let plane = PlaneSpec {
                free_axes: b.free_axes,
                fixed_values: fixed,
                extent: b.extent,
                resolution: b.resolution,
            };
            let raster = basin_section(&w, &net, &plane, &mut catalog, &settings)?;
            unresolved += raster.unresolved();
            write_raster(ctx, &raster, &format!("plane_{k:02}"))?;
            rasters += 1;
        }
    }

    let saddles = pick_saddles(&census, b.saddles);
    let mut report = Table::new(
        ctx.create("boundary_report.csv")?,
        &["saddle", "raster", "distance_cells", "flagged", "location"],
    )?;
    let mut worst: Option<f64> = None;
    let mut flagged = 0;
    for (k, s) in saddles.iter().enumerate() {
        let raster = saddle_plane_section(s, &w, &net, b.extent, b.resolution, &mut catalog, &settings)?;
        unresolved += raster.unresolved();
        let stem = format!("saddle_{k:02}");
        let entries = boundary_saddle_report(&raster, std::slice::from_ref(s));
        for e in &entries {
            flagged += e.flagged as usize;
            if let Some(d) = e.distance_cells {
                worst = Some(worst.map_or(d, |m: f64| m.max(d)));
            }
            report.row([
                k.to_string(),
                stem.clone(),
                e.distance_cells.map_or(String::new(), |d| d.to_string()),
                e.flagged.to_string(),
                join(&s.location),
            ])?;
        }
        if entries.is_empty() {
            report.row([
                k.to_string(),
                stem.clone(),
                String::new(),
                "outside".to_string(),
                join(&s.location),
            ])?;
        }
        write_raster(ctx, &raster, &stem)?;
        rasters += 1;
    }
    report.finish()?;

    // Labels for the palette entries.
    let counts = TrialCounts {
        per_pattern: ctx.cfg.memories.per_pattern,
        type3: 0,
    };
    let starts = generate_ic_trials(&set, counts, ctx.split().seed_for(Purpose::Perturbations));
    let field = RetrievalField::new(&w, &net)?;
    let labels = label_in_field(&field, &set, &starts, &catalog.attractors, &settings)?;
    let pal = ctx.create("palette.csv")?;
    io::write_palette(&catalog, pal)?;
    let mut tab = Table::new(
        ctx.create("attractors.csv")?,
        &["attractor", "label", "patterns", "partner", "location"],
    )?;
    for (id, a) in catalog.attractors.iter().enumerate() {
        let l = labels.label_at(a, 1e-4);
        tab.row([
            id.to_string(),
            l.map_or("unlabelled", |l| l.label.name()).to_string(),
            l.map_or(String::new(), |l| {
                l.attracted_patterns
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            }),
            catalog.partner(id).map_or(String::new(), |p| p.to_string()),
            join(a),
        ])?;
    }
    tab.finish()?;

    ctx.metric("t", json!(t));
    ctx.metric("stable", json!(census.counts.stable));
    ctx.metric("useful_saddles", json!(census.counts.useful_saddle));
    ctx.metric("other_unstable", json!(census.counts.other));
    ctx.metric("attractors_in_palette", json!(catalog.len()));
    ctx.metric("rasters", json!(rasters));
    ctx.metric("unresolved_cells", json!(unresolved));
    ctx.metric("saddle_planes", json!(saddles.len()));
    ctx.metric("max_saddle_distance_cells", json!(worst));
    ctx.metric("flagged_saddles", json!(flagged));
    Ok(())
}

fn write_crossings(ctx: &mut Context, crossings: &[CrossingRecord<f64>]) -> Outcome<()> {
    let mut t = Table::new(
        ctx.create("crossings.csv")?,
        &["t_cross", "direction", "h_before", "h_after"],
    )?;
    for c in crossings {
        t.row([
            c.t_cross.to_string(),
            c.direction.label().to_string(),
            format!("{:e}", c.test_value_before),
            format!("{:e}", c.test_value_after),
        ])?;
    }
    t.finish()?;
    ctx.metric("crossings", json!(crossings.len()));
    ctx.metric(
        "crossing_log",
        json!(crossings
            .iter()
            .map(|c| json!({"t": c.t_cross, "direction": c.direction.label()}))
            .collect::<Vec<_>>()),
    );
    Ok(())
}

fn write_section(ctx: &mut Context, section: &ManifoldSection<f64>, stem: &str) -> Outcome<()> {
    let w = ctx.create(&format!("{stem}.csv"))?;
    io::write_section_csv(section, w)?;
    let mesh = section_mesh(section, ctx.cfg.manifold.mesh_points);
    let w = ctx.create(&format!("{stem}.obj"))?;
    io::write_mesh(&mesh, w)?;
    Ok(())
}

fn pitchfork_surface(ctx: &mut Context, net: &NetworkConfig<f64>) -> Outcome<()> {
    let d = &ctx.cfg.demo_n3;
    let samples: Vec<f64> = sample_range(d.surface_range.0, d.surface_range.1, d.surface_step);
    let section = pitchfork_surface_n3(net, &samples, &ctx.cfg.manifold.continuation.to_core())?;
    ctx.metric("surface_curves", json!(section.curves.len()));
    ctx.metric("surface_max_residual", json!(section.max_residual()));
    write_section(ctx, &section, "pitchfork_surface")
}

pub fn manifold(ctx: &mut Context) -> Outcome<()> {
    let traj = load_trajectory(ctx.snapshot_path()?)?;
    let (net, set) = trajectory_setup(&ctx.cfg, &traj)?;
    let range = ctx.t_range.unwrap_or(ctx.cfg.scan.t_range);
    let m = ctx.cfg.manifold.clone();
    let axes = SubspaceAxes::new(net.n, m.axes)?;
    let scan = run_scan(ctx, &traj, &net, &set, range, ctx.cfg.scan.random_seeds)?;
    let crossings: Vec<_> = crossing_detect(&scan.traj, |w| pitchfork_test(w, &net), m.crossing_width)?
        .into_iter()
        .filter(|c| c.t_cross >= range.0 && c.t_cross <= range.1)
        .collect();
    write_crossings(ctx, &crossings)?;

    let mut t = Table::new(
        ctx.create("sections.csv")?,
        &[
            "section",
            "event",
            "t_n",
            "kind",
            "curves",
            "vertices",
            "max_residual",
            "notes",
        ],
    )?;
    let mut done = 0;
    let mut worst = 0.0f64;
    for (i, e) in scan.events.iter().enumerate() {
        if done == m.max_sections {
            break;
        }
        let fold = matches!(
            e.kind,
            BifurcationKind::SaddleNodeBirth | BifurcationKind::SaddleNodeDeath
        );
        if !fold || e.symmetry_partner.is_some_and(|p| p < i) {
            continue;
        }
        let c0 = scan.traj.weights_at(e.t_star)?.get(m.axes[2].0, m.axes[2].1);
        let k = m.slices as i64;
        let slices: Vec<f64> = (-k..=k)
            .filter(|&j| j != 0)
            .map(|j| c0 + m.slice_step * j as f64)
            .collect();
        let stem = format!("section_{done:02}");
        match saddle_node_section(&scan.traj, e, axes, &net, &slices, &m.continuation.to_core()) {
            Ok(sec) => {
                worst = worst.max(sec.max_residual());
                t.row([
                    stem.clone(),
                    i.to_string(),
                    e.t_star.to_string(),
                    e.kind.label().to_string(),
                    sec.curves.len().to_string(),
                    sec.curves.iter().map(|c| c.vertices.len()).sum::<usize>().to_string(),
                    format!("{:e}", sec.max_residual()),
                    sec.notes.join("; "),
                ])?;
                write_section(ctx, &sec, &stem)?;
            }
            Err(err) => {
                t.row([
                    stem.clone(),
                    i.to_string(),
                    e.t_star.to_string(),
                    e.kind.label().to_string(),
                    "0".into(),
                    "0".into(),
                    String::new(),
                    err.to_string(),
                ])?;
            }
        }
        done += 1;
    }
    t.finish()?;
    ctx.metric("t_range", json!([range.0, range.1]));
    ctx.metric("saddle_node_sections", json!(done));
    ctx.metric("section_max_residual", json!(worst));
    if net.n == 3 {
        pitchfork_surface(ctx, &net)?;
    }
    Ok(())
}

pub fn demo_n3(ctx: &mut Context) -> Outcome<()> {
    let d = ctx.cfg.demo_n3.clone();
    ctx.cfg.network.n = 3;
    ctx.cfg.network.g = d.g;
    ctx.cfg.network.t_train = d.t_train;
    ctx.cfg.training_set.k = d.k;
    if ctx.cfg.training_set.csv.is_some() {
        return Err(Failure::Usage(
            "demo-n3 draws its own training set; remove training_set.csv".into(),
        ));
    }
    ctx.cfg.scan.sample_dt = d.sample_dt;
    let net = ctx.cfg.network.to_core();
    let (set, traj) = train_run(&ctx.cfg, &net, d.sample_dt)?;
    write_trajectory(ctx, &traj, "trajectory.hbl")?;
    let w = ctx.create("training_set.csv")?;
    io::write_training_set(&set, w)?;

    pitchfork_surface(ctx, &net)?;
    let crossings = crossing_detect(&traj, |w| pitchfork_test(w, &net), ctx.cfg.manifold.crossing_width)?;
    write_crossings(ctx, &crossings)?;

    let scan = run_scan(ctx, &traj, &net, &set, (0.0, d.t_train), d.random_seeds)?;
    write_scan(ctx, &scan)?;
    let counts = TrialCounts {
        per_pattern: ctx.cfg.memories.per_pattern,
        type3: 0,
    };
    let log = forgetting_log(
        &scan.traj,
        &net,
        &set,
        &scan.tracking,
        &scan.events,
        counts,
        ctx.split().seed_for(Purpose::Perturbations),
        &ctx.cfg.retrieval.to_core(),
    )?;
    write_forgetting(ctx, &log)?;

    let mut stable: Vec<usize> = scan.tracking.census().iter().map(|c| c.stable).collect();
    stable.sort_unstable();
    stable.dedup();
    ctx.metric("census_values", json!(stable));
    Ok(())
}
