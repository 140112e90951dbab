//! Integration of the learning system and convergence runs of the retrieval
//! system.

use crate::error::{check_dim, Error, Result};
use crate::integrate::{integrate, DormandPrince, Integrator, OdeSystem};
use crate::model::{learning_rhs_flat, NetworkConfig, RetrievalField, StimulusSchedule, TrainingSet, WeightMatrix};
use crate::rng;
use crate::scalar::{norm_inf, Scalar};

/// Random initial state of the learning system.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialConditions<T> {
    /// Components uniform in `[-1, 1]`.
    pub x0: Vec<T>,
    /// Entries uniform in `[-0.01, 0.01]`.
    pub w0: WeightMatrix<T>,
    pub seed: u64,
}

pub fn make_initial_conditions<T: Scalar>(cfg: &NetworkConfig<T>, seed: u64) -> InitialConditions<T> {
    let mut r = rng::stream(seed);
    let x0 = (0..cfg.n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
    let w0 = WeightMatrix::from_fn(cfg.n, |_, _| rng::uniform(&mut r, -0.01, 0.01));
    InitialConditions { x0, w0, seed }
}

/// Learning system on flat storage `[x (n), ω (n(n-1)/2)]` with the input
/// held fixed, as it is inside one exposure window.
pub struct LearningSystem<'a, T> {
    pub cfg: &'a NetworkConfig<T>,
    pub input: Vec<T>,
}

impl<T: Scalar> OdeSystem<T> for LearningSystem<'_, T> {
    fn dim(&self) -> usize {
        self.cfg.n + self.cfg.weight_count()
    }

    fn eval(&self, _t: T, y: &[T], dy: &mut [T]) {
        let n = self.cfg.n;
        let (x, w) = y.split_at(n);
        let (dx, dw) = dy.split_at_mut(n);
        learning_rhs_flat(self.cfg, x, w, &self.input, dx, dw);
    }
}

impl<T: Scalar> OdeSystem<T> for RetrievalField<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn eval(&self, _t: T, y: &[T], dy: &mut [T]) {
        self.eval_into(y, dy);
    }
}

/// Everything needed to regenerate a trajectory, and to re-integrate
/// between its samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance<T> {
    pub cfg: NetworkConfig<T>,
    pub training_set: TrainingSet,
    pub ic_seed: u64,
    pub integrator: Integrator,
}

/// Weights (and optionally neuron states) sampled along a learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTrajectory<T> {
    pub sample_dt: T,
    pub sample_times: Vec<T>,
    pub snapshots: Vec<WeightMatrix<T>>,
    pub x_samples: Option<Vec<Vec<T>>>,
    pub provenance: Option<Provenance<T>>,
}

impl<T: Scalar> WeightTrajectory<T> {
    /// A trajectory given only by its samples; intermediate weights are
    /// linearly interpolated.
    pub fn from_snapshots(sample_times: Vec<T>, snapshots: Vec<WeightMatrix<T>>) -> Result<Self> {
        check_dim(sample_times.len(), snapshots.len())?;
        if sample_times.is_empty() {
            return Err(Error::Argument("empty trajectory".into()));
        }
        if sample_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("sample times must increase strictly".into()));
        }
        let sample_dt = if sample_times.len() > 1 {
            sample_times[1] - sample_times[0]
        } else {
            T::one()
        };
        Ok(Self {
            sample_dt,
            sample_times,
            snapshots,
            x_samples: None,
            provenance: None,
        })
    }

    pub fn n(&self) -> usize {
        self.snapshots[0].n()
    }

    pub fn len(&self) -> usize {
        self.sample_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_times.is_empty()
    }

    pub fn t_start(&self) -> T {
        self.sample_times[0]
    }

    pub fn t_end(&self) -> T {
        *self.sample_times.last().expect("non-empty trajectory")
    }

    /// Index of the last sample with time `<= t`.
    pub fn index_at_or_before(&self, t: T) -> usize {
        match self
            .sample_times
            .binary_search_by(|s| s.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Weights at any `t` in the span: re-integrated from the preceding
    /// sample when the trajectory carries states and provenance, linearly
    /// interpolated otherwise.
    pub fn weights_at(&self, t: T) -> Result<WeightMatrix<T>> {
        if t < self.t_start() || t > self.t_end() {
            return Err(Error::Domain(format!(
                "t = {t} outside trajectory span [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let i = self.index_at_or_before(t);
        if self.sample_times[i] == t || i + 1 == self.len() {
            return Ok(self.snapshots[i].clone());
        }
        match (&self.provenance, &self.x_samples) {
            (Some(p), Some(xs)) => {
                let schedule = StimulusSchedule::new(p.training_set.clone(), p.cfg.t_s);
                let (_, w) = advance_learning(
                    &p.cfg,
                    &schedule,
                    p.integrator,
                    self.sample_times[i],
                    &xs[i],
                    &self.snapshots[i],
                    t,
                )?;
                Ok(w)
            }
            _ => {
                let (t0, t1) = (self.sample_times[i], self.sample_times[i + 1]);
                let s = (t - t0) / (t1 - t0);
                Ok(WeightMatrix::lerp(&self.snapshots[i], &self.snapshots[i + 1], s))
            }
        }
    }

    /// Samples over `[t0, t1]` at spacing `dt`, re-integrated from the last
    /// sample at or before `t0`. `dt` must divide the sample spacing and the
    /// trajectory must carry states and provenance.
    pub fn refine(&self, t0: T, t1: T, dt: T) -> Result<Self> {
        let (Some(p), Some(xs)) = (&self.provenance, &self.x_samples) else {
            return Err(Error::Argument("refining needs states and provenance".into()));
        };
        let ratio = (self.sample_dt / dt).f64();
        if !(dt > T::zero()) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::Argument(format!(
                "dt = {dt} must divide the sample spacing {}",
                self.sample_dt
            )));
        }
        let t1 = t1.min(self.t_end());
        let i = self.index_at_or_before(t0);
        let t_start = self.sample_times[i];
        let count = ((t1 - t_start) / dt).f64().ceil().max(0.0) as usize;
        let count = count.min((((self.t_end() - t_start) / dt).f64() + 1e-9).floor() as usize);
        let schedule = StimulusSchedule::new(p.training_set.clone(), p.cfg.t_s);
        let y: Vec<T> = xs[i].iter().chain(self.snapshots[i].entries()).copied().collect();
        let (sample_times, snapshots, x_samples) =
            sample_learning(&p.cfg, &schedule, p.integrator, t_start, y, dt, count)?;
        Ok(Self {
            sample_dt: dt,
            sample_times,
            snapshots,
            x_samples: Some(x_samples),
            provenance: self.provenance.clone(),
        })
    }

    /// Restricts to the samples with `t0 <= t <= t1`.
    pub fn slice(&self, t0: T, t1: T) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.sample_times[i] >= t0 && self.sample_times[i] <= t1)
            .collect();
        Self {
            sample_dt: self.sample_dt,
            sample_times: keep.iter().map(|&i| self.sample_times[i]).collect(),
            snapshots: keep.iter().map(|&i| self.snapshots[i].clone()).collect(),
            x_samples: self
                .x_samples
                .as_ref()
                .map(|xs| keep.iter().map(|&i| xs[i].clone()).collect()),
            provenance: self.provenance.clone(),
        }
    }
}

/// Integrates the learning system from `(t0, x, w)` to `t1`, restarting at
/// every stimulus switch in between.
pub fn advance_learning<T: Scalar>(
    cfg: &NetworkConfig<T>,
    schedule: &StimulusSchedule<T>,
    integrator: Integrator,
    t0: T,
    x: &[T],
    w: &WeightMatrix<T>,
    t1: T,
) -> Result<(Vec<T>, WeightMatrix<T>)> {
    let n = cfg.n;
    let mut y: Vec<T> = x.iter().chain(w.entries()).copied().collect();
    let mut t = t0;
    while t < t1 {
        let seg_end = schedule.next_switch_after(t).min(t1);
        let sys = LearningSystem {
            cfg,
            input: schedule.stimulus_at(t)?,
        };
        integrate(&sys, integrator, t, &mut y, seg_end)?;
        t = seg_end;
    }
    let w = WeightMatrix::from_entries(n, y.split_off(n))?;
    Ok((y, w))
}

/// Integrates learning over `[0, T_train]`, sampling every `sample_dt`.
///
/// `sample_dt` must divide `t_s`, so every stimulus switch is a sample time
/// and integration restarts there.
pub fn integrate_learning<T: Scalar>(
    cfg: &NetworkConfig<T>,
    schedule: &StimulusSchedule<T>,
    ics: &InitialConditions<T>,
    sample_dt: T,
    integrator: Integrator,
) -> Result<WeightTrajectory<T>> {
    cfg.validate()?;
    integrator.validate()?;
    check_dim(cfg.n, schedule.training_set.n())?;
    check_dim(cfg.n, ics.x0.len())?;
    check_dim(cfg.n, ics.w0.n())?;
    if !(sample_dt > T::zero()) {
        return Err(Error::Config("sample_dt must be positive".into()));
    }
    let per_window = (cfg.t_s / sample_dt).f64();
    if (per_window - per_window.round()).abs() > 1e-9 * per_window.max(1.0) || per_window.round() < 1.0 {
        return Err(Error::Config(format!(
            "sample_dt = {sample_dt} must divide t_s = {}",
            cfg.t_s
        )));
    }
    let count = (cfg.t_train.f64() / sample_dt.f64() + 1e-9).floor() as usize;
    let y: Vec<T> = ics.x0.iter().chain(ics.w0.entries()).copied().collect();
    let (sample_times, snapshots, x_samples) =
        sample_learning(cfg, schedule, integrator, T::zero(), y, sample_dt, count)?;
    Ok(WeightTrajectory {
        sample_dt,
        sample_times,
        snapshots,
        x_samples: Some(x_samples),
        provenance: Some(Provenance {
            cfg: cfg.clone(),
            training_set: schedule.training_set.clone(),
            ic_seed: ics.seed,
            integrator,
        }),
    })
}

type Samples<T> = (Vec<T>, Vec<WeightMatrix<T>>, Vec<Vec<T>>);

/// Integrates from state `y` at `t_start` through `count` steps of
/// `sample_dt`, recording every step. One Dormand–Prince stepper is reused
/// within each exposure window and reset at each stimulus switch.
fn sample_learning<T: Scalar>(
    cfg: &NetworkConfig<T>,
    schedule: &StimulusSchedule<T>,
    integrator: Integrator,
    t_start: T,
    mut y: Vec<T>,
    sample_dt: T,
    count: usize,
) -> Result<Samples<T>> {
    let n = cfg.n;
    let dt = sample_dt.f64();
    let mut sample_times = Vec::with_capacity(count + 1);
    let mut snapshots = Vec::with_capacity(count + 1);
    let mut x_samples = Vec::with_capacity(count + 1);
    let record = |y: &[T], st: &mut Vec<WeightMatrix<T>>, xs: &mut Vec<Vec<T>>| -> Result<()> {
        xs.push(y[..n].to_vec());
        st.push(WeightMatrix::from_entries(n, y[n..].to_vec())?);
        Ok(())
    };
    sample_times.push(t_start);
    record(&y, &mut snapshots, &mut x_samples)?;

    let mut dp = match integrator {
        Integrator::Adaptive { rtol, atol } => Some(DormandPrince::new(y.len(), rtol, atol)),
        Integrator::FixedRk4 { .. } => None,
    };
    let mut sys = LearningSystem {
        cfg,
        input: schedule.stimulus_at(t_start)?,
    };
    let mut next_switch = schedule.next_switch_after(t_start);
    for k in 0..count {
        let t0 = t_start + T::of(k as f64 * dt);
        let t1 = t_start + T::of((k + 1) as f64 * dt);
        if (t0 - next_switch).abs() <= T::of(1e-9 * dt) {
            sys.input = schedule.stimulus_at(next_switch)?;
            next_switch = schedule.next_switch_after(next_switch);
            if let Some(dp) = dp.as_mut() {
                dp.reset();
            }
        }
        match dp.as_mut() {
            Some(dp) => {
                let mut t = t0;
                while t < t1 {
                    dp.step(&sys, &mut t, &mut y, t1)?;
                }
            }
            None => integrate(&sys, integrator, t0, &mut y, t1)?,
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { t: t1.f64() });
        }
        sample_times.push(t1);
        record(&y, &mut snapshots, &mut x_samples)?;
    }
    Ok((sample_times, snapshots, x_samples))
}

/// Stopping rule for retrieval runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceSettings {
    /// Converged once `‖u(x)‖∞` drops below this.
    pub tol: f64,
    /// Retrieval-time budget.
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            t_max: 500.0,
            rtol: 1e-9,
            atol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome<T> {
    Converged(Vec<T>),
    Unresolved,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceResult<T> {
    pub outcome: Outcome<T>,
    /// Retrieval time at termination.
    pub elapsed: T,
    /// `‖u‖∞` at termination.
    pub final_speed: T,
}

impl<T> ConvergenceResult<T> {
    pub fn location(&self) -> Option<&[T]> {
        match &self.outcome {
            Outcome::Converged(x) => Some(x),
            Outcome::Unresolved => None,
        }
    }
}

/// Integrates the retrieval field from `x0` until the speed drops below
/// `settings.tol` or the time budget runs out.
pub fn converge_to_attractor<T: Scalar>(
    x0: &[T],
    w: &WeightMatrix<T>,
    cfg: &NetworkConfig<T>,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceResult<T>> {
    check_dim(cfg.n, x0.len())?;
    converge_in_field(&RetrievalField::new(w, cfg)?, x0, settings)
}

/// [`converge_to_attractor`] on a prepared field.
pub fn converge_in_field<T: Scalar>(
    field: &RetrievalField<T>,
    x0: &[T],
    settings: &ConvergenceSettings,
) -> Result<ConvergenceResult<T>> {
    if !(settings.tol > 0.0 && settings.t_max > 0.0) {
        return Err(Error::Argument("tol and t_max must be positive".into()));
    }
    let tol = T::of(settings.tol);
    let t_max = T::of(settings.t_max);
    let mut x = x0.to_vec();
    let mut u = field.eval(&x);
    let mut speed = norm_inf(&u);
    let mut t = T::zero();
    let mut dp = DormandPrince::new(x.len(), settings.rtol, settings.atol);
    while speed >= tol {
        if t >= t_max {
            return Ok(ConvergenceResult {
                outcome: Outcome::Unresolved,
                elapsed: t,
                final_speed: speed,
            });
        }
        dp.step(field, &mut t, &mut x, t_max)?;
        field.eval_into(&x, &mut u);
        speed = norm_inf(&u);
        if !speed.is_finite() {
            return Err(Error::Blowup { t: t.f64() });
        }
    }
    Ok(ConvergenceResult {
        outcome: Outcome::Converged(x),
        elapsed: t,
        final_speed: speed,
    })
}

/// Period of the weight oscillation over samples with `t >= t_from`: lag of
/// the highest peak, past the first minimum, of the summed
/// autocorrelation of the differenced weight series, refined by a
/// parabola through the peak and its neighbours. Differencing removes the
/// slow drift of the weights.
pub fn weight_period<T: Scalar>(traj: &WeightTrajectory<T>, t_from: T) -> Option<f64> {
    let start = traj.sample_times.iter().position(|&t| t >= t_from)?;
    if traj.len() - start < 9 {
        return None;
    }
    let len = traj.len() - start - 1;
    let m = traj.snapshots[0].len();
    let mut series = vec![0.0; len * m];
    for (k, pair) in traj.snapshots[start..].windows(2).enumerate() {
        for (e, (&a, &b)) in pair[0].entries().iter().zip(pair[1].entries()).enumerate() {
            series[e * len + k] = (b - a).f64();
        }
    }
    for s in series.chunks_mut(len) {
        let mean = s.iter().sum::<f64>() / len as f64;
        s.iter_mut().for_each(|v| *v -= mean);
    }
    let max_lag = len / 2;
    let acf: Vec<f64> = (0..=max_lag)
        .map(|lag| {
            series
                .chunks(len)
                .map(|s| s[..len - lag].iter().zip(&s[lag..]).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / (len - lag) as f64
        })
        .collect();
    let first_min = (1..max_lag).find(|&l| acf[l] <= acf[l - 1] && acf[l] <= acf[l + 1])?;
    let peak = (first_min..max_lag).max_by(|&a, &b| acf[a].partial_cmp(&acf[b]).unwrap())?;
    if peak == 0 || peak >= max_lag {
        return None;
    }
    let (y0, y1, y2) = (acf[peak - 1], acf[peak], acf[peak + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    let shift = if denom != 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
    Some((peak as f64 + shift) * traj.sample_dt.f64())
}
