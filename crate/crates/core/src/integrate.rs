//! Explicit Runge–Kutta integrators: adaptive Dormand–Prince 5(4) and a
//! fixed-step classical RK4.
//!
//! Callers that drive discontinuous systems integrate piecewise: every call to
//! [`integrate`] ends exactly on the requested end time, so no step straddles
//! a switch when the switch times are passed as segment ends.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An autonomous or non-autonomous first-order system `y' = f(t, y)`.
pub trait OdeSystem<T> {
    fn dim(&self) -> usize;
    fn eval(&self, t: T, y: &[T], dy: &mut [T]);
}

/// Integration method and tolerances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    /// Dormand–Prince 5(4) with mixed absolute/relative error control.
    Adaptive { rtol: f64, atol: f64 },
    /// Classical RK4 with constant step `dt`.
    FixedRk4 { dt: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Adaptive { rtol: 1e-9, atol: 1e-9 }
    }
}

impl Integrator {
    pub fn fixed_default() -> Self {
        Integrator::FixedRk4 { dt: 0.005 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Integrator::Adaptive { rtol, atol } => rtol > 0.0 && atol > 0.0,
            Integrator::FixedRk4 { dt } => dt > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid integrator settings {self:?}")))
        }
    }
}

// Dormand–Prince tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order weights equal the last row of A; E = b5 - b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One adaptive Dormand–Prince integrator instance with reusable workspace.
pub struct DormandPrince<T> {
    rtol: T,
    atol: T,
    /// Step size proposed for the next step.
    pub h: T,
    k: [Vec<T>; 7],
    tmp: Vec<T>,
    y_new: Vec<T>,
    fsal_valid: bool,
}

impl<T: Scalar> DormandPrince<T> {
    pub fn new(dim: usize, rtol: f64, atol: f64) -> Self {
        Self {
            rtol: T::of(rtol),
            atol: T::of(atol),
            h: T::zero(),
            k: std::array::from_fn(|_| vec![T::zero(); dim]),
            tmp: vec![T::zero(); dim],
            y_new: vec![T::zero(); dim],
            fsal_valid: false,
        }
    }

    /// Forgets cached derivative and step size; call after the system or the
    /// state changes discontinuously.
    pub fn reset(&mut self) {
        self.fsal_valid = false;
        self.h = T::zero();
    }

    fn initial_step<S: OdeSystem<T>>(&mut self, sys: &S, t: T, y: &[T], span: T) -> T {
        // Hairer–Nørsett–Wanner starting-step heuristic.
        let n = y.len();
        let sc: Vec<T> = y.iter().map(|&v| self.atol + self.rtol * v.abs()).collect();
        let rms = |v: &[T]| -> T {
            if n == 0 {
                return T::zero();
            }
            (v.iter().zip(&sc).map(|(&a, &s)| (a / s) * (a / s)).sum::<T>() / T::of(n as f64)).sqrt()
        };
        let d0 = rms(y);
        let d1 = rms(&self.k[0]);
        let h0 = if d0 < T::of(1e-5) || d1 < T::of(1e-5) {
            T::of(1e-6)
        } else {
            T::of(0.01) * d0 / d1
        };
        let h0 = h0.min(span);
        for i in 0..n {
            self.tmp[i] = y[i] + h0 * self.k[0][i];
        }
        let mut f1 = vec![T::zero(); n];
        sys.eval(t + h0, &self.tmp, &mut f1);
        let diff: Vec<T> = f1.iter().zip(&self.k[0]).map(|(&a, &b)| (a - b) / h0).collect();
        let d2 = rms(&diff);
        let m = d1.max(d2);
        let h1 = if m <= T::of(1e-15) {
            (h0 * T::of(1e-3)).max(T::of(1e-6))
        } else {
            (T::of(0.01) / m).powf(T::of(0.2))
        };
        (T::of(100.0) * h0).min(h1).min(span)
    }

    /// Takes one accepted step from `(t, y)`, never going past `t_end`.
    pub fn step<S: OdeSystem<T>>(&mut self, sys: &S, t: &mut T, y: &mut [T], t_end: T) -> Result<()> {
        let n = y.len();
        if !self.fsal_valid {
            sys.eval(*t, y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        let span = t_end - *t;
        if self.h <= T::zero() {
            self.h = self.initial_step(sys, *t, y, span);
        }
        let min_h = T::of(1e-14) * (T::one() + t.abs());
        let mut rejections = 0;
        loop {
            let mut h = self.h.min(span);
            let last = h >= span;
            if last {
                h = span;
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = T::zero();
                    for (r, a) in A[s].iter().enumerate().take(s) {
                        if *a != 0.0 {
                            acc += T::of(*a) * self.k[r][i];
                        }
                    }
                    self.tmp[i] = y[i] + h * acc;
                }
                let ts = if s == 6 && last { t_end } else { *t + T::of(C[s]) * h };
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                sys.eval(ts, &self.tmp, &mut tail[0]);
            }
            // The stage-7 input is the 5th-order solution.
            self.y_new.copy_from_slice(&self.tmp);
            let mut err = T::zero();
            for i in 0..n {
                let mut e = T::zero();
                for (r, c) in E.iter().enumerate() {
                    if *c != 0.0 {
                        e += T::of(*c) * self.k[r][i];
                    }
                }
                e = e * h;
                let sc = self.atol + self.rtol * y[i].abs().max(self.y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = if n > 0 {
                (err / T::of(n as f64)).sqrt()
            } else {
                T::zero()
            };
            if !err.is_finite() || self.y_new.iter().any(|v| !v.is_finite()) {
                self.h = h * T::of(0.25);
                rejections += 1;
                if self.h < min_h || rejections > 50 {
                    return Err(Error::Blowup { t: t.f64() });
                }
                continue;
            }
            let fac = if err == T::zero() {
                T::of(5.0)
            } else {
                (T::of(0.9) * err.powf(T::of(-0.2))).max(T::of(0.2)).min(T::of(5.0))
            };
            if err <= T::one() {
                *t = if last { t_end } else { *t + h };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                // A clipped final step does not shrink the next proposal.
                self.h = if last { self.h.max(h * fac) } else { h * fac };
                return Ok(());
            }
            self.h = h * fac.min(T::one());
            rejections += 1;
            if self.h < min_h || rejections > 100 {
                return Err(Error::Blowup { t: t.f64() });
            }
        }
    }
}

/// Classical RK4 step of size `h`.
pub fn rk4_step<T: Scalar, S: OdeSystem<T>>(sys: &S, t: T, y: &mut [T], h: T, work: &mut [Vec<T>; 5]) {
    let n = y.len();
    let half = T::of(0.5);
    let [k1, k2, k3, k4, tmp] = work;
    sys.eval(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + half * h * k1[i];
    }
    sys.eval(t + half * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + half * h * k2[i];
    }
    sys.eval(t + half * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    sys.eval(t + h, tmp, k4);
    let sixth = T::one() / T::of(6.0);
    for i in 0..n {
        y[i] += h * sixth * (k1[i] + T::of(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
}

/// Integrates `y` from `t0` to exactly `t1` (`t1 >= t0`).
pub fn integrate<T: Scalar, S: OdeSystem<T>>(sys: &S, method: Integrator, t0: T, y: &mut [T], t1: T) -> Result<()> {
    if t1 <= t0 {
        return Ok(());
    }
    match method {
        Integrator::Adaptive { rtol, atol } => {
            let mut dp = DormandPrince::new(y.len(), rtol, atol);
            let mut t = t0;
            while t < t1 {
                dp.step(sys, &mut t, y, t1)?;
            }
            Ok(())
        }
        Integrator::FixedRk4 { dt } => {
            let span = (t1 - t0).f64();
            let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
            let h = (t1 - t0) / T::of(steps as f64);
            let mut work: [Vec<T>; 5] = std::array::from_fn(|_| vec![T::zero(); y.len()]);
            for s in 0..steps {
                let t = t0 + h * T::of(s as f64);
                rk4_step(sys, t, y, h, &mut work);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Blowup { t: (t + h).f64() });
                }
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem<f64> for Decay {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
            dy[1] = y[0] - 2.0 * y[1];
        }
    }

    struct Blow;
    impl OdeSystem<f64> for Blow {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[0] * y[0];
        }
    }

    fn exact(t: f64) -> [f64; 2] {
        [(-t).exp(), (-t).exp() - (-2.0 * t).exp()]
    }

    #[test]
    fn adaptive_hits_end_time_accurately() {
        let mut y = [1.0, 0.0];
        integrate(&Decay, Integrator::default(), 0.0, &mut y, 3.7).unwrap();
        let e = exact(3.7);
        assert!((y[0] - e[0]).abs() < 1e-9 && (y[1] - e[1]).abs() < 1e-9);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let run = |dt| {
            let mut y = [1.0, 0.0];
            integrate(&Decay, Integrator::FixedRk4 { dt }, 0.0, &mut y, 2.0).unwrap();
            (y[1] - exact(2.0)[1]).abs()
        };
        let (e1, e2) = (run(0.1), run(0.05));
        let order = (e1 / e2).log2();
        assert!((order - 4.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn blowup_is_reported() {
        let mut y = [1.0];
        let err = integrate(&Blow, Integrator::default(), 0.0, &mut y, 2.0).unwrap_err();
        match err {
            Error::Blowup { t } => assert!(t > 0.9 && t <= 1.0 + 1e-6),
            e => panic!("unexpected {e}"),
        }
        let mut y = [1.0];
        assert!(integrate(&Blow, Integrator::FixedRk4 { dt: 0.01 }, 0.0, &mut y, 2.0).is_err());
    }
}
