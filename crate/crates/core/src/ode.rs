//! Dormand–Prince 5(4) integrator with step-size control and the standard
//! 4th-order dense output.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step size underflow (h = {h:e}) at t = {t}")]
    StepTooSmall { t: f64, h: f64 },
    #[error("exceeded {max} steps before t = {t}")]
    TooManySteps { t: f64, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// When set, take steps of exactly this size with no error control.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-7,
            abs_tol: 1e-9,
            max_step: f64::INFINITY,
            fixed_step: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl std::ops::AddAssign for OdeStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.evaluations += o.evaluations;
    }
}

/// An accepted step, with dense interpolation over `[t0, t1]`.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y1: &'a [f64],
    rcont: &'a [Vec<f64>; 5],
}

impl Step<'_> {
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = if h == 0.0 { 1.0 } else { (t - self.t0) / h };
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` in place.
///
/// `on_step` is called after every accepted step and may abort the run by
/// returning an error.
pub fn integrate<F, S, E>(
    mut f: F,
    t0: f64,
    t1: f64,
    y: &mut [f64],
    opts: &OdeOptions,
    mut on_step: S,
) -> Result<OdeStats, E>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: FnMut(&Step<'_>) -> Result<(), E>,
    E: From<OdeError>,
{
    let n = y.len();
    let mut stats = OdeStats::default();
    if t1 <= t0 {
        return Ok(stats);
    }
    let mut k = vec![vec![0.0; n]; 7];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut rcont: [Vec<f64>; 5] = Default::default();
    for r in rcont.iter_mut() {
        r.resize(n, 0.0);
    }

    f(t0, y, &mut k[0]);
    stats.evaluations += 1;
    let mut t = t0;
    let span = t1 - t0;
    let mut h = match opts.fixed_step {
        Some(h) => h,
        None => initial_step(&mut f, t0, y, &k[0], opts, &mut stats).min(opts.max_step),
    };
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps {
                t,
                max: opts.max_steps,
            }
            .into());
        }
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h.abs() <= 1e-14 * span.max(t.abs()) {
            return Err(OdeError::StepTooSmall { t, h }.into());
        }

        let stage = |ytmp: &mut [f64], k: &[Vec<f64>], coeffs: &[(usize, f64)]| {
            for i in 0..n {
                let mut acc = 0.0;
                for &(s, a) in coeffs {
                    acc += a * k[s][i];
                }
                ytmp[i] = y[i] + h * acc;
            }
        };
        stage(&mut ytmp, &k, &[(0, A21)]);
        f(t + C2 * h, &ytmp, &mut k[1]);
        stage(&mut ytmp, &k, &[(0, A31), (1, A32)]);
        f(t + C3 * h, &ytmp, &mut k[2]);
        stage(&mut ytmp, &k, &[(0, A41), (1, A42), (2, A43)]);
        f(t + C4 * h, &ytmp, &mut k[3]);
        stage(&mut ytmp, &k, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
        f(t + C5 * h, &ytmp, &mut k[4]);
        stage(
            &mut ytmp,
            &k,
            &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)],
        );
        f(t + h, &ytmp, &mut k[5]);
        stage(
            &mut ynew,
            &k,
            &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)],
        );
        f(t + h, &ynew, &mut k[6]);
        stats.evaluations += 6;

        if ynew.iter().any(|x| !x.is_finite()) {
            if opts.fixed_step.is_some() {
                return Err(OdeError::NonFinite { t }.into());
            }
            h *= 0.25;
            stats.rejected += 1;
            last_rejected = true;
            continue;
        }

        let err = if opts.fixed_step.is_some() {
            0.0
        } else {
            let mut acc = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k[0][i]
                        + E3 * k[2][i]
                        + E4 * k[3][i]
                        + E5 * k[4][i]
                        + E6 * k[5][i]
                        + E7 * k[6][i]);
                let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
                acc += (e / sc).powi(2);
            }
            (acc / n.max(1) as f64).sqrt()
        };

        if err <= 1.0 {
            for i in 0..n {
                let dy = ynew[i] - y[i];
                let bspl = h * k[0][i] - dy;
                rcont[0][i] = y[i];
                rcont[1][i] = dy;
                rcont[2][i] = bspl;
                rcont[3][i] = dy - h * k[6][i] - bspl;
                rcont[4][i] = h
                    * (D1 * k[0][i]
                        + D3 * k[2][i]
                        + D4 * k[3][i]
                        + D5 * k[4][i]
                        + D6 * k[5][i]
                        + D7 * k[6][i]);
            }
            let t_new = if last { t1 } else { t + h };
            stats.accepted += 1;
            on_step(&Step {
                t0: t,
                t1: t_new,
                y1: &ynew,
                rcont: &rcont,
            })?;
            y.copy_from_slice(&ynew);
            k.swap(0, 6);
            t = t_new;
            if last {
                return Ok(stats);
            }
            if opts.fixed_step.is_none() {
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h = (h * fac).min(opts.max_step);
            }
            last_rejected = false;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
}

fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y: &[f64],
    f0: &[f64],
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y
        .iter()
        .map(|v| opts.abs_tol + opts.rel_tol * v.abs())
        .collect();
    let norm = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1);
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let mut y = [1.0];
        let opts = OdeOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let stats = integrate::<_, _, OdeError>(
            |_, y, dy| dy[0] = -2.0 * y[0],
            0.0,
            3.0,
            &mut y,
            &opts,
            |_| Ok(()),
        )
        .unwrap();
        assert_relative_eq!(y[0], (-6.0f64).exp(), max_relative = 1e-8);
        assert!(stats.accepted > 5);
    }

    #[test]
    fn dense_output_tracks_harmonic_oscillator() {
        let mut y = [1.0, 0.0];
        let opts = OdeOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let mut worst: f64 = 0.0;
        integrate::<_, _, OdeError>(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            10.0,
            &mut y,
            &opts,
            |s| {
                let mut out = [0.0; 2];
                let tm = 0.5 * (s.t0 + s.t1);
                s.interpolate(tm, &mut out);
                worst = worst.max((out[0] - tm.cos()).abs());
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-7, "dense error {worst}");
        assert_relative_eq!(y[0], 10f64.cos(), epsilon = 1e-7);
    }

    #[test]
    fn fixed_step_count() {
        let mut y = [0.0];
        let opts = OdeOptions {
            fixed_step: Some(0.1),
            ..Default::default()
        };
        let stats = integrate::<_, _, OdeError>(
            |t, _, dy| dy[0] = t * t,
            0.0,
            1.0,
            &mut y,
            &opts,
            |_| Ok(()),
        )
        .unwrap();
        assert_eq!(stats.accepted, 10);
        assert_relative_eq!(y[0], 1.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut y = [1.0];
        let opts = OdeOptions {
            fixed_step: Some(0.5),
            ..Default::default()
        };
        let r = integrate::<_, _, OdeError>(
            |_, y, dy| dy[0] = y[0].powi(8),
            0.0,
            10.0,
            &mut y,
            &opts,
            |_| Ok(()),
        );
        assert!(matches!(r, Err(OdeError::NonFinite { .. })));
    }

    #[test]
    fn callback_can_abort() {
        #[derive(Debug)]
        enum E {
            Stop(f64),
            Ode,
        }
        impl From<OdeError> for E {
            fn from(_: OdeError) -> Self {
                E::Ode
            }
        }
        let mut y = [0.0];
        let r = integrate(
            |_, _, dy: &mut [f64]| dy[0] = 1.0,
            0.0,
            5.0,
            &mut y,
            &OdeOptions::default(),
            |s| {
                if s.y1[0] > 1.0 {
                    Err(E::Stop(s.t1))
                } else {
                    Ok(())
                }
            },
        );
        assert!(matches!(r, Err(E::Stop(t)) if t > 1.0));
    }
}
