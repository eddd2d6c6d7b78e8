use super::{lyapunov_value, LmiCertificate, SlowSystem};
use crate::ode::{self, OdeError, OdeOptions};

/// Result of following one perturbed slow-system trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageTrace {
    pub initial: f64,
    pub last: f64,
    /// Largest increase between consecutive samples (0 if none).
    pub max_increase: f64,
    pub samples: usize,
}

/// Integrates the slow system from `x_bar + dx0` for `t_end` seconds and
/// evaluates the certificate's storage function after every accepted step
/// and on a uniform grid of `grid` points in between.
pub fn storage_trace(
    sys: &SlowSystem<'_>,
    cert: &LmiCertificate,
    x_bar: &[f64],
    dx0: &[f64],
    t_end: f64,
    grid: usize,
) -> Result<StorageTrace, OdeError> {
    let value = |x: &[f64]| {
        lyapunov_value(
            &cert.p_theta,
            &cert.d_v,
            sys.blocks.tau_v,
            sys.ctl,
            x,
            x_bar,
        )
    };
    let mut y: Vec<f64> = x_bar.iter().zip(dx0).map(|(a, b)| a + b).collect();
    let initial = value(&y);
    let mut last = initial;
    let mut max_increase: f64 = 0.0;
    let mut samples = 1;
    let mut next = 1usize;
    let mut scratch = vec![0.0; y.len()];
    let opts = OdeOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-13,
        ..OdeOptions::default()
    };
    ode::integrate(
        |_, x, dx| sys.rhs(x, dx),
        0.0,
        t_end,
        &mut y,
        &opts,
        |step| -> Result<(), OdeError> {
            let mut push = |s: f64| {
                max_increase = max_increase.max(s - last);
                last = s;
                samples += 1;
            };
            while next <= grid {
                let t = t_end * next as f64 / grid as f64;
                if t > step.t1 {
                    break;
                }
                step.interpolate(t, &mut scratch);
                push(value(&scratch));
                next += 1;
            }
            push(value(step.y1));
            Ok(())
        },
    )?;
    Ok(StorageTrace {
        initial,
        last,
        max_increase,
        samples,
    })
}
