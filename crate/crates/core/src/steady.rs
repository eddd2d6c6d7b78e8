//! Direct solution of the closed-loop equilibrium in proposed mode and the
//! checks of its sharing and containment properties.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::{
    integrator_rhs, leakage, leakage_term_derivative, voltage_output, ControllerSet,
    ControllerState, Mode,
};
use crate::graph::CommGraph;
use crate::network::ReducedNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyError {
    #[error("dimension mismatch: expected {want}, got {got}")]
    Dimension { want: usize, got: usize },
    #[error(
        "Newton did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Newton Jacobian at iteration {iteration}")]
    Singular { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Convergence threshold on the max-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Use a central-difference Jacobian instead of the analytic one.
    pub finite_difference: bool,
    /// Restarts from perturbed guesses after stagnation.
    pub retries: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            finite_difference: false,
            retries: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    /// Angles relative to IBR 1.
    pub theta: Vec<f64>,
    /// Common frequency deviation, rad/s.
    pub omega: f64,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Dual variables; only defined up to a uniform shift, pinned by `1ᵀζ`.
    pub zeta: Vec<f64>,
    pub voltage: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub omega_syn: f64,
    /// Mean active utilisation `1ᵀS⁻¹P / n`.
    pub alpha_p: f64,
    /// Mean reactive utilisation `1ᵀS⁻¹Q / n`.
    pub alpha_q: f64,
    /// 0-based indices with `|v_i| > 3Δ_i`.
    pub saturated: Vec<usize>,
    pub iterations: usize,
    pub residual: f64,
}

impl Equilibrium {
    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn p_ratio(&self, ctl: &ControllerSet) -> Vec<f64> {
        self.p
            .iter()
            .zip(&ctl.ibrs)
            .map(|(p, c)| p / c.s_rated)
            .collect()
    }

    pub fn q_ratio(&self, ctl: &ControllerSet) -> Vec<f64> {
        self.q
            .iter()
            .zip(&ctl.ibrs)
            .map(|(q, c)| q / c.s_rated)
            .collect()
    }

    /// Simulator state at this equilibrium (time origin).
    pub fn to_state(&self) -> ControllerState {
        let n = self.n();
        ControllerState {
            theta: self.theta.clone(),
            omega: vec![self.omega; n],
            v: self.v.clone(),
            lambda: self.lambda.clone(),
            zeta: self.zeta.clone(),
            mode: Mode::Proposed,
        }
    }
}

struct System<'a> {
    net: &'a ReducedNetwork,
    lap: DMatrix<f64>,
    ctl: &'a ControllerSet,
    zeta_sum: f64,
}

/// Unknowns: `θ_2..θ_n`, `Ω`, `v`, `λ`, `ζ` (4n entries).
impl System<'_> {
    fn n(&self) -> usize {
        self.ctl.n()
    }

    fn split<'x>(&self, x: &'x [f64]) -> (Vec<f64>, f64, &'x [f64], &'x [f64], &'x [f64]) {
        let n = self.n();
        let mut theta = vec![0.0; n];
        theta[1..].copy_from_slice(&x[..n - 1]);
        (
            theta,
            x[n - 1],
            &x[n..2 * n],
            &x[2 * n..3 * n],
            &x[3 * n..4 * n],
        )
    }

    fn voltages(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.ctl.ibrs)
            .map(|(&v, p)| voltage_output(p, v))
            .collect()
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (theta, omega, v, lam, zeta) = self.split(x);
        let volt = self.voltages(v);
        let (p, q) = self.net.power_flow(&theta, &volt);
        let g = &self.ctl.gains;
        let lz = &self.lap * DVector::from_column_slice(zeta);
        let ll = &self.lap * DVector::from_column_slice(lam);
        let mut f = vec![0.0; 4 * n];
        for (i, c) in self.ctl.ibrs.iter().enumerate() {
            f[i] = -omega - c.m_omega * p[i] / c.s_rated;
            f[n + i] = integrator_rhs(c, g.beta, v[i], lam[i], q[i]);
            f[2 * n + i] = q[i] / c.s_rated - lam[i] - lz[i] - g.k * ll[i];
        }
        for i in 0..n - 1 {
            f[3 * n + i] = ll[i];
        }
        f[4 * n - 1] = zeta.iter().sum::<f64>() - self.zeta_sum;
        f
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let (theta, _, v, _, _) = self.split(x);
        let volt = self.voltages(v);
        let lin = self.net.jacobians(&theta, &volt);
        let g = &self.ctl.gains;
        let dvdv: Vec<f64> = v
            .iter()
            .zip(&self.ctl.ibrs)
            .map(|(&v, c)| 1.0 - (v / c.delta()).tanh().powi(2))
            .collect();
        let mut j = DMatrix::zeros(4 * n, 4 * n);
        for (i, c) in self.ctl.ibrs.iter().enumerate() {
            let s = c.s_rated;
            for k in 1..n {
                j[(i, k - 1)] = -c.m_omega / s * lin.j_theta_p[(i, k)];
                j[(n + i, k - 1)] = -c.v_star() / s * lin.j_theta_q[(i, k)];
                j[(2 * n + i, k - 1)] = lin.j_theta_q[(i, k)] / s;
            }
            j[(i, n - 1)] = -1.0;
            for k in 0..n {
                j[(i, n + k)] = -c.m_omega / s * lin.j_v_p[(i, k)] * dvdv[k];
                j[(n + i, n + k)] = -c.v_star() / s * lin.j_v_q[(i, k)] * dvdv[k];
                j[(2 * n + i, n + k)] = lin.j_v_q[(i, k)] / s * dvdv[k];
                j[(2 * n + i, 2 * n + k)] = -g.k * self.lap[(i, k)];
                j[(2 * n + i, 3 * n + k)] = -self.lap[(i, k)];
            }
            j[(n + i, n + i)] -= g.beta * dvdv[i] + leakage_term_derivative(c, v[i]);
            j[(n + i, 2 * n + i)] = c.v_star();
            j[(2 * n + i, 2 * n + i)] -= 1.0;
        }
        for i in 0..n - 1 {
            for k in 0..n {
                j[(3 * n + i, 2 * n + k)] = self.lap[(i, k)];
            }
        }
        for k in 0..n {
            j[(4 * n - 1, 3 * n + k)] = 1.0;
        }
        j
    }

    fn fd_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        let mut j = DMatrix::zeros(m, m);
        let mut xp = x.to_vec();
        for k in 0..m {
            let h = 1e-6 * x[k].abs().max(1e-3);
            xp[k] = x[k] + h;
            let fp = self.residual(&xp);
            xp[k] = x[k] - h;
            let fm = self.residual(&xp);
            xp[k] = x[k];
            for i in 0..m {
                j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        j
    }
}

fn max_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn newton(
    sys: &System<'_>,
    x: &mut [f64],
    opts: &SteadyOptions,
) -> Result<(usize, f64), SteadyError> {
    let mut f = sys.residual(x);
    let mut norm = max_norm(&f);
    for it in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok((it, norm));
        }
        let j = if opts.finite_difference {
            sys.fd_jacobian(x)
        } else {
            sys.jacobian(x)
        };
        let dx = j
            .lu()
            .solve(&DVector::from_vec(f.clone()))
            .ok_or(SteadyError::Singular { iteration: it })?;
        if dx.iter().any(|d| !d.is_finite()) {
            return Err(SteadyError::Singular { iteration: it });
        }
        // Backtracking on the residual norm.
        let mut t = 1.0;
        let trial = loop {
            let xt: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a - t * d).collect();
            let ft = sys.residual(&xt);
            let nt = max_norm(&ft);
            if nt.is_finite() && (nt < (1.0 - 1e-4 * t) * norm || nt <= opts.tol) {
                break Some((xt, ft, nt));
            }
            t *= 0.5;
            if t < 1e-10 {
                break None;
            }
        };
        match trial {
            Some((xt, ft, nt)) => {
                x.copy_from_slice(&xt);
                f = ft;
                norm = nt;
            }
            None => {
                return Err(SteadyError::NoConvergence {
                    iterations: it,
                    residual: norm,
                })
            }
        }
    }
    if norm <= opts.tol {
        Ok((opts.max_iter, norm))
    } else {
        Err(SteadyError::NoConvergence {
            iterations: opts.max_iter,
            residual: norm,
        })
    }
}

/// Solves for the proposed-mode equilibrium. The angle reference is IBR 1
/// and `1ᵀζ` is pinned to its value in `guess` (flat start when `None`:
/// zero angles, `V = V⋆`, `λ = ζ = 0`).
pub fn solve_equilibrium(
    net: &ReducedNetwork,
    graph: &CommGraph,
    ctl: &ControllerSet,
    omega_nom: f64,
    guess: Option<&ControllerState>,
    opts: &SteadyOptions,
) -> Result<Equilibrium, SteadyError> {
    let n = ctl.n();
    for got in [net.n(), graph.n()] {
        if got != n {
            return Err(SteadyError::Dimension { want: n, got });
        }
    }
    let flat = ControllerState::flat(n, Mode::Proposed);
    let g0 = guess.unwrap_or(&flat);
    for got in [g0.theta.len(), g0.v.len(), g0.lambda.len(), g0.zeta.len()] {
        if got != n {
            return Err(SteadyError::Dimension { want: n, got });
        }
    }
    let sys = System {
        net,
        lap: graph.laplacian(),
        ctl,
        zeta_sum: g0.zeta.iter().sum(),
    };
    let mut x0 = Vec::with_capacity(4 * n);
    x0.extend(g0.theta[1..].iter().map(|t| t - g0.theta[0]));
    x0.push(g0.omega.iter().sum::<f64>() / n as f64);
    x0.extend(&g0.v);
    x0.extend(&g0.lambda);
    x0.extend(&g0.zeta);

    let mut last = SteadyError::NoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    };
    for attempt in 0..=opts.retries {
        let mut x = x0.clone();
        if attempt > 0 {
            // Deterministic perturbation of the integrator states.
            let scale = 0.5 * attempt as f64;
            for (i, c) in ctl.ibrs.iter().enumerate() {
                let sign = if (i + attempt) % 2 == 0 { 1.0 } else { -1.0 };
                x[n + i] += sign * scale * c.delta();
            }
        }
        match newton(&sys, &mut x, opts) {
            Ok((iterations, residual)) => {
                return Ok(finish(&sys, &x, omega_nom, iterations, residual))
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn finish(
    sys: &System<'_>,
    x: &[f64],
    omega_nom: f64,
    iterations: usize,
    residual: f64,
) -> Equilibrium {
    let n = sys.n();
    let (theta, omega, v, lam, zeta) = sys.split(x);
    let voltage = sys.voltages(v);
    let (p, q) = sys.net.power_flow(&theta, &voltage);
    let ctl = sys.ctl;
    let alpha_p = p
        .iter()
        .zip(&ctl.ibrs)
        .map(|(p, c)| p / c.s_rated)
        .sum::<f64>()
        / n as f64;
    let alpha_q = q
        .iter()
        .zip(&ctl.ibrs)
        .map(|(q, c)| q / c.s_rated)
        .sum::<f64>()
        / n as f64;
    let saturated = v
        .iter()
        .zip(&ctl.ibrs)
        .enumerate()
        .filter(|(_, (v, c))| leakage(c, **v) > 0.0)
        .map(|(i, _)| i)
        .collect();
    Equilibrium {
        theta,
        omega,
        v: v.to_vec(),
        lambda: lam.to_vec(),
        zeta: zeta.to_vec(),
        voltage,
        p,
        q,
        omega_syn: omega_nom + omega,
        alpha_p,
        alpha_q,
        saturated,
        iterations,
        residual,
    }
}

/// Outcome of one property check for one IBR (or the whole network when
/// `ibr` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub property: u8,
    pub ibr: Option<usize>,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
    pub p_ratio_spread: f64,
    pub min_lower_margin: f64,
    pub min_upper_margin: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn property_passed(&self, k: u8) -> bool {
        self.checks
            .iter()
            .filter(|c| c.property == k)
            .all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,ibr,value,bound,pass\n");
        for c in &self.checks {
            let ibr = c.ibr.map_or("all".to_string(), |i| (i + 1).to_string());
            let _ = writeln!(
                s,
                "{},{},{:.12e},{:.12e},{}",
                c.property, ibr, c.value, c.bound, c.pass
            );
        }
        s
    }

    pub fn to_text(&self, eq: &Equilibrium, ctl: &ControllerSet) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "equilibrium: {} Newton iterations, residual {:.3e}",
            eq.iterations, eq.residual
        );
        let _ = writeln!(
            s,
            "omega_syn = {:.9} rad/s ({:.6} Hz), alpha_P = {:.9}, alpha_Q = {:.9}",
            eq.omega_syn,
            eq.omega_syn / (2.0 * std::f64::consts::PI),
            eq.alpha_p,
            eq.alpha_q
        );
        let sat: Vec<usize> = eq.saturated.iter().map(|i| i + 1).collect();
        let _ = writeln!(s, "saturated IBRs: {sat:?}");
        let _ = writeln!(
            s,
            "\n ibr        V        P/S        Q/S     lambda          v      rho"
        );
        let (pr, qr) = (eq.p_ratio(ctl), eq.q_ratio(ctl));
        for (i, c) in ctl.ibrs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:>4} {:>8.5} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>8.4}",
                i + 1,
                eq.voltage[i],
                pr[i],
                qr[i],
                eq.lambda[i],
                eq.v[i],
                leakage(c, eq.v[i])
            );
        }
        let names = [
            "",
            "frequency synchronisation (spread of P/S)",
            "voltage containment (margins)",
            "sharing, unsaturated IBRs",
            "sharing bound, saturated IBRs",
        ];
        s.push('\n');
        for k in 1..=4u8 {
            let n = self.checks.iter().filter(|c| c.property == k).count();
            let verdict = if n == 0 {
                "n/a"
            } else if self.property_passed(k) {
                "PASS"
            } else {
                "FAIL"
            };
            let _ = writeln!(s, "property {k} [{verdict}] {}", names[k as usize]);
        }
        let _ = writeln!(
            s,
            "  spread P/S = {:.3e}; margins lower {:.5}, upper {:.5}",
            self.p_ratio_spread, self.min_lower_margin, self.min_upper_margin
        );
        s
    }
}

/// Checks frequency synchronisation, containment and the two sharing
/// relations at a solved equilibrium, each to within `tol`.
pub fn verify_properties(eq: &Equilibrium, ctl: &ControllerSet, tol: f64) -> PropertyReport {
    let beta = ctl.gains.beta;
    let pr = eq.p_ratio(ctl);
    let qr = eq.q_ratio(ctl);
    let spread = pr.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - pr.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut checks = Vec::new();
    // Equal droop gains make P/S equal; otherwise m_i P_i / S_i is.
    let mw: Vec<f64> = ctl
        .ibrs
        .iter()
        .zip(&pr)
        .map(|(c, p)| c.m_omega * p)
        .collect();
    let mw_spread = mw.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - mw.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(PropertyCheck {
        property: 1,
        ibr: None,
        value: mw_spread,
        bound: tol,
        pass: mw_spread <= tol,
    });
    let (mut lo, mut hi) = (f64::INFINITY, f64::INFINITY);
    for (i, c) in ctl.ibrs.iter().enumerate() {
        let margin = (eq.voltage[i] - c.v_min).min(c.v_max - eq.voltage[i]);
        lo = lo.min(eq.voltage[i] - c.v_min);
        hi = hi.min(c.v_max - eq.voltage[i]);
        checks.push(PropertyCheck {
            property: 2,
            ibr: Some(i),
            value: margin,
            bound: 0.0,
            pass: margin > 0.0,
        });
    }
    for (i, c) in ctl.ibrs.iter().enumerate() {
        let err = (qr[i] - eq.alpha_q).abs();
        let base = beta * (1.0 - eq.voltage[i] / c.v_star()).abs();
        if eq.saturated.contains(&i) {
            let bound = base + leakage(c, eq.v[i]) * (eq.v[i] / c.v_star()).abs();
            checks.push(PropertyCheck {
                property: 4,
                ibr: Some(i),
                value: err,
                bound,
                pass: err <= bound + tol,
            });
        } else {
            checks.push(PropertyCheck {
                property: 3,
                ibr: Some(i),
                value: err,
                bound: base,
                pass: (err - base).abs() <= tol,
            });
        }
    }
    PropertyReport {
        checks,
        p_ratio_spread: spread,
        min_lower_margin: lo,
        min_upper_margin: hi,
    }
}
