//! Per-IBR control laws: frequency droop, legacy voltage droop, the
//! tanh-saturated leaky integral voltage controller and the distributed
//! primal-dual optimizer that supplies its setpoint.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("dimension mismatch: expected {want}, got {got}")]
    Dimension { want: usize, got: usize },
    #[error("invalid controller parameters:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// Per-IBR ratings, droop gains and voltage limits (p.u.).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrParams {
    pub s_rated: f64,
    /// Frequency droop, rad/s per p.u. utilisation.
    pub m_omega: f64,
    /// Voltage droop (legacy mode), p.u. voltage per p.u. utilisation.
    pub m_v: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl IbrParams {
    pub fn v_star(&self) -> f64 {
        0.5 * (self.v_max + self.v_min)
    }

    pub fn delta(&self) -> f64 {
        0.5 * (self.v_max - self.v_min)
    }

    pub fn with_limits(mut self, v_min: f64, v_max: f64) -> Self {
        self.v_min = v_min;
        self.v_max = v_max;
        self
    }

    fn issues(&self, idx: usize, out: &mut Vec<String>) {
        let i = idx + 1;
        if !(self.s_rated > 0.0 && self.s_rated.is_finite()) {
            out.push(format!(
                "IBR {i}: S_rated must be positive, got {}",
                self.s_rated
            ));
        }
        if !(self.v_min < self.v_max) || !self.v_min.is_finite() || !self.v_max.is_finite() {
            out.push(format!(
                "IBR {i}: need V_min < V_max, got ({}, {})",
                self.v_min, self.v_max
            ));
        }
        if !(self.m_omega >= 0.0) || !(self.m_v >= 0.0) {
            out.push(format!("IBR {i}: droop gains must be non-negative"));
        }
    }
}

/// Gains shared by every IBR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub tau_omega: f64,
    pub tau_v: f64,
    pub tau_p: f64,
    pub tau_d: f64,
    pub beta: f64,
    /// Consensus gain on the primal variable.
    pub k: f64,
}

impl ControlGains {
    fn issues(&self, out: &mut Vec<String>) {
        for (name, t) in [
            ("tau_omega", self.tau_omega),
            ("tau_v", self.tau_v),
            ("tau_p", self.tau_p),
            ("tau_d", self.tau_d),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                out.push(format!("{name} must be positive, got {t}"));
            }
        }
        if !(self.beta >= 0.0) {
            out.push(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.k > 0.0) {
            out.push(format!("k must be positive, got {}", self.k));
        }
    }
}

/// Full controller configuration for `n` IBRs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSet {
    pub ibrs: Vec<IbrParams>,
    pub gains: ControlGains,
    /// Nominal voltage used by the legacy droop law, p.u.
    pub v_nom: f64,
}

impl ControllerSet {
    pub fn n(&self) -> usize {
        self.ibrs.len()
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let mut out = Vec::new();
        for (i, p) in self.ibrs.iter().enumerate() {
            p.issues(i, &mut out);
        }
        self.gains.issues(&mut out);
        if out.is_empty() {
            Ok(())
        } else {
            Err(ControllerError::Invalid(out))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Legacy frequency and voltage droop.
    #[default]
    Droop,
    /// Frequency droop plus the leaky integral voltage controller and the
    /// primal-dual optimizer.
    Proposed,
}

/// Dynamic states of every IBR.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub zeta: Vec<f64>,
    pub mode: Mode,
}

impl ControllerState {
    pub fn flat(n: usize, mode: Mode) -> Self {
        Self {
            theta: vec![0.0; n],
            omega: vec![0.0; n],
            v: vec![0.0; n],
            lambda: vec![0.0; n],
            zeta: vec![0.0; n],
            mode,
        }
    }

    /// Terminal voltages implied by the integrator states.
    pub fn voltages(&self, ctl: &ControllerSet) -> Vec<f64> {
        self.v
            .iter()
            .zip(&ctl.ibrs)
            .map(|(&v, p)| match self.mode {
                Mode::Droop => ctl.v_nom + v,
                Mode::Proposed => voltage_output(p, v),
            })
            .collect()
    }
}

/// Saturated voltage setpoint `V* + Δ tanh(v/Δ)`, strictly inside the limits.
pub fn voltage_output(p: &IbrParams, v: f64) -> f64 {
    let d = p.delta();
    p.v_star() + d * (v / d).tanh()
}

/// Integrator state producing `voltage`, clamped so the state stays finite
/// when the voltage lies on or outside the limits.
pub fn state_for_voltage(p: &IbrParams, voltage: f64) -> f64 {
    let d = p.delta();
    let x = ((voltage - p.v_star()) / d).clamp(-0.999, 0.999);
    d * x.atanh()
}

/// Anti-wind-up leakage coefficient: `|v/Δ| - 3` beyond `3Δ`, zero inside.
pub fn leakage(p: &IbrParams, v: f64) -> f64 {
    let r = (v / p.delta()).abs();
    if r > 3.0 {
        r - 3.0
    } else {
        0.0
    }
}

/// `d(ρ(v) v)/dv`, using the outward one-sided value at the kink `|v| = 3Δ`.
pub fn leakage_term_derivative(p: &IbrParams, v: f64) -> f64 {
    let r = (v / p.delta()).abs();
    if r >= 3.0 {
        2.0 * r - 3.0
    } else {
        0.0
    }
}

/// Right-hand side of the leaky integrator before division by `τ_v`.
pub fn integrator_rhs(p: &IbrParams, beta: f64, v: f64, lambda: f64, q: f64) -> f64 {
    let d = p.delta();
    p.v_star() * (lambda - q / p.s_rated) - beta * d * (v / d).tanh() - leakage(p, v) * v
}

/// Droop right-hand sides `(dΩ, dv)` before division by `τ_Ω`, `τ_v`.
pub fn droop_rhs(p: &IbrParams, omega: f64, v: f64, active: f64, reactive: f64) -> (f64, f64) {
    (
        -omega - p.m_omega * active / p.s_rated,
        -v - p.m_v * reactive / p.s_rated,
    )
}

fn check_dims(n: usize, xs: &[&[f64]]) -> Result<(), ControllerError> {
    for x in xs {
        if x.len() != n {
            return Err(ControllerError::Dimension {
                want: n,
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// `out = L x`
fn lap_mul(laplacian: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        out[i] = (0..n).map(|j| laplacian[(i, j)] * x[j]).sum();
    }
}

/// Primal-dual right-hand sides `(dλ, dζ)` before division by `τ_p`, `τ_d`.
pub fn primal_dual_rhs(
    laplacian: &DMatrix<f64>,
    k: f64,
    lambda: &[f64],
    zeta: &[f64],
    q_ratio: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ControllerError> {
    let n = laplacian.nrows();
    check_dims(n, &[lambda, zeta, q_ratio])?;
    let mut dl = vec![0.0; n];
    let mut dz = vec![0.0; n];
    primal_dual_rhs_into(laplacian, k, lambda, zeta, q_ratio, &mut dl, &mut dz);
    Ok((dl, dz))
}

pub(crate) fn primal_dual_rhs_into(
    laplacian: &DMatrix<f64>,
    k: f64,
    lambda: &[f64],
    zeta: &[f64],
    q_ratio: &[f64],
    dl: &mut [f64],
    dz: &mut [f64],
) {
    let n = lambda.len();
    let mut lz = vec![0.0; n];
    lap_mul(laplacian, zeta, &mut lz);
    lap_mul(laplacian, lambda, dz);
    for i in 0..n {
        dl[i] = q_ratio[i] - lambda[i] - lz[i] - k * dz[i];
    }
}

/// Residuals of the optimality conditions of the sharing problem:
/// stationarity `λ - Q/S + Lζ + kLλ` and consensus `Lλ`.
pub fn kkt_residual(
    laplacian: &DMatrix<f64>,
    k: f64,
    lambda: &[f64],
    zeta: &[f64],
    q_ratio: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ControllerError> {
    let (dl, dz) = primal_dual_rhs(laplacian, k, lambda, zeta, q_ratio)?;
    Ok((dl.into_iter().map(|x| -x).collect(), dz))
}
