//! Parameter selection heuristics and validation of user-supplied gains.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::controller::{ControlGains, ControllerSet, IbrParams};
use crate::graph::CommGraph;

/// Relative slack applied to the timescale-separation ratios so that sets
/// sitting exactly on a 10x boundary pass despite round-off.
const RATIO_SLACK: f64 = 1e-12;

/// Response-time window for the voltage controller, seconds.
pub const TAU_V_WINDOW: (f64, f64) = (1.0, 10.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TunerError {
    #[error("invalid tuning spec: {0}")]
    Invalid(String),
    #[error("no beta in (0, {cap}] meets the sharing budget {budget} and the stability check")]
    InfeasibleBeta { cap: f64, budget: f64 },
}

/// Design targets for [`tune`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningSpec {
    /// Maximum frequency deviation, p.u. of the nominal frequency.
    pub delta_f_max: f64,
    pub f_nom: f64,
    /// Maximum withstandable initial RoCoF, Hz/s.
    pub rocof_star: f64,
    pub tau_p: f64,
    /// Lower bound on `τ_d`; the rule `τ_d ≥ 10 τ_p` may raise it.
    pub tau_d_floor: f64,
    pub k_d: f64,
    /// Largest acceptable steady-state sharing error, p.u.
    pub beta_error_budget: f64,
    /// Starting (and largest) `β`.
    pub beta_cap: f64,
    pub v_nom: f64,
}

impl TuningSpec {
    /// Targets that reproduce the 220 V / 50 Hz laboratory set.
    pub fn lab_default() -> Self {
        Self {
            delta_f_max: 0.005,
            f_nom: 50.0,
            rocof_star: 2.5,
            tau_p: 0.01,
            tau_d_floor: 0.1,
            k_d: 10.0,
            beta_error_budget: 5e-4,
            beta_cap: 0.01,
            v_nom: 1.0,
        }
    }

    fn check(&self) -> Result<(), TunerError> {
        let named = [
            ("delta_f_max", self.delta_f_max),
            ("f_nom", self.f_nom),
            ("rocof_star", self.rocof_star),
            ("tau_p", self.tau_p),
            ("k_d", self.k_d),
            ("beta_error_budget", self.beta_error_budget),
            ("beta_cap", self.beta_cap),
            ("v_nom", self.v_nom),
        ];
        for (name, x) in named {
            if !(x > 0.0 && x.is_finite()) {
                return Err(TunerError::Invalid(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        if !(self.tau_d_floor >= 0.0) {
            return Err(TunerError::Invalid(format!(
                "tau_d_floor must be non-negative, got {}",
                self.tau_d_floor
            )));
        }
        Ok(())
    }
}

/// Per-IBR inputs to the tuner: rating and voltage limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrLimits {
    pub s_rated: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub controllers: ControllerSet,
    pub m_star: f64,
    pub sigma2: f64,
    /// Every β tried, largest first; the last one is the result.
    pub beta_trials: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Applies the selection procedure. `stability_ok` is consulted for each
/// candidate β (halving from the largest budget-compliant value); pass
/// `None` to skip that check.
pub fn tune(
    spec: &TuningSpec,
    graph: &CommGraph,
    limits: &[IbrLimits],
    stability_ok: Option<&dyn Fn(&ControllerSet) -> bool>,
) -> Result<Tuned, TunerError> {
    spec.check()?;
    if limits.len() != graph.n() {
        return Err(TunerError::Invalid(format!(
            "{} IBR limit rows for a {}-node graph",
            limits.len(),
            graph.n()
        )));
    }
    let m_star = 2.0 * PI * spec.delta_f_max * spec.f_nom;
    let tau_omega = m_star / (2.0 * PI * spec.rocof_star);
    let tau_d = (10.0 * spec.tau_p).max(spec.tau_d_floor);
    let tau_v = (10.0 * tau_omega).max(10.0 * tau_d);
    let sigma2 = graph.algebraic_connectivity();
    let k = spec.k_d / sigma2;

    let ibrs: Vec<IbrParams> = limits
        .iter()
        .map(|l| IbrParams {
            s_rated: l.s_rated,
            m_omega: m_star,
            m_v: 0.5 * (l.v_max - l.v_min),
            v_min: l.v_min,
            v_max: l.v_max,
        })
        .collect();
    if let Some(bad) = ibrs
        .iter()
        .position(|p| !(p.v_min < p.v_max && p.v_min > 0.0 && p.s_rated > 0.0))
    {
        return Err(TunerError::Invalid(format!(
            "IBR {} has invalid rating or limits",
            bad + 1
        )));
    }
    // Largest β with β Δ_i / V⋆_i within budget for every IBR.
    let worst = ibrs
        .iter()
        .map(|p| p.delta() / p.v_star())
        .fold(0.0, f64::max);
    let mut beta = if at_least(spec.beta_error_budget, spec.beta_cap * worst) {
        spec.beta_cap
    } else {
        spec.beta_error_budget / worst
    };

    let mut set = ControllerSet {
        ibrs,
        gains: ControlGains {
            tau_omega,
            tau_v,
            tau_p: spec.tau_p,
            tau_d,
            beta,
            k,
        },
        v_nom: spec.v_nom,
    };
    let mut trials = Vec::new();
    let min_beta = spec.beta_cap * 2f64.powi(-30);
    loop {
        set.gains.beta = beta;
        trials.push(beta);
        if stability_ok.is_none_or(|f| f(&set)) {
            break;
        }
        beta *= 0.5;
        if beta < min_beta {
            return Err(TunerError::InfeasibleBeta {
                cap: spec.beta_cap,
                budget: spec.beta_error_budget,
            });
        }
    }
    let warnings = response_time_warning(set.gains.tau_v).into_iter().collect();
    Ok(Tuned {
        controllers: set,
        m_star,
        sigma2,
        beta_trials: trials,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `τ_v < 10 max(τ_Ω, τ_d)`.
    VoltageNotSlowest { tau_v: f64, required: f64 },
    /// `τ_d < 10 τ_p`.
    DualNotSlowerThanPrimal { tau_d: f64, required: f64 },
    /// `β Δ_i / V⋆_i` exceeds the sharing budget.
    SharingBudget { ibr: usize, error: f64, budget: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VoltageNotSlowest { tau_v, required } => write!(
                f,
                "tau_v = {tau_v} s is below 10 max(tau_omega, tau_d) = {required} s; the voltage loop must be the slowest"
            ),
            Violation::DualNotSlowerThanPrimal { tau_d, required } => write!(
                f,
                "tau_d = {tau_d} s is below 10 tau_p = {required} s; the dual update must be slower than the primal one"
            ),
            Violation::SharingBudget { ibr, error, budget } => write!(
                f,
                "IBR {ibr}: beta * Delta / V_star = {error:.3e} exceeds the sharing budget {budget:.3e}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn at_least(x: f64, bound: f64) -> bool {
    x >= bound * (1.0 - RATIO_SLACK)
}

/// Checks the timescale-separation rules and, when a budget is given, the
/// sharing error implied by β.
pub fn validate(ctl: &ControllerSet, sharing_budget: Option<f64>) -> ValidationReport {
    let g = &ctl.gains;
    let mut v = Vec::new();
    let need_v = 10.0 * g.tau_omega.max(g.tau_d);
    if !at_least(g.tau_v, need_v) {
        v.push(Violation::VoltageNotSlowest {
            tau_v: g.tau_v,
            required: need_v,
        });
    }
    let need_d = 10.0 * g.tau_p;
    if !at_least(g.tau_d, need_d) {
        v.push(Violation::DualNotSlowerThanPrimal {
            tau_d: g.tau_d,
            required: need_d,
        });
    }
    if let Some(budget) = sharing_budget {
        for (i, p) in ctl.ibrs.iter().enumerate() {
            let error = g.beta * p.delta() / p.v_star();
            if !at_least(budget, error) {
                v.push(Violation::SharingBudget {
                    ibr: i + 1,
                    error,
                    budget,
                });
            }
        }
    }
    ValidationReport { violations: v }
}

/// Advisory note when `τ_v` falls outside the IEEE 1547 response-time
/// range for voltage/reactive power control. Not a rule violation.
pub fn response_time_warning(tau_v: f64) -> Option<String> {
    let (lo, hi) = TAU_V_WINDOW;
    (!(at_least(tau_v, lo) && at_least(hi, tau_v))).then(|| {
        format!("tau_v = {tau_v} s is outside the IEEE 1547 response-time range of {lo} to {hi} s")
    })
}

/// Renders a `[controller]` section for a scenario file.
pub fn controller_section(t: &Tuned) -> String {
    let g = &t.controllers.gains;
    let m_v = t.controllers.ibrs.first().map_or(f64::NAN, |p| p.m_v);
    let uniform = t.controllers.ibrs.iter().all(|p| p.m_v == m_v);
    let mut s = String::from("[controller]\nmode = droop\n");
    s += &format!("v_nom = {}\n", t.controllers.v_nom);
    s += &format!(
        "tau_omega = {}\ntau_v = {}\ntau_p = {}\ntau_d = {}\n",
        g.tau_omega, g.tau_v, g.tau_p, g.tau_d
    );
    s += &format!("beta = {}\nm_omega = {}\n", g.beta, t.m_star);
    if uniform {
        s += &format!("m_v = {m_v}\n");
    } else {
        s += "# IBR limits differ; m_v below is the first IBR's half-band\n";
        s += &format!("m_v = {m_v}\n");
    }
    s += &format!("k = {}\n", g.k);
    s
}
