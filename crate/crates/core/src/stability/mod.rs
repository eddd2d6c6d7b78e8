//! Small-signal analysis of the closed loop under the two-timescale
//! reduction: coordinate transformation, block assembly, the LMI
//! certificate, the boundary-layer check and the timescale-ratio sweep.

mod lmi;
mod storage;
mod sweep;

pub use lmi::{
    boundary_layer_check, check_certificate, solve_lmi, BoundaryLayer, LmiCertificate, LmiOptions,
};
pub use storage::{storage_trace, StorageTrace};
pub use sweep::{
    epsilon_sweep, full_system_jacobian, grounded_jacobian, lyapunov_value, quasi_steady_jacobian,
    spectral_abscissa, SlowSystem, SweepRow,
};

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::controller::ControllerSet;
use crate::graph::CommGraph;
use crate::network::LinearizedModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("need at least 2 IBRs, got {0}")]
    TooSmall(usize),
    #[error("dimension mismatch: expected {want}, got {got}")]
    Dimension { want: usize, got: usize },
    #[error("angle Jacobian rows do not sum to zero (|J·1| = {0:.3e}); the difference coordinates are invalid")]
    RotationalDefect(f64),
    #[error("transformed {which} has a non-zero first column (max {value:.3e})")]
    Structure { which: &'static str, value: f64 },
    #[error("dual block is not Hurwitz (max real eigenvalue {0:.3e})")]
    DualNotHurwitz(f64),
    #[error("dual block is singular")]
    SingularDual,
    #[error("Lyapunov equation has no unique solution")]
    Lyapunov,
}

/// Tolerance on `J_θ 1` above which assembly is refused.
pub const ROTATION_TOL: f64 = 1e-6;
/// Tolerance for the zero first columns of the transformed matrices.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// `T` (first row `1ᵀ/n`, then difference rows) and its inverse in
/// closed form.
pub fn transform_matrix(n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), StabilityError> {
    if n < 2 {
        return Err(StabilityError::TooSmall(n));
    }
    let nf = n as f64;
    let mut t = DMatrix::zeros(n, n);
    for j in 0..n {
        t[(0, j)] = 1.0 / nf;
    }
    for k in 1..n {
        t[(k, k - 1)] = -1.0;
        t[(k, k)] = 1.0;
    }
    // θ = θ_av 1 + U r, with θ_j = θ_1 + Σ_{k<j} r_k.
    let mut ti = DMatrix::zeros(n, n);
    for j in 0..n {
        ti[(j, 0)] = 1.0;
        for k in 1..n {
            let below = if k <= j { 1.0 } else { 0.0 };
            ti[(j, k)] = below - (n - k) as f64 / nf;
        }
    }
    Ok((t, ti))
}

/// `[0 I_{n-1}]`
pub fn row_selector(n: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(n - 1, n);
    for k in 0..n - 1 {
        r[(k, k + 1)] = 1.0;
    }
    r
}

/// Matrices of the reduced closed loop in difference coordinates.
///
/// Slow angle dynamics: `ṙ = R_θ r + R_θV V + d_θ`.
/// Voltage: `τ_v v̇ = R_vθ r + (R_vV − βI) V + R_vζ y + d_v − ρ(v) v`.
/// Dual: `ε ẏ = R_ζθ r + R_ζV V + R_ζ y + d_ζ`, with `ε = τ_d / τ_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBlocks {
    pub r_theta: DMatrix<f64>,
    pub r_theta_v: DMatrix<f64>,
    pub r_v_theta: DMatrix<f64>,
    pub r_v_v: DMatrix<f64>,
    pub r_v_zeta: DMatrix<f64>,
    pub r_zeta_theta: DMatrix<f64>,
    pub r_zeta_v: DMatrix<f64>,
    pub r_zeta: DMatrix<f64>,
    pub d_theta: DVector<f64>,
    pub d_v: DVector<f64>,
    pub d_zeta: DVector<f64>,
    /// Average-angle row.
    pub r_theta_av: RowDVector<f64>,
    pub r_theta_v_av: RowDVector<f64>,
    pub d_theta_av: f64,
    /// Voltage blocks after eliminating the dual variables.
    pub r_v_theta_new: DMatrix<f64>,
    pub r_v_v_new: DMatrix<f64>,
    pub d_v_new: DVector<f64>,
    pub beta: f64,
    pub tau_v: f64,
    /// Eigenvalues of `R_ζ` (real parts, ascending).
    pub r_zeta_spectrum: Vec<f64>,
}

impl ReducedBlocks {
    pub fn n(&self) -> usize {
        self.r_v_v.nrows()
    }

    /// The matrix `A` with `𝒬 = blkdiag(P_θ, D_v) A`.
    pub fn slow_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let m = n - 1;
        let mut a = DMatrix::zeros(m + n, m + n);
        a.view_mut((0, 0), (m, m)).copy_from(&self.r_theta);
        a.view_mut((0, m), (m, n)).copy_from(&self.r_theta_v);
        a.view_mut((m, 0), (n, m)).copy_from(&self.r_v_theta_new);
        let mut vv = self.r_v_v_new.clone();
        for i in 0..n {
            vv[(i, i)] -= self.beta;
        }
        a.view_mut((m, m), (n, n)).copy_from(&vv);
        a
    }

    pub fn dimensions(&self) -> Vec<(&'static str, usize, usize)> {
        let d = |name, m: &DMatrix<f64>| (name, m.nrows(), m.ncols());
        vec![
            d("R_theta", &self.r_theta),
            d("R_thetaV", &self.r_theta_v),
            d("R_vtheta", &self.r_v_theta),
            d("R_vV", &self.r_v_v),
            d("R_vzeta", &self.r_v_zeta),
            d("R_zetatheta", &self.r_zeta_theta),
            d("R_zetaV", &self.r_zeta_v),
            d("R_zeta", &self.r_zeta),
        ]
    }
}

fn first_column_defect(m: &DMatrix<f64>) -> f64 {
    m.column(0).amax()
}

/// Assembles every block from the linearised power flow and the controller
/// parameters.
pub fn assemble_blocks(
    lin: &LinearizedModel,
    graph: &CommGraph,
    ctl: &ControllerSet,
    omega_nom: f64,
) -> Result<ReducedBlocks, StabilityError> {
    let n = ctl.n();
    if n < 2 {
        return Err(StabilityError::TooSmall(n));
    }
    for got in [lin.n(), graph.n()] {
        if got != n {
            return Err(StabilityError::Dimension { want: n, got });
        }
    }
    let defect = lin.rotational_defect();
    if defect > ROTATION_TOL {
        return Err(StabilityError::RotationalDefect(defect));
    }
    let (t, ti) = transform_matrix(n)?;
    let ir = row_selector(n);
    let irt = ir.transpose();
    let lap = graph.laplacian();
    for (which, m) in [
        ("angle/active Jacobian", &lin.j_theta_p),
        ("angle/reactive Jacobian", &lin.j_theta_q),
        ("Laplacian", &lap),
    ] {
        let value = first_column_defect(&(&t * m * &ti));
        let scale = m.amax().max(1.0);
        if value > STRUCTURE_TOL * scale {
            return Err(StabilityError::Structure { which, value });
        }
    }

    let g = &ctl.gains;
    let m_w = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        ctl.ibrs.iter().map(|p| p.m_omega),
    ));
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        ctl.ibrs.iter().map(|p| 1.0 / p.s_rated),
    ));
    let vstar_vec = DVector::from_iterator(n, ctl.ibrs.iter().map(|p| p.v_star()));
    let vstar = DMatrix::from_diagonal(&vstar_vec);
    let ident = DMatrix::<f64>::identity(n, n);
    let k_mat = g_inverse(&(&ident + &lap * g.k));
    let k_minus_i = &k_mat - &ident;
    let inv_tau_v = 1.0 / g.tau_v;
    let ones = DVector::from_element(n, 1.0);
    let tm_s = &t * &m_w * &s_inv;
    let t_lk_s = &t * &lap * &k_mat * &s_inv;

    let r_theta = -(&ir * &tm_s * &lin.j_theta_p * &ti * &irt);
    let r_theta_v = -(&ir * &tm_s * &lin.j_v_p);
    let r_v_theta = &vstar * &k_minus_i * &s_inv * &lin.j_theta_q * &ti * &irt;
    let r_v_v = &vstar * &k_minus_i * &s_inv * &lin.j_v_q;
    let r_v_zeta = -(&vstar * &k_mat * &lap * &ti * &irt);
    let r_zeta_theta = (&ir * &t_lk_s * &lin.j_theta_q * &ti * &irt) * inv_tau_v;
    let r_zeta_v = (&ir * &t_lk_s * &lin.j_v_q) * inv_tau_v;
    let r_zeta = -(&ir * &t * &lap * &k_mat * &lap * &ti * &irt) * inv_tau_v;

    let d_theta = &ir * (&t * &ones) * omega_nom - &ir * &tm_s * &lin.w_p;
    let d_v = &vstar_vec * g.beta + &vstar * &k_minus_i * &s_inv * &lin.w_q;
    let d_zeta = (&ir * &t_lk_s * &lin.w_q) * inv_tau_v;

    let tt_tm_s = t.transpose() * &tm_s;
    let r_theta_av = -(ones.transpose() * &tt_tm_s * &lin.j_theta_p * &ti * &irt);
    let r_theta_v_av = -(ones.transpose() * &tt_tm_s * &lin.j_v_p);
    let d_theta_av = omega_nom - (&tm_s * &lin.w_p)[0];

    let spectrum = r_zeta.complex_eigenvalues();
    let mut re: Vec<f64> = spectrum.iter().map(|z| z.re).collect();
    re.sort_by(f64::total_cmp);
    let max_re = re.last().copied().unwrap_or(f64::NEG_INFINITY);
    if !(max_re < 0.0) {
        return Err(StabilityError::DualNotHurwitz(max_re));
    }
    let lu = r_zeta.clone().lu();
    let solve = |b: &DMatrix<f64>| lu.solve(b).ok_or(StabilityError::SingularDual);
    let r_v_theta_new = &r_v_theta - &r_v_zeta * solve(&r_zeta_theta)?;
    let r_v_v_new = &r_v_v - &r_v_zeta * solve(&r_zeta_v)?;
    let d_v_new = &d_v - &r_v_zeta * lu.solve(&d_zeta).ok_or(StabilityError::SingularDual)?;

    Ok(ReducedBlocks {
        r_theta,
        r_theta_v,
        r_v_theta,
        r_v_v,
        r_v_zeta,
        r_zeta_theta,
        r_zeta_v,
        r_zeta,
        d_theta,
        d_v,
        d_zeta,
        r_theta_av,
        r_theta_v_av,
        d_theta_av,
        r_v_theta_new,
        r_v_v_new,
        d_v_new,
        beta: g.beta,
        tau_v: g.tau_v,
        r_zeta_spectrum: re,
    })
}

/// Inverse of `I + kL`, which is symmetric positive definite.
fn g_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| {
            m.clone()
                .try_inverse()
                .expect("I + kL is invertible for k > 0")
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn transform_pair() {
        let (t, ti) = transform_matrix(2).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, -1.0, 1.0]));
        for n in 2..8 {
            let (t, ti) = transform_matrix(n).unwrap();
            assert!((&t * &ti - DMatrix::identity(n, n)).amax() < 1e-12);
            let e1 = &t * DVector::from_element(n, 1.0);
            assert_abs_diff_eq!(e1[0], 1.0, epsilon = 1e-15);
            assert!(e1.rows(1, n - 1).amax() < 1e-15);
        }
        assert!(ti.amax() > 0.0);
        assert!(transform_matrix(1).is_err());
    }
}
