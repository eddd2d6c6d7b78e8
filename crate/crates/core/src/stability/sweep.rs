use nalgebra::{DMatrix, DVector};

use super::{assemble_blocks, row_selector, transform_matrix, ReducedBlocks, StabilityError};
use crate::controller::{
    leakage, leakage_term_derivative, voltage_output, ControllerSet, IbrParams,
};
use crate::graph::CommGraph;
use crate::network::ReducedNetwork;
use crate::steady::Equilibrium;

/// Largest real part of the eigenvalues of `j`.
pub fn spectral_abscissa(j: &DMatrix<f64>) -> f64 {
    j.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sech2(p: &IbrParams, v: f64) -> f64 {
    1.0 - (v / p.delta()).tanh().powi(2)
}

/// `diag(dV/dv)` and `diag(d(ρv)/dv)` at `v_bar`.
fn local_slopes(ctl: &ControllerSet, v_bar: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = ctl.n();
    let dv = DVector::from_iterator(n, ctl.ibrs.iter().zip(v_bar).map(|(p, &v)| sech2(p, v)));
    let dr = DVector::from_iterator(
        n,
        ctl.ibrs
            .iter()
            .zip(v_bar)
            .map(|(p, &v)| leakage_term_derivative(p, v)),
    );
    (DMatrix::from_diagonal(&dv), DMatrix::from_diagonal(&dr))
}

/// Jacobian of the reduced loop in the grounded coordinates
/// `(r, v, y)` of size `3n − 2`, for `ε = τ_d / τ_v = ratio`.
pub fn grounded_jacobian(
    blocks: &ReducedBlocks,
    ctl: &ControllerSet,
    v_bar: &[f64],
    ratio: f64,
) -> DMatrix<f64> {
    let n = blocks.n();
    let m = n - 1;
    let (dv, dr) = local_slopes(ctl, v_bar);
    let inv_tv = 1.0 / blocks.tau_v;
    let mut vv = &blocks.r_v_v * &dv - &dv * blocks.beta - dr;
    vv *= inv_tv;
    let mut j = DMatrix::zeros(3 * n - 2, 3 * n - 2);
    j.view_mut((0, 0), (m, m)).copy_from(&blocks.r_theta);
    j.view_mut((0, m), (m, n))
        .copy_from(&(&blocks.r_theta_v * &dv));
    j.view_mut((m, 0), (n, m))
        .copy_from(&(&blocks.r_v_theta * inv_tv));
    j.view_mut((m, m), (n, n)).copy_from(&vv);
    j.view_mut((m, m + n), (n, m))
        .copy_from(&(&blocks.r_v_zeta * inv_tv));
    j.view_mut((m + n, 0), (m, m))
        .copy_from(&(&blocks.r_zeta_theta / ratio));
    j.view_mut((m + n, m), (m, n))
        .copy_from(&(&blocks.r_zeta_v * &dv / ratio));
    j.view_mut((m + n, m + n), (m, m))
        .copy_from(&(&blocks.r_zeta / ratio));
    j
}

/// Jacobian of the slow system obtained by letting the dual variables
/// settle instantly (size `2n − 1`).
pub fn quasi_steady_jacobian(
    blocks: &ReducedBlocks,
    ctl: &ControllerSet,
    v_bar: &[f64],
) -> DMatrix<f64> {
    let n = blocks.n();
    let m = n - 1;
    let (dv, dr) = local_slopes(ctl, v_bar);
    let inv_tv = 1.0 / blocks.tau_v;
    let vv = (&blocks.r_v_v_new * &dv - &dv * blocks.beta - dr) * inv_tv;
    let mut j = DMatrix::zeros(2 * n - 1, 2 * n - 1);
    j.view_mut((0, 0), (m, m)).copy_from(&blocks.r_theta);
    j.view_mut((0, m), (m, n))
        .copy_from(&(&blocks.r_theta_v * &dv));
    j.view_mut((m, 0), (n, m))
        .copy_from(&(&blocks.r_v_theta_new * inv_tv));
    j.view_mut((m, m), (n, n)).copy_from(&vv);
    j
}

/// Analytic Jacobian of the full simulated loop `(θ, Ω, v, λ, ζ)` at an
/// equilibrium, in grounded coordinates (size `5n − 2`) so that the two
/// structural zero modes are removed exactly.
pub fn full_system_jacobian(
    net: &ReducedNetwork,
    graph: &CommGraph,
    ctl: &ControllerSet,
    eq: &Equilibrium,
) -> Result<DMatrix<f64>, StabilityError> {
    let n = ctl.n();
    let m = n - 1;
    let g = &ctl.gains;
    let lin = net.jacobians(&eq.theta, &eq.voltage);
    let lap = graph.laplacian();
    let (dv, dr) = local_slopes(ctl, &eq.v);
    let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        ctl.ibrs.iter().map(|p| 1.0 / p.s_rated),
    ));
    let mw = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        ctl.ibrs.iter().map(|p| p.m_omega),
    ));
    let vs = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        ctl.ibrs.iter().map(|p| p.v_star()),
    ));
    let eye = DMatrix::<f64>::identity(n, n);

    let mut j = DMatrix::zeros(5 * n, 5 * n);
    let blk = |j: &mut DMatrix<f64>, r: usize, c: usize, a: &DMatrix<f64>| {
        j.view_mut((r * n, c * n), (n, n)).copy_from(a);
    };
    blk(&mut j, 0, 1, &eye);
    blk(
        &mut j,
        1,
        0,
        &(-(&mw * &s_inv * &lin.j_theta_p) / g.tau_omega),
    );
    blk(&mut j, 1, 1, &(-&eye / g.tau_omega));
    blk(
        &mut j,
        1,
        2,
        &(-(&mw * &s_inv * &lin.j_v_p * &dv) / g.tau_omega),
    );
    blk(&mut j, 2, 0, &(-(&vs * &s_inv * &lin.j_theta_q) / g.tau_v));
    blk(
        &mut j,
        2,
        2,
        &((-(&vs * &s_inv * &lin.j_v_q * &dv) - &dv * g.beta - dr) / g.tau_v),
    );
    blk(&mut j, 2, 3, &(&vs / g.tau_v));
    blk(&mut j, 3, 0, &(&s_inv * &lin.j_theta_q / g.tau_p));
    blk(&mut j, 3, 2, &(&s_inv * &lin.j_v_q * &dv / g.tau_p));
    blk(&mut j, 3, 3, &(-(&eye + &lap * g.k) / g.tau_p));
    blk(&mut j, 3, 4, &(-&lap / g.tau_p));
    blk(&mut j, 4, 3, &(&lap / g.tau_d));

    let (t, ti) = transform_matrix(n)?;
    let ir = row_selector(n);
    let down = &ir * &t;
    let up = &ti * ir.transpose();
    let mut e = DMatrix::zeros(5 * n - 2, 5 * n);
    let mut f = DMatrix::zeros(5 * n, 5 * n - 2);
    e.view_mut((0, 0), (m, n)).copy_from(&down);
    f.view_mut((0, 0), (n, m)).copy_from(&up);
    for k in 0..3 * n {
        e[(m + k, n + k)] = 1.0;
        f[(n + k, m + k)] = 1.0;
    }
    e.view_mut((m + 3 * n, 4 * n), (m, n)).copy_from(&down);
    f.view_mut((4 * n, m + 3 * n), (n, m)).copy_from(&up);
    Ok(&e * j * &f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    /// Abscissa of the reduced loop (fast primal and frequency dynamics
    /// neglected).
    pub reduced: f64,
    /// Abscissa of the full simulated loop with `τ_d = ratio · τ_v`.
    pub full: f64,
}

/// Spectral abscissae over `ε = τ_d / τ_v`, excluding the two structural
/// zero modes (average angle and average dual). Also returns the abscissa
/// of the quasi-steady limit.
pub fn epsilon_sweep(
    net: &ReducedNetwork,
    graph: &CommGraph,
    ctl: &ControllerSet,
    eq: &Equilibrium,
    omega_nom: f64,
    ratios: &[f64],
) -> Result<(Vec<SweepRow>, f64), StabilityError> {
    let lin = net.jacobians(&eq.theta, &eq.voltage);
    let blocks = assemble_blocks(&lin, graph, ctl, omega_nom)?;
    let limit = spectral_abscissa(&quasi_steady_jacobian(&blocks, ctl, &eq.v));
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut c = ctl.clone();
        c.gains.tau_d = ratio * ctl.gains.tau_v;
        rows.push(SweepRow {
            ratio,
            reduced: spectral_abscissa(&grounded_jacobian(&blocks, ctl, &eq.v, ratio)),
            full: spectral_abscissa(&full_system_jacobian(net, graph, &c, eq)?),
        });
    }
    Ok((rows, limit))
}

/// The quasi-steady slow loop with the affine power-flow model, state
/// `(r, v)`.
pub struct SlowSystem<'a> {
    pub blocks: &'a ReducedBlocks,
    pub ctl: &'a ControllerSet,
}

impl SlowSystem<'_> {
    pub fn dim(&self) -> usize {
        2 * self.blocks.n() - 1
    }

    /// `(r̄, v̄)` for a solved equilibrium.
    pub fn equilibrium(&self, eq: &Equilibrium) -> Vec<f64> {
        let n = self.blocks.n();
        let (t, _) = transform_matrix(n).expect("n >= 2");
        let r = row_selector(n) * t * DVector::from_column_slice(&eq.theta);
        r.iter().chain(&eq.v).copied().collect()
    }

    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let b = self.blocks;
        let n = b.n();
        let m = n - 1;
        let r = DVector::from_column_slice(&x[..m]);
        let v = &x[m..];
        let volt = DVector::from_iterator(
            n,
            self.ctl
                .ibrs
                .iter()
                .zip(v)
                .map(|(p, &v)| voltage_output(p, v)),
        );
        let dr = &b.r_theta * &r + &b.r_theta_v * &volt + &b.d_theta;
        let dv = &b.r_v_theta_new * &r + &b.r_v_v_new * &volt - &volt * b.beta + &b.d_v_new;
        dx[..m].copy_from_slice(dr.as_slice());
        for (i, p) in self.ctl.ibrs.iter().enumerate() {
            dx[m + i] = (dv[i] - leakage(p, v[i]) * v[i]) / b.tau_v;
        }
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Storage function of the slow loop around `x_bar`, with the voltage term
/// integrated in closed form.
pub fn lyapunov_value(
    p_theta: &DMatrix<f64>,
    d_v: &DVector<f64>,
    tau_v: f64,
    ctl: &ControllerSet,
    x: &[f64],
    x_bar: &[f64],
) -> f64 {
    let m = p_theta.nrows();
    let r = DVector::from_iterator(m, (0..m).map(|k| x[k] - x_bar[k]));
    let mut s = 0.5 * (r.transpose() * p_theta * &r)[0];
    for (i, p) in ctl.ibrs.iter().enumerate() {
        let d = p.delta();
        let vb = x_bar[m + i];
        let vt = x[m + i] - vb;
        let integral =
            d * d * (log_cosh((vb + vt) / d) - log_cosh(vb / d)) - d * (vb / d).tanh() * vt;
        s += tau_v * d_v[i] * integral;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cosh_is_stable() {
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_cosh(-2.0), log_cosh(2.0));
    }
}
