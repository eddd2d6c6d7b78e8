use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::NetworkError;

/// Kron-reduced network seen between IBR internal buses, in p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl ReducedNetwork {
    pub fn new(g: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, NetworkError> {
        let n = g.nrows();
        if g.ncols() != n || b.nrows() != n || b.ncols() != n {
            return Err(NetworkError::Dimension {
                want: n,
                got: b.nrows(),
            });
        }
        let asym = (&g - g.transpose()).amax().max((&b - b.transpose()).amax());
        let scale = g.amax().max(b.amax()).max(1.0);
        if asym > 1e-9 * scale {
            return Err(NetworkError::NotSymmetric(asym));
        }
        Ok(Self { g, b })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Smallest eigenvalue of the (symmetric) conductance matrix. A passive
    /// network keeps this non-negative up to round-off.
    pub fn min_conductance_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.g.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_passive(&self) -> bool {
        self.min_conductance_eigenvalue() >= -1e-9
    }

    /// Active and reactive injections at every IBR bus.
    pub fn power_flow(&self, theta: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        self.power_flow_into(theta, v, &mut p, &mut q);
        (p, q)
    }

    /// Allocation-free variant of [`power_flow`](Self::power_flow).
    pub fn power_flow_into(&self, theta: &[f64], v: &[f64], p: &mut [f64], q: &mut [f64]) {
        let n = self.n();
        assert!(
            theta.len() == n && v.len() == n && p.len() == n && q.len() == n,
            "power_flow dimension mismatch"
        );
        for i in 0..n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for j in 0..n {
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                pi += v[j] * (gij * c + bij * s);
                qi += v[j] * (gij * s - bij * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
    }

    /// Analytic Jacobians of the power flow at `(theta0, v0)` and the
    /// intercepts that make the affine model exact at that point.
    pub fn jacobians(&self, theta0: &[f64], v0: &[f64]) -> LinearizedModel {
        let n = self.n();
        let (p0, q0) = self.power_flow(theta0, v0);
        let mut jtp = DMatrix::zeros(n, n);
        let mut jvp = DMatrix::zeros(n, n);
        let mut jtq = DMatrix::zeros(n, n);
        let mut jvq = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (s, c) = (theta0[i] - theta0[j]).sin_cos();
                let (gij, bij) = (self.g[(i, j)], self.b[(i, j)]);
                let pc = gij * c + bij * s;
                let qc = gij * s - bij * c;
                if i != j {
                    jtp[(i, j)] = v0[i] * v0[j] * qc;
                    jtq[(i, j)] = -v0[i] * v0[j] * pc;
                    jvp[(i, j)] = v0[i] * pc;
                    jvq[(i, j)] = v0[i] * qc;
                }
                // d/dV_i of V_i * sum_j V_j (...): the j = i term is quadratic.
                jvp[(i, i)] += v0[j] * pc;
                jvq[(i, i)] += v0[j] * qc;
            }
            jvp[(i, i)] += v0[i] * self.g[(i, i)];
            jvq[(i, i)] -= v0[i] * self.b[(i, i)];
            // Rotational invariance: each angle row sums to zero.
            let rp: f64 = (0..n).filter(|&j| j != i).map(|j| jtp[(i, j)]).sum();
            let rq: f64 = (0..n).filter(|&j| j != i).map(|j| jtq[(i, j)]).sum();
            jtp[(i, i)] = -rp;
            jtq[(i, i)] = -rq;
        }
        let th = DVector::from_column_slice(theta0);
        let vv = DVector::from_column_slice(v0);
        let w_p = DVector::from_vec(p0) - &jtp * &th - &jvp * &vv;
        let w_q = DVector::from_vec(q0) - &jtq * &th - &jvq * &vv;
        LinearizedModel {
            j_theta_p: jtp,
            j_v_p: jvp,
            j_theta_q: jtq,
            j_v_q: jvq,
            w_p,
            w_q,
            theta0: th,
            v0: vv,
        }
    }
}

/// Affine power flow model `P = J_θ^P θ + J_V^P V + w_P` (and likewise Q)
/// around a linearisation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel {
    pub j_theta_p: DMatrix<f64>,
    pub j_v_p: DMatrix<f64>,
    pub j_theta_q: DMatrix<f64>,
    pub j_v_q: DMatrix<f64>,
    pub w_p: DVector<f64>,
    pub w_q: DVector<f64>,
    pub theta0: DVector<f64>,
    pub v0: DVector<f64>,
}

impl LinearizedModel {
    pub fn n(&self) -> usize {
        self.w_p.len()
    }

    pub fn eval(&self, theta: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            &self.j_theta_p * theta + &self.j_v_p * v + &self.w_p,
            &self.j_theta_q * theta + &self.j_v_q * v + &self.w_q,
        )
    }

    /// Largest |J_θ · 1| over both angle Jacobians.
    pub fn rotational_defect(&self) -> f64 {
        let ones = DVector::from_element(self.n(), 1.0);
        (&self.j_theta_p * &ones)
            .amax()
            .max((&self.j_theta_q * &ones).amax())
    }
}
