use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ReducedBlocks, StabilityError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiOptions {
    /// Strictness offset: the search targets `P ⪰ δI`, `D ⪰ δI` and
    /// `𝒬 + 𝒬ᵀ ⪯ −δI` on the normalised set.
    pub delta: f64,
    /// Gradient iterations per smoothing level.
    pub iters_per_level: usize,
    pub levels: usize,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self {
            delta: 1e-9,
            iters_per_level: 400,
            levels: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate {
    pub p_theta: DMatrix<f64>,
    /// Diagonal of `D_v`.
    pub d_v: DVector<f64>,
    /// Largest eigenvalue of `𝒬 + 𝒬ᵀ`.
    pub margin: f64,
    /// Smallest eigenvalue of `−(𝒬 + 𝒬ᵀ)`.
    pub alpha_s: f64,
    pub min_eig_p: f64,
    pub min_d: f64,
    pub feasible: bool,
    /// Starting points tried before returning.
    pub starts: usize,
}

/// Re-checks a candidate `(P_θ, D_v)` from scratch.
/// Returns `(min eig P_θ, min D_v, max eig(𝒬 + 𝒬ᵀ))`.
pub fn check_certificate(
    blocks: &ReducedBlocks,
    p: &DMatrix<f64>,
    d: &DVector<f64>,
) -> (f64, f64, f64) {
    let a = blocks.slow_matrix();
    let x = block_diag(p, d);
    let q = &x * &a;
    let qs = &q + q.transpose();
    let min_p = SymmetricEigen::new(p.clone()).eigenvalues.min();
    (min_p, d.min(), SymmetricEigen::new(qs).eigenvalues.max())
}

fn block_diag(p: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let m = p.nrows();
    let n = d.len();
    let mut x = DMatrix::zeros(m + n, m + n);
    x.view_mut((0, 0), (m, m)).copy_from(p);
    for i in 0..n {
        x[(m + i, m + i)] = d[i];
    }
    x
}

struct Problem {
    a: DMatrix<f64>,
    m: usize,
    n: usize,
    delta: f64,
    /// Indices (a, b) with a <= b of each P variable, followed by D.
    pairs: Vec<(usize, usize)>,
}

impl Problem {
    fn dim(&self) -> usize {
        self.pairs.len() + self.n
    }

    fn unpack(&self, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let mut p = DMatrix::zeros(self.m, self.m);
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            p[(a, b)] = x[k];
            p[(b, a)] = x[k];
        }
        let d = DVector::from_column_slice(&x[self.pairs.len()..]);
        (p, d)
    }

    fn pack(&self, p: &DMatrix<f64>, d: &DVector<f64>) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .pairs
            .iter()
            .map(|&(a, b)| 0.5 * (p[(a, b)] + p[(b, a)]))
            .collect();
        x.extend(d.iter());
        x
    }

    fn is_diag_var(&self, k: usize) -> bool {
        k >= self.pairs.len() || self.pairs[k].0 == self.pairs[k].1
    }

    /// Rescales so the trace of `blkdiag(P, D)` equals `m + n`.
    fn normalise(&self, x: &mut [f64]) -> bool {
        let tr: f64 = (0..x.len())
            .filter(|&k| self.is_diag_var(k))
            .map(|k| x[k])
            .sum();
        if !(tr > 0.0 && tr.is_finite()) {
            return false;
        }
        let s = (self.m + self.n) as f64 / tr;
        x.iter_mut().for_each(|v| *v *= s);
        true
    }

    fn matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (p, d) = self.unpack(x);
        let (m, n) = (self.m, self.n);
        let xm = block_diag(&p, &d);
        let q = &xm * &self.a;
        let total = 2 * (m + n);
        let mut big = DMatrix::zeros(total, total);
        big.view_mut((0, 0), (m, m)).copy_from(&(-&p));
        for i in 0..n {
            big[(m + i, m + i)] = -d[i];
        }
        big.view_mut((m + n, m + n), (m + n, m + n))
            .copy_from(&(&q + q.transpose()));
        for i in 0..total {
            big[(i, i)] += self.delta;
        }
        big
    }

    /// Smoothed maximum eigenvalue and its gradient projected onto the
    /// trace-preserving subspace. Also returns the raw maximum.
    fn eval(&self, x: &[f64], mu: f64) -> (f64, f64, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let eig = SymmetricEigen::new(self.matrix(x));
        let lmax = eig.eigenvalues.max();
        let w: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|l| ((l - lmax) / mu).exp())
            .collect();
        let z: f64 = w.iter().sum();
        let f = lmax + mu * z.ln();
        let mut g = vec![0.0; self.dim()];
        for (i, wi) in w.iter().enumerate() {
            let wi = wi / z;
            if wi < 1e-16 {
                continue;
            }
            let u = eig.eigenvectors.column(i);
            let u3 = u.rows(m + n, m + n).into_owned();
            let au = &self.a * &u3;
            for (k, &(a, b)) in self.pairs.iter().enumerate() {
                let val = if a == b {
                    -u[a] * u[a] + 2.0 * u3[a] * au[a]
                } else {
                    -2.0 * u[a] * u[b] + 2.0 * (u3[a] * au[b] + u3[b] * au[a])
                };
                g[k] += wi * val;
            }
            for j in 0..n {
                let k = self.pairs.len() + j;
                g[k] += wi * (-u[m + j] * u[m + j] + 2.0 * u3[m + j] * au[m + j]);
            }
        }
        let diag: Vec<usize> = (0..g.len()).filter(|&k| self.is_diag_var(k)).collect();
        let mean = diag.iter().map(|&k| g[k]).sum::<f64>() / diag.len() as f64;
        for &k in &diag {
            g[k] -= mean;
        }
        (f, lmax, g)
    }
}

/// Searches for `P_θ ≻ 0`, diagonal `D_v ≻ 0` with `𝒬 + 𝒬ᵀ ≺ 0`.
///
/// The largest eigenvalue of `blkdiag(−P_θ, −D_v, 𝒬 + 𝒬ᵀ) + δI` is
/// minimised over the trace-normalised set by projected gradient steps on
/// a log-sum-exp smoothing, annealing the smoothing width, from several
/// starting points. The returned matrices are re-checked independently;
/// `feasible` reflects that check only. An infeasible result is
/// inconclusive, not a proof of instability.
pub fn solve_lmi(
    blocks: &ReducedBlocks,
    opts: &LmiOptions,
) -> Result<LmiCertificate, StabilityError> {
    if blocks.r_zeta.clone().lu().determinant() == 0.0 {
        return Err(StabilityError::SingularDual);
    }
    let n = blocks.n();
    let m = n - 1;
    let a = blocks.slow_matrix();
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in i..m {
            pairs.push((i, j));
        }
    }
    let prob = Problem {
        a: a.clone(),
        m,
        n,
        delta: opts.delta,
        pairs,
    };
    let scale = a.amax().max(1e-12);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let eye_m = DMatrix::<f64>::identity(m, m);
    starts.push(prob.pack(&eye_m, &DVector::from_element(n, 1.0)));
    if let Ok(x) = lyapunov(&a, &DMatrix::identity(m + n, m + n)) {
        let p = x.view((0, 0), (m, m)).into_owned();
        let d = DVector::from_iterator(n, (0..n).map(|i| x[(m + i, m + i)]));
        starts.push(prob.pack(&p, &d));
    }
    for w in [10.0, 0.1] {
        starts.push(prob.pack(&(&eye_m * w), &DVector::from_element(n, 1.0)));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut tried = 0;
    for mut x in starts {
        if !prob.normalise(&mut x) {
            continue;
        }
        tried += 1;
        let (x, raw) = descend(&prob, x, scale, opts);
        if best.as_ref().is_none_or(|(b, _)| raw < *b) {
            best = Some((raw, x));
        }
        if raw < 0.0 {
            break;
        }
    }
    let (_, x) = best.expect("identity start is always admissible");
    let (mut p, mut d) = prob.unpack(&x);
    let (mut min_p, mut min_d, mut margin) = check_certificate(blocks, &p, &d);
    if !(min_p > 0.0 && min_d > 0.0) {
        // Report the nearest point with P ⪰ 0 and D ⪰ 0, where an
        // infeasible LMI necessarily shows a non-negative margin.
        let eig = SymmetricEigen::new(p.clone());
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        p = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        p = (&p + p.transpose()) * 0.5;
        d = d.map(|v| v.max(0.0));
        (min_p, min_d, margin) = check_certificate(blocks, &p, &d);
    }
    Ok(LmiCertificate {
        feasible: min_p > 0.0 && min_d > 0.0 && margin < 0.0,
        p_theta: p,
        d_v: d,
        margin,
        alpha_s: -margin,
        min_eig_p: min_p,
        min_d,
        starts: tried,
    })
}

fn descend(prob: &Problem, mut x: Vec<f64>, scale: f64, opts: &LmiOptions) -> (Vec<f64>, f64) {
    let mut best_x = x.clone();
    let mut best = prob.eval(&x, scale).1;
    let mut mu = 0.05 * scale;
    let mut step = 1.0 / scale;
    for _ in 0..opts.levels {
        let (mut f, _, mut g) = prob.eval(&x, mu);
        for _ in 0..opts.iters_per_level {
            let g2: f64 = g.iter().map(|v| v * v).sum();
            if g2 == 0.0 || !g2.is_finite() {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let mut xt: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
                if !prob.normalise(&mut xt) {
                    step *= 0.5;
                    continue;
                }
                let (ft, raw, gt) = prob.eval(&xt, mu);
                if ft <= f - 1e-4 * step * g2 {
                    x = xt;
                    f = ft;
                    g = gt;
                    if raw < best {
                        best = raw;
                        best_x = x.clone();
                    }
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        mu *= 0.3;
    }
    (best_x, best)
}

/// Solves `X A + Aᵀ X = −C` by vectorisation.
fn lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>, StabilityError> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(X A) = (Aᵀ ⊗ I) vec X, vec(Aᵀ X) = (I ⊗ Aᵀ) vec X (column-major).
    let op = at.kronecker(&eye) + eye.kronecker(&at);
    let rhs = DVector::from_iterator(n * n, c.iter().map(|v| -v));
    let sol = op.lu().solve(&rhs).ok_or(StabilityError::Lyapunov)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(StabilityError::Lyapunov);
    }
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLayer {
    pub p_y: DMatrix<f64>,
    pub min_eig_p_y: f64,
    /// Smallest eigenvalue of `−(P_y R_ζ + R_ζᵀ P_y)`; 1 by construction.
    pub alpha_f: f64,
}

/// Solves `P_y R_ζ + R_ζᵀ P_y = −I` for the fast dual subsystem.
pub fn boundary_layer_check(blocks: &ReducedBlocks) -> Result<BoundaryLayer, StabilityError> {
    let r = &blocks.r_zeta;
    let p = lyapunov(r, &DMatrix::identity(r.nrows(), r.nrows()))?;
    let min_p = SymmetricEigen::new(p.clone()).eigenvalues.min();
    if !(min_p > 0.0) {
        return Err(StabilityError::DualNotHurwitz(
            r.complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max),
        ));
    }
    let lhs = &p * r + r.transpose() * &p;
    let alpha_f = SymmetricEigen::new(-lhs).eigenvalues.min();
    Ok(BoundaryLayer {
        p_y: p,
        min_eig_p_y: min_p,
        alpha_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::RowDVector;

    pub(crate) fn contrived(n: usize, sign: f64) -> ReducedBlocks {
        let m = n - 1;
        let z = |r, c| DMatrix::zeros(r, c);
        ReducedBlocks {
            r_theta: -DMatrix::identity(m, m),
            r_theta_v: z(m, n),
            r_v_theta: z(n, m),
            r_v_v: DMatrix::identity(n, n) * sign,
            r_v_zeta: z(n, m),
            r_zeta_theta: z(m, m),
            r_zeta_v: z(m, n),
            r_zeta: -DMatrix::identity(m, m),
            d_theta: DVector::zeros(m),
            d_v: DVector::zeros(n),
            d_zeta: DVector::zeros(m),
            r_theta_av: RowDVector::zeros(m),
            r_theta_v_av: RowDVector::zeros(n),
            d_theta_av: 0.0,
            r_v_theta_new: z(n, m),
            r_v_v_new: DMatrix::identity(n, n) * sign,
            d_v_new: DVector::zeros(n),
            beta: 0.0,
            tau_v: 1.0,
            r_zeta_spectrum: vec![-1.0; m],
        }
    }

    #[test]
    fn diagonal_case_is_feasible() {
        let b = contrived(3, -1.0);
        let c = solve_lmi(&b, &LmiOptions::default()).unwrap();
        assert!(c.feasible);
        assert!(c.margin < 0.0);
        let (p, d, q) =
            check_certificate(&b, &DMatrix::identity(2, 2), &DVector::from_element(3, 1.0));
        assert_eq!((p, d, q), (1.0, 1.0, -2.0));
    }

    #[test]
    fn flipped_case_is_infeasible() {
        let b = contrived(3, 1.0);
        let c = solve_lmi(&b, &LmiOptions::default()).unwrap();
        assert!(!c.feasible);
        assert!(c.margin >= 0.0);
    }

    #[test]
    fn lyapunov_diagonal() {
        let mut b = contrived(3, -1.0);
        b.r_zeta = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let bl = boundary_layer_check(&b).unwrap();
        assert!((bl.p_y[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((bl.p_y[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(bl.p_y[(0, 1)].abs() < 1e-14);
        assert!((bl.alpha_f - 1.0).abs() < 1e-12);
    }
}
