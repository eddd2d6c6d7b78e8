//! Reference computations shared by the integration tests. Nothing here
//! calls into the library's numerical routines.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use voltshare::network::Unit;
use voltshare::scenario::ScenarioFile;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Nodal admittance in p.u. built straight from a scenario file's tables.
/// Node order: IBR internal buses (by IBR number), then main buses in table
/// order.
pub fn admittance_from_tables(f: &ScenarioFile, load_scale: &[f64]) -> DMatrix<Complex64> {
    let b = &f.bases;
    let z_base = b.v_base * b.v_base / b.s_base;
    let z = |unit: Unit, r: f64, x: f64| match unit {
        Unit::Si => Complex64::new(r, x) / z_base,
        Unit::PerUnit => Complex64::new(r, x),
    };
    let s_pu = |s: f64| match f.load_unit {
        Unit::Si => s / b.s_base,
        Unit::PerUnit => s,
    };
    let n = f.connectors.len();
    let total = n + f.buses.len();
    let node = |bus: usize| n + f.buses.iter().position(|b| b.id == bus).unwrap();
    let mut y = DMatrix::<Complex64>::zeros(total, total);
    let mut branch = |a: usize, b: usize, zz: Complex64| {
        let ys = zz.inv();
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    };
    for l in &f.lines {
        branch(node(l.from), node(l.to), z(f.line_unit, l.r, l.x));
    }
    for c in &f.connectors {
        branch(c.ibr - 1, node(c.bus), z(f.connector_unit, c.r, c.x));
    }
    for ld in &f.loads {
        let k = node(ld.bus);
        let s = s_pu(ld.s) * load_scale[k - n];
        // Constant impedance drawing s at 1 p.u. with lagging power factor.
        let q = s * (1.0 - ld.pf * ld.pf).sqrt();
        y[(k, k)] += Complex64::new(s * ld.pf, -q);
    }
    y
}

/// Eliminates every node past `keep`, one at a time.
pub fn sequential_kron(mut y: DMatrix<Complex64>, keep: usize) -> DMatrix<Complex64> {
    while y.nrows() > keep {
        let k = y.nrows() - 1;
        let ykk = y[(k, k)];
        let mut next = DMatrix::<Complex64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                next[(i, j)] = y[(i, j)] - y[(i, k)] * y[(k, j)] / ykk;
            }
        }
        y = next;
    }
    y
}

/// `S_i = V_i e^{jθ_i} conj(Σ_j Y_ij V_j e^{jθ_j})`.
pub fn complex_power(y: &DMatrix<Complex64>, theta: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = theta.len();
    let e: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(v[i], theta[i]))
        .collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let current: Complex64 = (0..n).map(|j| y[(i, j)] * e[j]).sum();
        let s = e[i] * current.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: &mut dyn FnMut(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let fp = f(&xp);
        xp[k] = x[k] - step;
        let fm = f(&xp);
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
    j
}

/// Relative error in the max norm, `|a − b| / max(|b|, floor)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

/// Matches each eigenvalue of `a` to a distinct nearest one in `b` and
/// returns the worst distance. Both lists must have the same length.
pub fn spectrum_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for &(ar, ai) in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, &(br, bi))| (k, (ar - br).hypot(ai - bi)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

pub fn eigen_pairs(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    m.complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect()
}
