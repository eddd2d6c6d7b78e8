use std::collections::VecDeque;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{NetworkData, NetworkError, ReducedNetwork};

/// Constant admittance drawing `s` at the given lagging power factor when the
/// bus sits at 1 p.u.
fn load_admittance(s: f64, pf: f64) -> Complex64 {
    let sin_phi = (1.0 - pf * pf).max(0.0).sqrt();
    Complex64::new(s * pf, -s * sin_phi)
}

/// Full nodal admittance matrix in p.u. Node order: IBR internal buses, then
/// main buses in table order.
pub(crate) fn nodal_admittance(
    data: &NetworkData,
    load_scale: &[f64],
) -> Result<DMatrix<Complex64>, NetworkError> {
    if load_scale.len() != data.buses.len() {
        return Err(NetworkError::LoadScaleLength {
            got: load_scale.len(),
            want: data.buses.len(),
        });
    }
    data.validate()?;
    let pu = data.to_per_unit()?;
    let node = pu.node_of_bus();
    let total = pu.n_ibr() + pu.buses.len();
    let mut y = DMatrix::<Complex64>::zeros(total, total);
    let mut series = |a: usize, b: usize, r: f64, x: f64| {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    };
    for l in &pu.lines {
        series(node[&l.from], node[&l.to], l.r, l.x);
    }
    for c in &pu.connectors {
        series(c.ibr - 1, node[&c.bus], c.r, c.x);
    }
    for ld in &pu.loads {
        let k = pu.bus_position(ld.bus).expect("validated");
        y[(node[&ld.bus], node[&ld.bus])] += load_admittance(ld.s * load_scale[k], ld.pf);
    }
    Ok(y)
}

/// Eliminates every main bus by a Schur complement and returns the reduced
/// conductance/susceptance seen between IBR internal buses.
///
/// `load_scale` has one multiplier per entry of the bus table; the load
/// admittance at that bus is scaled by it.
pub fn kron_reduce(data: &NetworkData, load_scale: &[f64]) -> Result<ReducedNetwork, NetworkError> {
    let y = nodal_admittance(data, load_scale)?;
    let n = data.n_ibr();
    let total = y.nrows();
    let m = total - n;

    let stranded = stranded_without_shunt(&y, n);
    if !stranded.is_empty() {
        return Err(NetworkError::SingularReduction(
            stranded.into_iter().map(|k| data.buses[k - n].id).collect(),
        ));
    }

    let yaa = y.view((0, 0), (n, n)).into_owned();
    let ybb = y.view((n, n), (m, m)).into_owned();
    let yab = y.view((0, n), (n, m)).into_owned();
    let yba = y.view((n, 0), (m, n)).into_owned();

    let yred = if m == 0 {
        yaa
    } else {
        let x = ybb.lu().solve(&yba).ok_or_else(|| {
            NetworkError::SingularReduction(data.buses.iter().map(|b| b.id).collect())
        })?;
        yaa - yab * x
    };
    let g = yred.map(|c| c.re);
    let b = yred.map(|c| c.im);
    ReducedNetwork::new(symmetrize(g), symmetrize(b))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eliminated nodes whose connected component contains no retained node and
/// no shunt element: their block of the admittance matrix is singular.
fn stranded_without_shunt(y: &DMatrix<Complex64>, n_retained: usize) -> Vec<usize> {
    let total = y.nrows();
    let mut comp = vec![usize::MAX; total];
    let mut out = Vec::new();
    for start in n_retained..total {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut members = Vec::new();
        let mut q = VecDeque::from([start]);
        comp[start] = start;
        while let Some(i) = q.pop_front() {
            members.push(i);
            for j in 0..total {
                if j != i && y[(i, j)].norm() > 0.0 && comp[j] == usize::MAX {
                    comp[j] = start;
                    q.push_back(j);
                }
            }
        }
        let touches_retained = members.iter().any(|&i| i < n_retained);
        let shunt: Complex64 = members
            .iter()
            .map(|&i| (0..total).map(|j| y[(i, j)]).sum::<Complex64>())
            .sum();
        if !touches_retained && shunt.norm() < 1e-14 {
            members.sort_unstable();
            out.extend(members);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::two_bus;
    use crate::network::{Bus, BusKind, Connector, Line, Load, Unit};
    use approx::assert_abs_diff_eq;

    #[test]
    fn load_admittance_draws_rated_power() {
        let y = load_admittance(0.9, 0.85);
        // S = V^2 conj(y) at V = 1.
        let s = y.conj();
        assert_abs_diff_eq!(s.re, 0.9 * 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(s.im, 0.9 * (1.0f64 - 0.85 * 0.85).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn nothing_to_eliminate_when_ibrs_attach_directly() {
        // Two internal buses joined by one connector-line-connector chain of
        // zero-length is not representable, so build a network whose only
        // main buses are eliminated trivially: series chain collapses.
        let d = two_bus(0.1, 0.2);
        let red = kron_reduce(&d, &[1.0, 1.0]).unwrap();
        let z = Complex64::new(0.1, 0.2 + 2e-3);
        let y = Complex64::new(1.0, 0.0) / z;
        assert_abs_diff_eq!(red.g()[(0, 0)], y.re, epsilon = 1e-10);
        assert_abs_diff_eq!(red.b()[(0, 1)], -y.im, epsilon = 1e-10);
    }

    #[test]
    fn junction_elimination_matches_series_combination() {
        // IBR1 -- y1 -- J -- y2 -- IBR2, with connectors carrying the
        // admittances and J the only main bus.
        let d = NetworkData {
            bases: two_bus(1.0, 1.0).bases,
            buses: vec![Bus {
                id: 7,
                kind: BusKind::Junction,
            }],
            lines: vec![],
            connectors: vec![
                Connector {
                    ibr: 1,
                    bus: 7,
                    r: 0.1,
                    x: 0.3,
                },
                Connector {
                    ibr: 2,
                    bus: 7,
                    r: 0.2,
                    x: 0.1,
                },
            ],
            loads: vec![],
            impedance_unit: Unit::PerUnit,
            power_unit: Unit::PerUnit,
        };
        let red = kron_reduce(&d, &[1.0]).unwrap();
        let y1 = Complex64::new(1.0, 0.0) / Complex64::new(0.1, 0.3);
        let y2 = Complex64::new(1.0, 0.0) / Complex64::new(0.2, 0.1);
        let transfer = y1 * y2 / (y1 + y2);
        let off = Complex64::new(red.g()[(0, 1)], red.b()[(0, 1)]);
        assert_abs_diff_eq!((-off - transfer).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(off.norm(), transfer.norm(), epsilon = 1e-12);
    }

    #[test]
    fn stranded_island_is_reported() {
        let mut d = two_bus(0.1, 0.2);
        d.buses.push(Bus {
            id: 5,
            kind: BusKind::Junction,
        });
        d.buses.push(Bus {
            id: 6,
            kind: BusKind::Junction,
        });
        d.lines.push(Line {
            from: 5,
            to: 6,
            r: 0.1,
            x: 0.1,
        });
        // Bypass validation to exercise the reduction check itself.
        let y = {
            let mut d2 = d.clone();
            d2.lines.push(Line {
                from: 2,
                to: 5,
                r: 0.1,
                x: 0.1,
            });
            nodal_admittance(&d2, &[1.0; 4]).unwrap()
        };
        // Sever the 2-5 link inside the assembled matrix.
        let mut y = y;
        let (a, b) = (3, 4);
        let ys = -y[(a, b)];
        y[(a, b)] = Complex64::new(0.0, 0.0);
        y[(b, a)] = Complex64::new(0.0, 0.0);
        y[(a, a)] -= ys;
        y[(b, b)] -= ys;
        assert_eq!(stranded_without_shunt(&y, 2), vec![4, 5]);
        // Validation already refuses the disconnected data.
        assert!(kron_reduce(&d, &[1.0; 4]).is_err());
        // With a shunt load the island is regular.
        y[(4, 4)] += Complex64::new(0.5, -0.1);
        assert!(stranded_without_shunt(&y, 2).is_empty());
    }

    #[test]
    fn load_scale_length_checked() {
        let mut d = two_bus(0.1, 0.2);
        d.loads.push(Load {
            bus: 1,
            s: 0.5,
            pf: 0.9,
        });
        assert!(matches!(
            kron_reduce(&d, &[1.0]),
            Err(NetworkError::LoadScaleLength { got: 1, want: 2 })
        ));
    }
}
