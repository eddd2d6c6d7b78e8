//! Physical AC network: bus/line/load data, per-unit normalisation, Kron
//! reduction onto the IBR internal buses, and power flow with Jacobians.

mod flow;
mod kron;

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

pub use flow::{LinearizedModel, ReducedNetwork};
pub use kron::kron_reduce;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(
        "base values must be positive and finite (S_base={s_base}, V_base={v_base}, f_nom={f_nom})"
    )]
    BadBase {
        s_base: f64,
        v_base: f64,
        f_nom: f64,
    },
    #[error("invalid network data:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("eliminated buses {0:?} form an island with no path to any IBR")]
    SingularReduction(Vec<usize>),
    #[error("load scale vector has {got} entries, network has {want} buses")]
    LoadScaleLength { got: usize, want: usize },
    #[error("dimension mismatch: expected {want}, got {got}")]
    Dimension { want: usize, got: usize },
    #[error("reduced network is not reciprocal (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

/// Physical unit of an impedance or power table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Unit {
    /// Ohm for impedances, VA for powers.
    #[default]
    Si,
    PerUnit,
}

impl Unit {
    pub fn parse(s: &str, si_name: &str) -> Option<Self> {
        match s {
            "pu" | "p.u." => Some(Unit::PerUnit),
            s if s.eq_ignore_ascii_case(si_name) => Some(Unit::Si),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    /// Three-phase apparent power base, VA.
    pub s_base: f64,
    /// Voltage base, V RMS.
    pub v_base: f64,
    /// Nominal frequency, Hz.
    pub f_nom: f64,
}

impl Bases {
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn omega_nom(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_nom
    }

    fn check(&self) -> Result<(), NetworkError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.s_base) && ok(self.v_base) && ok(self.f_nom) {
            Ok(())
        } else {
            Err(NetworkError::BadBase {
                s_base: self.s_base,
                v_base: self.v_base,
                f_nom: self.f_nom,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    IbrTerminal,
    Load,
    Junction,
}

impl BusKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BusKind::IbrTerminal => "ibr",
            BusKind::Load => "load",
            BusKind::Junction => "junction",
        }
    }
}

impl std::str::FromStr for BusKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ibr" | "ibr-terminal" => Ok(BusKind::IbrTerminal),
            "load" => Ok(BusKind::Load),
            "junction" => Ok(BusKind::Junction),
            other => Err(format!("unknown bus kind `{other}`")),
        }
    }
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
}

/// Series branch between two main buses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// Output connector of IBR `ibr` (1-based) joining its internal bus to main
/// bus `bus`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connector {
    pub ibr: usize,
    pub bus: usize,
    pub r: f64,
    pub x: f64,
}

/// Lagging-power-factor load at a main bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub s: f64,
    pub pf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub bases: Bases,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub connectors: Vec<Connector>,
    pub loads: Vec<Load>,
    pub impedance_unit: Unit,
    pub power_unit: Unit,
}

impl NetworkData {
    /// Number of IBRs (one connector each).
    pub fn n_ibr(&self) -> usize {
        self.connectors.len()
    }

    /// Position of bus `id` in the bus table.
    pub fn bus_position(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Load scale vector with every entry 1.
    pub fn unit_load_scale(&self) -> Vec<f64> {
        vec![1.0; self.buses.len()]
    }

    /// Every semantic problem with the data, not just the first.
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.bases.check() {
            out.push(e.to_string());
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id) {
                out.push(format!("duplicate bus {}", b.id));
            }
        }
        let known = |id: usize| ids.contains(&id);
        let bad_z =
            |r: f64, x: f64| !(r.is_finite() && x.is_finite()) || r < 0.0 || (r == 0.0 && x == 0.0);
        for (k, l) in self.lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if !known(end) {
                    out.push(format!(
                        "line {} ({}-{}) references unknown bus {end}",
                        k + 1,
                        l.from,
                        l.to
                    ));
                }
            }
            if l.from == l.to {
                out.push(format!("line {} connects bus {} to itself", k + 1, l.from));
            }
            if bad_z(l.r, l.x) {
                out.push(format!(
                    "line {} ({}-{}) has invalid impedance r={} x={}",
                    k + 1,
                    l.from,
                    l.to,
                    l.r,
                    l.x
                ));
            }
        }
        let n = self.connectors.len();
        if n == 0 {
            out.push("network has no IBR connectors".to_string());
        }
        let mut seen_ibr = vec![false; n];
        for c in &self.connectors {
            if c.ibr == 0 || c.ibr > n {
                out.push(format!(
                    "connector references IBR {} outside 1..={n}",
                    c.ibr
                ));
            } else if std::mem::replace(&mut seen_ibr[c.ibr - 1], true) {
                out.push(format!("IBR {} has more than one connector", c.ibr));
            }
            if !known(c.bus) {
                out.push(format!(
                    "connector of IBR {} references unknown bus {}",
                    c.ibr, c.bus
                ));
            }
            if bad_z(c.r, c.x) {
                out.push(format!(
                    "connector of IBR {} has invalid impedance r={} x={}",
                    c.ibr, c.r, c.x
                ));
            }
        }
        let mut loaded = HashSet::new();
        for ld in &self.loads {
            if !known(ld.bus) {
                out.push(format!("load references unknown bus {}", ld.bus));
            } else if !loaded.insert(ld.bus) {
                out.push(format!("bus {} has more than one load", ld.bus));
            }
            if !(ld.pf > 0.0 && ld.pf <= 1.0) {
                out.push(format!(
                    "load at bus {} has power factor {} outside (0, 1]",
                    ld.bus, ld.pf
                ));
            }
            if !(ld.s.is_finite() && ld.s >= 0.0) {
                out.push(format!(
                    "load at bus {} has invalid apparent power {}",
                    ld.bus, ld.s
                ));
            }
        }
        if out.is_empty() {
            let islands = self.unreached_buses();
            if !islands.is_empty() {
                out.push(format!(
                    "buses {islands:?} are not electrically connected to IBR 1"
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(NetworkError::Invalid(issues))
        }
    }

    /// Normalises impedances by `Z_base = V_base^2 / S_base` and powers by
    /// `S_base`. Tables already in p.u. are left untouched.
    pub fn to_per_unit(&self) -> Result<NetworkData, NetworkError> {
        self.bases.check()?;
        let mut out = self.clone();
        if self.impedance_unit == Unit::Si {
            let zb = self.bases.z_base();
            for l in &mut out.lines {
                l.r /= zb;
                l.x /= zb;
            }
            for c in &mut out.connectors {
                c.r /= zb;
                c.x /= zb;
            }
            out.impedance_unit = Unit::PerUnit;
        }
        if self.power_unit == Unit::Si {
            for ld in &mut out.loads {
                ld.s /= self.bases.s_base;
            }
            out.power_unit = Unit::PerUnit;
        }
        Ok(out)
    }

    /// Node numbering used for admittance assembly: IBR internal buses
    /// `0..n`, then main buses in table order.
    pub(crate) fn node_of_bus(&self) -> HashMap<usize, usize> {
        let n = self.n_ibr();
        self.buses
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, n + k))
            .collect()
    }

    /// Bus ids with no electrical path to the internal bus of IBR 1.
    fn unreached_buses(&self) -> Vec<usize> {
        let n = self.n_ibr();
        let node = self.node_of_bus();
        let total = n + self.buses.len();
        let mut adj = vec![Vec::new(); total];
        let mut link = |a: usize, b: usize| {
            adj[a].push(b);
            adj[b].push(a);
        };
        for l in &self.lines {
            link(node[&l.from], node[&l.to]);
        }
        for c in &self.connectors {
            link(c.ibr - 1, node[&c.bus]);
        }
        let mut seen = vec![false; total];
        let mut q = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = q.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
        let mut out: BTreeSet<usize> = BTreeSet::new();
        for (k, b) in self.buses.iter().enumerate() {
            if !seen[n + k] {
                out.insert(b.id);
            }
        }
        // Report the terminal bus of a stranded IBR.
        for (i, _) in seen[..n].iter().enumerate().filter(|(_, s)| !**s) {
            if let Some(c) = self.connectors.iter().find(|c| c.ibr == i + 1) {
                out.insert(c.bus);
            }
        }
        out.into_iter().collect()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_bus(r: f64, x: f64) -> NetworkData {
        NetworkData {
            bases: Bases {
                s_base: 1.0,
                v_base: 1.0,
                f_nom: 50.0,
            },
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusKind::IbrTerminal,
                },
                Bus {
                    id: 2,
                    kind: BusKind::IbrTerminal,
                },
            ],
            lines: vec![Line {
                from: 1,
                to: 2,
                r,
                x,
            }],
            connectors: vec![
                Connector {
                    ibr: 1,
                    bus: 1,
                    r: 0.0,
                    x: 1e-3,
                },
                Connector {
                    ibr: 2,
                    bus: 2,
                    r: 0.0,
                    x: 1e-3,
                },
            ],
            loads: vec![],
            impedance_unit: Unit::PerUnit,
            power_unit: Unit::PerUnit,
        }
    }

    #[test]
    fn per_unit_conversion() {
        let mut d = two_bus(0.2, 0.3);
        d.bases = Bases {
            s_base: 100e3,
            v_base: 220.0,
            f_nom: 50.0,
        };
        d.impedance_unit = Unit::Si;
        d.connectors[0].r = 0.03;
        d.connectors[0].x = 0.09;
        let pu = d.to_per_unit().unwrap();
        assert_abs_diff_eq!(d.bases.z_base(), 0.484, epsilon = 1e-15);
        assert_abs_diff_eq!(pu.lines[0].r, 0.41322, epsilon = 1e-5);
        assert_abs_diff_eq!(pu.connectors[0].r, 0.06198, epsilon = 1e-5);
        assert_abs_diff_eq!(pu.connectors[0].x, 0.18595, epsilon = 1e-5);
        assert_eq!(pu.impedance_unit, Unit::PerUnit);

        let already = two_bus(0.2, 0.3);
        assert_eq!(already.to_per_unit().unwrap(), already);
    }

    #[test]
    fn per_unit_rejects_bad_base() {
        let mut d = two_bus(0.2, 0.3);
        d.bases.s_base = 0.0;
        assert!(matches!(d.to_per_unit(), Err(NetworkError::BadBase { .. })));
        d.bases.s_base = 1.0;
        d.bases.v_base = -220.0;
        assert!(matches!(d.to_per_unit(), Err(NetworkError::BadBase { .. })));
    }

    #[test]
    fn issues_are_exhaustive() {
        let mut d = two_bus(-0.1, 0.3);
        d.loads.push(Load {
            bus: 9,
            s: 1.0,
            pf: 1.2,
        });
        d.buses.push(Bus {
            id: 2,
            kind: BusKind::Load,
        });
        let issues = d.issues();
        assert!(issues.iter().any(|s| s.contains("duplicate bus 2")));
        assert!(issues.iter().any(|s| s.contains("invalid impedance")));
        assert!(issues.iter().any(|s| s.contains("unknown bus 9")));
        assert!(issues.iter().any(|s| s.contains("power factor")));
    }

    #[test]
    fn detects_islands() {
        let mut d = two_bus(0.1, 0.3);
        d.buses.push(Bus {
            id: 3,
            kind: BusKind::Load,
        });
        d.buses.push(Bus {
            id: 4,
            kind: BusKind::Junction,
        });
        d.lines.push(Line {
            from: 3,
            to: 4,
            r: 0.1,
            x: 0.1,
        });
        let issues = d.issues();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].contains("[3, 4]"));
    }
}
