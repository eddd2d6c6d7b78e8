//! Scenario file format.
//!
//! A sectioned, line-oriented text format. `#` starts a comment. Section
//! headers are `[name]` or `[name unit]`, where the unit applies to the whole
//! table (`ohm`/`pu` for impedances, `va`/`pu` for powers). Key/value
//! sections use `key = value`; table sections use whitespace-separated
//! columns. Bus and IBR indices are 1-based.
//!
//! ```text
//! [bases]
//! s_base_va = 100000
//! v_base_v = 220
//! f_nom_hz = 50
//!
//! [buses]          # id kind
//! 1 load
//! [lines ohm]      # from to r x
//! [connectors ohm] # ibr bus r x
//! [loads pu]       # bus s pf
//! [ibrs pu]        # ibr s_rated v_min v_max
//! [graph]          # i j [weight]
//! [controller]     # mode, v_nom, tau_*, beta, m_omega, m_v | m_v_volts, k | k_d
//! [events]         # t activate | t scale-load bus factor | t set-limits v_min v_max [ibr]
//! [simulation]     # t_end, rel_tol, abs_tol, sample_ms, max_step, fixed_step
//! [outputs]        # dir, channels
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::{ControlGains, ControllerSet, IbrParams, Mode};
use crate::graph::CommGraph;
use crate::network::{Bases, Bus, Connector, Line, Load, NetworkData, Unit};
use crate::ode::OdeOptions;
use crate::sim::{Channel, Event, EventKind, Scenario};
use crate::tuner;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line} [{section}]: {message}")]
    Parse {
        line: usize,
        section: String,
        message: String,
    },
    #[error("scenario has {} semantic error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Semantic(Vec<String>),
}

const LV5: &str = include_str!("../scenarios/lv5.scn");
const MV9_TEMPLATE: &str = include_str!("../scenarios/mv9-template.scn");

/// Names of the scenarios shipped with the crate.
pub const BUNDLED: [&str; 2] = ["lv5", "mv9-template"];

pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "lv5" => Some(LV5),
        "mv9-template" => Some(MV9_TEMPLATE),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoltageDroop {
    PerUnit(f64),
    Volts(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConsensusGain {
    /// Gain used as is.
    K(f64),
    /// Desired gain; the effective gain is `k_d / σ₂`.
    Kd(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrRow {
    pub ibr: usize,
    pub s_rated: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerSection {
    pub mode: Mode,
    pub v_nom: f64,
    pub tau_omega: f64,
    pub tau_v: f64,
    pub tau_p: f64,
    pub tau_d: f64,
    pub beta: f64,
    pub m_omega: f64,
    pub m_v: VoltageDroop,
    pub consensus: ConsensusGain,
    /// Acceptable steady-state sharing error, used only for warnings.
    pub sharing_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSection {
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub sample_ms: f64,
    pub max_step: Option<f64>,
    pub fixed_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputsSection {
    pub dir: Option<String>,
    /// Empty means every channel.
    pub channels: Vec<Channel>,
}

/// In-memory image of a scenario file, before per-unit conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub bases: Bases,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub line_unit: Unit,
    pub connectors: Vec<Connector>,
    pub connector_unit: Unit,
    pub loads: Vec<Load>,
    pub load_unit: Unit,
    pub ibrs: Vec<IbrRow>,
    pub ibr_unit: Unit,
    pub graph: Vec<(usize, usize, Option<f64>)>,
    pub controller: ControllerSection,
    pub events: Vec<Event>,
    pub simulation: SimulationSection,
    pub outputs: OutputsSection,
}

/// A parsed and validated scenario with any non-fatal findings.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

/// Reads a scenario by bundled name or file path.
pub fn load(name_or_path: &str) -> Result<LoadedScenario, ScenarioError> {
    let text = match bundled(name_or_path) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(Path::new(name_or_path)).map_err(|source| {
            ScenarioError::Io {
                path: name_or_path.to_string(),
                source,
            }
        })?,
    };
    ScenarioFile::parse(&text)?.build()
}

struct Cursor {
    line: usize,
    section: String,
}

impl Cursor {
    fn err(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line,
            section: self.section.clone(),
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, tok: &str, what: &str) -> Result<T, ScenarioError> {
        tok.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from `{tok}`")))
    }

    fn cols<'a>(
        &self,
        toks: &'a [&'a str],
        min: usize,
        max: usize,
        shape: &str,
    ) -> Result<&'a [&'a str], ScenarioError> {
        if toks.len() < min || toks.len() > max {
            Err(self.err(format!("expected `{shape}`, got {} column(s)", toks.len())))
        } else {
            Ok(toks)
        }
    }
}

#[derive(Default)]
struct Partial {
    bases: [Option<f64>; 3],
    controller: Vec<(String, String, usize)>,
    simulation: Vec<(String, String, usize)>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut cur = Cursor {
            line: 0,
            section: String::new(),
        };
        let mut seen = HashSet::new();
        let mut part = Partial::default();
        let mut f = ScenarioFile {
            bases: Bases {
                s_base: f64::NAN,
                v_base: f64::NAN,
                f_nom: f64::NAN,
            },
            buses: Vec::new(),
            lines: Vec::new(),
            line_unit: Unit::Si,
            connectors: Vec::new(),
            connector_unit: Unit::Si,
            loads: Vec::new(),
            load_unit: Unit::PerUnit,
            ibrs: Vec::new(),
            ibr_unit: Unit::PerUnit,
            graph: Vec::new(),
            controller: ControllerSection {
                mode: Mode::Droop,
                v_nom: 1.0,
                tau_omega: f64::NAN,
                tau_v: f64::NAN,
                tau_p: f64::NAN,
                tau_d: f64::NAN,
                beta: f64::NAN,
                m_omega: f64::NAN,
                m_v: VoltageDroop::PerUnit(f64::NAN),
                consensus: ConsensusGain::K(f64::NAN),
                sharing_budget: None,
            },
            events: Vec::new(),
            simulation: SimulationSection {
                t_end: f64::NAN,
                rel_tol: OdeOptions::default().rel_tol,
                abs_tol: OdeOptions::default().abs_tol,
                sample_ms: 10.0,
                max_step: None,
                fixed_step: None,
            },
            outputs: OutputsSection::default(),
        };

        for (k, raw) in text.lines().enumerate() {
            cur.line = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('[') {
                let h = h
                    .strip_suffix(']')
                    .ok_or_else(|| cur.err("unterminated section header"))?;
                let mut toks = h.split_whitespace();
                let name = toks
                    .next()
                    .ok_or_else(|| cur.err("empty section header"))?
                    .to_string();
                let unit = toks.next();
                if toks.next().is_some() {
                    return Err(cur.err("section header takes at most a name and a unit"));
                }
                cur.section = name.clone();
                if !seen.insert(name.clone()) {
                    return Err(cur.err(format!("section [{name}] appears more than once")));
                }
                let (si, default) = match name.as_str() {
                    "lines" | "connectors" => ("ohm", Unit::Si),
                    "loads" | "ibrs" => ("va", Unit::PerUnit),
                    "bases" | "buses" | "graph" | "controller" | "events" | "simulation"
                    | "outputs" => {
                        if let Some(u) = unit {
                            return Err(
                                cur.err(format!("section [{name}] takes no unit, got `{u}`"))
                            );
                        }
                        ("", Unit::PerUnit)
                    }
                    other => return Err(cur.err(format!("unknown section [{other}]"))),
                };
                let unit = match unit {
                    None => default,
                    Some(u) => Unit::parse(u, si).ok_or_else(|| {
                        cur.err(format!("unit must be `{si}` or `pu`, got `{u}`"))
                    })?,
                };
                match name.as_str() {
                    "lines" => f.line_unit = unit,
                    "connectors" => f.connector_unit = unit,
                    "loads" => f.load_unit = unit,
                    "ibrs" => f.ibr_unit = unit,
                    _ => {}
                }
                continue;
            }
            if cur.section.is_empty() {
                return Err(cur.err("content before the first section header"));
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match cur.section.as_str() {
                "bases" | "controller" | "simulation" | "outputs" => {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| cur.err("expected `key = value`"))?;
                    let (key, value) = (key.trim().to_string(), value.trim().to_string());
                    match cur.section.as_str() {
                        "bases" => {
                            let slot = match key.as_str() {
                                "s_base_va" => 0,
                                "v_base_v" => 1,
                                "f_nom_hz" => 2,
                                _ => return Err(cur.err(format!("unknown key `{key}`"))),
                            };
                            part.bases[slot] = Some(cur.num(&value, &key)?);
                        }
                        "controller" => part.controller.push((key, value, cur.line)),
                        "simulation" => part.simulation.push((key, value, cur.line)),
                        _ => match key.as_str() {
                            "dir" => f.outputs.dir = Some(value),
                            "channels" => {
                                f.outputs.channels = if value == "all" {
                                    Vec::new()
                                } else {
                                    value
                                        .split(',')
                                        .map(|c| {
                                            Channel::parse(c.trim()).ok_or_else(|| {
                                                cur.err(format!("unknown channel `{}`", c.trim()))
                                            })
                                        })
                                        .collect::<Result<_, _>>()?
                                };
                            }
                            _ => return Err(cur.err(format!("unknown key `{key}`"))),
                        },
                    }
                }
                "buses" => {
                    let t = cur.cols(&toks, 2, 2, "id kind")?;
                    f.buses.push(Bus {
                        id: cur.num(t[0], "bus id")?,
                        kind: t[1].parse().map_err(|e: String| cur.err(e))?,
                    });
                }
                "lines" => {
                    let t = cur.cols(&toks, 4, 4, "from to r x")?;
                    f.lines.push(Line {
                        from: cur.num(t[0], "from bus")?,
                        to: cur.num(t[1], "to bus")?,
                        r: cur.num(t[2], "r")?,
                        x: cur.num(t[3], "x")?,
                    });
                }
                "connectors" => {
                    let t = cur.cols(&toks, 4, 4, "ibr bus r x")?;
                    f.connectors.push(Connector {
                        ibr: cur.num(t[0], "ibr")?,
                        bus: cur.num(t[1], "bus")?,
                        r: cur.num(t[2], "r")?,
                        x: cur.num(t[3], "x")?,
                    });
                }
                "loads" => {
                    let t = cur.cols(&toks, 3, 3, "bus s pf")?;
                    f.loads.push(Load {
                        bus: cur.num(t[0], "bus")?,
                        s: cur.num(t[1], "s")?,
                        pf: cur.num(t[2], "pf")?,
                    });
                }
                "ibrs" => {
                    let t = cur.cols(&toks, 4, 4, "ibr s_rated v_min v_max")?;
                    f.ibrs.push(IbrRow {
                        ibr: cur.num(t[0], "ibr")?,
                        s_rated: cur.num(t[1], "s_rated")?,
                        v_min: cur.num(t[2], "v_min")?,
                        v_max: cur.num(t[3], "v_max")?,
                    });
                }
                "graph" => {
                    let t = cur.cols(&toks, 2, 3, "i j [weight]")?;
                    let w = match t.get(2) {
                        Some(w) => Some(cur.num(w, "weight")?),
                        None => None,
                    };
                    f.graph
                        .push((cur.num(t[0], "node")?, cur.num(t[1], "node")?, w));
                }
                "events" => {
                    let t = cur.cols(&toks, 2, 5, "t kind args...")?;
                    let time: f64 = cur.num(t[0], "event time")?;
                    let kind = match t[1] {
                        "activate" => {
                            cur.cols(t, 2, 2, "t activate")?;
                            EventKind::ActivateController
                        }
                        "scale-load" => {
                            cur.cols(t, 4, 4, "t scale-load bus factor")?;
                            EventKind::ScaleLoad {
                                bus: cur.num(t[2], "bus")?,
                                factor: cur.num(t[3], "factor")?,
                            }
                        }
                        "set-limits" => {
                            cur.cols(t, 4, 5, "t set-limits v_min v_max [ibr]")?;
                            EventKind::SetLimits {
                                v_min: cur.num(t[2], "v_min")?,
                                v_max: cur.num(t[3], "v_max")?,
                                ibr: match t.get(4) {
                                    Some(i) => Some(cur.num(i, "ibr")?),
                                    None => None,
                                },
                            }
                        }
                        other => return Err(cur.err(format!("unknown event kind `{other}`"))),
                    };
                    f.events.push(Event { t: time, kind });
                }
                _ => unreachable!(),
            }
        }

        for required in [
            "bases",
            "buses",
            "connectors",
            "ibrs",
            "graph",
            "controller",
            "simulation",
        ] {
            if !seen.contains(required) {
                cur.section = required.to_string();
                return Err(cur.err(format!("missing required section [{required}]")));
            }
        }
        let [s, v, fnom] = part.bases;
        cur.section = "bases".into();
        f.bases = Bases {
            s_base: s.ok_or_else(|| cur.err("missing s_base_va"))?,
            v_base: v.ok_or_else(|| cur.err("missing v_base_v"))?,
            f_nom: fnom.ok_or_else(|| cur.err("missing f_nom_hz"))?,
        };
        f.controller = parse_controller(&part.controller, &mut cur)?;
        f.simulation = parse_simulation(&part.simulation, &mut cur)?;
        Ok(f)
    }

    /// Canonical text form; `parse(serialize(f)) == f`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let unit = |u: Unit, si: &str| match u {
            Unit::Si => format!(" {si}"),
            Unit::PerUnit => " pu".to_string(),
        };
        let b = &self.bases;
        let _ = writeln!(
            s,
            "[bases]\ns_base_va = {}\nv_base_v = {}\nf_nom_hz = {}\n",
            b.s_base, b.v_base, b.f_nom
        );
        s.push_str("[buses]\n");
        for bus in &self.buses {
            let _ = writeln!(s, "{} {}", bus.id, bus.kind);
        }
        let _ = writeln!(s, "\n[lines{}]", unit(self.line_unit, "ohm"));
        for l in &self.lines {
            let _ = writeln!(s, "{} {} {} {}", l.from, l.to, l.r, l.x);
        }
        let _ = writeln!(s, "\n[connectors{}]", unit(self.connector_unit, "ohm"));
        for c in &self.connectors {
            let _ = writeln!(s, "{} {} {} {}", c.ibr, c.bus, c.r, c.x);
        }
        let _ = writeln!(s, "\n[loads{}]", unit(self.load_unit, "va"));
        for l in &self.loads {
            let _ = writeln!(s, "{} {} {}", l.bus, l.s, l.pf);
        }
        let _ = writeln!(s, "\n[ibrs{}]", unit(self.ibr_unit, "va"));
        for r in &self.ibrs {
            let _ = writeln!(s, "{} {} {} {}", r.ibr, r.s_rated, r.v_min, r.v_max);
        }
        s.push_str("\n[graph]\n");
        for (i, j, w) in &self.graph {
            match w {
                Some(w) => writeln!(s, "{i} {j} {w}"),
                None => writeln!(s, "{i} {j}"),
            }
            .unwrap();
        }
        let c = &self.controller;
        s.push_str("\n[controller]\n");
        let _ = writeln!(
            s,
            "mode = {}\nv_nom = {}\ntau_omega = {}\ntau_v = {}\ntau_p = {}\ntau_d = {}\nbeta = {}\nm_omega = {}",
            match c.mode {
                Mode::Droop => "droop",
                Mode::Proposed => "proposed",
            },
            c.v_nom,
            c.tau_omega,
            c.tau_v,
            c.tau_p,
            c.tau_d,
            c.beta,
            c.m_omega
        );
        let _ = match c.m_v {
            VoltageDroop::PerUnit(x) => writeln!(s, "m_v = {x}"),
            VoltageDroop::Volts(x) => writeln!(s, "m_v_volts = {x}"),
        };
        let _ = match c.consensus {
            ConsensusGain::K(x) => writeln!(s, "k = {x}"),
            ConsensusGain::Kd(x) => writeln!(s, "k_d = {x}"),
        };
        if let Some(b) = c.sharing_budget {
            let _ = writeln!(s, "sharing_budget = {b}");
        }
        s.push_str("\n[events]\n");
        for e in &self.events {
            let _ = match &e.kind {
                EventKind::ActivateController => writeln!(s, "{} activate", e.t),
                EventKind::ScaleLoad { bus, factor } => {
                    writeln!(s, "{} scale-load {bus} {factor}", e.t)
                }
                EventKind::SetLimits { ibr, v_min, v_max } => match ibr {
                    Some(i) => writeln!(s, "{} set-limits {v_min} {v_max} {i}", e.t),
                    None => writeln!(s, "{} set-limits {v_min} {v_max}", e.t),
                },
            };
        }
        let m = &self.simulation;
        let _ = writeln!(
            s,
            "\n[simulation]\nt_end = {}\nrel_tol = {}\nabs_tol = {}\nsample_ms = {}",
            m.t_end, m.rel_tol, m.abs_tol, m.sample_ms
        );
        if let Some(h) = m.max_step {
            let _ = writeln!(s, "max_step = {h}");
        }
        if let Some(h) = m.fixed_step {
            let _ = writeln!(s, "fixed_step = {h}");
        }
        s.push_str("\n[outputs]\n");
        if let Some(d) = &self.outputs.dir {
            let _ = writeln!(s, "dir = {d}");
        }
        let chans = if self.outputs.channels.is_empty() {
            "all".to_string()
        } else {
            self.outputs
                .channels
                .iter()
                .map(|c| c.name())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "channels = {chans}");
        s
    }

    fn impedance_to_pu(&self, unit: Unit, r: f64, x: f64) -> (f64, f64) {
        match unit {
            Unit::PerUnit => (r, x),
            Unit::Si => {
                let zb = self.bases.z_base();
                (r / zb, x / zb)
            }
        }
    }

    fn power_to_pu(&self, unit: Unit, s: f64) -> f64 {
        match unit {
            Unit::PerUnit => s,
            Unit::Si => s / self.bases.s_base,
        }
    }

    /// Network data normalised to p.u.
    pub fn network(&self) -> NetworkData {
        NetworkData {
            bases: self.bases,
            buses: self.buses.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| {
                    let (r, x) = self.impedance_to_pu(self.line_unit, l.r, l.x);
                    Line { r, x, ..*l }
                })
                .collect(),
            connectors: self
                .connectors
                .iter()
                .map(|c| {
                    let (r, x) = self.impedance_to_pu(self.connector_unit, c.r, c.x);
                    Connector { r, x, ..*c }
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| Load {
                    s: self.power_to_pu(self.load_unit, l.s),
                    ..*l
                })
                .collect(),
            impedance_unit: Unit::PerUnit,
            power_unit: Unit::PerUnit,
        }
    }

    /// Validates every cross-reference and assembles the simulation inputs.
    /// All semantic problems are collected before failing.
    pub fn build(&self) -> Result<LoadedScenario, ScenarioError> {
        let mut issues = Vec::new();
        let network = self.network();
        issues.extend(network.issues());

        let n = self.ibrs.len();
        let mut seen = vec![false; n];
        for r in &self.ibrs {
            if r.ibr == 0 || r.ibr > n {
                issues.push(format!("[ibrs] IBR {} outside 1..={n}", r.ibr));
            } else if std::mem::replace(&mut seen[r.ibr - 1], true) {
                issues.push(format!("[ibrs] IBR {} listed more than once", r.ibr));
            }
        }
        if self.connectors.len() != n {
            issues.push(format!(
                "{} IBRs configured but {} connectors given",
                n,
                self.connectors.len()
            ));
        }
        let graph = match CommGraph::from_one_based(
            n,
            self.graph.iter().map(|&(i, j, w)| (i, j, w.unwrap_or(1.0))),
        ) {
            Ok(g) => Some(g),
            Err(e) => {
                issues.push(format!("[graph] {e}"));
                None
            }
        };

        let c = &self.controller;
        let m_v = match c.m_v {
            VoltageDroop::PerUnit(x) => x,
            VoltageDroop::Volts(x) => x / self.bases.v_base,
        };
        let k = match (c.consensus, &graph) {
            (ConsensusGain::K(k), _) => k,
            (ConsensusGain::Kd(kd), Some(g)) => kd / g.algebraic_connectivity(),
            (ConsensusGain::Kd(_), None) => f64::NAN,
        };
        let mut rows = self.ibrs.clone();
        rows.sort_by_key(|r| r.ibr);
        let controllers = ControllerSet {
            ibrs: rows
                .iter()
                .map(|r| IbrParams {
                    s_rated: self.power_to_pu(self.ibr_unit, r.s_rated),
                    m_omega: c.m_omega,
                    m_v,
                    v_min: r.v_min,
                    v_max: r.v_max,
                })
                .collect(),
            gains: ControlGains {
                tau_omega: c.tau_omega,
                tau_v: c.tau_v,
                tau_p: c.tau_p,
                tau_d: c.tau_d,
                beta: c.beta,
                k,
            },
            v_nom: c.v_nom,
        };
        let m = &self.simulation;
        let ode = OdeOptions {
            rel_tol: m.rel_tol,
            abs_tol: m.abs_tol,
            max_step: m.max_step.unwrap_or(f64::INFINITY),
            fixed_step: m.fixed_step,
            ..OdeOptions::default()
        };
        if !(m.rel_tol > 0.0 && m.abs_tol > 0.0) {
            issues.push("[simulation] tolerances must be positive".into());
        }
        if let Some(h) = m
            .fixed_step
            .into_iter()
            .chain(m.max_step)
            .find(|h| !(*h > 0.0))
        {
            issues.push(format!("[simulation] step sizes must be positive, got {h}"));
        }
        let Some(graph) = graph else {
            return Err(ScenarioError::Semantic(issues));
        };
        let scenario = Scenario {
            network,
            graph,
            controllers,
            initial_mode: c.mode,
            initial_state: None,
            t_end: m.t_end,
            ode,
            sample_dt: m.sample_ms / 1000.0,
            events: self.events.clone(),
        };
        for s in scenario.issues() {
            if !issues.contains(&s) {
                issues.push(s);
            }
        }
        if !issues.is_empty() {
            return Err(ScenarioError::Semantic(issues));
        }
        let warnings = tuner::validate(&scenario.controllers, c.sharing_budget)
            .violations
            .into_iter()
            .map(|v| v.to_string())
            .chain(tuner::response_time_warning(
                scenario.controllers.gains.tau_v,
            ))
            .collect();
        Ok(LoadedScenario {
            file: self.clone(),
            scenario,
            warnings,
        })
    }
}

fn parse_controller(
    kv: &[(String, String, usize)],
    cur: &mut Cursor,
) -> Result<ControllerSection, ScenarioError> {
    cur.section = "controller".into();
    let mut c = ControllerSection {
        mode: Mode::Droop,
        v_nom: 1.0,
        tau_omega: f64::NAN,
        tau_v: f64::NAN,
        tau_p: f64::NAN,
        tau_d: f64::NAN,
        beta: f64::NAN,
        m_omega: f64::NAN,
        m_v: VoltageDroop::PerUnit(f64::NAN),
        consensus: ConsensusGain::K(f64::NAN),
        sharing_budget: None,
    };
    let mut have = HashSet::new();
    for (key, value, line) in kv {
        cur.line = *line;
        if !have.insert(key.as_str()) {
            return Err(cur.err(format!("duplicate key `{key}`")));
        }
        match key.as_str() {
            "mode" => {
                c.mode = match value.as_str() {
                    "droop" => Mode::Droop,
                    "proposed" => Mode::Proposed,
                    other => {
                        return Err(
                            cur.err(format!("mode must be droop or proposed, got `{other}`"))
                        )
                    }
                }
            }
            "v_nom" => c.v_nom = cur.num(value, key)?,
            "tau_omega" => c.tau_omega = cur.num(value, key)?,
            "tau_v" => c.tau_v = cur.num(value, key)?,
            "tau_p" => c.tau_p = cur.num(value, key)?,
            "tau_d" => c.tau_d = cur.num(value, key)?,
            "beta" => c.beta = cur.num(value, key)?,
            "m_omega" => c.m_omega = cur.num(value, key)?,
            "m_v" => c.m_v = VoltageDroop::PerUnit(cur.num(value, key)?),
            "m_v_volts" => c.m_v = VoltageDroop::Volts(cur.num(value, key)?),
            "k" => c.consensus = ConsensusGain::K(cur.num(value, key)?),
            "k_d" => c.consensus = ConsensusGain::Kd(cur.num(value, key)?),
            "sharing_budget" => c.sharing_budget = Some(cur.num(value, key)?),
            _ => return Err(cur.err(format!("unknown key `{key}`"))),
        }
    }
    if have.contains("m_v") && have.contains("m_v_volts") {
        return Err(cur.err("give either m_v or m_v_volts, not both"));
    }
    if have.contains("k") && have.contains("k_d") {
        return Err(cur.err("give either k or k_d, not both"));
    }
    for (req, alt) in [
        ("tau_omega", None),
        ("tau_v", None),
        ("tau_p", None),
        ("tau_d", None),
        ("beta", None),
        ("m_omega", None),
        ("m_v", Some("m_v_volts")),
        ("k", Some("k_d")),
    ] {
        if !have.contains(req) && !alt.is_some_and(|a| have.contains(a)) {
            return Err(cur.err(format!("missing key `{req}`")));
        }
    }
    Ok(c)
}

fn parse_simulation(
    kv: &[(String, String, usize)],
    cur: &mut Cursor,
) -> Result<SimulationSection, ScenarioError> {
    cur.section = "simulation".into();
    let d = OdeOptions::default();
    let mut s = SimulationSection {
        t_end: f64::NAN,
        rel_tol: d.rel_tol,
        abs_tol: d.abs_tol,
        sample_ms: 10.0,
        max_step: None,
        fixed_step: None,
    };
    let mut have = HashSet::new();
    for (key, value, line) in kv {
        cur.line = *line;
        if !have.insert(key.as_str()) {
            return Err(cur.err(format!("duplicate key `{key}`")));
        }
        match key.as_str() {
            "t_end" => s.t_end = cur.num(value, key)?,
            "rel_tol" => s.rel_tol = cur.num(value, key)?,
            "abs_tol" => s.abs_tol = cur.num(value, key)?,
            "sample_ms" => s.sample_ms = cur.num(value, key)?,
            "max_step" => s.max_step = Some(cur.num(value, key)?),
            "fixed_step" => s.fixed_step = Some(cur.num(value, key)?),
            _ => return Err(cur.err(format!("unknown key `{key}`"))),
        }
    }
    if !have.contains("t_end") {
        return Err(cur.err("missing key `t_end`"));
    }
    Ok(s)
}
