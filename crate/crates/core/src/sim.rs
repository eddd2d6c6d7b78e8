//! Closed-loop phasor simulation of the microgrid over a scenario timeline.
//!
//! The state vector is `[θ, Ω, v, λ, ζ]` (each of length n) in a frame
//! rotating at the nominal frequency. In droop mode λ and ζ are frozen and
//! the terminal voltage is `V_nom + v`; in proposed mode it is
//! `V* + Δ tanh(v/Δ)`. Power injections are algebraic functions of the
//! current Kron-reduced network, which is rebuilt whenever a load event
//! changes the load scaling.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::controller::{
    self, integrator_rhs, leakage, state_for_voltage, voltage_output, ControllerSet,
    ControllerState, IbrParams, Mode,
};
use crate::graph::CommGraph;
use crate::network::{kron_reduce, NetworkData, NetworkError, ReducedNetwork};
use crate::ode::{self, OdeError, OdeOptions, OdeStats};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("integration failed")]
    Integration(#[from] OdeError),
    #[error("network error at t = {t}")]
    Network { t: f64, source: NetworkError },
    #[error("IBR {ibr} voltage {voltage} left ({v_min}, {v_max}) at t = {t}")]
    Containment {
        t: f64,
        ibr: usize,
        voltage: f64,
        v_min: f64,
        v_max: f64,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("time {t} outside the simulated range [{t0}, {t1}]")]
    OutOfRange { t: f64, t0: f64, t1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ActivateController,
    /// Sets the load multiplier at bus `bus` (bus id) to `factor`, relative
    /// to the nominal load.
    ScaleLoad {
        bus: usize,
        factor: f64,
    },
    /// New limits for one IBR (1-based) or, with `ibr = None`, for all.
    SetLimits {
        ibr: Option<usize>,
        v_min: f64,
        v_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: NetworkData,
    pub graph: CommGraph,
    pub controllers: ControllerSet,
    pub initial_mode: Mode,
    /// `None` is a flat start.
    pub initial_state: Option<ControllerState>,
    pub t_end: f64,
    pub ode: OdeOptions,
    pub sample_dt: f64,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.controllers.n()
    }

    pub fn omega_nom(&self) -> f64 {
        self.network.bases.omega_nom()
    }

    pub fn issues(&self) -> Vec<String> {
        let mut out = self.network.issues();
        if let Err(controller::ControllerError::Invalid(v)) = self.controllers.validate() {
            out.extend(v);
        }
        let n = self.n();
        if self.network.n_ibr() != n {
            out.push(format!(
                "network has {} IBR connectors but {} IBRs are configured",
                self.network.n_ibr(),
                n
            ));
        }
        if self.graph.n() != n {
            out.push(format!(
                "communication graph has {} nodes, expected {n}",
                self.graph.n()
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.sample_dt > 0.0) {
            out.push(format!(
                "sample interval must be positive, got {}",
                self.sample_dt
            ));
        }
        let mut prev = f64::NEG_INFINITY;
        for (k, e) in self.events.iter().enumerate() {
            let tag = format!("event {} at t={}", k + 1, e.t);
            if !(e.t >= prev) {
                out.push(format!("{tag}: events must be listed in time order"));
            }
            if e.t < 0.0 || e.t > self.t_end {
                out.push(format!("{tag}: outside [0, {}]", self.t_end));
            }
            prev = e.t;
            match &e.kind {
                EventKind::ActivateController => {}
                EventKind::ScaleLoad { bus, factor } => {
                    if self.network.bus_position(*bus).is_none() {
                        out.push(format!("{tag}: scale-load references unknown bus {bus}"));
                    }
                    if !(*factor >= 0.0 && factor.is_finite()) {
                        out.push(format!(
                            "{tag}: load factor must be non-negative, got {factor}"
                        ));
                    }
                }
                EventKind::SetLimits { ibr, v_min, v_max } => {
                    if let Some(i) = ibr {
                        if *i == 0 || *i > n {
                            out.push(format!("{tag}: set-limits references unknown IBR {i}"));
                        }
                    }
                    if !(v_min < v_max) {
                        out.push(format!("{tag}: need V_min < V_max, got ({v_min}, {v_max})"));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = self.issues();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(v))
        }
    }
}

/// Offsets of each state block inside the packed state vector.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub fn theta(&self) -> std::ops::Range<usize> {
        0..self.n
    }
    pub fn omega(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }
    pub fn v(&self) -> std::ops::Range<usize> {
        2 * self.n..3 * self.n
    }
    pub fn lambda(&self) -> std::ops::Range<usize> {
        3 * self.n..4 * self.n
    }
    pub fn zeta(&self) -> std::ops::Range<usize> {
        4 * self.n..5 * self.n
    }

    pub fn pack(&self, s: &ControllerState) -> Vec<f64> {
        [&s.theta, &s.omega, &s.v, &s.lambda, &s.zeta]
            .into_iter()
            .flat_map(|x| x.iter().copied())
            .collect()
    }

    pub fn unpack(&self, y: &[f64], mode: Mode) -> ControllerState {
        ControllerState {
            theta: y[self.theta()].to_vec(),
            omega: y[self.omega()].to_vec(),
            v: y[self.v()].to_vec(),
            lambda: y[self.lambda()].to_vec(),
            zeta: y[self.zeta()].to_vec(),
            mode,
        }
    }
}

/// Closed-loop vector field for a fixed network, graph and mode.
pub struct ClosedLoop<'a> {
    pub net: &'a ReducedNetwork,
    pub laplacian: &'a DMatrix<f64>,
    pub ctl: &'a ControllerSet,
    pub mode: Mode,
    voltage: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    q_ratio: Vec<f64>,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        net: &'a ReducedNetwork,
        laplacian: &'a DMatrix<f64>,
        ctl: &'a ControllerSet,
        mode: Mode,
    ) -> Self {
        let n = ctl.n();
        Self {
            net,
            laplacian,
            ctl,
            mode,
            voltage: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
            q_ratio: vec![0.0; n],
        }
    }

    fn layout(&self) -> Layout {
        Layout { n: self.ctl.n() }
    }

    /// Terminal voltages for integrator states `v`.
    pub fn voltages_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, p) in self.ctl.ibrs.iter().enumerate() {
            out[i] = match self.mode {
                Mode::Droop => self.ctl.v_nom + v[i],
                Mode::Proposed => voltage_output(p, v[i]),
            };
        }
    }

    /// `(V, P, Q)` at state `y`.
    pub fn outputs(&mut self, y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let mut voltage = vec![0.0; l.n];
        self.voltages_into(&y[l.v()], &mut voltage);
        let (p, q) = self.net.power_flow(&y[l.theta()], &voltage);
        (voltage, p, q)
    }

    pub fn rhs(&mut self, y: &[f64], dy: &mut [f64]) {
        let l = self.layout();
        let g = self.ctl.gains;
        let mut voltage = std::mem::take(&mut self.voltage);
        self.voltages_into(&y[l.v()], &mut voltage);
        self.net
            .power_flow_into(&y[l.theta()], &voltage, &mut self.p, &mut self.q);
        self.voltage = voltage;
        for (i, prm) in self.ctl.ibrs.iter().enumerate() {
            let omega = y[l.omega().start + i];
            let v = y[l.v().start + i];
            dy[l.theta().start + i] = omega;
            let (d_omega, d_v_droop) = controller::droop_rhs(prm, omega, v, self.p[i], self.q[i]);
            dy[l.omega().start + i] = d_omega / g.tau_omega;
            dy[l.v().start + i] = match self.mode {
                Mode::Droop => d_v_droop / g.tau_v,
                Mode::Proposed => {
                    integrator_rhs(prm, g.beta, v, y[l.lambda().start + i], self.q[i]) / g.tau_v
                }
            };
            self.q_ratio[i] = self.q[i] / prm.s_rated;
        }
        let (lam, rest) = dy[l.lambda().start..].split_at_mut(l.n);
        match self.mode {
            Mode::Droop => {
                lam.fill(0.0);
                rest.fill(0.0);
            }
            Mode::Proposed => {
                controller::primal_dual_rhs_into(
                    self.laplacian,
                    g.k,
                    &y[l.lambda()],
                    &y[l.zeta()],
                    &self.q_ratio,
                    lam,
                    rest,
                );
                for x in lam.iter_mut() {
                    *x /= g.tau_p;
                }
                for x in rest.iter_mut() {
                    *x /= g.tau_d;
                }
            }
        }
    }
}

/// Channels emitted per IBR per sample, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Theta,
    OmegaDev,
    Freq,
    V,
    Lambda,
    Zeta,
    Voltage,
    P,
    Q,
    PRatio,
    QRatio,
    Rho,
}

impl Channel {
    pub const ALL: [Channel; 12] = [
        Channel::Theta,
        Channel::OmegaDev,
        Channel::Freq,
        Channel::V,
        Channel::Lambda,
        Channel::Zeta,
        Channel::Voltage,
        Channel::P,
        Channel::Q,
        Channel::PRatio,
        Channel::QRatio,
        Channel::Rho,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Channel::Theta => "theta",
            Channel::OmegaDev => "omega_dev",
            Channel::Freq => "f",
            Channel::V => "v",
            Channel::Lambda => "lambda",
            Channel::Zeta => "zeta",
            Channel::Voltage => "V",
            Channel::P => "P",
            Channel::Q => "Q",
            Channel::PRatio => "P_ratio",
            Channel::QRatio => "Q_ratio",
            Channel::Rho => "rho",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

/// Controller configuration in force over one event interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub mode: Mode,
    pub ibrs: Vec<IbrParams>,
    pub load_scale: Vec<f64>,
}

/// Sampled trajectory, long format: sample `k`, IBR `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub n: usize,
    pub t: Vec<f64>,
    /// Segment index of each sample.
    pub segment_of: Vec<usize>,
    pub segments: Vec<Segment>,
    data: Vec<[f64; 12]>,
}

impl TimeSeries {
    fn new(n: usize) -> Self {
        Self {
            n,
            t: Vec::new(),
            segment_of: Vec::new(),
            segments: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn get(&self, ch: Channel, k: usize, ibr: usize) -> f64 {
        self.data[k * self.n + ibr][ch.index()]
    }

    /// One channel at sample `k` for all IBRs.
    pub fn row(&self, ch: Channel, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(ch, k, i)).collect()
    }

    pub fn segment_at(&self, k: usize) -> &Segment {
        &self.segments[self.segment_of[k]]
    }

    /// Index of the sample closest to `t`.
    pub fn index_at(&self, t: f64) -> Result<usize, SimError> {
        let (t0, t1) = (self.t[0], *self.t.last().unwrap());
        let slack = 1e-9 * t1.abs().max(1.0);
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(SimError::OutOfRange { t, t0, t1 });
        }
        let k = self.t.partition_point(|&x| x < t);
        Ok(match k {
            0 => 0,
            k if k >= self.t.len() => self.t.len() - 1,
            k if (self.t[k] - t).abs() < (t - self.t[k - 1]).abs() => k,
            k => k - 1,
        })
    }

    /// Sample indices with `t_a <= t <= t_b`.
    pub fn window(&self, t_a: f64, t_b: f64) -> std::ops::Range<usize> {
        let a = self.t.partition_point(|&x| x < t_a - 1e-9);
        let b = self.t.partition_point(|&x| x <= t_b + 1e-9);
        a..b
    }

    /// 0-based indices of IBRs whose leakage coefficient is positive at `t`.
    pub fn saturated_set(&self, t: f64) -> Result<Vec<usize>, SimError> {
        let k = self.index_at(t)?;
        Ok(self.saturated_at(k))
    }

    pub fn saturated_at(&self, k: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.get(Channel::Rho, k, i) > 0.0)
            .collect()
    }

    /// `|Q_i/S_i - mean_j Q_j/S_j|` for every IBR at `t`.
    pub fn sharing_error(&self, t: f64) -> Result<Vec<f64>, SimError> {
        Ok(self.sharing_error_at(self.index_at(t)?))
    }

    pub fn sharing_error_at(&self, k: usize) -> Vec<f64> {
        let r = self.row(Channel::QRatio, k);
        let mean = r.iter().sum::<f64>() / self.n as f64;
        r.into_iter().map(|x| (x - mean).abs()).collect()
    }

    pub fn header() -> String {
        Self::header_for(&Channel::ALL)
    }

    pub fn header_for(channels: &[Channel]) -> String {
        let mut h = String::from("t,ibr");
        for c in channels {
            h.push(',');
            h.push_str(c.name());
        }
        h
    }

    /// Long-format CSV, one line per (sample, IBR), 1-based IBR index.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        self.write_csv_channels(w, &Channel::ALL)
    }

    /// As [`write_csv`](Self::write_csv) restricted to `channels`, in the
    /// given order.
    pub fn write_csv_channels<W: Write>(&self, mut w: W, channels: &[Channel]) -> io::Result<()> {
        writeln!(w, "{}", Self::header_for(channels))?;
        for k in 0..self.len() {
            for i in 0..self.n {
                let row = &self.data[k * self.n + i];
                write!(w, "{},{}", self.t[k], i + 1)?;
                for c in channels {
                    write!(w, ",{}", row[c.index()])?;
                }
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Run diagnostics beyond the sampled series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub ode: OdeStats,
    /// Accepted steps taken in proposed mode, each checked for containment.
    pub proposed_steps: usize,
    /// Smallest `min(V - V_min, V_max - V)` over those steps.
    pub min_margin: f64,
    /// Largest `|1ᵀζ(t) - 1ᵀζ(t_start)|` per segment.
    pub dual_drift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub stats: SimStats,
    pub final_state: ControllerState,
}

/// Drops events that change nothing (same load factor, same limits,
/// activation while already active). Integration is restarted only at
/// events that remain.
fn effective_events(s: &Scenario) -> Vec<Event> {
    let mut scale = s.network.unit_load_scale();
    let mut ibrs = s.controllers.ibrs.clone();
    let mut mode = s.initial_mode;
    let mut out = Vec::new();
    for e in &s.events {
        let keep = match &e.kind {
            EventKind::ActivateController => {
                std::mem::replace(&mut mode, Mode::Proposed) != Mode::Proposed
            }
            EventKind::ScaleLoad { bus, factor } => {
                let k = s.network.bus_position(*bus).expect("validated");
                std::mem::replace(&mut scale[k], *factor) != *factor
            }
            EventKind::SetLimits { ibr, v_min, v_max } => {
                let mut changed = false;
                for (i, p) in ibrs.iter_mut().enumerate() {
                    if ibr.is_none_or(|j| j == i + 1) && (p.v_min != *v_min || p.v_max != *v_max) {
                        *p = p.with_limits(*v_min, *v_max);
                        changed = true;
                    }
                }
                changed
            }
        };
        if keep {
            out.push(e.clone());
        }
    }
    out
}

struct NetworkCache<'a> {
    data: &'a NetworkData,
    cache: HashMap<Vec<u64>, ReducedNetwork>,
}

impl NetworkCache<'_> {
    fn get(&mut self, scale: &[f64], t: f64) -> Result<ReducedNetwork, SimError> {
        let key: Vec<u64> = scale.iter().map(|x| x.to_bits()).collect();
        if let Some(n) = self.cache.get(&key) {
            return Ok(n.clone());
        }
        let net =
            kron_reduce(self.data, scale).map_err(|source| SimError::Network { t, source })?;
        self.cache.insert(key, net.clone());
        Ok(net)
    }
}

/// Integrates the scenario and samples every `sample_dt`.
pub fn simulate(s: &Scenario) -> Result<SimOutput, SimError> {
    s.validate()?;
    let n = s.n();
    let layout = Layout { n };
    let laplacian = s.graph.laplacian();
    let omega_nom = s.omega_nom();
    let mut cache = NetworkCache {
        data: &s.network,
        cache: HashMap::new(),
    };

    let mut ctl = s.controllers.clone();
    let mut mode = s.initial_mode;
    let mut scale = s.network.unit_load_scale();
    let mut net = cache.get(&scale, 0.0)?;
    let mut y = match &s.initial_state {
        Some(st) => layout.pack(st),
        None => layout.pack(&ControllerState::flat(n, mode)),
    };

    let n_samples = (s.t_end / s.sample_dt).round() as usize + 1;
    let sample_time = |k: usize| (k as f64 * s.sample_dt).min(s.t_end);
    let mut series = TimeSeries::new(n);
    let mut stats = SimStats {
        min_margin: f64::INFINITY,
        ..Default::default()
    };
    let mut next_sample = 0usize;

    let events = effective_events(s);
    let mut bounds: Vec<f64> = vec![0.0];
    bounds.extend(
        events
            .iter()
            .map(|e| e.t)
            .filter(|&t| t > 0.0 && t < s.t_end),
    );
    bounds.push(s.t_end);
    bounds.dedup();
    let mut ev_iter = events.iter().peekable();

    for w in 0..bounds.len() - 1 {
        let (a, b) = (bounds[w], bounds[w + 1]);
        let final_segment = w + 2 == bounds.len();
        // Apply every event scheduled at the start of this interval.
        while let Some(e) = ev_iter.next_if(|e| e.t <= a + 1e-12) {
            apply_event(
                e, s, &mut ctl, &mut mode, &mut scale, &mut net, &mut y, &laplacian, &mut cache,
            )?;
        }
        let seg_idx = series.segments.len();
        series.segments.push(Segment {
            t_start: a,
            t_end: b,
            mode,
            ibrs: ctl.ibrs.clone(),
            load_scale: scale.clone(),
        });
        let mut sys = ClosedLoop::new(&net, &laplacian, &ctl, mode);
        let mut scratch = vec![0.0; 5 * n];
        let in_segment = |t: f64| t < b - 1e-9 || (final_segment && t <= b + 1e-9);
        if next_sample < n_samples && (sample_time(next_sample) - a).abs() < 1e-9 {
            record(
                &mut series,
                &mut sys,
                &y,
                seg_idx,
                sample_time(next_sample),
                omega_nom,
            );
            next_sample += 1;
        }

        let zeta_start: f64 = y[layout.zeta()].iter().sum();
        let mut drift: f64 = 0.0;
        let mut proposed_steps = 0usize;
        let mut min_margin = stats.min_margin;
        let mut sampler = ClosedLoop::new(&net, &laplacian, &ctl, mode);
        let ode_stats = ode::integrate(
            |_, y, dy| sys.rhs(y, dy),
            a,
            b,
            &mut y,
            &s.ode,
            |step| -> Result<(), SimError> {
                let yn = step.y1;
                if mode == Mode::Proposed {
                    proposed_steps += 1;
                    for (i, p) in ctl.ibrs.iter().enumerate() {
                        let v = voltage_output(p, yn[layout.v().start + i]);
                        if !(v > p.v_min && v < p.v_max) {
                            return Err(SimError::Containment {
                                t: step.t1,
                                ibr: i + 1,
                                voltage: v,
                                v_min: p.v_min,
                                v_max: p.v_max,
                            });
                        }
                        min_margin = min_margin.min((v - p.v_min).min(p.v_max - v));
                    }
                }
                let zs: f64 = yn[layout.zeta()].iter().sum();
                drift = drift.max((zs - zeta_start).abs());
                while next_sample < n_samples {
                    let ts = sample_time(next_sample);
                    if ts > step.t1 + 1e-12 || !in_segment(ts) {
                        break;
                    }
                    step.interpolate(ts, &mut scratch);
                    record(&mut series, &mut sampler, &scratch, seg_idx, ts, omega_nom);
                    next_sample += 1;
                }
                Ok(())
            },
        )?;
        stats.ode += ode_stats;
        stats.proposed_steps += proposed_steps;
        stats.min_margin = min_margin;
        stats.dual_drift.push(drift);
        if final_segment {
            while next_sample < n_samples {
                let ts = sample_time(next_sample);
                record(&mut series, &mut sampler, &y, seg_idx, ts, omega_nom);
                next_sample += 1;
            }
        }
    }

    Ok(SimOutput {
        series,
        stats,
        final_state: layout.unpack(&y, mode),
    })
}

#[allow(clippy::too_many_arguments)]
fn apply_event(
    e: &Event,
    s: &Scenario,
    ctl: &mut ControllerSet,
    mode: &mut Mode,
    scale: &mut [f64],
    net: &mut ReducedNetwork,
    y: &mut [f64],
    laplacian: &DMatrix<f64>,
    cache: &mut NetworkCache<'_>,
) -> Result<(), SimError> {
    let layout = Layout { n: ctl.n() };
    let (voltage, _, q) = ClosedLoop::new(net, laplacian, ctl, *mode).outputs(y);
    match &e.kind {
        EventKind::ActivateController => {
            if *mode == Mode::Proposed {
                return Ok(());
            }
            *mode = Mode::Proposed;
            for (i, p) in ctl.ibrs.iter().enumerate() {
                y[layout.v().start + i] = state_for_voltage(p, voltage[i]);
                y[layout.lambda().start + i] = q[i] / p.s_rated;
                y[layout.zeta().start + i] = 0.0;
            }
        }
        EventKind::ScaleLoad { bus, factor } => {
            let k = s.network.bus_position(*bus).expect("validated");
            scale[k] = *factor;
            *net = cache.get(scale, e.t)?;
        }
        EventKind::SetLimits { ibr, v_min, v_max } => {
            for (i, p) in ctl.ibrs.iter_mut().enumerate() {
                if ibr.is_none_or(|j| j == i + 1) {
                    *p = p.with_limits(*v_min, *v_max);
                    if *mode == Mode::Proposed {
                        y[layout.v().start + i] = state_for_voltage(p, voltage[i]);
                    }
                }
            }
        }
    }
    Ok(())
}

fn record(
    series: &mut TimeSeries,
    sys: &mut ClosedLoop<'_>,
    y: &[f64],
    seg: usize,
    t: f64,
    omega_nom: f64,
) {
    let layout = Layout { n: sys.ctl.n() };
    let (voltage, p, q) = sys.outputs(y);
    series.t.push(t);
    series.segment_of.push(seg);
    for (i, prm) in sys.ctl.ibrs.iter().enumerate() {
        let omega = y[layout.omega().start + i];
        let v = y[layout.v().start + i];
        let rho = match sys.mode {
            Mode::Proposed => leakage(prm, v),
            Mode::Droop => 0.0,
        };
        series.data.push([
            y[layout.theta().start + i],
            omega,
            (omega_nom + omega) / (2.0 * std::f64::consts::PI),
            v,
            y[layout.lambda().start + i],
            y[layout.zeta().start + i],
            voltage[i],
            p[i],
            q[i],
            p[i] / prm.s_rated,
            q[i] / prm.s_rated,
            rho,
        ]);
    }
}
