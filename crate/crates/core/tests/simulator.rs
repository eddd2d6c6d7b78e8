use voltshare::controller::{ControllerState, Mode};
use voltshare::scenario::load;
use voltshare::sim::{simulate, Channel, Event, EventKind, Scenario};

fn lv5() -> Scenario {
    load("lv5").unwrap().scenario
}

fn short(t_end: f64) -> Scenario {
    let mut s = lv5();
    s.events.retain(|e| e.t <= t_end);
    s.t_end = t_end;
    s
}

#[test]
fn repeated_runs_are_identical() {
    let s = short(30.0);
    assert!(simulate(&s).unwrap() == simulate(&s).unwrap());
}

#[test]
fn redundant_events_change_nothing() {
    let s = short(35.0);
    let base = simulate(&s).unwrap();
    let mut t = s.clone();
    let limits = s.controllers.ibrs[0];
    t.events.extend([
        Event {
            t: 25.0,
            kind: EventKind::ScaleLoad {
                bus: 5,
                factor: 0.2,
            },
        },
        Event {
            t: 30.0,
            kind: EventKind::SetLimits {
                ibr: None,
                v_min: limits.v_min,
                v_max: limits.v_max,
            },
        },
        Event {
            t: 32.0,
            kind: EventKind::ActivateController,
        },
    ]);
    t.events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let again = simulate(&t).unwrap();
    assert!(again.series == base.series);
    assert!(again.final_state == base.final_state);
}

#[test]
fn uniform_angle_shift_only_shifts_angles() {
    // Fixed steps, so both runs take the same step sequence.
    let mut s = short(12.0);
    s.ode.fixed_step = Some(5e-4);
    let base = simulate(&s).unwrap();
    let mut t = s.clone();
    let c = 0.37;
    let mut st = ControllerState::flat(5, Mode::Droop);
    st.theta = vec![c; 5];
    t.initial_state = Some(st);
    let moved = simulate(&t).unwrap();
    let (a, b) = (&base.series, &moved.series);
    assert_eq!(a.len(), b.len());
    for k in 0..a.len() {
        for i in 0..5 {
            for ch in [
                Channel::Voltage,
                Channel::P,
                Channel::Q,
                Channel::Lambda,
                Channel::Freq,
            ] {
                let (x, y) = (a.get(ch, k, i), b.get(ch, k, i));
                assert!(
                    (x - y).abs() < 1e-9,
                    "{} at t = {}: {x} vs {y}",
                    ch.name(),
                    a.t[k]
                );
            }
            let d = b.get(Channel::Theta, k, i) - a.get(Channel::Theta, k, i);
            assert!((d - c).abs() < 1e-9);
        }
    }
}

/// Fixed-step runs at h, h/2, h/4: the error must shrink at the rate of a
/// fifth-order method.
#[test]
fn halving_the_step_converges_at_fifth_order() {
    let mut s = short(2.0);
    s.sample_dt = 0.5;
    let run = |h: f64| {
        let mut t = s.clone();
        t.ode.fixed_step = Some(h);
        simulate(&t).unwrap().final_state
    };
    let diff = |a: &ControllerState, b: &ControllerState| {
        a.v.iter()
            .zip(&b.v)
            .chain(a.lambda.iter().zip(&b.lambda))
            .chain(a.theta.iter().zip(&b.theta))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let h = 0.04;
    let (a, b, c) = (run(h), run(h / 2.0), run(h / 4.0));
    let (e1, e2) = (diff(&a, &b), diff(&b, &c));
    assert!(e1 > 0.0 && e2 > 0.0);
    let ratio = e1 / e2;
    assert!(ratio > 16.0, "error ratio {ratio:.2} ({e1:.2e}, {e2:.2e})");
    // The adaptive default agrees with the finest fixed-step run.
    let adaptive = simulate(&s).unwrap().final_state;
    assert!(diff(&adaptive, &c) < 1e-6, "{:.2e}", diff(&adaptive, &c));
}

#[test]
fn samples_sit_on_the_requested_grid() {
    let mut s = short(12.0);
    s.sample_dt = 0.02;
    let out = simulate(&s).unwrap();
    assert_eq!(out.series.len(), 601);
    for (k, t) in out.series.t.iter().enumerate() {
        assert!((t - 0.02 * k as f64).abs() < 1e-12);
    }
}

#[test]
fn droop_only_run_keeps_the_secondary_layer_idle() {
    let mut s = short(8.0);
    s.events.clear();
    let out = simulate(&s).unwrap();
    assert_eq!(out.stats.proposed_steps, 0);
    let ts = &out.series;
    for k in 0..ts.len() {
        for i in 0..5 {
            assert_eq!(ts.get(Channel::Lambda, k, i), 0.0);
            assert_eq!(ts.get(Channel::Zeta, k, i), 0.0);
            assert_eq!(ts.get(Channel::Rho, k, i), 0.0);
            let v = ts.get(Channel::V, k, i);
            assert!((ts.get(Channel::Voltage, k, i) - (1.0 + v)).abs() < 1e-15);
        }
    }
    // Droop drives every IBR to the same frequency.
    let k = ts.len() - 1;
    let f = ts.row(Channel::Freq, k);
    assert!(f.iter().all(|x| (x - f[0]).abs() < 1e-6), "{f:?}");
}

#[test]
fn proposed_mode_keeps_every_sample_inside_the_limits() {
    let out = simulate(&lv5()).unwrap();
    assert!(out.stats.min_margin > 0.0);
    assert!(out.stats.dual_drift.iter().all(|d| *d <= 1e-8));
    let ts = &out.series;
    for k in 0..ts.len() {
        let seg = ts.segment_at(k);
        if seg.mode != Mode::Proposed {
            continue;
        }
        for (i, p) in seg.ibrs.iter().enumerate() {
            let v = ts.get(Channel::Voltage, k, i);
            assert!(
                v > p.v_min && v < p.v_max,
                "IBR {} at t = {}: {v}",
                i + 1,
                ts.t[k]
            );
        }
    }
}

#[test]
fn activation_hands_over_without_a_voltage_jump() {
    let out = simulate(&short(10.5)).unwrap();
    let ts = &out.series;
    let before = ts.index_at(9.99).unwrap();
    let at = ts.index_at(10.0).unwrap();
    assert_eq!(ts.segment_at(before).mode, Mode::Droop);
    assert_eq!(ts.segment_at(at).mode, Mode::Proposed);
    for i in 0..5 {
        let jump = (ts.get(Channel::Voltage, at, i) - ts.get(Channel::Voltage, before, i)).abs();
        assert!(jump < 1e-3, "IBR {}: {jump}", i + 1);
        let q = ts.get(Channel::QRatio, at, i);
        assert!((ts.get(Channel::Lambda, at, i) - q).abs() < 1e-12);
    }
}

#[test]
fn invalid_timelines_are_rejected_with_every_problem() {
    let mut s = lv5();
    s.events.push(Event {
        t: 45.0,
        kind: EventKind::ScaleLoad {
            bus: 99,
            factor: 1.0,
        },
    });
    s.events.push(Event {
        t: 44.0,
        kind: EventKind::SetLimits {
            ibr: Some(7),
            v_min: 1.1,
            v_max: 1.0,
        },
    });
    let err = simulate(&s).unwrap_err().to_string();
    for needle in ["bus 99", "IBR 7", "time order", "V_min < V_max"] {
        assert!(err.contains(needle), "missing `{needle}` in {err}");
    }
}
