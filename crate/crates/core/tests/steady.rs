mod common;

use common::{admittance_from_tables, complex_power, sequential_kron};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltshare::network::kron_reduce;
use voltshare::scenario::load;
use voltshare::sim::{simulate, Channel};
use voltshare::steady::{solve_equilibrium, verify_properties, Equilibrium, SteadyOptions};

fn solve(
    name: &str,
    scale: Option<&[f64]>,
    opts: &SteadyOptions,
) -> (voltshare::scenario::LoadedScenario, Equilibrium) {
    let l = load(name).unwrap();
    let s = &l.scenario;
    let sc = scale.map_or_else(|| s.network.unit_load_scale(), <[f64]>::to_vec);
    let net = kron_reduce(&s.network, &sc).unwrap();
    let eq = solve_equilibrium(&net, &s.graph, &s.controllers, s.omega_nom(), None, opts).unwrap();
    (l, eq)
}

/// λ and ζ from the linear optimality conditions
/// `(I + kL) λ + L ζ = S⁻¹Q`, `L λ = 0`, `1ᵀζ = c`.
fn kkt_oracle(lap: &DMatrix<f64>, k: f64, q_ratio: &[f64], zeta_sum: f64) -> (Vec<f64>, Vec<f64>) {
    let n = q_ratio.len();
    let mut a = DMatrix::zeros(2 * n + 1, 2 * n);
    let mut b = DVector::zeros(2 * n + 1);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(DMatrix::identity(n, n) + lap * k));
    a.view_mut((0, n), (n, n)).copy_from(lap);
    a.view_mut((n, 0), (n, n)).copy_from(lap);
    for i in 0..n {
        a[(2 * n, n + i)] = 1.0;
        b[i] = q_ratio[i];
    }
    b[2 * n] = zeta_sum;
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    (
        x.rows(0, n).iter().copied().collect(),
        x.rows(n, n).iter().copied().collect(),
    )
}

#[test]
fn equilibrium_satisfies_every_equation_under_independent_power_flow() {
    for name in ["lv5", "mv9-template"] {
        let (l, eq) = solve(name, None, &SteadyOptions::default());
        let ctl = &l.scenario.controllers;
        let n = ctl.n();
        let scale = l.scenario.network.unit_load_scale();
        let y = sequential_kron(admittance_from_tables(&l.file, &scale), n);
        let (p, q) = complex_power(&y, &eq.theta, &eq.voltage);
        for i in 0..n {
            let c = &ctl.ibrs[i];
            assert!(
                (p[i] - eq.p[i]).abs() < 1e-10 && (q[i] - eq.q[i]).abs() < 1e-10,
                "{name} IBR {i}"
            );
            assert!(
                (eq.omega + c.m_omega * p[i] / c.s_rated).abs() < 1e-10,
                "{name}: frequency row {i}"
            );
            let d = 0.5 * (c.v_max - c.v_min);
            let vs = 0.5 * (c.v_max + c.v_min);
            assert!((eq.voltage[i] - (vs + d * (eq.v[i] / d).tanh())).abs() < 1e-14);
            let rho = ((eq.v[i] / d).abs() - 3.0).max(0.0);
            let integ = vs * (eq.lambda[i] - q[i] / c.s_rated)
                - ctl.gains.beta * d * (eq.v[i] / d).tanh()
                - rho * eq.v[i];
            assert!(
                integ.abs() < 1e-10,
                "{name}: integrator row {i}: {integ:.2e}"
            );
        }
        let omega_nom = 2.0 * std::f64::consts::PI * l.file.bases.f_nom;
        assert!((eq.omega_syn - omega_nom - eq.omega).abs() < 1e-9);
        let qr: Vec<f64> = (0..n).map(|i| q[i] / ctl.ibrs[i].s_rated).collect();
        let (lam, zeta) = kkt_oracle(
            &l.scenario.graph.laplacian(),
            ctl.gains.k,
            &qr,
            eq.zeta.iter().sum(),
        );
        for i in 0..n {
            assert!((lam[i] - eq.lambda[i]).abs() < 1e-9, "{name}: λ{i}");
            assert!((zeta[i] - eq.zeta[i]).abs() < 1e-8, "{name}: ζ{i}");
        }
    }
}

#[test]
fn multipliers_agree_with_mean_utilisation_across_loadings() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..12 {
        let name = if trial % 3 == 2 {
            "mv9-template"
        } else {
            "lv5"
        };
        let buses = load(name).unwrap().scenario.network.buses.len();
        let scale: Vec<f64> = (0..buses).map(|_| rng.random_range(0.3..1.2)).collect();
        let (l, eq) = solve(name, Some(&scale), &SteadyOptions::default());
        let qr = eq.q_ratio(&l.scenario.controllers);
        let mean = qr.iter().sum::<f64>() / qr.len() as f64;
        let lo = eq.lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eq.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1e-8, "trial {trial}: spread {:.2e}", hi - lo);
        for x in &eq.lambda {
            assert!((x - mean).abs() <= 1e-8, "trial {trial}: {x} vs {mean}");
        }
        let rep = verify_properties(&eq, &l.scenario.controllers, 1e-8);
        assert!(rep.passed(), "trial {trial}: {}", rep.to_csv());
    }
}

#[test]
fn finite_difference_newton_reaches_the_same_point() {
    let (_, a) = solve("lv5", None, &SteadyOptions::default());
    let (_, b) = solve(
        "lv5",
        None,
        &SteadyOptions {
            finite_difference: true,
            ..SteadyOptions::default()
        },
    );
    for (x, y) in a.voltage.iter().zip(&b.voltage) {
        assert!((x - y).abs() < 1e-10);
    }
    assert!((a.alpha_q - b.alpha_q).abs() < 1e-10);
}

#[test]
fn perturbed_guess_converges_to_the_same_equilibrium() {
    let (l, eq) = solve("lv5", None, &SteadyOptions::default());
    let s = &l.scenario;
    let net = kron_reduce(&s.network, &s.network.unit_load_scale()).unwrap();
    let mut guess = eq.to_state();
    for (i, x) in guess.theta.iter_mut().enumerate() {
        *x += 0.01 * i as f64;
    }
    for x in &mut guess.lambda {
        *x += 0.05;
    }
    let again = solve_equilibrium(
        &net,
        &s.graph,
        &s.controllers,
        s.omega_nom(),
        Some(&guess),
        &SteadyOptions::default(),
    )
    .unwrap();
    for (x, y) in again.voltage.iter().zip(&eq.voltage) {
        assert!((x - y).abs() < 1e-10);
    }
    assert_eq!(again.saturated, eq.saturated);
}

#[test]
fn settled_simulation_reaches_the_solved_equilibrium() {
    let (l, eq) = solve("lv5", None, &SteadyOptions::default());
    let mut s = l.scenario.clone();
    s.events.retain(|e| e.t <= 10.0);
    s.t_end = 150.0;
    let out = simulate(&s).unwrap();
    let k = out.series.len() - 1;
    let qr = eq.q_ratio(&s.controllers);
    for (ch, want) in [
        (Channel::Voltage, &eq.voltage),
        (Channel::QRatio, &qr),
        (Channel::Lambda, &eq.lambda),
    ] {
        let got = out.series.row(ch, k);
        for i in 0..5 {
            assert!(
                (got[i] - want[i]).abs() < 1e-6,
                "{}[{i}]: {} vs {}",
                ch.name(),
                got[i],
                want[i]
            );
        }
    }
    let f = out.series.get(Channel::Freq, k, 0);
    assert!((f - eq.omega_syn / (2.0 * std::f64::consts::PI)).abs() < 1e-6);
}
