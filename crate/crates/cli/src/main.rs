//! Command-line front end: simulate, steady-state, stability and tune.

mod plot;

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voltshare::network::kron_reduce;
use voltshare::scenario::{self, LoadedScenario};
use voltshare::sim::{simulate, Channel};
use voltshare::stability::{
    assemble_blocks, boundary_layer_check, epsilon_sweep, solve_lmi, storage_trace, LmiOptions,
    SlowSystem,
};
use voltshare::steady::{solve_equilibrium, verify_properties, Equilibrium, SteadyOptions};
use voltshare::tuner::{self, IbrLimits, TuningSpec};

#[derive(Parser)]
#[command(
    name = "voltshare",
    version,
    about = "Reactive power sharing with voltage limits for inverter-based microgrids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario timeline and write a CSV plus a plot script.
    Simulate(SimulateArgs),
    /// Solve the nominal-load equilibrium and check its sharing properties.
    SteadyState(SteadyArgs),
    /// Build the reduced blocks, solve the LMI and sweep the dual time scale.
    Stability(StabilityArgs),
    /// Derive controller gains from design targets and print a [controller] section.
    Tune(TuneArgs),
}

#[derive(Args)]
struct Common {
    /// Bundled scenario name (lv5, mv9-template) or path to a scenario file.
    scenario: String,
    /// Output directory; defaults to the scenario's [outputs] dir or out/<name>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Override the end time in seconds; later events are dropped.
    #[arg(long)]
    t_end: Option<f64>,
    /// Override the integrator's relative tolerance.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Override the sampling interval in milliseconds.
    #[arg(long)]
    sample_ms: Option<f64>,
}

#[derive(Args)]
struct SteadyArgs {
    #[command(flatten)]
    common: Common,
    /// Tolerance used by the property checks.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct StabilityArgs {
    #[command(flatten)]
    common: Common,
    /// Values of tau_d / tau_v for the sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.2,0.1,0.05,0.01")]
    ratios: Vec<f64>,
    /// Seed for the perturbed trajectories of the storage-function check.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of perturbed trajectories (0 skips the check).
    #[arg(long, default_value_t = 20)]
    trajectories: usize,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    /// Largest frequency deviation, per unit of the nominal frequency.
    #[arg(long, default_value_t = 0.005)]
    delta_f_max: f64,
    /// Target rate of change of frequency for a rated power step [Hz/s].
    #[arg(long, default_value_t = 2.5)]
    rocof: f64,
    /// Primal consensus time constant in seconds
    #[arg(long, default_value_t = 0.01)]
    tau_p: f64,
    /// Lower bound on tau_d in seconds.
    #[arg(long, default_value_t = 0.1)]
    tau_d_floor: f64,
    /// Consensus gain scaled by the algebraic connectivity (k = k_d / sigma_2).
    #[arg(long, default_value_t = 10.0)]
    k_d: f64,
    /// Allowed sharing error beta * Delta / V* [p.u.].
    #[arg(long, default_value_t = 5e-4)]
    beta_budget: f64,
    /// Largest admissible beta
    #[arg(long, default_value_t = 0.01)]
    beta_cap: f64,
    /// Halve beta until the LMI certificate at the nominal equilibrium is feasible.
    #[arg(long)]
    check_lmi: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::SteadyState(a) => run_steady(a),
        Command::Stability(a) => run_stability(a),
        Command::Tune(a) => run_tune(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Common) -> Result<LoadedScenario> {
    let l = scenario::load(&common.scenario)
        .with_context(|| format!("loading scenario {}", common.scenario))?;
    for w in &l.warnings {
        eprintln!("warning: {w}");
    }
    Ok(l)
}

fn scenario_stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn out_dir(common: &Common, l: &LoadedScenario) -> Result<PathBuf> {
    let dir = match (&common.out_dir, &l.file.outputs.dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("out").join(scenario_stem(&common.scenario)),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn fmt_ibrs(ix: &[usize]) -> String {
    let v: Vec<String> = ix.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let l = load(&a.common)?;
    let mut s = l.scenario.clone();
    if let Some(t) = a.t_end {
        let before = s.events.len();
        s.events.retain(|e| e.t <= t);
        if s.events.len() < before {
            eprintln!(
                "note: {} event(s) after t = {t} s dropped",
                before - s.events.len()
            );
        }
        s.t_end = t;
    }
    if let Some(r) = a.rel_tol {
        s.ode.rel_tol = r;
    }
    if let Some(ms) = a.sample_ms {
        s.sample_dt = ms / 1000.0;
    }
    let dir = out_dir(&a.common, &l)?;
    let out = simulate(&s)?;
    let ts = &out.series;

    let channels: Vec<Channel> = if l.file.outputs.channels.is_empty() {
        Channel::ALL.to_vec()
    } else {
        l.file.outputs.channels.clone()
    };
    let stem = scenario_stem(&a.common.scenario);
    let csv_name = format!("{stem}.csv");
    let csv_path = dir.join(&csv_name);
    let f =
        fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    ts.write_csv_channels(BufWriter::new(f), &channels)
        .with_context(|| format!("writing {}", csv_path.display()))?;

    let events: Vec<f64> = s.events.iter().map(|e| e.t).collect();
    let limits: Vec<(f64, f64, f64)> = ts
        .segments
        .iter()
        .filter_map(|seg| {
            let p = seg.ibrs.first()?;
            seg.ibrs
                .iter()
                .all(|q| q.v_min == p.v_min && q.v_max == p.v_max)
                .then_some((seg.t_start, p.v_min, p.v_max))
        })
        .collect();
    let plot_path = dir.join(format!("plot_{stem}.py"));
    write(
        &plot_path,
        &plot::script(&csv_name, &stem, &events, &limits),
    )?;

    let st = &out.stats;
    let k_end = ts.len() - 1;
    let drift = st.dual_drift.iter().copied().fold(0.0, f64::max);
    println!("scenario        {}", a.common.scenario);
    println!(
        "samples         {} x {} IBRs, {} channels",
        ts.len(),
        ts.n,
        channels.len()
    );
    println!(
        "accepted steps  {} ({} in proposed mode)",
        st.ode.accepted, st.proposed_steps
    );
    if st.proposed_steps > 0 {
        println!(
            "min margin      {:.6e} p.u. to the voltage limits",
            st.min_margin
        );
    }
    println!("dual drift      {drift:.3e}");
    println!("final V         {:?}", ts.row(Channel::Voltage, k_end));
    println!("final Q/S       {:?}", ts.row(Channel::QRatio, k_end));
    println!("saturated       {}", fmt_ibrs(&ts.saturated_at(k_end)));
    println!("csv             {}", csv_path.display());
    println!("plot script     {}", plot_path.display());
    Ok(())
}

fn nominal_equilibrium(
    l: &LoadedScenario,
) -> Result<(voltshare::network::ReducedNetwork, Equilibrium)> {
    let s = &l.scenario;
    let net = kron_reduce(&s.network, &s.network.unit_load_scale())?;
    let eq = solve_equilibrium(
        &net,
        &s.graph,
        &s.controllers,
        s.omega_nom(),
        None,
        &SteadyOptions::default(),
    )?;
    Ok((net, eq))
}

fn run_steady(a: SteadyArgs) -> Result<()> {
    let l = load(&a.common)?;
    let dir = out_dir(&a.common, &l)?;
    let (_, eq) = nominal_equilibrium(&l)?;
    let rep = verify_properties(&eq, &l.scenario.controllers, a.tol);
    let text = rep.to_text(&eq, &l.scenario.controllers);
    write(&dir.join("steady_state.txt"), &text)?;
    write(&dir.join("properties.csv"), &rep.to_csv())?;
    print!("{text}");
    println!("written to {}", dir.display());
    Ok(())
}

fn run_stability(a: StabilityArgs) -> Result<()> {
    if a.ratios.is_empty() || a.ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        bail!("--ratios must be positive numbers");
    }
    let l = load(&a.common)?;
    let dir = out_dir(&a.common, &l)?;
    let s = &l.scenario;
    let ctl = &s.controllers;
    let (net, eq) = nominal_equilibrium(&l)?;
    let lin = net.jacobians(&eq.theta, &eq.voltage);
    let blocks = assemble_blocks(&lin, &s.graph, ctl, s.omega_nom())?;

    let mut r = String::new();
    let _ = writeln!(
        r,
        "equilibrium: {} Newton iterations, residual {:.2e}",
        eq.iterations, eq.residual
    );
    let _ = writeln!(r, "saturated at equilibrium: {}", fmt_ibrs(&eq.saturated));
    let _ = writeln!(r, "\nblock dimensions:");
    for (name, rows, cols) in blocks.dimensions() {
        let _ = writeln!(r, "  {name:<14} {rows} x {cols}");
    }
    let spec: Vec<String> = blocks
        .r_zeta_spectrum
        .iter()
        .map(|x| format!("{x:.6}"))
        .collect();
    let _ = writeln!(r, "\nR_zeta eigenvalues (real parts): {}", spec.join(", "));

    let cert = solve_lmi(&blocks, &LmiOptions::default())?;
    let _ = writeln!(r, "\nLMI certificate");
    let _ = writeln!(r, "  feasible      {}", cert.feasible);
    let _ = writeln!(
        r,
        "  margin        {:.6e}  (max eig of Q + Q^T)",
        cert.margin
    );
    let _ = writeln!(r, "  alpha_s       {:.6e}", cert.alpha_s);
    let _ = writeln!(r, "  min eig P     {:.6e}", cert.min_eig_p);
    let _ = writeln!(r, "  min D_v       {:.6e}", cert.min_d);
    let bl = boundary_layer_check(&blocks)?;
    let _ = writeln!(r, "boundary layer");
    let _ = writeln!(r, "  min eig P_y   {:.6e}", bl.min_eig_p_y);
    let _ = writeln!(r, "  alpha_f       {:.6e}", bl.alpha_f);

    let (rows, limit) = epsilon_sweep(&net, &s.graph, ctl, &eq, s.omega_nom(), &a.ratios)?;
    let _ = writeln!(
        r,
        "\nepsilon sweep (spectral abscissa, structural zero modes removed)"
    );
    let _ = writeln!(
        r,
        "  {:>10}  {:>14}  {:>14}",
        "tau_d/tau_v", "reduced", "full"
    );
    let mut csv = String::from("ratio,reduced,full\n");
    for row in &rows {
        let _ = writeln!(
            r,
            "  {:>10}  {:>14.6e}  {:>14.6e}",
            row.ratio, row.reduced, row.full
        );
        let _ = writeln!(csv, "{},{},{}", row.ratio, row.reduced, row.full);
    }
    let _ = writeln!(r, "  {:>10}  {:>14.6e}", "limit", limit);

    if a.trajectories > 0 {
        let slow = SlowSystem {
            blocks: &blocks,
            ctl,
        };
        let x_bar = slow.equilibrium(&eq);
        let m = blocks.n() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..a.trajectories {
            let dx: Vec<f64> = (0..x_bar.len())
                .map(|k| {
                    let scale = if k < m {
                        0.05
                    } else {
                        0.5 * ctl.ibrs[k - m].delta()
                    };
                    scale * rng.random_range(-1.0..1.0)
                })
                .collect();
            let tr = storage_trace(&slow, &cert, &x_bar, &dx, 60.0, 600)?;
            worst = worst.max(tr.max_increase);
        }
        let _ = writeln!(
            r,
            "\nstorage function along {} perturbed trajectories (seed {}): largest increase {:.3e}",
            a.trajectories, a.seed, worst
        );
    }
    write(&dir.join("stability.txt"), &r)?;
    write(&dir.join("sweep.csv"), &csv)?;
    print!("{r}");
    println!("written to {}", dir.display());
    Ok(())
}

fn run_tune(a: TuneArgs) -> Result<()> {
    let l = load(&a.common)?;
    let s = &l.scenario;
    let spec = TuningSpec {
        delta_f_max: a.delta_f_max,
        f_nom: s.network.bases.f_nom,
        rocof_star: a.rocof,
        tau_p: a.tau_p,
        tau_d_floor: a.tau_d_floor,
        k_d: a.k_d,
        beta_error_budget: a.beta_budget,
        beta_cap: a.beta_cap,
        v_nom: s.controllers.v_nom,
    };
    let limits: Vec<IbrLimits> = s
        .controllers
        .ibrs
        .iter()
        .map(|p| IbrLimits {
            s_rated: p.s_rated,
            v_min: p.v_min,
            v_max: p.v_max,
        })
        .collect();
    let lmi_ok = |c: &voltshare::controller::ControllerSet| -> bool {
        let Ok(net) = kron_reduce(&s.network, &s.network.unit_load_scale()) else {
            return false;
        };
        let Ok(eq) = solve_equilibrium(
            &net,
            &s.graph,
            c,
            s.omega_nom(),
            None,
            &SteadyOptions::default(),
        ) else {
            return false;
        };
        let lin = net.jacobians(&eq.theta, &eq.voltage);
        assemble_blocks(&lin, &s.graph, c, s.omega_nom())
            .and_then(|b| solve_lmi(&b, &LmiOptions::default()))
            .is_ok_and(|c| c.feasible)
    };
    let check: Option<&dyn Fn(&voltshare::controller::ControllerSet) -> bool> =
        if a.check_lmi { Some(&lmi_ok) } else { None };
    let t = tuner::tune(&spec, &s.graph, &limits, check)?;
    for w in &t.warnings {
        eprintln!("warning: {w}");
    }
    let mut section = tuner::controller_section(&t);
    let _ = writeln!(section, "sharing_budget = {}", a.beta_budget);
    if let Some(d) = &a.common.out_dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        write(&d.join("controller.scn"), &section)?;
    }
    eprintln!(
        "m* = {:.6}, sigma_2 = {:.6}, beta tried: {:?}",
        t.m_star, t.sigma2, t.beta_trials
    );
    print!("{section}");
    Ok(())
}
