//! Command-line front end: calibrate, solve, simulate, verify, report.
//!
//! Exit codes: 0 on success, 1 when `verify` finds a failing oracle, 2 on
//! input errors (missing files, malformed config, bad CSV).

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amm_lab::calibrate::{bucketize, fit_intensities, load_ticks, write_residuals_csv};
use amm_lab::oracle::{
    hamiltonian_argmax, hjb_residual_sweep, laurent_error, risk_neutral_limit,
    supermartingale_check, GridSpec, OracleReport,
};
use amm_lab::simulate::Histogram;
use amm_lab::{
    existence_check, richardson_order, run_ensemble, solve, EnsembleSummary, MarketState,
    ModelParams, NuPolicy, PoolState, Regime, RiccatiSolution, SimConfig,
};

#[derive(Parser)]
#[command(name = "amm-lab", version, about = "AMM venue / liquidity-provider equilibrium toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Parameter file (flat `key = value` lines; see configs/).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for reproducible runs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Time steps per path and ODE grid intervals.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Cap on rayon worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output root (default: $AMM_LAB_OUT, falling back to ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the arrival-intensity model from a tick CSV.
    Calibrate {
        /// Tick file with header `timestamp,s,z,side,size`.
        #[arg(long)]
        ticks: PathBuf,
        /// Bucket length in minutes.
        #[arg(long, default_value_t = 10.0)]
        window_minutes: f64,
        /// Abort on the first malformed row instead of skipping it.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the backward coefficient system and write `riccati.csv`.
    Solve {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Simulate the equilibrium ensemble; writes series CSVs and a JSON summary.
    Simulate {
        /// `risk_averse` (needs a prior `solve`) or `risk_neutral`.
        #[arg(long, default_value = "risk_averse", value_parser = parse_regime)]
        regime: Regime,
        /// Initial contract level P0 (USDC).
        #[arg(long, default_value_t = 0.0)]
        p0: f64,
        /// Re-run at the equal-split P0 estimated from a first pass at P0 = 0.
        #[arg(long)]
        equal_split: bool,
        /// Per-step bound on lambda*dt before the run aborts.
        #[arg(long, default_value_t = 0.5)]
        max_lambda_dt: f64,
        /// Nodes between recorded samples.
        #[arg(long, default_value_t = 100)]
        record_stride: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the oracle suite; exits 1 if any report fails.
    Verify {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Write plot-ready CSV bundles (band series and histograms).
    Report {
        /// Optional tick CSV for the empirical mispricing histogram.
        #[arg(long)]
        ticks: Option<PathBuf>,
        #[arg(long, default_value = "risk_averse", value_parser = parse_regime)]
        regime: Regime,
        #[arg(long, default_value_t = 0.5)]
        max_lambda_dt: f64,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    match s {
        "risk_averse" | "ra" => Ok(Regime::RiskAverse),
        "risk_neutral" | "rn" => Ok(Regime::RiskNeutral),
        other => Err(format!("unknown regime {other:?} (risk_averse | risk_neutral)")),
    }
}

/// Model parameters plus the initial market state, read from a flat
/// `key = value` file. Unspecified keys keep the calibrated noise-trading
/// defaults.
#[derive(Debug, Clone, Copy)]
struct RunConfig {
    params: ModelParams,
    z0: f64,
    y0: f64,
    s0: f64,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            params: ModelParams::calibrated_noise_trading(),
            z0: amm_lab::params::CALIBRATED_Z0,
            y0: amm_lab::params::CALIBRATED_Y0,
            s0: amm_lab::params::CALIBRATED_S0,
        };
        let Some(path) = path else { return Ok(cfg) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            let key = key.trim();
            let value: f64 = value.trim().parse().with_context(|| {
                format!("{}:{}: bad number for {key}", path.display(), lineno + 1)
            })?;
            let p = &mut cfg.params;
            match key {
                "sigma" => p.sigma = value,
                "eta" => p.eta = value,
                "xi" => p.xi = value,
                "impact_a" => p.impact_a = value,
                "fee_r" => p.fee_r = value,
                "gamma" => p.gamma = value,
                "zeta" => p.zeta = value,
                "horizon_t" => p.horizon_t = value,
                "nu_max" => p.nu_max = value,
                "a0" => p.a0 = value,
                "a1" => p.a1 = value,
                "a2" => p.a2 = value,
                "a3" => p.a3 = value,
                "z0" => cfg.z0 = value,
                "y0" => cfg.y0 = value,
                "s0" => cfg.s0 = value,
                other => bail!("{}:{}: unknown key {other:?}", path.display(), lineno + 1),
            }
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    fn initial_state(&self) -> Result<MarketState> {
        Ok(MarketState { t: 0.0, s: self.s0, pool: PoolState::from_price(self.y0, self.z0)? })
    }
}

fn out_dir(common: &CommonOpts) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("AMM_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn setup_threads(common: &CommonOpts) {
    if common.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global();
    }
}

fn main() -> ExitCode {
    // die quietly when the downstream pipe closes (e.g. `amm-lab solve | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Calibrate { ticks, window_minutes, strict, common } => {
            setup_threads(&common);
            cmd_calibrate(&ticks, window_minutes, strict, &common)
        }
        Command::Solve { common } => {
            setup_threads(&common);
            cmd_solve(&common)
        }
        Command::Simulate { regime, p0, equal_split, max_lambda_dt, record_stride, common } => {
            setup_threads(&common);
            cmd_simulate(regime, p0, equal_split, max_lambda_dt, record_stride, &common)
        }
        Command::Verify { common } => {
            setup_threads(&common);
            cmd_verify(&common)
        }
        Command::Report { ticks, regime, max_lambda_dt, common } => {
            setup_threads(&common);
            cmd_report(ticks.as_deref(), regime, max_lambda_dt, &common)
        }
    }
}

fn cmd_calibrate(
    ticks: &Path,
    window_minutes: f64,
    strict: bool,
    common: &CommonOpts,
) -> Result<ExitCode> {
    let dir = out_dir(common)?;
    let report = load_ticks(ticks, strict)?;
    if !report.skipped.is_empty() {
        eprintln!("skipped {} malformed rows:", report.skipped.len());
        for (line, why) in report.skipped.iter().take(20) {
            eprintln!("  line {line}: {why}");
        }
    }
    let buckets = bucketize(&report.records, window_minutes);
    let fit = fit_intensities(&buckets)?;

    let json_path = dir.join("calibration.json");
    fs::write(&json_path, serde_json::to_string_pretty(&fit)?)?;
    let mut resid = fs::File::create(dir.join("calibration_residuals.csv"))?;
    write_residuals_csv(&buckets, &fit, &mut resid)?;

    println!(
        "a1 = {:.4} (se {:.4}), a3 = {:.4} (se {:.4}) over {} buckets",
        fit.a1_hat, fit.a1_se, fit.a3_hat, fit.a3_se, fit.n_buckets
    );
    println!(
        "boundary d = {:.4} USDC; violations {} left / {} right ({:.4}% of buckets)",
        fit.boundary_d,
        fit.violations_left,
        fit.violations_right,
        100.0 * fit.violation_fraction
    );
    println!("wrote {} and calibration_residuals.csv", json_path.display());
    Ok(ExitCode::SUCCESS)
}

fn riccati_path(dir: &Path) -> PathBuf {
    dir.join("riccati.csv")
}

fn cmd_solve(common: &CommonOpts) -> Result<ExitCode> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let dir = out_dir(common)?;
    let n_steps = common.steps.unwrap_or(10_000);

    let diag = existence_check(&cfg.params);
    println!(
        "existence: {} (max eigenvalue {:.6e})",
        if diag.passes { "PASS" } else { "FAIL" },
        diag.max_eigenvalue
    );
    if !diag.passes {
        eprintln!(
            "warning: sufficient existence condition violated; integrating anyway \
             (escape, if any, is reported with its time)"
        );
    }

    let sol = solve(&cfg.params, n_steps)?;
    let file = riccati_path(&dir);
    let mut out = fs::File::create(&file)?;
    sol.to_csv(&mut out)?;

    let g2 = sol.g2_nodes()[0];
    println!("G2(0) =");
    for r in 0..3 {
        println!("  [{:+.6e} {:+.6e} {:+.6e}]", g2[(r, 0)], g2[(r, 1)], g2[(r, 2)]);
    }
    match richardson_order(&cfg.params, 10) {
        Ok(order) if order.is_finite() => {
            println!("empirical convergence order (n = 10/20/40): {order:.2}")
        }
        Ok(_) => println!(
            "empirical convergence order (n = 10/20/40): truncation below round-off \
             (solution exact to machine precision at these parameters)"
        ),
        Err(e) => println!("convergence study unavailable: {e}"),
    }
    println!("wrote {} ({} nodes)", file.display(), sol.grid().len());
    Ok(ExitCode::SUCCESS)
}

fn load_solution_for(regime: Regime, dir: &Path) -> Result<Option<RiccatiSolution>> {
    if regime != Regime::RiskAverse {
        return Ok(None);
    }
    let path = riccati_path(dir);
    let file = fs::File::open(&path).map_err(|_| {
        anyhow!(
            "missing {}: run `amm-lab solve --out {}` first",
            path.display(),
            dir.display()
        )
    })?;
    Ok(Some(RiccatiSolution::from_csv(file)?))
}

fn sim_config(
    regime: Regime,
    max_lambda_dt: f64,
    record_stride: usize,
    common: &CommonOpts,
) -> SimConfig {
    SimConfig {
        n_steps: common.steps.unwrap_or(10_000),
        n_paths: common.paths.unwrap_or(1_000),
        seed: common.seed,
        regime,
        record_stride,
        nu_policy: NuPolicy::Optimal,
        max_lambda_dt,
    }
}

fn cmd_simulate(
    regime: Regime,
    p0: f64,
    equal_split: bool,
    max_lambda_dt: f64,
    record_stride: usize,
    common: &CommonOpts,
) -> Result<ExitCode> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let dir = out_dir(common)?;
    let sol = load_solution_for(regime, &dir)?;
    let sim = sim_config(regime, max_lambda_dt, record_stride, common);
    let initial = cfg.initial_state()?;

    let mut p0_used = p0;
    if equal_split {
        let first = run_ensemble(&cfg.params, sol.as_ref(), &sim, &initial, 0.0)?;
        p0_used = first.equal_split_p0;
        println!("equal-split p0 = {p0_used:.4} (from a {}-path pass at p0 = 0)", sim.n_paths);
    }
    let summary = run_ensemble(&cfg.params, sol.as_ref(), &sim, &initial, p0_used)?;

    let files = summary.write_series_csv(&dir)?;
    fs::write(dir.join("summary.json"), summary.to_json()?)?;
    println!(
        "mean reward {:.2} (se {:.2}), mean venue pnl {:.2} (se {:.2}), fee revenue {:.2}",
        summary.mean_reward,
        summary.se_reward,
        summary.mean_venue_pnl,
        summary.se_venue_pnl,
        summary.mean_fee_revenue
    );
    println!(
        "mean int nu dt = {:.4} ETH, mean external fees = {:.4} USDC",
        summary.mean_cum_nu, summary.mean_ext_fees
    );
    println!("wrote summary.json and {} series files to {}", files.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(common: &CommonOpts) -> Result<ExitCode> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let dir = out_dir(common)?;
    let p = cfg.params;
    let initial = cfg.initial_state()?;
    let n_steps = common.steps.unwrap_or(10_000);
    let mut reports: Vec<OracleReport> = Vec::new();

    let diag = existence_check(&p);
    reports.push(OracleReport {
        name: "existence_check".into(),
        max_abs_error: diag.max_eigenvalue.max(0.0),
        max_rel_error: 0.0,
        worst_case_input: "system matrices (U, R)".into(),
        pass: diag.passes,
        tolerance: 1e-9,
    });

    let sol = solve(&p, n_steps)?;
    reports.push(hjb_residual_sweep(
        &sol,
        &p,
        (cfg.z0 * 0.9, cfg.z0 * 1.1),
        (cfg.y0 * 0.9, cfg.y0 * 1.1),
        (cfg.s0 * 0.9, cfg.s0 * 1.1),
    )?);

    // argmax on a seeded sample of states in the configured operating range
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed ^ 0xa5a5_5a5a);
    let spec = GridSpec::default();
    let mut worst: Option<OracleReport> = None;
    for _ in 0..20 {
        let t = rng.random::<f64>() * p.horizon_t;
        let z = cfg.z0 * (0.9 + 0.2 * rng.random::<f64>());
        let y = cfg.y0 * (0.9 + 0.2 * rng.random::<f64>());
        let s = cfg.s0 * (0.9 + 0.2 * rng.random::<f64>());
        let rep = hamiltonian_argmax(t, z, y, s, &sol, &p, &spec)?;
        let worse = match &worst {
            None => true,
            Some(w) => {
                (!rep.pass && w.pass)
                    || (rep.pass == w.pass && rep.max_rel_error > w.max_rel_error)
            }
        };
        if worse {
            worst = Some(rep);
        }
    }
    reports.push(worst.expect("at least one argmax state"));

    reports.push(laurent_error(cfg.y0, p.xi)?);
    reports.push(risk_neutral_limit(&p));

    let mc = SimConfig {
        n_steps,
        n_paths: common.paths.unwrap_or(2_000),
        seed: common.seed,
        regime: Regime::RiskAverse,
        record_stride: (n_steps / 10).max(1),
        nu_policy: NuPolicy::Optimal,
        max_lambda_dt: 0.5,
    };
    reports.push(supermartingale_check(&p, Some(&sol), &mc, &initial, 0.0)?);
    let forced = SimConfig { nu_policy: NuPolicy::Forced(0.0), ..mc };
    reports.push(supermartingale_check(&p, Some(&sol), &forced, &initial, 0.0)?);

    let mut failed = false;
    let mut lines = String::new();
    for rep in &reports {
        let line = serde_json::to_string(rep)?;
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
        failed |= !rep.pass;
    }
    fs::write(dir.join("verify.jsonl"), lines)?;
    if failed {
        eprintln!("verification FAILED");
        return Ok(ExitCode::from(1));
    }
    println!("all oracles PASS");
    Ok(ExitCode::SUCCESS)
}

fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "bin_lo,bin_hi,count")?;
    let n = hist.counts.len();
    let w = if hist.hi > hist.lo { (hist.hi - hist.lo) / n as f64 } else { 0.0 };
    for (i, c) in hist.counts.iter().enumerate() {
        let lo = hist.lo + w * i as f64;
        writeln!(out, "{:.10e},{:.10e},{}", lo, lo + w, c)?;
    }
    Ok(())
}

fn write_band(path: &Path, t: &[f64], cols: &[(&str, &amm_lab::simulate::Band)]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let mut header = String::from("t");
    for (name, _) in cols {
        header.push_str(&format!(",{name}_mean,{name}_q05,{name}_q95"));
    }
    writeln!(out, "{header}")?;
    for k in 0..t.len() {
        let mut row = format!("{:.10e}", t[k]);
        for (_, band) in cols {
            row.push_str(&format!(
                ",{:.10e},{:.10e},{:.10e}",
                band.mean[k], band.q05[k], band.q95[k]
            ));
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn cmd_report(
    ticks: Option<&Path>,
    regime: Regime,
    max_lambda_dt: f64,
    common: &CommonOpts,
) -> Result<ExitCode> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let dir = out_dir(common)?;
    let sol = load_solution_for(regime, &dir)?;
    let sim = sim_config(regime, max_lambda_dt, 100, common);
    let initial = cfg.initial_state()?;

    // empirical mispricing histogram (fig 1 analogue) when ticks are given
    if let Some(ticks) = ticks {
        let loaded = load_ticks(ticks, false)?;
        let buckets = bucketize(&loaded.records, 10.0);
        let fit = fit_intensities(&buckets)?;
        let gaps: Vec<f64> = buckets.iter().map(|b| b.mean_mispricing).collect();
        write_histogram(&dir.join("fig1_empirical_mispricing_hist.csv"), &Histogram::build(&gaps, 50))?;
        fs::write(dir.join("fig1_fit.json"), serde_json::to_string_pretty(&fit)?)?;
    }

    let first = run_ensemble(&cfg.params, sol.as_ref(), &sim, &initial, 0.0)?;
    let p0 = first.equal_split_p0;
    let summary: EnsembleSummary = run_ensemble(&cfg.params, sol.as_ref(), &sim, &initial, p0)?;

    write_histogram(&dir.join("fig2_mispricing_hist.csv"), &summary.mispricing_hist)?;
    write_band(&dir.join("fig3_inventory.csv"), &summary.t, &[("y", &summary.y)])?;
    write_band(
        &dir.join("fig3_prices.csv"),
        &summary.t,
        &[("z", &summary.z), ("s", &summary.s)],
    )?;
    write_band(&dir.join("fig4_speed.csv"), &summary.t, &[("nu", &summary.nu)])?;
    write_band(&dir.join("fig5_cumulative_liquidity.csv"), &summary.t, &[("cum_nu", &summary.cum_nu)])?;
    write_band(&dir.join("fig7_external_fees.csv"), &summary.t, &[("ext_fees", &summary.ext_fees)])?;
    write_histogram(&dir.join("fig6_reward_hist.csv"), &summary.reward_hist)?;
    write_histogram(&dir.join("fig9_venue_pnl_hist.csv"), &summary.venue_hist)?;
    fs::write(dir.join("report_summary.json"), summary.to_json()?)?;

    println!(
        "wrote figure bundles to {} (equal-split p0 = {:.4}, boundary d = {:.4}, violation fraction {:.4})",
        dir.display(),
        p0,
        summary.boundary_d,
        summary.violation_fraction
    );
    Ok(ExitCode::SUCCESS)
}
