//! Monte Carlo engine for the equilibrium system.
//!
//! Paths are simulated directly under the LP's response measure: the
//! provision speed ν enters the ETH reserves as a drift, the remaining LP
//! noise η dBᵛ stays a Brownian motion, and jumps arrive as per-step
//! Bernoulli draws with probability λ±·dt evaluated at the left endpoint of
//! the step (the predictable state). Within a step the order is fixed: LP
//! flow, then the buy jump, then the sell jump — any fixed order is O(dt²)
//! equivalent and a fixed order keeps runs reproducible.
//!
//! Alongside the market state the engine accrues the LP's wealth Q, the
//! contract process P (including the A⁻ payment on suppressed buys and the
//! A^B·ν/η drift correction from the measure change), the external-venue
//! fees ∫𝔞ν²dt, and the cumulative provided liquidity ∫ν dt. The venue's
//! profit is 𝔯·(N⁻+N⁺) − P_T, so per path reward + venue_pnl equals the
//! collected fees exactly.
//!
//! Every path owns a private RNG stream derived from (seed, path index), so
//! ensembles are reproducible regardless of thread scheduling.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::controls::{controls_risk_averse, controls_risk_neutral, nu_bar, ContractControls};
use crate::error::{Error, Result};
use crate::intensity::intensities;
use crate::params::ModelParams;
use crate::pool::{apply_lp_flow, apply_lt_trade, jump_deltas, MarketState, Side};
use crate::riccati::RiccatiSolution;

/// Which closed-form contract the venue uses along the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// ζ ↓ 0 controls with the 2a₂𝔯(T−t) slope approximation.
    RiskNeutral,
    /// Quadratic-ansatz controls; requires a solved [`RiccatiSolution`].
    RiskAverse,
}

/// Provision-speed policy of the representative LP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NuPolicy {
    /// The best response ν* = ν̄(A^B) to the contract.
    Optimal,
    /// A fixed speed, clamped to ±ν∞. Suboptimal unless it equals ν̄(A);
    /// used by the martingale diagnostics.
    Forced(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    /// Master seed; path i draws from stream (seed, i).
    pub seed: u64,
    pub regime: Regime,
    /// Nodes between recorded samples.
    pub record_stride: usize,
    pub nu_policy: NuPolicy,
    /// Upper bound enforced on λ±·dt each step. The Bernoulli approximation
    /// of the jump arrivals is only honest for small λ·dt; a breach aborts
    /// the path and asks for a finer grid.
    pub max_lambda_dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_steps: 10_000,
            n_paths: 1,
            seed: 0,
            regime: Regime::RiskAverse,
            record_stride: 100,
            nu_policy: NuPolicy::Optimal,
            max_lambda_dt: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.n_paths == 0 || self.record_stride == 0 {
            return Err(Error::Config(
                "n_steps, n_paths and record_stride must all be at least 1".into(),
            ));
        }
        if !(self.max_lambda_dt > 0.0) {
            return Err(Error::Config("max_lambda_dt must be positive".into()));
        }
        Ok(())
    }
}

/// Running state of one path between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub market: MarketState,
    /// Contract process P_t.
    pub p: f64,
    /// LP wealth Q_t under the response measure.
    pub q: f64,
    pub cum_nu: f64,
    pub ext_fees: f64,
    /// Executed LT buys.
    pub n_minus: u64,
    /// Executed LT sells.
    pub n_plus: u64,
    /// Raw buy arrivals including suppressed ones; n_minus ≤ n_hat_minus.
    pub n_hat_minus: u64,
}

impl PathState {
    pub fn new(market: MarketState, p0: f64) -> Self {
        PathState {
            market,
            p: p0,
            q: 0.0,
            cum_nu: 0.0,
            ext_fees: 0.0,
            n_minus: 0,
            n_plus: 0,
            n_hat_minus: 0,
        }
    }
}

/// (1 − e^(−γx))/γ, stable for γx near zero.
fn exp_comp(gamma: f64, x: f64) -> f64 {
    -f64::exp_m1(-gamma * x) / gamma
}

/// Advances one step of length `dt` under the given contract loadings and
/// actual speed `nu`.
///
/// All drift and diffusion coefficients use the pre-step (predictable)
/// state. The contract accrues A⁻ on every raw buy arrival — executed or
/// suppressed — and A⁺ on every sell, and its drift carries the measure
/// correction A^B·ν/η for the actual policy speed.
pub fn step(
    state: &PathState,
    ctl: &ContractControls,
    nu: f64,
    dt: f64,
    p: &ModelParams,
    max_lambda_dt: f64,
    rng: &mut impl Rng,
) -> Result<PathState> {
    let m = state.market;
    let (z, y, s) = (m.pool.z, m.pool.y, m.s);
    let lam = intensities(p, z, y, s);
    if lam.minus * dt >= max_lambda_dt || lam.plus * dt >= max_lambda_dt {
        return Err(Error::Config(format!(
            "lambda*dt = {:.4} at t = {:.6} exceeds {max_lambda_dt}; use a finer grid",
            lam.minus.max(lam.plus) * dt,
            m.t
        )));
    }

    let sq = dt.sqrt();
    let eps_w: f64 = rng.sample(StandardNormal);
    let eps_b: f64 = rng.sample(StandardNormal);
    let u_buy: f64 = rng.random();
    let u_sell: f64 = rng.random();

    let deltas = jump_deltas(z, y, s, p.xi);
    let nb = nu_bar(ctl.a_b, p);
    let h_sup = -p.impact_a * nb * nb + ctl.a_b * nb / p.eta;
    let drift = 0.5
        * p.gamma
        * ((ctl.a_w + p.sigma * y).powi(2) + (ctl.a_b + p.eta * (s + z)).powi(2))
        - lam.minus * exp_comp(p.gamma, ctl.a_minus + deltas.minus)
        - lam.plus * exp_comp(p.gamma, ctl.a_plus + deltas.plus)
        - h_sup
        + ctl.a_b * nu / p.eta;

    let mut p_acc = state.p + drift * dt + ctl.a_w * sq * eps_w + ctl.a_b * sq * eps_b;
    let mut q_acc = state.q - p.impact_a * nu * nu * dt
        + p.eta * (s + z) * sq * eps_b
        + p.sigma * y * sq * eps_w;
    let ext_fees = state.ext_fees + p.impact_a * nu * nu * dt;
    let cum_nu = state.cum_nu + nu * dt;

    let mut pool = apply_lp_flow(&m.pool, nu * dt + p.eta * sq * eps_b)?;
    let (mut n_minus, mut n_plus, mut n_hat_minus) =
        (state.n_minus, state.n_plus, state.n_hat_minus);

    if u_buy < lam.minus * dt {
        n_hat_minus += 1;
        p_acc += ctl.a_minus;
        if pool.y > p.xi {
            let d = jump_deltas(pool.z, pool.y, s, p.xi);
            q_acc += d.minus;
            pool = apply_lt_trade(&pool, Side::Buy, p.xi)?;
            n_minus += 1;
        }
    }
    if u_sell < lam.plus * dt {
        let d = jump_deltas(pool.z, pool.y, s, p.xi);
        q_acc += d.plus;
        pool = apply_lt_trade(&pool, Side::Sell, p.xi)?;
        n_plus += 1;
        p_acc += ctl.a_plus;
    }

    Ok(PathState {
        market: MarketState { t: m.t + dt, s: s + p.sigma * sq * eps_w, pool },
        p: p_acc,
        q: q_acc,
        cum_nu,
        ext_fees,
        n_minus,
        n_plus,
        n_hat_minus,
    })
}

/// One simulated trajectory, sampled every `record_stride` nodes plus the
/// terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    /// Speed applied on the step starting at each recorded node.
    pub nu: Vec<f64>,
    pub p: Vec<f64>,
    pub q_lp: Vec<f64>,
    pub cum_nu: Vec<f64>,
    pub ext_fees: Vec<f64>,
    pub n_minus: Vec<u64>,
    pub n_plus: Vec<u64>,
    pub n_hat_minus: Vec<u64>,
    /// Terminal reward R = P_T paid to the LP.
    pub reward: f64,
    /// 𝔯·(N⁻_T + N⁺_T) − P_T.
    pub venue_pnl: f64,
    /// 𝔯·(N⁻_T + N⁺_T).
    pub fee_revenue: f64,
    pub terminal_cum_nu: f64,
    pub terminal_ext_fees: f64,
}

impl SimPath {
    fn record(&mut self, st: &PathState, nu: f64) {
        self.t.push(st.market.t);
        self.s.push(st.market.s);
        self.y.push(st.market.pool.y);
        self.z.push(st.market.pool.z);
        self.c.push(st.market.pool.c);
        self.nu.push(nu);
        self.p.push(st.p);
        self.q_lp.push(st.q);
        self.cum_nu.push(st.cum_nu);
        self.ext_fees.push(st.ext_fees);
        self.n_minus.push(st.n_minus);
        self.n_plus.push(st.n_plus);
        self.n_hat_minus.push(st.n_hat_minus);
    }

    /// One row per recorded node.
    pub fn write_csv<W: IoWrite>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,s,y,z,c,nu,p,q_lp,cum_nu,ext_fees,n_minus,n_plus,n_hat_minus")?;
        for i in 0..self.t.len() {
            writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{},{}",
                self.t[i], self.s[i], self.y[i], self.z[i], self.c[i], self.nu[i],
                self.p[i], self.q_lp[i], self.cum_nu[i], self.ext_fees[i],
                self.n_minus[i], self.n_plus[i], self.n_hat_minus[i],
            )?;
        }
        Ok(())
    }
}

fn controls_at(
    t: f64,
    st: &MarketState,
    p: &ModelParams,
    sol: Option<&RiccatiSolution>,
    regime: Regime,
) -> Result<ContractControls> {
    match regime {
        Regime::RiskNeutral => {
            Ok(controls_risk_neutral(t, st.pool.z, st.pool.y, st.s, p, None))
        }
        Regime::RiskAverse => {
            let sol = sol.ok_or_else(|| {
                Error::Config(
                    "risk_averse regime requires a Riccati solution; run the solver first".into(),
                )
            })?;
            controls_risk_averse(t, st.pool.z, st.pool.y, st.s, sol, p)
        }
    }
}

/// Simulates one path. Deterministic in (cfg.seed, path_index).
pub fn simulate_path(
    p: &ModelParams,
    sol: Option<&RiccatiSolution>,
    cfg: &SimConfig,
    initial: &MarketState,
    p0: f64,
    path_index: u64,
) -> Result<SimPath> {
    p.validate()?;
    cfg.validate()?;
    if initial.t != 0.0 {
        return Err(Error::Config("paths must start at t = 0".into()));
    }
    if let (Regime::RiskAverse, Some(sol)) = (cfg.regime, sol) {
        if (sol.horizon() - p.horizon_t).abs() > 1e-9 * p.horizon_t {
            return Err(Error::Config(format!(
                "solution horizon {} does not match the configured horizon {}",
                sol.horizon(),
                p.horizon_t
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(path_index);

    let n = cfg.n_steps;
    let dt = p.horizon_t / n as f64;
    let cap = n / cfg.record_stride + 2;
    let mut path = SimPath {
        t: Vec::with_capacity(cap),
        s: Vec::with_capacity(cap),
        y: Vec::with_capacity(cap),
        z: Vec::with_capacity(cap),
        c: Vec::with_capacity(cap),
        nu: Vec::with_capacity(cap),
        p: Vec::with_capacity(cap),
        q_lp: Vec::with_capacity(cap),
        cum_nu: Vec::with_capacity(cap),
        ext_fees: Vec::with_capacity(cap),
        n_minus: Vec::with_capacity(cap),
        n_plus: Vec::with_capacity(cap),
        n_hat_minus: Vec::with_capacity(cap),
        reward: 0.0,
        venue_pnl: 0.0,
        fee_revenue: 0.0,
        terminal_cum_nu: 0.0,
        terminal_ext_fees: 0.0,
    };

    let mut st = PathState::new(*initial, p0);
    for k in 0..n {
        st.market.t = k as f64 * dt;
        let ctl = controls_at(st.market.t, &st.market, p, sol, cfg.regime)?;
        let nu = match cfg.nu_policy {
            NuPolicy::Optimal => ctl.nu_star,
            NuPolicy::Forced(v) => v.clamp(-p.nu_max, p.nu_max),
        };
        if k % cfg.record_stride == 0 {
            path.record(&st, nu);
        }
        st = step(&st, &ctl, nu, dt, p, cfg.max_lambda_dt, &mut rng)?;
    }
    st.market.t = p.horizon_t;
    let ctl_t = controls_at(st.market.t, &st.market, p, sol, cfg.regime)?;
    let nu_t = match cfg.nu_policy {
        NuPolicy::Optimal => ctl_t.nu_star,
        NuPolicy::Forced(v) => v.clamp(-p.nu_max, p.nu_max),
    };
    path.record(&st, nu_t);

    path.reward = st.p;
    path.fee_revenue = p.fee_r * (st.n_minus + st.n_plus) as f64;
    path.venue_pnl = path.fee_revenue - path.reward;
    path.terminal_cum_nu = st.cum_nu;
    path.terminal_ext_fees = st.ext_fees;
    Ok(path)
}

/// Per-node mean, standard deviation and 5%/95% band of one series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
}

/// Fixed-width histogram over [lo, hi] (50 equal bins by default).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Histogram {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        if !(hi > lo) {
            // degenerate sample: everything in one bin
            counts[0] = values.len() as u64;
            return Histogram { lo, hi: lo, counts };
        }
        let w = (hi - lo) / bins as f64;
        for &v in values {
            let idx = (((v - lo) / w) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

/// Aggregate statistics of an ensemble of paths.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub t: Vec<f64>,
    pub y: Band,
    pub z: Band,
    pub s: Band,
    pub nu: Band,
    pub p: Band,
    pub q_lp: Band,
    pub cum_nu: Band,
    pub ext_fees: Band,
    /// Band of the mispricing s − z.
    pub mispricing: Band,
    pub reward_hist: Histogram,
    pub venue_hist: Histogram,
    /// Histogram of all recorded (s − z) samples across paths and nodes.
    pub mispricing_hist: Histogram,
    pub p0: f64,
    pub n_paths: usize,
    pub mean_reward: f64,
    pub se_reward: f64,
    pub mean_venue_pnl: f64,
    pub se_venue_pnl: f64,
    pub mean_fee_revenue: f64,
    /// Mean terminal P_T at the p0 this ensemble ran with.
    pub mean_p_terminal: f64,
    pub mean_cum_nu: f64,
    pub mean_ext_fees: f64,
    /// a₁/a₃ (infinite when a₃ = 0): the mispricing beyond which the linear
    /// intensity would go negative without the floor.
    pub boundary_d: f64,
    /// Fraction of recorded (s − z) samples with |s − z| > boundary_d.
    pub violation_fraction: f64,
    pub violations: u64,
    pub mispricing_samples: u64,
    /// Estimate of the equal-split initial level: the p0 that equalizes the
    /// expected terminal wealth of the LP and the venue.
    pub equal_split_p0: f64,
    /// Per-path terminal rewards (not serialized).
    #[serde(skip)]
    pub rewards: Vec<f64>,
    /// Per-path terminal venue profits (not serialized).
    #[serde(skip)]
    pub venue_pnls: Vec<f64>,
    /// Per-path fee revenue 𝔯·(N⁻+N⁺) (not serialized).
    #[serde(skip)]
    pub fee_revenues: Vec<f64>,
}

fn kahan_mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = x - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    sum / xs.len() as f64
}

fn std_dev(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let k = pos.floor() as usize;
    let w = pos - k as f64;
    if k + 1 < sorted.len() {
        sorted[k] * (1.0 - w) + sorted[k + 1] * w
    } else {
        sorted[k]
    }
}

fn band_of(columns: Vec<Vec<f64>>) -> Band {
    let mut mean = Vec::with_capacity(columns.len());
    let mut std = Vec::with_capacity(columns.len());
    let mut q05 = Vec::with_capacity(columns.len());
    let mut q95 = Vec::with_capacity(columns.len());
    for mut col in columns {
        let m = kahan_mean(&col);
        mean.push(m);
        std.push(std_dev(&col, m));
        col.sort_by(|a, b| a.total_cmp(b));
        q05.push(quantile(&col, 0.05));
        q95.push(quantile(&col, 0.95));
    }
    Band { mean, std, q05, q95 }
}

fn columns<F: Fn(&SimPath, usize) -> f64>(paths: &[SimPath], n_nodes: usize, f: F) -> Vec<Vec<f64>> {
    (0..n_nodes)
        .map(|k| paths.iter().map(|p| f(p, k)).collect())
        .collect()
}

/// Runs `cfg.n_paths` independent paths (in parallel; path i on RNG stream
/// (seed, i)) and aggregates them. Aggregation is a deterministic sequential
/// fold over paths ordered by index.
pub fn run_ensemble(
    p: &ModelParams,
    sol: Option<&RiccatiSolution>,
    cfg: &SimConfig,
    initial: &MarketState,
    p0: f64,
) -> Result<EnsembleSummary> {
    cfg.validate()?;
    let paths: Vec<SimPath> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_path(p, sol, cfg, initial, p0, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(p, p0, &paths))
}

/// Aggregates already-simulated paths into an [`EnsembleSummary`].
pub fn summarize(p: &ModelParams, p0: f64, paths: &[SimPath]) -> EnsembleSummary {
    let n_nodes = paths[0].t.len();
    let t = paths[0].t.clone();

    let rewards: Vec<f64> = paths.iter().map(|q| q.reward).collect();
    let venue_pnls: Vec<f64> = paths.iter().map(|q| q.venue_pnl).collect();
    let fee_revs: Vec<f64> = paths.iter().map(|q| q.fee_revenue).collect();
    let cum_nus: Vec<f64> = paths.iter().map(|q| q.terminal_cum_nu).collect();
    let fees: Vec<f64> = paths.iter().map(|q| q.terminal_ext_fees).collect();

    let mean_reward = kahan_mean(&rewards);
    let se_reward = std_dev(&rewards, mean_reward) / (rewards.len() as f64).sqrt();
    let mean_venue_pnl = kahan_mean(&venue_pnls);
    let se_venue_pnl = std_dev(&venue_pnls, mean_venue_pnl) / (venue_pnls.len() as f64).sqrt();
    let mean_fee_revenue = kahan_mean(&fee_revs);
    let mean_p_terminal = mean_reward;

    let boundary_d = if p.a3 > 0.0 { p.a1 / p.a3 } else { f64::INFINITY };
    let mut violations = 0u64;
    let mut samples = 0u64;
    let mut gaps = Vec::with_capacity(paths.len() * n_nodes);
    for path in paths {
        for k in 0..n_nodes {
            let gap = path.s[k] - path.z[k];
            samples += 1;
            gaps.push(gap);
            if gap.abs() > boundary_d {
                violations += 1;
            }
        }
    }

    EnsembleSummary {
        t,
        y: band_of(columns(paths, n_nodes, |p, k| p.y[k])),
        z: band_of(columns(paths, n_nodes, |p, k| p.z[k])),
        s: band_of(columns(paths, n_nodes, |p, k| p.s[k])),
        nu: band_of(columns(paths, n_nodes, |p, k| p.nu[k])),
        p: band_of(columns(paths, n_nodes, |p, k| p.p[k])),
        q_lp: band_of(columns(paths, n_nodes, |p, k| p.q_lp[k])),
        cum_nu: band_of(columns(paths, n_nodes, |p, k| p.cum_nu[k])),
        ext_fees: band_of(columns(paths, n_nodes, |p, k| p.ext_fees[k])),
        mispricing: band_of(columns(paths, n_nodes, |p, k| p.s[k] - p.z[k])),
        reward_hist: Histogram::build(&rewards, 50),
        venue_hist: Histogram::build(&venue_pnls, 50),
        mispricing_hist: Histogram::build(&gaps, 50),
        p0,
        n_paths: paths.len(),
        mean_reward,
        se_reward,
        mean_venue_pnl,
        se_venue_pnl,
        mean_fee_revenue,
        mean_p_terminal,
        mean_cum_nu: kahan_mean(&cum_nus),
        mean_ext_fees: kahan_mean(&fees),
        boundary_d,
        violation_fraction: violations as f64 / samples as f64,
        violations,
        mispricing_samples: samples,
        equal_split_p0: equal_split_value(mean_fee_revenue, mean_reward, p0),
        rewards,
        venue_pnls,
        fee_revenues: fee_revs,
    }
}

/// Equal-split level from ensemble moments: the reward shifts one-for-one
/// with p0 and the venue's profit shifts against it, so the p0 equalizing
/// the two expectations is
///
/// ```text
/// p0* = E[𝔯·(N⁻+N⁺)]/2 − E[P_T^{0,A}],
/// ```
///
/// with the zero-level expectation recovered from an ensemble run at any
/// p0 as (mean terminal P) − p0.
pub fn equal_split_value(mean_fee_revenue: f64, mean_p_terminal: f64, p0: f64) -> f64 {
    mean_fee_revenue / 2.0 - (mean_p_terminal - p0)
}

/// Runs an ensemble at p0 = 0 and returns the equal-split p0*.
pub fn equal_split_p0(
    p: &ModelParams,
    sol: Option<&RiccatiSolution>,
    cfg: &SimConfig,
    initial: &MarketState,
) -> Result<f64> {
    let summary = run_ensemble(p, sol, cfg, initial, 0.0)?;
    Ok(summary.equal_split_p0)
}

impl EnsembleSummary {
    /// Writes one CSV per series (`series_<name>.csv`, columns
    /// t,mean,std,q05,q95) into `dir` and returns the paths written.
    pub fn write_series_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let series: [(&str, &Band); 9] = [
            ("y", &self.y),
            ("z", &self.z),
            ("s", &self.s),
            ("nu", &self.nu),
            ("p", &self.p),
            ("q_lp", &self.q_lp),
            ("cum_nu", &self.cum_nu),
            ("ext_fees", &self.ext_fees),
            ("mispricing", &self.mispricing),
        ];
        let mut written = Vec::new();
        for (name, band) in series {
            let file = dir.join(format!("series_{name}.csv"));
            let mut out = std::fs::File::create(&file)?;
            writeln!(out, "t,mean,std,q05,q95")?;
            for k in 0..self.t.len() {
                writeln!(
                    out,
                    "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    self.t[k], band.mean[k], band.std[k], band.q05[k], band.q95[k]
                )?;
            }
            written.push(file);
        }
        Ok(written)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("summary serialization failed: {e}")))
    }
}
