//! Leader–follower equilibrium between an automated market maker venue and a
//! representative liquidity provider.
//!
//! The venue (leader) offers a contract written on the model's four risk
//! sources; the LP (follower) responds with a provision speed. This crate
//! implements the pieces needed to compute and reproduce that equilibrium
//! numerically:
//!
//! - [`pool`]: constant-product pool mechanics and the LP's per-trade wealth
//!   jumps,
//! - [`intensity`]: the state-dependent arrival intensities of liquidity
//!   takers,
//! - [`riccati`]: the backward matrix Riccati / linear / quadrature system
//!   behind the risk-averse venue's quadratic value ansatz,
//! - [`controls`]: closed-form contract loadings (risk-neutral and
//!   risk-averse) and the induced LP speed,
//! - [`simulate`]: a reproducible Monte Carlo engine for the full jump
//!   diffusion under the LP's response measure,
//! - [`calibrate`]: intensity calibration from tick data,
//! - [`oracle`]: independent verifiers (grid-search argmax, equation
//!   residual, martingale property tests, truncation bounds).

pub mod calibrate;
pub mod controls;
pub mod error;
pub mod intensity;
pub mod oracle;
pub mod params;
pub mod pool;
pub mod riccati;
pub mod simulate;

pub use controls::{controls_risk_averse, controls_risk_neutral, nu_bar, ContractControls};
pub use error::{Error, Result};
pub use intensity::{intensities, IntensityPair};
pub use params::ModelParams;
pub use pool::{
    apply_lp_flow, apply_lt_trade, jump_deltas, level_x, marginal_price, JumpDeltas, MarketState,
    PoolState, Side,
};
pub use riccati::{
    build_system, existence_check, richardson_order, solve, ExistenceDiagnostic, RiccatiSolution,
    SystemMatrices,
};
pub use simulate::{
    equal_split_p0, equal_split_value, run_ensemble, simulate_path, step, EnsembleSummary,
    NuPolicy, PathState, Regime, SimConfig, SimPath,
};
