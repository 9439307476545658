//! Scalar model parameters.
//!
//! Units follow the ETH-USDC convention used throughout the crate: prices in
//! USDC per ETH, inventories in ETH, time in days, intensities in jumps per
//! day. A "jump" aggregates the liquidity-taking activity of one ten-minute
//! window, so a baseline intensity near 144/day means roughly one jump per
//! window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial pool marginal price Z₀ of the calibrated ETH-USDC experiments.
pub const CALIBRATED_Z0: f64 = 2820.0;
/// Initial external midprice S₀ (pool and external venue start aligned).
pub const CALIBRATED_S0: f64 = 2820.0;
/// Initial ETH reserves Y₀.
pub const CALIBRATED_Y0: f64 = 50_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// External midprice volatility σ, USDC·day⁻¹ᐟ².
    pub sigma: f64,
    /// Volatility η of the aggregate (non-strategic) LP flow, ETH·day⁻¹ᐟ².
    pub eta: f64,
    /// Liquidity-taker trade size ξ, ETH.
    pub xi: f64,
    /// Temporary price impact 𝔞 in the external venue, USDC·day·ETH⁻².
    pub impact_a: f64,
    /// Fee 𝔯 collected by the venue per executed jump, USDC.
    pub fee_r: f64,
    /// LP risk aversion γ, USDC⁻¹.
    pub gamma: f64,
    /// Venue risk aversion ζ, USDC⁻¹ (ζ ≥ 0; ζ ↓ 0 is the risk-neutral venue).
    pub zeta: f64,
    /// Trading horizon T, days.
    pub horizon_t: f64,
    /// Cap ν∞ on the representative LP's provision speed, ETH·day⁻¹.
    pub nu_max: f64,
    /// Intensity floor a₀ > 0, jumps·day⁻¹.
    pub a0: f64,
    /// Baseline arrival intensity a₁, jumps·day⁻¹.
    pub a1: f64,
    /// Depth sensitivity a₂ of arrivals, jumps·day⁻¹·ETH⁻¹.
    pub a2: f64,
    /// Mispricing sensitivity a₃ of arrivals, jumps·day⁻¹·USDC⁻¹.
    pub a3: f64,
}

impl ModelParams {
    /// Floor used when a configuration does not specify a₀. The floor only
    /// needs to be positive; in the calibrated regime it never binds at the
    /// initial state.
    pub const DEFAULT_A0: f64 = 1e-3;

    /// Calibrated ETH-USDC parameter set with depth-insensitive arrivals
    /// (a₂ = 0) and negligible external impact 𝔞 = 10⁻¹⁴.
    pub fn calibrated_baseline() -> Self {
        ModelParams {
            sigma: 0.0569 * CALIBRATED_S0,
            eta: 1e-10,
            xi: 300.0,
            impact_a: 1e-14,
            fee_r: 0.01 * 300.0 * CALIBRATED_Z0,
            gamma: 1e-18,
            zeta: 1e-6,
            horizon_t: 1.0,
            nu_max: 1e7,
            a0: Self::DEFAULT_A0,
            a1: 142.7,
            a2: 0.0,
            a3: 13.6,
        }
    }

    /// Calibrated set where depth attracts noise trading: a₂ = 10⁻⁵ and
    /// 𝔞 = 5×10⁻⁶. This is the regime in which the LP adds liquidity in
    /// equilibrium.
    pub fn calibrated_noise_trading() -> Self {
        ModelParams {
            a2: 1e-5,
            impact_a: 5e-6,
            ..Self::calibrated_baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
            Ok(())
        };
        positive("sigma", self.sigma)?;
        positive("eta", self.eta)?;
        positive("xi", self.xi)?;
        positive("impact_a", self.impact_a)?;
        positive("fee_r", self.fee_r)?;
        positive("gamma", self.gamma)?;
        positive("horizon_t", self.horizon_t)?;
        positive("nu_max", self.nu_max)?;
        positive("a0", self.a0)?;
        let non_negative = |name: &str, v: f64| -> Result<()> {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
            Ok(())
        };
        non_negative("zeta", self.zeta)?;
        non_negative("a1", self.a1)?;
        non_negative("a2", self.a2)?;
        non_negative("a3", self.a3)?;
        Ok(())
    }
}
