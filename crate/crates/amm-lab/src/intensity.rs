//! Order-arrival intensity model.
//!
//! Liquidity-taking buys (N⁻) and sells (N⁺) arrive with state-dependent
//! intensities
//!
//! ```text
//! λ± = max{ a₀, a₁ + a₂·Y ± a₃·(Z − S) }
//! ```
//!
//! a₁ is the baseline flow, a₂ rewards pool depth (more depth, less slippage,
//! more arrivals), and a₃ is the arbitrageur channel: when the pool quote Z
//! sits above the external midprice S, sells become more likely and buys less
//! likely. The floor a₀ > 0 keeps both intensities away from zero.

use serde::{Deserialize, Serialize};

use crate::params::ModelParams;

/// Buy/sell arrival intensities, jumps per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityPair {
    /// λ⁻, intensity of LT buys (ETH leaves the pool).
    pub minus: f64,
    /// λ⁺, intensity of LT sells (ETH enters the pool).
    pub plus: f64,
}

/// λ± = max{a₀, a₁ + a₂·y ± a₃·(z − s)} at the pre-jump state.
pub fn intensities(p: &ModelParams, z: f64, y: f64, s: f64) -> IntensityPair {
    let base = p.a1 + p.a2 * y;
    let tilt = p.a3 * (z - s);
    IntensityPair {
        minus: p.a0.max(base - tilt),
        plus: p.a0.max(base + tilt),
    }
}
