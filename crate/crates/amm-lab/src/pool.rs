//! Constant-product pool mechanics.
//!
//! The pool trades the pair (X, Y) = (USDC, ETH) under the trading function
//! f(x, y) = x·y. Reserves live on the level curve x = c/y with depth
//! constant c, and the marginal price is Z = c/y² = x/y. Liquidity takers
//! move reserves *along* the level curve (c unchanged); liquidity providers
//! move the level curve itself (Z unchanged).
//!
//! The state deliberately stores (x, y, z, c) redundantly and renormalizes
//! c = x·y after every LP flow so that the level-set constant cannot drift
//! from the reserves over long simulations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserves and derived quantities of the constant-product pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    /// USDC reserves X.
    pub x: f64,
    /// ETH reserves Y.
    pub y: f64,
    /// Marginal price Z = c/y², USDC per ETH.
    pub z: f64,
    /// Depth constant c = x·y, USDC·ETH.
    pub c: f64,
}

impl PoolState {
    pub fn from_reserves(x: f64, y: f64) -> Result<Self> {
        if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Domain(format!(
                "pool reserves must be positive and finite, got x = {x}, y = {y}"
            )));
        }
        Ok(PoolState { x, y, z: x / y, c: x * y })
    }

    /// Pool holding `y` ETH quoted at marginal price `z`, so x = z·y.
    pub fn from_price(y: f64, z: f64) -> Result<Self> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("marginal price must be positive, got {z}")));
        }
        Self::from_reserves(z * y, y)
    }
}

/// Full market state seen by the controls: time, external midprice, pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Time in days, 0 ≤ t ≤ T.
    pub t: f64,
    /// External midprice S, USDC per ETH.
    pub s: f64,
    pub pool: PoolState,
}

/// Direction of a liquidity-taking trade. A buy takes ξ ETH out of the pool
/// (the N⁻ counting process); a sell adds ξ ETH (N⁺).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

/// Level function x = φ_c(y) = c / y.
pub fn level_x(c: f64, y: f64) -> Result<f64> {
    if !(c > 0.0 && y > 0.0) {
        return Err(Error::Domain(format!("level_x requires c > 0 and y > 0, got c = {c}, y = {y}")));
    }
    Ok(c / y)
}

/// Marginal price Z = −φ_c'(y) = c / y².
pub fn marginal_price(c: f64, y: f64) -> Result<f64> {
    if !(c > 0.0 && y > 0.0) {
        return Err(Error::Domain(format!(
            "marginal_price requires c > 0 and y > 0, got c = {c}, y = {y}"
        )));
    }
    Ok(c / (y * y))
}

/// Applies one liquidity-taking trade of size `xi` along the level curve.
///
/// A buy needs y > ξ; otherwise the jump is suppressed and
/// [`Error::TradeRejected`] is returned so the caller can count the
/// suppressed event separately (the contract still accrues A⁻ on it).
///
/// The post-trade price is computed as z·(y/y′)² rather than c/y′² to avoid
/// cancellation at the parameter magnitudes this crate runs at.
pub fn apply_lt_trade(pool: &PoolState, side: Side, xi: f64) -> Result<PoolState> {
    if !(xi > 0.0) {
        return Err(Error::Domain(format!("trade size must be positive, got {xi}")));
    }
    let y_new = match side {
        Side::Buy => {
            if pool.y <= xi {
                return Err(Error::TradeRejected { y: pool.y, xi });
            }
            pool.y - xi
        }
        Side::Sell => pool.y + xi,
    };
    let ratio = pool.y / y_new;
    Ok(PoolState {
        x: pool.c / y_new,
        y: y_new,
        z: pool.z * ratio * ratio,
        c: pool.c,
    })
}

/// Applies an LP flow of `dy` ETH at the current marginal price: the ETH leg
/// moves by dy, the USDC leg by z·dy, so z is unchanged and the depth
/// constant is renormalized to c = x′·y′.
pub fn apply_lp_flow(pool: &PoolState, dy: f64) -> Result<PoolState> {
    let y_new = pool.y + dy;
    if !(y_new > 0.0) {
        return Err(Error::Domain(format!(
            "LP flow would drain the pool: y = {}, dy = {dy}",
            pool.y
        )));
    }
    let x_new = pool.x + pool.z * dy;
    Ok(PoolState { x: x_new, y: y_new, z: pool.z, c: x_new * y_new })
}

/// Wealth jumps Δ± of the representative LP per liquidity-taking trade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpDeltas {
    /// Δ⁻ = −ξ·(s − z·y/(y − ξ)), the mark-to-market move on an LT buy.
    /// Zero when the buy would be suppressed (see `minus_defined`).
    pub minus: f64,
    /// Δ⁺ = +ξ·(s − z·y/(y + ξ)), the move on an LT sell.
    pub plus: f64,
    /// False iff y ≤ ξ, in which case the minus branch is undefined and
    /// `minus` is reported as 0, consistent with the suppressed jump.
    pub minus_defined: bool,
}

/// Evaluates Δ± = ±ξ·(s − z·y/(y ± ξ)) at the pre-trade state.
pub fn jump_deltas(z: f64, y: f64, s: f64, xi: f64) -> JumpDeltas {
    let plus = xi * (s - z * y / (y + xi));
    if y > xi {
        JumpDeltas { minus: -xi * (s - z * y / (y - xi)), plus, minus_defined: true }
    } else {
        JumpDeltas { minus: 0.0, plus, minus_defined: false }
    }
}
