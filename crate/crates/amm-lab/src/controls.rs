//! Equilibrium contract loadings and the LP's induced provision speed.
//!
//! The venue's reward is represented as an initial level P₀ plus loadings
//! A = (A^W, A^B, A⁻, A⁺) on the model's four risk sources. Whatever the
//! loadings, the representative LP's best response is
//!
//! ```text
//! ν̄(A) = (A^B / (2𝔞η) ∨ −ν∞) ∧ ν∞ ,
//! ```
//!
//! so only A^B steers liquidity. Two closed forms are provided for the
//! venue's optimal loadings: the risk-neutral one (ζ ↓ 0) with the
//! ∂_Y-value slope approximated by 2a₂𝔯(T−t), and the risk-averse one built
//! on the quadratic value ansatz from [`crate::riccati`].

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ModelParams;
use crate::pool::jump_deltas;
use crate::riccati::RiccatiSolution;

/// Contract loadings at one state, plus the LP speed they induce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractControls {
    /// Loading A^W on the external-price Brownian motion, USDC per unit.
    pub a_w: f64,
    /// Loading A^B on the liquidity-provision Brownian motion, USDC per unit.
    pub a_b: f64,
    /// Per-jump payment A⁻ on LT buys (zero when y ≤ ξ).
    pub a_minus: f64,
    /// Per-jump payment A⁺ on LT sells.
    pub a_plus: f64,
    /// ν* = ν̄(A^B), ETH per day.
    pub nu_star: f64,
    /// Whether either bound branch was taken: the α-bound on A^B or the
    /// ν∞ cap on the speed.
    pub clamped: bool,
}

/// LP best-response speed ν̄(A^B) = clamp(A^B / (2𝔞η), ±ν∞).
pub fn nu_bar(a_b: f64, p: &ModelParams) -> f64 {
    (a_b / (2.0 * p.impact_a * p.eta)).clamp(-p.nu_max, p.nu_max)
}

/// Optimal loadings for the risk-neutral venue (ζ ↓ 0).
///
/// `dyv` is the slope ∂_Y of the venue's value; when `None` it defaults to
/// the closed-form approximation 2a₂𝔯(T−t). A^B takes the interior value
///
/// ```text
/// α = (∂_Y v/(𝔞η) − 2(s+z)γη) / (2γ + 1/(𝔞η²))
/// ```
///
/// whenever α lies within [−2𝔞ην∞, 2𝔞ην∞] (ties included), and −(s+z)η
/// otherwise.
pub fn controls_risk_neutral(
    t: f64,
    z: f64,
    y: f64,
    s: f64,
    p: &ModelParams,
    dyv: Option<f64>,
) -> ContractControls {
    let dyv = dyv.unwrap_or(2.0 * p.a2 * p.fee_r * (p.horizon_t - t));
    let a_eta = p.impact_a * p.eta;
    let alpha = (dyv / a_eta - 2.0 * (s + z) * p.gamma * p.eta)
        / (2.0 * p.gamma + 1.0 / (a_eta * p.eta));
    let bound = 2.0 * a_eta * p.nu_max;
    let in_bound = alpha.abs() <= bound;
    let a_b = if in_bound { alpha } else { -(s + z) * p.eta };

    let deltas = jump_deltas(z, y, s, p.xi);
    let nu_star = nu_bar(a_b, p);
    ContractControls {
        a_w: -y * p.sigma,
        a_b,
        a_minus: -deltas.minus,
        a_plus: -deltas.plus,
        nu_star,
        clamped: !in_bound || (a_b / (2.0 * a_eta)).abs() > p.nu_max,
    }
}

/// Evaluation options for the risk-averse closed form.
#[derive(Debug, Clone, Copy, Default)]
pub struct RiskAverseOptions {
    /// Evaluate the jump values v̂± at the exact post-trade quote
    /// z·y²/(y±ξ)² instead of holding z fixed. The fixed-z form is the one
    /// the ODE system was derived under; the exact form is for sensitivity
    /// studies only.
    pub exact_jump_args: bool,
    /// Use ζη·∂_Y v̂ instead of ζγ·∂_Y v̂ in the outside-the-bound branch of
    /// A^B. The branch is never reached at the calibrated parameters; the
    /// default keeps the published ζγ form.
    pub eta_outside_branch: bool,
}

/// Optimal loadings for the risk-averse venue, using the quadratic ansatz.
///
/// With (∂_Z v̂, ∂_Y v̂, ∂_S v̂) the exact ansatz gradient and
/// v̂± = v̂(t, z, y±ξ, s):
///
/// ```text
/// α_ζ = ((1/(𝔞η) + 2ζη)·∂_Y v̂ − 2γη(s+z)) / (2(γ+ζ) + 1/(𝔞η²))
/// A^W = σ(ζ·∂_S v̂ − γy)/(γ+ζ)
/// A⁻  = (−γΔ⁻ + ζ(v̂⁻ − v̂ + 𝔯))/(γ+ζ)   if y > ξ, else 0
/// A⁺  = (−γΔ⁺ + ζ(v̂⁺ − v̂ + 𝔯))/(γ+ζ)
/// ```
pub fn controls_risk_averse(
    t: f64,
    z: f64,
    y: f64,
    s: f64,
    sol: &RiccatiSolution,
    p: &ModelParams,
) -> Result<ContractControls> {
    controls_risk_averse_with(t, z, y, s, sol, p, RiskAverseOptions::default())
}

pub fn controls_risk_averse_with(
    t: f64,
    z: f64,
    y: f64,
    s: f64,
    sol: &RiccatiSolution,
    p: &ModelParams,
    opts: RiskAverseOptions,
) -> Result<ContractControls> {
    let grad = sol.gradient(t, z, y, s)?;
    let (dyv, dsv) = (grad[1], grad[2]);
    let v0 = sol.value(t, z, y, s)?;
    let gz = p.gamma + p.zeta;

    let a_eta = p.impact_a * p.eta;
    let alpha = ((1.0 / a_eta + 2.0 * p.zeta * p.eta) * dyv - 2.0 * p.gamma * p.eta * (s + z))
        / (2.0 * gz + 1.0 / (a_eta * p.eta));
    let bound = 2.0 * a_eta * p.nu_max;
    let in_bound = alpha.abs() <= bound;
    let a_b = if in_bound {
        alpha
    } else if opts.eta_outside_branch {
        (p.zeta * p.eta * dyv - p.gamma * p.eta * (s + z)) / gz
    } else {
        (p.zeta * p.gamma * dyv - p.gamma * p.eta * (s + z)) / gz
    };

    let a_w = p.sigma * (p.zeta * dsv - p.gamma * y) / gz;

    let jump_arg = |delta_sign: f64| -> f64 {
        if opts.exact_jump_args {
            let ratio = y / (y + delta_sign * p.xi);
            z * ratio * ratio
        } else {
            z
        }
    };
    let deltas = jump_deltas(z, y, s, p.xi);
    let v_plus = sol.value(t, jump_arg(1.0), y + p.xi, s)?;
    let a_plus = (-p.gamma * deltas.plus + p.zeta * (v_plus - v0 + p.fee_r)) / gz;
    let a_minus = if y > p.xi {
        let v_minus = sol.value(t, jump_arg(-1.0), y - p.xi, s)?;
        (-p.gamma * deltas.minus + p.zeta * (v_minus - v0 + p.fee_r)) / gz
    } else {
        0.0
    };

    let nu_star = nu_bar(a_b, p);
    Ok(ContractControls {
        a_w,
        a_b,
        a_minus,
        a_plus,
        nu_star,
        clamped: !in_bound || (a_b / (2.0 * a_eta)).abs() > p.nu_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::test_params::o1;
    use crate::riccati::solve;

    #[test]
    fn nu_bar_clamps() {
        let p = ModelParams::calibrated_noise_trading();
        assert_eq!(nu_bar(0.0, &p), 0.0);
        assert_eq!(nu_bar(4.0 * p.impact_a * p.eta * p.nu_max, &p), p.nu_max);
        assert_eq!(nu_bar(-4.0 * p.impact_a * p.eta * p.nu_max, &p), -p.nu_max);
        // 𝔞 = 5e−6, η = 1e−10: A^B = 1e−12 induces 1000 ETH/day
        let v = nu_bar(1e-12, &p);
        assert!((v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn risk_neutral_speed_matches_closed_form() {
        let p = ModelParams::calibrated_noise_trading();
        let (z, s) = (2820.0, 2820.0);
        for t in [0.0, 0.3, 0.9] {
            let c = controls_risk_neutral(t, z, 50_000.0, s, &p, None);
            let expect = (2.0 * p.a2 * p.fee_r * (p.horizon_t - t)
                - 2.0 * (s + z) * p.gamma * p.impact_a * p.eta * p.eta)
                / (4.0 * p.eta * p.eta * p.impact_a * p.impact_a * p.gamma + 2.0 * p.impact_a);
            assert!((c.nu_star - expect).abs() <= 1e-12 * expect.abs());
            assert!(!c.clamped);
        }
        // at t = 0 the speed is a₂𝔯T/𝔞 up to O(γη²) corrections
        let c = controls_risk_neutral(0.0, z, 50_000.0, s, &p, None);
        let limit = p.a2 * p.fee_r * p.horizon_t / p.impact_a;
        assert!((c.nu_star / limit - 1.0).abs() <= 1e-6, "nu = {}", c.nu_star);
        assert!((limit - 16_920.0).abs() < 1e-9);
    }

    #[test]
    fn risk_neutral_without_depth_coupling_is_flat() {
        let mut p = ModelParams::calibrated_noise_trading();
        p.a2 = 0.0;
        let c = controls_risk_neutral(0.0, 2820.0, 50_000.0, 2820.0, &p, None);
        // −(s+z)γη² ≈ −5.6e−35: the LP neither adds nor removes liquidity
        assert!(c.nu_star.abs() <= 1e-30);
    }

    #[test]
    fn risk_neutral_terminal_values() {
        let p = ModelParams::calibrated_noise_trading();
        let (z, y, s) = (2850.0, 48_000.0, 2800.0);
        let c = controls_risk_neutral(p.horizon_t, z, y, s, &p, None);
        assert_eq!(c.a_w, -y * p.sigma);
        let d = jump_deltas(z, y, s, p.xi);
        assert_eq!(c.a_minus, -d.minus);
        assert_eq!(c.a_plus, -d.plus);

        // indicator: the buy leg pays nothing when y ≤ ξ
        let c = controls_risk_neutral(0.5, z, 200.0, s, &p, None);
        assert_eq!(c.a_minus, 0.0);
    }

    #[test]
    fn risk_averse_terminal_values() {
        let p = ModelParams::calibrated_noise_trading();
        let sol = solve(&p, 400).unwrap();
        let (z, y, s) = (2810.0, 50_000.0, 2830.0);
        let c = controls_risk_averse(p.horizon_t, z, y, s, &sol, &p).unwrap();
        let gz = p.gamma + p.zeta;
        assert!((c.a_w - (-p.sigma * p.gamma * y / gz)).abs() <= 1e-9 * c.a_w.abs());
        let d = jump_deltas(z, y, s, p.xi);
        let want_minus = (-p.gamma * d.minus + p.zeta * p.fee_r) / gz;
        let want_plus = (-p.gamma * d.plus + p.zeta * p.fee_r) / gz;
        assert!((c.a_minus - want_minus).abs() <= 1e-9 * want_minus.abs());
        assert!((c.a_plus - want_plus).abs() <= 1e-9 * want_plus.abs());
        let alpha = -2.0 * p.gamma * p.eta * (s + z)
            / (2.0 * gz + 1.0 / (p.impact_a * p.eta * p.eta));
        assert!((c.a_b - alpha).abs() <= 1e-12 * alpha.abs().max(1e-300));
    }

    #[test]
    fn risk_averse_converges_to_risk_neutral() {
        // ζ = 1e−30 collapses the risk-averse closed form onto the
        // risk-neutral one with ∂_Y v̂ passed through.
        let mut p = o1();
        p.zeta = 1e-30;
        let sol = solve(&p, 4_000).unwrap();
        for (t, z, y, s) in [(0.1, 1.2, 2.0, 1.1), (0.55, 0.8, 3.0, 0.9), (0.97, 1.0, 2.4, 1.0)] {
            let ra = controls_risk_averse(t, z, y, s, &sol, &p).unwrap();
            let dyv = sol.gradient(t, z, y, s).unwrap()[1];
            let rn = controls_risk_neutral(t, z, y, s, &p, Some(dyv));
            for (a, b) in [
                (ra.a_w, rn.a_w),
                (ra.a_b, rn.a_b),
                (ra.a_minus, rn.a_minus),
                (ra.a_plus, rn.a_plus),
                (ra.nu_star, rn.nu_star),
            ] {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn venue_dominates_jump_compensation() {
        // ζ/γ = 1e12 at the calibrated set: A± is the venue's continuation
        // difference v̂± − v̂ + 𝔯 up to 1e−10 relative.
        let p = ModelParams::calibrated_noise_trading();
        let sol = solve(&p, 2_000).unwrap();
        let (t, z, y, s) = (0.25, 2825.0, 50_500.0, 2815.0);
        let c = controls_risk_averse(t, z, y, s, &sol, &p).unwrap();
        let v0 = sol.value(t, z, y, s).unwrap();
        let vp = sol.value(t, z, y + p.xi, s).unwrap();
        let vm = sol.value(t, z, y - p.xi, s).unwrap();
        let want_plus = vp - v0 + p.fee_r;
        let want_minus = vm - v0 + p.fee_r;
        assert!((c.a_plus - want_plus).abs() <= 1e-10 * want_plus.abs());
        assert!((c.a_minus - want_minus).abs() <= 1e-10 * want_minus.abs());
    }

    #[test]
    fn lp_adds_liquidity_under_noise_trading() {
        let p = ModelParams::calibrated_noise_trading();
        let sol = solve(&p, 2_000).unwrap();
        let c = controls_risk_averse(0.0, 2820.0, 50_000.0, 2820.0, &sol, &p).unwrap();
        assert!(c.nu_star > 0.0);
        assert!((c.nu_star - 16_920.0).abs() / 16_920.0 < 0.01, "nu = {}", c.nu_star);
        assert!(!c.clamped);
        assert_eq!(c.nu_star, nu_bar(c.a_b, &p));
    }

    #[test]
    fn clamp_flag_is_consistent() {
        let mut p = o1();
        p.nu_max = 0.05;
        let sol = solve(&p, 1_000).unwrap();
        let mut x = 0x243f6a8885a308d3u64;
        for _ in 0..200 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let u = (x >> 11) as f64 / (1u64 << 53) as f64;
            let (t, z, y, s) = (u, 0.5 + u, 1.0 + 2.0 * u, 0.6 + 0.5 * u);
            let c = controls_risk_averse(t, z, y, s, &sol, &p).unwrap();
            if !c.clamped {
                assert!((c.a_b / (2.0 * p.impact_a * p.eta)).abs() <= p.nu_max);
            }
            assert!(c.nu_star.abs() <= p.nu_max);
        }
    }

    #[test]
    fn suppressed_buy_leg_pays_nothing() {
        let p = o1();
        let sol = solve(&p, 500).unwrap();
        let c = controls_risk_averse(0.4, 1.0, 0.5 * p.xi, 1.0, &sol, &p).unwrap();
        assert_eq!(c.a_minus, 0.0);
    }

    #[test]
    fn option_flags_touch_only_their_branches() {
        let p = o1();
        let sol = solve(&p, 500).unwrap();
        let (t, z, y, s) = (0.3, 1.1, 2.0, 0.9);
        let base = controls_risk_averse(t, z, y, s, &sol, &p).unwrap();
        assert!(!base.clamped);

        // exact post-trade quote arguments shift only the jump payments
        let exact = controls_risk_averse_with(
            t, z, y, s, &sol, &p,
            RiskAverseOptions { exact_jump_args: true, ..Default::default() },
        )
        .unwrap();
        assert_ne!(base.a_plus, exact.a_plus);
        assert_ne!(base.a_minus, exact.a_minus);
        assert_eq!(base.a_w, exact.a_w);
        assert_eq!(base.a_b, exact.a_b);

        // the outside-branch variant is inert while alpha is inside the bound
        let alt = controls_risk_averse_with(
            t, z, y, s, &sol, &p,
            RiskAverseOptions { eta_outside_branch: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(base, alt);
    }
}
