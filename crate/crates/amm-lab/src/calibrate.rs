//! Intensity calibration from tick data.
//!
//! The input is a CSV of ticks carrying the external midprice S, the pool
//! marginal price Z, and (for trade ticks) the initiating side. Ticks are
//! grouped into fixed windows (ten minutes by default), each window's buy
//! and sell counts are scaled to jumps per day, and a single stacked
//! regression with a shared intercept recovers (a₁, a₃) from
//!
//! ```text
//! λ± = a₁ ± a₃·(Z − S)
//! ```
//!
//! i.e. observations (λ̂⁻, +(S−Z)) and (λ̂⁺, −(S−Z)) on the same line. The
//! fitted pair gives the boundary d = a₁/a₃ beyond which the linear
//! intensity would go negative without the a₀ floor; buckets whose mean
//! mispricing falls outside ±d are reported as violations. Depth
//! sensitivity a₂ is fixed at zero here: the tick schema carries no reserve
//! column, and the depth effect is calibrated separately if at all.

use std::io::Write as IoWrite;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeSide {
    /// Buy-initiated trade: ETH leaves the pool (counts toward λ⁻).
    Buy,
    /// Sell-initiated trade: ETH enters the pool (counts toward λ⁺).
    Sell,
    /// Quote-only tick; contributes to the mispricing average only.
    None,
}

/// One row of the tick CSV (`timestamp,s,z,side,size`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    /// UTC milliseconds.
    pub timestamp_ms: i64,
    /// External midprice, USDC/ETH.
    pub s: f64,
    /// Pool marginal price, USDC/ETH.
    pub z: f64,
    pub side: TradeSide,
    /// Trade size, ETH (0 for quote ticks).
    pub size: f64,
}

/// Result of loading a tick file: parsed records sorted by timestamp, plus
/// the rows that were rejected (1-based line number and reason).
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub records: Vec<TickRecord>,
    pub skipped: Vec<(u64, String)>,
}

/// Reads and validates a tick CSV. Malformed rows are collected into the
/// report (or abort the load when `strict` is set); records come back
/// stably sorted by timestamp.
pub fn load_ticks(path: &Path, strict: bool) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name:?}", path.display())))
    };
    let (c_ts, c_s, c_z, c_side, c_size) =
        (col("timestamp")?, col("s")?, col("z")?, col("side")?, col("size")?);

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = parse_row(&row, c_ts, c_s, c_z, c_side, c_size);
        match parsed {
            Ok(rec) => records.push(rec),
            Err(msg) => {
                if strict {
                    return Err(Error::Format(format!("{}:{line}: {msg}", path.display())));
                }
                skipped.push((line, msg));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Format(format!("{}: no valid tick records", path.display())));
    }
    records.sort_by_key(|r| r.timestamp_ms);
    Ok(LoadReport { records, skipped })
}

fn parse_row(
    row: &csv::StringRecord,
    c_ts: usize,
    c_s: usize,
    c_z: usize,
    c_side: usize,
    c_size: usize,
) -> std::result::Result<TickRecord, String> {
    let field = |i: usize| row.get(i).ok_or_else(|| format!("missing field {i}"));
    let timestamp_ms: i64 =
        field(c_ts)?.parse().map_err(|e| format!("bad timestamp: {e}"))?;
    let s: f64 = field(c_s)?.parse().map_err(|e| format!("bad s: {e}"))?;
    let z: f64 = field(c_z)?.parse().map_err(|e| format!("bad z: {e}"))?;
    if !(s > 0.0 && s.is_finite()) {
        return Err(format!("non-positive midprice s = {s}"));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(format!("non-positive pool price z = {z}"));
    }
    let side = match field(c_side)?.to_ascii_lowercase().as_str() {
        "buy" => TradeSide::Buy,
        "sell" => TradeSide::Sell,
        "none" | "" => TradeSide::None,
        other => return Err(format!("unknown side {other:?}")),
    };
    let size: f64 = field(c_size)?.parse().map_err(|e| format!("bad size: {e}"))?;
    if !(size >= 0.0) || !size.is_finite() {
        return Err(format!("negative size {size}"));
    }
    Ok(TickRecord { timestamp_ms, s, z, side, size })
}

/// One fixed window of ticks with counts scaled to jumps per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeBucket {
    pub window_start_ms: i64,
    /// Buy count × (1440 / window minutes).
    pub lambda_minus_hat: f64,
    /// Sell count × (1440 / window minutes).
    pub lambda_plus_hat: f64,
    /// Mean of S − Z over the ticks in the window, USDC.
    pub mean_mispricing: f64,
    /// True when the window held no ticks and the mispricing was carried
    /// forward from the previous window.
    pub carried_forward: bool,
}

/// Splits records into half-open `[start, start + w)` windows anchored at
/// the first tick; a record exactly on a boundary belongs to the later
/// window. Empty windows are emitted with zero counts and the previous
/// window's mispricing.
pub fn bucketize(records: &[TickRecord], window_minutes: f64) -> Vec<TradeBucket> {
    assert!(!records.is_empty(), "bucketize requires at least one record");
    assert!(window_minutes > 0.0);
    let window_ms = (window_minutes * 60_000.0).round() as i64;
    let t0 = records[0].timestamp_ms;
    let idx_of = |ts: i64| ((ts - t0) / window_ms) as usize;
    let n_windows = idx_of(records.last().unwrap().timestamp_ms) + 1;

    let mut buys = vec![0u64; n_windows];
    let mut sells = vec![0u64; n_windows];
    let mut gap_sum = vec![0.0f64; n_windows];
    let mut ticks = vec![0u64; n_windows];
    for r in records {
        let k = idx_of(r.timestamp_ms);
        match r.side {
            TradeSide::Buy => buys[k] += 1,
            TradeSide::Sell => sells[k] += 1,
            TradeSide::None => {}
        }
        gap_sum[k] += r.s - r.z;
        ticks[k] += 1;
    }

    let scale = 1440.0 / window_minutes;
    let mut out = Vec::with_capacity(n_windows);
    let mut last_gap = 0.0;
    for k in 0..n_windows {
        let carried = ticks[k] == 0;
        let gap = if carried { last_gap } else { gap_sum[k] / ticks[k] as f64 };
        last_gap = gap;
        out.push(TradeBucket {
            window_start_ms: t0 + k as i64 * window_ms,
            lambda_minus_hat: buys[k] as f64 * scale,
            lambda_plus_hat: sells[k] as f64 * scale,
            mean_mispricing: gap,
            carried_forward: carried,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub a1_hat: f64,
    pub a3_hat: f64,
    pub a1_se: f64,
    pub a3_se: f64,
    pub n_buckets: usize,
    /// d = a₁/a₃ (infinite unless both estimates are positive).
    pub boundary_d: f64,
    /// Buckets with mean(S−Z) < −d.
    pub violations_left: usize,
    /// Buckets with mean(S−Z) > +d.
    pub violations_right: usize,
    pub violation_fraction: f64,
}

/// Counts buckets whose mean mispricing falls outside ±d.
pub fn count_violations(buckets: &[TradeBucket], d: f64) -> (usize, usize) {
    let left = buckets.iter().filter(|b| b.mean_mispricing < -d).count();
    let right = buckets.iter().filter(|b| b.mean_mispricing > d).count();
    (left, right)
}

/// Stacked OLS with a shared intercept over the observations
/// (λ̂⁻, +(S−Z)) and (λ̂⁺, −(S−Z)): intercept ↦ a₁, slope ↦ a₃.
pub fn fit_intensities(buckets: &[TradeBucket]) -> Result<CalibrationResult> {
    if buckets.len() < 10 {
        return Err(Error::Calibration(format!(
            "need at least 10 buckets, got {}",
            buckets.len()
        )));
    }
    // the stacked ±m design always has spread when m ≠ 0; what the fit
    // actually needs is variation of the mispricing across buckets
    let m_bar =
        buckets.iter().map(|b| b.mean_mispricing).sum::<f64>() / buckets.len() as f64;
    let m_var: f64 =
        buckets.iter().map(|b| (b.mean_mispricing - m_bar).powi(2)).sum::<f64>();
    let m_scale = buckets
        .iter()
        .map(|b| b.mean_mispricing.abs())
        .fold(0.0f64, f64::max);
    if m_scale == 0.0 || m_var <= 1e-20 * m_scale * m_scale {
        return Err(Error::Calibration("mispricing regressor has zero variance".into()));
    }

    let n = 2 * buckets.len();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for b in buckets {
        xs.push(b.mean_mispricing);
        ys.push(b.lambda_minus_hat);
        xs.push(-b.mean_mispricing);
        ys.push(b.lambda_plus_hat);
    }
    let nf = n as f64;
    let x_bar = xs.iter().sum::<f64>() / nf;
    let y_bar = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let s2 = rss / (nf - 2.0);
    let a3_se = (s2 / sxx).sqrt();
    let a1_se = (s2 * (1.0 / nf + x_bar * x_bar / sxx)).sqrt();

    let boundary_d = if intercept > 0.0 && slope > 0.0 { intercept / slope } else { f64::INFINITY };
    let (violations_left, violations_right) = count_violations(buckets, boundary_d);
    Ok(CalibrationResult {
        a1_hat: intercept,
        a3_hat: slope,
        a1_se,
        a3_se,
        n_buckets: buckets.len(),
        boundary_d,
        violations_left,
        violations_right,
        violation_fraction: (violations_left + violations_right) as f64 / buckets.len() as f64,
    })
}

/// Separate per-side fits (intercept, slope against the side's own signed
/// mispricing); a diagnostic for asymmetry between buy and sell flow.
pub fn fit_per_side(buckets: &[TradeBucket]) -> Result<(LineFit, LineFit)> {
    let minus: Vec<(f64, f64)> =
        buckets.iter().map(|b| (b.mean_mispricing, b.lambda_minus_hat)).collect();
    let plus: Vec<(f64, f64)> =
        buckets.iter().map(|b| (-b.mean_mispricing, b.lambda_plus_hat)).collect();
    Ok((simple_ols(&minus)?, simple_ols(&plus)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
}

fn simple_ols(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len() as f64;
    if points.len() < 3 {
        return Err(Error::Calibration("per-side fit needs at least 3 buckets".into()));
    }
    let x_bar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let y_bar = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_bar) * (p.0 - x_bar)).sum();
    if sxx <= 0.0 {
        return Err(Error::Calibration("mispricing regressor has zero variance".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
    let slope = sxy / sxx;
    Ok(LineFit { intercept: y_bar - slope * x_bar, slope })
}

/// Writes per-bucket residuals (`window_start_ms,side,mispricing,lambda_hat,
/// fitted,residual`) against a fitted model.
pub fn write_residuals_csv<W: IoWrite>(
    buckets: &[TradeBucket],
    fit: &CalibrationResult,
    mut out: W,
) -> Result<()> {
    writeln!(out, "window_start_ms,side,mispricing,lambda_hat,fitted,residual")?;
    for b in buckets {
        let fit_minus = fit.a1_hat + fit.a3_hat * b.mean_mispricing;
        let fit_plus = fit.a1_hat - fit.a3_hat * b.mean_mispricing;
        writeln!(
            out,
            "{},minus,{:.10e},{:.10e},{:.10e},{:.10e}",
            b.window_start_ms,
            b.mean_mispricing,
            b.lambda_minus_hat,
            fit_minus,
            b.lambda_minus_hat - fit_minus
        )?;
        writeln!(
            out,
            "{},plus,{:.10e},{:.10e},{:.10e},{:.10e}",
            b.window_start_ms,
            b.mean_mispricing,
            b.lambda_plus_hat,
            fit_plus,
            b.lambda_plus_hat - fit_plus
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_temp(
            "timestamp,s,z,side,size\n\
             1000,2820.5,2820.0,buy,300\n\
             2000,2821.0,2820.2,none,0\n\
             3000,2819.0,2820.4,sell,150\n",
        );
        let rep = load_ticks(f.path(), true).unwrap();
        assert_eq!(rep.records.len(), 3);
        assert!(rep.skipped.is_empty());
        assert_eq!(rep.records[0].side, TradeSide::Buy);
        assert_eq!(rep.records[2].side, TradeSide::Sell);
    }

    #[test]
    fn bad_rows_are_skipped_and_reported() {
        let f = write_temp(
            "timestamp,s,z,side,size\n\
             1000,2820.5,2820.0,buy,300\n\
             2000,-5.0,2820.2,none,0\n\
             3000,2819.0,2820.4,hold,150\n\
             4000,2819.5,2820.1,sell,10\n",
        );
        let rep = load_ticks(f.path(), false).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.skipped.len(), 2);
        assert_eq!(rep.skipped[0].0, 3); // 1-based line of the bad price
        assert!(rep.skipped[0].1.contains("midprice"));
        assert!(rep.skipped[1].1.contains("side"));

        // strict mode aborts instead
        assert!(load_ticks(f.path(), true).is_err());
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let f = write_temp(
            "timestamp,s,z,side,size\n\
             3000,2819.0,2820.4,sell,150\n\
             1000,2820.5,2820.0,buy,300\n",
        );
        let rep = load_ticks(f.path(), true).unwrap();
        assert_eq!(rep.records[0].timestamp_ms, 1000);
    }

    #[test]
    fn missing_column_is_a_format_error() {
        let f = write_temp("timestamp,s,side,size\n1000,2820.0,buy,300\n");
        match load_ticks(f.path(), false) {
            Err(Error::Format(msg)) => assert!(msg.contains("\"z\""), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    fn tick(ts: i64, side: TradeSide, gap: f64) -> TickRecord {
        TickRecord { timestamp_ms: ts, s: 2820.0 + gap, z: 2820.0, side, size: 1.0 }
    }

    #[test]
    fn bucket_counts_scale_to_daily_intensity() {
        let mut recs = Vec::new();
        for k in 0..6 {
            recs.push(tick(1000 + k * 10, TradeSide::Buy, 0.0));
        }
        let buckets = bucketize(&recs, 10.0);
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].lambda_minus_hat, 864.0); // 6 × 144
        assert_eq!(buckets[0].lambda_plus_hat, 0.0);
    }

    #[test]
    fn empty_windows_carry_mispricing_forward() {
        let recs = vec![
            tick(0, TradeSide::None, 5.0),
            // window 1 empty, window 2 has one sell
            tick(2 * 600_000, TradeSide::Sell, 1.0),
        ];
        let buckets = bucketize(&recs, 10.0);
        assert_eq!(buckets.len(), 3);
        assert_eq!(buckets[1].lambda_minus_hat, 0.0);
        assert_eq!(buckets[1].lambda_plus_hat, 0.0);
        assert!(buckets[1].carried_forward);
        assert_eq!(buckets[1].mean_mispricing, 5.0);
        assert!(!buckets[2].carried_forward);
    }

    #[test]
    fn boundary_tick_goes_to_the_later_window() {
        let recs = vec![tick(0, TradeSide::Buy, 0.0), tick(600_000, TradeSide::Buy, 0.0)];
        let buckets = bucketize(&recs, 10.0);
        assert_eq!(buckets.len(), 2);
        assert_eq!(buckets[0].lambda_minus_hat, 144.0);
        assert_eq!(buckets[1].lambda_minus_hat, 144.0);
    }

    /// Buckets drawn from the intensity model itself: per ten-minute window
    /// the side counts are Poisson(λ±/144) with λ± = a₁ ± a₃(z−s).
    pub(crate) fn synthetic_buckets(
        a1: f64,
        a3: f64,
        n: usize,
        seed: u64,
    ) -> Vec<TradeBucket> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let gap: f64 = (rng.random::<f64>() - 0.5) * 18.0; // S − Z in (−9, 9)
            let lam_minus = (a1 + a3 * gap) / 144.0;
            let lam_plus = (a1 - a3 * gap) / 144.0;
            let buys = Poisson::new(lam_minus.max(1e-12)).unwrap().sample(&mut rng);
            let sells = Poisson::new(lam_plus.max(1e-12)).unwrap().sample(&mut rng);
            out.push(TradeBucket {
                window_start_ms: k as i64 * 600_000,
                lambda_minus_hat: buys * 144.0,
                lambda_plus_hat: sells * 144.0,
                mean_mispricing: gap,
                carried_forward: false,
            });
        }
        out
    }

    #[test]
    fn recovers_known_parameters() {
        let buckets = synthetic_buckets(142.7, 13.6, 17_000, 1);
        let fit = fit_intensities(&buckets).unwrap();
        assert!(
            (fit.a1_hat - 142.7).abs() <= 2.0 * fit.a1_se,
            "a1 = {} ± {}",
            fit.a1_hat,
            fit.a1_se
        );
        assert!(
            (fit.a3_hat - 13.6).abs() <= 2.0 * fit.a3_se,
            "a3 = {} ± {}",
            fit.a3_hat,
            fit.a3_se
        );
        assert!(fit.boundary_d > 9.0, "d = {}", fit.boundary_d);
    }

    #[test]
    fn degenerate_regressor_is_rejected() {
        let buckets: Vec<TradeBucket> = (0..20)
            .map(|k| TradeBucket {
                window_start_ms: k * 600_000,
                lambda_minus_hat: 100.0,
                lambda_plus_hat: 120.0,
                mean_mispricing: 3.0,
                carried_forward: false,
            })
            .collect();
        assert!(matches!(fit_intensities(&buckets), Err(Error::Calibration(_))));
        assert!(fit_intensities(&buckets[..4]).is_err()); // too few buckets
    }

    #[test]
    fn scale_equivariance() {
        let buckets = synthetic_buckets(142.7, 13.6, 2_000, 9);
        let base = fit_intensities(&buckets).unwrap();
        let k = 4.0;
        let scaled: Vec<TradeBucket> = buckets
            .iter()
            .map(|b| TradeBucket { mean_mispricing: b.mean_mispricing * k, ..*b })
            .collect();
        let fit = fit_intensities(&scaled).unwrap();
        assert!((fit.a1_hat - base.a1_hat).abs() <= 1e-9 * base.a1_hat.abs());
        assert!((fit.a3_hat - base.a3_hat / k).abs() <= 1e-9 * base.a3_hat.abs());
        assert!((fit.boundary_d - base.boundary_d * k).abs() <= 1e-9 * base.boundary_d);
    }

    #[test]
    fn violation_counts_decrease_in_d() {
        let buckets = synthetic_buckets(142.7, 13.6, 2_000, 3);
        let mut last = usize::MAX;
        for d in [0.0, 2.0, 5.0, 8.0, 12.0] {
            let (l, r) = count_violations(&buckets, d);
            assert!(l + r <= last);
            last = l + r;
        }
    }

    #[test]
    fn round_trip_through_the_fitted_model() {
        let first = fit_intensities(&synthetic_buckets(142.7, 13.6, 12_000, 5)).unwrap();
        let again =
            fit_intensities(&synthetic_buckets(first.a1_hat, first.a3_hat, 12_000, 6)).unwrap();
        assert!((again.a1_hat - first.a1_hat).abs() <= 2.0 * again.a1_se);
        assert!((again.a3_hat - first.a3_hat).abs() <= 2.0 * again.a3_se);
    }

    #[test]
    fn per_side_fits_agree_with_stacked() {
        let buckets = synthetic_buckets(142.7, 13.6, 8_000, 7);
        let stacked = fit_intensities(&buckets).unwrap();
        let (minus, plus) = fit_per_side(&buckets).unwrap();
        for side in [minus, plus] {
            assert!((side.intercept - stacked.a1_hat).abs() <= 3.0);
            assert!((side.slope - stacked.a3_hat).abs() <= 1.0);
        }
    }
}
