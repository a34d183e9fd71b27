//! Variation metrics and correlation analysis over latency series.
//!
//! The standard deviation is the population deviation (divide by `n`), since
//! a summary describes a full collected log rather than a sample from one.
//! Quantiles use linear interpolation between order statistics at rank
//! `h = (n - 1) * q`.

use crate::error::{Error, Result};

/// Dispersion summary of one latency series.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSummary {
    pub mean_ms: f64,
    pub std_ms: f64,
    /// max - min.
    pub range_ms: f64,
    /// Coefficient of variation, std / mean. Zero for a constant series;
    /// NaN when the mean is non-positive and the series is not constant.
    pub cv: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Requested quantiles as `(q, value_ms)`, ascending in `q`.
    pub percentiles: Vec<(f64, f64)>,
    pub n: usize,
}

impl VariationSummary {
    /// Looks up a requested quantile value.
    pub fn percentile(&self, q: f64) -> Option<f64> {
        self.percentiles
            .iter()
            .find(|(stored, _)| (stored - q).abs() < 1e-12)
            .map(|(_, v)| *v)
    }
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(idx) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    Ok(())
}

fn mean_of(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

/// Population standard deviation and mean in one pass over validated data.
fn moments(series: &[f64]) -> (f64, f64) {
    let mean = mean_of(series);
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / series.len() as f64;
    (mean, var.sqrt())
}

/// Quantile by linear interpolation on a sorted slice, rank `h = (n - 1) q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Quantile of an unsorted series; `q` must lie in (0, 1).
pub fn quantile(series: &[f64], q: f64) -> Result<f64> {
    check_series(series)?;
    check_quantile(q)?;
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

fn check_quantile(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile {q} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Computes mean, range, population standard deviation, coefficient of
/// variation, and the requested quantiles of a series.
pub fn summarize(series: &[f64], quantiles: &[f64]) -> Result<VariationSummary> {
    check_series(series)?;
    for &q in quantiles {
        check_quantile(q)?;
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Moments over the sorted values make the summary exactly
    // permutation-invariant despite non-associative float addition.
    let (mean, std) = moments(&sorted);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let cv = if mean > 0.0 {
        std / mean
    } else if std == 0.0 {
        0.0
    } else {
        f64::NAN
    };

    let mut qs: Vec<f64> = quantiles.to_vec();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    let percentiles = qs
        .into_iter()
        .map(|q| (q, quantile_sorted(&sorted, q)))
        .collect();

    Ok(VariationSummary {
        mean_ms: mean,
        std_ms: std,
        range_ms: max - min,
        cv,
        min_ms: min,
        max_ms: max,
        percentiles,
        n: series.len(),
    })
}

/// Pearson product-moment correlation coefficient. A constant input makes
/// the coefficient undefined and is reported as an error rather than NaN.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: xs.len(),
        });
    }
    check_series(xs)?;
    check_series(ys)?;

    let mx = mean_of(xs);
    let my = mean_of(ys);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Empirical CDF points: values ascending, cumulative fractions `k / n`,
/// ending at exactly 1.0.
pub fn cdf_points(series: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_series(series)?;
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(k, v)| (v, (k + 1) as f64 / n))
        .collect())
}
