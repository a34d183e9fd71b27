//! Deadline-policy consequences over a latency series: miss rate, wasted
//! slack, and effective throughput.
//!
//! Waste is the unused budget of jobs that met their deadline
//! (deadline - completion). Missed jobs contribute no waste but count toward
//! the miss rate.

use crate::error::{Error, Result};
use crate::stats;

/// How the deadline value is derived from a series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    /// Deadline at the maximum observed latency; safe but wasteful.
    WorstObserved,
    /// Deadline at the arithmetic mean.
    Mean,
    /// Deadline at the given quantile, `q` in (0, 1).
    Quantile(f64),
    /// A fixed budget in milliseconds.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlinePolicy {
    pub kind: PolicyKind,
    /// Whether a job is cut off when the budget expires.
    pub termination: bool,
}

impl DeadlinePolicy {
    pub fn new(kind: PolicyKind, termination: bool) -> Result<Self> {
        match kind {
            PolicyKind::Quantile(q) if !(q > 0.0 && q < 1.0) => Err(Error::InvalidParameter(
                format!("deadline quantile {q} outside (0, 1)"),
            )),
            PolicyKind::Fixed(ms) if !(ms.is_finite() && ms > 0.0) => Err(Error::InvalidParameter(
                format!("fixed deadline must be positive, got {ms}"),
            )),
            _ => Ok(DeadlinePolicy { kind, termination }),
        }
    }

    /// Printable policy label used in report tables.
    pub fn label(&self) -> String {
        let base = match self.kind {
            PolicyKind::WorstObserved => "worst".to_string(),
            PolicyKind::Mean => "mean".to_string(),
            PolicyKind::Quantile(q) => format!("q:{q}"),
            PolicyKind::Fixed(ms) => format!("fixed:{ms}"),
        };
        if self.termination {
            format!("{base}+terminate")
        } else {
            base
        }
    }
}

/// Consequences of one deadline policy on one latency series.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineReport {
    pub policy: String,
    pub deadline_ms: f64,
    /// Fraction of jobs with latency strictly above the deadline.
    pub miss_rate: f64,
    /// Mean unused budget over jobs that met the deadline.
    pub mean_waste_ms: f64,
    /// 95th percentile of the per-job waste over met jobs.
    pub waste_p95_ms: f64,
    /// Mean effective completion period: min(t, deadline) with termination,
    /// max(t, deadline) when jobs serialize on the reserved budget.
    pub effective_period_ms: f64,
    /// Coefficient of variation of the effective completion series:
    /// min(t, deadline) with termination, the raw latencies without.
    pub cv_effective: f64,
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

/// Resolves a policy to a concrete deadline value over a series.
pub fn resolve_deadline(policy: &DeadlinePolicy, series: &[f64]) -> Result<f64> {
    check_series(series)?;
    match policy.kind {
        PolicyKind::WorstObserved => Ok(series.iter().copied().fold(f64::MIN, f64::max)),
        PolicyKind::Mean => Ok(series.iter().sum::<f64>() / series.len() as f64),
        PolicyKind::Quantile(q) => stats::quantile(series, q),
        PolicyKind::Fixed(ms) => Ok(ms),
    }
}

/// Evaluates one policy over a series.
pub fn assess(policy: &DeadlinePolicy, series: &[f64]) -> Result<DeadlineReport> {
    DeadlinePolicy::new(policy.kind, policy.termination)?;
    let deadline = resolve_deadline(policy, series)?;

    let n = series.len() as f64;
    let misses = series.iter().filter(|&&t| t > deadline).count();
    let wastes: Vec<f64> = series
        .iter()
        .filter(|&&t| t <= deadline)
        .map(|&t| deadline - t)
        .collect();
    let mean_waste = if wastes.is_empty() {
        0.0
    } else {
        wastes.iter().sum::<f64>() / wastes.len() as f64
    };
    let waste_p95 = if wastes.is_empty() {
        0.0
    } else {
        stats::quantile(&wastes, 0.95)?
    };

    let effective_period = series
        .iter()
        .map(|&t| {
            if policy.termination {
                t.min(deadline)
            } else {
                t.max(deadline)
            }
        })
        .sum::<f64>()
        / n;

    let effective: Vec<f64> = if policy.termination {
        series.iter().map(|&t| t.min(deadline)).collect()
    } else {
        series.to_vec()
    };
    let cv_effective = stats::summarize(&effective, &[])?.cv;

    Ok(DeadlineReport {
        policy: policy.label(),
        deadline_ms: deadline,
        miss_rate: misses as f64 / n,
        mean_waste_ms: mean_waste,
        waste_p95_ms: waste_p95,
        effective_period_ms: effective_period,
        cv_effective,
    })
}

/// Assesses each policy in order; the output preserves the input order.
pub fn compare(policies: &[DeadlinePolicy], series: &[f64]) -> Result<Vec<DeadlineReport>> {
    policies.iter().map(|p| assess(p, series)).collect()
}
