//! Proposal-driven end-to-end latency prediction: static regression fitting,
//! dynamic calibration, prediction, and evaluation.
//!
//! Post-processing time is regressed on the first-stage intermediate count
//! (linear in the proposal count for object detection, quadratic in the
//! lane-pixel count for lane detection). The remaining stages (read,
//! pre-processing, inference) are modeled as a narrow Gaussian. A calibration
//! factor rescales predictions for runtime conditions that differ from the
//! conditions under which the fitting log was collected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv;
use crate::stats;
use crate::trace::TraceSet;

/// Linear post-processing model for object detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdModel {
    pub alpha0_ms: f64,
    pub alpha1_ms_per_proposal: f64,
}

impl OdModel {
    pub fn post_time_ms(&self, proposals: u64) -> f64 {
        self.alpha1_ms_per_proposal * proposals as f64 + self.alpha0_ms
    }
}

/// Quadratic post-processing model for lane detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdModel {
    pub beta0_ms: f64,
    pub beta1_ms_per_pixel: f64,
    pub beta2_ms_per_pixel2: f64,
}

impl LdModel {
    pub fn post_time_ms(&self, lane_pixels: u64) -> f64 {
        let l = lane_pixels as f64;
        self.beta2_ms_per_pixel2 * l * l + self.beta1_ms_per_pixel * l + self.beta0_ms
    }
}

/// Gaussian model of the remaining (read + pre-process + inference) time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderModel {
    pub mu_r_ms: f64,
    pub sigma_r_ms: f64,
}

/// Dynamic calibration state. `lambda` always equals
/// `mu_r_ms / ewma_remaining_ms` for the remainder model it was built
/// against; with decay 1 the smoothing degenerates to the per-observation
/// ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationState {
    pub lambda: f64,
    pub ewma_remaining_ms: f64,
    pub decay: f64,
}

impl CalibrationState {
    /// Fresh state anchored at the fitting log's remaining-time mean, so the
    /// initial calibration factor is exactly 1.
    pub fn new(mu_r_ms: f64, decay: f64) -> Result<Self> {
        if !(mu_r_ms.is_finite() && mu_r_ms > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mu_r_ms must be positive, got {mu_r_ms}"
            )));
        }
        check_decay(decay)?;
        Ok(CalibrationState {
            lambda: 1.0,
            ewma_remaining_ms: mu_r_ms,
            decay,
        })
    }

    /// Folds one observed remaining time into the smoothed estimate and
    /// recomputes the calibration factor against `mu_r_ms`. Returns a new
    /// state; the original is untouched.
    pub fn update(&self, observed_remaining_ms: f64, mu_r_ms: f64) -> Result<Self> {
        if !(observed_remaining_ms.is_finite() && observed_remaining_ms > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "observed remaining time must be positive, got {observed_remaining_ms}"
            )));
        }
        let ewma = self.decay * observed_remaining_ms + (1.0 - self.decay) * self.ewma_remaining_ms;
        Ok(CalibrationState {
            lambda: mu_r_ms / ewma,
            ewma_remaining_ms: ewma,
            decay: self.decay,
        })
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(decay.is_finite() && decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "decay must lie in (0, 1], got {decay}"
        )));
    }
    Ok(())
}

/// Default smoothing decay for online calibration.
pub const DEFAULT_DECAY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ObjectDetection,
    LaneDetection,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ObjectDetection => "od",
            ModelKind::LaneDetection => "ld",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "od" => Ok(ModelKind::ObjectDetection),
            "ld" => Ok(ModelKind::LaneDetection),
            other => Err(Error::InvalidParameter(format!(
                "unknown model kind `{other}` (expected od or ld)"
            ))),
        }
    }
}

/// The stage regression of a fitted model; exactly one family is present.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageModel {
    ObjectDetection(OdModel),
    LaneDetection(LdModel),
}

/// A complete fitted latency model: stage regression, remainder Gaussian,
/// and calibration state. Immutable; calibration updates produce new states.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLatencyModel {
    pub stage: StageModel,
    pub remainder: RemainderModel,
    pub calibration: CalibrationState,
}

/// Input to a prediction; must match the model kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictInput {
    Proposals(u64),
    LanePixels(u64),
}

impl FittedLatencyModel {
    pub fn kind(&self) -> ModelKind {
        match self.stage {
            StageModel::ObjectDetection(_) => ModelKind::ObjectDetection,
            StageModel::LaneDetection(_) => ModelKind::LaneDetection,
        }
    }

    pub fn od(&self) -> Option<&OdModel> {
        match &self.stage {
            StageModel::ObjectDetection(m) => Some(m),
            StageModel::LaneDetection(_) => None,
        }
    }

    pub fn ld(&self) -> Option<&LdModel> {
        match &self.stage {
            StageModel::LaneDetection(m) => Some(m),
            StageModel::ObjectDetection(_) => None,
        }
    }

    /// Same model with the calibration factor pinned to `lambda`; the
    /// smoothed remaining time is realigned to keep the state consistent.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let mut model = self.clone();
        model.calibration.lambda = lambda;
        model.calibration.ewma_remaining_ms = self.remainder.mu_r_ms / lambda;
        Ok(model)
    }

    /// Predicted end-to-end time: calibration factor times the sum of the
    /// stage regression at the given count and the remaining-time mean.
    /// Negative raw values are clamped to zero with a warning.
    pub fn predict(&self, input: PredictInput) -> Result<f64> {
        let post = match (&self.stage, input) {
            (StageModel::ObjectDetection(m), PredictInput::Proposals(p)) => m.post_time_ms(p),
            (StageModel::LaneDetection(m), PredictInput::LanePixels(l)) => m.post_time_ms(l),
            (StageModel::ObjectDetection(_), PredictInput::LanePixels(_)) => {
                return Err(Error::InputKindMismatch {
                    expected: "n_proposals",
                })
            }
            (StageModel::LaneDetection(_), PredictInput::Proposals(_)) => {
                return Err(Error::InputKindMismatch {
                    expected: "n_lane_pixels",
                })
            }
        };
        let raw = self.calibration.lambda * (post + self.remainder.mu_r_ms);
        if raw < 0.0 {
            log::warn!("prediction {raw:.3}ms clamped to 0");
            Ok(0.0)
        } else {
            Ok(raw)
        }
    }
}

/// Ordinary-least-squares fit of post-processing time against the proposal
/// count.
pub fn fit_od(trace: &TraceSet) -> Result<OdModel> {
    if trace.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: trace.len(),
        });
    }
    let xs: Vec<f64> = trace
        .records()
        .iter()
        .map(|r| r.n_proposals as f64)
        .collect();
    let ys: Vec<f64> = trace.records().iter().map(|r| r.t_post_ms).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::SingularFit("n_proposals is constant".to_string()));
    }
    let alpha1 = sxy / sxx;
    if alpha1 < 0.0 {
        log::warn!("fitted alpha1 is negative ({alpha1:.6}); unusual for physical data");
    }
    Ok(OdModel {
        alpha0_ms: my - alpha1 * mx,
        alpha1_ms_per_proposal: alpha1,
    })
}

/// Ordinary-least-squares quadratic fit of post-processing time against the
/// lane-pixel count, solved on a centered and scaled design for conditioning.
pub fn fit_ld(trace: &TraceSet) -> Result<LdModel> {
    if trace.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: trace.len(),
        });
    }
    let ls: Vec<f64> = trace
        .records()
        .iter()
        .map(|r| r.n_lane_pixels as f64)
        .collect();
    let ys: Vec<f64> = trace.records().iter().map(|r| r.t_post_ms).collect();

    let mut distinct = ls.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::SingularFit(format!(
            "need at least 3 distinct n_lane_pixels values, got {}",
            distinct.len()
        )));
    }

    let n = ls.len() as f64;
    let mean = ls.iter().sum::<f64>() / n;
    let var = ls.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let scale = var.sqrt();
    let zs: Vec<f64> = ls.iter().map(|l| (l - mean) / scale).collect();

    // Normal equations for y = c0 + c1 z + c2 z^2.
    let mut pow_sums = [0.0f64; 5];
    let mut rhs = [0.0f64; 3];
    for (z, y) in zs.iter().zip(&ys) {
        let mut zp = 1.0;
        for (k, slot) in pow_sums.iter_mut().enumerate() {
            *slot += zp;
            if k < 3 {
                rhs[k] += zp * y;
            }
            zp *= z;
        }
    }
    let matrix = [
        [pow_sums[0], pow_sums[1], pow_sums[2]],
        [pow_sums[1], pow_sums[2], pow_sums[3]],
        [pow_sums[2], pow_sums[3], pow_sums[4]],
    ];
    let c = solve3(matrix, rhs)
        .ok_or_else(|| Error::SingularFit("rank-deficient quadratic design".to_string()))?;

    // Map the centered/scaled coefficients back to raw lane-pixel units.
    let beta2 = c[2] / (scale * scale);
    let beta1 = c[1] / scale - 2.0 * c[2] * mean / (scale * scale);
    let beta0 = c[0] - c[1] * mean / scale + c[2] * mean * mean / (scale * scale);
    Ok(LdModel {
        beta0_ms: beta0,
        beta1_ms_per_pixel: beta1,
        beta2_ms_per_pixel2: beta2,
    })
}

/// Gaussian elimination with partial pivoting for a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..3 {
        let pivot_row = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot_row_values = a[col];
        for row in (col + 1)..3 {
            let factor = a[row][col] / a[col][col];
            for (k, pivot_value) in pivot_row_values.iter().enumerate().skip(col) {
                a[row][k] -= factor * pivot_value;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0f64; 3];
    for col in (0..3).rev() {
        let mut acc = b[col];
        for k in (col + 1)..3 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Mean and population standard deviation of the remaining time over a trace.
pub fn fit_remainder(trace: &TraceSet) -> Result<RemainderModel> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let remaining = trace.remaining_series();
    let summary = stats::summarize(&remaining, &[])?;
    if summary.mean_ms <= 0.0 {
        return Err(Error::InvalidParameter(
            "trace has non-positive mean remaining time".to_string(),
        ));
    }
    Ok(RemainderModel {
        mu_r_ms: summary.mean_ms,
        sigma_r_ms: summary.std_ms,
    })
}

/// Fits the full model for one detector family with a fresh calibration
/// state (factor 1).
pub fn fit(trace: &TraceSet, kind: ModelKind, decay: f64) -> Result<FittedLatencyModel> {
    let stage = match kind {
        ModelKind::ObjectDetection => StageModel::ObjectDetection(fit_od(trace)?),
        ModelKind::LaneDetection => StageModel::LaneDetection(fit_ld(trace)?),
    };
    let remainder = fit_remainder(trace)?;
    let calibration = CalibrationState::new(remainder.mu_r_ms, decay)?;
    Ok(FittedLatencyModel {
        stage,
        remainder,
        calibration,
    })
}

/// How the calibration factor evolves during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    /// Use the model's stored factor for every frame.
    Off,
    /// Recompute the factor from each frame's own observed remaining time.
    PerFrame,
    /// Smooth observed remaining times; each frame is predicted with the
    /// factor from the frames before it.
    Ewma { decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: CalibrationMode,
    /// Apply the calibration factor in the inverted direction
    /// (observed / baseline instead of baseline / observed). Only affects
    /// factors derived from observations, not a stored factor.
    pub invert_lambda: bool,
}

impl EvalOptions {
    pub fn off() -> Self {
        EvalOptions {
            mode: CalibrationMode::Off,
            invert_lambda: false,
        }
    }

    pub fn per_frame() -> Self {
        EvalOptions {
            mode: CalibrationMode::PerFrame,
            invert_lambda: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub frame_id: u64,
    pub real_ms: f64,
    pub predicted_ms: f64,
    pub abs_error_ms: f64,
}

/// Per-frame prediction errors and their aggregates. Accuracy of one frame
/// is `100 * max(0, 1 - |error| / real)`, averaged over evaluated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_real_ms: f64,
    pub mean_pred_ms: f64,
    pub mean_abs_error_ms: f64,
    pub accuracy_pct: f64,
    pub per_frame: Vec<FrameEval>,
    /// Frames skipped because accuracy (or a per-frame factor) was undefined.
    pub excluded_frames: usize,
}

/// Evaluates a fitted model against a trace under the given calibration mode.
pub fn evaluate(
    model: &FittedLatencyModel,
    trace: &TraceSet,
    options: EvalOptions,
) -> Result<EvalReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mu_r = model.remainder.mu_r_ms;
    let mut state = match options.mode {
        CalibrationMode::Ewma { decay } => {
            check_decay(decay)?;
            CalibrationState {
                decay,
                ..model.calibration
            }
        }
        _ => model.calibration,
    };

    let mut per_frame = Vec::with_capacity(trace.len());
    let mut excluded = 0usize;
    let mut accuracy_sum = 0.0;
    let mut real_sum = 0.0;
    let mut pred_sum = 0.0;
    let mut err_sum = 0.0;

    for record in trace.records() {
        let real = record.end_to_end_ms();
        let observed_remaining = record.remaining_ms();

        let lambda = match options.mode {
            CalibrationMode::Off => state.lambda,
            CalibrationMode::PerFrame => {
                if observed_remaining <= 0.0 {
                    log::warn!(
                        "frame {}: non-positive remaining time, excluded from per-frame calibration",
                        record.frame_id
                    );
                    excluded += 1;
                    continue;
                }
                let ratio = mu_r / observed_remaining;
                if options.invert_lambda {
                    1.0 / ratio
                } else {
                    ratio
                }
            }
            CalibrationMode::Ewma { .. } => {
                let lambda = if options.invert_lambda {
                    1.0 / state.lambda
                } else {
                    state.lambda
                };
                if observed_remaining > 0.0 {
                    state = state.update(observed_remaining, mu_r)?;
                }
                lambda
            }
        };

        if real <= 0.0 {
            log::warn!(
                "frame {}: zero end-to-end time, accuracy undefined; excluded",
                record.frame_id
            );
            excluded += 1;
            continue;
        }

        let input = match model.kind() {
            ModelKind::ObjectDetection => PredictInput::Proposals(record.n_proposals),
            ModelKind::LaneDetection => PredictInput::LanePixels(record.n_lane_pixels),
        };
        let pred = model.with_lambda(lambda)?.predict(input)?;
        let abs_err = (pred - real).abs();

        accuracy_sum += 100.0 * (1.0 - abs_err / real).max(0.0);
        real_sum += real;
        pred_sum += pred;
        err_sum += abs_err;
        per_frame.push(FrameEval {
            frame_id: record.frame_id,
            real_ms: real,
            predicted_ms: pred,
            abs_error_ms: abs_err,
        });
    }

    let n = per_frame.len();
    if n == 0 {
        return Err(Error::InvalidParameter(
            "no frames left to evaluate after exclusions".to_string(),
        ));
    }
    Ok(EvalReport {
        mean_real_ms: real_sum / n as f64,
        mean_pred_ms: pred_sum / n as f64,
        mean_abs_error_ms: err_sum / n as f64,
        accuracy_pct: accuracy_sum / n as f64,
        per_frame,
        excluded_frames: excluded,
    })
}

const MODEL_KEYS: [&str; 10] = [
    "kind", "alpha0", "alpha1", "beta0", "beta1", "beta2", "mu_r", "sigma_r", "lambda", "decay",
];

/// Renders a model in the flat key=value persistence format. All keys are
/// always present; the inactive regression family is stored as zeros.
pub fn render_model(model: &FittedLatencyModel) -> String {
    let (a0, a1, b0, b1, b2) = match model.stage {
        StageModel::ObjectDetection(m) => (m.alpha0_ms, m.alpha1_ms_per_proposal, 0.0, 0.0, 0.0),
        StageModel::LaneDetection(m) => (
            0.0,
            0.0,
            m.beta0_ms,
            m.beta1_ms_per_pixel,
            m.beta2_ms_per_pixel2,
        ),
    };
    let values = [
        model.kind().as_str().to_string(),
        kv::format_sig9(a0),
        kv::format_sig9(a1),
        kv::format_sig9(b0),
        kv::format_sig9(b1),
        kv::format_sig9(b2),
        kv::format_sig9(model.remainder.mu_r_ms),
        kv::format_sig9(model.remainder.sigma_r_ms),
        kv::format_sig9(model.calibration.lambda),
        kv::format_sig9(model.calibration.decay),
    ];
    MODEL_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

pub fn save_model(model: &FittedLatencyModel, path: &Path) -> Result<()> {
    kv::write_file(path, &render_model(model))
}

pub fn load_model(path: &Path) -> Result<FittedLatencyModel> {
    let map = kv::parse_file(path)?;
    model_from_map(&map)
}

fn model_from_map(map: &BTreeMap<String, String>) -> Result<FittedLatencyModel> {
    for key in MODEL_KEYS {
        kv::require(map, key)?;
    }
    let kind: ModelKind = kv::require(map, "kind")?.parse()?;
    let stage = match kind {
        ModelKind::ObjectDetection => StageModel::ObjectDetection(OdModel {
            alpha0_ms: kv::require_f64(map, "alpha0")?,
            alpha1_ms_per_proposal: kv::require_f64(map, "alpha1")?,
        }),
        ModelKind::LaneDetection => StageModel::LaneDetection(LdModel {
            beta0_ms: kv::require_f64(map, "beta0")?,
            beta1_ms_per_pixel: kv::require_f64(map, "beta1")?,
            beta2_ms_per_pixel2: kv::require_f64(map, "beta2")?,
        }),
    };
    let remainder = RemainderModel {
        mu_r_ms: kv::require_f64(map, "mu_r")?,
        sigma_r_ms: kv::require_f64(map, "sigma_r")?,
    };
    let lambda = kv::require_f64(map, "lambda")?;
    let decay = kv::require_f64(map, "decay")?;
    check_decay(decay)?;
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !remainder.mu_r_ms.is_finite() || remainder.mu_r_ms <= 0.0 {
        return Err(Error::InvalidParameter("mu_r must be positive".to_string()));
    }
    Ok(FittedLatencyModel {
        stage,
        remainder,
        calibration: CalibrationState {
            lambda,
            ewma_remaining_ms: remainder.mu_r_ms / lambda,
            decay,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;
    use approx::assert_relative_eq;

    fn od_record(frame_id: u64, proposals: u64, t_post: f64, remaining: f64) -> TraceRecord {
        TraceRecord {
            frame_id,
            timestamp_ms: frame_id as f64 * 100.0,
            t_read_ms: remaining * 0.05,
            t_pre_ms: remaining * 0.10,
            t_infer_ms: remaining * 0.85,
            t_post_ms: t_post,
            n_proposals: proposals,
            n_lane_pixels: 0,
            n_detections: proposals / 10,
            model_tag: "faster-rcnn".to_string(),
            scenario_tag: "city".to_string(),
        }
    }

    fn ld_record(frame_id: u64, pixels: u64, t_post: f64, remaining: f64) -> TraceRecord {
        TraceRecord {
            frame_id,
            timestamp_ms: frame_id as f64 * 100.0,
            t_read_ms: remaining * 0.05,
            t_pre_ms: remaining * 0.10,
            t_infer_ms: remaining * 0.85,
            t_post_ms: t_post,
            n_proposals: 0,
            n_lane_pixels: pixels,
            n_detections: pixels / 6000,
            model_tag: "pinet".to_string(),
            scenario_tag: "city".to_string(),
        }
    }

    fn od_trace(points: &[(u64, f64)]) -> TraceSet {
        let records = points
            .iter()
            .enumerate()
            .map(|(i, &(p, y))| od_record(i as u64, p, y, 100.0))
            .collect();
        TraceSet::new(records).unwrap()
    }

    #[test]
    fn exact_line_is_recovered() {
        let points: Vec<(u64, f64)> = (0..50)
            .map(|p| (p * 10, 12.0 + 0.3 * (p * 10) as f64))
            .collect();
        let model = fit_od(&od_trace(&points)).unwrap();
        assert_relative_eq!(model.alpha0_ms, 12.0, max_relative = 1e-9);
        assert_relative_eq!(model.alpha1_ms_per_proposal, 0.3, max_relative = 1e-9);
    }

    #[test]
    fn two_point_line_is_exact() {
        let model = fit_od(&od_trace(&[(0, 5.0), (10, 15.0)])).unwrap();
        assert_eq!(model.alpha0_ms, 5.0);
        assert_eq!(model.alpha1_ms_per_proposal, 1.0);
    }

    #[test]
    fn negative_slope_is_warned_not_rejected() {
        let model = fit_od(&od_trace(&[(0, 15.0), (10, 5.0)])).unwrap();
        assert_eq!(model.alpha1_ms_per_proposal, -1.0);
    }

    #[test]
    fn constant_proposals_are_singular() {
        assert!(matches!(
            fit_od(&od_trace(&[(7, 1.0), (7, 2.0), (7, 3.0)])),
            Err(Error::SingularFit(_))
        ));
    }

    #[test]
    fn single_record_is_insufficient() {
        assert!(matches!(
            fit_od(&od_trace(&[(1, 1.0)])),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn residual_orthogonality_holds() {
        // Noisy but deterministic data; OLS residuals must be orthogonal to
        // the design: sum r = 0 and sum r * p = 0.
        let points: Vec<(u64, f64)> = (0..200)
            .map(|i| {
                let p = 50 + (i * 13) % 400;
                let wobble = ((i * 2654435761u64) % 1000) as f64 / 500.0 - 1.0;
                (p, 12.0 + 0.3 * p as f64 + wobble)
            })
            .collect();
        let trace = od_trace(&points);
        let model = fit_od(&trace).unwrap();
        let (mut r_sum, mut rp_sum, mut scale) = (0.0, 0.0, 0.0f64);
        for record in trace.records() {
            let r = record.t_post_ms - model.post_time_ms(record.n_proposals);
            r_sum += r;
            rp_sum += r * record.n_proposals as f64;
            scale = scale.max(record.t_post_ms.abs() * record.n_proposals as f64);
        }
        let tol = 1e-6 * trace.len() as f64 * scale.max(1.0);
        assert!(r_sum.abs() <= tol, "sum r = {r_sum}");
        assert!(rp_sum.abs() <= tol, "sum r*p = {rp_sum}");
    }

    fn ld_trace(points: &[(u64, f64)]) -> TraceSet {
        let records = points
            .iter()
            .enumerate()
            .map(|(i, &(l, y))| ld_record(i as u64, l, y, 100.0))
            .collect();
        TraceSet::new(records).unwrap()
    }

    #[test]
    fn exact_parabola_is_recovered() {
        let truth = |l: f64| 2.0 + 0.01 * l + 1e-5 * l * l;
        let points: Vec<(u64, f64)> = (0..60)
            .map(|i| (i * 1500, truth((i * 1500) as f64)))
            .collect();
        let model = fit_ld(&ld_trace(&points)).unwrap();
        assert_relative_eq!(model.beta0_ms, 2.0, max_relative = 1e-6);
        assert_relative_eq!(model.beta1_ms_per_pixel, 0.01, max_relative = 1e-6);
        assert_relative_eq!(model.beta2_ms_per_pixel2, 1e-5, max_relative = 1e-6);
    }

    #[test]
    fn three_points_interpolate() {
        let truth = |l: f64| 1.0 + 0.5 * l + 0.25 * l * l;
        let points: Vec<(u64, f64)> = [0u64, 2, 4].iter().map(|&l| (l, truth(l as f64))).collect();
        let model = fit_ld(&ld_trace(&points)).unwrap();
        for &(l, y) in &points {
            assert_relative_eq!(
                model.post_time_ms(l),
                y,
                max_relative = 1e-9,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn two_distinct_pixel_values_are_singular() {
        assert!(matches!(
            fit_ld(&ld_trace(&[(0, 1.0), (100, 2.0), (100, 2.1), (0, 0.9)])),
            Err(Error::SingularFit(_))
        ));
    }

    #[test]
    fn remainder_matches_hand_values() {
        let trace = od_trace(&[(1, 1.0), (2, 1.0)]);
        let model = fit_remainder(&trace).unwrap();
        assert_eq!(model.mu_r_ms, 100.0);
        assert_eq!(model.sigma_r_ms, 0.0);

        let records = vec![od_record(0, 1, 1.0, 90.0), od_record(1, 2, 1.0, 110.0)];
        let model = fit_remainder(&TraceSet::new(records).unwrap()).unwrap();
        assert_relative_eq!(model.mu_r_ms, 100.0, max_relative = 1e-12);
        assert_relative_eq!(model.sigma_r_ms, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn remainder_agrees_with_stats_summary() {
        let trace = od_trace(&[(10, 5.0), (20, 8.0), (30, 11.0)]);
        let model = fit_remainder(&trace).unwrap();
        let summary = stats::summarize(&trace.remaining_series(), &[]).unwrap();
        assert_eq!(model.mu_r_ms, summary.mean_ms);
        assert_eq!(model.sigma_r_ms, summary.std_ms);
    }

    #[test]
    fn calibration_at_baseline_is_identity() {
        let state = CalibrationState::new(100.0, 0.3).unwrap();
        let next = state.update(100.0, 100.0).unwrap();
        assert_eq!(next.lambda, 1.0);
    }

    #[test]
    fn per_observation_ratio_with_decay_one() {
        let state = CalibrationState::new(100.0, 1.0).unwrap();
        let next = state.update(200.0, 100.0).unwrap();
        assert_eq!(next.lambda, 0.5);
    }

    #[test]
    fn smoothed_update_arithmetic() {
        let state = CalibrationState {
            lambda: 1.0,
            ewma_remaining_ms: 100.0,
            decay: 0.5,
        };
        let next = state.update(200.0, 100.0).unwrap();
        assert_eq!(next.ewma_remaining_ms, 150.0);
        assert_relative_eq!(next.lambda, 2.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn non_positive_observation_is_rejected() {
        let state = CalibrationState::new(100.0, 1.0).unwrap();
        assert!(state.update(0.0, 100.0).is_err());
        assert!(state.update(-5.0, 100.0).is_err());
    }

    fn model_for_predict() -> FittedLatencyModel {
        FittedLatencyModel {
            stage: StageModel::ObjectDetection(OdModel {
                alpha0_ms: 5.0,
                alpha1_ms_per_proposal: 1.0,
            }),
            remainder: RemainderModel {
                mu_r_ms: 100.0,
                sigma_r_ms: 0.0,
            },
            calibration: CalibrationState {
                lambda: 1.0,
                ewma_remaining_ms: 100.0,
                decay: 1.0,
            },
        }
    }

    #[test]
    fn prediction_plugs_into_the_model() {
        let model = model_for_predict();
        assert_eq!(model.predict(PredictInput::Proposals(10)).unwrap(), 115.0);
    }

    #[test]
    fn halving_lambda_halves_predictions() {
        let model = model_for_predict();
        let halved = model.with_lambda(0.5).unwrap();
        for p in [0u64, 10, 500] {
            let full = model.predict(PredictInput::Proposals(p)).unwrap();
            let half = halved.predict(PredictInput::Proposals(p)).unwrap();
            assert_eq!(half, full * 0.5);
        }
    }

    #[test]
    fn wrong_input_kind_is_an_error() {
        let model = model_for_predict();
        assert!(matches!(
            model.predict(PredictInput::LanePixels(10)),
            Err(Error::InputKindMismatch {
                expected: "n_proposals"
            })
        ));
    }

    #[test]
    fn negative_raw_prediction_clamps_to_zero() {
        let mut model = model_for_predict();
        model.stage = StageModel::ObjectDetection(OdModel {
            alpha0_ms: -500.0,
            alpha1_ms_per_proposal: 0.0,
        });
        assert_eq!(model.predict(PredictInput::Proposals(1)).unwrap(), 0.0);
    }

    #[test]
    fn monotone_in_count_for_non_negative_slopes() {
        let model = model_for_predict();
        let mut prev = -1.0;
        for p in (0..2000).step_by(97) {
            let pred = model.predict(PredictInput::Proposals(p)).unwrap();
            assert!(pred >= prev);
            prev = pred;
        }
    }

    #[test]
    fn self_evaluation_on_noise_free_trace_is_perfect() {
        let points: Vec<(u64, f64)> = (0..100)
            .map(|p| (p * 5, 12.0 + 0.3 * (p * 5) as f64))
            .collect();
        let trace = od_trace(&points);
        let model = fit(&trace, ModelKind::ObjectDetection, 1.0).unwrap();
        let report = evaluate(&model, &trace, EvalOptions::per_frame()).unwrap();
        assert!(
            report.mean_abs_error_ms < 1e-9,
            "{}",
            report.mean_abs_error_ms
        );
        assert!((report.accuracy_pct - 100.0).abs() < 1e-9);
        assert_eq!(report.per_frame.len(), 100);
        assert_eq!(report.excluded_frames, 0);
    }

    #[test]
    fn lambda_algebra_is_exact() {
        let model = model_for_predict();
        let base = model.predict(PredictInput::Proposals(40)).unwrap();
        let mu_r = model.remainder.mu_r_ms;

        // decay 1, observed remaining = 2 mu_r -> factor 1/2 as written.
        let state = CalibrationState::new(mu_r, 1.0).unwrap();
        let updated = state.update(2.0 * mu_r, mu_r).unwrap();
        let scaled = model
            .with_lambda(updated.lambda)
            .unwrap()
            .predict(PredictInput::Proposals(40))
            .unwrap();
        assert_eq!(scaled, base * 0.5);

        // Inverted direction doubles instead.
        let inverted = model
            .with_lambda(1.0 / updated.lambda)
            .unwrap()
            .predict(PredictInput::Proposals(40))
            .unwrap();
        assert_eq!(inverted, base * 2.0);
    }

    #[test]
    fn per_frame_calibration_tracks_the_mean_on_the_fitting_trace() {
        let trace = crate::synth::generate(&crate::synth::presets::faster_rcnn_like(42))
            .unwrap()
            .trace;
        let model = fit(&trace, ModelKind::ObjectDetection, 1.0).unwrap();
        let report = evaluate(&model, &trace, EvalOptions::per_frame()).unwrap();
        let rel = (report.mean_pred_ms - report.mean_real_ms).abs() / report.mean_real_ms;
        assert!(rel <= 0.02, "mean prediction off by {:.3}%", rel * 100.0);
    }

    #[test]
    fn ewma_mode_predicts_before_updating() {
        // Two identical frames with remaining 200 while mu_r is 100. The
        // first prediction must use the stored factor (1.0), the second the
        // factor from the first observation.
        let records = vec![od_record(0, 10, 15.0, 200.0), od_record(1, 10, 15.0, 200.0)];
        let trace = TraceSet::new(records).unwrap();
        let model = model_for_predict();
        let report = evaluate(
            &model,
            &trace,
            EvalOptions {
                mode: CalibrationMode::Ewma { decay: 1.0 },
                invert_lambda: false,
            },
        )
        .unwrap();
        assert_eq!(report.per_frame[0].predicted_ms, 115.0);
        assert_eq!(report.per_frame[1].predicted_ms, 57.5);
    }

    #[test]
    fn prediction_at_mean_count_reproduces_mean_latency() {
        // The linear fit passes through the sample means, so the static
        // prediction at the mean count lands within one remainder sigma of
        // the mean end-to-end time.
        let trace = crate::synth::generate(&crate::synth::presets::faster_rcnn_like(42))
            .unwrap()
            .trace;
        let model = fit(&trace, ModelKind::ObjectDetection, 1.0).unwrap();
        let counts = trace.column(crate::trace::Column::Proposals);
        let mean_count = counts.iter().sum::<f64>() / counts.len() as f64;
        let e2e = trace.end_to_end_series();
        let mean_e2e = e2e.iter().sum::<f64>() / e2e.len() as f64;
        let pred = model
            .predict(PredictInput::Proposals(mean_count.round() as u64))
            .unwrap();
        assert!(
            (pred - mean_e2e).abs() <= model.remainder.sigma_r_ms,
            "pred {pred} vs mean {mean_e2e} (sigma {})",
            model.remainder.sigma_r_ms
        );

        // Same for the quadratic family on a single-rate count process,
        // where the count spread keeps the curvature gap small.
        let ld_spec = crate::synth::GeneratorSpec {
            truth: crate::synth::StageTruth::Ld(LdModel {
                beta0_ms: 2.0,
                beta1_ms_per_pixel: 0.01,
                beta2_ms_per_pixel2: 1e-5,
            }),
            frames: 600,
            process: crate::synth::ProposalProcess::Poisson { rate: 3000.0 },
            remainder: RemainderModel {
                mu_r_ms: 130.0,
                sigma_r_ms: 2.0,
            },
            noise_sigma_ms: 2.0,
            drift: None,
            seed: 21,
        };
        let trace = crate::synth::generate(&ld_spec).unwrap().trace;
        let model = fit(&trace, ModelKind::LaneDetection, 1.0).unwrap();
        let counts = trace.column(crate::trace::Column::LanePixels);
        let mean_count = counts.iter().sum::<f64>() / counts.len() as f64;
        let e2e = trace.end_to_end_series();
        let mean_e2e = e2e.iter().sum::<f64>() / e2e.len() as f64;
        let pred = model
            .predict(PredictInput::LanePixels(mean_count.round() as u64))
            .unwrap();
        assert!((pred - mean_e2e).abs() <= model.remainder.sigma_r_ms);
    }

    #[test]
    fn persistence_round_trips() {
        let points: Vec<(u64, f64)> = (0..40)
            .map(|p| (p * 7 + 3, 12.0 + 0.3 * (p * 7 + 3) as f64))
            .collect();
        let model = fit(&od_trace(&points), ModelKind::ObjectDetection, 0.3).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kv");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();

        let od = model.od().unwrap();
        let lod = loaded.od().unwrap();
        assert_relative_eq!(lod.alpha0_ms, od.alpha0_ms, max_relative = 1e-8);
        assert_relative_eq!(
            lod.alpha1_ms_per_proposal,
            od.alpha1_ms_per_proposal,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            loaded.remainder.mu_r_ms,
            model.remainder.mu_r_ms,
            max_relative = 1e-8
        );

        // Re-saving the loaded model is byte-stable.
        let second = dir.path().join("model2.kv");
        save_model(&loaded, &second).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn model_file_missing_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kv");
        std::fs::write(&path, "kind=od\nalpha0=1.0\n").unwrap();
        assert!(matches!(load_model(&path), Err(Error::InvalidParameter(_))));
    }
}
