//! Approximate-time message synchronizer over K stamped streams, measuring
//! the delay between successive fusion emissions.
//!
//! All streams stamp frame `n` with its source time `n * period`; each
//! stream delivers the frame after a sampled latency. Arrivals feed
//! per-stream bounded queues (oldest arrival evicted when full). After every
//! arrival the synchronizer looks for one entry per queue whose stamp span
//! is at most the slop; among tuples containing the newest arrival it picks
//! the one with minimal span, earliest window on ties. Emission consumes the
//! chosen entries and everything with an older stamp in each queue.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::kv;
use crate::trace;

/// Per-frame delivery latency of one stream.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencyModel {
    Constant(f64),
    Gaussian {
        mean_ms: f64,
        std_ms: f64,
    },
    LogNormal {
        mu_log: f64,
        sigma_log: f64,
    },
    /// End-to-end series of a trace, cycled over frames.
    Trace(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub period_ms: f64,
    pub latency: LatencyModel,
}

impl StreamSpec {
    fn validate(&self, index: usize) -> Result<()> {
        let err = |msg: String| Error::InvalidParameter(format!("stream {index}: {msg}"));
        if !(self.period_ms.is_finite() && self.period_ms > 0.0) {
            return Err(err(format!(
                "period_ms must be positive, got {}",
                self.period_ms
            )));
        }
        match &self.latency {
            LatencyModel::Constant(ms) => {
                if !(ms.is_finite() && *ms >= 0.0) {
                    return Err(err(format!("constant latency must be >= 0, got {ms}")));
                }
            }
            LatencyModel::Gaussian { mean_ms, std_ms } => {
                if !mean_ms.is_finite() || !(std_ms.is_finite() && *std_ms >= 0.0) {
                    return Err(err("invalid gaussian latency parameters".to_string()));
                }
            }
            LatencyModel::LogNormal { mu_log, sigma_log } => {
                if !mu_log.is_finite() || !(sigma_log.is_finite() && *sigma_log >= 0.0) {
                    return Err(err("invalid lognormal latency parameters".to_string()));
                }
            }
            LatencyModel::Trace(series) => {
                if series.is_empty() {
                    return Err(err("trace latency series is empty".to_string()));
                }
                if series.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(err("trace latency series has invalid values".to_string()));
                }
            }
        }
        Ok(())
    }
}

pub const DEFAULT_SLOP_MS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncConfig {
    pub k_streams: usize,
    /// Per-stream queue capacity.
    pub queue_size: usize,
    /// Maximum stamp span considered synchronized.
    pub slop_ms: f64,
    /// Source frames are stamped within [0, duration).
    pub duration_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionEmission {
    pub time_ms: f64,
    pub span_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub emissions: Vec<FusionEmission>,
    /// Differences of successive emission times.
    pub inter_fusion_delays_ms: Vec<f64>,
    /// Queue evictions per stream.
    pub dropped_per_stream: Vec<u64>,
    /// Negative latency samples clamped to zero, per stream.
    pub clamped_per_stream: Vec<u64>,
    /// Frames delivered per stream.
    pub delivered_per_stream: Vec<u64>,
}

impl FusionResult {
    pub fn fusion_count(&self) -> usize {
        self.emissions.len()
    }

    pub fn worst_delay_ms(&self) -> f64 {
        self.inter_fusion_delays_ms
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}

struct Arrival {
    time_ms: f64,
    stream: usize,
    stamp_ms: f64,
}

fn check_config(config: &SyncConfig, streams: &[StreamSpec]) -> Result<()> {
    if config.k_streams < 2 {
        return Err(Error::InvalidParameter(format!(
            "k_streams must be >= 2, got {}",
            config.k_streams
        )));
    }
    if streams.len() != config.k_streams {
        return Err(Error::InvalidParameter(format!(
            "config expects {} streams, got {}",
            config.k_streams,
            streams.len()
        )));
    }
    if config.queue_size == 0 {
        return Err(Error::InvalidParameter(
            "queue_size must be >= 1".to_string(),
        ));
    }
    if !(config.slop_ms.is_finite() && config.slop_ms > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "slop_ms must be positive, got {}",
            config.slop_ms
        )));
    }
    for (index, stream) in streams.iter().enumerate() {
        stream.validate(index)?;
        let frames = (config.duration_ms / stream.period_ms).floor();
        if frames < 10.0 {
            return Err(Error::InvalidParameter(format!(
                "duration {}ms covers only {frames} frames of stream {index}; need >= 10",
                config.duration_ms
            )));
        }
    }
    Ok(())
}

fn sample_latency(
    latency: &LatencyModel,
    frame: u64,
    rng: &mut ChaCha8Rng,
    clamped: &mut u64,
) -> f64 {
    match latency {
        LatencyModel::Constant(ms) => *ms,
        LatencyModel::Gaussian { mean_ms, std_ms } => {
            let sample = if *std_ms > 0.0 {
                Normal::new(*mean_ms, *std_ms)
                    .expect("validated parameters")
                    .sample(rng)
            } else {
                *mean_ms
            };
            if sample < 0.0 {
                *clamped += 1;
                0.0
            } else {
                sample
            }
        }
        LatencyModel::LogNormal { mu_log, sigma_log } => LogNormal::new(*mu_log, *sigma_log)
            .expect("validated parameters")
            .sample(rng),
        LatencyModel::Trace(series) => series[(frame % series.len() as u64) as usize],
    }
}

/// Runs the synchronizer simulation. Deterministic per (config, streams,
/// seed): each stream samples from its own counter-based RNG substream in
/// frame order, and equal arrival times are processed in stream-index order.
pub fn simulate_fusion(config: &SyncConfig, streams: &[StreamSpec]) -> Result<FusionResult> {
    check_config(config, streams)?;
    let k = config.k_streams;

    let mut clamped_per_stream = vec![0u64; k];
    let mut delivered_per_stream = vec![0u64; k];
    let mut arrivals: Vec<Arrival> = Vec::new();
    for (index, stream) in streams.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let mut frame = 0u64;
        loop {
            let stamp = frame as f64 * stream.period_ms;
            if stamp >= config.duration_ms {
                break;
            }
            let latency = sample_latency(
                &stream.latency,
                frame,
                &mut rng,
                &mut clamped_per_stream[index],
            );
            arrivals.push(Arrival {
                time_ms: stamp + latency,
                stream: index,
                stamp_ms: stamp,
            });
            delivered_per_stream[index] += 1;
            frame += 1;
        }
    }
    arrivals.sort_by(|a, b| {
        a.time_ms
            .total_cmp(&b.time_ms)
            .then(a.stream.cmp(&b.stream))
            .then(a.stamp_ms.total_cmp(&b.stamp_ms))
    });

    let mut queues: Vec<VecDeque<f64>> = vec![VecDeque::new(); k];
    let mut dropped_per_stream = vec![0u64; k];
    let mut last_emitted_stamp: Vec<Option<f64>> = vec![None; k];
    let mut emissions: Vec<FusionEmission> = Vec::new();

    for arrival in &arrivals {
        let queue = &mut queues[arrival.stream];
        if queue.len() == config.queue_size {
            queue.pop_front();
            dropped_per_stream[arrival.stream] += 1;
        }
        queue.push_back(arrival.stamp_ms);

        if let Some((span, chosen)) = find_tuple(
            &queues,
            &last_emitted_stamp,
            arrival.stream,
            arrival.stamp_ms,
            config.slop_ms,
        ) {
            assert!(span <= config.slop_ms, "emitted span {span} exceeds slop");
            for (stream, (queue, stamp)) in queues.iter_mut().zip(&chosen).enumerate() {
                if let Some(last) = last_emitted_stamp[stream] {
                    debug_assert!(*stamp > last, "stream {stream} emitted stamps reordered");
                }
                last_emitted_stamp[stream] = Some(*stamp);
                queue.retain(|entry| *entry > *stamp);
            }
            emissions.push(FusionEmission {
                time_ms: arrival.time_ms,
                span_ms: span,
            });
        }
    }

    let inter_fusion_delays_ms = emissions
        .windows(2)
        .map(|w| w[1].time_ms - w[0].time_ms)
        .collect();
    Ok(FusionResult {
        emissions,
        inter_fusion_delays_ms,
        dropped_per_stream,
        clamped_per_stream,
        delivered_per_stream,
    })
}

/// Minimal-span tuple containing the pivot stamp, one entry per queue.
/// Entries at or below a stream's last emitted stamp are not candidates, so
/// per-stream emitted stamps stay strictly increasing even when deliveries
/// arrive out of order. Candidate window lower bounds are enumerated
/// ascending, so the earliest window wins ties. Returns the span and the
/// chosen stamp per stream.
fn find_tuple(
    queues: &[VecDeque<f64>],
    last_emitted: &[Option<f64>],
    pivot_stream: usize,
    pivot: f64,
    slop: f64,
) -> Option<(f64, Vec<f64>)> {
    let k = queues.len();
    let fresh = |stream: usize, stamp: f64| match last_emitted[stream] {
        Some(last) => stamp > last,
        None => true,
    };
    if !fresh(pivot_stream, pivot) {
        return None;
    }
    // Per-queue candidates must lie within the slop of the pivot; sorted.
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (index, queue) in queues.iter().enumerate() {
        if index == pivot_stream {
            candidates.push(vec![pivot]);
            continue;
        }
        let mut stamps: Vec<f64> = queue
            .iter()
            .copied()
            .filter(|s| (s - pivot).abs() <= slop && fresh(index, *s))
            .collect();
        if stamps.is_empty() {
            return None;
        }
        stamps.sort_by(f64::total_cmp);
        candidates.push(stamps);
    }

    let mut lows: Vec<f64> = candidates
        .iter()
        .flatten()
        .copied()
        .filter(|s| *s <= pivot)
        .collect();
    lows.sort_by(f64::total_cmp);
    lows.dedup();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for lo in lows {
        let mut chosen = Vec::with_capacity(k);
        let mut hi = f64::MIN;
        let mut min_chosen = f64::MAX;
        let mut feasible = true;
        for stamps in &candidates {
            match stamps.iter().find(|s| **s >= lo) {
                Some(&stamp) => {
                    hi = hi.max(stamp);
                    min_chosen = min_chosen.min(stamp);
                    chosen.push(stamp);
                }
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let span = hi.max(pivot) - min_chosen.min(pivot);
        if span <= slop && best.as_ref().is_none_or(|(s, _)| span < *s) {
            best = Some((span, chosen));
        }
    }
    best
}

/// Ready-made stream mixes for studying synchronizer behavior.
pub mod presets {
    use super::{LatencyModel, StreamSpec};

    fn lognormal(period_ms: f64, median_ms: f64, sigma_log: f64) -> StreamSpec {
        StreamSpec {
            period_ms,
            latency: LatencyModel::LogNormal {
                mu_log: median_ms.ln(),
                sigma_log,
            },
        }
    }

    /// One fast perception module and two slow ones on a 20 ms frame
    /// period. The slow deliveries lag more than 100 fast arrivals, so a
    /// 100-entry queue keeps evicting the fast entries a fusion would need;
    /// a 1000-entry queue does not.
    pub fn mixed_speed_streams() -> Vec<StreamSpec> {
        vec![
            lognormal(20.0, 120.0, 0.5),
            lognormal(20.0, 3800.0, 0.4),
            lognormal(20.0, 4000.0, 0.4),
        ]
    }

    /// A heavier mix on a 50 ms period whose worst inter-fusion gaps run to
    /// several seconds under a 100-entry queue.
    pub fn congested_streams() -> Vec<StreamSpec> {
        vec![
            lognormal(50.0, 250.0, 0.5),
            lognormal(50.0, 8000.0, 0.4),
            lognormal(50.0, 8500.0, 0.4),
        ]
    }
}

/// A fusion scenario as read from a config file plus a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionScenario {
    pub config: SyncConfig,
    pub streams: Vec<StreamSpec>,
}

impl FusionScenario {
    /// Parses the key=value config format. `seed` comes from the caller, not
    /// the file. Stream `i` is described by `stream.<i>.period_ms` and
    /// `stream.<i>.latency` (one of `constant:<ms>`, `gaussian:<mean>,<std>`,
    /// `lognormal:<mu_log>,<sigma_log>`, `trace:<path>`).
    pub fn from_file(path: &Path, seed: u64) -> Result<Self> {
        let map = kv::parse_file(path)?;
        let k_streams = kv::require_u64(&map, "k_streams")? as usize;
        let config = SyncConfig {
            k_streams,
            queue_size: kv::require_u64(&map, "queue_size")? as usize,
            slop_ms: kv::optional_f64(&map, "slop_ms")?.unwrap_or(DEFAULT_SLOP_MS),
            duration_ms: kv::require_f64(&map, "duration_ms")?,
            seed,
        };
        let mut streams = Vec::with_capacity(k_streams);
        for index in 0..k_streams {
            let period_ms = kv::require_f64(&map, &format!("stream.{index}.period_ms"))?;
            let latency_raw = kv::require(&map, &format!("stream.{index}.latency"))?;
            streams.push(StreamSpec {
                period_ms,
                latency: parse_latency(latency_raw)?,
            });
        }
        Ok(FusionScenario { config, streams })
    }
}

fn parse_latency(raw: &str) -> Result<LatencyModel> {
    let err = || Error::InvalidParameter(format!("invalid latency spec `{raw}`"));
    let (kind, args) = raw.split_once(':').ok_or_else(err)?;
    let floats = |expected: usize| -> Result<Vec<f64>> {
        let values: Vec<f64> = args
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err())?;
        if values.len() != expected {
            return Err(err());
        }
        Ok(values)
    };
    match kind {
        "constant" => Ok(LatencyModel::Constant(floats(1)?[0])),
        "gaussian" => {
            let v = floats(2)?;
            Ok(LatencyModel::Gaussian {
                mean_ms: v[0],
                std_ms: v[1],
            })
        }
        "lognormal" => {
            let v = floats(2)?;
            Ok(LatencyModel::LogNormal {
                mu_log: v[0],
                sigma_log: v[1],
            })
        }
        "trace" => {
            let set = trace::ingest_trace(Path::new(args))?;
            Ok(LatencyModel::Trace(set.end_to_end_series()))
        }
        _ => Err(err()),
    }
}
