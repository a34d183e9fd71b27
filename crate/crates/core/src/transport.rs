//! Seeded parametric model of 1-to-N topic transport latency under two
//! middleware mechanisms: copy-per-subscriber sequential IPC and
//! fragmenting-UDP-plus-shared-memory DDS.
//!
//! This is a cost model, not a packet-level simulator. The default
//! calibration is shipped as a config file so the parameters stay data, not
//! code.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv;
use crate::stats::{self, VariationSummary};

/// UDP datagram payload limit; messages above the shared-memory threshold
/// are split into fragments of this size.
pub const FRAGMENT_BYTES: u64 = 65_536;

pub const MAX_SUBSCRIBERS: u32 = 64;

/// Trial count used by [`compare_mechanisms`].
pub const COMPARE_TRIALS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Ipc,
    Dds,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Ipc => "ipc",
            Mechanism::Dds => "dds",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipc" => Ok(Mechanism::Ipc),
            "dds" => Ok(Mechanism::Dds),
            other => Err(Error::InvalidParameter(format!(
                "unknown mechanism `{other}` (expected ipc or dds)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportScenario {
    pub mechanism: Mechanism,
    pub message_bytes: u64,
    pub n_subscribers: u32,
    pub trials: u32,
    pub seed: u64,
}

/// Sequential copy-and-send cost model: subscriber `i` (1-indexed) waits for
/// `i` copy+send rounds of the full message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpcParams {
    pub base_us: f64,
    pub copy_us_per_mb: f64,
    pub send_us_per_mb: f64,
    pub jitter_fraction: f64,
}

/// Shared-memory below the threshold; above it, fragmentation plus
/// reassembly per fragment, with a multiplicative penalty for subscribers
/// beyond the concurrently serviceable link capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdsParams {
    pub shm_threshold_bytes: u64,
    pub shm_base_us: f64,
    pub fragment_us: f64,
    pub reassembly_us_per_fragment: f64,
    pub cpu_capacity_links: u32,
    pub overload_penalty_factor: f64,
    pub jitter_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportParams {
    pub ipc: IpcParams,
    pub dds: DdsParams,
}

impl Default for TransportParams {
    /// Calibration under which small messages favor DDS, large messages
    /// favor IPC, and large-message DDS splits into a fast group within the
    /// link capacity and a slow group beyond it.
    fn default() -> Self {
        TransportParams {
            ipc: IpcParams {
                base_us: 100.0,
                copy_us_per_mb: 350.0,
                send_us_per_mb: 350.0,
                jitter_fraction: 0.05,
            },
            dds: DdsParams {
                shm_threshold_bytes: FRAGMENT_BYTES,
                shm_base_us: 120.0,
                fragment_us: 150.0,
                reassembly_us_per_fragment: 40.0,
                cpu_capacity_links: 4,
                overload_penalty_factor: 2.5,
                jitter_fraction: 0.05,
            },
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        let costs = [
            ("ipc.base_us", self.ipc.base_us),
            ("ipc.copy_us_per_mb", self.ipc.copy_us_per_mb),
            ("ipc.send_us_per_mb", self.ipc.send_us_per_mb),
            ("dds.shm_base_us", self.dds.shm_base_us),
            ("dds.fragment_us", self.dds.fragment_us),
            (
                "dds.reassembly_us_per_fragment",
                self.dds.reassembly_us_per_fragment,
            ),
            (
                "dds.overload_penalty_factor",
                self.dds.overload_penalty_factor,
            ),
        ];
        for (name, value) in costs {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("ipc.jitter_fraction", self.ipc.jitter_fraction),
            ("dds.jitter_fraction", self.dds.jitter_fraction),
        ] {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let f = kv::format_sig9;
        format!(
            "ipc.base_us={}\n\
             ipc.copy_us_per_mb={}\n\
             ipc.send_us_per_mb={}\n\
             ipc.jitter_fraction={}\n\
             dds.shm_threshold_bytes={}\n\
             dds.shm_base_us={}\n\
             dds.fragment_us={}\n\
             dds.reassembly_us_per_fragment={}\n\
             dds.cpu_capacity_links={}\n\
             dds.overload_penalty_factor={}\n\
             dds.jitter_fraction={}\n",
            f(self.ipc.base_us),
            f(self.ipc.copy_us_per_mb),
            f(self.ipc.send_us_per_mb),
            f(self.ipc.jitter_fraction),
            self.dds.shm_threshold_bytes,
            f(self.dds.shm_base_us),
            f(self.dds.fragment_us),
            f(self.dds.reassembly_us_per_fragment),
            self.dds.cpu_capacity_links,
            f(self.dds.overload_penalty_factor),
            f(self.dds.jitter_fraction),
        )
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let params = TransportParams {
            ipc: IpcParams {
                base_us: kv::require_f64(map, "ipc.base_us")?,
                copy_us_per_mb: kv::require_f64(map, "ipc.copy_us_per_mb")?,
                send_us_per_mb: kv::require_f64(map, "ipc.send_us_per_mb")?,
                jitter_fraction: kv::require_f64(map, "ipc.jitter_fraction")?,
            },
            dds: DdsParams {
                shm_threshold_bytes: kv::require_u64(map, "dds.shm_threshold_bytes")?,
                shm_base_us: kv::require_f64(map, "dds.shm_base_us")?,
                fragment_us: kv::require_f64(map, "dds.fragment_us")?,
                reassembly_us_per_fragment: kv::require_f64(map, "dds.reassembly_us_per_fragment")?,
                cpu_capacity_links: kv::require_u64(map, "dds.cpu_capacity_links")? as u32,
                overload_penalty_factor: kv::require_f64(map, "dds.overload_penalty_factor")?,
                jitter_fraction: kv::require_f64(map, "dds.jitter_fraction")?,
            },
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_map(&kv::parse_file(path)?)
    }
}

/// Number of UDP fragments needed for a message of the given size.
pub fn fragment_count(message_bytes: u64) -> u64 {
    message_bytes.div_ceil(FRAGMENT_BYTES)
}

fn check_scenario(scenario: &TransportScenario) -> Result<()> {
    if scenario.message_bytes == 0 {
        return Err(Error::InvalidParameter(
            "message_bytes must be >= 1".to_string(),
        ));
    }
    if scenario.n_subscribers == 0 || scenario.n_subscribers > MAX_SUBSCRIBERS {
        return Err(Error::InvalidParameter(format!(
            "n_subscribers must lie in 1..={MAX_SUBSCRIBERS}, got {}",
            scenario.n_subscribers
        )));
    }
    if scenario.trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".to_string()));
    }
    Ok(())
}

/// Deterministic per-subscriber latencies in milliseconds, one row per
/// trial. Each trial draws from its own counter-based substream, so results
/// for subscribers `1..=n` are unchanged by raising `n`.
pub fn simulate_transport(
    scenario: &TransportScenario,
    params: &TransportParams,
) -> Result<Vec<Vec<f64>>> {
    check_scenario(scenario)?;
    params.validate()?;

    let mb = scenario.message_bytes as f64 / (1024.0 * 1024.0);
    let mut trials = Vec::with_capacity(scenario.trials as usize);
    for trial in 0..scenario.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(trial as u64);
        let mut row = Vec::with_capacity(scenario.n_subscribers as usize);
        for subscriber in 1..=scenario.n_subscribers {
            let (cost_us, jitter) = match scenario.mechanism {
                Mechanism::Ipc => {
                    let per_round = (params.ipc.copy_us_per_mb + params.ipc.send_us_per_mb) * mb;
                    (
                        params.ipc.base_us + subscriber as f64 * per_round,
                        params.ipc.jitter_fraction,
                    )
                }
                Mechanism::Dds => {
                    let dds = &params.dds;
                    if scenario.message_bytes <= dds.shm_threshold_bytes {
                        (dds.shm_base_us, dds.jitter_fraction)
                    } else {
                        let fragments = fragment_count(scenario.message_bytes) as f64;
                        let mut cost =
                            fragments * (dds.fragment_us + dds.reassembly_us_per_fragment);
                        if subscriber > dds.cpu_capacity_links {
                            cost *= dds.overload_penalty_factor;
                        }
                        (cost, dds.jitter_fraction)
                    }
                }
            };
            let u = rng.random::<f64>() * 2.0 - 1.0;
            row.push(cost_us * (1.0 + jitter * u) / 1000.0);
        }
        trials.push(row);
    }
    Ok(trials)
}

/// Pooled summaries of both mechanisms under the same seed and message size.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismComparison {
    pub ipc: VariationSummary,
    pub dds: VariationSummary,
}

impl MechanismComparison {
    pub fn ipc_median(&self) -> f64 {
        self.ipc.percentile(0.5).unwrap_or(f64::NAN)
    }

    pub fn dds_median(&self) -> f64 {
        self.dds.percentile(0.5).unwrap_or(f64::NAN)
    }
}

/// Runs both mechanisms over [`COMPARE_TRIALS`] trials with the same seed
/// and summarizes the latency pooled over all subscribers.
pub fn compare_mechanisms(
    message_bytes: u64,
    n_subscribers: u32,
    params: &TransportParams,
    seed: u64,
) -> Result<MechanismComparison> {
    let run = |mechanism| -> Result<VariationSummary> {
        let scenario = TransportScenario {
            mechanism,
            message_bytes,
            n_subscribers,
            trials: COMPARE_TRIALS,
            seed,
        };
        let pooled: Vec<f64> = simulate_transport(&scenario, params)?
            .into_iter()
            .flatten()
            .collect();
        stats::summarize(&pooled, &[0.5, 0.8, 0.99])
    };
    Ok(MechanismComparison {
        ipc: run(Mechanism::Ipc)?,
        dds: run(Mechanism::Dds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zero_jitter() -> TransportParams {
        let mut params = TransportParams::default();
        params.ipc.jitter_fraction = 0.0;
        params.dds.jitter_fraction = 0.0;
        params
    }

    fn scenario(mechanism: Mechanism, bytes: u64, subs: u32) -> TransportScenario {
        TransportScenario {
            mechanism,
            message_bytes: bytes,
            n_subscribers: subs,
            trials: 3,
            seed: 9,
        }
    }

    #[test]
    fn small_dds_messages_take_the_shared_memory_path() {
        let params = zero_jitter();
        let trials = simulate_transport(&scenario(Mechanism::Dds, 62 * 1024, 6), &params).unwrap();
        for row in trials {
            for latency in row {
                assert_relative_eq!(
                    latency,
                    params.dds.shm_base_us / 1000.0,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn large_dds_messages_fragment() {
        // 6.2 MB at a 64 KB datagram limit needs 100 fragments.
        let bytes = (6.2 * 1024.0 * 1024.0) as u64;
        assert_eq!(fragment_count(bytes), 100);

        let params = zero_jitter();
        let trials = simulate_transport(&scenario(Mechanism::Dds, bytes, 4), &params).unwrap();
        let expected =
            100.0 * (params.dds.fragment_us + params.dds.reassembly_us_per_fragment) / 1000.0;
        for row in trials {
            for latency in row {
                assert_relative_eq!(latency, expected, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn subscribers_beyond_capacity_pay_the_penalty() {
        let bytes = (6.2 * 1024.0 * 1024.0) as u64;
        let params = zero_jitter();
        let trials = simulate_transport(&scenario(Mechanism::Dds, bytes, 8), &params).unwrap();
        let row = &trials[0];
        for i in 0..4 {
            assert_relative_eq!(row[i + 4], row[i] * params.dds.overload_penalty_factor);
        }
    }

    #[test]
    fn ipc_latency_grows_sequentially_per_subscriber() {
        let params = zero_jitter();
        let trials =
            simulate_transport(&scenario(Mechanism::Ipc, 1024 * 1024, 3), &params).unwrap();
        let row = &trials[0];
        let above_base: Vec<f64> = row
            .iter()
            .map(|l| l - params.ipc.base_us / 1000.0)
            .collect();
        assert!(above_base[0] > 0.0);
        assert_relative_eq!(above_base[1], 2.0 * above_base[0], max_relative = 1e-12);
        assert_relative_eq!(above_base[2], 3.0 * above_base[0], max_relative = 1e-12);
    }

    #[test]
    fn ipc_mean_is_affine_in_subscriber_count_without_jitter() {
        let params = zero_jitter();
        let mean_for = |subs: u32| {
            let trials =
                simulate_transport(&scenario(Mechanism::Ipc, 512 * 1024, subs), &params).unwrap();
            let pooled: Vec<f64> = trials.into_iter().flatten().collect();
            pooled.iter().sum::<f64>() / pooled.len() as f64
        };
        let means: Vec<f64> = (1..=8).map(mean_for).collect();
        let first_diff = means[1] - means[0];
        for w in means.windows(2) {
            assert_relative_eq!(w[1] - w[0], first_diff, max_relative = 1e-9);
        }
    }

    #[test]
    fn dds_cost_is_piecewise_in_message_size() {
        let params = zero_jitter();
        let latency_for = |bytes: u64| {
            simulate_transport(&scenario(Mechanism::Dds, bytes, 1), &params).unwrap()[0][0]
        };
        // Constant below the shared-memory threshold.
        assert_eq!(latency_for(1), latency_for(FRAGMENT_BYTES));
        // Stepwise above it: constant within a fragment-count plateau.
        assert_eq!(
            latency_for(FRAGMENT_BYTES + 1),
            latency_for(2 * FRAGMENT_BYTES)
        );
        assert!(latency_for(2 * FRAGMENT_BYTES + 1) > latency_for(2 * FRAGMENT_BYTES));
    }

    #[test]
    fn same_seed_reproduces_results() {
        let params = TransportParams::default();
        let s = scenario(Mechanism::Dds, 7 * 1024 * 1024, 8);
        assert_eq!(
            simulate_transport(&s, &params).unwrap(),
            simulate_transport(&s, &params).unwrap()
        );
    }

    #[test]
    fn pooled_range_is_non_decreasing_in_subscribers() {
        let params = TransportParams::default();
        for mechanism in [Mechanism::Ipc, Mechanism::Dds] {
            let mut prev_range = 0.0;
            for subs in 1..=8 {
                let mut s = scenario(mechanism, (6.2 * 1024.0 * 1024.0) as u64, subs);
                s.trials = 20;
                s.seed = 5;
                let pooled: Vec<f64> = simulate_transport(&s, &params)
                    .unwrap()
                    .into_iter()
                    .flatten()
                    .collect();
                let summary = stats::summarize(&pooled, &[]).unwrap();
                assert!(
                    summary.range_ms >= prev_range,
                    "{mechanism:?} range shrank at {subs} subscribers"
                );
                prev_range = summary.range_ms;
            }
        }
    }

    #[test]
    fn message_size_orderings_hold_under_default_calibration() {
        let params = TransportParams::default();
        let small = compare_mechanisms(62 * 1024, 4, &params, 5).unwrap();
        assert!(small.dds_median() < small.ipc_median());

        let large = compare_mechanisms((6.2 * 1024.0 * 1024.0) as u64, 4, &params, 5).unwrap();
        assert!(large.ipc_median() < large.dds_median());
    }

    #[test]
    fn out_of_range_subscribers_are_rejected() {
        let params = TransportParams::default();
        for subs in [0, MAX_SUBSCRIBERS + 1] {
            let s = scenario(Mechanism::Ipc, 1024, subs);
            assert!(simulate_transport(&s, &params).is_err());
        }
    }

    #[test]
    fn params_round_trip_through_the_kv_format() {
        let params = TransportParams::default();
        let map = kv::parse_str(&params.render()).unwrap();
        assert_eq!(TransportParams::from_map(&map).unwrap(), params);
    }
}
