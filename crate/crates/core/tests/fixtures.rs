//! Shipped fixtures are regenerated, never hand-edited. These tests pin the
//! committed files to their generators byte for byte; the ignored test
//! rewrites them (`cargo test -p latvar-core --test fixtures -- --ignored`).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use latvar_core::fusion::{self, FusionScenario, LatencyModel, SyncConfig};
use latvar_core::synth::{self, presets, GeneratorSpec};
use latvar_core::trace::{self, render_trace};
use latvar_core::transport::TransportParams;

fn repo_path(relative: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(relative)
}

fn od_fixture_spec() -> GeneratorSpec {
    presets::faster_rcnn_like(42)
}

fn fixture_files() -> Vec<(&'static str, String, String)> {
    let od_spec = od_fixture_spec();
    let od_trace = synth::generate(&od_spec).unwrap().trace;
    let lanenet = synth::lanenet_fixture(1);
    vec![
        (
            "fixtures/synthetic_od_600.csv",
            render_trace(&od_trace),
            format!(
                "synthetic_od_600.csv,42,{:016x}",
                synth::spec_hash(&od_spec)
            ),
        ),
        (
            "fixtures/lanenet_1000.csv",
            render_trace(&lanenet),
            format!(
                "lanenet_1000.csv,1,{:016x}",
                synth::fnv1a64(synth::LANENET_FIXTURE_SPEC.as_bytes())
            ),
        ),
    ]
}

fn manifest_text() -> String {
    let mut out = String::from("name,seed,spec-hash\n");
    for (_, _, line) in fixture_files() {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

#[test]
fn shipped_fixtures_match_regeneration() {
    for (path, expected, _) in fixture_files() {
        let shipped = fs::read_to_string(repo_path(path))
            .unwrap_or_else(|e| panic!("{path} missing (run the ignored regenerate test): {e}"));
        assert_eq!(shipped, expected, "{path} diverges from its generator");
    }
}

#[test]
fn shipped_manifest_is_current() {
    let shipped = fs::read_to_string(repo_path("fixtures/fixtures.manifest")).unwrap();
    assert_eq!(shipped, manifest_text());
}

#[test]
fn od_fixture_ingests_with_600_records() {
    let set = trace::ingest_trace(&repo_path("fixtures/synthetic_od_600.csv")).unwrap();
    assert_eq!(set.len(), 600);
}

#[test]
fn lanenet_fixture_stats_match_external_recomputation() {
    // Frozen from a numpy recomputation over the shipped file (population
    // standard deviation, linear-interpolation percentile).
    let set = trace::ingest_trace(&repo_path("fixtures/lanenet_1000.csv")).unwrap();
    let summary = latvar_core::stats::summarize(&set.end_to_end_series(), &[0.95]).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= b.abs() * 1e-9;
    assert!(
        close(summary.mean_ms, 87.827957565),
        "mean {}",
        summary.mean_ms
    );
    assert!(
        close(summary.std_ms, 45.78993219442976),
        "std {}",
        summary.std_ms
    );
    assert!(close(summary.cv, 0.5213594106471324), "cv {}", summary.cv);
    assert!(
        close(summary.percentile(0.95).unwrap(), 124.22610729999565),
        "p95 {}",
        summary.percentile(0.95).unwrap()
    );
    assert_eq!(summary.max_ms, 340.0);
}

#[test]
fn shipped_transport_calibration_matches_defaults() {
    let shipped =
        TransportParams::from_file(&repo_path("config/transport_default.params")).unwrap();
    assert_eq!(shipped, TransportParams::default());
}

fn fusion_config_text() -> String {
    let mut out = String::from("k_streams=3\nqueue_size=100\nslop_ms=100\nduration_ms=60000\n");
    for (index, stream) in fusion::presets::mixed_speed_streams().iter().enumerate() {
        let _ = writeln!(out, "stream.{index}.period_ms={}", stream.period_ms);
        if let LatencyModel::LogNormal { mu_log, sigma_log } = stream.latency {
            let _ = writeln!(out, "stream.{index}.latency=lognormal:{mu_log},{sigma_log}");
        }
    }
    out
}

#[test]
fn shipped_fusion_config_matches_preset() {
    let scenario =
        FusionScenario::from_file(&repo_path("config/fusion_overload.config"), 11).unwrap();
    assert_eq!(
        scenario.config,
        SyncConfig {
            k_streams: 3,
            queue_size: 100,
            slop_ms: 100.0,
            duration_ms: 60_000.0,
            seed: 11
        }
    );
    assert_eq!(scenario.streams, fusion::presets::mixed_speed_streams());
}

#[test]
fn shipped_generator_specs_match_presets() {
    let od = GeneratorSpec::from_file(&repo_path("config/od_full_scale.spec"), 42).unwrap();
    assert_eq!(od, presets::faster_rcnn_like(42));
    let ld = GeneratorSpec::from_file(&repo_path("config/ld_full_scale.spec"), 43).unwrap();
    assert_eq!(ld, presets::pinet_like(43));
}

#[test]
#[ignore = "rewrites the committed fixtures"]
fn regenerate_fixtures() {
    fs::create_dir_all(repo_path("fixtures")).unwrap();
    for (path, content, _) in fixture_files() {
        fs::write(repo_path(path), content).unwrap();
    }
    fs::write(repo_path("fixtures/fixtures.manifest"), manifest_text()).unwrap();

    fs::create_dir_all(repo_path("config")).unwrap();
    fs::write(
        repo_path("config/transport_default.params"),
        TransportParams::default().render(),
    )
    .unwrap();
    fs::write(
        repo_path("config/od_full_scale.spec"),
        presets::faster_rcnn_like(42).render(),
    )
    .unwrap();
    fs::write(
        repo_path("config/ld_full_scale.spec"),
        presets::pinet_like(43).render(),
    )
    .unwrap();
    fs::write(
        repo_path("config/fusion_overload.config"),
        fusion_config_text(),
    )
    .unwrap();
}
