//! Output rendering. CSV is the machine-readable default; `table` aligns
//! key/value lines for humans. All reals carry six decimal digits so
//! repeated runs are byte-identical.

use std::fmt::Write as _;

use latvar_core::deadline::DeadlineReport;
use latvar_core::fusion::FusionResult;
use latvar_core::predictor::EvalReport;
use latvar_core::stats::VariationSummary;

use crate::Format;

/// Quantile column label: 0.5 -> p50, 0.99 -> p99, 0.999 -> p99.9.
fn quantile_label(q: f64) -> String {
    let mut label = format!("{:.10}", q * 100.0);
    while label.ends_with('0') {
        label.pop();
    }
    if label.ends_with('.') {
        label.pop();
    }
    format!("p{label}")
}

pub fn summary(summary: &VariationSummary, format: Format) -> String {
    let base: Vec<(String, String)> = [
        ("n", format!("{}", summary.n)),
        ("mean_ms", format!("{:.6}", summary.mean_ms)),
        ("std_ms", format!("{:.6}", summary.std_ms)),
        ("min_ms", format!("{:.6}", summary.min_ms)),
        ("max_ms", format!("{:.6}", summary.max_ms)),
        ("range_ms", format!("{:.6}", summary.range_ms)),
        ("cv", format!("{:.6}", summary.cv)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .chain(
        summary
            .percentiles
            .iter()
            .map(|(q, v)| (quantile_label(*q), format!("{v:.6}"))),
    )
    .collect();

    match format {
        Format::Csv => {
            let header: Vec<&str> = base.iter().map(|(k, _)| k.as_str()).collect();
            let row: Vec<&str> = base.iter().map(|(_, v)| v.as_str()).collect();
            format!("{}\n{}\n", header.join(","), row.join(","))
        }
        Format::Table => {
            let mut out = String::new();
            for (key, value) in &base {
                let _ = writeln!(out, "{key:>10}  {value}");
            }
            out
        }
    }
}

pub fn pearson(r: f64, format: Format) -> String {
    match format {
        Format::Csv => format!("pearson\n{r:.6}\n"),
        Format::Table => format!("pearson: {r:.6}\n"),
    }
}

pub fn cdf(points: &[(f64, f64)]) -> String {
    let mut out = String::from("value_ms,fraction\n");
    for (value, fraction) in points {
        let _ = writeln!(out, "{value:.6},{fraction:.6}");
    }
    out
}

pub fn predicted(ms: f64, format: Format) -> String {
    match format {
        Format::Csv => format!("predicted_ms\n{ms:.6}\n"),
        Format::Table => format!("{ms:.6}\n"),
    }
}

pub fn eval_report(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::from(
                "mean_real_ms,mean_pred_ms,mean_abs_error_ms,accuracy_pct,frames,excluded\n",
            );
            let _ = writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6},{},{}",
                report.mean_real_ms,
                report.mean_pred_ms,
                report.mean_abs_error_ms,
                report.accuracy_pct,
                report.per_frame.len(),
                report.excluded_frames
            );
            out.push('\n');
            out.push_str("frame_id,real_ms,pred_ms,abs_err_ms\n");
            for frame in &report.per_frame {
                let _ = writeln!(
                    out,
                    "{},{:.6},{:.6},{:.6}",
                    frame.frame_id, frame.real_ms, frame.predicted_ms, frame.abs_error_ms
                );
            }
            out
        }
        Format::Table => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "frames evaluated: {} (excluded {})",
                report.per_frame.len(),
                report.excluded_frames
            );
            let _ = writeln!(out, "mean real:      {:.2} ms", report.mean_real_ms);
            let _ = writeln!(out, "mean predicted: {:.2} ms", report.mean_pred_ms);
            let _ = writeln!(out, "mean abs error: {:.2} ms", report.mean_abs_error_ms);
            let _ = writeln!(out, "accuracy:       {:.2} %", report.accuracy_pct);
            out
        }
    }
}

pub fn deadline_reports(reports: &[DeadlineReport], format: Format) -> String {
    match format {
        Format::Csv => {
            let mut out = String::from(
                "policy,deadline_ms,miss_rate,mean_waste_ms,waste_p95_ms,effective_period_ms,cv_effective\n",
            );
            for r in reports {
                let _ = writeln!(
                    out,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    r.policy,
                    r.deadline_ms,
                    r.miss_rate,
                    r.mean_waste_ms,
                    r.waste_p95_ms,
                    r.effective_period_ms,
                    r.cv_effective
                );
            }
            out
        }
        Format::Table => {
            let mut out = String::new();
            for r in reports {
                let _ = writeln!(out, "policy {}", r.policy);
                let _ = writeln!(out, "  deadline:         {:.2} ms", r.deadline_ms);
                let _ = writeln!(out, "  miss rate:        {:.4}", r.miss_rate);
                let _ = writeln!(out, "  mean waste:       {:.2} ms", r.mean_waste_ms);
                let _ = writeln!(out, "  waste p95:        {:.2} ms", r.waste_p95_ms);
                let _ = writeln!(out, "  effective period: {:.2} ms", r.effective_period_ms);
                let _ = writeln!(out, "  cv effective:     {:.4}", r.cv_effective);
            }
            out
        }
    }
}

pub fn transport(trials: &[Vec<f64>]) -> String {
    let mut out = String::from("trial,subscriber,latency_ms\n");
    for (trial, row) in trials.iter().enumerate() {
        for (idx, latency) in row.iter().enumerate() {
            let _ = writeln!(out, "{},{},{latency:.6}", trial, idx + 1);
        }
    }
    out
}

pub fn fusion(result: &FusionResult) -> String {
    let mut out = String::from("fusion_index,emit_time_ms,inter_fusion_delay_ms,span_ms\n");
    for (index, emission) in result.emissions.iter().enumerate() {
        let delay = if index == 0 {
            0.0
        } else {
            result.inter_fusion_delays_ms[index - 1]
        };
        let _ = writeln!(
            out,
            "{index},{:.6},{delay:.6},{:.6}",
            emission.time_ms, emission.span_ms
        );
    }
    out.push('\n');
    out.push_str("stat,value\n");
    let _ = writeln!(out, "fusion_count,{}", result.fusion_count());
    let _ = writeln!(out, "worst_delay_ms,{:.6}", result.worst_delay_ms());
    for (stream, drops) in result.dropped_per_stream.iter().enumerate() {
        let _ = writeln!(out, "dropped_stream_{stream},{drops}");
    }
    for (stream, clamped) in result.clamped_per_stream.iter().enumerate() {
        let _ = writeln!(out, "clamped_stream_{stream},{clamped}");
    }
    for (stream, delivered) in result.delivered_per_stream.iter().enumerate() {
        let _ = writeln!(out, "delivered_stream_{stream},{delivered}");
    }
    out
}
