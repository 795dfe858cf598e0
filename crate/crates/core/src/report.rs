//! Text serialization of mission reports, batch summaries and plot series.
//!
//! Every float is written with nine significant digits so logs round-trip
//! and two runs with the same seed produce identical bytes.

use std::fmt::Write as _;

use crate::mission::{BatchSummary, HeightMethod, MissionPhase, MissionReport};

/// Nine significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "none".to_string(), fmt_f64)
}

/// CSV text with a header row.
pub fn csv<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [f64; N]>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn section(out: &mut String, name: &str, body: &str) {
    let _ = writeln!(out, "\n[{name}]");
    out.push_str(body);
}

/// The full report: `key = value` lines followed by `[section]` blocks of CSV.
pub fn format_report(r: &MissionReport) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("scenario", r.scenario.clone());
    kv("seed", r.seed.to_string());
    kv("target", r.target.name().to_string());
    kv("outcome", r.outcome.name().to_string());
    if let MissionPhase::Failed(reason) = &r.outcome {
        kv("failure", reason.clone());
    }
    kv("sim_time", fmt_f64(r.sim_time));
    kv("height_truth", fmt_f64(r.height_truth));
    kv("height_estimate", opt(r.height.map(|h| h.object_height)));
    kv("height_error", opt(r.height_error()));
    if let Some(h) = r.height {
        let method = match h.method {
            HeightMethod::ContourAlign => "contour_align",
            HeightMethod::BladeAlign => "blade_align",
        };
        kv("height_method", method.to_string());
        kv("height_samples", h.samples.to_string());
        kv("height_z_w", fmt_f64(h.z_w));
        kv("height_v_top", fmt_f64(h.v_top));
        kv("height_depth_used", fmt_f64(h.depth_used));
    }
    kv("depth_initial", opt(r.depth.map(|d| d.x_c_initial)));
    kv("depth_refined", opt(r.depth.map(|d| d.x_c_refined)));
    kv("depth_truth_initial", opt(r.depth_truth_initial));
    kv("depth_truth_final", opt(r.depth_truth_final));
    kv("depth_error_initial", opt(r.depth_errors().map(|d| d.0)));
    kv("depth_error_final", opt(r.depth_errors().map(|d| d.1)));
    if let Some(a) = r.active {
        kv("active_predicted_wait", fmt_f64(a.predicted_wait));
        kv("active_waited", fmt_f64(a.waited));
        kv("active_period", fmt_f64(a.period));
        kv("active_confidence", fmt_f64(a.confidence));
    }
    if let Some(b) = r.blade {
        kv("blade_beta", fmt_f64(b.beta));
        kv("blade_omega", fmt_f64(b.omega_beta));
        kv("blade_length_px", fmt_f64(b.blade_len_px));
    }
    if let Some(l) = &r.lambda {
        kv("lambda", fmt_f64(l.lambda));
        kv("lambda_truth", fmt_f64(l.lambda_truth));
        kv("lambda_duration", fmt_f64(l.duration));
        kv("lambda_samples", l.history.len().to_string());
    }
    kv("align_time", opt(r.align_time(2.0)));

    let phases = r.phases.iter().fold("phase,start,end\n".to_string(), |mut s, (p, span)| {
        let _ = writeln!(s, "{},{},{}", p.name(), fmt_f64(span.start), fmt_f64(span.end));
        s
    });
    section(&mut out, "phases", &phases);
    if let Some(l) = &r.lambda {
        section(&mut out, "lambda_history", &csv(["sample", "lambda"], l.history.iter().enumerate().map(|(i, &x)| [i as f64, x])));
    }
    section(&mut out, "confidence", &confidence_csv(r));
    section(&mut out, "pixel_error", &pixel_error_csv(r));
    section(&mut out, "depth", &depth_csv(r));
    section(
        &mut out,
        "climb",
        &csv(["t_seconds", "altitude", "v_top"], r.climb_log.iter().map(|c| [c.t, c.altitude, c.v_top])),
    );
    section(
        &mut out,
        "trace",
        &csv(
            ["t_seconds", "north", "east", "down", "north_est", "east_est", "down_est", "yaw"],
            r.trace.iter().map(|s| {
                [s.t, s.truth.x, s.truth.y, s.truth.z, s.estimate.x, s.estimate.y, s.estimate.z, s.yaw]
            }),
        ),
    );
    out
}

/// Detector confidence over time: `t_seconds,value`.
pub fn confidence_csv(r: &MissionReport) -> String {
    csv(["t_seconds", "value"], r.confidence_log.iter().map(|&(t, c)| [t, c]))
}

/// Predicted rotor-top row minus the principal row during alignment:
/// `t_seconds,value`.
pub fn pixel_error_csv(r: &MissionReport) -> String {
    csv(["t_seconds", "value"], r.pixel_error_log.iter().map(|&(t, e)| [t, e]))
}

/// EKF depth with its standard deviation and the true depth:
/// `t_seconds,value,std,truth`.
pub fn depth_csv(r: &MissionReport) -> String {
    csv(["t_seconds", "value", "std", "truth"], r.depth_log.iter().map(|d| [d.t, d.estimate, d.std, d.truth]))
}

/// Plot series as `(file name, CSV text)` pairs.
pub fn plot_series(r: &MissionReport) -> Vec<(&'static str, String)> {
    vec![
        ("confidence.csv", confidence_csv(r)),
        ("pixel_error.csv", pixel_error_csv(r)),
        ("depth.csv", depth_csv(r)),
    ]
}

/// Table-style batch summary followed by one row per run.
pub fn format_summary(s: &BatchSummary, reports: &[MissionReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "runs = {}", s.runs);
    let _ = writeln!(out, "succeeded = {}", s.succeeded);
    let _ = writeln!(out, "height_truth = {}", fmt_f64(s.height_truth));
    let _ = writeln!(out, "height_mean = {}", fmt_f64(s.height_mean));
    let _ = writeln!(out, "height_std = {}", fmt_f64(s.height_std));
    let _ = writeln!(out, "height_rmse = {}", fmt_f64(s.height_rmse));
    let _ = writeln!(out, "depth_error_initial_median = {}", fmt_f64(s.depth_initial_median));
    let _ = writeln!(out, "depth_error_final_median = {}", fmt_f64(s.depth_final_median));
    let _ = writeln!(out, "table = {:.2} ± {:.2} m, RMSE {:.2} m", s.height_mean, s.height_std, s.height_rmse);
    let mut runs = "seed,outcome,height,height_error,depth_error_initial,depth_error_final\n".to_string();
    for r in reports {
        let d = r.depth_errors();
        let _ = writeln!(
            runs,
            "{},{},{},{},{},{}",
            r.seed,
            r.outcome.name(),
            opt(r.height.map(|h| h.object_height)),
            opt(r.height_error()),
            opt(d.map(|d| d.0)),
            opt(d.map(|d| d.1)),
        );
    }
    section(&mut out, "runs", &runs);
    out
}
