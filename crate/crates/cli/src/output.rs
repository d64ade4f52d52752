//! Report, JSON, CSV and SVG writers. Number formatting goes through
//! `format!`, so output does not depend on the locale.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use crate::run::{RunReport, Status, SweepReport};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn status_word(s: Status) -> &'static str {
    match s {
        Status::Feasible => "Feasible",
        Status::Infeasible => "Infeasible",
        Status::Inconclusive => "Inconclusive",
        Status::Rejected => "Rejected",
        Status::Error => "Error",
    }
}

fn matrix_lines(out: &mut String, name: &str, rows: &[Vec<f64>]) {
    let _ = writeln!(out, "{name} =");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:>11.5}")).collect();
        let _ = writeln!(out, "  [{} ]", cells.join(""));
    }
}

pub fn render_run(r: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "command       {}", r.command);
    let _ = writeln!(out, "status        {}", status_word(r.status));
    if let Some(m) = &r.message {
        let _ = writeln!(out, "message       {m}");
    }
    let _ = writeln!(out, "seed          {}", r.seed);
    let _ = writeln!(out, "N             {}", r.horizon);
    let _ = writeln!(out, "w_bar         {}", r.noise_bound);
    if let Some(g) = r.gamma {
        let _ = writeln!(out, "gamma         {g}");
    }
    if r.gamma_certified.is_some() {
        let _ = writeln!(out, "certified     {}", opt(r.gamma_certified));
    }
    if let Some(l) = r.lambda {
        let _ = writeln!(out, "lambda        {l:.3e}");
    }
    if let Some(m) = r.certificate_margin {
        let _ = writeln!(out, "LMI margin    {m:.3e}  (equality residual {})", r.equality_residual.map_or("-".into(), |e| format!("{e:.1e}")));
    }
    if let Some(k) = &r.gain {
        matrix_lines(&mut out, "K", k);
    }
    if let Some(t) = &r.true_plant {
        let _ = writeln!(out, "true plant    spectral radius {:.6}, H-infinity {} (grid {})", t.spectral_radius, opt(t.hinf), opt(t.hinf_grid));
        if let Some(p) = t.performance_satisfied {
            let _ = writeln!(out, "              quadratic performance {}", if p { "satisfied" } else { "violated" });
        }
    }
    if let Some(g) = r.nominal_gamma {
        let _ = writeln!(out, "nominal       gamma {g:.6} (model-based design on the true plant)");
    }
    if let Some(a) = &r.audit {
        let _ = writeln!(
            out,
            "audit         {} ({} samples, {} stable, max spectral radius {:.6})",
            if a.passed() { "pass" } else { "FAIL" },
            a.samples,
            a.stable,
            a.max_spectral_radius
        );
        if let Some(p) = a.performance_pass {
            let _ = writeln!(out, "              performance met by {p}/{}, max H-infinity {}", a.samples, opt(a.max_hinf));
        }
        let _ = writeln!(out, "              max data residual {:.1e}", a.max_data_residual);
        for e in a.errors.iter().take(5) {
            let _ = writeln!(out, "              error: {e}");
        }
    }
    let _ = writeln!(out, "exit code     {}", r.exit_code());
    out
}

/// Two-column `quantity,value` summary of the demo.
pub fn summary_csv(r: &RunReport) -> String {
    let mut out = String::from("quantity,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(out, "{k},{v}");
    };
    let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
    row("status", status_word(r.status).to_lowercase());
    row("seed", r.seed.to_string());
    row("N", r.horizon.to_string());
    row("w_bar", format!("{}", r.noise_bound));
    row("gamma", num(r.gamma));
    row("gamma_certified", num(r.gamma_certified));
    row("true_spectral_radius", num(r.true_plant.as_ref().map(|t| t.spectral_radius)));
    row("true_hinf", num(r.true_plant.as_ref().and_then(|t| t.hinf)));
    row("nominal_gamma", num(r.nominal_gamma));
    row("audit_samples", r.audit.as_ref().map_or_else(String::new, |a| a.samples.to_string()));
    row("audit_stable", r.audit.as_ref().map_or_else(String::new, |a| a.stable.to_string()));
    row(
        "audit_performance",
        r.audit.as_ref().and_then(|a| a.performance_pass).map_or_else(String::new, |p| p.to_string()),
    );
    row("audit_max_hinf", num(r.audit.as_ref().and_then(|a| a.max_hinf)));
    out
}

pub fn sweep_csv(s: &SweepReport) -> String {
    let mut out = String::from("N,trials,successes\n");
    for r in &s.rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.trials, r.successes);
    }
    out
}

pub fn render_sweep(s: &SweepReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "gamma {}  base seed {}  audit samples {}", s.gamma, s.base_seed, s.audit_samples);
    let _ = writeln!(out, "{:>4} {:>8} {:>7} {:>10} {:>11} {:>13} {:>6} {:>7}", "N", "w_bar", "trials", "successes", "infeasible", "inconclusive", "errors", "audited");
    for r in &s.rows {
        let _ = writeln!(
            out,
            "{:>4} {:>8.4} {:>7} {:>10} {:>11} {:>13} {:>6} {:>7}",
            r.n,
            r.noise_bound,
            r.trials,
            r.successes,
            r.infeasible,
            r.inconclusive,
            r.errors,
            r.audits_passed.map_or("-".into(), |a| a.to_string())
        );
    }
    for f in &s.audit_failures {
        let _ = writeln!(out, "audit failure: {f}");
    }
    out
}

/// Bar chart of successes versus `N`.
pub fn sweep_svg(s: &SweepReport) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (56.0, 16.0, 28.0, 44.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let max_trials = s.rows.iter().map(|r| r.trials).max().unwrap_or(1).max(1) as f64;
    let slot = plot_w / s.rows.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">Successful designs at gamma = {}</text>"#, w / 2.0, s.gamma);
    for i in 0..=4 {
        let v = max_trials * i as f64 / 4.0;
        let y = top + plot_h * (1.0 - i as f64 / 4.0);
        let _ = writeln!(out, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, v.round());
    }
    for (i, r) in s.rows.iter().enumerate() {
        let bh = plot_h * r.successes as f64 / max_trials;
        let x = left + slot * i as f64 + slot * 0.15;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="#4a78b5"><title>N={}: {}/{}</title></rect>"##,
            top + plot_h - bh,
            slot * 0.7,
            r.n,
            r.successes,
            r.trials
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x + slot * 0.35, top + plot_h + 16.0, r.n);
    }
    let _ = writeln!(out, r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, top + plot_h, left + plot_w, top + plot_h);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#, top + plot_h);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">N</text>"#, left + plot_w / 2.0, h - 8.0);
    let _ = writeln!(out, r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">successes</text>"#, top + plot_h / 2.0, top + plot_h / 2.0);
    out.push_str("</svg>\n");
    out
}
