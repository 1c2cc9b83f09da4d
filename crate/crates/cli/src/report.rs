//! CSV and SVG renderings. Every table here is a pure function of data that
//! is already stored in a results document or training run, so reports can be
//! regenerated byte for byte.

use std::fmt::Write as _;

use darp_core::agent::{EpisodeMetrics, EvalPoint};

use crate::compare::{Method, ResultsDocument};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(rows: &[EpisodeMetrics]) -> String {
    let mut out = String::from("episode,reward,seconds,steps,reached\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.episode, r.reward, r.seconds, r.steps, r.reached).unwrap();
    }
    out
}

pub fn evals_csv(rows: &[EvalPoint]) -> String {
    let mut out = String::from("checkpoint,episode,mean_seconds,mean_reward,failure_rate\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.checkpoint, r.episode, opt(r.mean_seconds), r.mean_reward, r.failure_rate)
            .unwrap();
    }
    out
}

/// One row per run and method.
pub fn runs_csv(doc: &ResultsDocument) -> String {
    let mut out = String::from("method,seed,run,noise_seed,seconds,steps,reached,reward\n");
    for m in &doc.methods {
        for r in &m.runs {
            writeln!(out, "{},{},{},{},{},{},{},{}", m.method, r.seed, r.run, r.noise_seed, r.seconds, r.steps, r.reached, r.reward)
                .unwrap();
        }
    }
    out
}

/// Learning-curve table: checkpoints of the trained planner beside the
/// per-seed mean of each fixed baseline.
pub fn curves_csv(doc: &ResultsDocument) -> String {
    let baselines: Vec<Method> = doc.methods.iter().map(|m| m.method).filter(|&m| m != Method::Darp).collect();
    let mut out = String::from("seed,checkpoint,episode,darp_mean_seconds,darp_failure_rate");
    for b in &baselines {
        write!(out, ",{b}_mean_seconds").unwrap();
    }
    out.push('\n');
    for p in &doc.curves {
        write!(out, "{},{},{},{},{}", p.seed, p.checkpoint, p.episode, opt(p.mean_seconds), p.failure_rate).unwrap();
        for b in &baselines {
            write!(out, ",{}", opt(seed_mean(doc, *b, p.seed))).unwrap();
        }
        out.push('\n');
    }
    out
}

fn seed_mean(doc: &ResultsDocument, m: Method, seed: u64) -> Option<f64> {
    let runs = &doc.method(m)?.runs;
    let ok: Vec<f64> = runs.iter().filter(|r| r.seed == seed && r.reached).map(|r| r.seconds).collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

const COLOURS: [(Method, &str); 5] = [
    (Method::Darp, "#1f77b4"),
    (Method::Shortest, "#d62728"),
    (Method::Random, "#7f7f7f"),
    (Method::Oracle, "#2ca02c"),
    (Method::Tabular, "#9467bd"),
];

fn colour(m: Method) -> &'static str {
    COLOURS.iter().find(|(k, _)| *k == m).map(|(_, c)| *c).unwrap_or("#000000")
}

/// Mean travel time per checkpoint, averaged over seeds, with each baseline's
/// overall mean drawn as a horizontal line. Returns `None` without curves.
pub fn curves_svg(doc: &ResultsDocument) -> Option<String> {
    let last = doc.curves.iter().map(|p| p.checkpoint).max()?;
    let mut series: Vec<(usize, f64)> = Vec::new();
    for k in 1..=last {
        let pts: Vec<(usize, f64)> =
            doc.curves.iter().filter(|p| p.checkpoint == k).filter_map(|p| p.mean_seconds.map(|s| (p.episode, s))).collect();
        if let Some(&(ep, _)) = pts.first() {
            series.push((ep, pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64));
        }
    }
    let flat: Vec<(Method, f64)> =
        doc.methods.iter().filter(|m| m.method != Method::Darp).filter_map(|m| Some((m.method, m.mean_seconds?))).collect();
    let ys = series.iter().map(|p| p.1).chain(flat.iter().map(|f| f.1));
    let y_max = ys.fold(0.0f64, f64::max).max(1.0) * 1.05;
    let x_max = series.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / y_max * (h - 2.0 * pad);

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad).unwrap();
    writeln!(svg, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#, h - pad).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, w / 2.0, h - 15.0).unwrap();
    writeln!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {0})" text-anchor="middle">mean travel time (s)</text>"#, h / 2.0).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.0}</text>"#, pad - 4.0, pad + 4.0, y_max).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{x_max}</text>"#, w - pad, h - pad + 16.0).unwrap();
    for (i, (m, y)) in flat.iter().enumerate() {
        writeln!(svg, r#"<line x1="{pad}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="{2}" stroke-dasharray="6 4"/>"#, sy(*y), w - pad, colour(*m))
            .unwrap();
        writeln!(svg, r#"<text x="{}" y="{}" fill="{}">{m}</text>"#, w - pad - 80.0, pad + 16.0 * (i as f64 + 1.0), colour(*m)).unwrap();
    }
    let points: Vec<String> = series.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x as f64), sy(y))).collect();
    writeln!(svg, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, colour(Method::Darp), points.join(" ")).unwrap();
    writeln!(svg, r#"<text x="{}" y="{pad}" fill="{}">darp</text>"#, w - pad - 80.0, colour(Method::Darp)).unwrap();
    svg.push_str("</svg>\n");
    Some(svg)
}
