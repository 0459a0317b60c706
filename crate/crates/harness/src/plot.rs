//! Minimal SVG line charts of run-log losses.

use std::fmt::Write as _;

use crate::runlog::RunLog;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#555555", "#1f77b4", "#d62728", "#2ca02c"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Loss against step, one polyline per lesson (lesson 0 is fine-tuning).
pub fn loss_curves(log: &RunLog, title: &str) -> String {
    let (x0, x1) = match (log.steps.first(), log.steps.last()) {
        (Some(a), Some(b)) => (a.step as f64, (b.step as f64).max(a.step as f64 + 1.0)),
        _ => (0.0, 1.0),
    };
    let y1 = log.steps.iter().map(|r| r.loss).fold(0.0f64, f64::max).max(1e-9);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y / y1 * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let y = y1 * f64::from(i) / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.2}</text>"#,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    for x in [x0, x1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{x}</text>"#,
            sx(x),
            bottom + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">step</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );

    let mut lessons: Vec<u8> = log.steps.iter().map(|r| r.lesson).collect();
    lessons.sort_unstable();
    lessons.dedup();
    for (k, &lesson) in lessons.iter().enumerate() {
        let color = COLORS[usize::from(lesson) % COLORS.len()];
        let points: Vec<String> = log
            .steps
            .iter()
            .filter(|r| r.lesson == lesson)
            .map(|r| format!("{:.1},{:.1}", sx(r.step as f64), sy(r.loss)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            points.join(" ")
        );
        let label = if lesson == 0 {
            "fine-tuning".to_string()
        } else {
            format!("lesson {lesson}")
        };
        let ly = top + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" font-family="sans-serif" font-size="12">{label}</text>"#,
            right - 90.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar-chart data for eval results: one `run,metric,value` row per numeric
/// metric of each run (counts excluded).
pub fn metric_bars(runs: &[(String, Vec<(String, String)>)]) -> String {
    let mut out = String::from("run,metric,value\n");
    for (name, pairs) in runs {
        for (k, v) in pairs {
            if k.ends_with(".count") {
                continue;
            }
            if let Ok(x) = v.parse::<f64>() {
                let _ = writeln!(out, "{name},{k},{x}");
            }
        }
    }
    out
}
