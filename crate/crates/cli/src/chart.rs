//! SVG line chart of `change_mean` and `change_deriv` with the two top blocks shaded.
//!
//! The drawing contract: exactly two `<rect>` elements (the shaded blocks) and exactly
//! two `<polyline>` elements (the series). Frame, ticks and legend use other elements.

use std::fmt::Write;

use circuitprobe::{CandidateBlock, LayerStatsTable};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const CHANGE_COLOR: &str = "#1f5fa8";
const DERIV_COLOR: &str = "#c0392b";
const STABILITY_FILL: &str = "#2e9e4f";
const ANOMALY_FILL: &str = "#e08e1b";

struct Frame {
    n_layers: usize,
    y_max: f64,
}

impl Frame {
    fn plot_w(&self) -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_h(&self) -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    /// Layer `i` sits at the centre of slot `i`; slot edges are at integer `x`.
    fn x(&self, slot_edge: f64) -> f64 {
        LEFT + slot_edge / self.n_layers as f64 * self.plot_w()
    }

    fn y(&self, v: f64) -> f64 {
        TOP + self.plot_h() * (1.0 - v / self.y_max)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn polyline(out: &mut String, f: &Frame, values: &[f64], color: &str, id: &str) {
    let points: Vec<String> =
        values.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", f.x(i as f64 + 0.5), f.y(v))).collect();
    writeln!(
        out,
        r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
}

fn zone(out: &mut String, f: &Frame, b: CandidateBlock, fill: &str, id: &str) {
    writeln!(
        out,
        r#"<rect id="{id}" class="zone" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.22"><title>{id} {b}</title></rect>"#,
        f.x(b.s as f64),
        TOP,
        f.x(b.e as f64) - f.x(b.s as f64),
        f.plot_h(),
    )
    .unwrap();
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&c| c >= v).unwrap_or(10.0 * mag)
}

pub fn render_svg(stats: &LayerStatsTable, top_stability: CandidateBlock, top_anomaly: CandidateBlock) -> String {
    let peak = stats.change_mean.iter().chain(&stats.change_deriv).cloned().fold(0.0, f64::max);
    let f = Frame { n_layers: stats.n_layers, y_max: nice_max(peak) };
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<text x="{LEFT}" y="22" font-size="15">{}: change magnitude and its derivative per layer</text>"#,
        escape(&stats.meta.model_id)
    )
    .unwrap();

    zone(&mut out, &f, top_stability, STABILITY_FILL, "top_stability");
    zone(&mut out, &f, top_anomaly, ANOMALY_FILL, "top_anomaly");

    // frame and horizontal grid
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    writeln!(out, r##"<path d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="#333"/>"##).unwrap();
    for k in 0..=4 {
        let v = f.y_max * k as f64 / 4.0;
        let y = f.y(v);
        writeln!(out, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, fmt_tick(v))
            .unwrap();
    }
    let step = stats.n_layers.div_ceil(16).max(1);
    for i in (0..stats.n_layers).step_by(step) {
        let x = f.x(i as f64 + 0.5);
        writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{i}</text>"#, y1 + 16.0).unwrap();
    }
    writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#, (x0 + x1) / 2.0, y1 + 34.0)
        .unwrap();

    polyline(&mut out, &f, &stats.change_mean, CHANGE_COLOR, "change_mean");
    polyline(&mut out, &f, &stats.change_deriv, DERIV_COLOR, "change_deriv");

    let legend = [
        ("change_mean", CHANGE_COLOR, 3.0, 1.0),
        ("change_deriv", DERIV_COLOR, 3.0, 1.0),
        ("top_stability", STABILITY_FILL, 10.0, 0.35),
        ("top_anomaly", ANOMALY_FILL, 10.0, 0.35),
    ];
    for (k, (label, color, width, opacity)) in legend.iter().enumerate() {
        let x = LEFT + 150.0 * k as f64;
        let y = HEIGHT - 10.0;
        writeln!(
            out,
            r#"<line x1="{x}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
            y - 4.0,
            x + 18.0,
            y - 4.0
        )
        .unwrap();
        writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{label}</text>"#, x + 24.0).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// The plotted series, one row per layer.
pub fn render_csv(stats: &LayerStatsTable, top_stability: CandidateBlock, top_anomaly: CandidateBlock) -> String {
    let mut out = String::from("layer,change_mean,change_deriv,in_top_stability,in_top_anomaly\n");
    for i in 0..stats.n_layers {
        writeln!(
            out,
            "{i},{},{},{},{}",
            stats.change_mean[i],
            stats.change_deriv[i],
            u8::from(top_stability.layers().contains(&i)),
            u8::from(top_anomaly.layers().contains(&i)),
        )
        .unwrap();
    }
    out
}
