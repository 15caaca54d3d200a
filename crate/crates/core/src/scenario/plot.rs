//! Minimal SVG line charts of a trace: costs, depth of field, intrinsics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::runner::Trace;

const WIDTH: f64 = 960.0;
const PANEL_HEIGHT: f64 = 260.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

struct Series {
    name: &'static str,
    color: &'static str,
    dashed: bool,
    /// `None` breaks the line.
    points: Vec<(f64, Option<f64>)>,
}

struct Panel {
    title: &'static str,
    y_label: &'static str,
    log_y: bool,
    /// Values above this are drawn at the top edge.
    y_cap: Option<f64>,
    series: Vec<Series>,
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(title: &str, time: (f64, f64), markers: &[(f64, String)], panels: &[Panel]) -> String {
    let height = panels.len() as f64 * (PANEL_HEIGHT + TOP + BOTTOM) + TOP;
    let plot_w = WIDTH - LEFT - RIGHT;
    let (t0, t1) = nice_range(time.0, time.1);
    let tx = |t: f64| LEFT + (t - t0) / (t1 - t0) * plot_w;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (p, panel) in panels.iter().enumerate() {
        let y_top = TOP + p as f64 * (PANEL_HEIGHT + TOP + BOTTOM) + TOP;
        let y_bottom = y_top + PANEL_HEIGHT;
        let map = |v: f64| if panel.log_y { v.max(1e-12).log10() } else { v };
        let values = panel
            .series
            .iter()
            .flat_map(|s| s.points.iter().filter_map(|&(_, v)| v))
            .filter(|v| v.is_finite())
            .map(|v| panel.y_cap.map_or(v, |c| v.min(c)))
            .map(map);
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (y0, y1) = nice_range(lo, hi);
        let ty = |v: f64| {
            let v = map(panel.y_cap.map_or(v, |c| v.min(c)));
            y_bottom - (v - y0) / (y1 - y0) * PANEL_HEIGHT
        };

        let _ = writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{y_top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{LEFT}" y="{}" font-size="13">{}</text>"#,
            y_top - 6.0,
            escape(panel.title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{0}" transform="rotate(-90 18 {0})" text-anchor="middle">{1}</text>"#,
            y_top + PANEL_HEIGHT / 2.0,
            escape(panel.y_label)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let v = y0 + f * (y1 - y0);
            let y = y_bottom - f * PANEL_HEIGHT;
            let label = if panel.log_y {
                format!("1e{v:.1}")
            } else {
                format!("{v:.4}")
            };
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                y + 4.0
            );
            let t = t0 + f * (t1 - t0);
            let x = tx(t);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t:.1}</text>"#,
                y_bottom + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">time [s]</text>"#,
            LEFT + plot_w / 2.0,
            y_bottom + 32.0
        );

        for (t, label) in markers {
            let x = tx(*t);
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" x2="{x:.2}" y1="{y_top}" y2="{y_bottom}" stroke="#999" stroke-dasharray="2,3"><title>{}</title></line>"##,
                escape(label)
            );
        }

        let drawn = panel
            .series
            .iter()
            .filter(|s| s.points.iter().any(|(_, v)| v.is_some()));
        for (k, s) in drawn.enumerate() {
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let mut segment: Vec<String> = Vec::new();
            let flush = |segment: &mut Vec<String>, svg: &mut String| {
                match segment.len() {
                    0 => {}
                    1 => {
                        let (x, y) = segment[0].split_once(',').unwrap();
                        let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="2" fill="{}"/>"#, s.color);
                    }
                    _ => {
                        let _ = writeln!(
                            svg,
                            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                            s.color,
                            segment.join(" ")
                        );
                    }
                }
                segment.clear();
            };
            for &(t, v) in &s.points {
                match v {
                    Some(v) if !v.is_nan() => segment.push(format!("{:.2},{:.2}", tx(t), ty(v))),
                    _ => flush(&mut segment, &mut svg),
                }
            }
            flush(&mut segment, &mut svg);
            let ly = y_top + 14.0 + 16.0 * k as f64;
            let lx = LEFT + plot_w + 12.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#,
                lx + 22.0,
                s.color
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 28.0,
                ly + 4.0,
                escape(s.name)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn series(
    trace: &Trace,
    name: &'static str,
    color: &'static str,
    dashed: bool,
    f: impl Fn(&super::TraceRecord) -> Option<f64>,
) -> Series {
    Series {
        name,
        color,
        dashed,
        points: trace.records.iter().map(|r| (r.time, f(r))).collect(),
    }
}

/// Writes `cost.svg`, `dof.svg` and `intrinsics.svg` into `out_dir` and
/// returns their paths. Sequence switches are marked on every chart.
pub fn render_plots(trace: &Trace, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    if trace.records.is_empty() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "cannot plot an empty trace",
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let first = trace.records[0].time;
    let last = trace.records[trace.records.len() - 1].time;
    let markers: Vec<(f64, String)> = trace
        .records
        .windows(2)
        .filter(|w| w[0].sequence != w[1].sequence)
        .map(|w| (w[1].time, format!("sequence {} starts", w[1].sequence)))
        .collect();

    let cost = Panel {
        title: "cost of the current state",
        y_label: "cost (log scale)",
        log_y: true,
        y_cap: None,
        series: vec![
            series(trace, "total", "#000000", false, |r| Some(r.cost.total)),
            series(trace, "depth of field", "#1f77b4", false, |r| Some(r.cost.j_dof)),
            series(trace, "image", "#2ca02c", false, |r| Some(r.cost.j_im)),
            series(trace, "shot", "#d62728", false, |r| Some(r.cost.j_p)),
        ],
    };

    // keep an unbounded or very distant far limit from flattening the rest
    let scale = trace
        .records
        .iter()
        .flat_map(|r| {
            [
                Some(r.dof.near),
                Some(r.camera.focus_distance),
                r.desired_near,
                r.desired_far,
            ]
        })
        .flatten()
        .fold(0.0_f64, f64::max);
    let dof = Panel {
        title: "depth of field",
        y_label: "distance [m]",
        log_y: false,
        y_cap: Some(2.0 * scale.max(1.0)),
        series: vec![
            series(trace, "near", "#1f77b4", false, |r| Some(r.dof.near)),
            series(trace, "far", "#d62728", false, |r| Some(r.dof.far.value())),
            series(trace, "desired near", "#1f77b4", true, |r| r.desired_near),
            series(trace, "desired far", "#d62728", true, |r| r.desired_far),
            series(trace, "focus", "#7f7f7f", false, |r| Some(r.camera.focus_distance)),
        ],
    };

    let intrinsics = [
        Panel {
            title: "focal length",
            y_label: "f [mm]",
            log_y: false,
            y_cap: None,
            series: vec![series(trace, "focal length", "#1f77b4", false, |r| {
                Some(r.camera.focal_length * 1e3)
            })],
        },
        Panel {
            title: "focus distance",
            y_label: "F [m]",
            log_y: false,
            y_cap: None,
            series: vec![series(trace, "focus distance", "#2ca02c", false, |r| {
                Some(r.camera.focus_distance)
            })],
        },
        Panel {
            title: "aperture",
            y_label: "A [f-stop]",
            log_y: false,
            y_cap: None,
            series: vec![series(trace, "aperture", "#d62728", false, |r| Some(r.camera.aperture))],
        },
    ];

    let files = [
        (
            "cost.svg",
            render("Evolution of the cost", (first, last), &markers, &[cost]),
        ),
        (
            "dof.svg",
            render("Evolution of the depth of field", (first, last), &markers, &[dof]),
        ),
        (
            "intrinsics.svg",
            render("Evolution of the intrinsics", (first, last), &markers, &intrinsics),
        ),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}
