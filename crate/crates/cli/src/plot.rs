//! Minimal SVG line charts: stacked panels, nice ticks, dashed bound lines.

use std::fmt::Write;

use panmpc::sim::{obstacle_position, Scenario, SimLog};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 760.0;
const PANEL_HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 46.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines, drawn dashed.
    pub levels: Vec<(f64, String)>,
}

/// Roughly five round tick values covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn bounds(panel: &Panel) -> ((f64, f64), (f64, f64)) {
    let pts = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    for (level, _) in &panel.levels {
        y0 = y0.min(*level);
        y1 = y1.max(*level);
    }
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    ((x0, x1), (y0 - pad, y1 + pad))
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn draw_panel(svg: &mut String, panel: &Panel, top: f64) {
    let ((x0, x1), (y0, y1)) = bounds(panel);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="15" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        top + 20.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{:.1}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="#333"/>"##,
        top + MARGIN_TOP
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let y = top + MARGIN_TOP + plot_h;
        let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{y:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/>"##, y + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#, y + 18.0, fmt_tick(t));
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(svg, r##"<line x1="{:.1}" y1="{y:.1}" x2="{MARGIN_LEFT}" y2="{y:.1}" stroke="#333"/>"##, MARGIN_LEFT - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#, MARGIN_LEFT - 8.0, y + 4.0, fmt_tick(t));
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        top + PANEL_HEIGHT - 8.0,
        escape(&panel.x_label)
    );
    let cy = top + MARGIN_TOP + plot_h / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{cy:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {cy:.1})">{}</text>"#,
        escape(&panel.y_label)
    );

    for (level, label) in &panel.levels {
        let y = sy(*level);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#555" stroke-dasharray="6 4"/>"##,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(svg, r##"<text x="{:.1}" y="{:.1}" font-size="11" fill="#555">{}</text>"##, MARGIN_LEFT + plot_w + 4.0, y + 4.0, escape(label));
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{}"/>"#, pts.join(" "));
        let ly = top + MARGIN_TOP + 14.0 + 16.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w + 10.0;
        let _ = writeln!(svg, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#, lx + 22.0, ly + 4.0, escape(&s.label));
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    svg.push('\n');
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    svg.push('\n');
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, PANEL_HEIGHT * i as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Isometric projection of a world point onto the page.
fn isometric(p: &panmpc::quat::Vec3) -> (f64, f64) {
    let c = 30f64.to_radians();
    ((p.x - p.y) * c.cos(), p.z + (p.x + p.y) * c.sin())
}

/// Vehicle, target and obstacle paths in an isometric view.
pub fn path_figure(scenario: &Scenario, log: &SimLog) -> String {
    let mut series = vec![
        Series {
            label: "vehicle".into(),
            points: log.plant.iter().map(|r| isometric(&r.state.p)).collect(),
        },
        Series {
            label: "target".into(),
            points: log.control.iter().map(|r| isometric(&r.target)).collect(),
        },
    ];
    for (j, obs) in scenario.obstacles.iter().enumerate() {
        series.push(Series {
            label: format!("obstacle {}", j + 1),
            points: log.control.iter().map(|r| isometric(&obstacle_position(obs, r.t))).collect(),
        });
    }
    render(&[Panel {
        title: "Paths (isometric view)".into(),
        x_label: "(x - y) cos 30° [m]".into(),
        y_label: "z + (x + y) sin 30° [m]".into(),
        series,
        levels: vec![],
    }])
}

/// Rotor speeds and rates with their bounds.
pub fn rotor_figure(scenario: &Scenario, log: &SimLog) -> String {
    let p = scenario.ocp.model.params();
    let n = scenario.ocp.rotor_count();
    let speeds = (0..n)
        .map(|i| Series {
            label: format!("rotor {}", i + 1),
            points: log.plant.iter().map(|r| (r.t, r.state.speeds[i])).collect(),
        })
        .collect();
    let rates = (0..n)
        .map(|i| Series {
            label: format!("rotor {}", i + 1),
            points: log.control.iter().map(|r| (r.t, r.rate.0[i])).collect(),
        })
        .collect();
    render(&[
        Panel {
            title: "Propeller speeds".into(),
            x_label: "t [s]".into(),
            y_label: "speed [Hz]".into(),
            series: speeds,
            levels: vec![(p.speed_min[0], "min".into()), (p.speed_max[0], "max".into())],
        },
        Panel {
            title: "Propeller speed rates".into(),
            x_label: "t [s]".into(),
            y_label: "rate [Hz/s]".into(),
            series: rates,
            levels: vec![(p.accel_min[0], "min".into()), (p.accel_max[0], "max".into())],
        },
    ])
}

/// Distances to the target and each obstacle, with the standoff and the
/// safety radius.
pub fn distance_figure(scenario: &Scenario, log: &SimLog) -> String {
    let mut series = vec![Series {
        label: "target".into(),
        points: log.control.iter().map(|r| (r.t, r.target_distance)).collect(),
    }];
    for j in 0..scenario.obstacles.len() {
        series.push(Series {
            label: format!("obstacle {}", j + 1),
            points: log.control.iter().map(|r| (r.t, r.obstacle_distances[j])).collect(),
        });
    }
    let mut levels = vec![(scenario.ocp.standoff, "standoff".to_string())];
    if let Some(r) = scenario.obstacles.first().map(|o| o.safety_radius) {
        if r != scenario.ocp.standoff {
            levels.push((r, "safety".into()));
        }
    }
    render(&[Panel {
        title: "Distances from the vehicle".into(),
        x_label: "t [s]".into(),
        y_label: "distance [m]".into(),
        series,
        levels,
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = ticks(-110.0, 200.0);
        assert!(t.iter().all(|v| (-110.0..=200.0).contains(v)));
        assert!(t.contains(&0.0) && t.len() >= 3);
        assert_eq!(ticks(3.0, 3.0), vec![3.0]);
    }

    #[test]
    fn render_is_well_formed() {
        let svg = render(&[Panel {
            title: "a < b".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
            }],
            levels: vec![(2.0, "lvl".into())],
            ..Default::default()
        }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("stroke-dasharray"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
