//! Static SVG rendering of rollouts, Lyapunov traces and learning curves.
//! Output depends only on the inputs, so equal inputs give equal bytes.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::sim::{Environment, Robot, Trajectory};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug)]
struct Frame {
    x: [f64; 2],
    y: [f64; 2],
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>, equal_aspect: bool) -> Result<Frame> {
        let mut x = [f64::INFINITY, f64::NEG_INFINITY];
        let mut y = x;
        for p in points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                continue;
            }
            x = [x[0].min(p[0]), x[1].max(p[0])];
            y = [y[0].min(p[1]), y[1].max(p[1])];
        }
        if x[0] > x[1] {
            return Err(Error::Config("nothing to plot".into()));
        }
        let pad = |r: [f64; 2]| {
            let span = (r[1] - r[0]).max(1e-9);
            [r[0] - 0.05 * span, r[1] + 0.05 * span]
        };
        let (mut x, mut y) = (pad(x), pad(y));
        if equal_aspect {
            let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
            let scale = ((x[1] - x[0]) / pw).max((y[1] - y[0]) / ph);
            let (cx, cy) = ((x[0] + x[1]) / 2.0, (y[0] + y[1]) / 2.0);
            x = [cx - scale * pw / 2.0, cx + scale * pw / 2.0];
            y = [cy - scale * ph / 2.0, cy + scale * ph / 2.0];
        }
        Ok(Frame { x, y })
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (p[0] - self.x[0]) / (self.x[1] - self.x[0]);
        let sy = (p[1] - self.y[0]) / (self.y[1] - self.y[0]);
        (MARGIN + sx * (WIDTH - 2.0 * MARGIN), HEIGHT - MARGIN - sy * (HEIGHT - 2.0 * MARGIN))
    }

    fn scale(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / (self.x[1] - self.x[0])
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (x1, y1) = (WIDTH - MARGIN, MARGIN);
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
        x1 - x0,
        y0 - y1
    );
    for (v, anchor, x, y) in [
        (f.x[0], "start", x0, y0 + 14.0),
        (f.x[1], "end", x1, y0 + 14.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    for (v, y) in [(f.y[0], y0), (f.y[1], y1 + 10.0)] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, tick(v));
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(out: &mut String, f: &Frame, pts: &[[f64; 2]], color: &str) {
    let mut d = String::new();
    for p in pts.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
        let (x, y) = f.px(*p);
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
        d.trim_end()
    );
}

/// The workspace path of one trajectory: the point itself for a point robot,
/// the end effector for an arm, the first two coordinates otherwise.
fn workspace_path(traj: &Trajectory, robot: Option<&Robot>) -> Vec<[f64; 2]> {
    traj.samples
        .iter()
        .map(|s| match robot {
            Some(r) if r.dim() == s.q.len() => r.task_point(&s.q),
            _ => [s.q[0], s.q.get(1).copied().unwrap_or(0.0)],
        })
        .collect()
}

/// Paths over the environment, with start markers, obstacles and the goal.
pub fn overlay_svg(trajs: &[Trajectory], env: Option<&Environment>) -> Result<String> {
    if trajs.iter().any(|t| t.samples.is_empty()) || trajs.is_empty() {
        return Err(Error::Config("cannot plot an empty trajectory".into()));
    }
    let robot = env.map(|e| &e.robot);
    let paths: Vec<Vec<[f64; 2]>> = trajs.iter().map(|t| workspace_path(t, robot)).collect();
    let mut extent: Vec<[f64; 2]> = paths.iter().flatten().copied().collect();
    if let Some(e) = env {
        extent.push(e.goal);
        for o in &e.obstacles {
            extent.push([o.center[0] - o.radius, o.center[1] - o.radius]);
            extent.push([o.center[0] + o.radius, o.center[1] + o.radius]);
        }
        if matches!(e.robot, Robot::PlanarArm { .. }) {
            extent.push([0.0, 0.0]);
        }
    }
    let f = Frame::fit(extent.into_iter(), true)?;
    let mut out = String::new();
    header(&mut out, "rollouts");
    axes(&mut out, &f, "x", "y");
    if let Some(e) = env {
        for o in &e.obstacles {
            let (x, y) = f.px(o.center);
            let _ = writeln!(
                out,
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="#bbbbbb" stroke="#555"/>"##,
                o.radius * f.scale()
            );
        }
        if let Robot::PlanarArm { .. } = e.robot {
            let q0 = &trajs[0].samples[0].q;
            let body: Vec<[f64; 2]> = e.robot.body_points(q0);
            polyline(&mut out, &f, &body, "#888888");
        }
        let (x, y) = f.px(e.goal);
        let _ = writeln!(
            out,
            r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#2ca02c" stroke-width="2.5"/>"##,
            x - 6.0,
            y - 6.0,
            x + 6.0,
            y + 6.0,
            x - 6.0,
            y + 6.0,
            x + 6.0,
            y - 6.0
        );
    }
    for (i, p) in paths.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        polyline(&mut out, &f, p, color);
        let (x, y) = f.px(p[0]);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Line plot of several `(x, y)` series.
pub fn series_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Vec<[f64; 2]>], log_y: bool) -> Result<String> {
    if series.iter().all(|s| s.is_empty()) {
        return Err(Error::Config(format!("no data for `{title}`")));
    }
    let tr = |p: [f64; 2]| if log_y { [p[0], p[1].max(1e-300).log10()] } else { p };
    let data: Vec<Vec<[f64; 2]>> = series.iter().map(|s| s.iter().map(|p| tr(*p)).collect()).collect();
    let f = Frame::fit(data.iter().flatten().copied(), false)?;
    let mut out = String::new();
    header(&mut out, title);
    let ylabel = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    axes(&mut out, &f, xlabel, &ylabel);
    for (i, s) in data.iter().enumerate() {
        polyline(&mut out, &f, s, COLORS[i % COLORS.len()]);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Lyapunov value against time for every trajectory that records it.
pub fn lyapunov_svg(trajs: &[Trajectory]) -> Result<String> {
    let series: Vec<Vec<[f64; 2]>> = trajs
        .iter()
        .map(|t| t.samples.iter().filter_map(|s| s.v.map(|v| [s.t, v])).collect())
        .collect();
    series_svg("Lyapunov value", "t [s]", "V", &series, false)
}

/// Minibatch loss against iteration.
pub fn curve_svg(curve: &[(usize, f64)]) -> Result<String> {
    let s: Vec<[f64; 2]> = curve.iter().map(|(i, l)| [*i as f64, *l]).collect();
    series_svg("training loss", "iteration", "loss", &[s], true)
}
