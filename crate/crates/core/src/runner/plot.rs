//! SVG line charts of stance trajectories, written directly as text.
//!
//! Every chart uses an 800×500 viewBox. The plot area spans
//! `x ∈ [60, 780]` and `y ∈ [20, 460]`, and data map onto it affinely:
//!
//! ```text
//! x = 60 + 720 · (step − step_min) / (step_max − step_min)
//! y = 460 − 440 · value
//! ```
//!
//! A trajectory with a single step is drawn at the horizontal centre. All
//! coordinates are printed with two decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::stance::Stance;

pub const VIEW_WIDTH: f64 = 800.0;
pub const VIEW_HEIGHT: f64 = 500.0;
pub const PLOT_LEFT: f64 = 60.0;
pub const PLOT_RIGHT: f64 = 780.0;
pub const PLOT_TOP: f64 = 20.0;
pub const PLOT_BOTTOM: f64 = 460.0;

pub const TRAJECTORY_HEADER: [&str; 7] = ["phase", "step", "topic", "stance", "value", "ci_lo", "ci_hi"];

const COLORS: [&str; 3] = ["#2b8a3e", "#868e96", "#c92a2a"];

/// Pixel x of `step` on a step axis spanning `[min, max]`.
pub fn x_of(step: usize, min: usize, max: usize) -> f64 {
    if max == min {
        return (PLOT_LEFT + PLOT_RIGHT) / 2.0;
    }
    PLOT_LEFT + (PLOT_RIGHT - PLOT_LEFT) * (step - min) as f64 / (max - min) as f64
}

/// Pixel y of a probability.
pub fn y_of(value: f64) -> f64 {
    PLOT_BOTTOM - (PLOT_BOTTOM - PLOT_TOP) * value
}

/// One parsed row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub phase: String,
    pub step: usize,
    pub topic: String,
    pub stance: Stance,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Parses trajectory CSV text; errors name the 1-based file line at fault.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Csv {
        row: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(Error::Csv {
            row: 1,
            message: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Csv { row, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| bad(format!("{} is not a number: {:?}", TRAJECTORY_HEADER[i], field(i))))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("{} is not finite", TRAJECTORY_HEADER[i])))
            }
        };
        if field(0).is_empty() || field(2).is_empty() {
            return Err(bad("phase and topic must be non-empty".into()));
        }
        let value = number(4)?;
        if !(0.0..=1.0).contains(&value) {
            return Err(bad(format!("value {value} outside [0, 1]")));
        }
        rows.push(TrajectoryRow {
            phase: field(0).to_string(),
            step: field(1)
                .parse()
                .map_err(|_| bad(format!("step is not a nonnegative integer: {:?}", field(1))))?,
            topic: field(2).to_string(),
            stance: Stance::parse(field(3)).map_err(|e| bad(e.to_string()))?,
            value,
            ci_lo: number(5)?,
            ci_hi: number(6)?,
        });
    }
    Ok(rows)
}

/// Lowercase ASCII slug used for chart file names.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("topic");
    }
    out
}

type Series = [BTreeMap<usize, (f64, f64, f64)>; 3];

/// Writes one chart per (phase, topic) under `out_dir/<phase>/<topic-slug>.svg`
/// and returns the paths in order of first appearance.
pub fn emit_plots(trajectory_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(trajectory_csv).map_err(|e| Error::io(trajectory_csv, e))?;
    let rows = parse_trajectory_csv(&text)?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Series> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let key = (r.phase.clone(), r.topic.clone());
        let series = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Default::default()
        });
        if series[r.stance.index()]
            .insert(r.step, (r.value, r.ci_lo, r.ci_hi))
            .is_some()
        {
            return Err(Error::Csv {
                row: i + 2,
                message: format!("duplicate point for {} / {} / {} at step {}", r.phase, r.topic, r.stance, r.step),
            });
        }
    }

    let mut written = Vec::new();
    let mut taken: BTreeMap<PathBuf, usize> = BTreeMap::new();
    for key in &order {
        let (phase, topic) = key;
        let dir = out_dir.join(slug(phase));
        let base = slug(topic);
        let n = taken.entry(dir.join(&base)).or_insert(0);
        *n += 1;
        let name = if *n == 1 { base } else { format!("{base}-{n}") };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{name}.svg"));
        let svg = render_svg(phase, topic, &groups[key]);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn render_svg(phase: &str, topic: &str, series: &Series) -> String {
    let steps = series.iter().flat_map(|s| s.keys().copied());
    let min = steps.clone().min().unwrap_or(0);
    let max = steps.max().unwrap_or(0);
    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW_WIDTH} {VIEW_HEIGHT}" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(w, "<title>{} | {}</title>", escape(phase), escape(topic));
    let _ = writeln!(w, r##"<rect x="0" y="0" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        w,
        r#"<text x="{PLOT_LEFT}" y="14" font-size="12">{} | {}</text>"#,
        escape(phase),
        escape(topic)
    );

    let _ = writeln!(w, r##"<g class="axes" stroke="#495057" stroke-width="1">"##);
    let _ = writeln!(w, r#"<line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}"/>"#);
    let _ = writeln!(w, r#"<line x1="{PLOT_LEFT}" y1="{PLOT_TOP}" x2="{PLOT_LEFT}" y2="{PLOT_BOTTOM}"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(w, r#"<line x1="{:.2}" y1="{y:.2}" x2="{PLOT_LEFT}" y2="{y:.2}"/>"#, PLOT_LEFT - 5.0);
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r##"<g class="labels" font-size="11" fill="#212529">"##);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.2}</text>"#,
            PLOT_LEFT - 8.0,
            y_of(tick) + 4.0
        );
    }
    let _ = writeln!(w, r#"<text x="{PLOT_LEFT}" y="478" text-anchor="middle">{min}</text>"#);
    if max != min {
        let _ = writeln!(w, r#"<text x="{PLOT_RIGHT}" y="478" text-anchor="middle">{max}</text>"#);
    }
    let _ = writeln!(w, r#"<text x="420" y="494" text-anchor="middle">training step</text>"#);
    let _ = writeln!(w, "</g>");

    for stance in Stance::ALL {
        let s = &series[stance.index()];
        if s.is_empty() {
            continue;
        }
        let color = COLORS[stance.index()];
        let upper = s.iter().map(|(&step, &(_, _, hi))| (step, hi.clamp(0.0, 1.0)));
        let lower = s.iter().rev().map(|(&step, &(_, lo, _))| (step, lo.clamp(0.0, 1.0)));
        let band = points(upper.chain(lower), min, max);
        let _ = writeln!(
            w,
            r#"<polygon class="ci" data-stance="{stance}" fill="{color}" fill-opacity="0.15" stroke="none" points="{band}"/>"#
        );
    }
    for stance in Stance::ALL {
        let s = &series[stance.index()];
        if s.is_empty() {
            continue;
        }
        let color = COLORS[stance.index()];
        let line = points(s.iter().map(|(&step, &(v, _, _))| (step, v)), min, max);
        let _ = writeln!(
            w,
            r#"<polyline class="series" data-stance="{stance}" fill="none" stroke="{color}" stroke-width="2" points="{line}"/>"#
        );
    }

    let _ = writeln!(w, r#"<g class="legend" font-size="11">"#);
    for (i, stance) in Stance::ALL.iter().enumerate() {
        let x = 620.0 + 55.0 * i as f64;
        let color = COLORS[i];
        let _ = writeln!(
            w,
            r#"<rect x="{x:.2}" y="6" width="10" height="10" fill="{color}"/><text x="{:.2}" y="15">{stance}</text>"#,
            x + 13.0
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    svg
}

fn points(pts: impl Iterator<Item = (usize, f64)>, min: usize, max: usize) -> String {
    let mut out = String::new();
    for (i, (step, v)) in pts.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", x_of(step, min, max), y_of(v));
    }
    out
}
