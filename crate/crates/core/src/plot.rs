//! SVG rendering of one forecast: observed track in dark blue, ground truth
//! in red, candidates as light blue dashed lines, targets as stars.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Point;
use crate::error::{Error, Result};
use crate::eval::PredRecord;

pub const PAST_STYLE: &str = "fill:none;stroke:#1a237e;stroke-width:2.5";
pub const GT_STYLE: &str = "fill:none;stroke:#d32f2f;stroke-width:2.5";
pub const PRED_STYLE: &str = "fill:none;stroke:#64b5f6;stroke-width:1.2;stroke-dasharray:4 3";
pub const TARGET_STYLE: &str = "fill:#ffb300;stroke:#5d4037;stroke-width:0.6";

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;

struct Frame {
    min: Point,
    scale: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a Point>) -> Frame {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if !lo[0].is_finite() {
            return Frame { min: [0.0, 0.0], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
        Frame {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    /// SVG coordinates, y pointing up.
    fn map(&self, p: Point) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[Point], class: &str, style: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"  <polyline class="{class}" style="{style}" points="{}"/>"#,
        coords.join(" ")
    );
}

fn star(out: &mut String, frame: &Frame, p: Point) {
    let (cx, cy) = frame.map(p);
    let pts: Vec<String> = (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { 6.0 } else { 2.6 };
            let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let _ = writeln!(
        out,
        r#"  <polygon class="target" style="{TARGET_STYLE}" points="{}"/>"#,
        pts.join(" ")
    );
}

/// One polyline each for the observed track and the ground truth, one per
/// candidate, and a star per target.
pub fn render_svg(rec: &PredRecord) -> String {
    let all = rec
        .observed
        .iter()
        .chain(&rec.future)
        .chain(rec.candidates.iter().flatten())
        .chain(&rec.targets);
    let frame = Frame::fit(all);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        out,
        "  <title>{} agent {}</title>",
        escape(&rec.scene_id),
        rec.agent_id
    );
    let _ = writeln!(out, r##"  <rect width="100%" height="100%" fill="#ffffff"/>"##);
    for c in &rec.candidates {
        // Candidates continue from the last observed point.
        let mut pts = Vec::with_capacity(c.len() + 1);
        pts.extend(rec.observed.last().copied());
        pts.extend_from_slice(c);
        polyline(&mut out, &frame, &pts, "pred", PRED_STYLE);
    }
    let mut gt = Vec::with_capacity(rec.future.len() + 1);
    gt.extend(rec.observed.last().copied());
    gt.extend_from_slice(&rec.future);
    polyline(&mut out, &frame, &gt, "gt", GT_STYLE);
    polyline(&mut out, &frame, &rec.observed, "past", PAST_STYLE);
    for &t in &rec.targets {
        star(&mut out, &frame, t);
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_plot(rec: &PredRecord, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(rec)).map_err(|e| Error::io(path, e))
}
