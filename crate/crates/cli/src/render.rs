//! Static SVG snapshots of traced flock states.
//!
//! Each bird is a filled circle with its wing drawn as two half segments,
//! a velocity arrow and the dotted outline of its view cone. An optional
//! heat grid shows the raw upwash field (light) and downwash (dark).

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use vform_core::fitness::{upwash_at, FitnessParams};
use vform_core::flock::FlockState;
use vform_core::trace::StepRecord;
use vform_core::Vec2;

/// Pixels per world unit.
const SCALE: f64 = 60.0;
const MARGIN: f64 = 1.5;
const CONE_LENGTH: f64 = 1.5;
const BODY_RADIUS: f64 = 0.12;
const GRID_CELL: f64 = 0.2;

#[derive(Debug, Clone, Default)]
pub struct RenderOptions {
    pub upwash_grid: bool,
}

/// Parses a JSONL trace (one step record per non-empty line).
pub fn read_trace(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("trace line {}", n + 1)))
        .collect()
}

/// Looks up step `t`, reporting the available range if it is missing.
pub fn find_step(trace: &[StepRecord], t: usize) -> Result<&StepRecord> {
    if let Some(r) = trace.iter().find(|r| r.t == t) {
        return Ok(r);
    }
    match (trace.iter().map(|r| r.t).min(), trace.iter().map(|r| r.t).max()) {
        (Some(lo), Some(hi)) => bail!("step {t} not in trace; available steps are {lo}..={hi}"),
        _ => bail!("step {t} not in trace; the trace is empty"),
    }
}

struct Frame {
    min: Vec2,
    max: Vec2,
}

impl Frame {
    fn of(state: &FlockState) -> Frame {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &state.positions {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        if state.positions.is_empty() {
            min = Vec2::ZERO;
            max = Vec2::ZERO;
        }
        let pad = Vec2::new(MARGIN + CONE_LENGTH, MARGIN + CONE_LENGTH);
        Frame { min: min - pad, max: max + pad }
    }

    fn width(&self) -> f64 {
        (self.max.x - self.min.x) * SCALE
    }

    fn height(&self) -> f64 {
        (self.max.y - self.min.y) * SCALE
    }

    /// World to pixel coordinates; y grows downwards in SVG.
    fn px(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.min.x) * SCALE, (self.max.y - p.y) * SCALE)
    }
}

fn heat_color(u: f64) -> Option<String> {
    let a = u.abs().min(1.0);
    if a < 0.02 {
        return None;
    }
    let rgb = if u > 0.0 { "255,214,102" } else { "40,60,120" };
    Some(format!("rgba({rgb},{a:.3})"))
}

/// Renders `record` as a standalone SVG document.
pub fn render_svg(record: &StepRecord, params: &FitnessParams, options: &RenderOptions) -> Result<String> {
    let state = FlockState::new(record.positions.clone(), record.velocities.clone())?;
    let frame = Frame::of(&state);
    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#,
        w = frame.width(),
        h = frame.height()
    )?;
    writeln!(
        s,
        r#"<defs><marker id="arrowhead" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto"><path d="M0,0 L8,4 L0,8 z" fill="black"/></marker></defs>"#
    )?;
    writeln!(s, r#"<rect class="background" x="0" y="0" width="100%" height="100%" fill="white"/>"#)?;

    if options.upwash_grid {
        writeln!(s, r#"<g class="upwash-grid">"#)?;
        let cols = ((frame.max.x - frame.min.x) / GRID_CELL).ceil() as usize;
        let rows = ((frame.max.y - frame.min.y) / GRID_CELL).ceil() as usize;
        for row in 0..rows {
            for col in 0..cols {
                let corner = Vec2::new(frame.min.x + col as f64 * GRID_CELL, frame.max.y - row as f64 * GRID_CELL);
                let center = corner + Vec2::new(0.5 * GRID_CELL, -0.5 * GRID_CELL);
                if let Some(fill) = heat_color(upwash_at(&state, params, center, None)) {
                    let (x, y) = frame.px(corner);
                    let side = GRID_CELL * SCALE;
                    writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="{fill}"/>"#
                    )?;
                }
            }
        }
        writeln!(s, "</g>")?;
    }

    let half_cone = 0.5 * params.view_cone_angle;
    for (i, (&p, &v)) in state.positions.iter().zip(&state.velocities).enumerate() {
        let heading = v.normalized_or(Vec2::new(1.0, 0.0));
        let (cx, cy) = frame.px(p);
        writeln!(s, r#"<g class="bird" id="bird-{}">"#, i + 1)?;

        let left = frame.px(p + heading.rotate(half_cone) * CONE_LENGTH);
        let right = frame.px(p + heading.rotate(-half_cone) * CONE_LENGTH);
        let radius = CONE_LENGTH * SCALE;
        let large_arc = u8::from(params.view_cone_angle > std::f64::consts::PI);
        writeln!(
            s,
            r#"<path class="cone" d="M{cx:.2},{cy:.2} L{:.2},{:.2} A{radius:.2},{radius:.2} 0 {large_arc} 1 {:.2},{:.2} Z" fill="none" stroke="gray" stroke-dasharray="2,3"/>"#,
            left.0, left.1, right.0, right.1
        )?;

        let half_wing = heading.perp() * (0.5 * params.wing_span);
        for tip in [p + half_wing, p - half_wing] {
            let (tx, ty) = frame.px(tip);
            writeln!(
                s,
                r#"<line class="wing" x1="{cx:.2}" y1="{cy:.2}" x2="{tx:.2}" y2="{ty:.2}" stroke="black" stroke-width="2"/>"#
            )?;
        }

        writeln!(
            s,
            r#"<circle class="body" cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="red"/>"#,
            BODY_RADIUS * SCALE
        )?;

        let (ax, ay) = frame.px(p + v);
        writeln!(
            s,
            r#"<line class="velocity" x1="{cx:.2}" y1="{cy:.2}" x2="{ax:.2}" y2="{ay:.2}" stroke="black" marker-end="url(#arrowhead)"/>"#
        )?;
        writeln!(s, "</g>")?;
    }

    writeln!(
        s,
        r#"<text x="8" y="18" font-family="monospace" font-size="14">t = {}  J = {:.6}</text>"#,
        record.t, record.j
    )?;
    writeln!(s, "</svg>")?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(positions: Vec<Vec2>, velocities: Vec<Vec2>) -> StepRecord {
        StepRecord {
            t: 0,
            positions,
            velocities,
            action: None,
            disturbance: None,
            j: 0.0,
            cv: 0.0,
            vm: 0.0,
            ub: 1.0,
            controller_h: None,
            h_tried: None,
            level: None,
            delta: None,
            improved: None,
        }
    }

    #[test]
    fn single_bird_glyph_counts() {
        let svg = render_svg(
            &record(vec![Vec2::ZERO], vec![Vec2::new(1.0, 0.0)]),
            &FitnessParams::default(),
            &RenderOptions::default(),
        )
        .unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches(r#"class="wing""#).count(), 2);
        assert_eq!(svg.matches(r#"class="velocity""#).count(), 1);
        assert_eq!(svg.matches(r#"class="cone""#).count(), 1);
    }

    #[test]
    fn missing_step_lists_range() {
        let trace = vec![record(vec![Vec2::ZERO], vec![Vec2::new(1.0, 0.0)])];
        let err = find_step(&trace, 3).unwrap_err().to_string();
        assert!(err.contains("0..=0"), "{err}");
    }

    #[test]
    fn zero_velocity_bird_faces_default_axis() {
        let svg = render_svg(&record(vec![Vec2::ZERO], vec![Vec2::ZERO]), &FitnessParams::default(), &RenderOptions::default());
        assert!(svg.is_ok());
    }
}
