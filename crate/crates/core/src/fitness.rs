//! Clear view, velocity matching and upwash benefit, combined into the
//! sum-of-squares cost `J = CV^2 + VM^2 + (UB - 1)^2`.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flock::FlockState;
use crate::vec2::Vec2;

/// Heading used for birds with zero velocity.
pub const REFERENCE_HEADING: Vec2 = Vec2::new(1.0, 0.0);

pub const CV_TARGET: f64 = 0.0;
pub const VM_TARGET: f64 = 0.0;
pub const UB_TARGET: f64 = 1.0;

/// Shape of the view cone and of the upwash/downwash field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessParams {
    /// Full opening angle of each bird's view cone, in radians.
    pub view_cone_angle: f64,
    pub wing_span: f64,
    /// Distance behind a bird at which both lobes peak.
    pub upwash_peak_long: f64,
    pub upwash_sigma_lat: f64,
    pub upwash_sigma_long: f64,
    pub downwash_sigma_lat: f64,
    pub downwash_sigma_long: f64,
    pub view_ray_count: usize,
}

impl Default for FitnessParams {
    fn default() -> Self {
        FitnessParams {
            view_cone_angle: FRAC_PI_4,
            wing_span: 1.0,
            upwash_peak_long: 1.0,
            upwash_sigma_lat: 0.3,
            upwash_sigma_long: 0.5,
            downwash_sigma_lat: 0.3,
            downwash_sigma_long: 0.5,
            view_ray_count: 64,
        }
    }
}

impl FitnessParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wing_span", self.wing_span),
            ("upwash_peak_long", self.upwash_peak_long),
            ("upwash_sigma_lat", self.upwash_sigma_lat),
            ("upwash_sigma_long", self.upwash_sigma_long),
            ("downwash_sigma_lat", self.downwash_sigma_lat),
            ("downwash_sigma_long", self.downwash_sigma_long),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.view_cone_angle > 0.0 && self.view_cone_angle < TAU) {
            return Err(Error::invalid(format!(
                "view_cone_angle must lie in (0, 2*pi), got {}",
                self.view_cone_angle
            )));
        }
        if self.view_ray_count < 16 {
            return Err(Error::invalid(format!(
                "view_ray_count must be at least 16, got {}",
                self.view_ray_count
            )));
        }
        Ok(())
    }

    /// Direction of ray `k` relative to the cone axis.
    pub fn ray_angle(&self, k: usize) -> f64 {
        let step = self.view_cone_angle / self.view_ray_count as f64;
        -0.5 * self.view_cone_angle + (k as f64 + 0.5) * step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessBreakdown {
    pub cv: f64,
    pub vm: f64,
    pub ub: f64,
    pub j: f64,
}

fn heading(v: Vec2) -> Vec2 {
    v.normalized_or(REFERENCE_HEADING)
}

/// Endpoints of bird `j`'s wing: a segment of length `span` centred on the
/// bird and perpendicular to its heading.
pub fn wing_segment(position: Vec2, velocity: Vec2, span: f64) -> (Vec2, Vec2) {
    let half = heading(velocity).perp() * (0.5 * span);
    (position + half, position - half)
}

/// Sum over birds of the fraction of view-cone rays blocked by other wings.
pub fn clear_view(state: &FlockState, params: &FitnessParams) -> f64 {
    let mut mask = Vec::with_capacity(params.view_ray_count);
    (0..state.bird_count())
        .map(|i| blocked_fraction_with(state, params, i, &mut mask))
        .sum()
}

/// Fraction of bird `i`'s view rays that hit another bird's wing.
pub fn blocked_fraction(state: &FlockState, params: &FitnessParams, bird: usize) -> f64 {
    blocked_fraction_with(state, params, bird, &mut Vec::new())
}

fn blocked_fraction_with(
    state: &FlockState,
    params: &FitnessParams,
    bird: usize,
    mask: &mut Vec<bool>,
) -> f64 {
    let n = params.view_ray_count;
    mask.clear();
    mask.resize(n, false);
    let apex = state.positions[bird];
    let axis = heading(state.velocities[bird]);
    let half_cone = 0.5 * params.view_cone_angle;
    let step = params.view_cone_angle / n as f64;
    let reach = 0.5 * params.wing_span;

    // A ray (half-line) from the apex hits the segment exactly when its
    // direction lies inside the arc the segment subtends, so each blocker
    // marks a contiguous run of ray indices.
    let mut mark = |lo: f64, hi: f64| {
        if hi < -half_cone || lo > half_cone {
            return;
        }
        let first = ((lo + half_cone) / step - 0.5).ceil().max(0.0) as usize;
        let last = ((hi + half_cone) / step - 0.5).floor();
        if last < 0.0 {
            return;
        }
        let last = (last as usize).min(n - 1);
        for m in mask.iter_mut().take(last + 1).skip(first) {
            *m = true;
        }
    };

    for j in 0..state.bird_count() {
        if j == bird {
            continue;
        }
        let center = state.positions[j] - apex;
        // wing lies entirely behind the apex and the cone is narrower than a half-plane
        if half_cone <= 0.5 * PI && center.dot(axis) < -reach {
            continue;
        }
        let (a, b) = wing_segment(state.positions[j], state.velocities[j], params.wing_span);
        let (p, q) = (a - apex, b - apex);
        let orient = p.cross(q);
        if orient == 0.0 {
            continue;
        }
        let (start, end) = if orient > 0.0 { (p, q) } else { (q, p) };
        let start_angle = axis.cross(start).atan2(axis.dot(start));
        let span = start.cross(end).atan2(start.dot(end));
        mark(start_angle, start_angle + span);
        if start_angle + span > PI {
            mark(start_angle - TAU, start_angle + span - TAU);
        }
    }
    mask.iter().filter(|&&m| m).count() as f64 / n as f64
}

/// `sum_{i<j} |v_i - v_j|`.
pub fn velocity_matching(state: &FlockState) -> f64 {
    let v = &state.velocities;
    let mut total = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            total += (v[i] - v[j]).norm();
        }
    }
    total
}

#[inline]
fn gauss(offset: f64, sigma: f64) -> f64 {
    let e = offset * offset / (2.0 * sigma * sigma);
    if e > 40.0 {
        0.0
    } else {
        (-e).exp()
    }
}

/// Upwash minus downwash induced at `rel` (a point relative to the source
/// bird) by a bird flying along `source_heading`.
#[inline]
fn wash(params: &FitnessParams, rel: Vec2, source_heading: Vec2) -> f64 {
    let behind = -rel.dot(source_heading);
    if behind <= 0.0 {
        return 0.0;
    }
    let lateral = source_heading.cross(rel);
    let dl = behind - params.upwash_peak_long;
    let up = gauss(dl, params.upwash_sigma_long)
        * gauss(lateral.abs() - params.wing_span, params.upwash_sigma_lat);
    let down = gauss(dl, params.downwash_sigma_long) * gauss(lateral, params.downwash_sigma_lat);
    up - down
}

/// Raw (unclamped) upwash field at `point`, summed over all birds except `exclude`.
pub fn upwash_at(
    state: &FlockState,
    params: &FitnessParams,
    point: Vec2,
    exclude: Option<usize>,
) -> f64 {
    (0..state.bird_count())
        .filter(|&j| Some(j) != exclude)
        .map(|j| wash(params, point - state.positions[j], heading(state.velocities[j])))
        .sum()
}

/// Upwash measure `um_i` in `[0, 1]` experienced by bird `i`.
pub fn upwash_measure(state: &FlockState, params: &FitnessParams, bird: usize) -> f64 {
    upwash_at(state, params, state.positions[bird], Some(bird)).clamp(0.0, 1.0)
}

/// `sum_i (1 - um_i)`.
pub fn upwash_benefit(state: &FlockState, params: &FitnessParams) -> f64 {
    (0..state.bird_count())
        .map(|i| 1.0 - upwash_measure(state, params, i))
        .sum()
}

pub fn fitness(state: &FlockState, params: &FitnessParams) -> FitnessBreakdown {
    let cv = clear_view(state, params);
    let vm = velocity_matching(state);
    let ub = upwash_benefit(state, params);
    let j = (cv - CV_TARGET).powi(2) + (vm - VM_TARGET).powi(2) + (ub - UB_TARGET).powi(2);
    FitnessBreakdown { cv, vm, ub, j }
}

/// `J(state) < phi`.
pub fn is_v_formation(state: &FlockState, params: &FitnessParams, phi: f64) -> Result<bool> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::invalid(format!("phi must be finite and positive, got {phi}")));
    }
    Ok(fitness(state, params).j < phi)
}
