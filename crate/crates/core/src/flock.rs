//! Flock state, transition relation and initial-state generators.
//!
//! Birds are stored in index order. For states built by [`make_v_formation`]
//! index `k` is bird number `k + 1` in the usual figure numbering: the birds of
//! the first wing from its tip inwards, then the leader, then the second wing
//! from the leader outwards. For seven birds the leader is bird 4.

use std::f64::consts::{FRAC_PI_4, SQRT_2, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Positions and velocities of `B` birds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

impl FlockState {
    pub fn new(positions: Vec<Vec2>, velocities: Vec<Vec2>) -> Result<Self> {
        let state = FlockState { positions, velocities };
        state.validate()?;
        Ok(state)
    }

    pub fn bird_count(&self) -> usize {
        self.positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("flock must contain at least one bird"));
        }
        if self.positions.len() != self.velocities.len() {
            return Err(Error::invalid(format!(
                "{} positions but {} velocities",
                self.positions.len(),
                self.velocities.len()
            )));
        }
        if !self
            .positions
            .iter()
            .chain(&self.velocities)
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("flock state contains a non-finite coordinate"));
        }
        Ok(())
    }

    /// Shifts every position by `offset`.
    pub fn translated(&self, offset: Vec2) -> FlockState {
        FlockState {
            positions: self.positions.iter().map(|&p| p + offset).collect(),
            velocities: self.velocities.clone(),
        }
    }

    /// Rotates positions about `center` and velocities by `angle`.
    pub fn rotated(&self, center: Vec2, angle: f64) -> FlockState {
        FlockState {
            positions: self
                .positions
                .iter()
                .map(|&p| center + (p - center).rotate(angle))
                .collect(),
            velocities: self.velocities.iter().map(|v| v.rotate(angle)).collect(),
        }
    }
}

/// Per-bird accelerations chosen by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub accelerations: Vec<Vec2>,
}

impl ControlAction {
    pub fn zero(birds: usize) -> Self {
        ControlAction { accelerations: vec![Vec2::ZERO; birds] }
    }

    pub fn len(&self) -> usize {
        self.accelerations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accelerations.is_empty()
    }
}

/// Per-bird position displacements chosen by the attacker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub displacements: Vec<Vec2>,
}

impl Disturbance {
    pub fn zero(birds: usize) -> Self {
        Disturbance { displacements: vec![Vec2::ZERO; birds] }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn nonzero_count(&self) -> usize {
        self.displacements.iter().filter(|d| **d != Vec2::ZERO).count()
    }
}

/// Speed limits and relative acceleration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsBounds {
    pub v_max: f64,
    pub rho: f64,
    /// Birds never fly slower than this; 0 disables the floor.
    pub v_min: f64,
}

impl Default for DynamicsBounds {
    fn default() -> Self {
        DynamicsBounds { v_max: 2.0, rho: 0.9, v_min: 0.5 }
    }
}

impl DynamicsBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::invalid(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.v_min >= 0.0 && self.v_min < self.v_max) {
            return Err(Error::invalid(format!(
                "v_min must lie in [0, v_max), got {} with v_max {}",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    /// Rescales `v` into `[v_min, v_max]`. A vector too short to carry a
    /// direction takes the direction of `previous`.
    pub fn limit_speed(&self, v: Vec2, previous: Vec2) -> Vec2 {
        let v = v.clamp_norm(self.v_max);
        let n = v.norm();
        if n >= self.v_min {
            return v;
        }
        let dir = if n > 1e-12 { v * (1.0 / n) } else { previous.normalized_or(crate::fitness::REFERENCE_HEADING) };
        dir * self.v_min
    }
}

/// Shape of the V produced by [`make_v_formation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VGeometry {
    pub wing_span: f64,
    /// Angle between each wing and the axis pointing backwards from the leader.
    pub wing_angle: f64,
    /// Distance between consecutive birds along a wing.
    pub gap: f64,
    pub leader_velocity: Vec2,
}

impl Default for VGeometry {
    /// Each trailing bird sits one unit behind and one wing span beside its
    /// predecessor, which is where the default upwash field peaks.
    fn default() -> Self {
        VGeometry {
            wing_span: 1.0,
            wing_angle: FRAC_PI_4,
            gap: SQRT_2,
            leader_velocity: Vec2::new(1.0, 0.0),
        }
    }
}

impl VGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.wing_span > 0.0 && self.gap > 0.0) {
            return Err(Error::invalid("wing_span and gap must be positive"));
        }
        if !self.wing_angle.is_finite() || !self.leader_velocity.is_finite() {
            return Err(Error::invalid("geometry must be finite"));
        }
        Ok(())
    }
}

/// Axis-aligned box used when sampling random initial positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

fn check_len(what: &str, len: usize, birds: usize) -> Result<()> {
    if len != birds {
        return Err(Error::invalid(format!(
            "{what} has {len} entries but the flock has {birds} birds"
        )));
    }
    Ok(())
}

/// Rescales every acceleration whose magnitude exceeds `rho * |v_i|`.
pub fn clamp_action(
    action: &ControlAction,
    state: &FlockState,
    bounds: &DynamicsBounds,
) -> Result<ControlAction> {
    check_len("action", action.len(), state.bird_count())?;
    let mut accelerations = action.accelerations.clone();
    clamp_accelerations(&mut accelerations, &state.velocities, bounds.rho);
    Ok(ControlAction { accelerations })
}

pub(crate) fn clamp_accelerations(accelerations: &mut [Vec2], velocities: &[Vec2], rho: f64) {
    for (a, v) in accelerations.iter_mut().zip(velocities) {
        *a = a.clamp_norm(rho * v.norm());
    }
}

/// One transition of the flock MDP.
///
/// `v' = v + a`, rescaled into `[v_min, v_max]`, then `x' = x + v' + d`.
pub fn step_flock(
    state: &FlockState,
    action: &ControlAction,
    disturbance: &Disturbance,
    bounds: &DynamicsBounds,
) -> Result<FlockState> {
    state.validate()?;
    let birds = state.bird_count();
    check_len("action", action.len(), birds)?;
    check_len("disturbance", disturbance.len(), birds)?;
    if !action.accelerations.iter().chain(&disturbance.displacements).all(|v| v.is_finite()) {
        return Err(Error::invalid("action or disturbance contains a non-finite value"));
    }
    let mut next = state.clone();
    advance(&mut next, &action.accelerations, Some(&disturbance.displacements), bounds);
    Ok(next)
}

/// Unchecked in-place transition used by the prediction loops.
pub(crate) fn advance(
    state: &mut FlockState,
    accelerations: &[Vec2],
    displacements: Option<&[Vec2]>,
    bounds: &DynamicsBounds,
) {
    for i in 0..state.positions.len() {
        let v = bounds.limit_speed(state.velocities[i] + accelerations[i], state.velocities[i]);
        state.velocities[i] = v;
        let mut x = state.positions[i] + v;
        if let Some(d) = displacements {
            x += d[i];
        }
        state.positions[i] = x;
    }
}

/// Same as [`advance`] with zero acceleration.
pub(crate) fn drift(state: &mut FlockState, displacements: &[Vec2], bounds: &DynamicsBounds) {
    for i in 0..state.positions.len() {
        let v = bounds.limit_speed(state.velocities[i], state.velocities[i]);
        state.velocities[i] = v;
        state.positions[i] += v + displacements[i];
    }
}

/// Index of the leader in a V of `birds` birds.
pub fn leader_index(birds: usize) -> usize {
    (birds - 1) / 2
}

/// Builds a symmetric V with the leader at the origin.
///
/// The first wing holds `floor((B-1)/2)` birds and the second `ceil((B-1)/2)`.
pub fn make_v_formation(birds: usize, geom: &VGeometry) -> Result<FlockState> {
    if birds == 0 {
        return Err(Error::invalid("a V-formation needs at least one bird"));
    }
    geom.validate()?;
    let heading = geom.leader_velocity.normalized_or(Vec2::new(1.0, 0.0));
    let back = -heading;
    let first_wing = back.rotate(-geom.wing_angle);
    let second_wing = back.rotate(geom.wing_angle);
    let lead = leader_index(birds);
    let positions = (0..birds)
        .map(|k| {
            if k < lead {
                first_wing * (geom.gap * (lead - k) as f64)
            } else {
                second_wing * (geom.gap * (k - lead) as f64)
            }
        })
        .collect();
    FlockState::new(positions, vec![geom.leader_velocity; birds])
}

/// Uniform positions in `bounds`, uniform headings and uniform speeds.
pub fn sample_random_state<R: Rng + ?Sized>(
    birds: usize,
    bounds: &Rect,
    speed_range: (f64, f64),
    rng: &mut R,
) -> Result<FlockState> {
    if birds == 0 {
        return Err(Error::invalid("cannot sample an empty flock"));
    }
    if !(bounds.min.x < bounds.max.x && bounds.min.y < bounds.max.y)
        || !(bounds.min.is_finite() && bounds.max.is_finite())
    {
        return Err(Error::invalid("position box is empty or unbounded"));
    }
    let (lo, hi) = speed_range;
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid(format!("invalid speed range [{lo}, {hi}]")));
    }
    let mut positions = Vec::with_capacity(birds);
    let mut velocities = Vec::with_capacity(birds);
    for _ in 0..birds {
        let x = rng.random_range(bounds.min.x..=bounds.max.x);
        let y = rng.random_range(bounds.min.y..=bounds.max.y);
        positions.push(Vec2::new(x, y));
        let heading = rng.random_range(0.0..TAU);
        let speed = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        velocities.push(Vec2::from_polar(speed, heading));
    }
    FlockState::new(positions, velocities)
}

/// Drops the birds at `indices`, keeping the relative order of the rest.
pub fn remove_birds(state: &FlockState, indices: &[usize]) -> Result<FlockState> {
    let birds = state.bird_count();
    let mut removed = vec![false; birds];
    for &i in indices {
        if i >= birds {
            return Err(Error::invalid(format!("bird index {i} out of range 0..{birds}")));
        }
        if removed[i] {
            return Err(Error::invalid(format!("bird index {i} listed twice")));
        }
        removed[i] = true;
    }
    if indices.len() == birds {
        return Err(Error::invalid("cannot remove every bird"));
    }
    let keep = |(k, _): &(usize, &Vec2)| !removed[*k];
    Ok(FlockState {
        positions: state.positions.iter().enumerate().filter(keep).map(|(_, p)| *p).collect(),
        velocities: state.velocities.iter().enumerate().filter(keep).map(|(_, v)| *v).collect(),
    })
}
