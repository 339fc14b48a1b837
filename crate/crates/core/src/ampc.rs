//! Adaptive-horizon MPC.
//!
//! Each macro step searches action sequences of growing horizon `h` with PSO
//! until the best sequence improves on the current level by more than the
//! current threshold, or `h` reaches `h_max`. Only the first action of the
//! chosen sequence is returned. Levels partition the descent from the initial
//! fitness down to `phi` (or, for a maximizing attacker, the climb up to
//! `j_cap`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{fitness, FitnessParams};
use crate::flock::{advance, clamp_accelerations, drift, DynamicsBounds, FlockState};
use crate::pso::{pso_minimize_seeded, Bound, PsoParams};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Minimize,
    Maximize,
}

/// How the first threshold is derived. Later thresholds are `l_i / (m - i)`
/// under both rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `delta_0 = (l_0 - phi) / m`.
    #[default]
    Algorithm1,
    /// `delta_1 = l_0 / m`.
    Prose,
}

/// How a controller's PSO decision variables map to accelerations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionEncoding {
    /// Variables are the accelerations themselves.
    Acceleration,
    /// Variables are per-step target velocities, as offsets from each bird's
    /// velocity at decision time; each acceleration is the (clamped) step
    /// from the predicted velocity toward its target. Zero still means "hold
    /// course", and a detour that returns to the common velocity touches
    /// only the variables of the steps where the bird deviates. Offsets are
    /// the cube of the variable (rescaled to the same range), which gives
    /// small corrections finer resolution.
    #[default]
    VelocityTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpcConfig {
    pub phi: f64,
    pub h_max: usize,
    /// Level budget.
    pub m: usize,
    /// Particles per decision variable and direction: `p = 2 * beta * B * h`.
    pub beta: usize,
    /// Template; `particle_count` is overwritten for every horizon.
    pub pso: PsoParams,
    pub mode: Mode,
    pub threshold_rule: ThresholdRule,
    /// Fitness ceiling that plays the role of `phi` in maximize mode.
    pub j_cap: f64,
    /// Seed one particle with the do-nothing sequence.
    pub seed_zero_sequence: bool,
    /// Ignored by the attacker, which always searches displacements.
    pub encoding: ActionEncoding,
    /// Also seed the swarm with the previous macro step's sequence shifted
    /// by one step and with the best sequence of the previous horizon.
    pub warm_start: bool,
}

impl Default for AmpcConfig {
    fn default() -> Self {
        AmpcConfig {
            phi: 1e-3,
            h_max: 5,
            m: 40,
            beta: 10,
            pso: PsoParams::default(),
            mode: Mode::Minimize,
            threshold_rule: ThresholdRule::Algorithm1,
            j_cap: 10.0,
            seed_zero_sequence: true,
            encoding: ActionEncoding::default(),
            warm_start: true,
        }
    }
}

impl AmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::invalid(format!("phi must be finite and positive, got {}", self.phi)));
        }
        if self.h_max == 0 || self.m == 0 || self.beta == 0 {
            return Err(Error::invalid("h_max, m and beta must be positive"));
        }
        if self.mode == Mode::Maximize && !(self.j_cap > 0.0 && self.j_cap.is_finite()) {
            return Err(Error::invalid("j_cap must be finite and positive"));
        }
        self.pso.validate()
    }

    pub fn particle_count(&self, birds: usize, horizon: usize) -> usize {
        2 * self.beta * birds * horizon
    }

    /// Whether `j` already satisfies this player's goal.
    pub fn goal_reached(&self, j: f64) -> bool {
        match self.mode {
            Mode::Minimize => j < self.phi,
            Mode::Maximize => j >= self.j_cap,
        }
    }

    /// Signed progress from `level` to `candidate`; positive is good for this player.
    pub fn gain(&self, level: f64, candidate: f64) -> f64 {
        match self.mode {
            Mode::Minimize => level - candidate,
            Mode::Maximize => candidate - level,
        }
    }

    /// Distance from `level` to the goal value.
    fn remaining(&self, level: f64) -> f64 {
        match self.mode {
            Mode::Minimize => level,
            Mode::Maximize => self.j_cap - level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelState {
    pub level_value: f64,
    pub threshold: f64,
    pub level_index: usize,
    pub horizon: usize,
    pub steps_used: usize,
}

/// Starts a level schedule at `initial_fitness`; `None` when the goal already holds.
pub fn init_levels(initial_fitness: f64, config: &AmpcConfig) -> Option<LevelState> {
    if config.goal_reached(initial_fitness) || (config.mode == Mode::Minimize && initial_fitness <= config.phi) {
        return None;
    }
    let m = config.m as f64;
    let threshold = match (config.mode, config.threshold_rule) {
        (Mode::Minimize, ThresholdRule::Algorithm1) => (initial_fitness - config.phi) / m,
        (Mode::Minimize, ThresholdRule::Prose) => initial_fitness / m,
        (Mode::Maximize, _) => (config.j_cap - initial_fitness) / m,
    };
    Some(LevelState { level_value: initial_fitness, threshold, level_index: 1, horizon: 1, steps_used: 0 })
}

/// `l_i / (m - i)` (distance to `j_cap` in maximize mode); `None` once the
/// level budget is spent.
pub fn next_threshold(level_value: f64, level_index: usize, config: &AmpcConfig) -> Option<f64> {
    if level_index >= config.m {
        return None;
    }
    Some(config.remaining(level_value) / (config.m - level_index) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelAdvance {
    Advanced,
    Exhausted,
}

impl LevelState {
    /// Writes back the fitness of the state actually reached after the
    /// macro step and moves to the next level.
    pub fn advance(&mut self, actual_fitness: f64, config: &AmpcConfig) -> LevelAdvance {
        self.level_value = actual_fitness;
        self.horizon = 1;
        match next_threshold(actual_fitness, self.level_index, config) {
            Some(threshold) => {
                self.threshold = threshold;
                self.level_index += 1;
                LevelAdvance::Advanced
            }
            None => LevelAdvance::Exhausted,
        }
    }
}

/// What a player's predictions assume about the other player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    /// Optimizes accelerations; assumes no displacement.
    Controller,
    /// Optimizes displacements of at most `r` birds of magnitude at most
    /// `magnitude`; assumes zero acceleration.
    Attacker { r: usize, magnitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    pub kind: ModelKind,
    pub bounds: DynamicsBounds,
}

impl PredictionModel {
    pub fn controller(bounds: DynamicsBounds) -> Self {
        PredictionModel { kind: ModelKind::Controller, bounds }
    }

    pub fn attacker(r: usize, magnitude: f64, bounds: DynamicsBounds) -> Self {
        PredictionModel { kind: ModelKind::Attacker { r, magnitude }, bounds }
    }

    /// Box for one decision variable of the PSO search.
    pub fn variable_bound(&self) -> Bound {
        match self.kind {
            ModelKind::Controller => Bound::symmetric(self.bounds.rho * self.bounds.v_max),
            ModelKind::Attacker { magnitude, .. } => Bound::symmetric(magnitude),
        }
    }

    /// Makes one step's raw action admissible for `state`.
    fn constrain(&self, action: &mut [Vec2], state: &FlockState) {
        match self.kind {
            ModelKind::Controller => clamp_accelerations(action, &state.velocities, self.bounds.rho),
            ModelKind::Attacker { r, magnitude } => project_displacements(action, r, magnitude),
        }
    }

    fn uses_targets(&self, encoding: ActionEncoding) -> bool {
        encoding == ActionEncoding::VelocityTarget && self.kind == ModelKind::Controller
    }

    fn step(&self, state: &mut FlockState, action: &[Vec2]) {
        match self.kind {
            ModelKind::Controller => advance(state, action, None, &self.bounds),
            ModelKind::Attacker { .. } => drift(state, action, &self.bounds),
        }
    }
}

/// Caps each displacement at `magnitude` and keeps only the `r` largest
/// (earlier birds win ties); the rest become zero.
pub fn project_displacements(displacements: &mut [Vec2], r: usize, magnitude: f64) {
    for d in displacements.iter_mut() {
        *d = d.clamp_norm(magnitude);
    }
    if r >= displacements.len() {
        return;
    }
    let mut order: Vec<usize> = (0..displacements.len()).collect();
    order.sort_by(|&a, &b| {
        displacements[b].norm_sq().total_cmp(&displacements[a].norm_sq()).then(a.cmp(&b))
    });
    for &i in &order[r..] {
        displacements[i] = Vec2::ZERO;
    }
}

/// Componentwise `x^3 / range^2`: maps `[-range, range]` onto itself.
fn cube(v: Vec2, range: f64) -> Vec2 {
    let r2 = range * range;
    Vec2::new(v.x.powi(3) / r2, v.y.powi(3) / r2)
}

fn uncube(x: f64, range: f64) -> f64 {
    (x * range * range).cbrt()
}

/// Reusable buffers for rolling out action sequences.
struct Rollout {
    state: FlockState,
    step: Vec<Vec2>,
}

impl Rollout {
    fn new(state: &FlockState) -> Self {
        Rollout { state: state.clone(), step: vec![Vec2::ZERO; state.bird_count()] }
    }

    /// Minimum `J` over the `h` predicted states and the (1-based) step at
    /// which it occurs. `sequence` is step-major: `[step][bird][x, y]`.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        model: &PredictionModel,
        encoding: ActionEncoding,
        start: &FlockState,
        sequence: &[f64],
        horizon: usize,
        params: &FitnessParams,
    ) -> (f64, usize) {
        let birds = start.bird_count();
        self.state.clone_from(start);
        let targets = model.uses_targets(encoding);
        let range = model.variable_bound().hi;
        let mut best = (f64::INFINITY, 0);
        for tau in 0..horizon {
            let chunk = &sequence[tau * 2 * birds..(tau + 1) * 2 * birds];
            for (i, a) in self.step.iter_mut().enumerate() {
                *a = Vec2::new(chunk[2 * i], chunk[2 * i + 1]);
                if targets {
                    *a = cube(*a, range) + start.velocities[i] - self.state.velocities[i];
                }
            }
            model.constrain(&mut self.step, &self.state);
            model.step(&mut self.state, &self.step);
            let j = fitness(&self.state, params).j;
            if j < best.0 {
                best = (j, tau + 1);
            }
        }
        best
    }
}

/// Minimum fitness reached within `h = sequence.len()` predicted steps, and
/// the step `ĥ` where it is attained.
pub fn horizon_fitness(
    model: &PredictionModel,
    state: &FlockState,
    sequence: &[Vec<Vec2>],
    params: &FitnessParams,
) -> Result<(f64, usize)> {
    state.validate()?;
    if sequence.is_empty() {
        return Err(Error::invalid("action sequence must have at least one step"));
    }
    let birds = state.bird_count();
    let mut flat = Vec::with_capacity(sequence.len() * 2 * birds);
    for step in sequence {
        if step.len() != birds {
            return Err(Error::invalid(format!("sequence step has {} actions for {birds} birds", step.len())));
        }
        flat.extend(step.iter().flat_map(|v| [v.x, v.y]));
    }
    Ok(Rollout::new(state).run(model, ActionEncoding::Acceleration, state, &flat, sequence.len(), params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Horizon at which the search stopped (0 on short-circuit).
    pub h_tried: usize,
    /// Step of the accepted sequence with the best predicted fitness (0 on short-circuit).
    pub best_horizon: usize,
    /// Predicted horizon fitness of the accepted sequence.
    pub best_horizon_fitness: f64,
    pub level_value: f64,
    pub threshold: f64,
    pub level_index: usize,
    /// The improvement test passed (as opposed to the `h_max` fallback).
    pub improved: bool,
    /// Particle count used at each horizon tried.
    pub particle_counts: Vec<usize>,
    pub evaluations: usize,
}

impl Diagnostics {
    fn short_circuit(j: f64) -> Self {
        Diagnostics {
            h_tried: 0,
            best_horizon: 0,
            best_horizon_fitness: j,
            level_value: j,
            threshold: 0.0,
            level_index: 0,
            improved: false,
            particle_counts: Vec::new(),
            evaluations: 0,
        }
    }

    pub fn is_short_circuit(&self) -> bool {
        self.h_tried == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// First action of the chosen sequence, already admissible.
    pub action: Vec<Vec2>,
    pub levels: Option<LevelState>,
    pub diagnostics: Diagnostics,
}

/// One AMPC macro step from `state`.
///
/// When the goal already holds the zero action is returned and `levels` is
/// passed through untouched. Otherwise the returned levels have the horizon
/// reset to 1 and `steps_used` incremented; the caller finishes the level
/// update with [`LevelState::advance`] once the actual next state is known.
pub fn ampc_next_action<R: Rng + ?Sized>(
    state: &FlockState,
    levels: &LevelState,
    model: &PredictionModel,
    config: &AmpcConfig,
    params: &FitnessParams,
    rng: &mut R,
) -> Result<Decision> {
    Ok(search(state, levels, model, config, params, None, rng)?.0)
}

/// Fits a step-major sequence to `steps` steps: extra steps are dropped,
/// missing ones repeat the last step for velocity targets (hold the
/// velocity) and are zero otherwise (no action).
fn fit_sequence(sequence: &[f64], step_len: usize, steps: usize, hold: bool) -> Vec<f64> {
    let mut out: Vec<f64> = sequence.iter().copied().take(step_len * steps).collect();
    let last: Vec<f64> = match (hold, out.len() >= step_len) {
        (true, true) => out[out.len() - step_len..].to_vec(),
        _ => vec![0.0; step_len],
    };
    while out.len() < step_len * steps {
        out.extend_from_slice(&last);
    }
    out
}

/// The search behind [`ampc_next_action`]; also returns the accepted
/// sequence so a stateful caller can warm-start the next macro step.
fn search<R: Rng + ?Sized>(
    state: &FlockState,
    levels: &LevelState,
    model: &PredictionModel,
    config: &AmpcConfig,
    params: &FitnessParams,
    hint: Option<&[f64]>,
    rng: &mut R,
) -> Result<(Decision, Vec<f64>)> {
    state.validate()?;
    config.validate()?;
    let birds = state.bird_count();
    let current = fitness(state, params).j;
    if config.goal_reached(current) {
        let decision = Decision {
            action: vec![Vec2::ZERO; birds],
            levels: Some(*levels),
            diagnostics: Diagnostics::short_circuit(current),
        };
        return Ok((decision, Vec::new()));
    }
    if levels.horizon == 0 || levels.horizon > config.h_max {
        return Err(Error::invalid(format!("horizon {} outside 1..={}", levels.horizon, config.h_max)));
    }

    let sign = match config.mode {
        Mode::Minimize => 1.0,
        Mode::Maximize => -1.0,
    };
    let hold = model.uses_targets(config.encoding);
    let step_len = 2 * birds;
    let bound = model.variable_bound();
    let mut particle_counts = Vec::new();
    let mut evaluations = 0;
    let mut rollout = Rollout::new(state);
    let mut shorter: Option<Vec<f64>> = None;

    let mut h = levels.horizon;
    loop {
        let dim = step_len * h;
        let bounds = vec![bound; dim];
        let pso = PsoParams { particle_count: config.particle_count(birds, h), ..config.pso.clone() };
        particle_counts.push(pso.particle_count);
        let mut seeds = Vec::new();
        if config.seed_zero_sequence {
            seeds.push(vec![0.0; dim]);
        }
        if config.warm_start {
            for previous in [hint, shorter.as_deref()].into_iter().flatten() {
                if previous.len() >= step_len && previous.len() % step_len == 0 {
                    seeds.push(fit_sequence(previous, step_len, h, hold));
                }
            }
        }
        let result = pso_minimize_seeded(
            |z: &[f64]| sign * rollout.run(model, config.encoding, state, z, h, params).0,
            &bounds,
            &seeds,
            &pso,
            rng,
        )?;
        evaluations += result.evaluations;
        let (best_fitness, best_horizon) =
            rollout.run(model, config.encoding, state, &result.best_position, h, params);
        let improved = config.gain(levels.level_value, best_fitness) > levels.threshold;
        if improved || h >= config.h_max {
            let mut action: Vec<Vec2> = result.best_position[..step_len]
                .chunks(2)
                .map(|c| Vec2::new(c[0], c[1]))
                .map(|a| if hold { cube(a, bound.hi) } else { a })
                .collect();
            model.constrain(&mut action, state);
            let mut next_levels = *levels;
            next_levels.horizon = 1;
            next_levels.steps_used += 1;
            let decision = Decision {
                action,
                levels: Some(next_levels),
                diagnostics: Diagnostics {
                    h_tried: h,
                    best_horizon,
                    best_horizon_fitness: best_fitness,
                    level_value: levels.level_value,
                    threshold: levels.threshold,
                    level_index: levels.level_index,
                    improved,
                    particle_counts,
                    evaluations,
                },
            };
            return Ok((decision, result.best_position));
        }
        shorter = Some(result.best_position);
        h += 1;
    }
}

/// The accepted sequence as seen one step later: the first step dropped
/// and, for velocity targets, re-expressed relative to the velocity the
/// first step was aiming for.
fn shift_plan(plan: &[f64], step_len: usize, hold: bool, range: f64) -> Option<Vec<f64>> {
    if plan.len() < 2 * step_len {
        return None;
    }
    let mut rest = plan[step_len..].to_vec();
    if hold {
        let offset = |x: f64| x.powi(3) / (range * range);
        for chunk in rest.chunks_mut(step_len) {
            for (x, first) in chunk.iter_mut().zip(&plan[..step_len]) {
                *x = uncube(offset(*x) - offset(*first), range).clamp(-range, range);
            }
        }
    }
    Some(rest)
}

/// A stateful AMPC player: owns its level schedule and random stream.
#[derive(Debug, Clone)]
pub struct Ampc {
    config: AmpcConfig,
    model: PredictionModel,
    params: FitnessParams,
    levels: Option<LevelState>,
    rng: ChaCha8Rng,
    plan: Option<Vec<f64>>,
}

impl Ampc {
    pub fn new(config: AmpcConfig, model: PredictionModel, params: FitnessParams, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        params.validate()?;
        model.bounds.validate()?;
        Ok(Ampc { config, model, params, levels: None, rng, plan: None })
    }

    pub fn config(&self) -> &AmpcConfig {
        &self.config
    }

    pub fn levels(&self) -> Option<&LevelState> {
        self.levels.as_ref()
    }

    /// Chooses the action for `state`, starting a new level schedule when
    /// none is active.
    pub fn next_action(&mut self, state: &FlockState) -> Result<Decision> {
        let current = fitness(state, &self.params).j;
        if self.config.goal_reached(current) {
            self.levels = None;
            self.plan = None;
            return Ok(Decision {
                action: vec![Vec2::ZERO; state.bird_count()],
                levels: None,
                diagnostics: Diagnostics::short_circuit(current),
            });
        }
        let levels = match self.levels {
            Some(levels) => levels,
            None => init_levels(current, &self.config).expect("goal checked above"),
        };
        let step_len = 2 * state.bird_count();
        let hold = self.model.uses_targets(self.config.encoding);
        let range = self.model.variable_bound().hi;
        let hint = self.plan.as_deref().and_then(|p| shift_plan(p, step_len, hold, range));
        let (decision, plan) =
            search(state, &levels, &self.model, &self.config, &self.params, hint.as_deref(), &mut self.rng)?;
        self.levels = decision.levels;
        self.plan = Some(plan);
        Ok(decision)
    }

    /// Level write-back with the fitness of the state actually reached. A
    /// spent level budget restarts the schedule from that fitness.
    pub fn observe(&mut self, actual_fitness: f64) {
        if let Some(levels) = self.levels.as_mut() {
            if levels.advance(actual_fitness, &self.config) == LevelAdvance::Exhausted {
                self.levels = init_levels(actual_fitness, &self.config);
            } else if self.config.goal_reached(actual_fitness) {
                self.levels = None;
            }
        }
    }
}
