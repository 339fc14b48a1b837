//! Controller-versus-attacker games on the flock MDP.
//!
//! Both players compute their moves from the same state; the joint action
//! `(a(t), d(t))` then produces the next state. The controller wins a run if
//! the flock is in V-formation (`J < phi`) at some step of the goal window,
//! which starts right after the attacker's last move.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ampc::{Ampc, AmpcConfig, Mode, PredictionModel};
use crate::error::{Error, Result};
use crate::fitness::{fitness, FitnessParams};
use crate::flock::{
    make_v_formation, remove_birds, sample_random_state, step_flock, ControlAction, Disturbance,
    DynamicsBounds, FlockState, Rect, VGeometry,
};
use crate::pso::PsoParams;
use crate::trace::{StepRecord, TraceSink};
use crate::vec2::Vec2;

/// Which birds the remove-birds attacker takes out. Birds are identified by
/// their 1-based number in the V (leader of seven is bird 4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Removal {
    Birds(Vec<usize>),
    /// `R` distinct birds chosen uniformly at random.
    Random(usize),
    /// The `R` birds whose removal leaves the worst fitness.
    Worst(usize),
}

impl Removal {
    pub fn count(&self) -> usize {
        match self {
            Removal::Birds(b) => b.len(),
            Removal::Random(r) | Removal::Worst(r) => *r,
        }
    }
}

/// Settings of an AMPC attacker; it always maximizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerSettings {
    pub h_max: usize,
    pub m: usize,
    pub beta: usize,
    pub pso: PsoParams,
    pub j_cap: f64,
}

impl Default for AttackerSettings {
    fn default() -> Self {
        let base = AmpcConfig::default();
        AttackerSettings { h_max: base.h_max, m: base.m, beta: base.beta, pso: base.pso, j_cap: base.j_cap }
    }
}

impl AttackerSettings {
    pub fn ampc_config(&self, phi: f64) -> AmpcConfig {
        AmpcConfig {
            phi,
            h_max: self.h_max,
            m: self.m,
            beta: self.beta,
            pso: self.pso.clone(),
            mode: Mode::Maximize,
            j_cap: self.j_cap,
            ..AmpcConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackKind {
    None,
    RemoveBirds { removal: Removal },
    RandomDisplacement { r: usize, magnitude: f64, attack_steps: usize },
    AmpcDisplacement { r: usize, magnitude: f64, attack_steps: usize, attacker: AttackerSettings },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::RemoveBirds { .. } => "rbg",
            AttackKind::RandomDisplacement { .. } => "rdg",
            AttackKind::AmpcDisplacement { .. } => "ampc",
        }
    }

    /// Number of birds the attacker touches (removed or displaced per step).
    pub fn r(&self) -> usize {
        match self {
            AttackKind::None => 0,
            AttackKind::RemoveBirds { removal } => removal.count(),
            AttackKind::RandomDisplacement { r, .. } | AttackKind::AmpcDisplacement { r, .. } => *r,
        }
    }

    pub fn magnitude(&self) -> f64 {
        match self {
            AttackKind::RandomDisplacement { magnitude, .. } | AttackKind::AmpcDisplacement { magnitude, .. } => {
                *magnitude
            }
            _ => 0.0,
        }
    }

    pub fn attack_steps(&self) -> usize {
        match self {
            AttackKind::RandomDisplacement { attack_steps, .. }
            | AttackKind::AmpcDisplacement { attack_steps, .. } => *attack_steps,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    VFormation,
    Random { region: Rect, speed: (f64, f64) },
}

/// Full parameterization of one game execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub bird_count: usize,
    /// Environment step cap.
    pub max_steps: usize,
    pub attack: AttackKind,
    /// Holds `phi`, `h_max` and the level budget `m`.
    pub controller: AmpcConfig,
    pub fitness: FitnessParams,
    pub bounds: DynamicsBounds,
    pub geometry: VGeometry,
    pub initial: InitialState,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            bird_count: 7,
            max_steps: 40,
            attack: AttackKind::None,
            controller: AmpcConfig::default(),
            fitness: FitnessParams::default(),
            bounds: DynamicsBounds::default(),
            geometry: VGeometry::default(),
            initial: InitialState::VFormation,
            seed: 0,
        }
    }
}

impl GameConfig {
    pub fn phi(&self) -> f64 {
        self.controller.phi
    }

    pub fn with_seed(&self, seed: u64) -> GameConfig {
        GameConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bird_count == 0 {
            return Err(Error::invalid("bird_count must be positive"));
        }
        let mut controller = self.controller.clone();
        controller.mode = Mode::Minimize;
        controller.validate()?;
        if self.controller.mode != Mode::Minimize {
            return Err(Error::invalid("the controller must minimize"));
        }
        self.fitness.validate()?;
        self.bounds.validate()?;
        self.geometry.validate()?;
        let r = self.attack.r();
        if r >= self.bird_count && !matches!(self.attack, AttackKind::None) {
            return Err(Error::invalid(format!(
                "attacker budget R = {r} must be smaller than B = {}",
                self.bird_count
            )));
        }
        match &self.attack {
            AttackKind::None => {}
            AttackKind::RemoveBirds { removal } => {
                if let Removal::Birds(birds) = removal {
                    for &b in birds {
                        if b == 0 || b > self.bird_count {
                            return Err(Error::invalid(format!(
                                "bird {b} out of range 1..={}",
                                self.bird_count
                            )));
                        }
                    }
                }
            }
            AttackKind::RandomDisplacement { magnitude, attack_steps, .. }
            | AttackKind::AmpcDisplacement { magnitude, attack_steps, .. } => {
                if !(*magnitude >= 0.0 && magnitude.is_finite()) {
                    return Err(Error::invalid(format!("magnitude must be non-negative, got {magnitude}")));
                }
                if *attack_steps > self.max_steps {
                    return Err(Error::invalid("attack_steps exceeds max_steps"));
                }
                if let AttackKind::AmpcDisplacement { attacker, .. } = &self.attack {
                    attacker.ampc_config(self.phi()).validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Outcome of one game execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// The Bernoulli outcome `Z`.
    pub won: bool,
    /// Steps from the start of the goal window to the first V-formation.
    pub steps_to_v: Option<usize>,
    /// Mean `ĥ` over the controller's macro steps; absent if it never searched.
    pub avg_horizon: Option<f64>,
    /// Mean horizon at which the controller's search stopped.
    pub avg_horizon_tried: Option<f64>,
    pub macro_steps: usize,
    /// `J(s(t))` for every visited state, starting at `t = 0`.
    pub fitness_trajectory: Vec<f64>,
    /// First step at which a V-formation counts as a win.
    pub goal_window_start: usize,
    /// Removed birds, by 1-based number.
    pub removed: Vec<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    /// Recomputes the outcome from the trajectory.
    pub fn replayed_win(&self, phi: f64) -> bool {
        self.fitness_trajectory.iter().skip(self.goal_window_start).any(|&j| j < phi)
    }
}

/// Applies the composed action `(a, d)` in a single transition.
pub fn play_parallel_step(
    state: &FlockState,
    controller_action: &ControlAction,
    attacker_disturbance: &Disturbance,
    bounds: &DynamicsBounds,
) -> Result<FlockState> {
    step_flock(state, controller_action, attacker_disturbance, bounds)
}

/// Independent random streams of one run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The `r`-subset of birds (by index) whose removal maximizes the remaining `J`.
pub fn worst_removal(state: &FlockState, r: usize, params: &FitnessParams) -> Result<Vec<usize>> {
    let birds = state.bird_count();
    if r >= birds {
        return Err(Error::invalid(format!("cannot remove {r} of {birds} birds")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut subset: Vec<usize> = (0..r).collect();
    loop {
        let j = fitness(&remove_birds(state, &subset)?, params).j;
        if best.as_ref().is_none_or(|(bj, _)| j > *bj) {
            best = Some((j, subset.clone()));
        }
        // next combination in lexicographic order
        let mut k = r;
        loop {
            if k == 0 {
                return Ok(best.map(|b| b.1).unwrap_or_default());
            }
            k -= 1;
            if subset[k] < birds - r + k {
                subset[k] += 1;
                for l in k + 1..r {
                    subset[l] = subset[l - 1] + 1;
                }
                break;
            }
        }
    }
}

fn random_disturbance<R: Rng + ?Sized>(birds: usize, r: usize, magnitude: f64, rng: &mut R) -> Disturbance {
    let mut d = Disturbance::zero(birds);
    if magnitude == 0.0 || r == 0 {
        return d;
    }
    for victim in sample(rng, birds, r) {
        let length = rng.random_range(0.0..=magnitude);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        d.displacements[victim] = Vec2::from_polar(length, angle);
    }
    d
}

/// Runs one game of whichever kind `config.attack` names.
pub fn run_game(config: &GameConfig, sink: &mut dyn TraceSink) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let mut setup_rng = stream(config.seed, 0);
    let params = &config.fitness;
    let phi = config.phi();

    let mut state = match &config.initial {
        InitialState::VFormation => make_v_formation(config.bird_count, &config.geometry)?,
        InitialState::Random { region, speed } => {
            sample_random_state(config.bird_count, region, *speed, &mut setup_rng)?
        }
    };

    let mut removed = Vec::new();
    if let AttackKind::RemoveBirds { removal } = &config.attack {
        let indices = match removal {
            Removal::Birds(birds) => birds.iter().map(|b| b - 1).collect(),
            Removal::Random(r) => {
                let mut v = sample(&mut setup_rng, state.bird_count(), *r).into_vec();
                v.sort_unstable();
                v
            }
            Removal::Worst(r) => worst_removal(&state, *r, params)?,
        };
        state = remove_birds(&state, &indices)?;
        removed = indices.iter().map(|i| i + 1).collect();
    }

    let attack_steps = config.attack.attack_steps();
    let mut controller = Ampc::new(
        config.controller.clone(),
        PredictionModel::controller(config.bounds),
        params.clone(),
        stream(config.seed, 1),
    )?;
    let mut attacker = match &config.attack {
        AttackKind::AmpcDisplacement { r, magnitude, attacker, .. } if *magnitude > 0.0 => Some(Ampc::new(
            attacker.ampc_config(phi),
            PredictionModel::attacker(*r, *magnitude, config.bounds),
            params.clone(),
            stream(config.seed, 2),
        )?),
        _ => None,
    };

    let mut trajectory = Vec::with_capacity(config.max_steps + 1);
    let mut horizons = Vec::new();
    let mut tried = Vec::new();
    let mut steps_to_v = None;
    let mut pending_write_back = (false, false);

    for t in 0..=config.max_steps {
        let f = fitness(&state, params);
        trajectory.push(f.j);
        if pending_write_back.0 {
            controller.observe(f.j);
        }
        if pending_write_back.1 {
            if let Some(a) = attacker.as_mut() {
                a.observe(f.j);
            }
        }
        let mut record = StepRecord {
            t,
            positions: state.positions.clone(),
            velocities: state.velocities.clone(),
            action: None,
            disturbance: None,
            j: f.j,
            cv: f.cv,
            vm: f.vm,
            ub: f.ub,
            controller_h: None,
            h_tried: None,
            level: None,
            delta: None,
            improved: None,
        };
        if t >= attack_steps && f.j < phi {
            steps_to_v = Some(t - attack_steps);
            sink.record(record);
            break;
        }
        if t == config.max_steps {
            sink.record(record);
            break;
        }

        let decision = controller.next_action(&state)?;
        let diag = &decision.diagnostics;
        if !diag.is_short_circuit() {
            horizons.push(diag.best_horizon);
            tried.push(diag.h_tried);
            record.controller_h = Some(diag.best_horizon);
            record.h_tried = Some(diag.h_tried);
            record.level = Some(diag.level_value);
            record.delta = Some(diag.threshold);
            record.improved = Some(diag.improved);
        }
        pending_write_back.0 = !diag.is_short_circuit();

        let birds = state.bird_count();
        let disturbance = if t < attack_steps {
            match &config.attack {
                AttackKind::RandomDisplacement { r, magnitude, .. } => {
                    random_disturbance(birds, *r, *magnitude, &mut setup_rng)
                }
                AttackKind::AmpcDisplacement { .. } => match attacker.as_mut() {
                    Some(a) => {
                        let d = a.next_action(&state)?;
                        pending_write_back.1 = !d.diagnostics.is_short_circuit();
                        Disturbance { displacements: d.action }
                    }
                    None => Disturbance::zero(birds),
                },
                _ => Disturbance::zero(birds),
            }
        } else {
            pending_write_back.1 = false;
            Disturbance::zero(birds)
        };

        let action = ControlAction { accelerations: decision.action };
        let next = play_parallel_step(&state, &action, &disturbance, &config.bounds)?;
        record.action = Some(action.accelerations);
        record.disturbance = Some(disturbance.displacements);
        sink.record(record);
        state = next;
    }

    let mean = |v: &[usize]| (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64);
    Ok(RunRecord {
        won: steps_to_v.is_some(),
        steps_to_v,
        avg_horizon: mean(&horizons),
        avg_horizon_tried: mean(&tried),
        macro_steps: horizons.len(),
        fitness_trajectory: trajectory,
        goal_window_start: attack_steps,
        removed,
        seed: config.seed,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

fn expect_attack(config: &GameConfig, name: &str, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("expected a {name} attack, got {}", config.attack.name())))
    }
}

/// Remove-birds game: one attacker move at `t = 0`, then the controller alone.
pub fn run_rbg(config: &GameConfig, sink: &mut dyn TraceSink) -> Result<RunRecord> {
    expect_attack(config, "remove-birds", matches!(config.attack, AttackKind::RemoveBirds { .. }))?;
    run_game(config, sink)
}

/// Random displacement game.
pub fn run_rdg(config: &GameConfig, sink: &mut dyn TraceSink) -> Result<RunRecord> {
    expect_attack(config, "random-displacement", matches!(config.attack, AttackKind::RandomDisplacement { .. }))?;
    run_game(config, sink)
}

/// Displacement game against an AMPC attacker.
pub fn run_ampc_game(config: &GameConfig, sink: &mut dyn TraceSink) -> Result<RunRecord> {
    expect_attack(config, "AMPC-displacement", matches!(config.attack, AttackKind::AmpcDisplacement { .. }))?;
    run_game(config, sink)
}
