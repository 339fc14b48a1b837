//! Global-best particle swarm optimization over a box.
//!
//! Velocity update per particle, component-wise:
//! `v' = w*v + c1*u1*(p_best - x) + c2*u2*(g_best - x)` with `u1, u2 ~ U(0,1)`,
//! followed by `x' = clamp(x + v')`. With a neighbourhood topology the
//! social attractor is the best personal best among a random subset of the
//! swarm instead of the global best.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbourhood structure used to pick each particle's social attractor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Global,
    /// Each particle follows the best of a freshly drawn random subset.
    /// The subset size starts at `min_fraction` of the swarm, grows by that
    /// much after every iteration without a new global best, and resets
    /// once the global best improves.
    RandomNeighborhood { min_fraction: f64 },
}

impl Topology {
    fn min_neighbors(&self, swarm: usize) -> usize {
        match *self {
            Topology::Global => swarm,
            Topology::RandomNeighborhood { min_fraction } => {
                ((min_fraction * swarm as f64).floor() as usize).clamp(1, swarm)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoParams {
    pub particle_count: usize,
    pub max_iterations: usize,
    /// Stop after this many consecutive iterations without an improvement of
    /// at least `value_tolerance`.
    pub stall_iterations: usize,
    pub inertia: f64,
    pub self_adjustment: f64,
    pub social_adjustment: f64,
    pub value_tolerance: f64,
    /// Stop as soon as the global best drops to or below this value.
    pub objective_limit: Option<f64>,
    pub topology: Topology,
}

impl Default for PsoParams {
    fn default() -> Self {
        PsoParams {
            particle_count: 40,
            max_iterations: 60,
            stall_iterations: 15,
            inertia: 0.7,
            self_adjustment: 1.49,
            social_adjustment: 1.49,
            value_tolerance: 1e-6,
            objective_limit: None,
            topology: Topology::Global,
        }
    }
}

impl PsoParams {
    pub fn validate(&self) -> Result<()> {
        if self.particle_count < 2 {
            return Err(Error::invalid("particle_count must be at least 2"));
        }
        if self.max_iterations < 1 || self.stall_iterations < 1 {
            return Err(Error::invalid("max_iterations and stall_iterations must be positive"));
        }
        if ![self.inertia, self.self_adjustment, self.social_adjustment].iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("PSO coefficients must be finite"));
        }
        if !(self.value_tolerance > 0.0) {
            return Err(Error::invalid("value_tolerance must be positive"));
        }
        if let Topology::RandomNeighborhood { min_fraction } = self.topology {
            if !(min_fraction > 0.0 && min_fraction <= 1.0) {
                return Err(Error::invalid("neighborhood min_fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Closed interval for one decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    pub fn symmetric(r: f64) -> Self {
        Bound { lo: -r, hi: r }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub personal_best_position: Vec<f64>,
    pub personal_best_value: f64,
}

impl Particle {
    /// Records the objective value at the current position, replacing the
    /// personal best only on strict improvement.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.personal_best_value {
            self.personal_best_value = value;
            self.personal_best_position.clone_from(&self.position);
            true
        } else {
            false
        }
    }
}

/// Velocity and position update with explicit random factors.
pub fn apply_update(
    particle: &mut Particle,
    global_best: &[f64],
    bounds: &[Bound],
    params: &PsoParams,
    u1: &[f64],
    u2: &[f64],
) {
    for d in 0..particle.position.len() {
        let x = particle.position[d];
        let v = params.inertia * particle.velocity[d]
            + params.self_adjustment * u1[d] * (particle.personal_best_position[d] - x)
            + params.social_adjustment * u2[d] * (global_best[d] - x);
        particle.velocity[d] = v;
        particle.position[d] = bounds[d].clamp(x + v);
    }
}

/// Draws `u1, u2` and moves the particle. The caller evaluates the new
/// position and reports it through [`Particle::observe`].
pub fn update_particle<R: Rng + ?Sized>(
    particle: &mut Particle,
    global_best: &[f64],
    bounds: &[Bound],
    params: &PsoParams,
    rng: &mut R,
) {
    let dim = particle.position.len();
    let u1: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let u2: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    apply_update(particle, global_best, bounds, params, &u1, &u2);
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

fn sanitize(value: f64) -> f64 {
    if value.is_nan() {
        f64::INFINITY
    } else if value == f64::NEG_INFINITY {
        // a -inf would freeze the swarm on one point; treat as unusable
        f64::INFINITY
    } else {
        value
    }
}

/// Minimizes `objective` over the box `bounds`.
pub fn pso_minimize<F, R>(
    objective: F,
    bounds: &[Bound],
    params: &PsoParams,
    rng: &mut R,
) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    pso_minimize_seeded(objective, bounds, &[], params, rng)
}

/// Like [`pso_minimize`], but the first particles start at `seeds`
/// (clamped into bounds) instead of at random positions.
pub fn pso_minimize_seeded<F, R>(
    mut objective: F,
    bounds: &[Bound],
    seeds: &[Vec<f64>],
    params: &PsoParams,
    rng: &mut R,
) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    params.validate()?;
    let dim = bounds.len();
    if dim == 0 {
        return Err(Error::invalid("PSO needs at least one dimension"));
    }
    for b in bounds {
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
            return Err(Error::invalid(format!("invalid bound [{}, {}]", b.lo, b.hi)));
        }
    }
    if let Some(seed) = seeds.iter().find(|s| s.len() != dim) {
        return Err(Error::invalid(format!("seed has {} components, expected {dim}", seed.len())));
    }

    let mut evaluations = 0usize;
    let mut swarm: Vec<Particle> = Vec::with_capacity(params.particle_count);
    for p in 0..params.particle_count {
        let position: Vec<f64> = match seeds.get(p) {
            Some(seed) => seed.iter().zip(bounds).map(|(&x, b)| b.clamp(x)).collect(),
            None => bounds
                .iter()
                .map(|b| if b.lo < b.hi { rng.random_range(b.lo..=b.hi) } else { b.lo })
                .collect(),
        };
        let velocity = bounds
            .iter()
            .map(|b| {
                let range = b.hi - b.lo;
                if range > 0.0 { rng.random_range(-range..=range) } else { 0.0 }
            })
            .collect();
        let value = sanitize(objective(&position));
        evaluations += 1;
        swarm.push(Particle {
            personal_best_position: position.clone(),
            position,
            velocity,
            personal_best_value: value,
        });
    }

    let (mut best_index, mut best_value) = best_of(&swarm);
    let mut best_position = swarm[best_index].personal_best_position.clone();
    let mut stall = 0usize;
    let mut iterations = 0usize;
    let mut u1 = vec![0.0; dim];
    let mut u2 = vec![0.0; dim];

    let reached_limit = |v: f64| params.objective_limit.is_some_and(|limit| v <= limit);
    let swarm_size = swarm.len();
    let min_neighbors = params.topology.min_neighbors(swarm_size);
    let mut neighbors = min_neighbors;
    let mut attractors = vec![0usize; swarm_size];
    let mut social = if min_neighbors < swarm_size { vec![vec![0.0; dim]; swarm_size] } else { Vec::new() };

    while iterations < params.max_iterations && !reached_limit(best_value) {
        iterations += 1;
        let local = neighbors < swarm_size;
        if local {
            for (i, slot) in attractors.iter_mut().enumerate() {
                let mut pick = i;
                for j in rand::seq::index::sample(rng, swarm_size, neighbors) {
                    if swarm[j].personal_best_value < swarm[pick].personal_best_value {
                        pick = j;
                    }
                }
                *slot = pick;
            }
            for (target, &a) in social.iter_mut().zip(&attractors) {
                target.clone_from(&swarm[a].personal_best_position);
            }
        }
        for (i, particle) in swarm.iter_mut().enumerate() {
            u1.iter_mut().for_each(|u| *u = rng.random());
            u2.iter_mut().for_each(|u| *u = rng.random());
            let attractor = if local { &social[i] } else { &best_position };
            apply_update(particle, attractor, bounds, params, &u1, &u2);
            let value = sanitize(objective(&particle.position));
            evaluations += 1;
            particle.observe(value);
        }
        let (index, value) = best_of(&swarm);
        if best_value - value >= params.value_tolerance {
            stall = 0;
        } else {
            stall += 1;
        }
        if value < best_value {
            best_index = index;
            best_value = value;
            best_position.clone_from(&swarm[best_index].personal_best_position);
            neighbors = min_neighbors;
        } else {
            neighbors = (neighbors + min_neighbors).min(swarm_size);
        }
        if stall >= params.stall_iterations {
            break;
        }
    }

    Ok(PsoResult { best_position, best_value, evaluations, iterations })
}

/// Lowest personal best; the first particle wins ties.
fn best_of(swarm: &[Particle]) -> (usize, f64) {
    let mut best = (0, swarm[0].personal_best_value);
    for (i, p) in swarm.iter().enumerate().skip(1) {
        if p.personal_best_value < best.1 {
            best = (i, p.personal_best_value);
        }
    }
    best
}
