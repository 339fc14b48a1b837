//! Property checks shared by the property suite and the acceptance target.
//! Each check runs a deterministic proptest runner and reports the first
//! minimal counterexample as an error string.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vform_core::ampc::{init_levels, Ampc, AmpcConfig, PredictionModel};
use vform_core::fitness::{clear_view, fitness, FitnessParams};
use vform_core::flock::{
    clamp_action, make_v_formation, remove_birds, sample_random_state, step_flock, ControlAction,
    Disturbance, DynamicsBounds, FlockState, Rect, VGeometry,
};
use vform_core::game::RunRecord;
use vform_core::pso::{pso_minimize, Bound, PsoParams};
use vform_core::smc::{estimate, run_seed, SmcPlan};
use vform_core::Vec2;

pub type Check = fn(u32) -> Result<(), String>;

/// Every shared property with its name.
pub const CHECKS: &[(&str, Check)] = &[
    ("step is pure and keeps speeds in bounds", step_is_pure_and_bounded),
    ("action clamp is idempotent", clamp_is_idempotent),
    ("removing a tip gives the smaller V", removing_tip_gives_smaller_v),
    ("fitness terms are non-negative", fitness_is_non_negative),
    ("fitness is invariant under rigid motion", fitness_rigid_motion_invariant),
    ("fitness is invariant under relabelling", fitness_permutation_invariant),
    ("clear view converges with ray count", clear_view_ray_refinement),
    ("pso global best is monotone and in bounds", pso_monotone_in_bounds),
    ("pso is deterministic per seed", pso_deterministic),
    ("ampc diagnostics respect the level rules", ampc_level_invariants),
    ("ampc is deterministic per seed", ampc_deterministic),
    ("smc is deterministic and order independent", smc_deterministic),
];

pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub fn vec2(range: f64) -> impl Strategy<Value = Vec2> {
    (-range..range, -range..range).prop_map(|(x, y)| Vec2::new(x, y))
}

pub fn vecs(n: usize, range: f64) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec(vec2(range), n)
}

/// Random flocks of `birds` birds in a 10 x 10 box with speeds below 2.
pub fn flock(birds: std::ops::Range<usize>) -> impl Strategy<Value = FlockState> {
    birds.prop_flat_map(|b| (vecs(b, 5.0), vecs(b, 1.4)))
        .prop_map(|(p, v)| FlockState::new(p, v).unwrap())
}

/// A flock together with per-bird accelerations and displacements.
fn flock_and_moves() -> impl Strategy<Value = (FlockState, Vec<Vec2>, Vec<Vec2>)> {
    flock(1..9).prop_flat_map(|s| {
        let b = s.bird_count();
        (Just(s), vecs(b, 3.0), vecs(b, 1.0))
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn step_is_pure_and_bounded(cases: u32) -> Result<(), String> {
    let bounds = DynamicsBounds::default();
    run(cases, flock_and_moves(), |(s, a, d)| {
        let before = s.clone();
        let action = clamp_action(&ControlAction { accelerations: a }, &s, &bounds).unwrap();
        let disturbance = Disturbance { displacements: d };
        let x = step_flock(&s, &action, &disturbance, &bounds).unwrap();
        let y = step_flock(&s, &action, &disturbance, &bounds).unwrap();
        prop_assert_eq!(&s, &before);
        prop_assert_eq!(&x, &y);
        for (i, v) in x.velocities.iter().enumerate() {
            let speed = v.norm();
            prop_assert!(speed <= bounds.v_max * (1.0 + 1e-12), "bird {} speed {}", i, speed);
            prop_assert!(speed >= bounds.v_min * (1.0 - 1e-12), "bird {} speed {}", i, speed);
            let expected = s.positions[i] + *v + disturbance.displacements[i];
            prop_assert!((x.positions[i] - expected).norm() < 1e-12);
        }
        Ok(())
    })
}

pub fn clamp_is_idempotent(cases: u32) -> Result<(), String> {
    let bounds = DynamicsBounds::default();
    run(cases, flock_and_moves(), |(s, a, _)| {
        let once = clamp_action(&ControlAction { accelerations: a }, &s, &bounds).unwrap();
        let twice = clamp_action(&once, &s, &bounds).unwrap();
        prop_assert_eq!(&once, &twice);
        for (a, v) in once.accelerations.iter().zip(&s.velocities) {
            prop_assert!(a.norm() <= bounds.rho * v.norm() * (1.0 + 1e-12));
        }
        Ok(())
    })
}

pub fn removing_tip_gives_smaller_v(cases: u32) -> Result<(), String> {
    let strategy = (2usize..16, 0.3..2.0f64, 0.2..1.2f64, -3.0..3.0f64);
    run(cases, strategy, |(b, gap, angle, heading)| {
        let geom = VGeometry { gap, wing_angle: angle, leader_velocity: Vec2::from_polar(1.0, heading), ..VGeometry::default() };
        let v = make_v_formation(b, &geom).unwrap();
        // the second wing is the longer one for even B; for odd B both wings
        // match and dropping the first tip moves the leader index down by one
        let tip = if b % 2 == 0 { b - 1 } else { 0 };
        let smaller = make_v_formation(b - 1, &geom).unwrap();
        let removed = remove_birds(&v, &[tip]).unwrap();
        prop_assert_eq!(removed.bird_count(), smaller.bird_count());
        for (p, q) in removed.positions.iter().zip(&smaller.positions) {
            prop_assert!((*p - *q).norm() < 1e-9, "{:?} vs {:?}", p, q);
        }
        prop_assert_eq!(&removed.velocities, &smaller.velocities);
        Ok(())
    })
}

pub fn fitness_is_non_negative(cases: u32) -> Result<(), String> {
    let params = FitnessParams::default();
    run(cases, flock(1..9), |s| {
        let f = fitness(&s, &params);
        let b = s.bird_count() as f64;
        prop_assert!(f.j >= 0.0 && f.cv >= 0.0 && f.vm >= 0.0 && f.ub >= 0.0);
        prop_assert!(f.cv <= b && f.ub <= b);
        prop_assert_eq!(f.j, f.cv.powi(2) + f.vm.powi(2) + (f.ub - 1.0).powi(2));
        prop_assert_eq!(fitness(&s, &params), f);
        Ok(())
    })
}

pub fn fitness_rigid_motion_invariant(cases: u32) -> Result<(), String> {
    let params = FitnessParams::default();
    let strategy = (flock(1..8), vec2(50.0), vec2(5.0), -std::f64::consts::PI..std::f64::consts::PI);
    run(cases, strategy, |(s, shift, center, angle)| {
        let f = fitness(&s, &params);
        let g = fitness(&s.translated(shift).rotated(center, angle), &params);
        prop_assert!(close(f.vm, g.vm, 1e-9), "vm {} vs {}", f.vm, g.vm);
        prop_assert!(close(f.ub, g.ub, 1e-9), "ub {} vs {}", f.ub, g.ub);
        // a ray grazing a wing tip may flip under rounding
        let slack = s.bird_count() as f64 * 2.0 / params.view_ray_count as f64;
        prop_assert!((f.cv - g.cv).abs() <= slack, "cv {} vs {}", f.cv, g.cv);
        Ok(())
    })
}

pub fn fitness_permutation_invariant(cases: u32) -> Result<(), String> {
    let params = FitnessParams::default();
    let strategy = flock(1..8).prop_flat_map(|s| {
        let b = s.bird_count();
        (Just(s), Just((0..b).collect::<Vec<_>>()).prop_shuffle())
    });
    run(cases, strategy, |(s, order)| {
        let permuted = FlockState::new(
            order.iter().map(|&i| s.positions[i]).collect(),
            order.iter().map(|&i| s.velocities[i]).collect(),
        )
        .unwrap();
        let f = fitness(&s, &params);
        let g = fitness(&permuted, &params);
        prop_assert!(close(f.vm, g.vm, 1e-12) && close(f.ub, g.ub, 1e-12) && close(f.cv, g.cv, 1e-12));
        Ok(())
    })
}

pub fn clear_view_ray_refinement(cases: u32) -> Result<(), String> {
    run(cases, flock(2..7), |s| {
        let coarse = FitnessParams { view_ray_count: 64, ..FitnessParams::default() };
        let fine = FitnessParams { view_ray_count: 128, ..FitnessParams::default() };
        // each blocked arc is counted to within one ray at either resolution,
        // once per blocker end
        let bound = 2.0 * (s.bird_count() - 1) as f64 * (1.0 / 64.0 + 1.0 / 128.0);
        let diff = (clear_view(&s, &coarse) - clear_view(&s, &fine)).abs();
        prop_assert!(diff <= s.bird_count() as f64 * bound, "difference {}", diff);
        Ok(())
    })
}

fn sphere_problem() -> impl Strategy<Value = (Vec<f64>, Vec<Bound>, u64)> {
    (1usize..6).prop_flat_map(|dim| {
        (
            prop::collection::vec(-3.0..3.0f64, dim),
            prop::collection::vec((-5.0..-0.5f64, 0.5..5.0f64), dim),
            any::<u64>(),
        )
            .prop_map(|(center, b, seed)| (center, b.into_iter().map(|(lo, hi)| Bound::new(lo, hi)).collect(), seed))
    })
}

pub fn pso_monotone_in_bounds(cases: u32) -> Result<(), String> {
    run(cases, sphere_problem(), |(center, bounds, seed)| {
        let params = PsoParams { particle_count: 12, max_iterations: 30, ..PsoParams::default() };
        let mut values = Vec::new();
        let mut positions = Vec::new();
        let result = pso_minimize(
            |x: &[f64]| {
                let v: f64 = x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum();
                values.push(v);
                positions.push(x.to_vec());
                v
            },
            &bounds,
            &params,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        for x in &positions {
            for (v, b) in x.iter().zip(&bounds) {
                prop_assert!(b.lo <= *v && *v <= b.hi, "{} outside [{}, {}]", v, b.lo, b.hi);
            }
        }
        // the best value never exceeds anything seen so far, in particular
        // the initial swarm, and equals the minimum over all evaluations
        let initial = values[..params.particle_count].iter().copied().fold(f64::INFINITY, f64::min);
        let seen = values.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(result.best_value <= initial);
        prop_assert_eq!(result.best_value, seen);
        prop_assert_eq!(result.evaluations, values.len());
        Ok(())
    })
}

pub fn pso_deterministic(cases: u32) -> Result<(), String> {
    run(cases, sphere_problem(), |(center, bounds, seed)| {
        let params = PsoParams { particle_count: 10, max_iterations: 20, ..PsoParams::default() };
        let f = |x: &[f64]| x.iter().zip(&center).map(|(a, c)| (a - c).abs()).sum::<f64>();
        let a = pso_minimize(f, &bounds, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = pso_minimize(f, &bounds, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

/// A cheap controller configuration for property runs.
pub fn small_ampc() -> AmpcConfig {
    let mut config = AmpcConfig { h_max: 3, m: 10, beta: 2, ..AmpcConfig::default() };
    config.pso.max_iterations = 15;
    config.pso.stall_iterations = 5;
    config
}

fn random_flock(birds: usize, seed: u64) -> FlockState {
    let region = Rect::new(Vec2::ZERO, Vec2::new(3.0, 3.0));
    sample_random_state(birds, &region, (0.5, 1.0), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn ampc_level_invariants(cases: u32) -> Result<(), String> {
    let params = FitnessParams::default();
    let bounds = DynamicsBounds::default();
    let config = small_ampc();
    run(cases, (2usize..5, any::<u64>()), |(birds, seed)| {
        let mut state = random_flock(birds, seed);
        let model = PredictionModel::controller(bounds);
        let mut ampc = Ampc::new(config.clone(), model, params.clone(), ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for _ in 0..4 {
            let d = ampc.next_action(&state).unwrap();
            let diag = &d.diagnostics;
            if diag.is_short_circuit() {
                break;
            }
            prop_assert!(diag.threshold > 0.0);
            prop_assert!((1..=config.h_max).contains(&diag.h_tried));
            prop_assert!((1..=diag.h_tried).contains(&diag.best_horizon));
            prop_assert_eq!(diag.particle_counts.len(), diag.h_tried);
            for (k, &p) in diag.particle_counts.iter().enumerate() {
                prop_assert_eq!(p, 2 * config.beta * birds * (k + 1));
            }
            let gained = diag.level_value - diag.best_horizon_fitness > diag.threshold;
            prop_assert_eq!(diag.improved, gained);
            prop_assert!(diag.improved || diag.h_tried == config.h_max);
            prop_assert_eq!(d.levels.map(|l| l.horizon), Some(1));
            for (a, v) in d.action.iter().zip(&state.velocities) {
                prop_assert!(a.norm() <= bounds.rho * v.norm() * (1.0 + 1e-12));
            }
            let action = ControlAction { accelerations: d.action.clone() };
            state = step_flock(&state, &action, &Disturbance::zero(birds), &bounds).unwrap();
            ampc.observe(fitness(&state, &params).j);
        }
        Ok(())
    })
}

pub fn ampc_deterministic(cases: u32) -> Result<(), String> {
    let params = FitnessParams::default();
    let config = small_ampc();
    run(cases, (2usize..5, any::<u64>()), |(birds, seed)| {
        let state = random_flock(birds, seed);
        let levels = init_levels(fitness(&state, &params).j, &config);
        let Some(levels) = levels else { return Ok(()) };
        let model = PredictionModel::controller(DynamicsBounds::default());
        let decide = || {
            vform_core::ampc::ampc_next_action(&state, &levels, &model, &config, &params, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
        };
        prop_assert_eq!(decide(), decide());
        Ok(())
    })
}

fn fake_record(seed: u64) -> RunRecord {
    let won = splitmix_bit(seed);
    RunRecord {
        won,
        steps_to_v: won.then_some((seed % 11) as usize),
        avg_horizon: Some(1.0 + (seed % 5) as f64 / 4.0),
        avg_horizon_tried: None,
        macro_steps: (seed % 13) as usize,
        fitness_trajectory: vec![(seed % 100) as f64],
        goal_window_start: 0,
        removed: vec![],
        seed,
        wall_time: 0.0,
    }
}

fn splitmix_bit(seed: u64) -> bool {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 63 == 1
}

pub fn smc_deterministic(cases: u32) -> Result<(), String> {
    run(cases, (1u64..60, any::<u64>(), 2usize..5), |(n, master, threads)| {
        let mut plan = SmcPlan::with_samples(0.1, 0.01, n, master).unwrap();
        plan.parallelism = 1;
        let serial = estimate(|s| Ok(fake_record(s)), &plan).unwrap();
        plan.parallelism = threads;
        let parallel = estimate(|s| Ok(fake_record(s)), &plan).unwrap();
        prop_assert_eq!(&serial, &parallel);
        for (i, r) in serial.run_records.iter().enumerate() {
            prop_assert_eq!(r.seed, run_seed(master, i as u64));
        }
        prop_assert_eq!(serial.wins as usize, serial.run_records.iter().filter(|r| r.won).count());
        Ok(())
    })
}
