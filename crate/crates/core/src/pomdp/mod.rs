//! Online speed planning: intention belief tracking and a sparse
//! sampled-scenario belief-tree search along a fixed path.

mod belief;
mod despot;
mod model;

pub use belief::{intention_means, update_belief, Belief, BeliefParams, PedBelief, Phantom};
pub use despot::{search, ScenarioModel, Step, TreeParams, TreeResult};
pub use model::{enumerate_scenarios, sample_scenarios, DrivingModel, DrivingState, ScenarioPed};

use crate::planner::Path;
use crate::sac::RewardParams;
use crate::world::{SimParams, SpeedAction, WorldState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::Cell;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedPlannerParams {
    /// Number of sampled scenarios K.
    pub scenarios: usize,
    /// Tree depth D in macro steps.
    pub depth: usize,
    pub gamma: f64,
    /// Simulation steps per macro step.
    pub macro_steps: usize,
    pub max_expansions: usize,
    pub max_ms: Option<f64>,
    /// Use every joint intention assignment instead of sampling.
    pub exhaustive: bool,
    pub full_width: bool,
    pub obs_quantum: f64,
    pub belief: BeliefParams,
}

impl Default for SpeedPlannerParams {
    fn default() -> Self {
        Self {
            scenarios: 32,
            depth: 10,
            gamma: 0.99,
            macro_steps: 5,
            max_expansions: 100,
            max_ms: None,
            exhaustive: false,
            full_width: false,
            obs_quantum: 0.5,
            belief: BeliefParams::default(),
        }
    }
}

impl SpeedPlannerParams {
    pub fn tree(&self) -> TreeParams {
        TreeParams {
            depth: self.depth,
            gamma: self.gamma,
            max_expansions: self.max_expansions,
            max_ms: self.max_ms,
            full_width: self.full_width,
            gap_epsilon: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedPlan {
    pub action: SpeedAction,
    /// Root action values, indexed by [`SpeedAction::index`].
    pub values: [f64; 4],
    pub expansions: usize,
}

thread_local! {
    static PLAN_SPEED_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`plan_speed`] calls made on the current thread.
pub fn plan_speed_calls() -> u64 {
    PLAN_SPEED_CALLS.with(|c| c.get())
}

/// Speed action along `path` by belief-tree search over scenarios drawn
/// from `belief` (seeded by `seed`).
pub fn plan_speed(
    belief: &Belief,
    obs: &WorldState,
    path: &Path,
    params: &SpeedPlannerParams,
    sim: &SimParams,
    reward: &RewardParams,
    lookahead: f64,
    seed: u64,
) -> SpeedPlan {
    PLAN_SPEED_CALLS.with(|c| c.set(c.get() + 1));
    if path.poses.len() < 2 || params.depth == 0 {
        return SpeedPlan {
            action: SpeedAction::HardBrake,
            values: [0.0; 4],
            expansions: 0,
        };
    }
    let particles = if params.exhaustive {
        enumerate_scenarios(belief, &obs.car, &obs.other_cars, &obs.layout, &params.belief)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_scenarios(
            belief,
            &obs.car,
            &obs.other_cars,
            &obs.layout,
            params.scenarios.max(1),
            &params.belief,
            &mut rng,
        )
    };
    let model = DrivingModel {
        path,
        goal: obs.goal,
        layout: obs.layout.clone(),
        sim,
        reward,
        macro_steps: params.macro_steps,
        lookahead,
        gamma: params.gamma,
        obs_quantum: params.obs_quantum,
    };
    let r = search(&model, particles, &params.tree());
    SpeedPlan {
        action: r.action,
        values: r.values,
        expansions: r.expansions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::{CostMap, MapKind};
    use crate::geometry::{Pose, Vec2};
    use crate::world::{CarState, PedBehavior, PedSpec, PedestrianState, RoadLayout};
    use std::sync::Arc;

    fn setup(peds: &[Vec2], speed: f64) -> (WorldState, Path) {
        let layout = RoadLayout::straight_road(-20.0, 110.0);
        let map = CostMap::uniform(Vec2::new(-10.0, -10.0), 0.25, 480, 80, 1.0);
        let path = Path::straight(Vec2::new(0.0, -1.75), Vec2::new(80.0, -1.75), 1.0, &map, MapKind::Base);
        let mut car = CarState::at_rest(Pose::new(0.0, -1.75, 0.0));
        car.speed = speed;
        let world = WorldState {
            time: 0.0,
            car,
            pedestrians: peds
                .iter()
                .enumerate()
                .map(|(id, &p)| {
                    PedestrianState::from_spec(
                        id,
                        &PedSpec {
                            spawn: p,
                            speed: 1.2,
                            crossing_distance: 10.0,
                            trigger_distance: 10.0,
                            behavior: PedBehavior::Stand,
                            cross_direction: Vec2::new(0.0, 1.0),
                            crossing_extent: 10.0,
                            walk_velocity: Vec2::ZERO,
                        },
                    )
                })
                .collect(),
            other_cars: vec![],
            layout: Arc::new(layout),
            goal: Pose::new(80.0, -1.75, 0.0),
        };
        (world, path)
    }

    fn plan(belief: &Belief, w: &WorldState, path: &Path, p: &SpeedPlannerParams, seed: u64) -> SpeedPlan {
        plan_speed(belief, w, path, p, &SimParams::default(), &RewardParams::default(), 4.0, seed)
    }

    #[test]
    fn empty_road_accelerates() {
        let (w, path) = setup(&[], 2.0);
        let b = Belief::initial(&w, &BeliefParams::default());
        let r = plan(&b, &w, &path, &SpeedPlannerParams::default(), 1);
        assert_eq!(r.action, SpeedAction::Accelerate);
    }

    #[test]
    fn committed_crosser_ahead_rules_out_accelerating() {
        let (w, path) = setup(&[Vec2::new(12.0, -4.0)], 6.0);
        let mut b = Belief::initial(&w, &BeliefParams::default());
        b.peds[0].probs = [1.0, 0.0, 0.0];
        let p = SpeedPlannerParams {
            exhaustive: true,
            full_width: true,
            depth: 3,
            ..SpeedPlannerParams::default()
        };
        let r = plan(&b, &w, &path, &p, 0);
        let acc = r.values[SpeedAction::Accelerate.index()];
        assert!(r.values[SpeedAction::Decelerate.index()] > acc, "{:?}", r.values);
        assert!(r.values[SpeedAction::Maintain.index()] > acc, "{:?}", r.values);
        assert!(matches!(r.action, SpeedAction::HardBrake | SpeedAction::Decelerate));
    }

    #[test]
    fn values_are_bounded_and_deterministic() {
        let (w, path) = setup(&[Vec2::new(15.0, -4.5), Vec2::new(25.0, 4.5)], 5.0);
        let b = Belief::initial(&w, &BeliefParams::default());
        let p = SpeedPlannerParams::default();
        let a = plan(&b, &w, &path, &p, 9);
        let c = plan(&b, &w, &path, &p, 9);
        assert_eq!(a, c);
        let g: f64 = p.gamma;
        let span = (1.0 - g.powi(p.depth as i32)) / (1.0 - g);
        for v in a.values {
            assert!(v >= -100.0 * span && v <= 100.0 * span);
        }
    }

    #[test]
    fn call_counter_counts() {
        let (w, path) = setup(&[], 2.0);
        let b = Belief::initial(&w, &BeliefParams::default());
        let before = plan_speed_calls();
        plan(&b, &w, &path, &SpeedPlannerParams { depth: 2, ..Default::default() }, 1);
        assert_eq!(plan_speed_calls(), before + 1);
    }

    #[test]
    fn more_scenarios_reduce_value_variance() {
        let (w, path) = setup(&[Vec2::new(14.0, -4.0)], 6.0);
        let b = Belief::initial(&w, &BeliefParams::default());
        let variance = |k: usize| {
            let p = SpeedPlannerParams {
                scenarios: k,
                depth: 3,
                full_width: true,
                ..SpeedPlannerParams::default()
            };
            let xs: Vec<f64> = (0..40)
                .map(|s| plan(&b, &w, &path, &p, 1000 + s).values[SpeedAction::Maintain.index()])
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let (v2, v32) = (variance(2), variance(32));
        // F-test at 95% for 39/39 degrees of freedom: ratio > 1.70.
        assert!(v2 > 1.70 * v32, "var(K=2)={v2} var(K=32)={v32}");
    }
}
