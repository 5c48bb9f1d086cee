use super::{
    detect_events, ControlAction, EpisodeTrace, EventKind, Outcome, Scenario, SimParams,
    TraceState, WorldState,
};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// What a policy returns for one observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: ControlAction,
    /// Mean per-pose risk of the trajectory the policy intends to follow.
    pub planned_risk: f64,
    /// False when the policy only held an earlier decision.
    pub decided: bool,
}

/// Maps the observable world to a control action.
pub trait Policy {
    fn reset(&mut self, _scenario: &Scenario) {}

    fn decide(&mut self, observation: &WorldState) -> std::result::Result<Decision, String>;
}

/// Wraps a closure as a risk-free policy.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&WorldState) -> ControlAction> Policy for FnPolicy<F> {
    fn decide(&mut self, observation: &WorldState) -> std::result::Result<Decision, String> {
        Ok(Decision {
            action: (self.0)(observation),
            planned_risk: 0.0,
            decided: true,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeLimits {
    pub t_max: f64,
    /// Record wall-clock time per decision. Off makes traces bit-reproducible.
    pub time_decisions: bool,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self {
            t_max: 60.0,
            time_decisions: true,
        }
    }
}

fn snapshot(world: &WorldState, events: Vec<EventKind>) -> TraceState {
    TraceState {
        time: world.time,
        car: world.car,
        pedestrians: world.pedestrians.iter().map(|p| p.position).collect(),
        other_cars: world.other_cars.iter().map(|c| c.pose).collect(),
        events,
    }
}

/// Runs `policy` on `scenario` at a fixed step until crash, goal or timeout.
///
/// The policy only sees the observable state. Near misses are recorded but
/// do not end the episode.
/// World-noise generator for an episode of `scenario`.
pub fn episode_rng(scenario: &Scenario) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scenario.seed)
}

pub fn run_episode(
    scenario: &Scenario,
    policy: &mut dyn Policy,
    params: &SimParams,
    limits: &EpisodeLimits,
) -> Result<EpisodeTrace> {
    let mut rng = episode_rng(scenario);
    let mut world = WorldState::initial(scenario);
    policy.reset(scenario);

    let initial_events: Vec<EventKind> = detect_events(&world, params).into_iter().collect();
    let mut trace = EpisodeTrace {
        scenario_id: scenario.id.clone(),
        family: scenario.family,
        states: vec![snapshot(&world, initial_events.clone())],
        actions: vec![],
        planned_risk: vec![],
        decision_ms: vec![],
        decided: vec![],
        events: initial_events.iter().map(|e| (0.0, *e)).collect(),
        outcome: Outcome::Timeout,
        ttg: None,
    };

    let max_steps = (limits.t_max / params.dt).round() as usize;
    for _ in 0..max_steps {
        let observation = world.observe();
        let started = limits.time_decisions.then(Instant::now);
        let decision = policy.decide(&observation).map_err(|message| Error::Policy {
            time: world.time,
            message,
        })?;
        let elapsed = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);

        world = world.step(&decision.action, params, &mut rng);
        let events = detect_events(&world, params);
        trace.actions.push(decision.action);
        trace.planned_risk.push(decision.planned_risk);
        trace.decision_ms.push(elapsed);
        trace.decided.push(decision.decided);
        for e in &events {
            trace.events.push((world.time, *e));
        }
        trace
            .states
            .push(snapshot(&world, events.iter().copied().collect()));

        if events.contains(&EventKind::Crash) {
            trace.outcome = Outcome::Crash;
            return Ok(trace);
        }
        if events.contains(&EventKind::Goal) {
            trace.outcome = if trace.had_near_miss() {
                Outcome::NearMissGoal
            } else {
                Outcome::Goal
            };
            trace.ttg = Some(world.time);
            return Ok(trace);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::world::{PedBehavior, PedSpec, RoadLayout, ScenarioFamily, SpeedAction};
    use crate::geometry::Pose;

    fn empty_road(length: f64) -> Scenario {
        Scenario {
            id: "empty".into(),
            family: ScenarioFamily::CrossRight,
            layout: RoadLayout::straight_road(-20.0, length + 30.0),
            car_start: Pose::new(0.0, -1.75, 0.0),
            car_start_speed: 0.0,
            car_goal: Pose::new(length, -1.75, 0.0),
            ped_specs: vec![],
            incoming_car: None,
            seed: 5,
        }
    }

    fn accelerate() -> FnPolicy<impl FnMut(&WorldState) -> ControlAction> {
        FnPolicy(|_: &WorldState| ControlAction::new(0.0, SpeedAction::Accelerate))
    }

    #[test]
    fn always_accelerate_reaches_goal_in_analytic_time() {
        // Accelerate at a until v_max, cruise, stop counting once within
        // goal_radius of the goal.
        let params = SimParams::default();
        let length = 80.0;
        let trace = run_episode(
            &empty_road(length),
            &mut accelerate(),
            &params,
            &EpisodeLimits::default(),
        )
        .unwrap();
        assert_eq!(trace.outcome, Outcome::Goal);
        let a = SpeedAction::Accelerate.acceleration();
        let d = length - params.goal_radius;
        let t_ramp = params.v_max / a;
        let d_ramp = 0.5 * a * t_ramp * t_ramp;
        let expected = t_ramp + (d - d_ramp) / params.v_max;
        let ttg = trace.ttg.unwrap();
        assert!((ttg - expected).abs() <= params.dt + 1e-9, "ttg={ttg} expected={expected}");
    }

    #[test]
    fn head_on_pedestrian_is_a_crash() {
        let mut s = empty_road(80.0);
        s.car_start_speed = 6.0;
        s.ped_specs.push(PedSpec {
            spawn: Vec2::new(20.0, -1.75),
            speed: 1.0,
            crossing_distance: 20.0,
            trigger_distance: 0.0,
            behavior: PedBehavior::Stand,
            cross_direction: Vec2::new(0.0, 1.0),
            crossing_extent: 1.0,
            walk_velocity: Vec2::ZERO,
        });
        let mut keep = FnPolicy(|_: &WorldState| ControlAction::new(0.0, SpeedAction::Maintain));
        let trace =
            run_episode(&s, &mut keep, &SimParams::default(), &EpisodeLimits::default()).unwrap();
        assert_eq!(trace.outcome, Outcome::Crash);
        assert!(trace.ttg.is_none());
        assert_eq!(trace.events.last().unwrap().1, EventKind::Crash);
    }

    #[test]
    fn standing_still_times_out() {
        let mut stop = FnPolicy(|_: &WorldState| ControlAction::new(0.0, SpeedAction::HardBrake));
        let limits = EpisodeLimits {
            t_max: 60.0,
            time_decisions: false,
        };
        let trace = run_episode(&empty_road(80.0), &mut stop, &SimParams::default(), &limits)
            .unwrap();
        assert_eq!(trace.outcome, Outcome::Timeout);
        assert_eq!(trace.actions.len(), 600);
        assert!(trace.ttg.is_none());
    }

    #[test]
    fn policy_failure_aborts_with_diagnostic() {
        struct Failing;
        impl Policy for Failing {
            fn decide(&mut self, _: &WorldState) -> std::result::Result<Decision, String> {
                Err("boom".into())
            }
        }
        let err = run_episode(
            &empty_road(80.0),
            &mut Failing,
            &SimParams::default(),
            &EpisodeLimits::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Policy { .. }));
    }
}
