//! Seeded 2D driving simulator: kinematics, scripted pedestrians, event
//! detection and episode execution.

mod episode;
mod layout;
mod scenario;
mod trace;

pub use episode::{episode_rng, run_episode, Decision, EpisodeLimits, FnPolicy, Policy};
pub use layout::{CellClass, Lane, RoadLayout, LANE_WIDTH, SIDEWALK_WIDTH};
pub use scenario::{
    derive_seed, generate_scenarios, BenchmarkConfig, FamilyFile, FamilyGrid, IncomingCarSpec, PedBehavior, PedSpec,
    Scenario, ScenarioFamily, FAMILY_COUNT,
};
pub use trace::{read_trace, write_trace, EpisodeTrace, Outcome, TraceState};

use crate::geometry::{Pose, Rect, Vec2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

/// Simulator constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    pub t_max: f64,
    pub wheelbase: f64,
    pub v_max: f64,
    pub steer_max: f64,
    pub goal_radius: f64,
    pub d_near: f64,
    pub v_near: f64,
    pub car_length: f64,
    pub car_width: f64,
    pub ped_radius: f64,
    pub ped_v_max: f64,
    pub ped_noise_std: f64,
    pub history_len: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            t_max: 60.0,
            wheelbase: 2.7,
            v_max: 8.3,
            steer_max: 0.6,
            goal_radius: 2.0,
            d_near: 1.5,
            v_near: 1.0,
            car_length: 4.4,
            car_width: 1.8,
            ped_radius: 0.3,
            ped_v_max: 3.0,
            ped_noise_std: 0.05,
            history_len: 10,
        }
    }
}

/// Discrete longitudinal action shared by the speed planner and the learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeedAction {
    Accelerate,
    Maintain,
    Decelerate,
    HardBrake,
}

impl SpeedAction {
    pub const ALL: [SpeedAction; 4] = [
        SpeedAction::Accelerate,
        SpeedAction::Maintain,
        SpeedAction::Decelerate,
        SpeedAction::HardBrake,
    ];
    pub const COUNT: usize = 4;

    /// Commanded acceleration in m/s².
    pub fn acceleration(self) -> f64 {
        match self {
            SpeedAction::Accelerate => 1.5,
            SpeedAction::Maintain => 0.0,
            SpeedAction::Decelerate => -1.5,
            SpeedAction::HardBrake => -4.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SpeedAction> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub steering: f64,
    pub speed_action: SpeedAction,
}

impl ControlAction {
    pub fn new(steering: f64, speed_action: SpeedAction) -> Self {
        Self {
            steering,
            speed_action,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub pose: Pose,
    pub speed: f64,
    pub acceleration: f64,
    pub steering: f64,
}

impl CarState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            speed: 0.0,
            acceleration: 0.0,
            steering: 0.0,
        }
    }

    pub fn footprint(&self, params: &SimParams) -> Rect {
        Rect::footprint(&self.pose, params.car_length, params.car_width)
    }
}

/// Kinematic bicycle update. Heading and position advance explicitly from
/// the pre-step heading using the step's mean speed.
pub fn step_car(car: &CarState, action: &ControlAction, dt: f64, params: &SimParams) -> CarState {
    debug_assert!(dt > 0.0);
    let steering = action.steering.clamp(-params.steer_max, params.steer_max);
    let v = car.speed;
    let h = car.pose.heading;
    let speed = (v + action.speed_action.acceleration() * dt).clamp(0.0, params.v_max);
    // Mean speed over the step: exact travel for piecewise-constant acceleration.
    let v_mean = 0.5 * (v + speed);
    let heading = h + v_mean / params.wheelbase * steering.tan() * dt;
    let x = car.pose.x + v_mean * h.cos() * dt;
    let y = car.pose.y + v_mean * h.sin() * dt;
    CarState {
        pose: Pose::new(x, y, heading),
        speed,
        acceleration: (speed - v) / dt,
        steering,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intention {
    Crossing,
    Stopping,
    Walking,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Crossing, Intention::Stopping, Intention::Walking];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Scripted behavior of one pedestrian, derived from its scenario spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedScript {
    pub behavior: PedBehavior,
    pub speed: f64,
    pub trigger_distance: f64,
    pub cross_direction: Vec2,
    pub cross_extent: f64,
    pub walk_velocity: Vec2,
    pub triggered: bool,
    pub crossed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PedestrianState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub intention: Intention,
    pub history: VecDeque<Vec2>,
    pub script: PedScript,
}

impl PedestrianState {
    pub fn from_spec(id: usize, spec: &PedSpec) -> Self {
        let script = PedScript {
            behavior: spec.behavior,
            speed: spec.speed,
            trigger_distance: spec.trigger_distance,
            cross_direction: spec.cross_direction.normalized(),
            cross_extent: spec.crossing_extent,
            walk_velocity: spec.walk_velocity,
            triggered: false,
            crossed: 0.0,
        };
        let (intention, velocity) = untriggered_motion(&script);
        let mut history = VecDeque::new();
        history.push_back(spec.spawn);
        Self {
            id,
            position: spec.spawn,
            velocity,
            intention,
            history,
            script,
        }
    }
}

fn untriggered_motion(script: &PedScript) -> (Intention, Vec2) {
    match script.behavior {
        PedBehavior::Stand => (Intention::Stopping, Vec2::ZERO),
        _ if script.walk_velocity.norm() > 0.0 => (Intention::Walking, script.walk_velocity),
        _ => (Intention::Stopping, Vec2::ZERO),
    }
}

/// Advances one pedestrian by its intention script.
///
/// Pedestrians walk (or wait) until the car comes within the trigger
/// distance, then cross perpendicular to the road at their scenario speed.
pub fn step_pedestrian<R: Rng + ?Sized>(
    ped: &PedestrianState,
    world: &WorldState,
    dt: f64,
    params: &SimParams,
    rng: &mut R,
) -> PedestrianState {
    let mut next = ped.clone();
    let script = &mut next.script;
    let car_distance = ped.position.distance(world.car.pose.position());
    if !script.triggered
        && matches!(script.behavior, PedBehavior::Cross | PedBehavior::StopAtCurb)
        && car_distance < script.trigger_distance
    {
        script.triggered = true;
    }
    let (intention, mut velocity) = if script.behavior == PedBehavior::WalkAlong {
        (Intention::Walking, script.walk_velocity)
    } else if script.triggered {
        if script.crossed < script.cross_extent {
            (Intention::Crossing, script.cross_direction * script.speed)
        } else if script.behavior == PedBehavior::StopAtCurb {
            (Intention::Stopping, Vec2::ZERO)
        } else {
            (Intention::Walking, script.walk_velocity)
        }
    } else {
        untriggered_motion(script)
    };
    if params.ped_noise_std > 0.0 && velocity.norm() > 0.0 {
        let normal = Normal::new(0.0, params.ped_noise_std).expect("finite noise std");
        velocity = velocity + Vec2::new(normal.sample(rng), normal.sample(rng));
    }
    let speed = velocity.norm();
    if speed > params.ped_v_max {
        velocity = velocity * (params.ped_v_max / speed);
    }
    if intention == Intention::Crossing {
        script.crossed += velocity.dot(script.cross_direction).max(0.0) * dt;
    }
    next.intention = intention;
    next.velocity = velocity;
    next.position = ped.position + velocity * dt;
    next.history.push_back(next.position);
    while next.history.len() > params.history_len {
        next.history.pop_front();
    }
    next
}

/// Instantaneous traffic state. `layout` is shared, not owned.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub time: f64,
    pub car: CarState,
    pub pedestrians: Vec<PedestrianState>,
    pub other_cars: Vec<CarState>,
    pub layout: Arc<RoadLayout>,
    pub goal: Pose,
}

impl WorldState {
    pub fn initial(scenario: &Scenario) -> Self {
        let layout = Arc::new(scenario.layout.clone());
        let mut car = CarState::at_rest(scenario.car_start);
        car.speed = scenario.car_start_speed;
        Self {
            time: 0.0,
            car,
            pedestrians: scenario
                .ped_specs
                .iter()
                .enumerate()
                .map(|(i, s)| PedestrianState::from_spec(i, s))
                .collect(),
            other_cars: scenario
                .incoming_car
                .iter()
                .map(|c| CarState {
                    pose: c.start,
                    speed: c.speed,
                    acceleration: 0.0,
                    steering: 0.0,
                })
                .collect(),
            layout,
            goal: scenario.car_goal,
        }
    }

    /// The partially observable view: pedestrians hidden behind static
    /// obstacles, as seen from the car, are removed.
    pub fn observe(&self) -> WorldState {
        let eye = self.car.pose.position();
        let mut obs = self.clone();
        obs.pedestrians
            .retain(|p| !self.layout.occluded(eye, p.position));
        obs
    }

    pub fn is_visible(&self, p: Vec2) -> bool {
        !self.layout.occluded(self.car.pose.position(), p)
    }

    /// Advances the world by one fixed step.
    pub fn step<R: Rng + ?Sized>(
        &self,
        action: &ControlAction,
        params: &SimParams,
        rng: &mut R,
    ) -> WorldState {
        let dt = params.dt;
        let pedestrians = self
            .pedestrians
            .iter()
            .map(|p| step_pedestrian(p, self, dt, params, rng))
            .collect();
        let keep = ControlAction::new(0.0, SpeedAction::Maintain);
        WorldState {
            time: self.time + dt,
            car: step_car(&self.car, action, dt, params),
            pedestrians,
            other_cars: self
                .other_cars
                .iter()
                .map(|c| step_car(c, &keep, dt, params))
                .collect(),
            layout: Arc::clone(&self.layout),
            goal: self.goal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Crash,
    NearMiss,
    Goal,
}

/// Geometric event detection on one state.
pub fn detect_events(world: &WorldState, params: &SimParams) -> BTreeSet<EventKind> {
    let mut events = BTreeSet::new();
    let footprint = world.car.footprint(params);
    let mut crash = false;
    let mut min_gap = f64::INFINITY;
    for p in &world.pedestrians {
        let gap = footprint.distance_to_point(p.position) - params.ped_radius;
        if gap <= 0.0 {
            crash = true;
        }
        min_gap = min_gap.min(gap);
    }
    crash |= world
        .other_cars
        .iter()
        .any(|c| footprint.intersects_rect(&c.footprint(params)));
    crash |= world
        .layout
        .obstacles
        .iter()
        .any(|o| footprint.intersects_rect(o));
    if crash {
        events.insert(EventKind::Crash);
    } else if min_gap < params.d_near && world.car.speed > params.v_near {
        events.insert(EventKind::NearMiss);
    }
    if world.car.pose.position().distance(world.goal.position()) < params.goal_radius {
        events.insert(EventKind::Goal);
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize_angle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty_world(car: CarState) -> WorldState {
        WorldState {
            time: 0.0,
            car,
            pedestrians: vec![],
            other_cars: vec![],
            layout: Arc::new(RoadLayout::straight_road(-20.0, 200.0)),
            goal: Pose::new(150.0, -1.75, 0.0),
        }
    }

    fn ped_at(p: Vec2) -> PedestrianState {
        PedestrianState::from_spec(
            0,
            &PedSpec {
                spawn: p,
                speed: 1.5,
                crossing_distance: 30.0,
                trigger_distance: 15.0,
                behavior: PedBehavior::Cross,
                cross_direction: Vec2::new(0.0, 1.0),
                crossing_extent: 11.0,
                walk_velocity: Vec2::new(-0.3, 0.0),
            },
        )
    }

    #[test]
    fn straight_motion() {
        let params = SimParams::default();
        let mut car = CarState::at_rest(Pose::new(0.0, 0.0, 0.3));
        car.speed = 5.0;
        let next = step_car(&car, &ControlAction::new(0.0, SpeedAction::Maintain), 0.1, &params);
        let moved = next.pose.position().distance(car.pose.position());
        assert!((moved - 0.5).abs() < 1e-12);
        assert_eq!(next.pose.heading, 0.3);
        assert_eq!(next.speed, 5.0);
    }

    #[test]
    fn braking_at_rest_stays_at_rest() {
        let params = SimParams::default();
        let car = CarState::at_rest(Pose::default());
        for a in [SpeedAction::Decelerate, SpeedAction::HardBrake] {
            let next = step_car(&car, &ControlAction::new(0.0, a), 0.1, &params);
            assert_eq!(next.speed, 0.0);
            assert_eq!(next.acceleration, 0.0);
        }
    }

    #[test]
    fn speed_is_clamped_to_v_max() {
        let params = SimParams::default();
        let mut car = CarState::at_rest(Pose::default());
        car.speed = 8.2;
        let next = step_car(&car, &ControlAction::new(0.0, SpeedAction::Accelerate), 0.1, &params);
        assert_eq!(next.speed, params.v_max);
    }

    #[test]
    fn constant_steering_matches_circular_arc() {
        // Closed form: heading change (v/L)·tan(s)·T.
        let params = SimParams::default();
        let (v, s, t_total) = (4.0, 0.2, 2.0);
        let expected = v / params.wheelbase * f64::tan(s) * t_total;
        for dt in [0.1, 0.01, 0.001] {
            let mut car = CarState::at_rest(Pose::new(0.0, 0.0, 0.0));
            car.speed = v;
            let steps = (t_total / dt).round() as usize;
            let mut unwrapped = 0.0;
            for _ in 0..steps {
                let next = step_car(&car, &ControlAction::new(s, SpeedAction::Maintain), dt, &params);
                unwrapped += normalize_angle(next.pose.heading - car.pose.heading);
                car = next;
            }
            assert!((unwrapped - expected).abs() < 1e-9, "dt={dt}");
            // Position converges to the arc endpoint as dt -> 0.
            let r = params.wheelbase / f64::tan(s);
            let end = Vec2::new(r * expected.sin(), r * (1.0 - expected.cos()));
            let err = car.pose.position().distance(end);
            assert!(err < 2.0 * v * dt, "dt={dt} err={err}");
        }
    }

    #[test]
    fn pedestrian_walks_until_triggered_then_crosses() {
        let params = SimParams {
            ped_noise_std: 0.0,
            ..SimParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ped = ped_at(Vec2::new(40.0, -4.5));
        let far = empty_world(CarState::at_rest(Pose::new(0.0, -1.75, 0.0)));
        let next = step_pedestrian(&ped, &far, 0.1, &params, &mut rng);
        assert_eq!(next.intention, Intention::Walking);
        assert_eq!(next.velocity, Vec2::new(-0.3, 0.0));

        let near = empty_world(CarState::at_rest(Pose::new(30.0, -1.75, 0.0)));
        let next = step_pedestrian(&ped, &near, 0.1, &params, &mut rng);
        assert_eq!(next.intention, Intention::Crossing);
        assert_eq!(next.velocity.x, 0.0);
        assert!((next.velocity.y - 1.5).abs() < 1e-12);
    }

    #[test]
    fn pedestrian_trajectory_is_deterministic() {
        let params = SimParams::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut ped = ped_at(Vec2::new(40.0, -4.5));
            let world = empty_world(CarState::at_rest(Pose::new(30.0, -1.75, 0.0)));
            let mut out = vec![];
            for _ in 0..50 {
                ped = step_pedestrian(&ped, &world, 0.1, &params, &mut rng);
                out.push(ped.position);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn events_far_field_and_overlap() {
        let params = SimParams::default();
        let mut car = CarState::at_rest(Pose::new(0.0, -1.75, 0.0));
        car.speed = 4.0;
        let mut w = empty_world(car);
        w.pedestrians.push(ped_at(Vec2::new(10.0, -1.75)));
        assert!(detect_events(&w, &params).is_empty());
        w.pedestrians[0].position = Vec2::new(1.0, -1.5);
        assert_eq!(
            detect_events(&w, &params).into_iter().collect::<Vec<_>>(),
            vec![EventKind::Crash]
        );
    }

    #[test]
    fn near_miss_uses_rectangle_to_disc_gap() {
        // Half-length 2.2 + radius 0.3 + gap 1.0 puts the center 3.5 m ahead.
        let params = SimParams::default();
        let mut car = CarState::at_rest(Pose::new(0.0, -1.75, 0.0));
        car.speed = 4.0;
        let mut w = empty_world(car);
        w.pedestrians.push(ped_at(Vec2::new(3.5, -1.75)));
        let ev = detect_events(&w, &params);
        assert_eq!(ev.into_iter().collect::<Vec<_>>(), vec![EventKind::NearMiss]);
        // Same geometry at walking pace is not a near miss.
        w.car.speed = 0.5;
        assert!(detect_events(&w, &params).is_empty());
    }

    #[test]
    fn occluded_pedestrians_are_not_observed() {
        let layout = RoadLayout::straight_road(-20.0, 200.0)
            .with_obstacle(Rect::from_bounds(40.0, -5.3, 44.4, -3.5));
        let mut w = empty_world(CarState::at_rest(Pose::new(20.0, -1.75, 0.0)));
        w.layout = Arc::new(layout);
        w.pedestrians.push(ped_at(Vec2::new(44.8, -4.8)));
        w.pedestrians.push(ped_at(Vec2::new(44.8, -1.0)));
        let obs = w.observe();
        assert_eq!(obs.pedestrians.len(), 1);
        assert_eq!(w.pedestrians.len(), 2);
    }
}
