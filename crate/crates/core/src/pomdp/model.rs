//! Driving scenarios for the speed planner: the car follows a fixed path,
//! pedestrians move according to a sampled intention.

use super::belief::{Belief, BeliefParams};
use super::despot::{ScenarioModel, Step};
use crate::geometry::{Pose, Vec2};
use crate::planner::{extract_steering, Path};
use crate::sac::RewardParams;
use crate::world::{step_car, CarState, ControlAction, Intention, RoadLayout, SimParams, SpeedAction};
use rand::Rng;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioPed {
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrivingState {
    pub car: CarState,
    pub peds: Vec<ScenarioPed>,
    pub cars: Vec<CarState>,
}

pub struct DrivingModel<'a> {
    pub path: &'a Path,
    pub goal: Pose,
    pub layout: Arc<RoadLayout>,
    pub sim: &'a SimParams,
    pub reward: &'a RewardParams,
    pub macro_steps: usize,
    pub lookahead: f64,
    pub gamma: f64,
    /// Position quantum of observation keys (m).
    pub obs_quantum: f64,
}

fn mix(h: u64, v: i64) -> u64 {
    (h ^ v as u64).wrapping_mul(0x0000_0100_0000_01b3)
}

impl DrivingModel<'_> {
    fn macro_dt(&self) -> f64 {
        self.macro_steps as f64 * self.sim.dt
    }

    fn observation(&self, s: &DrivingState) -> u64 {
        let eye = s.car.pose.position();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (k, p) in s.peds.iter().enumerate() {
            h = mix(h, k as i64);
            if self.layout.occluded(eye, p.position) {
                h = mix(h, i64::MIN);
            } else {
                h = mix(h, (p.position.x / self.obs_quantum).round() as i64);
                h = mix(h, (p.position.y / self.obs_quantum).round() as i64);
            }
        }
        h
    }
}

impl ScenarioModel for DrivingModel<'_> {
    type State = DrivingState;

    fn step(&self, s: &DrivingState, action: SpeedAction) -> Step<DrivingState> {
        let dt = self.sim.dt;
        let keep = ControlAction::new(0.0, SpeedAction::Maintain);
        let mut state = s.clone();
        let mut total = 0.0;
        let mut terminal = false;
        for _ in 0..self.macro_steps {
            let steering = extract_steering(self.path, &state.car, self.lookahead, self.sim);
            let car = step_car(&state.car, &ControlAction::new(steering, action), dt, self.sim);
            for p in &mut state.peds {
                p.position = p.position + p.velocity * dt;
            }
            for c in &mut state.cars {
                *c = step_car(c, &keep, dt, self.sim);
            }
            let footprint = car.footprint(self.sim);
            let mut crash = state
                .cars
                .iter()
                .any(|c| footprint.intersects_rect(&c.footprint(self.sim)));
            let mut min_gap = f64::INFINITY;
            for p in &state.peds {
                let gap = footprint.distance_to_point(p.position) - self.sim.ped_radius;
                crash |= gap <= 0.0;
                min_gap = min_gap.min(gap);
            }
            let near_miss = !crash && min_gap < self.sim.d_near && car.speed > self.sim.v_near;
            let goal = car.pose.position().distance(self.goal.position()) < self.sim.goal_radius;
            let progress = self.path.arc_length_at(car.pose.position())
                - self.path.arc_length_at(state.car.pose.position());
            total += self.reward.terms(
                goal,
                crash,
                near_miss,
                progress,
                car.acceleration - state.car.acceleration,
            );
            state.car = car;
            if crash || goal {
                terminal = true;
                break;
            }
        }
        let obs = self.observation(&state);
        Step {
            next: state,
            reward: total.clamp(self.reward.min, self.reward.max),
            obs,
            terminal,
        }
    }

    fn upper_bound(&self, s: &DrivingState, remaining: usize) -> f64 {
        let reach = self.sim.v_max * self.macro_dt();
        let per_step = (self.reward.progress * reach
            + self.reward.time * self.macro_steps as f64)
            .min(self.reward.max);
        let to_goal = (s.car.pose.position().distance(self.goal.position()) - self.sim.goal_radius)
            .max(0.0);
        let goal_step = (to_goal / reach).ceil() as usize;
        let mut ub = 0.0;
        let mut discount = 1.0;
        for k in 0..remaining {
            ub += discount * per_step;
            if k + 1 >= goal_step.max(1) {
                ub += discount * self.reward.goal;
                break;
            }
            discount *= self.gamma;
        }
        ub
    }
}

fn ped_velocity(
    layout: &RoadLayout,
    p: Vec2,
    intention: Intention,
    walk_dir: f64,
    speed_factor: f64,
    params: &BeliefParams,
) -> Vec2 {
    match intention {
        Intention::Crossing => layout.crossing_direction(p) * (params.cross_speed * speed_factor),
        Intention::Stopping => Vec2::ZERO,
        Intention::Walking => Vec2::new(walk_dir * params.walk_speed * speed_factor, 0.0),
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    2
}

/// `k` equally weighted scenarios drawn from the belief: an intention per
/// tracked pedestrian, existence and intention per phantom, and a speed
/// factor in [0.7, 1.3] per moving pedestrian.
pub fn sample_scenarios<R: Rng + ?Sized>(
    belief: &Belief,
    car: &CarState,
    other_cars: &[CarState],
    layout: &RoadLayout,
    k: usize,
    params: &BeliefParams,
    rng: &mut R,
) -> Vec<(DrivingState, f64)> {
    (0..k)
        .map(|_| {
            let mut peds = vec![];
            for pb in &belief.peds {
                let i = Intention::ALL[sample_index(&pb.probs, rng)];
                let f = rng.random_range(0.7..1.3);
                peds.push(ScenarioPed {
                    position: pb.last_position,
                    velocity: ped_velocity(layout, pb.last_position, i, pb.walk_dir, f, params),
                });
            }
            for ph in &belief.phantoms {
                let exists = rng.random::<f64>() < ph.existence;
                let i = Intention::ALL[sample_index(&params.phantom_intentions, rng)];
                let f = rng.random_range(0.7..1.3);
                if exists {
                    peds.push(ScenarioPed {
                        position: ph.spawn,
                        velocity: ped_velocity(layout, ph.spawn, i, -1.0, f, params),
                    });
                }
            }
            (
                DrivingState {
                    car: *car,
                    peds,
                    cars: other_cars.to_vec(),
                },
                1.0 / k as f64,
            )
        })
        .collect()
}

/// Every joint intention assignment (and phantom presence) with its
/// probability under the belief; nominal speeds.
pub fn enumerate_scenarios(
    belief: &Belief,
    car: &CarState,
    other_cars: &[CarState],
    layout: &RoadLayout,
    params: &BeliefParams,
) -> Vec<(DrivingState, f64)> {
    let mut out = vec![(
        DrivingState {
            car: *car,
            peds: vec![],
            cars: other_cars.to_vec(),
        },
        1.0,
    )];
    for pb in &belief.peds {
        out = out
            .into_iter()
            .flat_map(|(s, w)| {
                Intention::ALL.iter().map(move |&i| {
                    let mut s = s.clone();
                    s.peds.push(ScenarioPed {
                        position: pb.last_position,
                        velocity: ped_velocity(layout, pb.last_position, i, pb.walk_dir, 1.0, params),
                    });
                    (s, w * pb.probs[i.index()])
                })
            })
            .collect();
    }
    for ph in &belief.phantoms {
        out = out
            .into_iter()
            .flat_map(|(s, w)| {
                let absent = (s.clone(), w * (1.0 - ph.existence));
                let present = Intention::ALL.iter().map(move |&i| {
                    let mut s = s.clone();
                    s.peds.push(ScenarioPed {
                        position: ph.spawn,
                        velocity: ped_velocity(layout, ph.spawn, i, -1.0, 1.0, params),
                    });
                    (s, w * ph.existence * params.phantom_intentions[i.index()])
                });
                std::iter::once(absent).chain(present)
            })
            .collect();
    }
    out.retain(|(_, w)| *w > 0.0);
    out
}
