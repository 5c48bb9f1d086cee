//! The hybrid agent loop shared by training and evaluation: belief
//! tracking, cost maps, k paths, rule-based path selection and steering.
//! The speed decision is left to the caller.

use crate::costmap::{CostMap, CostParams, MapKind, PlanningMaps};
use crate::error::Result;
use crate::geometry::Vec2;
use crate::planner::{extract_steering, plan_k_paths, Path, PlannerParams};
use crate::pomdp::{plan_speed, update_belief, Belief, SpeedPlan, SpeedPlannerParams};
use crate::risk::{path_risk, PathRisk, RiskParams, RiskScene};
use crate::rulebook::{score_violations, select_path, Candidate, RulebookParams};
use crate::sac::{encode_observation, reward, ObsParams, Observation, RewardParams};
use crate::world::{detect_events, SimParams, SpeedAction, WorldState};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Every parameter the agent needs besides the learner weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    pub sim: SimParams,
    pub cost: CostParams,
    pub planner: PlannerParams,
    pub risk: RiskParams,
    pub rulebook: RulebookParams,
    pub speed: SpeedPlannerParams,
    pub reward: RewardParams,
    pub obs: ObsParams,
    /// Simulation steps per decision; paths and speed actions are held in between.
    pub decision_period: usize,
    /// Car positions kept for the past-path channel.
    pub car_history: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            sim: SimParams::default(),
            cost: CostParams::default(),
            planner: PlannerParams::default(),
            risk: RiskParams::default(),
            rulebook: RulebookParams::default(),
            speed: SpeedPlannerParams::default(),
            reward: RewardParams::default(),
            obs: ObsParams::default(),
            decision_period: 5,
            car_history: 20,
        }
    }
}

/// Where the followed path comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathMode {
    /// Three cost maps, three searches, rulebook selection.
    Rulebook,
    /// One search on the base map.
    BaseOnly,
    /// Straight lane-center route, no search.
    Lane,
}

/// Per-episode agent state.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub belief: Belief,
    pub car_history: VecDeque<Vec2>,
    pub maps: Option<PlanningMaps>,
    pub path: Option<Path>,
    pub risk: f64,
    /// Set when no path could be planned at the last decision.
    pub blocked: bool,
    pub speed_action: SpeedAction,
    pub prev_action: Option<SpeedAction>,
    /// Reward accumulated from observations since the last decision.
    pub pending_reward: f64,
    pub last_reward: f64,
    pub steps: usize,
    last_obs: Option<WorldState>,
    lane: Option<Path>,
}

fn lane_path(obs: &WorldState) -> Path {
    let start = Vec2::new(obs.car.pose.x, obs.goal.y);
    let (x0, y0, x1, y1) = obs.layout.bounds;
    let map = CostMap::uniform(Vec2::new(x0, y0), 1.0, (x1 - x0).ceil() as usize + 1, (y1 - y0).ceil() as usize + 1, 1.0);
    Path::straight(start, obs.goal.position(), 1.0, &map, MapKind::Base)
}

/// Scored path candidates, one per cost map with a feasible search.
pub fn rulebook_candidates(obs: &WorldState, maps: &PlanningMaps, params: &AgentParams) -> Vec<Candidate> {
    let scene = RiskScene::from_observation(obs, &maps.prediction, (params.sim.car_length, params.sim.car_width), &params.risk);
    let Ok(k) = plan_k_paths(maps, &obs.car.pose, &obs.goal, &params.planner) else {
        return vec![];
    };
    k.paths
        .into_iter()
        .map(|path| {
            let risk = path_risk(&path, obs.car.speed, &scene, &params.risk);
            let violations = score_violations(&path, &risk, maps.get(path.source_map), &obs.layout, &params.rulebook);
            Candidate { path, risk, violations }
        })
        .collect()
}

impl Tracker {
    pub fn new(first: &WorldState, params: &AgentParams) -> Self {
        Self {
            belief: Belief::initial(first, &params.speed.belief),
            car_history: VecDeque::new(),
            maps: None,
            path: None,
            risk: 0.0,
            blocked: false,
            speed_action: SpeedAction::Maintain,
            prev_action: None,
            pending_reward: 0.0,
            last_reward: 0.0,
            steps: 0,
            last_obs: None,
            lane: None,
        }
    }

    /// Belief, history and observed-reward bookkeeping for a new observation.
    pub fn observe(&mut self, obs: &WorldState, params: &AgentParams) {
        if let Some(prev) = &self.last_obs {
            let dt = obs.time - prev.time;
            if dt > 0.0 {
                self.belief = update_belief(&self.belief, obs, dt, &params.speed.belief);
            }
            if let Some(path) = &self.path {
                let events = detect_events(obs, &params.sim);
                self.pending_reward += reward(prev, obs, &events, path, &params.reward);
            }
        }
        self.car_history.push_back(obs.car.pose.position());
        while self.car_history.len() > params.car_history {
            self.car_history.pop_front();
        }
        self.last_obs = Some(obs.clone());
    }

    pub fn decision_due(&self, params: &AgentParams) -> bool {
        self.steps % params.decision_period.max(1) == 0
    }

    /// Closes the reward window of the previous decision.
    pub fn start_decision(&mut self, params: &AgentParams) {
        self.last_reward = self
            .pending_reward
            .clamp(params.reward.min, params.reward.max);
        self.pending_reward = 0.0;
    }

    /// Plans and selects the path to follow until the next decision.
    pub fn replan(&mut self, obs: &WorldState, mode: PathMode, params: &AgentParams) -> Result<()> {
        self.blocked = false;
        if mode == PathMode::Lane {
            let lane = self.lane.get_or_insert_with(|| lane_path(obs)).clone();
            let ahead = trim_ahead(&lane, obs, params.planner.local_goal_distance);
            let pred = crate::costmap::predict_pedestrians(
                &obs.pedestrians,
                &obs.layout,
                params.cost.horizon_steps,
                params.cost.step_dt,
            );
            let scene = self.scene(obs, &pred, params);
            self.risk = path_risk(&ahead, obs.car.speed, &scene, &params.risk).mean;
            self.path = Some(lane);
            return Ok(());
        }
        let maps = PlanningMaps::build(obs, &params.cost)?;
        let scene = self.scene(obs, &maps.prediction, params);
        let planned = match mode {
            PathMode::Rulebook => {
                let candidates = rulebook_candidates(obs, &maps, params);
                select_path(&candidates, &params.rulebook).map(|c| (c.path.clone(), c.risk.clone()))
            }
            _ => {
                let goal = crate::planner::local_goal(&maps.base, &obs.car.pose, &obs.goal, params.planner.local_goal_distance);
                crate::planner::plan_path(
                    &maps.base,
                    &obs.car.pose,
                    &goal,
                    &params.planner.budget,
                    &params.planner.lattice,
                    MapKind::Base,
                )
                .ok()
                .map(|r| {
                    let risk = path_risk(&r.path, obs.car.speed, &scene, &params.risk);
                    (r.path, risk)
                })
            }
        };
        match planned {
            Some((path, risk)) => {
                self.risk = risk.mean;
                self.path = Some(path);
            }
            None => {
                self.blocked = true;
                let fallback = match self.path.take() {
                    Some(p) if p.poses.len() >= 2 => p,
                    _ => lane_path(obs),
                };
                let risk: PathRisk = path_risk(&trim_ahead(&fallback, obs, params.planner.local_goal_distance), obs.car.speed, &scene, &params.risk);
                self.risk = risk.mean;
                self.path = Some(fallback);
            }
        }
        self.maps = Some(maps);
        Ok(())
    }

    fn scene(&self, obs: &WorldState, pred: &crate::costmap::PredictedOccupancy, params: &AgentParams) -> RiskScene {
        RiskScene::from_observation(obs, pred, (params.sim.car_length, params.sim.car_width), &params.risk)
    }

    pub fn steering(&self, obs: &WorldState, params: &AgentParams) -> f64 {
        match &self.path {
            Some(p) if p.poses.len() >= 2 => extract_steering(p, &obs.car, params.planner.lookahead, &params.sim),
            _ => 0.0,
        }
    }

    /// Speed planner decision along the current path.
    pub fn plan_speed(&self, obs: &WorldState, speed: &SpeedPlannerParams, params: &AgentParams, seed: u64) -> SpeedPlan {
        let empty;
        let path = match &self.path {
            Some(p) => p,
            None => {
                empty = lane_path(obs);
                &empty
            }
        };
        plan_speed(&self.belief, obs, path, speed, &params.sim, &params.reward, params.planner.lookahead, seed)
    }

    /// Learner observation for the current path and maps; `None` before the
    /// first map build.
    pub fn encode(&self, obs: &WorldState, params: &AgentParams) -> Option<Observation> {
        let maps = self.maps.as_ref()?;
        let path = self.path.as_ref()?;
        let history: Vec<Vec2> = self.car_history.iter().copied().collect();
        Some(encode_observation(
            obs,
            maps,
            path,
            &history,
            self.last_reward,
            self.prev_action,
            &params.obs,
        ))
    }

    /// Records the chosen speed action; a blocked decision brakes hard.
    pub fn commit(&mut self, action: SpeedAction) {
        let action = if self.blocked { SpeedAction::HardBrake } else { action };
        self.prev_action = Some(action);
        self.speed_action = action;
    }

    pub fn tick(&mut self) {
        self.steps += 1;
    }
}

/// The part of `path` from the car's projection up to `distance` ahead.
fn trim_ahead(path: &Path, obs: &WorldState, distance: f64) -> Path {
    let start = path.closest_index(obs.car.pose.position());
    let mut poses = vec![];
    let mut s = 0.0;
    for (k, p) in path.poses[start..].iter().enumerate() {
        if k > 0 {
            s += path.poses[start + k - 1].position().distance(p.position());
        }
        if s > distance {
            break;
        }
        poses.push(*p);
    }
    Path {
        pose_costs: vec![0.0; poses.len()],
        poses,
        total_cost: 0.0,
        length: s.min(distance),
        source_map: path.source_map,
    }
}
