//! Interposed training: the hybrid agent drives episodes while speed actions
//! are drawn from a mixture of the planner's softmaxed action values and the
//! current policy, with the mixture weight annealed toward the policy.

use super::{reward, ActMode, Learner, Networks, Observation, ReplayBuffer, Transition};
use crate::error::Result;
use crate::hybrid::{AgentParams, PathMode, Tracker};
use crate::pomdp::SpeedPlannerParams;
use crate::world::{derive_seed, detect_events, ControlAction, EventKind, Scenario, SpeedAction, WorldState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    /// Decision steps (stored transitions) to collect.
    pub steps: u64,
    pub seed: u64,
    pub t_max: f64,
    /// Checkpoint callback period in steps; 0 disables.
    pub checkpoint_every: u64,
    /// Speed planner used for the interposed action values.
    pub planner: SpeedPlannerParams,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 2_000,
            seed: 0,
            t_max: 40.0,
            checkpoint_every: 500,
            planner: SpeedPlannerParams {
                scenarios: 8,
                depth: 6,
                max_expansions: 40,
                exhaustive: false,
                ..SpeedPlannerParams::default()
            },
        }
    }
}

/// One row per finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: u64,
    pub episode: usize,
    pub scenario_id: String,
    pub beta: f64,
    pub episode_return: f64,
    pub outcome: String,
    /// Mean losses over the updates made during the episode.
    pub j_v: Option<f64>,
    pub j_q: Option<f64>,
    pub j_pi: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub steps: u64,
    pub updates: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let f = |x: Option<f64>| x.map_or("nan".to_string(), |v| format!("{v:.6}"));
        let mut s = String::from("step,episode,scenario,beta,return,outcome,j_v,j_q,j_pi\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4},{:.4},{},{},{},{}\n",
                r.step,
                r.episode,
                r.scenario_id,
                r.beta,
                r.episode_return,
                r.outcome,
                f(r.j_v),
                f(r.j_q),
                f(r.j_pi)
            ));
        }
        s
    }
}

struct Pending {
    obs: Observation,
    action: SpeedAction,
    reward: f64,
}

/// Trains `learner` on `scenarios`, cycling through them in a seeded
/// shuffled order until `params.steps` transitions are stored.
/// `on_checkpoint(step, nets)` runs every `checkpoint_every` steps.
pub fn train(
    learner: &mut Learner,
    scenarios: &[Scenario],
    agent: &AgentParams,
    params: &TrainParams,
    on_checkpoint: &mut dyn FnMut(u64, &Networks) -> Result<()>,
) -> Result<TrainReport> {
    learner.params.validate()?;
    if scenarios.is_empty() {
        return Err(crate::Error::Config("no training scenarios".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut buffer = ReplayBuffer::new(learner.params.buffer_capacity);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = vec![];
    let mut episode = 0usize;
    let period = agent.decision_period.max(1);
    let max_steps = (params.t_max / agent.sim.dt).round() as usize;

    while report.steps < params.steps {
        if order.is_empty() {
            order = (0..scenarios.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let scenario = &scenarios[order.pop().expect("order")];
        let mut world_rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, params.seed, episode as u64, 1));
        let mut world = WorldState::initial(scenario);
        let mut obs = world.observe();
        let mut tracker = Tracker::new(&obs, agent);
        tracker.observe(&obs, agent);
        let mut pending: Option<Pending> = None;
        let mut ret = 0.0;
        let mut losses = vec![];
        let mut sim_steps = 0;
        let outcome;

        let mut store = |t: Transition, learner: &mut Learner, report: &mut TrainReport, losses: &mut Vec<_>, rng: &mut ChaCha8Rng| -> Result<()> {
            buffer.push(t);
            learner.train_steps += 1;
            report.steps += 1;
            let every = learner.params.update_every.max(1);
            if buffer.len() >= learner.params.batch_size && learner.train_steps % every == 0 {
                let batch = buffer.sample(learner.params.batch_size, rng);
                losses.push(learner.update(&batch)?);
                report.updates += 1;
            }
            if params.checkpoint_every > 0 && report.steps % params.checkpoint_every == 0 {
                on_checkpoint(report.steps, &learner.nets)?;
            }
            Ok(())
        };

        loop {
            tracker.start_decision(agent);
            tracker.replan(&obs, PathMode::Rulebook, agent)?;
            let o = tracker.encode(&obs, agent).expect("maps after replan");
            if let Some(p) = pending.take() {
                let t = Transition { obs: p.obs, action: p.action, reward: p.reward, next_obs: o.clone(), done: false };
                store(t, learner, &mut report, &mut losses, &mut rng)?;
                if report.steps >= params.steps {
                    outcome = "cut";
                    break;
                }
            }
            let seed = derive_seed(params.seed, episode as u64, tracker.steps as u64, 2);
            let values = tracker.plan_speed(&obs, &params.planner, agent, seed).values;
            let a = learner.act(&o, Some(&values), ActMode::Train, &mut rng)?;
            tracker.commit(a);

            let mut r = 0.0;
            let mut end = None;
            for k in 0..period {
                if k > 0 {
                    obs = world.observe();
                    tracker.observe(&obs, agent);
                }
                let steering = tracker.steering(&obs, agent);
                let next = world.step(&ControlAction::new(steering, tracker.speed_action), &agent.sim, &mut world_rng);
                let events = detect_events(&next, &agent.sim);
                let path = tracker.path.as_ref().expect("path after replan");
                r += reward(&world, &next, &events, path, &agent.reward);
                world = next;
                tracker.tick();
                sim_steps += 1;
                if events.contains(&EventKind::Crash) {
                    end = Some(("crash", true));
                } else if events.contains(&EventKind::Goal) {
                    end = Some(("goal", true));
                } else if sim_steps >= max_steps {
                    end = Some(("timeout", false));
                }
                if end.is_some() {
                    break;
                }
            }
            let r = r.clamp(agent.reward.min, agent.reward.max);
            ret += r;
            obs = world.observe();
            tracker.observe(&obs, agent);
            if let Some((name, done)) = end {
                tracker.start_decision(agent);
                let next_obs = tracker.encode(&obs, agent).expect("maps");
                let t = Transition { obs: o, action: tracker.speed_action, reward: r, next_obs, done };
                store(t, learner, &mut report, &mut losses, &mut rng)?;
                outcome = name;
                break;
            }
            pending = Some(Pending { obs: o, action: tracker.speed_action, reward: r });
        }

        let mean = |f: fn(&super::Losses) -> f64| {
            (!losses.is_empty()).then(|| losses.iter().map(f).sum::<f64>() / losses.len() as f64)
        };
        report.rows.push(TrainRow {
            step: report.steps,
            episode,
            scenario_id: scenario.id.clone(),
            beta: learner.beta(),
            episode_return: ret,
            outcome: outcome.into(),
            j_v: mean(|l| l.j_v),
            j_q: mean(|l| l.j_q),
            j_pi: mean(|l| l.j_pi),
        });
        episode += 1;
    }
    Ok(report)
}
