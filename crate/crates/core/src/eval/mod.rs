//! Benchmark execution, metrics and result files.

mod metrics;
mod output;

pub use metrics::{comfort, compute_metrics, FamilyMetrics, MetricParams, Metrics};
pub use output::{
    bar_chart_svg, family_csv, load_traces, metrics_csv, write_charts, write_traces, CSV_HEADER,
};

use crate::error::{Error, Result};
use crate::hybrid::{AgentParams, PathMode, Tracker};
use crate::sac::{greedy_action, Networks};
use crate::world::{
    derive_seed, run_episode, ControlAction, Decision, EpisodeLimits, EpisodeTrace, Policy,
    Scenario, ScenarioFamily, SpeedAction, WorldState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Rulebook path plus learned speed policy.
    Hylear,
    /// Rulebook path plus online speed planner.
    PlannerOnly,
    /// Learned speed policy on a single base-map path.
    LearnerOnly,
    AlwaysAccelerate,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Hylear,
        PolicyKind::PlannerOnly,
        PolicyKind::LearnerOnly,
        PolicyKind::AlwaysAccelerate,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Hylear => "hylear",
            PolicyKind::PlannerOnly => "planner-only",
            PolicyKind::LearnerOnly => "learner-only",
            PolicyKind::AlwaysAccelerate => "always-accelerate",
            PolicyKind::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, PolicyKind::Hylear | PolicyKind::LearnerOnly)
    }

    pub fn path_mode(self) -> PathMode {
        match self {
            PolicyKind::Hylear | PolicyKind::PlannerOnly => PathMode::Rulebook,
            PolicyKind::LearnerOnly => PathMode::BaseOnly,
            PolicyKind::AlwaysAccelerate | PolicyKind::Random => PathMode::Lane,
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A closed-loop agent for one of the benchmark policies.
pub struct AgentPolicy {
    kind: PolicyKind,
    params: Arc<AgentParams>,
    nets: Option<Arc<Networks>>,
    tracker: Option<Tracker>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl AgentPolicy {
    pub fn new(kind: PolicyKind, params: Arc<AgentParams>, nets: Option<Arc<Networks>>) -> Result<Self> {
        if kind.needs_checkpoint() && nets.is_none() {
            return Err(Error::Config(format!("policy {kind} requires a checkpoint")));
        }
        Ok(Self {
            kind,
            params,
            nets,
            tracker: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            seed: 0,
        })
    }

    fn choose(&mut self, obs: &WorldState) -> Result<SpeedAction> {
        let params = &*self.params;
        let tracker = self.tracker.as_mut().expect("tracker");
        tracker.start_decision(params);
        tracker.replan(obs, self.kind.path_mode(), params)?;
        Ok(match self.kind {
            PolicyKind::PlannerOnly => {
                let seed = derive_seed(self.seed, tracker.steps as u64, 0, 0);
                tracker.plan_speed(obs, &params.speed, params, seed).action
            }
            PolicyKind::Hylear | PolicyKind::LearnerOnly => {
                let o = tracker
                    .encode(obs, params)
                    .ok_or_else(|| Error::Config("no cost maps for the learner".into()))?;
                greedy_action(self.nets.as_ref().expect("checkpoint"), &o)
            }
            PolicyKind::AlwaysAccelerate => SpeedAction::Accelerate,
            PolicyKind::Random => SpeedAction::ALL[self.rng.random_range(0..SpeedAction::COUNT)],
        })
    }
}

impl Policy for AgentPolicy {
    fn reset(&mut self, scenario: &Scenario) {
        self.tracker = None;
        self.seed = derive_seed(scenario.seed, 0x5eed, self.kind as u64, 0);
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn decide(&mut self, obs: &WorldState) -> std::result::Result<Decision, String> {
        let params = Arc::clone(&self.params);
        let tracker = self.tracker.get_or_insert_with(|| Tracker::new(obs, &params));
        tracker.observe(obs, &params);
        let decided = tracker.decision_due(&params);
        if decided {
            let a = self.choose(obs).map_err(|e| e.to_string())?;
            self.tracker.as_mut().expect("tracker").commit(a);
        }
        let tracker = self.tracker.as_mut().expect("tracker");
        let steering = tracker.steering(obs, &params);
        tracker.tick();
        Ok(Decision {
            action: ControlAction::new(steering, tracker.speed_action),
            planned_risk: tracker.risk,
            decided,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub policies: Vec<PolicyKind>,
    pub t_max: f64,
    /// Wall-clock decision timing; off makes every output reproducible.
    pub time_decisions: bool,
    pub parallel: bool,
    pub metrics: MetricParams,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            t_max: 60.0,
            time_decisions: true,
            parallel: true,
            metrics: MetricParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyResult {
    pub kind: PolicyKind,
    pub metrics: Metrics,
    pub traces: Vec<EpisodeTrace>,
}

/// Families present in `scenarios`, sorted.
pub fn families_of(scenarios: &[Scenario]) -> Vec<ScenarioFamily> {
    let mut f: Vec<ScenarioFamily> = scenarios.iter().map(|s| s.family).collect();
    f.sort();
    f.dedup();
    f
}

/// Runs one policy over every scenario; traces come back in scenario order.
pub fn run_policy(
    kind: PolicyKind,
    scenarios: &[Scenario],
    agent: &Arc<AgentParams>,
    nets: Option<&Arc<Networks>>,
    eval: &EvalParams,
) -> Result<Vec<EpisodeTrace>> {
    AgentPolicy::new(kind, Arc::clone(agent), nets.cloned())?;
    let limits = EpisodeLimits {
        t_max: eval.t_max,
        time_decisions: eval.time_decisions,
    };
    let one = |s: &Scenario| -> Result<EpisodeTrace> {
        let mut p = AgentPolicy::new(kind, Arc::clone(agent), nets.cloned())?;
        run_episode(s, &mut p, &agent.sim, &limits)
    };
    #[cfg(feature = "parallel")]
    if eval.parallel {
        use rayon::prelude::*;
        return scenarios.par_iter().map(one).collect();
    }
    scenarios.iter().map(one).collect()
}

/// Runs every configured policy and computes its metrics.
pub fn run_benchmark(
    scenarios: &[Scenario],
    agent: &AgentParams,
    nets: Option<Arc<Networks>>,
    eval: &EvalParams,
) -> Result<Vec<PolicyResult>> {
    if scenarios.is_empty() {
        return Err(Error::Config("no scenarios to evaluate".into()));
    }
    if eval.policies.is_empty() {
        return Err(Error::Config("no policies to evaluate".into()));
    }
    if let Some(k) = eval.policies.iter().find(|k| k.needs_checkpoint()) {
        if nets.is_none() {
            return Err(Error::Config(format!("policy {k} requires a checkpoint")));
        }
    }
    let agent = Arc::new(agent.clone());
    let families = families_of(scenarios);
    eval.policies
        .iter()
        .map(|&kind| {
            let traces = run_policy(kind, scenarios, &agent, nets.as_ref(), eval)?;
            let metrics = compute_metrics(&traces, &families, &eval.metrics)?;
            Ok(PolicyResult { kind, metrics, traces })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_scenarios, BenchmarkConfig, Outcome};

    fn scenarios(f: ScenarioFamily) -> Vec<Scenario> {
        generate_scenarios(&BenchmarkConfig::for_families(&[f], 3, &[1.2], &[30.0])).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(PolicyKind::from_name(k.name()), Some(k));
        }
        assert_eq!(PolicyKind::from_name("nope"), None);
    }

    #[test]
    fn learner_policies_need_weights() {
        let s = scenarios(ScenarioFamily::CrossRight);
        let eval = EvalParams {
            policies: vec![PolicyKind::Hylear],
            ..EvalParams::default()
        };
        let err = run_benchmark(&s, &AgentParams::default(), None, &eval).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn always_accelerate_reaches_goal_on_empty_approach() {
        let s = scenarios(ScenarioFamily::CrossRight);
        let eval = EvalParams {
            policies: vec![PolicyKind::AlwaysAccelerate],
            time_decisions: false,
            ..EvalParams::default()
        };
        let r = run_benchmark(&s, &AgentParams::default(), None, &eval).unwrap();
        let t = &r[0].traces[0];
        assert_ne!(t.outcome, Outcome::Timeout);
        assert!(t.actions.iter().all(|a| a.speed_action == SpeedAction::Accelerate));
    }

    #[test]
    fn planner_only_is_reproducible() {
        let s = scenarios(ScenarioFamily::CrossRight);
        let eval = EvalParams {
            policies: vec![PolicyKind::PlannerOnly],
            time_decisions: false,
            t_max: 6.0,
            ..EvalParams::default()
        };
        let a = run_benchmark(&s, &AgentParams::default(), None, &eval).unwrap();
        let b = run_benchmark(&s, &AgentParams::default(), None, &eval).unwrap();
        assert_eq!(a[0].traces, b[0].traces);
        assert_eq!(a[0].metrics, b[0].metrics);
    }
}
