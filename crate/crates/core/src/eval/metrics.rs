use crate::error::{Error, Result};
use crate::world::{EpisodeTrace, Outcome, ScenarioFamily};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// Crash percentage must be strictly below this for a family to count.
    pub si_crash_pct: f64,
    pub si_near_miss_pct: f64,
    /// Jerk (m/s³) mapped to 1 before clamping.
    pub jerk_ref: f64,
    pub kappa: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            si_crash_pct: 5.0,
            si_near_miss_pct: 10.0,
            jerk_ref: 10.0,
            kappa: 0.5,
        }
    }
}

/// 1 / (κ + ½·J̄ + ½·ρ̄) where J̄ is the clamped, normalized mean absolute
/// jerk (second difference of speed) and ρ̄ the mean planned risk.
/// `None` for traces shorter than three states.
pub fn comfort(trace: &EpisodeTrace, risk_series: &[f64], params: &MetricParams) -> Option<f64> {
    if trace.states.len() < 3 {
        return None;
    }
    let dt = trace.states[1].time - trace.states[0].time;
    if !(dt > 0.0) {
        return None;
    }
    let acc: Vec<f64> = trace
        .states
        .windows(2)
        .map(|w| (w[1].car.speed - w[0].car.speed) / dt)
        .collect();
    let jerk: Vec<f64> = acc.windows(2).map(|w| ((w[1] - w[0]) / dt).abs()).collect();
    let j = (jerk.iter().sum::<f64>() / jerk.len() as f64 / params.jerk_ref).clamp(0.0, 1.0);
    let rho = if risk_series.is_empty() {
        0.0
    } else {
        (risk_series.iter().sum::<f64>() / risk_series.len() as f64).clamp(0.0, 1.0)
    };
    Some(1.0 / (params.kappa + 0.5 * j + 0.5 * rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyMetrics {
    pub family: ScenarioFamily,
    pub episodes: usize,
    pub crashes: usize,
    pub near_miss_episodes: usize,
    pub goals: usize,
    pub crash_pct: f64,
    pub near_miss_pct: f64,
    /// Mean time to goal over goal-reaching episodes.
    pub mean_ttg: Option<f64>,
    pub mean_comfort: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub families: Vec<FamilyMetrics>,
    /// Families with crash_pct and near_miss_pct strictly below the thresholds.
    pub si: usize,
    pub crash_pct: f64,
    pub near_miss_pct: f64,
    pub ttg: Option<f64>,
    pub comfort: Option<f64>,
    /// Mean policy time over all steps with a fresh decision.
    pub exec_ms: f64,
    pub episodes: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Per-family and overall metrics. Every family in `families` must have at
/// least one trace; traces of other families are ignored. Traces are
/// processed in (family, scenario id) order so the result does not depend
/// on input order.
pub fn compute_metrics(
    traces: &[EpisodeTrace],
    families: &[ScenarioFamily],
    params: &MetricParams,
) -> Result<Metrics> {
    let mut sorted: Vec<&EpisodeTrace> = traces
        .iter()
        .filter(|t| families.contains(&t.family))
        .collect();
    sorted.sort_by(|a, b| (a.family, &a.scenario_id).cmp(&(b.family, &b.scenario_id)));
    let mut fams = families.to_vec();
    fams.sort();
    fams.dedup();

    let mut out = vec![];
    let (mut all_ttg, mut all_comfort, mut all_ms) = (vec![], vec![], vec![]);
    let (mut crashes, mut near) = (0, 0);
    for fam in &fams {
        let group: Vec<&&EpisodeTrace> = sorted.iter().filter(|t| t.family == *fam).collect();
        if group.is_empty() {
            return Err(Error::Config(format!("family {fam} has no episodes")));
        }
        let c = group.iter().filter(|t| t.outcome == Outcome::Crash).count();
        let n = group.iter().filter(|t| t.had_near_miss()).count();
        let ttg: Vec<f64> = group.iter().filter_map(|t| t.ttg.filter(|_| t.outcome.reached_goal())).collect();
        let cf: Vec<f64> = group
            .iter()
            .filter_map(|t| comfort(t, &t.planned_risk, params))
            .collect();
        all_ttg.extend(&ttg);
        all_comfort.extend(&cf);
        for t in &group {
            all_ms.extend(
                t.decision_ms
                    .iter()
                    .zip(&t.decided)
                    .filter(|(_, d)| **d)
                    .map(|(ms, _)| *ms),
            );
        }
        crashes += c;
        near += n;
        let e = group.len();
        out.push(FamilyMetrics {
            family: *fam,
            episodes: e,
            crashes: c,
            near_miss_episodes: n,
            goals: ttg.len(),
            crash_pct: 100.0 * c as f64 / e as f64,
            near_miss_pct: 100.0 * n as f64 / e as f64,
            mean_ttg: mean(&ttg),
            mean_comfort: mean(&cf),
        });
    }
    let episodes: usize = out.iter().map(|f| f.episodes).sum();
    let si = out
        .iter()
        .filter(|f| f.crash_pct < params.si_crash_pct && f.near_miss_pct < params.si_near_miss_pct)
        .count();
    Ok(Metrics {
        si,
        crash_pct: if episodes == 0 { 0.0 } else { 100.0 * crashes as f64 / episodes as f64 },
        near_miss_pct: if episodes == 0 { 0.0 } else { 100.0 * near as f64 / episodes as f64 },
        ttg: mean(&all_ttg),
        comfort: mean(&all_comfort),
        exec_ms: mean(&all_ms).unwrap_or(0.0),
        episodes,
        families: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::world::{CarState, EventKind, TraceState};

    pub fn trace(family: ScenarioFamily, id: &str, speeds: &[f64], outcome: Outcome, near: bool) -> EpisodeTrace {
        let states: Vec<TraceState> = speeds
            .iter()
            .enumerate()
            .map(|(k, &v)| TraceState {
                time: k as f64 * 0.1,
                car: CarState {
                    speed: v,
                    ..CarState::at_rest(Pose::new(k as f64, 0.0, 0.0))
                },
                pedestrians: vec![],
                other_cars: vec![],
                events: vec![],
            })
            .collect();
        let n = speeds.len().saturating_sub(1);
        let end = n as f64 * 0.1;
        EpisodeTrace {
            scenario_id: id.into(),
            family,
            states,
            actions: vec![],
            planned_risk: vec![0.0; n],
            decision_ms: vec![1.0; n],
            decided: vec![true; n],
            events: if near { vec![(0.1, EventKind::NearMiss)] } else { vec![] },
            outcome,
            ttg: outcome.reached_goal().then_some(end),
        }
    }

    #[test]
    fn comfort_ceiling_and_floor() {
        let p = MetricParams::default();
        let flat = trace(ScenarioFamily::CrossRight, "a", &[5.0; 10], Outcome::Goal, false);
        assert_eq!(comfort(&flat, &[0.0; 9], &p), Some(2.0));
        // Alternating speeds give |jerk| = 2·2/0.01 = 400 ≥ jerk_ref.
        let wild = trace(ScenarioFamily::CrossRight, "b", &[0.0, 2.0, 0.0, 2.0, 0.0], Outcome::Goal, false);
        assert!((comfort(&wild, &[1.0; 4], &p).unwrap() - 1.0 / 1.5).abs() < 1e-12);
        let short = trace(ScenarioFamily::CrossRight, "c", &[0.0, 1.0], Outcome::Goal, false);
        assert_eq!(comfort(&short, &[], &p), None);
    }

    #[test]
    fn spike_lowers_comfort() {
        let p = MetricParams::default();
        let a = trace(ScenarioFamily::CrossRight, "a", &[1.0, 1.1, 1.2, 1.3, 1.4, 1.5], Outcome::Goal, false);
        let b = trace(ScenarioFamily::CrossRight, "b", &[1.0, 1.1, 1.2, 1.5, 1.4, 1.5], Outcome::Goal, false);
        assert!(comfort(&b, &[0.1; 5], &p).unwrap() < comfort(&a, &[0.1; 5], &p).unwrap());
    }

    fn family_of(n: usize, crashes: usize, near: usize, fam: ScenarioFamily) -> Vec<EpisodeTrace> {
        (0..n)
            .map(|k| {
                let outcome = if k < crashes { Outcome::Crash } else { Outcome::Goal };
                trace(fam, &format!("{fam}_{k:03}"), &[1.0, 1.0, 1.0], outcome, k >= n - near)
            })
            .collect()
    }

    #[test]
    fn safety_index_thresholds_are_strict() {
        let p = MetricParams::default();
        let f = ScenarioFamily::CrossRight;
        let m = compute_metrics(&family_of(100, 4, 9, f), &[f], &p).unwrap();
        assert_eq!((m.si, m.families[0].crash_pct, m.families[0].near_miss_pct), (1, 4.0, 9.0));
        let m = compute_metrics(&family_of(100, 5, 0, f), &[f], &p).unwrap();
        assert_eq!(m.si, 0);
        let m = compute_metrics(&family_of(100, 0, 10, f), &[f], &p).unwrap();
        assert_eq!(m.si, 0);
    }

    #[test]
    fn si_range_and_missing_family() {
        let p = MetricParams::default();
        let all: Vec<EpisodeTrace> = ScenarioFamily::ALL
            .iter()
            .flat_map(|&f| family_of(10, 0, 0, f))
            .collect();
        assert_eq!(compute_metrics(&all, &ScenarioFamily::ALL, &p).unwrap().si, 12);
        let none: Vec<EpisodeTrace> = ScenarioFamily::ALL
            .iter()
            .flat_map(|&f| family_of(10, 10, 0, f))
            .collect();
        assert_eq!(compute_metrics(&none, &ScenarioFamily::ALL, &p).unwrap().si, 0);
        assert!(compute_metrics(&all[..10], &ScenarioFamily::ALL, &p).is_err());
    }

    #[test]
    fn order_independent() {
        let p = MetricParams::default();
        let f = ScenarioFamily::CrossLeft;
        let mut ts = family_of(7, 2, 3, f);
        let a = compute_metrics(&ts, &[f], &p).unwrap();
        ts.reverse();
        assert_eq!(a, compute_metrics(&ts, &[f], &p).unwrap());
    }
}
