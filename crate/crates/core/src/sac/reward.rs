use crate::planner::Path;
use crate::world::{EventKind, WorldState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub goal: f64,
    pub crash: f64,
    pub near_miss: f64,
    pub time: f64,
    /// Per meter of progress along the selected path.
    pub progress: f64,
    /// Per m/s² of acceleration change.
    pub jerk: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            goal: 100.0,
            crash: -100.0,
            near_miss: -10.0,
            time: -0.1,
            progress: 1.0,
            jerk: -0.5,
            min: -100.0,
            max: 100.0,
        }
    }
}

impl RewardParams {
    pub fn terms(&self, goal: bool, crash: bool, near_miss: bool, progress: f64, d_acc: f64) -> f64 {
        let mut r = self.time + self.progress * progress + self.jerk * d_acc.abs();
        if goal {
            r += self.goal;
        }
        if crash {
            r += self.crash;
        }
        if near_miss {
            r += self.near_miss;
        }
        r.clamp(self.min, self.max)
    }
}

/// Per-step reward; progress is measured along the selected path.
pub fn reward(
    prev: &WorldState,
    next: &WorldState,
    events: &BTreeSet<EventKind>,
    selected_path: &Path,
    params: &RewardParams,
) -> f64 {
    let progress = selected_path.arc_length_at(next.car.pose.position())
        - selected_path.arc_length_at(prev.car.pose.position());
    params.terms(
        events.contains(&EventKind::Goal),
        events.contains(&EventKind::Crash),
        events.contains(&EventKind::NearMiss),
        progress,
        next.car.acceleration - prev.car.acceleration,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_cases() {
        let p = RewardParams::default();
        assert!((p.terms(true, false, false, 0.0, 0.0) - 99.9).abs() < 1e-12);
        assert_eq!(p.terms(false, true, true, 0.0, 4.0), -100.0);
        assert!((p.terms(false, false, false, 0.5, 0.0) - 0.4).abs() < 1e-12);
        assert!((p.terms(false, false, false, 0.0, -1.5) - (-0.1 - 0.75)).abs() < 1e-12);
    }
}
