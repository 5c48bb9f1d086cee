//! Four priority-ordered driving rules and lexicographic path selection.

use crate::costmap::{CostMap, MapKind};
use crate::error::{Error, Result};
use crate::planner::Path;
use crate::risk::PathRisk;
use crate::world::{CellClass, RoadLayout};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AvoidSidewalk,
    MinimizeRisk,
    KeepLane,
    ShortestPath,
}

impl Rule {
    pub const ALL: [Rule; 4] = [
        Rule::AvoidSidewalk,
        Rule::MinimizeRisk,
        Rule::KeepLane,
        Rule::ShortestPath,
    ];

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulebookParams {
    /// Highest priority first.
    pub priorities: Vec<Rule>,
    pub tau: f64,
    pub risk_threshold: f64,
}

impl Default for RulebookParams {
    fn default() -> Self {
        Self {
            priorities: Rule::ALL.to_vec(),
            tau: 1e-6,
            risk_threshold: 0.1,
        }
    }
}

impl RulebookParams {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 4];
        for r in &self.priorities {
            seen[r.slot()] = true;
        }
        if self.priorities.len() != 4 || seen.iter().any(|s| !s) {
            return Err(Error::Config(format!(
                "rule priorities must list each of the four rules once, got {:?}",
                self.priorities
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Config("rulebook tau must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-rule violation magnitudes, indexed by [`Rule`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationVector {
    pub sidewalk_meters: f64,
    pub risk_excess: f64,
    pub lane_deviation: f64,
    pub path_length: f64,
}

impl ViolationVector {
    pub fn new(scores: [f64; 4]) -> Self {
        Self {
            sidewalk_meters: scores[0],
            risk_excess: scores[1],
            lane_deviation: scores[2],
            path_length: scores[3],
        }
    }

    pub fn get(&self, rule: Rule) -> f64 {
        match rule {
            Rule::AvoidSidewalk => self.sidewalk_meters,
            Rule::MinimizeRisk => self.risk_excess,
            Rule::KeepLane => self.lane_deviation,
            Rule::ShortestPath => self.path_length,
        }
    }

    /// Scores in priority order.
    pub fn ordered(&self, priorities: &[Rule]) -> Vec<f64> {
        priorities.iter().map(|r| self.get(*r)).collect()
    }
}

/// Arc length of the path over sidewalk cells of `map`.
pub fn sidewalk_meters(path: &Path, map: &CostMap) -> f64 {
    let mut total = 0.0;
    for w in path.poses.windows(2) {
        map.traverse_segment(w[0].position(), w[1].position(), |i, j, len| {
            if map.contains_cell(i, j) && map.class(i as usize, j as usize) == CellClass::Sidewalk {
                total += len;
            }
        });
    }
    total
}

pub fn score_violations(
    path: &Path,
    risk: &PathRisk,
    map: &CostMap,
    layout: &RoadLayout,
    params: &RulebookParams,
) -> ViolationVector {
    let lane_deviation = if path.poses.is_empty() {
        0.0
    } else {
        path.positions()
            .map(|p| layout.lane_center_distance(p))
            .sum::<f64>()
            / path.poses.len() as f64
    };
    ViolationVector {
        sidewalk_meters: sidewalk_meters(path, map),
        risk_excess: (risk.aggregate - params.risk_threshold).max(0.0),
        lane_deviation,
        path_length: path.length,
    }
}

/// Index of the rule-preferred candidate.
///
/// Level by level in priority order, keeps the candidates within `tau` of
/// the best remaining score (scores at or below `tau` count as zero). Ties
/// left after all four levels go to the source map order
/// Base < Sidewalk < Predictive, then to exact score comparison.
pub fn select(candidates: &[(MapKind, ViolationVector)], params: &RulebookParams) -> Option<usize> {
    let snap = |v: f64| if v <= params.tau { 0.0 } else { v };
    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    for rule in &params.priorities {
        let best = alive
            .iter()
            .map(|&k| snap(candidates[k].1.get(*rule)))
            .fold(f64::INFINITY, f64::min);
        alive.retain(|&k| snap(candidates[k].1.get(*rule)) <= best + params.tau);
    }
    alive.into_iter().min_by(|&a, &b| {
        let (ma, va) = &candidates[a];
        let (mb, vb) = &candidates[b];
        ma.cmp(mb).then_with(|| {
            params
                .priorities
                .iter()
                .map(|r| va.get(*r).total_cmp(&vb.get(*r)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    })
}

/// A scored planner output.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub path: Path,
    pub risk: PathRisk,
    pub violations: ViolationVector,
}

pub fn select_path<'a>(candidates: &'a [Candidate], params: &RulebookParams) -> Option<&'a Candidate> {
    let keyed: Vec<_> = candidates
        .iter()
        .map(|c| (c.path.source_map, c.violations))
        .collect();
    select(&keyed, params).map(|k| &candidates[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec2};
    use crate::risk::PathRisk;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn vv(s: [f64; 4]) -> (MapKind, ViolationVector) {
        (MapKind::Base, ViolationVector::new(s))
    }

    #[test]
    fn sidewalk_violation_loses_to_compliant_path() {
        let p = RulebookParams::default();
        let c = [vv([0.0, 0.0, 0.0, 50.0]), vv([3.0, 0.0, 0.0, 40.0])];
        assert_eq!(select(&c, &p), Some(0));
    }

    #[test]
    fn shorter_path_decides_when_rest_ties() {
        let p = RulebookParams::default();
        let c = [vv([0.0, 0.1, 0.2, 50.0]), vv([0.0, 0.1, 0.2, 40.0])];
        assert_eq!(select(&c, &p), Some(1));
    }

    #[test]
    fn tau_ties_pass_to_next_rule_and_map_order_breaks_full_ties() {
        let p = RulebookParams::default();
        let c = [
            (MapKind::Predictive, ViolationVector::new([0.0, 0.2, 0.0, 30.0])),
            (MapKind::Sidewalk, ViolationVector::new([0.0, 0.2 + 4e-7, 0.0, 30.0])),
        ];
        assert_eq!(select(&c, &p), Some(1));
        assert_eq!(select(&[], &p), None);
    }

    #[test]
    fn reordered_priorities_change_the_winner() {
        let p = RulebookParams {
            priorities: vec![Rule::ShortestPath, Rule::AvoidSidewalk, Rule::MinimizeRisk, Rule::KeepLane],
            ..RulebookParams::default()
        };
        p.validate().unwrap();
        let c = [vv([0.0, 0.0, 0.0, 50.0]), vv([3.0, 0.0, 0.0, 40.0])];
        assert_eq!(select(&c, &p), Some(1));
        let dup = RulebookParams {
            priorities: vec![Rule::ShortestPath; 4],
            ..RulebookParams::default()
        };
        assert!(dup.validate().is_err());
    }

    fn layout() -> RoadLayout {
        RoadLayout::straight_road(-20.0, 100.0)
    }

    fn grid() -> CostMap {
        let mut m = CostMap::uniform(Vec2::new(-10.0, -15.0), 0.25, 240, 120, 1.0);
        let l = layout();
        for j in 0..m.height {
            for i in 0..m.width {
                let k = m.index(i, j);
                m.classes[k] = l.classify(m.cell_center(i as i64, j as i64));
            }
        }
        m
    }

    #[test]
    fn compliant_lane_center_path() {
        let map = grid();
        let path = Path::straight(Vec2::new(0.0, -1.75), Vec2::new(30.0, -1.75), 1.0, &map, MapKind::Base);
        let risk = PathRisk::from_per_pose(vec![0.0; path.poses.len()], 0.1);
        let v = score_violations(&path, &risk, &map, &layout(), &RulebookParams::default());
        assert_eq!(v.sidewalk_meters, 0.0);
        assert_eq!(v.risk_excess, 0.0);
        assert!(v.lane_deviation < 1e-12);
        assert!((v.path_length - 30.0).abs() < 1e-9);
    }

    #[test]
    fn sidewalk_meters_match_layout_geometry() {
        // Lane center → onto the sidewalk band y ∈ [-6.5, -3.5] for 5 m → back.
        let map = grid();
        let poses: Vec<Pose> = [
            (0.0, -1.75),
            (4.0, -1.75),
            (6.0, -5.0),
            (11.0, -5.0),
            (13.0, -1.75),
            (20.0, -1.75),
        ]
        .iter()
        .map(|&(x, y)| Pose::new(x, y, 0.0))
        .collect();
        let path = Path::from_poses(poses, &map, MapKind::Sidewalk);
        // Straight part: 5 m. Ramps: each crosses y=-3.5 and spends the part
        // below it on the sidewalk.
        let ramp = (2.0f64.powi(2) + 3.25f64.powi(2)).sqrt();
        let expected = 5.0 + 2.0 * ramp * (1.5 / 3.25);
        let got = sidewalk_meters(&path, &map);
        assert!((got - expected).abs() <= map.resolution, "{got} vs {expected}");
        let risk = PathRisk::from_per_pose(vec![0.3], 0.1);
        let v = score_violations(&path, &risk, &map, &layout(), &RulebookParams::default());
        assert!((v.risk_excess - 0.2).abs() < 1e-12);
    }

    /// Grid-valued scores with sub-τ noise make τ-equivalence exact:
    /// two values tie iff they share a grid point.
    fn noisy_triple(rng: &mut impl Rng, tau: f64) -> Vec<(MapKind, ViolationVector)> {
        (0..3)
            .map(|k| {
                let mut s = [0.0; 4];
                for v in &mut s {
                    *v = rng.random_range(0..4) as f64 * 0.5 + rng.random_range(0.0..tau / 4.0);
                }
                (MapKind::ALL[k], ViolationVector::new(s))
            })
            .collect()
    }

    fn sort_oracle(c: &[(MapKind, ViolationVector)], p: &RulebookParams) -> (MapKind, Vec<i64>) {
        let mut keys: Vec<_> = c
            .iter()
            .map(|(m, v)| {
                let q: Vec<i64> = v.ordered(&p.priorities).iter().map(|x| (x / 0.5).round() as i64).collect();
                (q, *m)
            })
            .collect();
        keys.sort();
        let (q, m) = keys.remove(0);
        (m, q)
    }

    #[test]
    fn selection_matches_sort_oracle() {
        let p = RulebookParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut c = noisy_triple(&mut rng, p.tau);
            // Shuffle map labels too so the tie-break is exercised.
            c.rotate_left(rng.random_range(0..3));
            let k = select(&c, &p).unwrap();
            let got: Vec<i64> = c[k].1.ordered(&p.priorities).iter().map(|x| (x / 0.5).round() as i64).collect();
            assert_eq!((c[k].0, got), sort_oracle(&c, &p));
        }
    }

    fn vector() -> impl Strategy<Value = ViolationVector> {
        prop::array::uniform4(prop_oneof![Just(0.0), 0.0..1e-6, 0.0..10.0f64]).prop_map(ViolationVector::new)
    }

    proptest! {
        #[test]
        fn permutation_invariant(vs in prop::collection::vec((0usize..3, vector()), 1..6), rot in 0usize..6) {
            let p = RulebookParams::default();
            let c: Vec<_> = vs.iter().map(|(m, v)| (MapKind::ALL[*m], *v)).collect();
            let mut d = c.clone();
            d.rotate_left(rot % c.len());
            d.reverse();
            let a = c[select(&c, &p).unwrap()];
            let b = d[select(&d, &p).unwrap()];
            prop_assert_eq!(a, b);
        }

        #[test]
        fn compliant_sidewalk_whenever_possible(vs in prop::collection::vec(vector(), 1..6)) {
            let p = RulebookParams::default();
            let c: Vec<_> = vs.iter().map(|v| (MapKind::Base, *v)).collect();
            let k = select(&c, &p).unwrap();
            if vs.iter().any(|v| v.sidewalk_meters <= p.tau) {
                prop_assert!(vs[k].sidewalk_meters <= p.tau);
            }
        }

        #[test]
        fn priority_dominance(base in vector(), gain in 2e-6..5.0f64, regress in 0.0..1e6f64) {
            let p = RulebookParams::default();
            let mut worse = base;
            worse.sidewalk_meters += gain;
            let mut better_first = base;
            better_first.path_length += regress;
            better_first.lane_deviation += regress;
            let c = [(MapKind::Predictive, better_first), (MapKind::Base, worse)];
            prop_assert_eq!(select(&c, &p), Some(0));
        }
    }
}
