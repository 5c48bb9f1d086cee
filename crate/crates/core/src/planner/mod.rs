//! Path planning: anytime hybrid A*, k-path orchestration over the three
//! cost maps, pure-pursuit steering.

mod search;

pub use search::{plan_path, Infeasible, Lattice, LatticeParams, PlanResult, StateKey, Successor};

use crate::costmap::{CostMap, MapKind, PlanningMaps};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};
use crate::world::{CarState, SimParams};
use serde::{Deserialize, Serialize};

/// Pose sequence produced by the planner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub poses: Vec<Pose>,
    /// Cell cost under each pose.
    pub pose_costs: Vec<f64>,
    /// Σ length-in-cell × cell cost over all segments.
    pub total_cost: f64,
    pub length: f64,
    pub source_map: MapKind,
}

impl Path {
    pub fn from_poses(poses: Vec<Pose>, map: &CostMap, source_map: MapKind) -> Self {
        let mut total_cost = 0.0;
        let mut length = 0.0;
        for w in poses.windows(2) {
            total_cost += map.segment_cost(w[0].position(), w[1].position());
            length += w[0].position().distance(w[1].position());
        }
        let pose_costs = poses.iter().map(|p| map.cost_at(p.position())).collect();
        Self {
            poses,
            pose_costs,
            total_cost,
            length,
            source_map,
        }
    }

    /// Straight path sampled every `spacing` meters (tests, baselines).
    pub fn straight(from: Vec2, to: Vec2, spacing: f64, map: &CostMap, source: MapKind) -> Self {
        let d = to - from;
        let n = (d.norm() / spacing).ceil().max(1.0) as usize;
        let heading = d.y.atan2(d.x);
        let poses = (0..=n)
            .map(|k| {
                let p = from + d * (k as f64 / n as f64);
                Pose::new(p.x, p.y, heading)
            })
            .collect();
        Self::from_poses(poses, map, source)
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.poses.iter().map(|p| p.position())
    }

    /// Arc length of the projection of `p` onto the path polyline.
    pub fn arc_length_at(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut s0 = 0.0;
        for w in self.poses.windows(2) {
            let (a, b) = (w[0].position(), w[1].position());
            let ab = b - a;
            let len = ab.norm();
            let t = if len > 0.0 {
                ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a + ab * t).distance(p);
            if d < best.0 {
                best = (d, s0 + t * len);
            }
            s0 += len;
        }
        best.1
    }

    /// Index of the pose closest to `p`.
    pub fn closest_index(&self, p: Vec2) -> usize {
        self.poses
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1.position()
                    .distance(p)
                    .total_cmp(&b.1.position().distance(p))
            })
            .map_or(0, |(k, _)| k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub max_expansions: usize,
    /// Wall-clock limit per `plan_path` call; `None` for reproducible runs.
    pub deadline_ms: Option<f64>,
    pub weight_schedule: Vec<f64>,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_expansions: 20_000,
            deadline_ms: None,
            weight_schedule: vec![2.0, 1.5, 1.2, 1.0],
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weight_schedule;
        if w.is_empty() || w.windows(2).any(|p| p[1] >= p[0]) || *w.last().unwrap() < 1.0 {
            return Err(Error::Config(format!(
                "weight schedule must be strictly decreasing and end at >= 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub lattice: LatticeParams,
    pub budget: SearchBudget,
    /// Pure-pursuit lookahead (m).
    pub lookahead: f64,
    /// Distance of the per-step local goal along the route (m).
    pub local_goal_distance: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            lattice: LatticeParams::default(),
            budget: SearchBudget::default(),
            lookahead: 4.0,
            local_goal_distance: 25.0,
        }
    }
}

/// Goal for one planning step: the route point `distance` ahead of the car's
/// projection onto the route line, never past the route goal, pulled back
/// toward the car while it sits on an untraversable cell.
pub fn local_goal(map: &CostMap, car: &Pose, route_goal: &Pose, distance: f64) -> Pose {
    let dir = route_goal.direction();
    let to_goal = (route_goal.position() - car.position()).dot(dir);
    let ahead = distance.min(to_goal.max(0.0));
    let base = route_goal.position() - dir * to_goal;
    let mut d = ahead;
    while d > 3.0 {
        let p = base + dir * d;
        if map.cost_at(p).is_finite() {
            return Pose::new(p.x, p.y, route_goal.heading);
        }
        d -= 1.0;
    }
    let p = base + dir * ahead;
    Pose::new(p.x, p.y, route_goal.heading)
}

#[derive(Clone, Debug)]
pub struct KPaths {
    pub paths: Vec<Path>,
    pub failures: Vec<(MapKind, Infeasible)>,
    pub goal: Pose,
}

/// One hybrid A* search per cost map variant; infeasible variants are left out.
pub fn plan_k_paths(
    maps: &PlanningMaps,
    car: &Pose,
    route_goal: &Pose,
    params: &PlannerParams,
) -> Result<KPaths> {
    let goal = local_goal(&maps.base, car, route_goal, params.local_goal_distance);
    let mut out = KPaths {
        paths: vec![],
        failures: vec![],
        goal,
    };
    for kind in MapKind::ALL {
        match plan_path(maps.get(kind), car, &goal, &params.budget, &params.lattice, kind) {
            Ok(r) => out.paths.push(r.path),
            Err(e) => out.failures.push((kind, e)),
        }
    }
    if out.paths.is_empty() {
        return Err(Error::NoPath);
    }
    Ok(out)
}

/// Pure pursuit toward the first path pose at least `lookahead` from the car,
/// searching forward from the closest pose.
pub fn extract_steering(path: &Path, car: &CarState, lookahead: f64, sim: &SimParams) -> f64 {
    let p = car.pose.position();
    let start = path.closest_index(p);
    let target = path.poses[start..]
        .iter()
        .find(|q| q.position().distance(p) >= lookahead)
        .or(path.poses.last())
        .map(|q| q.position())
        .unwrap_or(p);
    let local = car.pose.to_local(target);
    let alpha = local.y.atan2(local.x);
    let steering = (2.0 * sim.wheelbase * alpha.sin()).atan2(lookahead);
    steering.clamp(-sim.steer_max, sim.steer_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::{BinaryHeap, HashMap};

    /// Uniform-cost search on the same lattice; the test-side oracle.
    fn dijkstra(map: &CostMap, start: &Pose, goal: &Pose, lp: &LatticeParams) -> Option<f64> {
        #[derive(PartialEq)]
        struct E(f64, StateKey);
        impl Eq for E {}
        impl PartialOrd for E {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for E {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                o.0.total_cmp(&self.0)
            }
        }
        let lat = Lattice::new(map, lp);
        let s = lat.key_of(start);
        let mut dist = HashMap::from([(s, 0.0)]);
        let mut heap = BinaryHeap::from([E(0.0, s)]);
        while let Some(E(g, k)) = heap.pop() {
            if g > dist[&k] {
                continue;
            }
            if lat.is_goal(k, goal) {
                return Some(g);
            }
            for n in lat.successors(k) {
                let g2 = g + n.cost;
                if dist.get(&n.key).is_none_or(|&d| g2 < d) {
                    dist.insert(n.key, g2);
                    heap.push(E(g2, n.key));
                }
            }
        }
        None
    }

    fn budget(max_expansions: usize) -> SearchBudget {
        SearchBudget {
            max_expansions,
            ..SearchBudget::default()
        }
    }

    fn random_map(seed: u64) -> (CostMap, Pose, Pose) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let res = rng.random_range(0.5..=1.0);
        let cells: Vec<f64> = (0..400)
            .map(|_| {
                if rng.random_bool(0.15) {
                    f64::INFINITY
                } else {
                    rng.random_range(1.0..5.0)
                }
            })
            .collect();
        let mut map = CostMap::from_costs(Vec2::ZERO, res, 20, 20, cells, 1.0);
        let ext = 20.0 * res;
        let start = Pose::new(0.1 * ext, rng.random_range(0.1..0.9) * ext, rng.random_range(-1.0..1.0));
        let goal = Pose::new(0.85 * ext, rng.random_range(0.1..0.9) * ext, rng.random_range(-1.0..1.0));
        let (i, j) = map.cell_of(start.position()).unwrap();
        let k = map.index(i, j);
        map.cells[k] = 1.0;
        (map, start, goal)
    }

    #[test]
    fn free_space_path_is_straight_and_near_optimal() {
        let map = CostMap::uniform(Vec2::ZERO, 0.25, 120, 40, 1.0);
        let start = Pose::new(2.0, 5.0, 0.0);
        let goal = Pose::new(25.0, 5.0, 0.0);
        let r = plan_path(&map, &start, &goal, &budget(50_000), &LatticeParams::default(), MapKind::Base)
            .unwrap();
        let d = 23.0;
        assert!(r.path.total_cost >= d - 1.0 - 1e-9);
        assert!(r.path.total_cost <= d * 1.05, "cost {}", r.path.total_cost);
        assert!(r.path.poses.iter().all(|p| (p.y - 5.0).abs() < 0.5));
    }

    #[test]
    fn path_threads_the_gap_in_a_wall() {
        let (w, h) = (80, 80);
        let mut cells = vec![1.0; w * h];
        for j in 0..h {
            if !(50..58).contains(&j) {
                for i in 38..42 {
                    cells[j * w + i] = f64::INFINITY;
                }
            }
        }
        let map = CostMap::from_costs(Vec2::ZERO, 0.25, w, h, cells, 1.0);
        let start = Pose::new(2.0, 5.0, 0.0);
        let goal = Pose::new(18.0, 5.0, 0.0);
        let r = plan_path(&map, &start, &goal, &budget(200_000), &LatticeParams::default(), MapKind::Base)
            .unwrap();
        let crossing = r
            .path
            .poses
            .iter()
            .find(|p| (9.5..10.5).contains(&p.x))
            .expect("path crosses the wall column");
        assert!((12.5..14.5).contains(&crossing.y), "crossed at y={}", crossing.y);
        assert!(r.path.total_cost.is_finite());
    }

    #[test]
    fn walled_goal_is_unreachable_and_tiny_budget_is_exhausted() {
        let mut cells = vec![1.0; 40 * 40];
        for j in 0..40 {
            cells[j * 40 + 20] = f64::INFINITY;
        }
        let map = CostMap::from_costs(Vec2::ZERO, 0.5, 40, 40, cells, 1.0);
        let start = Pose::new(2.0, 10.0, 0.0);
        let goal = Pose::new(18.0, 10.0, 0.0);
        let lp = LatticeParams::default();
        assert_eq!(
            plan_path(&map, &start, &goal, &budget(1_000_000), &lp, MapKind::Base).unwrap_err(),
            Infeasible::Unreachable
        );
        assert_eq!(
            plan_path(&map, &start, &goal, &budget(3), &lp, MapKind::Base).unwrap_err(),
            Infeasible::BudgetExhausted
        );
    }

    #[test]
    fn bounded_suboptimality_against_dijkstra() {
        let lp = LatticeParams::default();
        let mut solved = 0;
        for seed in 0..100 {
            let (map, start, goal) = random_map(seed);
            let oracle = dijkstra(&map, &start, &goal, &lp);
            match plan_path(&map, &start, &goal, &budget(1_000_000), &lp, MapKind::Base) {
                Ok(r) => {
                    let opt = oracle.expect("planner found a path the oracle did not");
                    assert!(r.path.total_cost <= r.w_found * opt + 1e-9, "seed {seed}");
                    assert_eq!(r.w_found, 1.0);
                    assert!((r.path.total_cost - opt).abs() < 1e-9, "seed {seed}");
                    solved += 1;
                }
                Err(e) => {
                    assert_eq!(e, Infeasible::Unreachable);
                    assert!(oracle.is_none(), "seed {seed}");
                }
            }
        }
        assert!(solved > 50);
    }

    #[test]
    fn anytime_costs_are_monotone_and_paths_valid() {
        let lp = LatticeParams::default();
        for seed in 100..160 {
            let (map, start, goal) = random_map(seed);
            let Ok(r) = plan_path(&map, &start, &goal, &budget(1_000_000), &lp, MapKind::Base) else {
                continue;
            };
            assert!(r.solution_costs.windows(2).all(|w| w[1].1 <= w[0].1));
            let lat = Lattice::new(&map, &lp);
            for w in r.path.poses.windows(2) {
                let a = lat.key_of(&w[0]);
                let b = lat.key_of(&w[1]);
                assert!(lat.successors(a).iter().any(|s| s.key == b), "seed {seed}");
                let db = (a.2 as i32 - b.2 as i32).rem_euclid(16);
                assert!(db <= 1 || db == 15);
            }
            assert!(r.path.total_cost >= map.cost_floor * r.path.length - 1e-9);
        }
    }

    #[test]
    fn expansion_mode_is_deterministic() {
        let (map, start, goal) = random_map(7);
        let lp = LatticeParams::default();
        let a = plan_path(&map, &start, &goal, &budget(300), &lp, MapKind::Base);
        let b = plan_path(&map, &start, &goal, &budget(300), &lp, MapKind::Base);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a.path, b.path),
            (Err(a), Err(b)) => assert_eq!(a, b),
            _ => panic!("runs disagree"),
        }
    }

    #[test]
    fn budget_validation() {
        assert!(SearchBudget::default().validate().is_ok());
        let bad = SearchBudget {
            weight_schedule: vec![1.5, 1.5, 1.0],
            ..SearchBudget::default()
        };
        assert!(bad.validate().is_err());
        let below_one = SearchBudget {
            weight_schedule: vec![2.0, 0.9],
            ..SearchBudget::default()
        };
        assert!(below_one.validate().is_err());
    }

    fn straight_path() -> Path {
        let map = CostMap::uniform(Vec2::new(-5.0, -10.0), 0.25, 200, 80, 1.0);
        Path::straight(Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0), 1.0, &map, MapKind::Base)
    }

    #[test]
    fn steering_on_straight_path_is_zero() {
        let car = CarState::at_rest(Pose::new(0.0, 0.0, 0.0));
        assert_eq!(extract_steering(&straight_path(), &car, 4.0, &SimParams::default()), 0.0);
    }

    #[test]
    fn steering_saturates_for_target_on_the_left() {
        let car = CarState::at_rest(Pose::new(0.0, 0.0, -std::f64::consts::FRAC_PI_2));
        let sim = SimParams::default();
        assert_eq!(extract_steering(&straight_path(), &car, 4.0, &sim), sim.steer_max);
    }

    #[test]
    fn steering_toward_path_from_the_right() {
        // Car 1 m to the right of a path along +x, path poses every 0.1 m.
        let map = CostMap::uniform(Vec2::new(-5.0, -10.0), 0.25, 200, 80, 1.0);
        let path = Path::straight(Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0), 0.1, &map, MapKind::Base);
        let car = CarState::at_rest(Pose::new(0.0, -1.0, 0.0));
        let sim = SimParams::default();
        let s = extract_steering(&path, &car, 4.0, &sim);
        // First pose at distance ≥ 4 from (0, -1): x ≥ √15 rounded up to the 0.1 grid.
        let x = (15f64.sqrt() * 10.0).ceil() / 10.0;
        let alpha = 1.0f64.atan2(x);
        let expected = (2.0 * 2.7 * alpha.sin()).atan2(4.0);
        assert!(s > 0.0);
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
    }

    #[test]
    fn local_goal_backs_off_blocked_cells() {
        let mut map = CostMap::uniform(Vec2::new(-10.0, -10.0), 0.25, 240, 80, 1.0);
        let car = Pose::new(0.0, 0.0, 0.0);
        let goal = Pose::new(80.0, 0.0, 0.0);
        assert_eq!(local_goal(&map, &car, &goal, 25.0).x, 25.0);
        let (i, j) = map.cell_of(Vec2::new(25.0, 0.0)).unwrap();
        let k = map.index(i, j);
        map.cells[k] = f64::INFINITY;
        assert_eq!(local_goal(&map, &car, &goal, 25.0).x, 24.0);
        let near = Pose::new(70.0, 0.5, 0.0);
        let g = local_goal(&map, &near, &goal, 25.0);
        assert_eq!((g.x, g.y), (80.0, 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn steering_is_bounded(x in -5.0..35.0f64, y in -4.0..4.0f64, h in -3.1..3.1f64) {
            let car = CarState::at_rest(Pose::new(x, y, h));
            let sim = SimParams::default();
            let s = extract_steering(&straight_path(), &car, 4.0, &sim);
            prop_assert!(s.abs() <= sim.steer_max);
        }

        #[test]
        fn heuristic_is_consistent(seed in 0u64..1000) {
            let (map, _, goal) = random_map(seed);
            let lp = LatticeParams::default();
            let lat = Lattice::new(&map, &lp);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let k = (rng.random_range(0..20), rng.random_range(0..20), rng.random_range(0..16u8));
                for s in lat.successors(k) {
                    prop_assert!(lat.heuristic(k, &goal) <= s.cost + lat.heuristic(s.key, &goal) + 1e-9);
                }
            }
        }
    }
}
