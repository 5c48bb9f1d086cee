//! Anytime weighted hybrid A* over a snapped (cell, heading bin) lattice.

use super::{Path, SearchBudget};
use crate::costmap::{CostMap, MapKind};
use crate::geometry::{normalize_angle, Pose};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{PI, TAU};
use std::time::Instant;

/// Discretized search state: cell indices and heading bin.
pub type StateKey = (i32, i32, u8);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeParams {
    pub heading_bins: u8,
    /// Arc length of every primitive (m).
    pub arc_length: f64,
    /// Primitive curvatures (1/m).
    pub curvatures: Vec<f64>,
    /// Goal position tolerance (m).
    pub goal_tolerance: f64,
    /// Goal heading tolerance (rad).
    pub goal_heading_tolerance: f64,
}

impl Default for LatticeParams {
    fn default() -> Self {
        Self {
            heading_bins: 16,
            arc_length: 1.0,
            curvatures: vec![0.0, 0.1, -0.1, 0.2, -0.2],
            goal_tolerance: 1.0,
            goal_heading_tolerance: PI / 8.0,
        }
    }
}

/// Motion primitives applied from canonical poses of a cost map grid.
#[derive(Clone, Debug)]
pub struct Lattice<'a> {
    pub map: &'a CostMap,
    pub params: &'a LatticeParams,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Successor {
    pub key: StateKey,
    pub primitive: u8,
    pub cost: f64,
}

impl<'a> Lattice<'a> {
    pub fn new(map: &'a CostMap, params: &'a LatticeParams) -> Self {
        Self { map, params }
    }

    fn bin_width(&self) -> f64 {
        TAU / self.params.heading_bins as f64
    }

    pub fn heading_bin(&self, heading: f64) -> u8 {
        let n = self.params.heading_bins as i64;
        ((heading / self.bin_width()).round() as i64).rem_euclid(n) as u8
    }

    pub fn key_of(&self, pose: &Pose) -> StateKey {
        let (i, j) = self.map.cell_coords(pose.position());
        (i as i32, j as i32, self.heading_bin(pose.heading))
    }

    /// Cell center with the bin-center heading.
    pub fn canonical_pose(&self, key: StateKey) -> Pose {
        let c = self.map.cell_center(key.0 as i64, key.1 as i64);
        Pose::new(c.x, c.y, key.2 as f64 * self.bin_width())
    }

    pub fn is_goal(&self, key: StateKey, goal: &Pose) -> bool {
        let p = self.canonical_pose(key);
        p.position().distance(goal.position()) <= self.params.goal_tolerance
            && normalize_angle(p.heading - goal.heading).abs()
                <= self.params.goal_heading_tolerance + 1e-9
    }

    /// End pose of primitive `curvature` from `from`.
    pub fn arc_end(&self, from: &Pose, curvature: f64) -> Pose {
        let s = self.params.arc_length;
        let h = from.heading;
        let (dx, dy) = if curvature.abs() < 1e-12 {
            (s * h.cos(), s * h.sin())
        } else {
            let h1 = h + curvature * s;
            (
                (h1.sin() - h.sin()) / curvature,
                (h.cos() - h1.cos()) / curvature,
            )
        };
        Pose::new(from.x + dx, from.y + dy, h + curvature * s)
    }

    /// Valid successors of `key`; duplicate end states keep the first
    /// primitive that reaches them.
    pub fn successors(&self, key: StateKey) -> Vec<Successor> {
        let from = self.canonical_pose(key);
        let mut out: Vec<Successor> = Vec::with_capacity(self.params.curvatures.len());
        for (id, &k) in self.params.curvatures.iter().enumerate() {
            let end = self.key_of(&self.arc_end(&from, k));
            if end == key || out.iter().any(|s| s.key == end) {
                continue;
            }
            if !self.map.contains_cell(end.0 as i64, end.1 as i64) {
                continue;
            }
            let cost = self
                .map
                .segment_cost(from.position(), self.canonical_pose(end).position());
            if cost.is_finite() {
                out.push(Successor {
                    key: end,
                    primitive: id as u8,
                    cost,
                });
            }
        }
        out
    }

    /// Consistent lower bound on the remaining cost to the goal region.
    pub fn heuristic(&self, key: StateKey, goal: &Pose) -> f64 {
        let d = self.canonical_pose(key).position().distance(goal.position());
        self.map.cost_floor * (d - self.params.goal_tolerance).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infeasible {
    /// Search stopped by the expansion or time budget before proving anything.
    BudgetExhausted,
    /// Every reachable state was expanded without meeting the goal test.
    Unreachable,
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Infeasible::BudgetExhausted => f.write_str("search budget exhausted"),
            Infeasible::Unreachable => f.write_str("goal unreachable"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub path: Path,
    /// Smallest weight whose search ran to completion.
    pub w_found: f64,
    /// Incumbent cost after each completed weighted search.
    pub solution_costs: Vec<(f64, f64)>,
    pub expansions: usize,
}

#[derive(Clone, Copy)]
struct OpenEntry {
    f: f64,
    g: f64,
    seq: u64,
    key: StateKey,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // Reversed so BinaryHeap pops the smallest (f, g, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.g.total_cmp(&self.g))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Node {
    g: f64,
    parent: Option<StateKey>,
    closed: bool,
}

enum SearchEnd {
    Found { goal: StateKey, nodes: HashMap<StateKey, Node> },
    Exhausted,
    OutOfBudget,
}

struct Budget {
    remaining: usize,
    deadline: Option<Instant>,
}

impl Budget {
    fn spend(&mut self, expansions: usize) -> bool {
        if self.remaining == 0 {
            return false;
        }
        self.remaining -= 1;
        if expansions % 128 == 0 {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    self.remaining = 0;
                    return false;
                }
            }
        }
        true
    }
}

/// Weighted A* without reopening.
fn weighted_search(
    lattice: &Lattice,
    start: StateKey,
    goal: &Pose,
    w: f64,
    budget: &mut Budget,
    expansions: &mut usize,
) -> SearchEnd {
    let mut nodes: HashMap<StateKey, Node> = HashMap::new();
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    nodes.insert(
        start,
        Node {
            g: 0.0,
            parent: None,
            closed: false,
        },
    );
    open.push(OpenEntry {
        f: w * lattice.heuristic(start, goal),
        g: 0.0,
        seq,
        key: start,
    });
    while let Some(entry) = open.pop() {
        let node = nodes.get_mut(&entry.key).expect("queued state has a node");
        if node.closed || entry.g > node.g {
            continue;
        }
        if lattice.is_goal(entry.key, goal) {
            return SearchEnd::Found {
                goal: entry.key,
                nodes,
            };
        }
        if !budget.spend(*expansions) {
            return SearchEnd::OutOfBudget;
        }
        *expansions += 1;
        node.closed = true;
        let g = node.g;
        for s in lattice.successors(entry.key) {
            let g_new = g + s.cost;
            let better = match nodes.get(&s.key) {
                Some(n) => !n.closed && g_new < n.g,
                None => true,
            };
            if better {
                nodes.insert(
                    s.key,
                    Node {
                        g: g_new,
                        parent: Some(entry.key),
                        closed: false,
                    },
                );
                seq += 1;
                open.push(OpenEntry {
                    f: g_new + w * lattice.heuristic(s.key, goal),
                    g: g_new,
                    seq,
                    key: s.key,
                });
            }
        }
    }
    SearchEnd::Exhausted
}

fn reconstruct(
    lattice: &Lattice,
    goal: StateKey,
    nodes: &HashMap<StateKey, Node>,
    source: MapKind,
) -> Path {
    let mut keys = vec![goal];
    while let Some(p) = nodes[keys.last().unwrap()].parent {
        keys.push(p);
    }
    keys.reverse();
    let poses: Vec<Pose> = keys.iter().map(|k| lattice.canonical_pose(*k)).collect();
    Path::from_poses(poses, lattice.map, source)
}

/// Anytime weighted hybrid A*: one weighted search per schedule entry while
/// budget remains, keeping the cheapest path found.
pub fn plan_path(
    map: &CostMap,
    start: &Pose,
    goal: &Pose,
    budget: &SearchBudget,
    lattice_params: &LatticeParams,
    source: MapKind,
) -> Result<PlanResult, Infeasible> {
    let lattice = Lattice::new(map, lattice_params);
    let start_key = lattice.key_of(start);
    if !map.contains_cell(start_key.0 as i64, start_key.1 as i64)
        || !map.contains_point(goal.position())
        || !map.cost(start_key.0 as usize, start_key.1 as usize).is_finite()
    {
        return Err(Infeasible::Unreachable);
    }
    let mut b = Budget {
        remaining: budget.max_expansions,
        deadline: budget
            .deadline_ms
            .map(|ms| Instant::now() + std::time::Duration::from_secs_f64(ms / 1e3)),
    };
    let mut expansions = 0;
    let mut best: Option<Path> = None;
    let mut w_found = f64::INFINITY;
    let mut solution_costs = vec![];
    let mut proven_unreachable = false;
    for &w in &budget.weight_schedule {
        match weighted_search(&lattice, start_key, goal, w, &mut b, &mut expansions) {
            SearchEnd::Found { goal: g, nodes } => {
                let path = reconstruct(&lattice, g, &nodes, source);
                if best.as_ref().is_none_or(|p| path.total_cost < p.total_cost) {
                    best = Some(path);
                }
                w_found = w;
                solution_costs.push((w, best.as_ref().unwrap().total_cost));
            }
            SearchEnd::Exhausted => {
                proven_unreachable = true;
                break;
            }
            SearchEnd::OutOfBudget => break,
        }
    }
    match best {
        Some(path) => Ok(PlanResult {
            path,
            w_found,
            solution_costs,
            expansions,
        }),
        None if proven_unreachable => Err(Infeasible::Unreachable),
        None => Err(Infeasible::BudgetExhausted),
    }
}
