//! Sparse belief-tree search over a fixed set of weighted deterministic
//! scenarios, with heuristic upper bounds and zero leaf values.

use crate::world::SpeedAction;
use std::time::Instant;

/// One deterministic transition of a scenario.
#[derive(Clone, Debug)]
pub struct Step<S> {
    pub next: S,
    pub reward: f64,
    /// Observation emitted after the transition; scenarios with equal keys
    /// share a child belief node.
    pub obs: u64,
    pub terminal: bool,
}

/// Deterministic generative model for a fixed scenario.
pub trait ScenarioModel {
    type State: Clone;

    fn step(&self, state: &Self::State, action: SpeedAction) -> Step<Self::State>;

    /// Optimistic value of `state` with `remaining` steps to go.
    fn upper_bound(&self, state: &Self::State, remaining: usize) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub depth: usize,
    pub gamma: f64,
    /// Node expansion budget.
    pub max_expansions: usize,
    /// Optional wall-clock budget (ms).
    pub max_ms: Option<f64>,
    /// Expand every node to full depth, ignoring the budgets.
    pub full_width: bool,
    pub gap_epsilon: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            depth: 10,
            gamma: 0.99,
            max_expansions: 300,
            max_ms: None,
            full_width: false,
            gap_epsilon: 1e-6,
        }
    }
}

struct Edge {
    /// Weighted mean immediate reward.
    reward: f64,
    /// (obs, child, child weight)
    children: Vec<(u64, usize, f64)>,
}

struct Node<S> {
    particles: Vec<(S, f64)>,
    weight: f64,
    depth: usize,
    edges: Option<Vec<Edge>>,
    lower: f64,
    upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeResult {
    pub action: SpeedAction,
    /// Root action values, indexed by [`SpeedAction::index`].
    pub values: [f64; 4],
    pub expansions: usize,
    pub nodes: usize,
}

struct Tree<'m, M: ScenarioModel> {
    model: &'m M,
    params: &'m TreeParams,
    nodes: Vec<Node<M::State>>,
    expansions: usize,
}

impl<'m, M: ScenarioModel> Tree<'m, M> {
    fn new_node(&mut self, particles: Vec<(M::State, f64)>, depth: usize) -> usize {
        let weight: f64 = particles.iter().map(|p| p.1).sum();
        let remaining = self.params.depth - depth;
        let upper = if remaining == 0 || weight <= 0.0 {
            0.0
        } else {
            particles
                .iter()
                .map(|(s, w)| w * self.model.upper_bound(s, remaining))
                .sum::<f64>()
                / weight
        };
        self.nodes.push(Node {
            particles,
            weight,
            depth,
            edges: None,
            lower: 0.0,
            upper,
        });
        self.nodes.len() - 1
    }

    fn expand(&mut self, id: usize) {
        self.expansions += 1;
        let depth = self.nodes[id].depth;
        let weight = self.nodes[id].weight;
        let particles = std::mem::take(&mut self.nodes[id].particles);
        let mut edges = Vec::with_capacity(SpeedAction::COUNT);
        for action in SpeedAction::ALL {
            let mut reward = 0.0;
            let mut groups: Vec<(u64, Vec<(M::State, f64)>)> = vec![];
            for (s, w) in &particles {
                let step = self.model.step(s, action);
                reward += w * step.reward;
                if step.terminal {
                    continue;
                }
                match groups.iter_mut().find(|g| g.0 == step.obs) {
                    Some(g) => g.1.push((step.next, *w)),
                    None => groups.push((step.obs, vec![(step.next, *w)])),
                }
            }
            let children = groups
                .into_iter()
                .map(|(obs, ps)| {
                    let cw = ps.iter().map(|p| p.1).sum();
                    (obs, self.new_node(ps, depth + 1), cw)
                })
                .collect();
            edges.push(Edge {
                reward: reward / weight,
                children,
            });
        }
        self.nodes[id].particles = particles;
        self.nodes[id].edges = Some(edges);
    }

    fn q(&self, id: usize, a: usize, upper: bool) -> f64 {
        let node = &self.nodes[id];
        let edge = &node.edges.as_ref().expect("expanded")[a];
        let future: f64 = edge
            .children
            .iter()
            .map(|&(_, c, w)| {
                let v = if upper { self.nodes[c].upper } else { self.nodes[c].lower };
                w * v
            })
            .sum();
        edge.reward + self.params.gamma * future / node.weight
    }

    fn backup(&mut self, id: usize) {
        if self.nodes[id].edges.is_none() {
            return;
        }
        let lower = (0..SpeedAction::COUNT)
            .map(|a| self.q(id, a, false))
            .fold(f64::NEG_INFINITY, f64::max);
        let upper = (0..SpeedAction::COUNT)
            .map(|a| self.q(id, a, true))
            .fold(f64::NEG_INFINITY, f64::max);
        let n = &mut self.nodes[id];
        n.lower = lower;
        n.upper = upper.max(lower);
    }

    fn expand_full(&mut self, id: usize) {
        if self.nodes[id].depth >= self.params.depth || self.nodes[id].weight <= 0.0 {
            self.nodes[id].upper = 0.0;
            return;
        }
        self.expand(id);
        let children: Vec<usize> = self.nodes[id]
            .edges
            .as_ref()
            .unwrap()
            .iter()
            .flat_map(|e| e.children.iter().map(|c| c.1))
            .collect();
        for c in children {
            self.expand_full(c);
        }
        self.backup(id);
    }

    /// One trial down the optimistic action and the most uncertain
    /// observation branch. Returns false when it could not make progress.
    fn trial(&mut self) -> bool {
        let mut id = 0;
        let mut visited = vec![0];
        let before = self.expansions;
        while self.nodes[id].depth < self.params.depth {
            if self.nodes[id].edges.is_none() {
                if self.expansions >= self.params.max_expansions {
                    break;
                }
                self.expand(id);
            }
            let a = (0..SpeedAction::COUNT)
                .map(|a| (a, self.q(id, a, true)))
                .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
            let edge = &self.nodes[id].edges.as_ref().unwrap()[a.0];
            let next = edge
                .children
                .iter()
                .map(|&(_, c, w)| (c, w * (self.nodes[c].upper - self.nodes[c].lower)))
                .fold(None, |best: Option<(usize, f64)>, x| match best {
                    Some(b) if b.1 >= x.1 => Some(b),
                    _ => Some(x),
                });
            match next {
                Some((c, gap)) if gap > self.params.gap_epsilon => {
                    id = c;
                    visited.push(c);
                }
                _ => break,
            }
        }
        for &n in visited.iter().rev() {
            self.backup(n);
        }
        self.expansions > before
    }
}

/// Searches the belief tree rooted at `particles` and returns the root
/// action values (zero leaf value, so they are lower estimates).
pub fn search<M: ScenarioModel>(
    model: &M,
    particles: Vec<(M::State, f64)>,
    params: &TreeParams,
) -> TreeResult {
    let mut tree = Tree {
        model,
        params,
        nodes: vec![],
        expansions: 0,
    };
    let root = tree.new_node(particles, 0);
    if params.depth == 0 || tree.nodes[root].weight <= 0.0 {
        return TreeResult {
            action: SpeedAction::HardBrake,
            values: [0.0; 4],
            expansions: 0,
            nodes: 1,
        };
    }
    if params.full_width {
        tree.expand_full(root);
    } else {
        let started = params.max_ms.map(|_| Instant::now());
        tree.expand(root);
        tree.backup(root);
        while tree.expansions < params.max_expansions {
            if let (Some(ms), Some(t)) = (params.max_ms, started) {
                if t.elapsed().as_secs_f64() * 1e3 >= ms {
                    break;
                }
            }
            let root_gap = tree.nodes[root].upper - tree.nodes[root].lower;
            if root_gap <= params.gap_epsilon || !tree.trial() {
                break;
            }
        }
    }
    let mut values = [0.0; 4];
    for (a, v) in values.iter_mut().enumerate() {
        *v = tree.q(root, a, false);
    }
    let best = (0..4).fold(0, |b, a| if values[a] > values[b] { a } else { b });
    TreeResult {
        action: SpeedAction::from_index(best).unwrap(),
        values,
        expansions: tree.expansions,
        nodes: tree.nodes.len(),
    }
}
