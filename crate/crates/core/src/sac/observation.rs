//! Learner input: a car-aligned multi-channel crop of the planning maps
//! plus a few scalars.

use crate::costmap::{CostMap, PlanningMaps};
use crate::geometry::{Pose, Vec2};
use crate::planner::Path;
use crate::world::{CellClass, SpeedAction, WorldState};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const CHANNELS: usize = 6;
pub const SCALARS: usize = 6;

pub const CH_CLASS: usize = 0;
pub const CH_COST: usize = 1;
pub const CH_PAST_PATH: usize = 2;
pub const CH_FUTURE_PATH: usize = 3;
pub const CH_PED_PAST: usize = 4;
pub const CH_PED_PREDICTED: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsParams {
    /// Cells per side.
    pub size: usize,
    /// Side of one observation cell (m).
    pub cell: f64,
    /// Window center ahead of the car, in cells.
    pub ahead_cells: f64,
    /// Cost mapped to 1.0 in the cost channel.
    pub cost_cap: f64,
    pub v_max: f64,
    /// Reward mapped to 1.0 in the reward scalar.
    pub reward_scale: f64,
}

impl Default for ObsParams {
    fn default() -> Self {
        Self {
            size: 32,
            cell: 1.0,
            ahead_cells: 8.0,
            cost_cap: 25.0,
            v_max: 8.3,
            reward_scale: 100.0,
        }
    }
}

/// Grid channels are stored quantized to bytes (value·255).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub size: usize,
    /// `[channel][row][col]`
    pub grid: Arc<[u8]>,
    /// (previous reward, speed / v_max, previous action one-hot)
    pub scalars: [f64; SCALARS],
}

impl Observation {
    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.size * self.size;
        &self.grid[c * n..(c + 1) * n]
    }

    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.iter().map(|&v| v as f64 / 255.0).collect()
    }
}

/// Car-frame crop geometry.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub pose: Pose,
    pub size: usize,
    pub cell: f64,
    pub ahead: f64,
}

impl Window {
    pub fn new(pose: Pose, p: &ObsParams) -> Self {
        Self {
            pose,
            size: p.size,
            cell: p.cell,
            ahead: p.ahead_cells,
        }
    }

    /// Continuous (col, row) coordinates of a world point.
    pub fn grid_coords(&self, p: Vec2) -> Vec2 {
        let l = self.pose.to_local(p);
        let half = self.size as f64 / 2.0;
        Vec2::new(l.x / self.cell + half - self.ahead, l.y / self.cell + half)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        let half = self.size as f64 / 2.0;
        self.pose.to_world(Vec2::new(
            (col as f64 + 0.5 - half + self.ahead) * self.cell,
            (row as f64 + 0.5 - half) * self.cell,
        ))
    }

    pub fn cell_of(&self, p: Vec2) -> Option<usize> {
        let g = self.grid_coords(p);
        let (c, r) = (g.x.floor(), g.y.floor());
        let n = self.size as f64;
        (c >= 0.0 && r >= 0.0 && c < n && r < n).then(|| r as usize * self.size + c as usize)
    }

    /// Marks every cell crossed by the polyline.
    pub fn rasterize_polyline(&self, points: &[Vec2], out: &mut [f64], value: f64) {
        let grid = CostMap::uniform(Vec2::ZERO, 1.0, self.size, self.size, 0.0);
        let mark = |i: i64, j: i64, out: &mut [f64]| {
            if grid.contains_cell(i, j) {
                let k = grid.index(i as usize, j as usize);
                out[k] = out[k].max(value);
            }
        };
        if let [p] = points {
            let g = grid.cell_coords(self.grid_coords(*p));
            mark(g.0, g.1, out);
        }
        for w in points.windows(2) {
            let (a, b) = (self.grid_coords(w[0]), self.grid_coords(w[1]));
            grid.traverse_segment(a, b, |i, j, _| mark(i, j, out));
        }
    }
}

fn class_value(c: CellClass) -> f64 {
    match c {
        CellClass::Lane => 1.0,
        CellClass::Sidewalk => 0.5,
        CellClass::Obstacle | CellClass::Free => 0.0,
    }
}

/// Builds the learner observation from the observable world, the selected
/// path (its source map supplies the class and cost channels) and the
/// car's recent positions.
pub fn encode_observation(
    world: &WorldState,
    maps: &PlanningMaps,
    path: &Path,
    car_history: &[Vec2],
    prev_reward: f64,
    prev_action: Option<SpeedAction>,
    params: &ObsParams,
) -> Observation {
    let n = params.size;
    let nn = n * n;
    let win = Window::new(world.car.pose, params);
    let map = maps.get(path.source_map);
    let mut ch = vec![0.0; CHANNELS * nn];

    for r in 0..n {
        for c in 0..n {
            let p = win.cell_center(r, c);
            let k = r * n + c;
            if let Some((i, j)) = map.cell_of(p) {
                ch[CH_CLASS * nn + k] = class_value(map.class(i, j));
                let cost = map.cost(i, j);
                ch[CH_COST * nn + k] = if cost.is_finite() {
                    (cost / params.cost_cap).clamp(0.0, 1.0)
                } else {
                    1.0
                };
            } else {
                ch[CH_COST * nn + k] = 1.0;
            }
        }
    }

    win.rasterize_polyline(car_history, &mut ch[CH_PAST_PATH * nn..(CH_PAST_PATH + 1) * nn], 1.0);
    let future: Vec<Vec2> = path.positions().collect();
    win.rasterize_polyline(&future, &mut ch[CH_FUTURE_PATH * nn..(CH_FUTURE_PATH + 1) * nn], 1.0);
    for ped in &world.pedestrians {
        let pts: Vec<Vec2> = ped.history.iter().copied().chain([ped.position]).collect();
        for p in pts {
            if let Some(k) = win.cell_of(p) {
                ch[CH_PED_PAST * nn + k] = 1.0;
            }
        }
    }
    for d in maps.prediction.all_discs() {
        let g = win.grid_coords(d.center);
        let reach = (d.radius / params.cell).ceil() as i64 + 1;
        for r in (g.y.floor() as i64 - reach)..=(g.y.floor() as i64 + reach) {
            for c in (g.x.floor() as i64 - reach)..=(g.x.floor() as i64 + reach) {
                if r < 0 || c < 0 || r >= n as i64 || c >= n as i64 {
                    continue;
                }
                if win.cell_center(r as usize, c as usize).distance(d.center) <= d.radius {
                    let k = CH_PED_PREDICTED * nn + r as usize * n + c as usize;
                    ch[k] = ch[k].max(d.weight.clamp(0.0, 1.0));
                }
            }
        }
    }

    let grid: Arc<[u8]> = ch.iter().map(|v| (v * 255.0).round() as u8).collect();
    let mut scalars = [0.0; SCALARS];
    scalars[0] = (prev_reward / params.reward_scale).clamp(-1.0, 1.0);
    scalars[1] = (world.car.speed / params.v_max).clamp(0.0, 1.0);
    if let Some(a) = prev_action {
        scalars[2 + a.index()] = 1.0;
    }
    Observation {
        size: n,
        grid,
        scalars,
    }
}
