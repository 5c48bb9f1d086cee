//! Planning cost maps built from the observable world: base, sidewalk
//! discounted and pedestrian predictive.

use crate::error::{Error, Result};
use crate::geometry::{Rect, Vec2};
use crate::world::{CellClass, PedestrianState, RoadLayout, WorldState};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Cell edge (m).
    pub resolution: f64,
    /// Square window edge (m).
    pub window: f64,
    /// Window center offset ahead of the car (m).
    pub window_ahead: f64,
    pub lane_cost: f64,
    pub sidewalk_cost: f64,
    pub free_sidewalk_cost: f64,
    pub predicted_cost: f64,
    /// Inflation around observed pedestrians, on top of their radius (m).
    pub ped_margin: f64,
    /// Inflation around obstacles and other cars (m).
    pub obstacle_margin: f64,
    /// Sidewalk cells closer than this to a pedestrian are not "free" (m).
    pub ped_clear: f64,
    pub ped_radius: f64,
    pub horizon_steps: usize,
    pub step_dt: f64,
    /// Upper bound on any finite cost.
    pub max_finite_cost: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            resolution: 0.25,
            window: 60.0,
            window_ahead: 20.0,
            lane_cost: 1.0,
            sidewalk_cost: 10.0,
            free_sidewalk_cost: 2.0,
            predicted_cost: 25.0,
            ped_margin: 1.2,
            obstacle_margin: 1.0,
            ped_clear: 3.0,
            ped_radius: 0.3,
            horizon_steps: 20,
            step_dt: 0.1,
            max_finite_cost: 1e6,
        }
    }
}

impl CostParams {
    /// Smallest finite cost any map can contain.
    pub fn cost_floor(&self) -> f64 {
        self.lane_cost
            .min(self.sidewalk_cost)
            .min(self.free_sidewalk_cost)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapKind {
    Base,
    Sidewalk,
    Predictive,
}

impl MapKind {
    pub const ALL: [MapKind; 3] = [MapKind::Base, MapKind::Sidewalk, MapKind::Predictive];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Base => "base",
            MapKind::Sidewalk => "sidewalk",
            MapKind::Predictive => "predictive",
        }
    }
}

/// Planar traversal-cost grid. `f64::INFINITY` marks untraversable cells.
///
/// Cell `(i, j)` covers `[origin.x + i·res, origin.x + (i+1)·res) x
/// [origin.y + j·res, origin.y + (j+1)·res)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMap {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<f64>,
    pub classes: Vec<CellClass>,
    pub cost_floor: f64,
}

impl CostMap {
    pub fn uniform(origin: Vec2, resolution: f64, width: usize, height: usize, cost: f64) -> Self {
        Self {
            origin,
            resolution,
            width,
            height,
            cells: vec![cost; width * height],
            classes: vec![CellClass::Lane; width * height],
            cost_floor: cost,
        }
    }

    /// Map from explicit row-major costs (`j * width + i`).
    pub fn from_costs(
        origin: Vec2,
        resolution: f64,
        width: usize,
        height: usize,
        cells: Vec<f64>,
        cost_floor: f64,
    ) -> Self {
        assert_eq!(cells.len(), width * height);
        let classes = cells
            .iter()
            .map(|c| {
                if c.is_finite() {
                    CellClass::Lane
                } else {
                    CellClass::Obstacle
                }
            })
            .collect();
        Self {
            origin,
            resolution,
            width,
            height,
            cells,
            classes,
            cost_floor,
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cells[self.index(i, j)]
    }

    pub fn class(&self, i: usize, j: usize) -> CellClass {
        self.classes[self.index(i, j)]
    }

    /// Signed cell coordinates of a point (may fall outside the grid).
    pub fn cell_coords(&self, p: Vec2) -> (i64, i64) {
        (
            ((p.x - self.origin.x) / self.resolution).floor() as i64,
            ((p.y - self.origin.y) / self.resolution).floor() as i64,
        )
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let (i, j) = self.cell_coords(p);
        self.contains_cell(i, j).then_some((i as usize, j as usize))
    }

    pub fn contains_cell(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    pub fn cell_center(&self, i: i64, j: i64) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Cost at a world point; infinite outside the grid.
    pub fn cost_at(&self, p: Vec2) -> f64 {
        self.cell_of(p)
            .map_or(f64::INFINITY, |(i, j)| self.cost(i, j))
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        self.cell_of(p).is_some()
    }

    pub fn same_grid(&self, other: &CostMap) -> bool {
        self.origin == other.origin
            && self.resolution == other.resolution
            && self.width == other.width
            && self.height == other.height
    }

    /// Inclusive cell range covering the axis-aligned box.
    fn cell_range(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<(usize, usize, usize, usize)> {
        let (i0, j0) = self.cell_coords(Vec2::new(x0, y0));
        let (i1, j1) = self.cell_coords(Vec2::new(x1, y1));
        let i0 = i0.max(0);
        let j0 = j0.max(0);
        let i1 = i1.min(self.width as i64 - 1);
        let j1 = j1.min(self.height as i64 - 1);
        (i0 <= i1 && j0 <= j1).then_some((i0 as usize, j0 as usize, i1 as usize, j1 as usize))
    }

    /// Calls `f` with the index of every cell whose center lies within
    /// `radius` of `center`.
    pub fn for_cells_in_disc(&self, center: Vec2, radius: f64, mut f: impl FnMut(usize)) {
        let Some((i0, j0, i1, j1)) = self.cell_range(
            center.x - radius,
            center.y - radius,
            center.x + radius,
            center.y + radius,
        ) else {
            return;
        };
        let r2 = radius * radius;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if self.cell_center(i as i64, j as i64).distance(center).powi(2) <= r2 {
                    f(self.index(i, j));
                }
            }
        }
    }

    /// Calls `f` for every cell whose center lies within `margin` of `rect`.
    fn for_cells_near_rect(&self, rect: &Rect, margin: f64, mut f: impl FnMut(usize)) {
        let (x0, y0, x1, y1) = rect.aabb();
        let Some((i0, j0, i1, j1)) =
            self.cell_range(x0 - margin, y0 - margin, x1 + margin, y1 + margin)
        else {
            return;
        };
        for j in j0..=j1 {
            for i in i0..=i1 {
                if rect.distance_to_point(self.cell_center(i as i64, j as i64)) <= margin {
                    f(self.index(i, j));
                }
            }
        }
    }

    /// Walks the cells crossed by segment `a → b` in order, calling
    /// `f(i, j, length_inside_cell)`. Cells outside the grid are reported
    /// with negative or out-of-range coordinates.
    pub fn traverse_segment(&self, a: Vec2, b: Vec2, mut f: impl FnMut(i64, i64, f64)) {
        let d = b - a;
        let len = d.norm();
        let (mut i, mut j) = self.cell_coords(a);
        if len == 0.0 {
            f(i, j, 0.0);
            return;
        }
        let res = self.resolution;
        let axis = |p: f64, o: f64, dir: f64, cell: i64| -> (i64, f64, f64) {
            if dir > 0.0 {
                let edge = o + (cell + 1) as f64 * res;
                (1, (edge - p) / dir, res / dir)
            } else if dir < 0.0 {
                let edge = o + cell as f64 * res;
                (-1, (edge - p) / dir, -res / dir)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (si, mut tx, dtx) = axis(a.x, self.origin.x, d.x, i);
        let (sj, mut ty, dty) = axis(a.y, self.origin.y, d.y, j);
        let mut t = 0.0;
        loop {
            let t_next = tx.min(ty).min(1.0);
            f(i, j, (t_next - t) * len);
            if t_next >= 1.0 {
                break;
            }
            t = t_next;
            if tx <= ty {
                i += si;
                tx += dtx;
            } else {
                j += sj;
                ty += dty;
            }
        }
    }

    /// Cost of driving straight from `a` to `b`: Σ length-in-cell × cell
    /// cost. Infinite if any crossed cell is untraversable or off-grid.
    pub fn segment_cost(&self, a: Vec2, b: Vec2) -> f64 {
        let mut total = 0.0;
        self.traverse_segment(a, b, |i, j, len| {
            let c = if self.contains_cell(i, j) {
                self.cost(i as usize, j as usize)
            } else {
                f64::INFINITY
            };
            if c.is_finite() {
                total += c * len;
            } else {
                total = f64::INFINITY;
            }
        });
        total
    }

    /// Debug dump as binary PGM; untraversable cells are black, cheap cells white.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let max_finite = self
            .cells
            .iter()
            .copied()
            .filter(|c| c.is_finite())
            .fold(self.cost_floor, f64::max);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let mut row = Vec::with_capacity(self.width);
        for j in (0..self.height).rev() {
            row.clear();
            for i in 0..self.width {
                let c = self.cost(i, j);
                let px = if c.is_finite() {
                    let t = if max_finite > self.cost_floor {
                        (c - self.cost_floor) / (max_finite - self.cost_floor)
                    } else {
                        0.0
                    };
                    (255.0 - 254.0 * t).round() as u8
                } else {
                    0
                };
                row.push(px);
            }
            out.write_all(&row)?;
        }
        Ok(())
    }

    /// Sidecar metadata for [`CostMap::write_pgm`].
    pub fn pgm_metadata(&self, kind: MapKind) -> String {
        let max_finite = self
            .cells
            .iter()
            .copied()
            .filter(|c| c.is_finite())
            .fold(self.cost_floor, f64::max);
        format!(
            "map = {}\norigin_x = {}\norigin_y = {}\nresolution = {}\nwidth = {}\nheight = {}\n\
             cost_floor = {}\nmax_finite_cost = {}\nencoding = \"255 - 254 * (cost - floor) / (max - floor); 0 = untraversable; first row is the top (max y)\"\n",
            kind.name(),
            self.origin.x,
            self.origin.y,
            self.resolution,
            self.width,
            self.height,
            self.cost_floor,
            max_finite
        )
    }
}

fn class_cost(class: CellClass, params: &CostParams) -> f64 {
    match class {
        CellClass::Lane => params.lane_cost,
        CellClass::Sidewalk => params.sidewalk_cost,
        CellClass::Obstacle | CellClass::Free => f64::INFINITY,
    }
}

/// Base map: lanes cheap, sidewalks expensive, obstacles, other cars and
/// currently observed pedestrians untraversable.
pub fn build_base_costmap(obs: &WorldState, params: &CostParams) -> Result<CostMap> {
    let layout: &RoadLayout = &obs.layout;
    let car = obs.car.pose;
    if !layout.in_bounds(car.position()) {
        return Err(Error::OutOfBounds { x: car.x, y: car.y });
    }
    let res = params.resolution;
    let n = (params.window / res).round() as usize;
    let center = car.position() + car.direction() * params.window_ahead;
    let half = 0.5 * params.window;
    let origin = Vec2::new(
        ((center.x - half) / res).floor() * res,
        ((center.y - half) / res).floor() * res,
    );
    let mut map = CostMap {
        origin,
        resolution: res,
        width: n,
        height: n,
        cells: vec![0.0; n * n],
        classes: vec![CellClass::Free; n * n],
        cost_floor: params.cost_floor(),
    };
    for j in 0..n {
        for i in 0..n {
            let class = layout.classify(map.cell_center(i as i64, j as i64));
            let k = map.index(i, j);
            map.classes[k] = class;
            map.cells[k] = class_cost(class, params);
        }
    }
    let blockers: Vec<Rect> = layout
        .obstacles
        .iter()
        .copied()
        .chain(obs.other_cars.iter().map(|c| {
            Rect::footprint(&c.pose, 4.4, 1.8)
        }))
        .collect();
    let mut blocked = Vec::new();
    for rect in &blockers {
        map.for_cells_near_rect(rect, params.obstacle_margin, |k| blocked.push(k));
    }
    for p in &obs.pedestrians {
        map.for_cells_in_disc(p.position, params.ped_radius + params.ped_margin, |k| {
            blocked.push(k)
        });
    }
    for k in blocked {
        map.cells[k] = f64::INFINITY;
    }
    Ok(map)
}

/// Discounts sidewalk cells that are clear of observed pedestrians.
pub fn build_sidewalk_costmap(base: &CostMap, obs: &WorldState, params: &CostParams) -> CostMap {
    let mut map = base.clone();
    let clear2 = params.ped_clear * params.ped_clear;
    for j in 0..map.height {
        for i in 0..map.width {
            let k = map.index(i, j);
            if map.classes[k] != CellClass::Sidewalk || !map.cells[k].is_finite() {
                continue;
            }
            let c = map.cell_center(i as i64, j as i64);
            let occupied = obs
                .pedestrians
                .iter()
                .any(|p| (p.position - c).norm_sq() < clear2);
            if !occupied {
                map.cells[k] = params.free_sidewalk_cost;
            }
        }
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisKind {
    Continue,
    TurnToRoad,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub kind: HypothesisKind,
    pub weight: f64,
    /// Disc center per prediction step, step 0 being now.
    pub centers: Vec<Vec2>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PedPrediction {
    pub ped_id: usize,
    pub hypotheses: Vec<Hypothesis>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedDisc {
    pub center: Vec2,
    pub radius: f64,
    pub weight: f64,
}

/// Multi-hypothesis pedestrian forecast over a short horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedOccupancy {
    pub horizon_steps: usize,
    pub step_dt: f64,
    pub peds: Vec<PedPrediction>,
}

impl PredictedOccupancy {
    pub fn empty(horizon_steps: usize, step_dt: f64) -> Self {
        Self {
            horizon_steps,
            step_dt,
            peds: vec![],
        }
    }

    /// Disc radius grows linearly with the step: 0.3 + 0.2·t·dt.
    pub fn radius(&self, step: usize) -> f64 {
        0.3 + 0.2 * step as f64 * self.step_dt
    }

    pub fn discs_at(&self, step: usize) -> Vec<WeightedDisc> {
        let radius = self.radius(step);
        self.peds
            .iter()
            .flat_map(|p| p.hypotheses.iter())
            .filter_map(|h| {
                h.centers.get(step).map(|&center| WeightedDisc {
                    center,
                    radius,
                    weight: h.weight,
                })
            })
            .collect()
    }

    pub fn all_discs(&self) -> Vec<WeightedDisc> {
        (0..self.horizon_steps).flat_map(|t| self.discs_at(t)).collect()
    }
}

/// Least-squares velocity over a uniformly sampled position history.
pub fn fit_velocity(history: &[Vec2], dt: f64) -> Option<Vec2> {
    let n = history.len();
    if n < 2 {
        return None;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let p_mean = history.iter().fold(Vec2::ZERO, |a, p| a + *p) * (1.0 / n as f64);
    let mut num = Vec2::ZERO;
    let mut den = 0.0;
    for (k, p) in history.iter().enumerate() {
        let dt_k = k as f64 - t_mean;
        num = num + (*p - p_mean) * dt_k;
        den += dt_k * dt_k;
    }
    Some(num * (1.0 / (den * dt)))
}

/// Minimum speed assumed for a pedestrian turning toward the road (m/s).
pub const TURN_SPEED_FLOOR: f64 = 1.0;

/// Three hypotheses per pedestrian: continue at the fitted velocity (0.5),
/// turn perpendicular toward the road (0.3), stop (0.2). Pedestrians with
/// fewer than two history points get a single stationary hypothesis.
pub fn predict_pedestrians(
    peds: &[PedestrianState],
    layout: &RoadLayout,
    horizon_steps: usize,
    step_dt: f64,
) -> PredictedOccupancy {
    let mut out = PredictedOccupancy::empty(horizon_steps, step_dt);
    for ped in peds {
        let p = ped.position;
        let history: Vec<Vec2> = ped.history.iter().copied().collect();
        let track = |v: Vec2| -> Vec<Vec2> {
            (0..horizon_steps)
                .map(|t| p + v * (t as f64 * step_dt))
                .collect()
        };
        let hypotheses = match fit_velocity(&history, step_dt) {
            None => vec![Hypothesis {
                kind: HypothesisKind::Stop,
                weight: 1.0,
                centers: track(Vec2::ZERO),
            }],
            Some(v) => {
                let turn_speed = v.norm().max(TURN_SPEED_FLOOR);
                let turn = layout.crossing_direction(p) * turn_speed;
                vec![
                    Hypothesis {
                        kind: HypothesisKind::Continue,
                        weight: 0.5,
                        centers: track(v),
                    },
                    Hypothesis {
                        kind: HypothesisKind::TurnToRoad,
                        weight: 0.3,
                        centers: track(turn),
                    },
                    Hypothesis {
                        kind: HypothesisKind::Stop,
                        weight: 0.2,
                        centers: track(Vec2::ZERO),
                    },
                ]
            }
        };
        out.peds.push(PedPrediction {
            ped_id: ped.id,
            hypotheses,
        });
    }
    out
}

/// Adds `c_pred·weight·(1 − t/H)` to every finite cell covered by a
/// predicted disc. Untraversable cells stay untraversable; nothing becomes
/// untraversable.
pub fn build_predictive_costmap(
    base: &CostMap,
    pred: &PredictedOccupancy,
    params: &CostParams,
) -> CostMap {
    let mut map = base.clone();
    let horizon = pred.horizon_steps.max(1) as f64;
    for t in 0..pred.horizon_steps {
        let decay = 1.0 - t as f64 / horizon;
        for disc in pred.discs_at(t) {
            let add = params.predicted_cost * disc.weight * decay;
            let cells = &mut map.cells;
            base.for_cells_in_disc(disc.center, disc.radius, |k| {
                if cells[k].is_finite() {
                    cells[k] = (cells[k] + add).min(params.max_finite_cost);
                }
            });
        }
    }
    map
}

/// The three planning maps for one observation.
#[derive(Clone, Debug)]
pub struct PlanningMaps {
    pub base: CostMap,
    pub sidewalk: CostMap,
    pub predictive: CostMap,
    pub prediction: PredictedOccupancy,
}

impl PlanningMaps {
    pub fn build(obs: &WorldState, params: &CostParams) -> Result<Self> {
        let base = build_base_costmap(obs, params)?;
        let sidewalk = build_sidewalk_costmap(&base, obs, params);
        let prediction =
            predict_pedestrians(&obs.pedestrians, &obs.layout, params.horizon_steps, params.step_dt);
        let predictive = build_predictive_costmap(&base, &prediction, params);
        Ok(Self {
            base,
            sidewalk,
            predictive,
            prediction,
        })
    }

    pub fn get(&self, kind: MapKind) -> &CostMap {
        match kind {
            MapKind::Base => &self.base,
            MapKind::Sidewalk => &self.sidewalk,
            MapKind::Predictive => &self.predictive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::world::{CarState, PedBehavior, PedSpec};
    use std::sync::Arc;

    fn world(layout: RoadLayout, peds: Vec<Vec2>) -> WorldState {
        WorldState {
            time: 0.0,
            car: CarState::at_rest(Pose::new(10.0, -1.75, 0.0)),
            pedestrians: peds
                .into_iter()
                .enumerate()
                .map(|(id, p)| {
                    PedestrianState::from_spec(
                        id,
                        &PedSpec {
                            spawn: p,
                            speed: 1.0,
                            crossing_distance: 10.0,
                            trigger_distance: 10.0,
                            behavior: PedBehavior::Stand,
                            cross_direction: Vec2::new(0.0, 1.0),
                            crossing_extent: 10.0,
                            walk_velocity: Vec2::ZERO,
                        },
                    )
                })
                .collect(),
            other_cars: vec![],
            layout: Arc::new(layout),
            goal: Pose::new(90.0, -1.75, 0.0),
        }
    }

    #[test]
    fn empty_road_lanes_cost_one() {
        let params = CostParams::default();
        let m = build_base_costmap(&world(RoadLayout::straight_road(-50.0, 150.0), vec![]), &params)
            .unwrap();
        assert_eq!(m.width, 240);
        for k in 0..m.cells.len() {
            match m.classes[k] {
                CellClass::Lane => assert_eq!(m.cells[k], 1.0),
                CellClass::Sidewalk => assert_eq!(m.cells[k], 10.0),
                _ => assert!(m.cells[k].is_infinite()),
            }
        }
    }

    #[test]
    fn parked_car_cells_are_untraversable() {
        let params = CostParams::default();
        let car = Rect::from_bounds(30.0, -5.3, 34.4, -3.5);
        let layout = RoadLayout::straight_road(-50.0, 150.0).with_obstacle(car);
        let m = build_base_costmap(&world(layout, vec![]), &params).unwrap();
        for j in 0..m.height {
            for i in 0..m.width {
                if car.contains(m.cell_center(i as i64, j as i64)) {
                    assert!(m.cost(i, j).is_infinite());
                    assert_eq!(m.class(i, j), CellClass::Obstacle);
                }
            }
        }
    }

    #[test]
    fn pedestrian_disc_rasterization() {
        let params = CostParams::default();
        let ped = Vec2::new(25.1, -1.3);
        let m = build_base_costmap(
            &world(RoadLayout::straight_road(-50.0, 150.0), vec![ped]),
            &params,
        )
        .unwrap();
        let r = params.ped_radius + params.ped_margin;
        let mut inside = 0;
        for j in 0..m.height {
            for i in 0..m.width {
                let c = m.cell_center(i as i64, j as i64);
                if c.distance(ped) <= r {
                    inside += 1;
                    assert!(m.cost(i, j).is_infinite());
                } else if m.class(i, j) == CellClass::Lane {
                    assert_eq!(m.cost(i, j), 1.0, "cell outside the disc changed");
                }
            }
        }
        // Area of a 1.5 m disc over 0.0625 m² cells.
        let expected = std::f64::consts::PI * r * r / (m.resolution * m.resolution);
        assert!((inside as f64 - expected).abs() < 0.1 * expected);
    }

    #[test]
    fn car_outside_layout_is_an_error() {
        let mut w = world(RoadLayout::straight_road(-50.0, 150.0), vec![]);
        w.car.pose = Pose::new(500.0, 0.0, 0.0);
        assert!(matches!(
            build_base_costmap(&w, &CostParams::default()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn sidewalk_discount_respects_pedestrians() {
        let params = CostParams::default();
        let layout = RoadLayout::straight_road(-50.0, 150.0);
        let empty = world(layout.clone(), vec![]);
        let base = build_base_costmap(&empty, &params).unwrap();
        let sw = build_sidewalk_costmap(&base, &empty, &params);
        for k in 0..sw.cells.len() {
            if sw.classes[k] == CellClass::Sidewalk {
                assert_eq!(sw.cells[k], 2.0);
            } else {
                assert_eq!(sw.cells[k].to_bits(), base.cells[k].to_bits());
            }
        }

        let ped = Vec2::new(30.0, -5.0);
        let occupied = world(layout, vec![ped]);
        let base = build_base_costmap(&occupied, &params).unwrap();
        let sw = build_sidewalk_costmap(&base, &occupied, &params);
        for j in 0..sw.height {
            for i in 0..sw.width {
                if sw.class(i, j) != CellClass::Sidewalk || base.cost(i, j).is_infinite() {
                    continue;
                }
                let d = sw.cell_center(i as i64, j as i64).distance(ped);
                if d < 3.0 {
                    assert_eq!(sw.cost(i, j), 10.0);
                } else {
                    assert_eq!(sw.cost(i, j), 2.0);
                }
            }
        }
    }

    fn ped_with_history(history: &[Vec2]) -> PedestrianState {
        let mut p = world(RoadLayout::straight_road(-50.0, 150.0), vec![*history.last().unwrap()])
            .pedestrians
            .remove(0);
        p.history = history.iter().copied().collect();
        p
    }

    #[test]
    fn stationary_pedestrian_hypotheses_start_in_place() {
        let layout = RoadLayout::straight_road(-50.0, 150.0);
        let p = Vec2::new(20.0, -5.0);
        let ped = ped_with_history(&[p; 5]);
        let pred = predict_pedestrians(&[ped], &layout, 20, 0.1);
        assert_eq!(pred.peds[0].hypotheses.len(), 3);
        for h in &pred.peds[0].hypotheses {
            assert_eq!(h.centers[0], p);
        }
        for t in 0..20 {
            let w: f64 = pred.discs_at(t).iter().map(|d| d.weight).sum();
            assert!((w - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn short_history_gives_single_stationary_hypothesis() {
        let layout = RoadLayout::straight_road(-50.0, 150.0);
        let ped = ped_with_history(&[Vec2::new(20.0, -5.0)]);
        let pred = predict_pedestrians(&[ped], &layout, 20, 0.1);
        assert_eq!(pred.peds[0].hypotheses.len(), 1);
        assert_eq!(pred.peds[0].hypotheses[0].weight, 1.0);
    }

    #[test]
    fn continue_hypothesis_extrapolates_linearly() {
        let layout = RoadLayout::straight_road(-50.0, 150.0);
        let v = Vec2::new(0.4, 1.2);
        let start = Vec2::new(20.0, -5.0);
        let history: Vec<Vec2> = (0..6).map(|k| start + v * (0.1 * k as f64)).collect();
        let p = *history.last().unwrap();
        let pred = predict_pedestrians(&[ped_with_history(&history)], &layout, 20, 0.1);
        let cont = &pred.peds[0].hypotheses[0];
        assert_eq!(cont.kind, HypothesisKind::Continue);
        for t in 0..20 {
            let oracle = p + v * (t as f64 * 0.1);
            assert!(cont.centers[t].distance(oracle) < 1e-9, "step {t}");
        }
    }

    #[test]
    fn predictive_map_formula_and_identity() {
        let params = CostParams::default();
        let base = CostMap::uniform(Vec2::ZERO, 0.25, 40, 40, 1.0);
        let empty = PredictedOccupancy::empty(20, 0.1);
        assert_eq!(build_predictive_costmap(&base, &empty, &params), base);

        let center = Vec2::new(5.05, 5.05);
        let pred = PredictedOccupancy {
            horizon_steps: 1,
            step_dt: 0.1,
            peds: vec![PedPrediction {
                ped_id: 0,
                hypotheses: vec![Hypothesis {
                    kind: HypothesisKind::Stop,
                    weight: 1.0,
                    centers: vec![center],
                }],
            }],
        };
        let m = build_predictive_costmap(&base, &pred, &params);
        let (i, j) = m.cell_of(center).unwrap();
        assert_eq!(m.cost(i, j), 1.0 + 25.0);
    }

    #[test]
    fn overlapping_hypotheses_accumulate() {
        // Brute-force oracle: per cell, sum contributions of every covering disc.
        let params = CostParams::default();
        let base = CostMap::uniform(Vec2::ZERO, 0.25, 40, 40, 1.0);
        let hyp = |w: f64, c: Vec<Vec2>| Hypothesis {
            kind: HypothesisKind::Continue,
            weight: w,
            centers: c,
        };
        let pred = PredictedOccupancy {
            horizon_steps: 3,
            step_dt: 0.1,
            peds: vec![
                PedPrediction {
                    ped_id: 0,
                    hypotheses: vec![
                        hyp(0.5, vec![Vec2::new(4.0, 4.0), Vec2::new(4.2, 4.1), Vec2::new(4.4, 4.2)]),
                        hyp(0.5, vec![Vec2::new(4.0, 4.0), Vec2::new(4.0, 4.3), Vec2::new(4.0, 4.6)]),
                    ],
                },
                PedPrediction {
                    ped_id: 1,
                    hypotheses: vec![hyp(
                        1.0,
                        vec![Vec2::new(4.3, 4.2), Vec2::new(4.3, 4.2), Vec2::new(4.3, 4.2)],
                    )],
                },
            ],
        };
        let m = build_predictive_costmap(&base, &pred, &params);
        for j in 0..40 {
            for i in 0..40 {
                let c = base.cell_center(i, j);
                let mut expected = 1.0;
                for t in 0..3 {
                    let r = 0.3 + 0.2 * t as f64 * 0.1;
                    for p in &pred.peds {
                        for h in &p.hypotheses {
                            if c.distance(h.centers[t]) <= r {
                                expected += 25.0 * h.weight * (1.0 - t as f64 / 3.0);
                            }
                        }
                    }
                }
                let got = m.cost(i as usize, j as usize);
                assert!((got - expected).abs() < 1e-9, "cell ({i},{j}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let params = CostParams::default();
        let w = world(RoadLayout::straight_road(-50.0, 150.0), vec![Vec2::new(30.0, -4.0)]);
        let a = PlanningMaps::build(&w, &params).unwrap();
        let b = PlanningMaps::build(&w, &params).unwrap();
        for kind in MapKind::ALL {
            let (x, y) = (a.get(kind), b.get(kind));
            assert!(x.same_grid(y));
            assert!(x.cells.iter().zip(&y.cells).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn segment_traversal_matches_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let m = CostMap::uniform(Vec2::new(-1.0, 2.0), 0.5, 20, 20, 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = Vec2::new(rng.random_range(-0.9..8.9), rng.random_range(2.1..11.9));
            let b = Vec2::new(rng.random_range(-0.9..8.9), rng.random_range(2.1..11.9));
            let mut exact = std::collections::BTreeMap::new();
            m.traverse_segment(a, b, |i, j, len| *exact.entry((i, j)).or_insert(0.0) += len);
            let n = 20_000;
            let step = a.distance(b) / n as f64;
            let mut sampled = std::collections::BTreeMap::new();
            for k in 0..n {
                let p = a + (b - a) * ((k as f64 + 0.5) / n as f64);
                *sampled.entry(m.cell_coords(p)).or_insert(0.0) += step;
            }
            for (cell, len) in &sampled {
                let got = exact.get(cell).copied().unwrap_or(0.0);
                assert!((got - len).abs() < 2.0 * step, "{cell:?}: {got} vs {len}");
            }
            let total: f64 = exact.values().sum();
            assert!((total - a.distance(b)).abs() < 1e-9);
        }
    }

    #[test]
    fn pgm_dump_has_expected_size() {
        let m = CostMap::uniform(Vec2::ZERO, 0.25, 7, 5, 1.0);
        let mut buf = vec![];
        m.write_pgm(&mut buf).unwrap();
        let header = b"P5\n7 5\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 35);
    }
}
