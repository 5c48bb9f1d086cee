//! Road layouts: lanes, sidewalks and static obstacles.

use crate::geometry::{point_segment_distance, Rect, Vec2};
use serde::{Deserialize, Serialize};

/// Lane width of the generated road network (m).
pub const LANE_WIDTH: f64 = 3.5;
/// Sidewalk width of the generated road network (m).
pub const SIDEWALK_WIDTH: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellClass {
    Lane,
    Sidewalk,
    Obstacle,
    /// Off-road terrain. Not drivable.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub area: Rect,
    pub centerline: (Vec2, Vec2),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    /// (x_min, y_min, x_max, y_max)
    pub bounds: (f64, f64, f64, f64),
    pub lanes: Vec<Lane>,
    pub sidewalks: Vec<Rect>,
    /// Parked cars and other static obstacles. They also block line of sight.
    pub obstacles: Vec<Rect>,
    /// y coordinate of the main road's centerline (the road runs along +x).
    pub road_axis_y: f64,
}

impl RoadLayout {
    /// Two-lane road along +x with sidewalks on both sides, spanning `[x_min, x_max]`.
    pub fn straight_road(x_min: f64, x_max: f64) -> Self {
        let w = LANE_WIDTH;
        let s = SIDEWALK_WIDTH;
        let lanes = vec![
            Lane {
                area: Rect::from_bounds(x_min, -w, x_max, 0.0),
                centerline: (Vec2::new(x_min, -0.5 * w), Vec2::new(x_max, -0.5 * w)),
            },
            Lane {
                area: Rect::from_bounds(x_min, 0.0, x_max, w),
                centerline: (Vec2::new(x_min, 0.5 * w), Vec2::new(x_max, 0.5 * w)),
            },
        ];
        let sidewalks = vec![
            Rect::from_bounds(x_min, -w - s, x_max, -w),
            Rect::from_bounds(x_min, w, x_max, w + s),
        ];
        Self {
            bounds: (x_min, -30.0, x_max, 30.0),
            lanes,
            sidewalks,
            obstacles: Vec::new(),
            road_axis_y: 0.0,
        }
    }

    /// Adds a perpendicular two-lane road crossing the main road at `x`.
    pub fn with_crossroad(mut self, x: f64) -> Self {
        let w = LANE_WIDTH;
        let s = SIDEWALK_WIDTH;
        let (_, y_min, _, y_max) = self.bounds;
        self.lanes.push(Lane {
            area: Rect::from_bounds(x - w, y_min, x, y_max),
            centerline: (Vec2::new(x - 0.5 * w, y_min), Vec2::new(x - 0.5 * w, y_max)),
        });
        self.lanes.push(Lane {
            area: Rect::from_bounds(x, y_min, x + w, y_max),
            centerline: (Vec2::new(x + 0.5 * w, y_min), Vec2::new(x + 0.5 * w, y_max)),
        });
        self.sidewalks
            .push(Rect::from_bounds(x - w - s, y_min, x - w, y_max));
        self.sidewalks
            .push(Rect::from_bounds(x + w, y_min, x + w + s, y_max));
        self
    }

    pub fn with_obstacle(mut self, obstacle: Rect) -> Self {
        self.obstacles.push(obstacle);
        self
    }

    pub fn in_bounds(&self, p: Vec2) -> bool {
        let (x0, y0, x1, y1) = self.bounds;
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    /// Static class of a point; obstacles take precedence over lanes over sidewalks.
    pub fn classify(&self, p: Vec2) -> CellClass {
        if !self.in_bounds(p) {
            return CellClass::Free;
        }
        if self.obstacles.iter().any(|o| o.contains(p)) {
            CellClass::Obstacle
        } else if self.lanes.iter().any(|l| l.area.contains(p)) {
            CellClass::Lane
        } else if self.sidewalks.iter().any(|s| s.contains(p)) {
            CellClass::Sidewalk
        } else {
            CellClass::Free
        }
    }

    /// Distance to the nearest lane centerline.
    pub fn lane_center_distance(&self, p: Vec2) -> f64 {
        self.lanes
            .iter()
            .map(|l| point_segment_distance(p, l.centerline.0, l.centerline.1))
            .fold(f64::INFINITY, f64::min)
    }

    /// Unit direction a pedestrian at `p` would walk to cross the main road.
    pub fn crossing_direction(&self, p: Vec2) -> Vec2 {
        if p.y <= self.road_axis_y {
            Vec2::new(0.0, 1.0)
        } else {
            Vec2::new(0.0, -1.0)
        }
    }

    /// True when the segment from `eye` to `target` is blocked by a static obstacle.
    pub fn occluded(&self, eye: Vec2, target: Vec2) -> bool {
        self.obstacles
            .iter()
            .any(|o| !o.contains(eye) && !o.contains(target) && o.intersects_segment(eye, target))
    }
}
