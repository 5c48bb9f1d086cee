//! Parametric driver risk field: anisotropic Gaussians in the car frame
//! combined by noisy-or.

use crate::costmap::PredictedOccupancy;
use crate::geometry::{Pose, Rect, Vec2};
use crate::planner::Path;
use crate::world::WorldState;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskParams {
    /// σ∥ = sigma_long_base + sigma_long_per_speed · speed.
    pub sigma_long_base: f64,
    pub sigma_long_per_speed: f64,
    pub sigma_lat: f64,
    pub amplitude: f64,
    pub ped_weight: f64,
    pub obstacle_weight: f64,
    pub threshold: f64,
    /// Lowest speed used to estimate when the car reaches a path pose (m/s).
    pub eta_min_speed: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            sigma_long_base: 2.0,
            sigma_long_per_speed: 0.5,
            sigma_lat: 1.5,
            amplitude: 0.95,
            ped_weight: 1.0,
            obstacle_weight: 0.5,
            threshold: 0.1,
            eta_min_speed: 1.0,
        }
    }
}

impl RiskParams {
    pub fn sigma_long(&self, speed: f64) -> f64 {
        self.sigma_long_base + self.sigma_long_per_speed * speed.max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HazardShape {
    Point(Vec2),
    /// Risk measured to the closest point of the rectangle.
    Area(Rect),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hazard {
    pub shape: HazardShape,
    pub weight: f64,
}

impl Hazard {
    pub fn point(p: Vec2, weight: f64) -> Self {
        Self {
            shape: HazardShape::Point(p),
            weight,
        }
    }

    pub fn area(r: Rect, weight: f64) -> Self {
        Self {
            shape: HazardShape::Area(r),
            weight,
        }
    }

    fn nearest(&self, p: Vec2) -> Vec2 {
        match self.shape {
            HazardShape::Point(q) => q,
            HazardShape::Area(r) => r.closest_point(p),
        }
    }
}

/// Single-hazard field value for offsets in the car frame.
pub fn field_kernel(d_par: f64, d_perp: f64, speed: f64, weight: f64, params: &RiskParams) -> f64 {
    let sl = params.sigma_long(speed);
    let st = params.sigma_lat;
    let r = weight
        * params.amplitude
        * (-(d_par * d_par) / (2.0 * sl * sl) - (d_perp * d_perp) / (2.0 * st * st)).exp();
    r.clamp(0.0, 1.0)
}

/// Noisy-or of per-hazard risks, accumulated in log space.
pub fn noisy_or(risks: impl IntoIterator<Item = f64>) -> f64 {
    let log_safe: f64 = risks.into_iter().map(|r| (-r).ln_1p()).sum();
    (-log_safe.exp_m1()).clamp(0.0, 1.0)
}

pub fn hazard_risk(pose: &Pose, speed: f64, hazard: &Hazard, params: &RiskParams) -> f64 {
    let local = pose.to_local(hazard.nearest(pose.position()));
    field_kernel(local.x, local.y, speed, hazard.weight, params)
}

pub fn risk_at(pose: &Pose, speed: f64, hazards: &[Hazard], params: &RiskParams) -> f64 {
    noisy_or(hazards.iter().map(|h| hazard_risk(pose, speed, h, params)))
}

/// Hazards visible to the planner: observed pedestrians and obstacles now,
/// plus predicted pedestrian discs per prediction step.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskScene {
    pub current: Vec<Hazard>,
    /// `predicted[t]`: hypothesis discs at step t, weighted by hypothesis weight.
    pub predicted: Vec<Vec<Hazard>>,
    pub step_dt: f64,
}

impl RiskScene {
    pub fn empty() -> Self {
        Self {
            current: vec![],
            predicted: vec![],
            step_dt: 0.1,
        }
    }

    pub fn from_observation(
        obs: &WorldState,
        pred: &PredictedOccupancy,
        car_size: (f64, f64),
        params: &RiskParams,
    ) -> Self {
        let mut current: Vec<Hazard> = obs
            .pedestrians
            .iter()
            .map(|p| Hazard::point(p.position, params.ped_weight))
            .collect();
        current.extend(
            obs.layout
                .obstacles
                .iter()
                .map(|r| Hazard::area(*r, params.obstacle_weight)),
        );
        current.extend(obs.other_cars.iter().map(|c| {
            Hazard::area(
                Rect::footprint(&c.pose, car_size.0, car_size.1),
                params.obstacle_weight,
            )
        }));
        let predicted = (0..pred.horizon_steps)
            .map(|t| {
                pred.discs_at(t)
                    .into_iter()
                    .map(|d| Hazard::point(d.center, params.ped_weight * d.weight))
                    .collect()
            })
            .collect();
        Self {
            current,
            predicted,
            step_dt: pred.step_dt,
        }
    }

    /// Hazards relevant at `eta` seconds from now.
    pub fn hazards_at(&self, eta: f64) -> Vec<Hazard> {
        let mut out = self.current.clone();
        if !self.predicted.is_empty() {
            let t = ((eta / self.step_dt).round() as usize).min(self.predicted.len() - 1);
            out.extend_from_slice(&self.predicted[t]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRisk {
    pub per_pose: Vec<f64>,
    /// Maximum per-pose risk.
    pub aggregate: f64,
    pub mean: f64,
    pub above_threshold: bool,
}

impl PathRisk {
    pub fn from_per_pose(per_pose: Vec<f64>, threshold: f64) -> Self {
        let aggregate = per_pose.iter().copied().fold(0.0, f64::max);
        let mean = if per_pose.is_empty() {
            0.0
        } else {
            per_pose.iter().sum::<f64>() / per_pose.len() as f64
        };
        Self {
            per_pose,
            aggregate,
            mean,
            above_threshold: aggregate > threshold,
        }
    }
}

/// Risk at every path pose. Each pose sees predicted hazards for the time
/// the car would reach it at `speed`.
pub fn path_risk(path: &Path, speed: f64, scene: &RiskScene, params: &RiskParams) -> PathRisk {
    let v = speed.max(params.eta_min_speed);
    let mut s = 0.0;
    let mut per_pose = Vec::with_capacity(path.poses.len());
    for (k, pose) in path.poses.iter().enumerate() {
        if k > 0 {
            s += path.poses[k - 1].position().distance(pose.position());
        }
        per_pose.push(risk_at(pose, speed, &scene.hazards_at(s / v), params));
    }
    PathRisk::from_per_pose(per_pose, params.threshold)
}
