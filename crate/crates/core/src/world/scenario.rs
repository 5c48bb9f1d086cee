//! Parameterized scenario families and benchmark grid expansion.
//!
//! Every family is a straight two-lane road along +x (ego lane centered at
//! y = -1.75, sidewalks at |y| in [3.5, 6.5]) with a family-specific
//! arrangement of crossing pedestrians, parked cars, a crossroad or an
//! oncoming car. The two grid axes are the pedestrian speed and the
//! crossing distance, i.e. how far ahead of the car's start the pedestrian
//! crosses.

use super::layout::RoadLayout;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Rect, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub const FAMILY_COUNT: usize = 12;

const EGO_Y: f64 = -1.75;
const CAR_HALF_LENGTH: f64 = 2.2;
const NOMINAL_V_MAX: f64 = 8.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    CrossRight,
    CrossLeft,
    OccludedParked,
    OccludedTwoParked,
    IncomingCarCross,
    IncomingCarOccluded,
    IntersectionCross,
    IntersectionOccluded,
    CurbStop,
    TwoPedsCross,
    PedInLane,
    WalkAlong,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; FAMILY_COUNT] = [
        ScenarioFamily::CrossRight,
        ScenarioFamily::CrossLeft,
        ScenarioFamily::OccludedParked,
        ScenarioFamily::OccludedTwoParked,
        ScenarioFamily::IncomingCarCross,
        ScenarioFamily::IncomingCarOccluded,
        ScenarioFamily::IntersectionCross,
        ScenarioFamily::IntersectionOccluded,
        ScenarioFamily::CurbStop,
        ScenarioFamily::TwoPedsCross,
        ScenarioFamily::PedInLane,
        ScenarioFamily::WalkAlong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioFamily::CrossRight => "cross_right",
            ScenarioFamily::CrossLeft => "cross_left",
            ScenarioFamily::OccludedParked => "occluded_parked",
            ScenarioFamily::OccludedTwoParked => "occluded_two_parked",
            ScenarioFamily::IncomingCarCross => "incoming_car_cross",
            ScenarioFamily::IncomingCarOccluded => "incoming_car_occluded",
            ScenarioFamily::IntersectionCross => "intersection_cross",
            ScenarioFamily::IntersectionOccluded => "intersection_occluded",
            ScenarioFamily::CurbStop => "curb_stop",
            ScenarioFamily::TwoPedsCross => "two_peds_cross",
            ScenarioFamily::PedInLane => "ped_in_lane",
            ScenarioFamily::WalkAlong => "walk_along",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|f| *f == self).unwrap_or(0)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn has_occluder(self) -> bool {
        matches!(
            self,
            ScenarioFamily::OccludedParked
                | ScenarioFamily::OccludedTwoParked
                | ScenarioFamily::IncomingCarOccluded
                | ScenarioFamily::IntersectionOccluded
        )
    }
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PedBehavior {
    /// Cross the road once triggered.
    Cross,
    /// Walk to the curb once triggered and wait there.
    StopAtCurb,
    /// Walk along the road, never crossing.
    WalkAlong,
    /// Stand still.
    Stand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedSpec {
    pub spawn: Vec2,
    /// Crossing speed (m/s).
    pub speed: f64,
    /// Longitudinal distance from the car start to the crossing point (m).
    pub crossing_distance: f64,
    /// The pedestrian starts crossing once the car is closer than this (m).
    pub trigger_distance: f64,
    pub behavior: PedBehavior,
    pub cross_direction: Vec2,
    /// Lateral distance covered while crossing (m).
    pub crossing_extent: f64,
    /// Velocity before triggering (m/s).
    pub walk_velocity: Vec2,
}

/// Oncoming car: constant-speed lane follower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomingCarSpec {
    pub start: Pose,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub family: ScenarioFamily,
    pub layout: RoadLayout,
    pub car_start: Pose,
    pub car_start_speed: f64,
    pub car_goal: Pose,
    pub ped_specs: Vec<PedSpec>,
    pub incoming_car: Option<IncomingCarSpec>,
    pub seed: u64,
}

impl Scenario {
    /// Builds one scene of `family` for a grid point.
    pub fn build(
        family: ScenarioFamily,
        ped_speed: f64,
        crossing_distance: f64,
        road_length: f64,
        seed: u64,
    ) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter: f64 = rng.random_range(-2.0..2.0);
        let xc = crossing_distance;
        let mut layout = RoadLayout::straight_road(-20.0, road_length + 30.0);
        let trigger = |gap: f64| NOMINAL_V_MAX * gap / ped_speed + CAR_HALF_LENGTH + jitter;

        let cross_right = |spawn: Vec2, walk: Vec2| PedSpec {
            spawn,
            speed: ped_speed,
            crossing_distance: xc,
            trigger_distance: trigger((spawn.y - EGO_Y).abs()),
            behavior: PedBehavior::Cross,
            cross_direction: Vec2::new(0.0, 1.0),
            crossing_extent: 11.0 + (spawn.y + 4.5).abs(),
            walk_velocity: walk,
        };
        let cross_left = |spawn: Vec2| PedSpec {
            spawn,
            speed: ped_speed,
            crossing_distance: xc,
            trigger_distance: trigger((spawn.y - EGO_Y).abs()),
            behavior: PedBehavior::Cross,
            cross_direction: Vec2::new(0.0, -1.0),
            crossing_extent: 11.0,
            walk_velocity: Vec2::new(0.3, 0.0),
        };
        let parked = |x_front: f64| Rect::from_bounds(x_front - 4.4, -5.3, x_front, -3.5);
        let hidden_spawn = Vec2::new(xc + 0.3, -4.8);
        let incoming = IncomingCarSpec {
            start: Pose::new(xc + 45.0, 1.75, std::f64::consts::PI),
            speed: 6.0,
        };

        let mut peds = Vec::new();
        let mut incoming_car = None;
        match family {
            ScenarioFamily::CrossRight => {
                peds.push(cross_right(Vec2::new(xc + 1.0, -4.5), Vec2::new(-0.3, 0.0)));
            }
            ScenarioFamily::CrossLeft => {
                peds.push(cross_left(Vec2::new(xc - 1.0, 4.5)));
            }
            ScenarioFamily::OccludedParked => {
                layout = layout.with_obstacle(parked(xc - 0.4));
                peds.push(cross_right(hidden_spawn, Vec2::ZERO));
            }
            ScenarioFamily::OccludedTwoParked => {
                layout = layout
                    .with_obstacle(parked(xc - 5.6))
                    .with_obstacle(parked(xc - 0.4));
                peds.push(cross_right(hidden_spawn, Vec2::ZERO));
            }
            ScenarioFamily::IncomingCarCross => {
                peds.push(cross_right(Vec2::new(xc + 1.0, -4.5), Vec2::new(-0.3, 0.0)));
                incoming_car = Some(incoming);
            }
            ScenarioFamily::IncomingCarOccluded => {
                layout = layout.with_obstacle(parked(xc - 0.4));
                peds.push(cross_right(hidden_spawn, Vec2::ZERO));
                incoming_car = Some(incoming);
            }
            ScenarioFamily::IntersectionCross => {
                layout = layout.with_crossroad(xc - 12.0);
                peds.push(cross_right(Vec2::new(xc + 1.0, -4.5), Vec2::new(-0.3, 0.0)));
            }
            ScenarioFamily::IntersectionOccluded => {
                layout = layout
                    .with_crossroad(xc - 12.0)
                    .with_obstacle(parked(xc - 0.4));
                peds.push(cross_right(hidden_spawn, Vec2::ZERO));
            }
            ScenarioFamily::CurbStop => {
                let spawn = Vec2::new(xc, -6.0);
                peds.push(PedSpec {
                    behavior: PedBehavior::StopAtCurb,
                    crossing_extent: 2.3,
                    walk_velocity: Vec2::ZERO,
                    ..cross_right(spawn, Vec2::ZERO)
                });
            }
            ScenarioFamily::TwoPedsCross => {
                peds.push(cross_right(Vec2::new(xc + 1.0, -4.5), Vec2::new(-0.3, 0.0)));
                peds.push(cross_left(Vec2::new(xc + 6.0, 4.5)));
            }
            ScenarioFamily::PedInLane => {
                let spawn = Vec2::new(xc, -3.0);
                peds.push(PedSpec {
                    behavior: PedBehavior::Cross,
                    crossing_extent: 9.5,
                    walk_velocity: Vec2::ZERO,
                    trigger_distance: trigger(1.25 + 1.0),
                    ..cross_right(spawn, Vec2::ZERO)
                });
            }
            ScenarioFamily::WalkAlong => {
                let spawn = Vec2::new(xc, -3.0);
                peds.push(PedSpec {
                    behavior: PedBehavior::WalkAlong,
                    walk_velocity: Vec2::new(ped_speed, 0.0),
                    ..cross_right(spawn, Vec2::ZERO)
                });
            }
        }

        let id = format!(
            "{}-v{:.2}-d{:.1}-{:016x}",
            family.name(),
            ped_speed,
            crossing_distance,
            seed
        );
        Scenario {
            id,
            family,
            layout,
            car_start: Pose::new(0.0, EGO_Y, 0.0),
            car_start_speed: 0.0,
            car_goal: Pose::new(road_length, EGO_Y, 0.0),
            ped_specs: peds,
            incoming_car,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.car_start.position().distance(self.car_goal.position()) == 0.0 {
            return Err(Error::Config(format!("{}: start equals goal", self.id)));
        }
        for p in &self.ped_specs {
            if !(p.crossing_distance > 0.0) {
                return Err(Error::Config(format!(
                    "{}: crossing distance must be positive",
                    self.id
                )));
            }
            if !self.layout.in_bounds(p.spawn) {
                return Err(Error::Config(format!("{}: spawn outside layout", self.id)));
            }
        }
        Ok(())
    }
}

/// Parameter grid for one family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyGrid {
    pub family: ScenarioFamily,
    pub ped_speeds: Vec<f64>,
    pub crossing_distances: Vec<f64>,
}

/// Benchmark definition: per-family grids and a base seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub format: u32,
    pub base_seed: u64,
    #[serde(default = "default_road_length")]
    pub road_length: f64,
    pub families: Vec<FamilyGrid>,
}

fn default_road_length() -> f64 {
    80.0
}

/// One scenario file: a family and its parameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub format: u32,
    pub base_seed: u64,
    pub road_length: f64,
    #[serde(flatten)]
    pub grid: FamilyGrid,
}

impl BenchmarkConfig {
    pub const FORMAT: u32 = 1;

    /// All twelve families with the given grid.
    pub fn uniform(base_seed: u64, speeds: &[f64], distances: &[f64]) -> Self {
        Self::for_families(&ScenarioFamily::ALL, base_seed, speeds, distances)
    }

    pub fn for_families(
        families: &[ScenarioFamily],
        base_seed: u64,
        speeds: &[f64],
        distances: &[f64],
    ) -> Self {
        Self {
            format: Self::FORMAT,
            base_seed,
            road_length: default_road_length(),
            families: families
                .iter()
                .map(|&family| FamilyGrid {
                    family,
                    ped_speeds: speeds.to_vec(),
                    crossing_distances: distances.to_vec(),
                })
                .collect(),
        }
    }

    /// Twelve families with a 50 x 50 grid each: 30,000 scenes.
    pub fn full_scale(base_seed: u64) -> Self {
        let speeds: Vec<f64> = (0..50).map(|i| 0.8 + 0.024 * i as f64).collect();
        let distances: Vec<f64> = (0..50).map(|i| 25.0 + 0.4 * i as f64).collect();
        Self::uniform(base_seed, &speeds, &distances)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: BenchmarkConfig = toml::from_str(&text)?;
        if cfg.format != Self::FORMAT {
            return Err(Error::Config(format!(
                "unsupported scenario format {} (expected {})",
                cfg.format,
                Self::FORMAT
            )));
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }

    /// Splits the configuration into one document per family.
    pub fn family_files(&self) -> Vec<FamilyFile> {
        self.families
            .iter()
            .map(|grid| FamilyFile {
                format: self.format,
                base_seed: self.base_seed,
                road_length: self.road_length,
                grid: grid.clone(),
            })
            .collect()
    }

    /// Reassembles a configuration from per-family documents.
    pub fn from_family_files(files: &[FamilyFile]) -> Result<Self> {
        let first = files
            .first()
            .ok_or_else(|| Error::Config("no scenario files".into()))?;
        for f in files {
            if f.format != Self::FORMAT {
                return Err(Error::Config(format!("unsupported scenario format {}", f.format)));
            }
            if f.base_seed != first.base_seed || f.road_length != first.road_length {
                return Err(Error::Config(
                    "scenario files disagree on base_seed or road_length".into(),
                ));
            }
        }
        Ok(Self {
            format: Self::FORMAT,
            base_seed: first.base_seed,
            road_length: first.road_length,
            families: files.iter().map(|f| f.grid.clone()).collect(),
        })
    }
}

impl FamilyFile {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, a: u64, b: u64, c: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base ^ a) ^ b) ^ c)
}

/// Expands every family grid into its Cartesian product of scenes.
pub fn generate_scenarios(config: &BenchmarkConfig) -> Result<Vec<Scenario>> {
    if config.families.is_empty() {
        return Err(Error::Config("benchmark has no scenario families".into()));
    }
    let mut out = Vec::new();
    for grid in &config.families {
        if grid.ped_speeds.is_empty() || grid.crossing_distances.is_empty() {
            return Err(Error::Config(format!(
                "family {} has an empty parameter grid",
                grid.family
            )));
        }
        if grid.ped_speeds.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!(
                "family {}: pedestrian speeds must be positive",
                grid.family
            )));
        }
        for (si, &speed) in grid.ped_speeds.iter().enumerate() {
            for (di, &distance) in grid.crossing_distances.iter().enumerate() {
                let seed = derive_seed(
                    config.base_seed,
                    grid.family.index() as u64,
                    si as u64,
                    di as u64,
                );
                let s = Scenario::build(grid.family, speed, distance, config.road_length, seed);
                s.validate()?;
                out.push(s);
            }
        }
    }
    Ok(out)
}
