//! Browser bindings. Each operation takes plain numbers and strings and
//! returns a JSON document for `www/main.js` to draw.

use cfn_core::costmap::{MapKind, PlanningMaps};
use cfn_core::eval::{AgentPolicy, PolicyKind};
use cfn_core::geometry::{Pose, Rect, Vec2};
use cfn_core::hybrid::{rulebook_candidates, AgentParams, Tracker};
use cfn_core::risk::{risk_at, Hazard};
use cfn_core::rulebook::select_path;
use cfn_core::world::{run_episode, EpisodeLimits, Policy, RoadLayout, Scenario, ScenarioFamily, WorldState};
use cfn_core::{Error, Result};
use serde_json::{json, Value};
use std::sync::Arc;
use wasm_bindgen::prelude::*;

fn agent() -> AgentParams {
    let mut a = AgentParams::default();
    // Keep in-browser speed planning interactive.
    a.speed.scenarios = 16;
    a.speed.depth = 6;
    a.speed.max_expansions = 40;
    a
}

fn scenario(family: &str, ped_speed: f64, distance: f64, seed: u64) -> Result<Scenario> {
    let family = ScenarioFamily::from_name(family).ok_or_else(|| Error::Config(format!("unknown family {family:?}")))?;
    if !(ped_speed > 0.0 && distance > 5.0 && distance < 75.0) {
        return Err(Error::Config("speed must be positive and distance within (5, 75) m".into()));
    }
    Ok(Scenario::build(family, ped_speed, distance, 80.0, seed))
}

fn policy(name: &str) -> Result<PolicyKind> {
    match PolicyKind::from_name(name) {
        Some(k) if !k.needs_checkpoint() => Ok(k),
        _ => Err(Error::Config(format!("policy {name:?} is not available here"))),
    }
}

fn pt(p: Vec2) -> Value {
    json!([p.x, p.y])
}

fn poly(r: &Rect) -> Value {
    Value::Array(r.corners().iter().map(|c| pt(*c)).collect())
}

fn layout_json(l: &RoadLayout) -> Value {
    json!({
        "bounds": [l.bounds.0, l.bounds.1, l.bounds.2, l.bounds.3],
        "lanes": l.lanes.iter().map(|x| poly(&x.area)).collect::<Vec<_>>(),
        "sidewalks": l.sidewalks.iter().map(poly).collect::<Vec<_>>(),
        "obstacles": l.obstacles.iter().map(poly).collect::<Vec<_>>(),
    })
}

/// Runs one episode; frames carry the car pose, speed and pedestrian positions.
pub fn simulate_json(family: &str, ped_speed: f64, distance: f64, policy_name: &str, seed: u64) -> Result<String> {
    let s = scenario(family, ped_speed, distance, seed)?;
    let params = Arc::new(agent());
    let mut p = AgentPolicy::new(policy(policy_name)?, params.clone(), None)?;
    let limits = EpisodeLimits { t_max: 30.0, time_decisions: false };
    let trace = run_episode(&s, &mut p, &params.sim, &limits)?;
    let frames: Vec<Value> = trace
        .states
        .iter()
        .map(|st| {
            json!({
                "t": st.time,
                "car": [st.car.pose.x, st.car.pose.y, st.car.pose.heading, st.car.speed],
                "peds": st.pedestrians.iter().map(|p| pt(*p)).collect::<Vec<_>>(),
                "cars": st.other_cars.iter().map(|c| [c.x, c.y, c.heading]).collect::<Vec<_>>(),
            })
        })
        .collect();
    Ok(json!({
        "id": s.id,
        "outcome": format!("{:?}", trace.outcome),
        "ttg": trace.ttg,
        "near_miss": trace.had_near_miss(),
        "layout": layout_json(&s.layout),
        "goal": pt(s.car_goal.position()),
        "car_size": [params.sim.car_length, params.sim.car_width],
        "frames": frames,
    })
    .to_string())
}

/// Advances the scene under `policy` to `time`, then plans on all three cost
/// maps. Includes the chosen map's costs as 0-255 levels (255 = blocked).
pub fn plan_json(family: &str, ped_speed: f64, distance: f64, policy_name: &str, seed: u64, time: f64) -> Result<String> {
    let s = scenario(family, ped_speed, distance, seed)?;
    let params = Arc::new(agent());
    let kind = policy(policy_name)?;
    let mut p = AgentPolicy::new(kind, params.clone(), None)?;
    p.reset(&s);
    let mut rng = cfn_core::world::episode_rng(&s);
    let mut world = WorldState::initial(&s);
    for _ in 0..(time.clamp(0.0, 30.0) / params.sim.dt).round() as usize {
        let d = p.decide(&world.observe()).map_err(|message| Error::Policy { time: world.time, message })?;
        world = world.step(&d.action, &params.sim, &mut rng);
    }
    let obs = world.observe();
    let maps = PlanningMaps::build(&obs, &params.cost)?;
    let candidates = rulebook_candidates(&obs, &maps, &params);
    let selected = select_path(&candidates, &params.rulebook).map(|c| c.path.source_map);
    let mut tracker = Tracker::new(&obs, &params);
    tracker.observe(&obs, &params);
    tracker.replan(&obs, kind.path_mode(), &params)?;
    let speed = tracker.plan_speed(&obs, &params.speed, &params, s.seed);

    let m = &maps.predictive;
    let max = m.cells.iter().copied().filter(|c| c.is_finite()).fold(m.cost_floor, f64::max);
    let levels: Vec<u8> = m
        .cells
        .iter()
        .map(|&c| {
            if !c.is_finite() {
                255
            } else if max > m.cost_floor {
                (254.0 * (c - m.cost_floor) / (max - m.cost_floor)).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(json!({
        "time": obs.time,
        "layout": layout_json(&obs.layout),
        "car": [obs.car.pose.x, obs.car.pose.y, obs.car.pose.heading, obs.car.speed],
        "car_size": [params.sim.car_length, params.sim.car_width],
        "peds": obs.pedestrians.iter().map(|p| pt(p.position)).collect::<Vec<_>>(),
        "goal": pt(obs.goal.position()),
        "map": { "origin": pt(m.origin), "resolution": m.resolution, "width": m.width, "height": m.height, "levels": levels },
        "candidates": candidates.iter().map(|c| json!({
            "map": c.path.source_map.name(),
            "selected": Some(c.path.source_map) == selected,
            "cost": c.path.total_cost,
            "length": c.path.length,
            "risk_mean": c.risk.mean,
            "risk_max": c.risk.aggregate,
            "violations": [c.violations.sidewalk_meters, c.violations.risk_excess, c.violations.lane_deviation, c.violations.path_length],
            "poses": c.path.poses.iter().map(|p| pt(p.position())).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "speed": { "values": speed.values, "action": format!("{:?}", speed.action), "expansions": speed.expansions },
        "maps": MapKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Perceived risk on a grid around a car at the origin heading +x, with
/// pedestrian hazards at the given flat [x0, y0, x1, y1, ...] positions.
pub fn risk_json(speed: f64, hazards: &[f64], half_extent: f64, cells: usize) -> Result<String> {
    if hazards.len() % 2 != 0 || cells == 0 || !(half_extent > 0.0) {
        return Err(Error::Config("hazards are x,y pairs; grid must be non-empty".into()));
    }
    let params = agent().risk;
    let hz: Vec<Hazard> = hazards.chunks(2).map(|c| Hazard::point(Vec2::new(c[0], c[1]), 1.0)).collect();
    let step = 2.0 * half_extent / cells as f64;
    let mut grid = Vec::with_capacity(cells * cells);
    for j in 0..cells {
        let y = half_extent - (j as f64 + 0.5) * step;
        for i in 0..cells {
            let x = -half_extent + (i as f64 + 0.5) * step;
            // Risk felt by a car standing at (x, y) heading +x.
            grid.push(risk_at(&Pose::new(x, y, 0.0), speed, &hz, &params));
        }
    }
    let at_origin = risk_at(&Pose::new(0.0, 0.0, 0.0), speed, &hz, &params);
    Ok(json!({ "cells": cells, "half_extent": half_extent, "risk": grid, "at_origin": at_origin }).to_string())
}

fn js(r: Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate(family: &str, ped_speed: f64, distance: f64, policy: &str, seed: u32) -> Result<String, JsError> {
    js(simulate_json(family, ped_speed, distance, policy, seed as u64))
}

#[wasm_bindgen]
pub fn plan(family: &str, ped_speed: f64, distance: f64, policy: &str, seed: u32, time: f64) -> Result<String, JsError> {
    js(plan_json(family, ped_speed, distance, policy, seed as u64, time))
}

#[wasm_bindgen]
pub fn risk(speed: f64, hazards: &[f64], half_extent: f64, cells: usize) -> Result<String, JsError> {
    js(risk_json(speed, hazards, half_extent, cells))
}

#[wasm_bindgen]
pub fn families() -> String {
    Value::Array(ScenarioFamily::ALL.iter().map(|f| json!(f.name())).collect()).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn simulate_reports_frames_and_outcome() {
        let v = parse(&simulate_json("cross_right", 1.2, 30.0, "always-accelerate", 1).unwrap());
        let frames = v["frames"].as_array().unwrap();
        assert!(frames.len() > 10);
        assert_eq!(frames[0]["car"].as_array().unwrap().len(), 4);
        assert!(v["outcome"].is_string());
    }

    #[test]
    fn plan_returns_candidates_and_map() {
        let v = parse(&plan_json("occluded_parked", 1.2, 30.0, "always-accelerate", 2, 2.0).unwrap());
        let m = &v["map"];
        let n = m["width"].as_u64().unwrap() * m["height"].as_u64().unwrap();
        assert_eq!(m["levels"].as_array().unwrap().len() as u64, n);
        let c = v["candidates"].as_array().unwrap();
        assert!(!c.is_empty());
        assert!(c.iter().any(|c| c["selected"] == json!(true)));
        assert_eq!(v["speed"]["values"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn risk_grid_is_bounded_and_peaks_near_hazard() {
        let v = parse(&risk_json(5.0, &[6.0, 0.0], 10.0, 20).unwrap());
        let r: Vec<f64> = v["risk"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert_eq!(r.len(), 400);
        assert!(r.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(v["at_origin"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        assert_eq!(simulate_json("nope", 1.0, 30.0, "random", 0).unwrap_err().exit_code(), 2);
        assert_eq!(simulate_json("cross_left", 1.0, 30.0, "hylear", 0).unwrap_err().exit_code(), 2);
        assert!(risk_json(1.0, &[1.0], 5.0, 4).is_err());
    }
}
