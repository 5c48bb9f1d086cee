use crate::geometry::Vec2;
use crate::world::{Intention, RoadLayout, WorldState};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefParams {
    /// Nominal crossing speed of the Crossing model (m/s).
    pub cross_speed: f64,
    /// Nominal speed of the Walking model (m/s).
    pub walk_speed: f64,
    /// Displacement observation noise (m).
    pub sigma_obs: f64,
    /// Per-update mixing rate toward uniform for unseen pedestrians.
    pub lambda: f64,
    pub floor: f64,
    pub phantom_prior: f64,
    /// Intention distribution of a phantom that exists.
    pub phantom_intentions: [f64; 3],
    /// Probability of seeing nothing at a visible phantom spawn if it exists.
    pub phantom_miss: f64,
    /// A visible pedestrian this close to a phantom spawn resolves it (m).
    pub phantom_match_radius: f64,
}

impl Default for BeliefParams {
    fn default() -> Self {
        Self {
            cross_speed: 1.2,
            walk_speed: 1.2,
            sigma_obs: 0.1,
            lambda: 0.1,
            floor: 1e-6,
            phantom_prior: 0.2,
            phantom_intentions: [0.6, 0.2, 0.2],
            phantom_miss: 0.05,
            phantom_match_radius: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedBelief {
    pub id: usize,
    /// Indexed by [`Intention::index`].
    pub probs: [f64; 3],
    pub last_position: Vec2,
    /// Sign of the along-road walking direction.
    pub walk_dir: f64,
    pub visible: bool,
}

/// Possible pedestrian hidden behind an occluder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub occluder: usize,
    pub spawn: Vec2,
    pub existence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub peds: Vec<PedBelief>,
    pub phantoms: Vec<Phantom>,
}

/// Mean displacement over `dt` under each intention model.
pub fn intention_means(
    p: Vec2,
    walk_dir: f64,
    layout: &RoadLayout,
    dt: f64,
    params: &BeliefParams,
) -> [Vec2; 3] {
    let mut m = [Vec2::ZERO; 3];
    m[Intention::Crossing.index()] = layout.crossing_direction(p) * (params.cross_speed * dt);
    m[Intention::Stopping.index()] = Vec2::ZERO;
    m[Intention::Walking.index()] = Vec2::new(walk_dir * params.walk_speed * dt, 0.0);
    m
}

fn normalize(p: &mut [f64; 3], floor: f64) {
    for _ in 0..2 {
        let s: f64 = p.iter().sum();
        for v in p.iter_mut() {
            *v = (*v / s).max(floor);
        }
    }
    let s: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= s;
    }
}

/// Spawn point behind an occluder: just past its far end along the road,
/// at its lateral center.
fn phantom_spawn(layout: &RoadLayout, k: usize) -> Vec2 {
    let (_, y0, x1, y1) = layout.obstacles[k].aabb();
    Vec2::new(x1 + 0.3, 0.5 * (y0 + y1))
}

impl Belief {
    /// Uniform intentions for every visible pedestrian; a phantom behind
    /// each occluder that is still ahead of the car.
    pub fn initial(obs: &WorldState, params: &BeliefParams) -> Self {
        let mut b = Belief::default();
        b.sync_phantoms(obs, params);
        for p in &obs.pedestrians {
            b.peds.push(PedBelief {
                id: p.id,
                probs: [1.0 / 3.0; 3],
                last_position: p.position,
                walk_dir: if p.velocity.x > 0.0 { 1.0 } else { -1.0 },
                visible: true,
            });
        }
        b.resolve_phantoms(obs, params);
        b
    }

    fn sync_phantoms(&mut self, obs: &WorldState, params: &BeliefParams) {
        let car_x = obs.car.pose.x;
        self.phantoms.retain(|ph| ph.spawn.x > car_x - 2.0);
        for k in 0..obs.layout.obstacles.len() {
            let spawn = phantom_spawn(&obs.layout, k);
            if spawn.x > car_x + 2.0 && !self.phantoms.iter().any(|p| p.occluder == k) {
                self.phantoms.push(Phantom {
                    occluder: k,
                    spawn,
                    existence: params.phantom_prior,
                });
            }
        }
        self.phantoms.sort_by_key(|p| p.occluder);
    }

    fn resolve_phantoms(&mut self, obs: &WorldState, params: &BeliefParams) {
        let r2 = params.phantom_match_radius.powi(2);
        self.phantoms.retain_mut(|ph| {
            if obs.pedestrians.iter().any(|p| (p.position - ph.spawn).norm_sq() < r2) {
                // Someone showed up where a phantom was expected: it is now tracked.
                return false;
            }
            if obs.is_visible(ph.spawn) {
                let e = ph.existence;
                ph.existence = (e * params.phantom_miss / (e * params.phantom_miss + 1.0 - e))
                    .max(params.floor);
            }
            true
        });
    }

    pub fn intention(&self, id: usize) -> Option<[f64; 3]> {
        self.peds.iter().find(|p| p.id == id).map(|p| p.probs)
    }
}

/// Bayes filter on observed displacements; unseen pedestrians drift toward
/// uniform; phantoms fade while their spawn point is visible and empty.
pub fn update_belief(
    belief: &Belief,
    obs: &WorldState,
    dt: f64,
    params: &BeliefParams,
) -> Belief {
    let mut next = belief.clone();
    let two_var = 2.0 * params.sigma_obs * params.sigma_obs;
    for pb in &mut next.peds {
        pb.visible = false;
    }
    for ped in &obs.pedestrians {
        match next.peds.iter_mut().find(|b| b.id == ped.id) {
            Some(pb) => {
                let d = ped.position - pb.last_position;
                let means = intention_means(pb.last_position, pb.walk_dir, &obs.layout, dt, params);
                let logs: Vec<f64> = (0..3)
                    .map(|i| pb.probs[i].ln() - (d - means[i]).norm_sq() / two_var)
                    .collect();
                let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..3 {
                    pb.probs[i] = (logs[i] - max).exp();
                }
                normalize(&mut pb.probs, params.floor);
                if d.x.abs() > 1e-3 {
                    pb.walk_dir = d.x.signum();
                }
                pb.last_position = ped.position;
                pb.visible = true;
            }
            None => next.peds.push(PedBelief {
                id: ped.id,
                probs: [1.0 / 3.0; 3],
                last_position: ped.position,
                walk_dir: if ped.velocity.x > 0.0 { 1.0 } else { -1.0 },
                visible: true,
            }),
        }
    }
    for pb in &mut next.peds {
        if !pb.visible {
            for v in &mut pb.probs {
                *v = (1.0 - params.lambda) * *v + params.lambda / 3.0;
            }
            normalize(&mut pb.probs, params.floor);
        }
    }
    next.peds.sort_by_key(|p| p.id);
    next.sync_phantoms(obs, params);
    next.resolve_phantoms(obs, params);
    next
}
