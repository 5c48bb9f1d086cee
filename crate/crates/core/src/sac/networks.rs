//! Shared encoder with value, Q and policy heads; the three soft
//! actor-critic losses with exact expectations over the action set.

use super::nn::{polyak, silu, silu_grad, softmax, Adam, Conv2d, Dense, Params};
use super::observation::{Observation, CHANNELS, SCALARS};
use crate::error::{Error, Result};
use crate::world::SpeedAction;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ACTIONS: usize = SpeedAction::COUNT;
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub grid_size: usize,
    pub filters: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            grid_size: 32,
            filters: vec![16, 32, 32],
            hidden: vec![128, 128],
        }
    }
}

/// Convolutions (stride 2, SiLU), flatten, concat scalars, dense SiLU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub grid_size: usize,
    pub convs: Vec<Conv2d>,
    pub dense: Vec<Dense>,
}

pub struct EncoderCache {
    conv_in: Vec<Vec<f64>>,
    conv_pre: Vec<Vec<f64>>,
    dense_in: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let mut convs = vec![];
        let mut c = CHANNELS;
        let mut n = cfg.grid_size;
        for &f in &cfg.filters {
            let l = Conv2d::new(c, f, rng);
            n = l.out_size(n);
            c = f;
            convs.push(l);
        }
        let mut width = c * n * n + SCALARS;
        let mut dense = vec![];
        for &h in &cfg.hidden {
            dense.push(Dense::new(width, h, rng));
            width = h;
        }
        Self {
            grid_size: cfg.grid_size,
            convs,
            dense,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.dense.last() {
            Some(d) => d.n_out,
            None => {
                let mut n = self.grid_size;
                let mut c = CHANNELS;
                for l in &self.convs {
                    n = l.out_size(n);
                    c = l.out_c;
                }
                c * n * n + SCALARS
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            grid_size: self.grid_size,
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            dense: self.dense.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn forward(&self, grid: &[f64], scalars: &[f64]) -> (Vec<f64>, EncoderCache) {
        let mut cache = EncoderCache {
            conv_in: vec![],
            conv_pre: vec![],
            dense_in: vec![],
            dense_pre: vec![],
        };
        let mut x = grid.to_vec();
        let mut n = self.grid_size;
        for l in &self.convs {
            let pre = l.forward(&x, n);
            n = l.out_size(n);
            cache.conv_in.push(std::mem::replace(&mut x, pre.iter().map(|&v| silu(v)).collect()));
            cache.conv_pre.push(pre);
        }
        x.extend_from_slice(scalars);
        for l in &self.dense {
            let pre = l.forward(&x);
            cache.dense_in.push(std::mem::replace(&mut x, pre.iter().map(|&v| silu(v)).collect()));
            cache.dense_pre.push(pre);
        }
        (x, cache)
    }

    pub fn backward(&self, cache: &EncoderCache, dfeat: &[f64], grad: &mut Encoder) {
        let mut d = dfeat.to_vec();
        for (k, l) in self.dense.iter().enumerate().rev() {
            for (g, &p) in d.iter_mut().zip(&cache.dense_pre[k]) {
                *g *= silu_grad(p);
            }
            d = l.backward(&cache.dense_in[k], &d, &mut grad.dense[k]);
        }
        if self.convs.is_empty() {
            return;
        }
        d.truncate(d.len() - SCALARS);
        let mut sizes = vec![self.grid_size];
        for l in &self.convs {
            sizes.push(l.out_size(*sizes.last().unwrap()));
        }
        for (k, l) in self.convs.iter().enumerate().rev() {
            for (g, &p) in d.iter_mut().zip(&cache.conv_pre[k]) {
                *g *= silu_grad(p);
            }
            d = l.backward(&cache.conv_in[k], sizes[k], &d, &mut grad.convs[k], k > 0);
        }
    }
}

impl Params for Encoder {
    fn tensors(&self) -> Vec<&[f64]> {
        self.convs
            .iter()
            .flat_map(|l| l.tensors())
            .chain(self.dense.iter().flat_map(|l| l.tensors()))
            .collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.convs
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .chain(self.dense.iter_mut().flat_map(|l| l.tensors_mut()))
            .collect()
    }
}

/// V, Q and π heads over one shared encoder, plus the target value
/// network (its own encoder copy and value head).
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub encoder: Encoder,
    pub v: Dense,
    pub q: Dense,
    pub pi: Dense,
    pub target_encoder: Encoder,
    pub target_v: Dense,
}

pub struct Forward {
    pub cache: EncoderCache,
    pub features: Vec<f64>,
    pub v: f64,
    pub q: [f64; ACTIONS],
    pub logits: [f64; ACTIONS],
}

fn arr(v: Vec<f64>) -> [f64; ACTIONS] {
    v.try_into().expect("head width")
}

impl Networks {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let encoder = Encoder::new(cfg, rng);
        let f = encoder.feature_dim();
        let v = Dense::new(f, 1, rng);
        let q = Dense::new(f, ACTIONS, rng);
        let pi = Dense::new(f, ACTIONS, rng);
        Self {
            target_encoder: encoder.clone(),
            target_v: v.clone(),
            encoder,
            v,
            q,
            pi,
        }
    }

    pub fn forward(&self, o: &Observation) -> Forward {
        let (features, cache) = self.encoder.forward(&o.grid_values(), &o.scalars);
        Forward {
            v: self.v.forward(&features)[0],
            q: arr(self.q.forward(&features)),
            logits: arr(self.pi.forward(&features)),
            features,
            cache,
        }
    }

    pub fn logits(&self, o: &Observation) -> [f64; ACTIONS] {
        let (f, _) = self.encoder.forward(&o.grid_values(), &o.scalars);
        arr(self.pi.forward(&f))
    }

    pub fn policy(&self, o: &Observation) -> [f64; ACTIONS] {
        arr(softmax(&self.logits(o)))
    }

    pub fn target_value(&self, o: &Observation) -> f64 {
        let (f, _) = self.target_encoder.forward(&o.grid_values(), &o.scalars);
        self.target_v.forward(&f)[0]
    }

    /// Every parameter set, in checkpoint order.
    pub fn layers(&self) -> Vec<Layer<'_>> {
        let mut out: Vec<Layer<'_>> = self.encoder.convs.iter().map(Layer::Conv).collect();
        out.extend(self.encoder.dense.iter().map(Layer::Dense));
        out.extend([Layer::Dense(&self.v), Layer::Dense(&self.q), Layer::Dense(&self.pi)]);
        out.extend(self.target_encoder.convs.iter().map(Layer::Conv));
        out.extend(self.target_encoder.dense.iter().map(Layer::Dense));
        out.push(Layer::Dense(&self.target_v));
        out
    }
}

pub enum Layer<'a> {
    Conv(&'a Conv2d),
    Dense(&'a Dense),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: SpeedAction,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub gamma: f64,
}

/// Per-sample quantities held constant while differentiating:
/// the soft value target, the bootstrapped Q target and the Q values
/// entering the policy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub soft_value: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub q: Vec<[f64; ACTIONS]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub j_v: f64,
    pub j_q: f64,
    pub j_pi: f64,
}

/// Gradients of the three losses. `encoder` holds one entry per loss
/// (V, Q, π) when computed separately, or a single summed entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub encoder: Vec<Encoder>,
    pub v: Dense,
    pub q: Dense,
    pub pi: Dense,
}

fn log_floored(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn soft_value(q: &[f64; ACTIONS], p: &[f64], alpha: f64) -> f64 {
    (0..ACTIONS).map(|a| p[a] * (q[a] - alpha * log_floored(p[a]))).sum()
}

struct SampleTerms {
    j_v: f64,
    j_q: f64,
    j_pi: f64,
    dv: f64,
    dq: [f64; ACTIONS],
    dz: [f64; ACTIONS],
}

fn sample_terms(fw: &Forward, action: usize, y: f64, q_hat: f64, qc: &[f64; ACTIONS], alpha: f64) -> SampleTerms {
    let p = softmax(&fw.logits);
    let lp: Vec<f64> = p.iter().map(|&v| log_floored(v)).collect();
    let mut dq = [0.0; ACTIONS];
    dq[action] = fw.q[action] - q_hat;
    let dp: Vec<f64> = (0..ACTIONS)
        .map(|a| alpha * lp[a] - qc[a] + if p[a] > PROB_FLOOR { alpha } else { 0.0 })
        .collect();
    let mean: f64 = (0..ACTIONS).map(|a| p[a] * dp[a]).sum();
    let mut dz = [0.0; ACTIONS];
    for b in 0..ACTIONS {
        dz[b] = p[b] * (dp[b] - mean);
    }
    SampleTerms {
        j_v: 0.5 * (fw.v - y).powi(2),
        j_q: 0.5 * (fw.q[action] - q_hat).powi(2),
        j_pi: (0..ACTIONS).map(|a| p[a] * (alpha * lp[a] - qc[a])).sum(),
        dv: fw.v - y,
        dq,
        dz,
    }
}

fn check_batch(batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    Ok(())
}

impl Networks {
    fn targets_from(&self, batch: &[&Transition], fws: &[Forward], lp: &LossParams) -> Targets {
        let mut t = Targets {
            soft_value: vec![],
            q_hat: vec![],
            q: vec![],
        };
        for (tr, fw) in batch.iter().zip(fws) {
            let p = softmax(&fw.logits);
            t.soft_value.push(soft_value(&fw.q, &p, lp.alpha));
            let boot = if tr.done {
                0.0
            } else {
                self.target_value(&tr.next_obs)
            };
            t.q_hat.push(tr.reward + lp.gamma * boot);
            t.q.push(fw.q);
        }
        t
    }

    pub fn targets(&self, batch: &[&Transition], lp: &LossParams) -> Result<Targets> {
        check_batch(batch)?;
        let fws: Vec<Forward> = batch.iter().map(|t| self.forward(&t.obs)).collect();
        Ok(self.targets_from(batch, &fws, lp))
    }

    /// Batch-mean losses with the given targets held fixed.
    pub fn evaluate_losses(&self, batch: &[&Transition], targets: &Targets, lp: &LossParams) -> Result<Losses> {
        check_batch(batch)?;
        let b = batch.len() as f64;
        let mut l = Losses::default();
        for (i, tr) in batch.iter().enumerate() {
            let fw = self.forward(&tr.obs);
            let s = sample_terms(&fw, tr.action.index(), targets.soft_value[i], targets.q_hat[i], &targets.q[i], lp.alpha);
            l.j_v += s.j_v / b;
            l.j_q += s.j_q / b;
            l.j_pi += s.j_pi / b;
        }
        Ok(l)
    }

    /// Losses, targets and analytic gradients for one batch.
    pub fn compute_losses(
        &self,
        batch: &[&Transition],
        lp: &LossParams,
        separate_encoder_grads: bool,
    ) -> Result<(Losses, Targets, Grads)> {
        check_batch(batch)?;
        let b = batch.len() as f64;
        let fws: Vec<Forward> = batch.iter().map(|t| self.forward(&t.obs)).collect();
        let targets = self.targets_from(batch, &fws, lp);
        let n_enc = if separate_encoder_grads { 3 } else { 1 };
        let mut g = Grads {
            encoder: vec![self.encoder.zeros_like(); n_enc],
            v: self.v.zeros_like(),
            q: self.q.zeros_like(),
            pi: self.pi.zeros_like(),
        };
        let mut l = Losses::default();
        for (i, (tr, fw)) in batch.iter().zip(&fws).enumerate() {
            let s = sample_terms(fw, tr.action.index(), targets.soft_value[i], targets.q_hat[i], &targets.q[i], lp.alpha);
            l.j_v += s.j_v / b;
            l.j_q += s.j_q / b;
            l.j_pi += s.j_pi / b;
            let dv = [s.dv / b];
            let dq: Vec<f64> = s.dq.iter().map(|v| v / b).collect();
            let dz: Vec<f64> = s.dz.iter().map(|v| v / b).collect();
            let fv = self.v.backward(&fw.features, &dv, &mut g.v);
            let fq = self.q.backward(&fw.features, &dq, &mut g.q);
            let fp = self.pi.backward(&fw.features, &dz, &mut g.pi);
            if separate_encoder_grads {
                for (k, df) in [fv, fq, fp].iter().enumerate() {
                    self.encoder.backward(&fw.cache, df, &mut g.encoder[k]);
                }
            } else {
                let df: Vec<f64> = (0..fv.len()).map(|k| fv[k] + fq[k] + fp[k]).collect();
                self.encoder.backward(&fw.cache, &df, &mut g.encoder[0]);
            }
        }
        if !(l.j_v.is_finite() && l.j_q.is_finite() && l.j_pi.is_finite()) {
            let worst = batch
                .iter()
                .enumerate()
                .find(|(i, _)| !targets.q_hat[*i].is_finite() || !targets.soft_value[*i].is_finite())
                .map(|(i, t)| format!("; sample {i}: reward={} q_hat={} soft_value={}", t.reward, targets.q_hat[i], targets.soft_value[i]))
                .unwrap_or_default();
            return Err(Error::NonFiniteLoss(format!(
                "J_V={} J_Q={} J_pi={}{worst}",
                l.j_v, l.j_q, l.j_pi
            )));
        }
        Ok((l, targets, g))
    }
}

/// Adam states for the encoder and the three heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub encoder: Adam,
    pub v: Adam,
    pub q: Adam,
    pub pi: Adam,
}

impl Optimizers {
    pub fn new(nets: &Networks, lr: f64) -> Self {
        Self {
            encoder: Adam::new(&nets.encoder, lr),
            v: Adam::new(&nets.v, lr),
            q: Adam::new(&nets.q, lr),
            pi: Adam::new(&nets.pi, lr),
        }
    }
}

/// One gradient step per loss on its own head (the encoder takes the sum
/// of all three), then Polyak averaging of the target value network.
pub fn update(
    nets: &mut Networks,
    opt: &mut Optimizers,
    batch: &[&Transition],
    lp: &LossParams,
    polyak_tau: f64,
) -> Result<Losses> {
    let (losses, _, g) = nets.compute_losses(batch, lp, false)?;
    opt.encoder.step(&mut nets.encoder, &g.encoder[0]);
    opt.v.step(&mut nets.v, &g.v);
    opt.q.step(&mut nets.q, &g.q);
    opt.pi.step(&mut nets.pi, &g.pi);
    polyak(&mut nets.target_encoder, &nets.encoder, polyak_tau);
    polyak(&mut nets.target_v, &nets.v, polyak_tau);
    Ok(losses)
}
