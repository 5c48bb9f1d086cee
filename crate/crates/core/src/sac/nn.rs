//! Minimal f64 layers with hand-written backward passes.

use rand::Rng;

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn init<R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = (3.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Square-kernel convolution with zero padding. Weights are `[out][in][k][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let k = 3;
        Self {
            in_c,
            out_c,
            k,
            stride: 2,
            pad: 1,
            w: init(out_c * in_c * k * k, in_c * k * k, rng),
            b: vec![0.0; out_c],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
            ..self.clone()
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Patch matrix `[in_c·k·k][m·m]` of `x` (`[in_c][n][n]`).
    fn im2col(&self, x: &[f64], n: usize) -> Vec<f64> {
        let m = self.out_size(n);
        let k = self.k;
        let mm = m * m;
        let mut cols = vec![0.0; self.in_c * k * k * mm];
        for c in 0..self.in_c {
            for u in 0..k {
                for v in 0..k {
                    let row = &mut cols[((c * k + u) * k + v) * mm..((c * k + u) * k + v + 1) * mm];
                    for r in 0..m {
                        let i = (r * self.stride + u) as isize - self.pad as isize;
                        if i < 0 || i >= n as isize {
                            continue;
                        }
                        let src = &x[c * n * n + i as usize * n..c * n * n + (i as usize + 1) * n];
                        for s in 0..m {
                            let j = (s * self.stride + v) as isize - self.pad as isize;
                            if j >= 0 && j < n as isize {
                                row[r * m + s] = src[j as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// `x` is `[in_c][n][n]`; returns `[out_c][m][m]`.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let m = self.out_size(n);
        let mm = m * m;
        let kk = self.in_c * self.k * self.k;
        let cols = self.im2col(x, n);
        let mut y = vec![0.0; self.out_c * mm];
        for o in 0..self.out_c {
            let yo = &mut y[o * mm..(o + 1) * mm];
            yo.fill(self.b[o]);
            for (q, &w) in self.w[o * kk..(o + 1) * kk].iter().enumerate() {
                for (a, &c) in yo.iter_mut().zip(&cols[q * mm..(q + 1) * mm]) {
                    *a += w * c;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`
    /// (empty when `need_dx` is false).
    pub fn backward(&self, x: &[f64], n: usize, dy: &[f64], grad: &mut Conv2d, need_dx: bool) -> Vec<f64> {
        let m = self.out_size(n);
        let mm = m * m;
        let k = self.k;
        let kk = self.in_c * k * k;
        let cols = self.im2col(x, n);
        let mut dcols = if need_dx { vec![0.0; kk * mm] } else { vec![] };
        for o in 0..self.out_c {
            let dyo = &dy[o * mm..(o + 1) * mm];
            grad.b[o] += dyo.iter().sum::<f64>();
            for q in 0..kk {
                let col = &cols[q * mm..(q + 1) * mm];
                grad.w[o * kk + q] += dyo.iter().zip(col).map(|(a, b)| a * b).sum::<f64>();
                if need_dx {
                    let w = self.w[o * kk + q];
                    for (d, &g) in dcols[q * mm..(q + 1) * mm].iter_mut().zip(dyo) {
                        *d += w * g;
                    }
                }
            }
        }
        if !need_dx {
            return vec![];
        }
        let mut dx = vec![0.0; x.len()];
        for c in 0..self.in_c {
            for u in 0..k {
                for v in 0..k {
                    let row = &dcols[((c * k + u) * k + v) * mm..((c * k + u) * k + v + 1) * mm];
                    for r in 0..m {
                        let i = (r * self.stride + u) as isize - self.pad as isize;
                        if i < 0 || i >= n as isize {
                            continue;
                        }
                        for s in 0..m {
                            let j = (s * self.stride + v) as isize - self.pad as isize;
                            if j >= 0 && j < n as isize {
                                dx[c * n * n + i as usize * n + j as usize] += row[r * m + s];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer. Weights are `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            n_in,
            n_out,
            w: init(n_in * n_out, n_in, rng),
            b: vec![0.0; n_out],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
            ..self.clone()
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

/// Anything that exposes its parameters as flat tensors, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Params for Conv2d {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

impl Params for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Adam state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &dyn Params, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut dyn Params, grads: &dyn Params) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// target ← (1 − tau)·target + tau·source
pub fn polyak(target: &mut dyn Params, source: &dyn Params, tau: f64) {
    for (t, s) in target.tensors_mut().into_iter().zip(source.tensors()) {
        for (a, b) in t.iter_mut().zip(s) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition: y[o][r][s] = b[o] + Σ w[o][c][u][v]·x[c][2r+u-1][2s+v-1].
    fn conv_oracle(l: &Conv2d, x: &[f64], n: usize) -> Vec<f64> {
        let m = l.out_size(n);
        let at = |c: usize, i: isize, j: isize| {
            if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
                0.0
            } else {
                x[c * n * n + i as usize * n + j as usize]
            }
        };
        let mut y = vec![];
        for o in 0..l.out_c {
            for r in 0..m {
                for s in 0..m {
                    let mut acc = l.b[o];
                    for c in 0..l.in_c {
                        for u in 0..3 {
                            for v in 0..3 {
                                let w = l.w[((o * l.in_c + c) * 3 + u) * 3 + v];
                                acc += w * at(c, (2 * r + u) as isize - 1, (2 * s + v) as isize - 1);
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Conv2d::new(2, 3, &mut rng);
        let x: Vec<f64> = (0..2 * 7 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = l.forward(&x, 7);
        assert_eq!(l.out_size(7), 4);
        for (a, b) in y.iter().zip(conv_oracle(&l, &x, 7)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::new(2, 2, &mut rng);
        let x: Vec<f64> = (0..2 * 6 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..2 * 3 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |l: &Conv2d, x: &[f64]| l.forward(x, 6).iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        let mut g = conv.zeros_like();
        let dx = conv.backward(&x, 6, &dy, &mut g, true);
        let h = 1e-6;
        for i in 0..conv.w.len() {
            let (mut p, mut m) = (conv.clone(), conv.clone());
            p.w[i] += h;
            m.w[i] -= h;
            assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * h) - g.w[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&conv, &p) - loss(&conv, &m)) / (2.0 * h) - dx[i]).abs() < 1e-7);
        }
        let d = Dense::new(3, 2, &mut rng);
        let xd = vec![0.3, -0.2, 0.9];
        let mut gd = d.zeros_like();
        d.backward(&xd, &[1.0, -2.0], &mut gd);
        assert_eq!(gd.w, vec![0.3, -0.2, 0.9, -0.6, 0.4, -1.8]);
        assert_eq!(gd.b, vec![1.0, -2.0]);
    }

    #[test]
    fn silu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            assert!(((silu(x + h) - silu(x - h)) / (2.0 * h) - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dense::new(4, 2, &mut rng);
        let before = d.clone();
        let mut g = d.zeros_like();
        g.w.iter_mut().for_each(|v| *v = 1.0);
        let mut adam = Adam::new(&d, 0.0);
        adam.step(&mut d, &g);
        assert_eq!(d, before);
    }

    #[test]
    fn polyak_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Dense::new(2, 2, &mut rng);
        let mut t = Dense::new(2, 2, &mut rng);
        let t0 = t.clone();
        polyak(&mut t, &s, 0.005);
        for i in 0..4 {
            assert_eq!(t.w[i], 0.995 * t0.w[i] + 0.005 * s.w[i]);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 0.0, -1000.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[0] > 0.999);
    }
}
