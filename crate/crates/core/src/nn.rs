//! Small dense-network building blocks with explicit backward passes.
//!
//! Everything here operates on plain `f64` vectors so that parameter
//! snapshots compare bitwise and gradients can be checked against central
//! finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fully connected layer `y = W x + b` with `W` stored row-major
/// (`out_dim` x `in_dim`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        Self {
            w: init_vec(rng, in_dim * out_dim, scale),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            *yo += dot(row, x);
        }
        y
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x` and returns the gradient with respect to `x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut LinearGrad) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            grad.b[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        Self {
            w: vec![0.0; layer.w.len()],
            b: vec![0.0; layer.b.len()],
        }
    }
}

/// Two-layer perceptron with a rectifier after the first layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Debug, Clone)]
pub struct Mlp2Cache {
    x: Vec<f64>,
    pre1: Vec<f64>,
    h1: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp2Grad {
    pub l1: LinearGrad,
    pub l2: LinearGrad,
}

impl Mlp2 {
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Linear::init(in_dim, hidden, rng),
            l2: Linear::init(hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Mlp2Cache) {
        let pre1 = self.l1.forward(x);
        let h1: Vec<f64> = pre1.iter().map(|&v| v.max(0.0)).collect();
        let y = self.l2.forward(&h1);
        (
            y,
            Mlp2Cache {
                x: x.to_vec(),
                pre1,
                h1,
            },
        )
    }

    pub fn backward(&self, cache: &Mlp2Cache, dy: &[f64], grad: &mut Mlp2Grad) -> Vec<f64> {
        let dh1 = self.l2.backward(&cache.h1, dy, &mut grad.l2);
        let dpre1: Vec<f64> = dh1
            .iter()
            .zip(&cache.pre1)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        self.l1.backward(&cache.x, &dpre1, &mut grad.l1)
    }
}

impl Mlp2Grad {
    pub fn zeros_like(mlp: &Mlp2) -> Self {
        Self {
            l1: LinearGrad::zeros_like(&mlp.l1),
            l2: LinearGrad::zeros_like(&mlp.l2),
        }
    }
}

/// Normalizes to unit Euclidean norm; returns the unit vector and the norm.
pub fn l2_normalize(x: &[f64]) -> (Vec<f64>, f64) {
    let norm = dot(x, x).sqrt().max(1e-12);
    (x.iter().map(|v| v / norm).collect(), norm)
}

/// Backward pass of [`l2_normalize`]: `dx = (dy - (dy . u) u) / norm`.
pub fn l2_normalize_backward(unit: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj = dot(dy, unit);
    dy.iter()
        .zip(unit)
        .map(|(&g, &u)| (g - proj * u) / norm)
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn init_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Adaptive-moment stochastic gradient optimizer over a fixed set of
/// parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, block_sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. Block order must match construction.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&Vec<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (bi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[bi], &mut self.v[bi]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = Linear::init(4, 3, &mut rng);
        let x = init_vec(&mut rng, 4, 1.0);
        let dy = init_vec(&mut rng, 3, 1.0);
        // scalar objective: dot(dy, forward(x))
        let f = |l: &Linear, x: &[f64]| dot(&dy, &l.forward(x));

        let mut grad = LinearGrad::zeros_like(&layer);
        let dx = layer.backward(&x, &dy, &mut grad);

        let h = 1e-6;
        for i in 0..layer.w.len() {
            let mut lp = layer.clone();
            let mut lm = layer.clone();
            lp.w[i] += h;
            lm.w[i] -= h;
            let num = (f(&lp, &x) - f(&lm, &x)) / (2.0 * h);
            assert!(rel_err(num, grad.w[i]) < 1e-6, "w[{i}]");
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (f(&layer, &xp) - f(&layer, &xm)) / (2.0 * h);
            assert!(rel_err(num, dx[i]) < 1e-6, "x[{i}]");
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp2::init(5, 6, 4, &mut rng);
        let x = init_vec(&mut rng, 5, 1.0);
        let dy = init_vec(&mut rng, 4, 1.0);
        let f = |m: &Mlp2, x: &[f64]| dot(&dy, &m.forward(x).0);

        let mut grad = Mlp2Grad::zeros_like(&mlp);
        let (_, cache) = mlp.forward(&x);
        let dx = mlp.backward(&cache, &dy, &mut grad);

        let h = 1e-6;
        for i in 0..mlp.l1.w.len() {
            let mut mp = mlp.clone();
            let mut mm = mlp.clone();
            mp.l1.w[i] += h;
            mm.l1.w[i] -= h;
            let num = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
            assert!(rel_err(num, grad.l1.w[i]) < 1e-5, "l1.w[{i}]");
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
            assert!(rel_err(num, dx[i]) < 1e-5, "x[{i}]");
        }
    }

    #[test]
    fn l2_normalize_unit_norm_and_backward() {
        let x = vec![3.0, 4.0];
        let (u, norm) = l2_normalize(&x);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((dot(&u, &u) - 1.0).abs() < 1e-12);

        let dy = vec![0.3, -0.7];
        let dx = l2_normalize_backward(&u, norm, &dy);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fp = dot(&dy, &l2_normalize(&xp).0);
            let fm = dot(&dy, &l2_normalize(&xm).0);
            let num = (fp - fm) / (2.0 * h);
            assert!(rel_err(num, dx[i]) < 1e-6);
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        // minimize (p - 3)^2
        let mut p = vec![0.0];
        let mut opt = Adam::new(0.1, &[1]);
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 3.0)];
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "got {}", p[0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-12);
    }
}
