//! Minimal dense-layer and optimizer plumbing over flat parameter vectors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A fully connected layer whose weights live at fixed offsets of a flat
/// parameter vector. Weights are row-major `out x inp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    /// `y = W x + b`
    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        let w = &p[self.w..self.w + self.inp * self.out];
        let b = &p[self.b..self.b + self.out];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input
    /// `x`, and writes the input gradient into `dx` when given.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        for (o, d) in dy.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let gw = &mut g[self.w + o * self.inp..self.w + (o + 1) * self.inp];
            gw.iter_mut().zip(x).for_each(|(gi, xi)| *gi += d * xi);
            g[self.b + o] += d;
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            let w = &p[self.w..self.w + self.inp * self.out];
            for (o, d) in dy.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * self.inp..(o + 1) * self.inp];
                dx.iter_mut().zip(row).for_each(|(v, wi)| *v += d * wi);
            }
        }
    }
}

/// Hands out consecutive regions of a flat parameter vector.
#[derive(Debug, Default)]
pub(crate) struct ParamAllocator {
    pub len: usize,
}

impl ParamAllocator {
    pub fn block(&mut self, n: usize) -> usize {
        let at = self.len;
        self.len += n;
        at
    }

    pub fn dense(&mut self, inp: usize, out: usize) -> Dense {
        let w = self.block(inp * out);
        let b = self.block(out);
        Dense { w, b, inp, out }
    }
}

/// Glorot-uniform weights, zero biases.
pub(crate) fn init_dense(p: &mut [f64], layer: &Dense, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (layer.inp + layer.out) as f64).sqrt();
    for v in &mut p[layer.w..layer.w + layer.inp * layer.out] {
        *v = rng.gen_range(-limit..limit);
    }
    for v in &mut p[layer.b..layer.b + layer.out] {
        *v = 0.0;
    }
}

pub(crate) fn tanh_in_place(z: &mut [f64]) {
    z.iter_mut().for_each(|v| *v = v.tanh());
}

/// `dz = da * (1 - a^2)` for `a = tanh(z)`.
pub(crate) fn tanh_backward(a: &[f64], da: &mut [f64]) {
    da.iter_mut().zip(a).for_each(|(d, a)| *d *= 1.0 - a * a);
}

#[derive(Clone, Debug)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Stable seed for the random stream of one (seed, stream, timestamp) triple.
pub fn keyed_seed(seed: u64, stream_id: &str, t: u64) -> u64 {
    // FNV-1a over the stream id, then splitmix64 finalization.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_backward_matches_definition() {
        let mut alloc = ParamAllocator::default();
        let layer = alloc.dense(2, 3);
        let p: Vec<f64> = (0..alloc.len).map(|i| i as f64 * 0.1 - 0.4).collect();
        let x = [0.7, -1.3];
        let mut y = [0.0; 3];
        layer.forward(&p, &x, &mut y);
        // Loss = sum(y); dL/dW[o][i] = x[i], dL/db = 1, dL/dx = column sums.
        let mut g = vec![0.0; alloc.len];
        let mut dx = [0.0; 2];
        layer.backward(&p, &x, &[1.0; 3], &mut g, Some(&mut dx));
        assert_eq!(&g[0..6], &[0.7, -1.3, 0.7, -1.3, 0.7, -1.3]);
        assert_eq!(&g[6..9], &[1.0, 1.0, 1.0]);
        let col0 = p[0] + p[2] + p[4];
        assert!((dx[0] - col0).abs() < 1e-15);
    }

    #[test]
    fn keyed_seed_separates_inputs() {
        let a = keyed_seed(1, "v0", 3);
        assert_eq!(a, keyed_seed(1, "v0", 3));
        assert_ne!(a, keyed_seed(2, "v0", 3));
        assert_ne!(a, keyed_seed(1, "v1", 3));
        assert_ne!(a, keyed_seed(1, "v0", 4));
    }
}
