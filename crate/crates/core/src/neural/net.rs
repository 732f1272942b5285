//! The gated network
//!
//! ```text
//! H1 = σ(W1 z + b1)        G1 = σ(W5 z + b5)
//! H2 = σ(W2 H1 + b2)       H3 = G1 ⊙ H2
//! H4 = σ(W3 H3 + b3)       G2 = σ(W6 z + b6)
//! H5 = G2 ⊙ H4             y  = W4 H5 + b4
//! ```
//!
//! with `σ = tanh`. All parameters live in one flat vector, weights
//! row-major: `W1 W2 W3 W4 W5 W6 b1 b2 b3 b4 b5 b6`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl NetDims {
    pub fn new(inputs: usize, hidden: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || outputs == 0 {
            return Err(DpmError::InvalidArgument(format!(
                "network dimensions must be positive, got ({inputs}, {hidden}, {outputs})"
            )));
        }
        Ok(Self {
            inputs,
            hidden,
            outputs,
        })
    }

    pub fn param_count(&self) -> usize {
        param_count(self.inputs, self.hidden, self.outputs)
    }
}

/// `3(N_H·D + N_H) + 2(N_H² + N_H) + K·N_H + K`
pub fn param_count(d: usize, nh: usize, k: usize) -> usize {
    3 * (nh * d + nh) + 2 * (nh * nh + nh) + k * nh + k
}

/// Offsets of each block in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    w2: usize,
    w3: usize,
    w4: usize,
    w5: usize,
    w6: usize,
    b1: usize,
    b2: usize,
    b3: usize,
    b4: usize,
    b5: usize,
    b6: usize,
    end: usize,
}

impl Layout {
    fn new(d: NetDims) -> Self {
        let (n, h, k) = (d.inputs, d.hidden, d.outputs);
        let w1 = 0;
        let w2 = w1 + h * n;
        let w3 = w2 + h * h;
        let w4 = w3 + h * h;
        let w5 = w4 + k * h;
        let w6 = w5 + h * n;
        let b1 = w6 + h * n;
        let b2 = b1 + h;
        let b3 = b2 + h;
        let b4 = b3 + h;
        let b5 = b4 + k;
        let b6 = b5 + h;
        Self {
            w1,
            w2,
            w3,
            w4,
            w5,
            w6,
            b1,
            b2,
            b3,
            b4,
            b5,
            b6,
            end: b6 + h,
        }
    }

    /// `(offset, rows, cols)` of each weight matrix with its fan sizes.
    fn weights(&self, d: NetDims) -> [(usize, usize, usize); 6] {
        let (n, h, k) = (d.inputs, d.hidden, d.outputs);
        [
            (self.w1, h, n),
            (self.w2, h, h),
            (self.w3, h, h),
            (self.w4, k, h),
            (self.w5, h, n),
            (self.w6, h, n),
        ]
    }
}

/// Activations kept from a forward pass for the backward and tangent passes.
#[derive(Debug, Clone)]
pub struct Tape {
    h1: Vec<f64>,
    h2: Vec<f64>,
    g1: Vec<f64>,
    h3: Vec<f64>,
    h4: Vec<f64>,
    g2: Vec<f64>,
    h5: Vec<f64>,
    pub y: Vec<f64>,
}

impl Tape {
    pub fn new(d: NetDims) -> Self {
        let h = d.hidden;
        Self {
            h1: vec![0.0; h],
            h2: vec![0.0; h],
            g1: vec![0.0; h],
            h3: vec![0.0; h],
            h4: vec![0.0; h],
            g2: vec![0.0; h],
            h5: vec![0.0; h],
            y: vec![0.0; d.outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    dims: NetDims,
    theta: Vec<f64>,
}

/// `out = W x + b` for a row-major `W` of shape `rows × x.len()`.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b[r];
        for (a, v) in row.iter().zip(x) {
            acc += a * v;
        }
        *o = acc;
    }
}

/// `out = W x` without bias.
#[inline]
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, v)| a * v).sum();
    }
}

/// `out += Wᵀ g`.
#[inline]
fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * gr;
        }
    }
}

/// `gW += g xᵀ`.
#[inline]
fn outer_acc(gw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, gr) in g.iter().enumerate() {
        if *gr == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (o, v) in row.iter_mut().zip(x) {
            *o += gr * v;
        }
    }
}

impl NetParams {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            dims,
            theta: vec![0.0; dims.param_count()],
        }
    }

    pub fn from_vec(dims: NetDims, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != dims.param_count() {
            return Err(DpmError::Shape(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                theta.len()
            )));
        }
        Ok(Self { dims, theta })
    }

    /// Xavier-uniform weights `±(6/(fan_in+fan_out))^{1/2}` drawn in layout
    /// order from a seeded ChaCha8 stream; zero biases.
    pub fn xavier(dims: NetDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let layout = Layout::new(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (off, rows, cols) in layout.weights(dims) {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut p.theta[off..off + rows * cols] {
                *v = rng.gen_range(-a..a);
            }
        }
        p
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    /// The `(W4, b4)` read-out block, e.g. for output bounds.
    pub fn readout(&self) -> (&[f64], &[f64]) {
        let l = self.layout();
        (&self.theta[l.w4..l.w5], &self.theta[l.b4..l.b5])
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dims.inputs {
            return Err(DpmError::Shape(format!(
                "network expects {} inputs, got {}",
                self.dims.inputs,
                z.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let mut tape = Tape::new(self.dims);
        self.forward_tape(z, &mut tape);
        Ok(tape.y)
    }

    /// Forward pass recording activations; `z.len()` must equal `D`.
    pub fn forward_tape(&self, z: &[f64], t: &mut Tape) {
        let l = self.layout();
        let th = &self.theta;
        affine(&th[l.w1..l.w2], &th[l.b1..l.b2], z, &mut t.h1);
        t.h1.iter_mut().for_each(|v| *v = v.tanh());
        affine(&th[l.w2..l.w3], &th[l.b2..l.b3], &t.h1, &mut t.h2);
        t.h2.iter_mut().for_each(|v| *v = v.tanh());
        affine(&th[l.w5..l.w6], &th[l.b5..l.b6], z, &mut t.g1);
        t.g1.iter_mut().for_each(|v| *v = v.tanh());
        for ((h3, g), h) in t.h3.iter_mut().zip(&t.g1).zip(&t.h2) {
            *h3 = g * h;
        }
        affine(&th[l.w3..l.w4], &th[l.b3..l.b4], &t.h3, &mut t.h4);
        t.h4.iter_mut().for_each(|v| *v = v.tanh());
        affine(&th[l.w6..l.b1], &th[l.b6..l.end], z, &mut t.g2);
        t.g2.iter_mut().for_each(|v| *v = v.tanh());
        for ((h5, g), h) in t.h5.iter_mut().zip(&t.g2).zip(&t.h4) {
            *h5 = g * h;
        }
        affine(&th[l.w4..l.w5], &th[l.b4..l.b5], &t.h5, &mut t.y);
    }

    /// Reverse pass for upstream `gy`: accumulates into `gp` (parameter
    /// gradient) and overwrites `gz` with the input gradient.
    pub fn backward(&self, z: &[f64], t: &Tape, gy: &[f64], gp: &mut [f64], gz: &mut [f64]) {
        let l = self.layout();
        let th = &self.theta;
        let h = self.dims.hidden;
        gz.iter_mut().for_each(|v| *v = 0.0);

        outer_acc(&mut gp[l.w4..l.w5], gy, &t.h5);
        for (g, v) in gp[l.b4..l.b5].iter_mut().zip(gy) {
            *g += v;
        }
        let mut gh5 = vec![0.0; h];
        matvec_t_acc(&th[l.w4..l.w5], gy, &mut gh5);

        // H5 = G2 ⊙ H4
        let ga6: Vec<f64> = (0..h).map(|i| gh5[i] * t.h4[i] * (1.0 - t.g2[i] * t.g2[i])).collect();
        let ga3: Vec<f64> = (0..h).map(|i| gh5[i] * t.g2[i] * (1.0 - t.h4[i] * t.h4[i])).collect();
        outer_acc(&mut gp[l.w6..l.b1], &ga6, z);
        for (g, v) in gp[l.b6..l.end].iter_mut().zip(&ga6) {
            *g += v;
        }
        matvec_t_acc(&th[l.w6..l.b1], &ga6, gz);

        outer_acc(&mut gp[l.w3..l.w4], &ga3, &t.h3);
        for (g, v) in gp[l.b3..l.b4].iter_mut().zip(&ga3) {
            *g += v;
        }
        let mut gh3 = vec![0.0; h];
        matvec_t_acc(&th[l.w3..l.w4], &ga3, &mut gh3);

        // H3 = G1 ⊙ H2
        let ga5: Vec<f64> = (0..h).map(|i| gh3[i] * t.h2[i] * (1.0 - t.g1[i] * t.g1[i])).collect();
        let ga2: Vec<f64> = (0..h).map(|i| gh3[i] * t.g1[i] * (1.0 - t.h2[i] * t.h2[i])).collect();
        outer_acc(&mut gp[l.w5..l.w6], &ga5, z);
        for (g, v) in gp[l.b5..l.b6].iter_mut().zip(&ga5) {
            *g += v;
        }
        matvec_t_acc(&th[l.w5..l.w6], &ga5, gz);

        outer_acc(&mut gp[l.w2..l.w3], &ga2, &t.h1);
        for (g, v) in gp[l.b2..l.b3].iter_mut().zip(&ga2) {
            *g += v;
        }
        let mut gh1 = vec![0.0; h];
        matvec_t_acc(&th[l.w2..l.w3], &ga2, &mut gh1);

        let ga1: Vec<f64> = (0..h).map(|i| gh1[i] * (1.0 - t.h1[i] * t.h1[i])).collect();
        outer_acc(&mut gp[l.w1..l.w2], &ga1, z);
        for (g, v) in gp[l.b1..l.b2].iter_mut().zip(&ga1) {
            *g += v;
        }
        matvec_t_acc(&th[l.w1..l.w2], &ga1, gz);
    }

    /// Input-gradient only (skips parameter gradients).
    pub fn backward_input(&self, t: &Tape, gy: &[f64], gz: &mut [f64]) {
        let l = self.layout();
        let th = &self.theta;
        let h = self.dims.hidden;
        gz.iter_mut().for_each(|v| *v = 0.0);
        let mut gh5 = vec![0.0; h];
        matvec_t_acc(&th[l.w4..l.w5], gy, &mut gh5);
        let ga6: Vec<f64> = (0..h).map(|i| gh5[i] * t.h4[i] * (1.0 - t.g2[i] * t.g2[i])).collect();
        let ga3: Vec<f64> = (0..h).map(|i| gh5[i] * t.g2[i] * (1.0 - t.h4[i] * t.h4[i])).collect();
        matvec_t_acc(&th[l.w6..l.b1], &ga6, gz);
        let mut gh3 = vec![0.0; h];
        matvec_t_acc(&th[l.w3..l.w4], &ga3, &mut gh3);
        let ga5: Vec<f64> = (0..h).map(|i| gh3[i] * t.h2[i] * (1.0 - t.g1[i] * t.g1[i])).collect();
        let ga2: Vec<f64> = (0..h).map(|i| gh3[i] * t.g1[i] * (1.0 - t.h2[i] * t.h2[i])).collect();
        matvec_t_acc(&th[l.w5..l.w6], &ga5, gz);
        let mut gh1 = vec![0.0; h];
        matvec_t_acc(&th[l.w2..l.w3], &ga2, &mut gh1);
        let ga1: Vec<f64> = (0..h).map(|i| gh1[i] * (1.0 - t.h1[i] * t.h1[i])).collect();
        matvec_t_acc(&th[l.w1..l.w2], &ga1, gz);
    }

    /// Tangent of the output along input direction `dz`.
    pub fn jvp_input(&self, t: &Tape, dz: &[f64], dy: &mut [f64]) {
        let l = self.layout();
        let th = &self.theta;
        let h = self.dims.hidden;
        let mut d = vec![0.0; h];

        matvec(&th[l.w1..l.w2], dz, &mut d);
        let dh1: Vec<f64> = (0..h).map(|i| d[i] * (1.0 - t.h1[i] * t.h1[i])).collect();
        matvec(&th[l.w2..l.w3], &dh1, &mut d);
        let dh2: Vec<f64> = (0..h).map(|i| d[i] * (1.0 - t.h2[i] * t.h2[i])).collect();
        matvec(&th[l.w5..l.w6], dz, &mut d);
        let dg1: Vec<f64> = (0..h).map(|i| d[i] * (1.0 - t.g1[i] * t.g1[i])).collect();
        let dh3: Vec<f64> = (0..h).map(|i| dg1[i] * t.h2[i] + t.g1[i] * dh2[i]).collect();
        matvec(&th[l.w3..l.w4], &dh3, &mut d);
        let dh4: Vec<f64> = (0..h).map(|i| d[i] * (1.0 - t.h4[i] * t.h4[i])).collect();
        matvec(&th[l.w6..l.b1], dz, &mut d);
        let dg2: Vec<f64> = (0..h).map(|i| d[i] * (1.0 - t.g2[i] * t.g2[i])).collect();
        let dh5: Vec<f64> = (0..h).map(|i| dg2[i] * t.h4[i] + t.g2[i] * dh4[i]).collect();
        matvec(&th[l.w4..l.w5], &dh5, dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn parameter_counts() {
        let table = [(5, 4278), (25, 22318), (50, 47118), (100, 104218), (200, 248418)];
        for (nh, count) in table {
            assert_eq!(param_count(273, nh, 18), count);
        }
        assert_eq!(param_count(147, 1, 3), 454);
        assert_eq!(Layout::new(NetDims::new(273, 5, 18).unwrap()).end, 4278);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetParams::zeros(NetDims::new(7, 3, 2).unwrap());
        assert_eq!(p.forward(&random_vec(7, 1)).unwrap(), vec![0.0, 0.0]);
        assert!(p.forward(&[0.0; 6]).is_err());
    }

    #[test]
    fn hand_evaluated_tiny_case() {
        // N_H = 2, z = 0: only biases feed the first layer
        let dims = NetDims::new(3, 2, 1).unwrap();
        let theta = random_vec(dims.param_count(), 2);
        let p = NetParams::from_vec(dims, theta.clone()).unwrap();
        let l = Layout::new(dims);
        let w = |off: usize, r: usize, c: usize, cols: usize| theta[off + r * cols + c];
        let b = |off: usize, i: usize| theta[off + i];
        let h1 = [b(l.b1, 0).tanh(), b(l.b1, 1).tanh()];
        let h2: Vec<f64> = (0..2)
            .map(|r| (w(l.w2, r, 0, 2) * h1[0] + w(l.w2, r, 1, 2) * h1[1] + b(l.b2, r)).tanh())
            .collect();
        let h3: Vec<f64> = (0..2).map(|r| b(l.b5, r).tanh() * h2[r]).collect();
        let h4: Vec<f64> = (0..2)
            .map(|r| (w(l.w3, r, 0, 2) * h3[0] + w(l.w3, r, 1, 2) * h3[1] + b(l.b3, r)).tanh())
            .collect();
        let h5: Vec<f64> = (0..2).map(|r| b(l.b6, r).tanh() * h4[r]).collect();
        let y = w(l.w4, 0, 0, 2) * h5[0] + w(l.w4, 0, 1, 2) * h5[1] + b(l.b4, 0);
        let got = p.forward(&[0.0; 3]).unwrap();
        assert!((got[0] - y).abs() < 1e-15);
    }

    #[test]
    fn xavier_statistics() {
        let dims = NetDims::new(273, 200, 18).unwrap();
        let p = NetParams::xavier(dims, 7);
        assert_eq!(p, NetParams::xavier(dims, 7));
        assert_ne!(p, NetParams::xavier(dims, 8));
        let l = Layout::new(dims);
        let w1 = &p.theta[l.w1..l.w2];
        let mean = w1.iter().sum::<f64>() / w1.len() as f64;
        let var = w1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w1.len() as f64;
        let expect = 2.0 / (273.0 + 200.0);
        assert!((var - expect).abs() < 0.05 * expect);
        assert!(p.theta[l.b1..].iter().all(|&v| v == 0.0));
        let a = (6.0 / (273.0 + 200.0f64)).sqrt();
        assert!(w1.iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let dims = NetDims::new(5, 4, 3).unwrap();
        let p = NetParams::xavier(dims, 3);
        let z = random_vec(5, 4);
        let mut t = Tape::new(dims);
        p.forward_tape(&z, &mut t);
        let mut gp = vec![0.0; p.len()];
        let mut gz = vec![1.0; 5];
        p.backward(&z, &t, &[0.0; 3], &mut gp, &mut gz);
        assert!(gp.iter().all(|&v| v == 0.0) && gz.iter().all(|&v| v == 0.0));
    }

    fn loss(p: &NetParams, z: &[f64], gy: &[f64]) -> f64 {
        p.forward(z).unwrap().iter().zip(gy).map(|(a, b)| a * b).sum()
    }

    fn check_gradients(seed: u64) {
        let dims = NetDims::new(6, 4, 3).unwrap();
        let mut p = NetParams::xavier(dims, seed);
        let brng = random_vec(p.len(), seed + 100);
        let l = Layout::new(dims);
        for (v, r) in p.theta[l.b1..].iter_mut().zip(&brng) {
            *v = 0.3 * r;
        }
        let z = random_vec(6, seed + 1);
        let gy = random_vec(3, seed + 2);
        let mut t = Tape::new(dims);
        p.forward_tape(&z, &mut t);
        let mut gp = vec![0.0; p.len()];
        let mut gz = vec![0.0; 6];
        p.backward(&z, &t, &gy, &mut gp, &mut gz);

        let h = 1e-6;
        let dth = random_vec(p.len(), seed + 3);
        let mut plus = p.clone();
        let mut minus = p.clone();
        for i in 0..p.len() {
            plus.theta[i] += h * dth[i];
            minus.theta[i] -= h * dth[i];
        }
        // cancellation error scales with |L|/h, so compare against max(|dL|, |L|)
        let l0 = loss(&p, &z, &gy).abs();
        let fd = (loss(&plus, &z, &gy) - loss(&minus, &z, &gy)) / (2.0 * h);
        let an: f64 = gp.iter().zip(&dth).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() <= 1e-9 * an.abs().max(l0), "params {fd} vs {an}");

        let dz = random_vec(6, seed + 4);
        let zp: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + h * b).collect();
        let zm: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a - h * b).collect();
        let fd = (loss(&p, &zp, &gy) - loss(&p, &zm, &gy)) / (2.0 * h);
        let an: f64 = gz.iter().zip(&dz).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() <= 1e-9 * an.abs().max(l0), "input {fd} vs {an}");

        let mut dy = vec![0.0; 3];
        p.jvp_input(&t, &dz, &mut dy);
        let tangent: f64 = dy.iter().zip(&gy).map(|(a, b)| a * b).sum();
        assert!((tangent - an).abs() <= 1e-13 * an.abs().max(1.0));

        let mut gz2 = vec![0.0; 6];
        p.backward_input(&t, &gy, &mut gz2);
        assert_eq!(gz, gz2);
    }

    #[test]
    fn gradients_match_finite_differences_over_seeds() {
        for seed in 0..12 {
            check_gradients(seed * 10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_is_bounded_by_readout(seed in 0u64..10_000) {
            let dims = NetDims::new(4, 3, 2).unwrap();
            let theta: Vec<f64> = random_vec(dims.param_count(), seed).iter().map(|v| 5.0 * v).collect();
            let p = NetParams::from_vec(dims, theta).unwrap();
            let z: Vec<f64> = random_vec(4, seed + 1).iter().map(|v| 10.0 * v).collect();
            let y = p.forward(&z).unwrap();
            let (w4, b4) = p.readout();
            for k in 0..2 {
                let bound: f64 = w4[k * 3..(k + 1) * 3].iter().map(|v| v.abs()).sum::<f64>() + b4[k].abs();
                prop_assert!(y[k].abs() <= bound + 1e-12);
            }
        }

        #[test]
        fn backward_is_linear_in_upstream(seed in 0u64..10_000, a in -3.0f64..3.0) {
            let dims = NetDims::new(4, 3, 2).unwrap();
            let p = NetParams::xavier(dims, seed);
            let z = random_vec(4, seed + 1);
            let gy = random_vec(2, seed + 2);
            let mut t = Tape::new(dims);
            p.forward_tape(&z, &mut t);
            let mut g1 = vec![0.0; p.len()];
            let mut g2 = vec![0.0; p.len()];
            let mut z1 = vec![0.0; 4];
            let mut z2 = vec![0.0; 4];
            p.backward(&z, &t, &gy, &mut g1, &mut z1);
            let gya: Vec<f64> = gy.iter().map(|v| a * v).collect();
            p.backward(&z, &t, &gya, &mut g2, &mut z2);
            for (x, y) in g1.iter().zip(&g2) {
                prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            for (x, y) in z1.iter().zip(&z2) {
                prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
