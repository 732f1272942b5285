use crate::closure::{
    sym_slot, tensor_divergence, tensor_divergence_transpose, Closure, DifferentiableClosure,
    SymTensor,
};
use crate::error::{DpmError, Result};
use crate::grid::{center_to_face, shifted, GridSpec, VectorField};
use crate::neural::features::{
    gather, point_features, point_features_transpose, scatter, FeatureConfig,
};
use crate::neural::net::{NetParams, Tape};
use crate::par::map_chunks;

/// How the network output becomes a momentum forcing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// `K = 3`: forcing at centers, averaged onto faces.
    DirectForcing,
    /// `K = 6`: symmetric stress `(00,11,22,01,02,12)` at centers, forcing is
    /// its face divergence.
    TensorDivergence,
    /// `K = 18`: two 3×3 tensors `A`, `B` (row-major); forcing is the
    /// divergence of `sym(A + B)`.
    PaperK18,
}

impl OutputMode {
    pub fn outputs(self) -> usize {
        match self {
            OutputMode::DirectForcing => 3,
            OutputMode::TensorDivergence => 6,
            OutputMode::PaperK18 => 18,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            OutputMode::DirectForcing => 0,
            OutputMode::TensorDivergence => 1,
            OutputMode::PaperK18 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(OutputMode::DirectForcing),
            1 => Ok(OutputMode::TensorDivergence),
            2 => Ok(OutputMode::PaperK18),
            _ => Err(DpmError::Format(format!("unknown output mode tag {tag}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputMode::DirectForcing => "direct",
            OutputMode::TensorDivergence => "tensor_divergence",
            OutputMode::PaperK18 => "k18",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(OutputMode::DirectForcing),
            "tensor_divergence" => Ok(OutputMode::TensorDivergence),
            "k18" => Ok(OutputMode::PaperK18),
            _ => Err(DpmError::Config(format!("unknown output mode '{s}'"))),
        }
    }
}

/// `h_θ(u)`: features → network → forcing, times a fixed output scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralClosure {
    pub params: NetParams,
    pub features: FeatureConfig,
    pub mode: OutputMode,
    /// Constant multiplying the network output (stress or forcing units).
    pub output_scale: f64,
}

impl NeuralClosure {
    pub fn new(
        params: NetParams,
        features: FeatureConfig,
        mode: OutputMode,
        output_scale: f64,
    ) -> Result<Self> {
        let d = params.dims();
        if d.inputs != features.dimension() {
            return Err(DpmError::Shape(format!(
                "network takes {} inputs but features have {}",
                d.inputs,
                features.dimension()
            )));
        }
        if d.outputs != mode.outputs() {
            return Err(DpmError::Shape(format!(
                "output mode {} needs K = {}, network has {}",
                mode.name(),
                mode.outputs(),
                d.outputs
            )));
        }
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(DpmError::InvalidArgument("output scale must be positive".into()));
        }
        Ok(Self {
            params,
            features,
            mode,
            output_scale,
        })
    }

    /// Raw network outputs at every cell, `y[cell·K + k]`.
    pub fn outputs(&self, u: &VectorField) -> Vec<f64> {
        let g = u.grid;
        let pf = point_features(u, self.features.set);
        let dims = self.params.dims();
        let k = dims.outputs;
        let parts = map_chunks(g.len(), |range| {
            let mut tape = Tape::new(dims);
            let mut z = vec![0.0; dims.inputs];
            let mut out = Vec::with_capacity(range.len() * k);
            for cell in range {
                gather(&pf, g, &self.features, cell, &mut z);
                self.params.forward_tape(&z, &mut tape);
                out.extend_from_slice(&tape.y);
            }
            out
        });
        parts.concat()
    }

    /// Linear map from per-cell outputs to face forcing.
    pub fn assemble(&self, g: GridSpec, y: &[f64]) -> VectorField {
        let k = self.mode.outputs();
        let col = |c: usize| -> Vec<f64> { (0..g.len()).map(|x| y[x * k + c]).collect() };
        let mut out = match self.mode {
            OutputMode::DirectForcing => {
                let mut f = VectorField::zeros(g);
                for m in 0..3 {
                    f.comp[m] = center_to_face(&col(m), g.n(), m);
                }
                f
            }
            OutputMode::TensorDivergence => {
                let tau: SymTensor = std::array::from_fn(col);
                tensor_divergence(g, &tau)
            }
            OutputMode::PaperK18 => {
                let mut tau: SymTensor = std::array::from_fn(|_| vec![0.0; g.len()]);
                for x in 0..g.len() {
                    let a = &y[x * 18..x * 18 + 9];
                    let b = &y[x * 18 + 9..x * 18 + 18];
                    for m in 0..3 {
                        for l in m..3 {
                            tau[sym_slot(m, l)][x] =
                                0.5 * (a[3 * m + l] + a[3 * l + m] + b[3 * m + l] + b[3 * l + m]);
                        }
                    }
                }
                tensor_divergence(g, &tau)
            }
        };
        out.scale(self.output_scale);
        out
    }

    /// Transpose of [`NeuralClosure::assemble`].
    pub fn assemble_transpose(&self, v: &VectorField) -> Vec<f64> {
        let g = v.grid;
        let k = self.mode.outputs();
        let s = self.output_scale;
        let mut gy = vec![0.0; g.len() * k];
        match self.mode {
            OutputMode::DirectForcing => {
                for m in 0..3 {
                    let hi = shifted(&v.comp[m], g.n(), m, 1);
                    for x in 0..g.len() {
                        gy[x * 3 + m] = 0.5 * s * (v.comp[m][x] + hi[x]);
                    }
                }
            }
            OutputMode::TensorDivergence => {
                let gt = tensor_divergence_transpose(v);
                for (p, col) in gt.iter().enumerate() {
                    for x in 0..g.len() {
                        gy[x * 6 + p] = s * col[x];
                    }
                }
            }
            OutputMode::PaperK18 => {
                let gt = tensor_divergence_transpose(v);
                for x in 0..g.len() {
                    for m in 0..3 {
                        for l in m..3 {
                            let gs = s * gt[sym_slot(m, l)][x];
                            let w = if m == l { 1.0 } else { 0.5 };
                            for base in [0, 9] {
                                gy[x * 18 + base + 3 * m + l] += w * gs;
                                if m != l {
                                    gy[x * 18 + base + 3 * l + m] += w * gs;
                                }
                            }
                        }
                    }
                }
            }
        }
        gy
    }
}

impl Closure for NeuralClosure {
    fn forcing(&self, u: &VectorField) -> VectorField {
        let y = self.outputs(u);
        self.assemble(u.grid, &y)
    }

    fn name(&self) -> String {
        let d = self.params.dims();
        format!("neural({}, D={}, N_H={}, K={})", self.mode.name(), d.inputs, d.hidden, d.outputs)
    }
}

impl DifferentiableClosure for NeuralClosure {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        self.params.as_slice()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.params.as_mut_slice()
    }

    fn jvp_state(&self, u: &VectorField, du: &VectorField) -> VectorField {
        let g = u.grid;
        let pf = point_features(u, self.features.set);
        let dpf = point_features(du, self.features.set);
        let dims = self.params.dims();
        let parts = map_chunks(g.len(), |range| {
            let mut tape = Tape::new(dims);
            let mut z = vec![0.0; dims.inputs];
            let mut dz = vec![0.0; dims.inputs];
            let mut dy = vec![0.0; dims.outputs];
            let mut out = Vec::with_capacity(range.len() * dims.outputs);
            for cell in range {
                gather(&pf, g, &self.features, cell, &mut z);
                gather(&dpf, g, &self.features, cell, &mut dz);
                self.params.forward_tape(&z, &mut tape);
                self.params.jvp_input(&tape, &dz, &mut dy);
                out.extend_from_slice(&dy);
            }
            out
        });
        self.assemble(g, &parts.concat())
    }

    fn vjp(&self, u: &VectorField, v: &VectorField) -> (VectorField, Vec<f64>) {
        let g = u.grid;
        let pf = point_features(u, self.features.set);
        let gy = self.assemble_transpose(v);
        let dims = self.params.dims();
        let k = dims.outputs;
        let parts = map_chunks(g.len(), |range| {
            let mut tape = Tape::new(dims);
            let mut z = vec![0.0; dims.inputs];
            let mut gz = vec![0.0; dims.inputs];
            let mut gp = vec![0.0; self.params.len()];
            let mut gzs = Vec::with_capacity(range.len() * dims.inputs);
            for cell in range {
                let up = &gy[cell * k..(cell + 1) * k];
                if up.iter().all(|&v| v == 0.0) {
                    gzs.extend(std::iter::repeat_n(0.0, dims.inputs));
                    continue;
                }
                gather(&pf, g, &self.features, cell, &mut z);
                self.params.forward_tape(&z, &mut tape);
                self.params.backward(&z, &tape, up, &mut gp, &mut gz);
                gzs.extend_from_slice(&gz);
            }
            (gp, gzs)
        });
        let mut grad = vec![0.0; self.params.len()];
        let mut gf = vec![vec![0.0; g.len()]; self.features.set.per_point()];
        let mut cell = 0;
        for (gp, gzs) in &parts {
            for (a, b) in grad.iter_mut().zip(gp) {
                *a += b;
            }
            for gz in gzs.chunks(dims.inputs) {
                scatter(gz, g, &self.features, cell, &mut gf);
                cell += 1;
            }
        }
        (point_features_transpose(g, &gf, self.features.set), grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::features::{extract_features, DerivativeSet};
    use crate::neural::net::NetDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, 2.0 * PI).unwrap()
    }

    fn random_field(g: GridSpec, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn closure(mode: OutputMode, set: DerivativeSet, seed: u64) -> NeuralClosure {
        let dims = NetDims::new(set.dimension(), 3, mode.outputs()).unwrap();
        let mut p = NetParams::xavier(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        // nonzero biases exercise every term
        let n = p.len();
        for v in &mut p.as_mut_slice()[n - (5 * 3 + mode.outputs())..] {
            *v = rng.gen_range(-0.3..0.3);
        }
        let scales: Vec<f64> = (0..set.dimension()).map(|_| rng.gen_range(0.5..3.0)).collect();
        NeuralClosure::new(p, FeatureConfig::new(set, scales).unwrap(), mode, 0.7).unwrap()
    }

    const MODES: [OutputMode; 3] = [
        OutputMode::DirectForcing,
        OutputMode::TensorDivergence,
        OutputMode::PaperK18,
    ];

    #[test]
    fn zero_params_give_zero_forcing() {
        let set = DerivativeSet::PaperText;
        let c = NeuralClosure::new(
            NetParams::zeros(NetDims::new(set.dimension(), 2, 6).unwrap()),
            FeatureConfig::unit(set),
            OutputMode::TensorDivergence,
            1.0,
        )
        .unwrap();
        assert_eq!(c.forcing(&random_field(grid(4), 1)).max_abs(), 0.0);
    }

    #[test]
    fn rejects_inconsistent_dims() {
        let set = DerivativeSet::PaperText;
        let p = NetParams::zeros(NetDims::new(set.dimension(), 2, 6).unwrap());
        assert!(NeuralClosure::new(p.clone(), FeatureConfig::unit(set), OutputMode::PaperK18, 1.0).is_err());
        assert!(NeuralClosure::new(p, FeatureConfig::unit(DerivativeSet::FullHessian), OutputMode::TensorDivergence, 1.0).is_err());
    }

    #[test]
    fn matches_per_cell_reference() {
        let g = grid(4);
        let u = random_field(g, 2);
        for mode in MODES {
            let c = closure(mode, DerivativeSet::FullHessian, 3);
            let f = c.forcing(&u);
            let mut y = Vec::new();
            for cell in 0..g.len() {
                let z = extract_features(&u, cell, &c.features);
                y.extend(c.params.forward(&z).unwrap());
            }
            let reference = c.assemble(g, &y);
            assert_eq!(f, reference);
        }
    }

    #[test]
    fn k18_equals_tensor_mode_on_symmetrized_outputs() {
        let g = grid(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y18: Vec<f64> = (0..g.len() * 18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c18 = closure(OutputMode::PaperK18, DerivativeSet::PaperText, 5);
        let c6 = closure(OutputMode::TensorDivergence, DerivativeSet::PaperText, 5);
        let mut y6 = vec![0.0; g.len() * 6];
        for x in 0..g.len() {
            let s = |m: usize, l: usize| 0.5 * (y18[x * 18 + 3 * m + l] + y18[x * 18 + 3 * l + m] + y18[x * 18 + 9 + 3 * m + l] + y18[x * 18 + 9 + 3 * l + m]);
            let vals = [s(0, 0), s(1, 1), s(2, 2), s(0, 1), s(0, 2), s(1, 2)];
            y6[x * 6..x * 6 + 6].copy_from_slice(&vals);
        }
        let a = c18.assemble(g, &y18);
        let b = c6.assemble(g, &y6);
        assert!(a.sub(&b).max_abs() < 1e-13);
    }

    #[test]
    fn assemble_transpose_is_exact() {
        let g = grid(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_field(g, 7);
        for mode in MODES {
            let c = closure(mode, DerivativeSet::PaperText, 8);
            let y: Vec<f64> = (0..g.len() * mode.outputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = c.assemble(g, &y).dot(&v);
            let gy = c.assemble_transpose(&v);
            let rhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0), "{mode:?}");
        }
    }

    #[test]
    fn state_derivatives_are_consistent() {
        let g = grid(5);
        let u = random_field(g, 9);
        let du = random_field(g, 10);
        let v = random_field(g, 11);
        for mode in MODES {
            let c = closure(mode, DerivativeSet::FullHessian, 12);
            let h = 1e-6;
            let fp = c.forcing(&u.add(&du.scaled(h)));
            let fm = c.forcing(&u.sub(&du.scaled(h)));
            let fd = fp.sub(&fm).scaled(0.5 / h);
            let jv = c.jvp_state(&u, &du);
            assert!(fd.sub(&jv).max_abs() <= 1e-7 * jv.max_abs(), "{mode:?}");
            let (gu, _) = c.vjp(&u, &v);
            let lhs = jv.dot(&v);
            let rhs = du.dot(&gu);
            assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(1.0), "{mode:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let g = grid(4);
        let u = random_field(g, 13);
        let v = random_field(g, 14);
        for mode in MODES {
            let c = closure(mode, DerivativeSet::PaperText, 15);
            let (_, grad) = c.vjp(&u, &v);
            let mut rng = ChaCha8Rng::seed_from_u64(16);
            let dir: Vec<f64> = (0..c.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let eval = |s: f64| {
                let mut cc = c.clone();
                for (p, d) in cc.params_mut().iter_mut().zip(&dir) {
                    *p += s * d;
                }
                cc.forcing(&u).dot(&v)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() <= 1e-8 * an.abs().max(1e-3), "{mode:?}: {fd} vs {an}");
        }
    }

    #[test]
    fn forcing_is_local() {
        let g = grid(12);
        let u = random_field(g, 17);
        let c = closure(OutputMode::PaperK18, DerivativeSet::FullHessian, 18);
        let base = c.forcing(&u);
        let mut bumped = u.clone();
        let at = g.index(6, 6, 6);
        bumped.comp[1][at] += 0.1;
        let diff = c.forcing(&bumped).sub(&base);
        for m in 0..3 {
            for x in 0..g.len() {
                let (i, j, k) = g.coords(x);
                let far = [i, j, k].iter().any(|&c| (c as isize - 6).abs() > 4);
                if far {
                    assert_eq!(diff.comp[m][x], 0.0);
                }
            }
        }
        assert!(diff.max_abs() > 0.0);
    }

    #[test]
    fn deterministic() {
        let g = grid(6);
        let u = random_field(g, 19);
        let c = closure(OutputMode::TensorDivergence, DerivativeSet::FullHessian, 20);
        assert_eq!(c.forcing(&u), c.forcing(&u));
        assert_eq!(c.vjp(&u, &u).1, c.vjp(&u, &u).1);
    }
}
