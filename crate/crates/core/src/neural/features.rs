//! Local stencil features for the closure network.
//!
//! Per cell and velocity component `m` the point features are the
//! center-interpolated value `U_m`, its three central first differences and
//! either the three unmixed second differences or all nine second differences
//! (mixed ones by the 4-point stencil, both orderings kept). These are taken
//! at the cell and its six face neighbours, in the order center, −x, +x, −y,
//! +y, −z, +z, giving `z[p·F + m·F_m + j]`.
//!
//! The map `u ↦ z` is linear, so its transpose is exact and cheap.

use serde::{Deserialize, Serialize};

use crate::error::{DpmError, Result};
use crate::grid::{central_diff, shifted, GridSpec, VectorField};

/// Which second derivatives enter the features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSet {
    /// value, 3 first, 3 unmixed second: 21 per point
    PaperText,
    /// value, 3 first, 9 second: 39 per point
    FullHessian,
}

impl DerivativeSet {
    pub fn per_component(self) -> usize {
        match self {
            DerivativeSet::PaperText => 7,
            DerivativeSet::FullHessian => 13,
        }
    }

    pub fn per_point(self) -> usize {
        3 * self.per_component()
    }

    pub fn dimension(self) -> usize {
        STENCIL.len() * self.per_point()
    }

    pub fn tag(self) -> u8 {
        match self {
            DerivativeSet::PaperText => 0,
            DerivativeSet::FullHessian => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DerivativeSet::PaperText),
            1 => Ok(DerivativeSet::FullHessian),
            _ => Err(DpmError::Format(format!("unknown derivative set tag {tag}"))),
        }
    }
}

/// Stencil offsets in feature order.
pub const STENCIL: [[isize; 3]; 7] = [
    [0, 0, 0],
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub set: DerivativeSet,
    /// One positive scale per feature (length `D`); features are divided by it.
    pub scales: Vec<f64>,
}

impl FeatureConfig {
    pub fn unit(set: DerivativeSet) -> Self {
        Self {
            set,
            scales: vec![1.0; set.dimension()],
        }
    }

    pub fn new(set: DerivativeSet, scales: Vec<f64>) -> Result<Self> {
        if scales.len() != set.dimension() {
            return Err(DpmError::Shape(format!(
                "expected {} feature scales, got {}",
                set.dimension(),
                scales.len()
            )));
        }
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(DpmError::InvalidArgument("feature scales must be positive".into()));
        }
        Ok(Self { set, scales })
    }

    pub fn dimension(&self) -> usize {
        self.set.dimension()
    }

    /// Scales from the RMS of every point feature over a set of fields,
    /// shared by all stencil points; zero RMS falls back to 1.
    pub fn fitted(set: DerivativeSet, fields: &[&VectorField]) -> Result<Self> {
        let f = set.per_point();
        let mut sum = vec![0.0; f];
        let mut count = 0usize;
        for u in fields {
            let pf = point_features(u, set);
            for (s, col) in sum.iter_mut().zip(&pf) {
                *s += col.iter().map(|v| v * v).sum::<f64>();
            }
            count += u.grid.len();
        }
        if count == 0 {
            return Err(DpmError::MissingData("no fields to fit feature scales".into()));
        }
        let point: Vec<f64> = sum
            .iter()
            .map(|s| {
                let rms = (s / count as f64).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            })
            .collect();
        let scales = (0..STENCIL.len()).flat_map(|_| point.iter().copied()).collect();
        Self::new(set, scales)
    }
}

/// Second-derivative pairs `(l, q)` in feature order.
fn second_pairs(set: DerivativeSet) -> Vec<(usize, usize)> {
    match set {
        DerivativeSet::PaperText => vec![(0, 0), (1, 1), (2, 2)],
        DerivativeSet::FullHessian => (0..3).flat_map(|l| (0..3).map(move |q| (l, q))).collect(),
    }
}

/// 1-D second difference along `axis`.
fn second_diff(a: &[f64], n: usize, axis: usize, dx: f64) -> Vec<f64> {
    let up = shifted(a, n, axis, 1);
    let dn = shifted(a, n, axis, -1);
    let inv = 1.0 / (dx * dx);
    (0..a.len()).map(|x| (up[x] - 2.0 * a[x] + dn[x]) * inv).collect()
}

/// Point features at every cell, indexed `[m·F_m + j][cell]`.
pub fn point_features(u: &VectorField, set: DerivativeSet) -> Vec<Vec<f64>> {
    let g = u.grid;
    let n = g.n();
    let dx = g.dx();
    let mut out = Vec::with_capacity(set.per_point());
    for m in 0..3 {
        let c = u.center_component(m);
        let firsts: Vec<Vec<f64>> = (0..3).map(|l| central_diff(&c, n, l, dx)).collect();
        out.push(c.clone());
        for d in &firsts {
            out.push(d.clone());
        }
        for (l, q) in second_pairs(set) {
            if l == q {
                out.push(second_diff(&c, n, l, dx));
            } else {
                out.push(central_diff(&firsts[q], n, l, dx));
            }
        }
    }
    out
}

/// Transpose of [`point_features`]: point-feature adjoints to face adjoints.
pub fn point_features_transpose(g: GridSpec, gf: &[Vec<f64>], set: DerivativeSet) -> VectorField {
    let n = g.n();
    let dx = g.dx();
    let fm = set.per_component();
    let pairs = second_pairs(set);
    let mut out = VectorField::zeros(g);
    for m in 0..3 {
        let base = m * fm;
        let mut gc = gf[base].clone();
        // the first-difference slots also collect the inner leg of the mixed terms
        let mut gfirst: Vec<Vec<f64>> = (0..3).map(|l| gf[base + 1 + l].clone()).collect();
        for (s, &(l, q)) in pairs.iter().enumerate() {
            let gs = &gf[base + 4 + s];
            if l == q {
                // symmetric stencil
                let t = second_diff(gs, n, l, dx);
                for (a, b) in gc.iter_mut().zip(&t) {
                    *a += b;
                }
            } else {
                let t = central_diff(gs, n, l, dx);
                for (a, b) in gfirst[q].iter_mut().zip(&t) {
                    *a -= b;
                }
            }
        }
        for (l, gd) in gfirst.iter().enumerate() {
            let t = central_diff(gd, n, l, dx);
            for (a, b) in gc.iter_mut().zip(&t) {
                *a -= b;
            }
        }
        // center = ½(u[x] + u[x+e_m])
        let lo = shifted(&gc, n, m, -1);
        out.comp[m] = gc.iter().zip(&lo).map(|(a, b)| 0.5 * (a + b)).collect();
    }
    out
}

/// Cell index of stencil point `p` around `cell`.
#[inline]
pub(crate) fn neighbour(g: GridSpec, cell: usize, p: usize) -> usize {
    let (i, j, k) = g.coords(cell);
    let o = STENCIL[p];
    g.index_wrapped(i as isize + o[0], j as isize + o[1], k as isize + o[2])
}

/// Assembles the scaled feature vector of one cell into `z`.
pub fn gather(pf: &[Vec<f64>], g: GridSpec, cfg: &FeatureConfig, cell: usize, z: &mut [f64]) {
    let f = cfg.set.per_point();
    for p in 0..STENCIL.len() {
        let nb = neighbour(g, cell, p);
        for j in 0..f {
            let idx = p * f + j;
            z[idx] = pf[j][nb] / cfg.scales[idx];
        }
    }
}

/// Transpose of [`gather`]: scatters `gz` into point-feature adjoints.
pub fn scatter(gz: &[f64], g: GridSpec, cfg: &FeatureConfig, cell: usize, gf: &mut [Vec<f64>]) {
    let f = cfg.set.per_point();
    for p in 0..STENCIL.len() {
        let nb = neighbour(g, cell, p);
        for j in 0..f {
            let idx = p * f + j;
            gf[j][nb] += gz[idx] / cfg.scales[idx];
        }
    }
}

/// Feature vector of a single cell.
pub fn extract_features(u: &VectorField, cell: usize, cfg: &FeatureConfig) -> Vec<f64> {
    let pf = point_features(u, cfg.set);
    let mut z = vec![0.0; cfg.dimension()];
    gather(&pf, u.grid, cfg, cell, &mut z);
    z
}
