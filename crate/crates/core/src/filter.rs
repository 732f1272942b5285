//! Box filtering of fine-grid data, sampling onto the coarse grid, the
//! divergence-free ℓ² projection of coarse targets, and the diagnostics that
//! compare coarse- and fine-mesh derivatives of the filtered field.
//!
//! Alignment: every component is averaged with the same index kernel, offsets
//! `−⌊r/2⌋ ..= r−1−⌊r/2⌋`, so filtering commutes with the discrete divergence.
//! Coarse face `(I,J,K)` of component `m` reads the fine filtered field at
//! index `J·r + ⌊r/2⌋` transversally, which covers exactly the fine faces
//! inside the coarse cell. Along `m` it reads index `I·r` for odd `r`; for
//! even `r` the kernel is centered half a fine cell below its index, so the
//! two fine values straddling the coarse face are averaged. The result is a
//! top-hat of width `r·dx` centered on the coarse face in every direction.

use crate::closure::{tensor_divergence, SymTensor, SYM_PAIRS};
use crate::error::{DpmError, Result};
use crate::grid::{divergence, gradient, shifted, GridSpec, ScalarField, VectorField};
use crate::spectral::poisson_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    ratio: usize,
}

impl FilterSpec {
    pub fn new(ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(DpmError::InvalidArgument("filter ratio must be at least 1".into()));
        }
        Ok(Self { ratio })
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    /// Lowest kernel offset; the kernel spans `lo ..= lo + r − 1`.
    pub fn low_offset(&self) -> isize {
        -((self.ratio / 2) as isize)
    }

    /// Rejects ratios that do not divide `n`.
    pub fn check(&self, fine: GridSpec) -> Result<()> {
        if !fine.n().is_multiple_of(self.ratio) {
            return Err(DpmError::InvalidArgument(format!(
                "filter ratio {} does not divide n = {}",
                self.ratio,
                fine.n()
            )));
        }
        Ok(())
    }

    /// Coarse grid for a fine grid.
    pub fn coarse_grid(&self, fine: GridSpec) -> Result<GridSpec> {
        self.check(fine)?;
        GridSpec::new(fine.n() / self.ratio, fine.domain_length())
    }

    /// Fine index sampled for coarse index `c` transversally (and for centers).
    fn transverse_index(&self, c: usize) -> usize {
        c * self.ratio + self.ratio / 2
    }
}

/// Top-hat average of `r` consecutive entries along each axis.
pub(crate) fn box_filter_values(a: &[f64], n: usize, spec: FilterSpec) -> Vec<f64> {
    let r = spec.ratio;
    if r == 1 {
        return a.to_vec();
    }
    let lo = spec.low_offset();
    let inv = 1.0 / r as f64;
    let mut cur = a.to_vec();
    for axis in 0..3 {
        let mut acc = vec![0.0; cur.len()];
        for o in lo..lo + r as isize {
            let s = shifted(&cur, n, axis, o);
            for (x, v) in acc.iter_mut().zip(&s) {
                *x += v;
            }
        }
        acc.iter_mut().for_each(|x| *x *= inv);
        cur = acc;
    }
    cur
}

/// Fine-to-fine box filter of width `r·dx`.
pub fn box_filter(u: &VectorField, spec: FilterSpec) -> Result<VectorField> {
    spec.check(u.grid)?;
    let n = u.grid.n();
    Ok(VectorField {
        grid: u.grid,
        comp: [0, 1, 2].map(|m| box_filter_values(&u.comp[m], n, spec)),
    })
}

/// Samples a filtered fine field at the coarse face locations.
pub fn downsample(u_bar: &VectorField, spec: FilterSpec) -> Result<VectorField> {
    let coarse = spec.coarse_grid(u_bar.grid)?;
    let nc = coarse.n();
    let fine = u_bar.grid;
    let r = spec.ratio;
    let mut out = VectorField::zeros(coarse);
    for m in 0..3 {
        for i in 0..nc {
            for j in 0..nc {
                for k in 0..nc {
                    let mut idx = [i, j, k].map(|c| spec.transverse_index(c));
                    idx[m] = [i, j, k][m] * r;
                    let at = |idx: [usize; 3]| u_bar.comp[m][fine.index(idx[0], idx[1], idx[2])];
                    let v = if r.is_multiple_of(2) {
                        let mut up = idx;
                        up[m] += 1;
                        0.5 * (at(idx) + at(up))
                    } else {
                        at(idx)
                    };
                    out.comp[m][coarse.index(i, j, k)] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Samples center-located fine data at coarse centers.
pub(crate) fn downsample_centers(a: &[f64], fine: GridSpec, spec: FilterSpec) -> Result<Vec<f64>> {
    let coarse = spec.coarse_grid(fine)?;
    let nc = coarse.n();
    let mut out = vec![0.0; coarse.len()];
    for i in 0..nc {
        for j in 0..nc {
            for k in 0..nc {
                let [a0, a1, a2] = [i, j, k].map(|c| spec.transverse_index(c));
                out[coarse.index(i, j, k)] = a[fine.index(a0, a1, a2)];
            }
        }
    }
    Ok(out)
}

/// Box filter followed by sampling: `Ū` on the coarse grid.
pub fn filter_to_coarse(u: &VectorField, spec: FilterSpec) -> Result<VectorField> {
    downsample(&box_filter(u, spec)?, spec)
}

/// ℓ²-nearest discretely divergence-free field: `w = Ū − G(λ)` with
/// `Lap(λ) = 𝒟(Ū)`.
pub fn divfree_project(u_bar: &VectorField) -> (VectorField, ScalarField) {
    let lambda = poisson_solve(&divergence(u_bar));
    let mut w = u_bar.clone();
    w.axpy(-1.0, &gradient(&lambda));
    (w, lambda)
}

/// `w − Ū`, the correction the projection applies.
pub fn projection_operator_residual(u_bar: &VectorField) -> VectorField {
    divfree_project(u_bar).0.sub(u_bar)
}

/// One coarse training target: the sampled filtered field and its projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseTarget {
    pub u_bar: VectorField,
    pub w: VectorField,
    pub time: f64,
    pub source: String,
}

impl CoarseTarget {
    pub fn from_fine(u: &VectorField, spec: FilterSpec, time: f64, source: &str) -> Result<Self> {
        Self::from_coarse(filter_to_coarse(u, spec)?, time, source)
    }

    pub fn from_coarse(u_bar: VectorField, time: f64, source: &str) -> Result<Self> {
        if !u_bar.is_finite() {
            return Err(DpmError::InvalidArgument("coarse field is not finite".into()));
        }
        let (w, _) = divfree_project(&u_bar);
        Ok(Self {
            u_bar,
            w,
            time,
            source: source.to_string(),
        })
    }
}

/// Coarse-grid subgrid forcing `−∂τ_ij/∂x_j` with the deviatoric residual
/// stress `τ_ij = \overline{u_i u_j} − ū_i ū_j` formed from cell-averaged
/// center velocities.
pub fn sgs_forcing_target(u: &VectorField, spec: FilterSpec) -> Result<VectorField> {
    let coarse = spec.coarse_grid(u.grid)?;
    let fine = u.grid;
    let n = fine.n();
    let centers = [0, 1, 2].map(|m| u.center_component(m));
    let mut means = Vec::with_capacity(3);
    for c in &centers {
        means.push(downsample_centers(&box_filter_values(c, n, spec), fine, spec)?);
    }
    let mut tau: SymTensor = std::array::from_fn(|_| Vec::new());
    for (p, &(i, j)) in SYM_PAIRS.iter().enumerate() {
        let prod: Vec<f64> = centers[i].iter().zip(&centers[j]).map(|(a, b)| a * b).collect();
        let fp = downsample_centers(&box_filter_values(&prod, n, spec), fine, spec)?;
        tau[p] = (0..coarse.len()).map(|x| fp[x] - means[i][x] * means[j][x]).collect();
    }
    for x in 0..coarse.len() {
        let tr = (tau[0][x] + tau[1][x] + tau[2][x]) / 3.0;
        for slot in tau.iter_mut().take(3) {
            slot[x] -= tr;
        }
    }
    Ok(tensor_divergence(coarse, &tau).scaled(-1.0))
}

/// Columns of the finite-difference error table for one filter ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationDiagnostics {
    pub ratio: usize,
    /// `⟨|∇ū|⟩` on the fine mesh
    pub mean_gradient: f64,
    /// `⟨|δū₁|⟩`: coarse minus fine first difference of `ū₁` along x
    pub mean_delta: f64,
    pub fine_div_max: f64,
    pub fine_div_mean: f64,
    pub coarse_div_max: f64,
    pub coarse_div_mean: f64,
}

fn ratio_or_zero(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl DiscretizationDiagnostics {
    pub fn delta_ratio(&self) -> f64 {
        ratio_or_zero(self.mean_delta, self.mean_gradient)
    }

    pub fn fine_div_max_ratio(&self) -> f64 {
        ratio_or_zero(self.fine_div_max, self.mean_gradient)
    }

    pub fn fine_div_mean_ratio(&self) -> f64 {
        ratio_or_zero(self.fine_div_mean, self.mean_gradient)
    }

    pub fn coarse_div_max_ratio(&self) -> f64 {
        ratio_or_zero(self.coarse_div_max, self.mean_gradient)
    }

    pub fn coarse_div_mean_ratio(&self) -> f64 {
        ratio_or_zero(self.coarse_div_mean, self.mean_gradient)
    }
}

/// Mean Frobenius norm of the velocity gradient at fine cell centers.
pub fn mean_gradient_norm(u: &VectorField) -> f64 {
    let g = u.grid;
    let n = g.n();
    let dx = g.dx();
    let centers = [0, 1, 2].map(|m| u.center_component(m));
    let mut sq = vec![0.0; g.len()];
    for m in 0..3 {
        for l in 0..3 {
            let d = if m == l {
                let hi = shifted(&u.comp[m], n, m, 1);
                hi.iter().zip(&u.comp[m]).map(|(a, b)| (a - b) / dx).collect::<Vec<_>>()
            } else {
                crate::grid::central_diff(&centers[m], n, l, dx)
            };
            for (s, v) in sq.iter_mut().zip(&d) {
                *s += v * v;
            }
        }
    }
    sq.iter().map(|s| s.sqrt()).sum::<f64>() / g.len() as f64
}

/// Compares derivatives of the filtered field `u_bar` (fine grid) evaluated on
/// the fine and on the coarse mesh.
pub fn discretization_diagnostics(
    u_bar: &VectorField,
    spec: FilterSpec,
) -> Result<DiscretizationDiagnostics> {
    let coarse_field = downsample(u_bar, spec)?;
    let coarse = coarse_field.grid;
    let fine = u_bar.grid;
    let r = spec.ratio;
    let dxf = fine.dx();
    let nc = coarse.n();

    let mut delta_sum = 0.0;
    for i in 0..nc {
        for j in 0..nc {
            for k in 0..nc {
                let hi = coarse_field.comp[0][coarse.index((i + 1) % nc, j, k)];
                let lo = coarse_field.comp[0][coarse.index(i, j, k)];
                let coarse_d = (hi - lo) / coarse.dx();
                let (tj, tk) = (spec.transverse_index(j), spec.transverse_index(k));
                let at = |p: isize| u_bar.comp[0][fine.index_wrapped(p, tj as isize, tk as isize)];
                // ū₁[b] and ū₁[b+1] straddle the coarse center in both parities
                let b = (i * r + r / 2) as isize;
                let fine_d = (at(b + 1) - at(b)) / dxf;
                delta_sum += (coarse_d - fine_d).abs();
            }
        }
    }
    let fine_div = divergence(u_bar);
    let coarse_div = divergence(&coarse_field);
    let mean_abs = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    Ok(DiscretizationDiagnostics {
        ratio: r,
        mean_gradient: mean_gradient_norm(u_bar),
        mean_delta: delta_sum / coarse.len() as f64,
        fine_div_max: fine_div.max_abs(),
        fine_div_mean: mean_abs(&fine_div.values),
        coarse_div_max: coarse_div.max_abs(),
        coarse_div_mean: mean_abs(&coarse_div.values),
    })
}
