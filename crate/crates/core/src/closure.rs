//! Subgrid closures. Every closure maps a resolved velocity field to a
//! face-located momentum forcing that is added to the explicit tendency.

use crate::grid::{central_diff, shifted, GridSpec, VectorField};

pub trait Closure: Sync {
    fn forcing(&self, u: &VectorField) -> VectorField;

    fn name(&self) -> String;

    /// True when the forcing is identically zero (lets the stepper skip it).
    fn is_zero(&self) -> bool {
        false
    }
}

/// A closure whose forcing can be linearized in the velocity and
/// differentiated in its parameters. The adjoint sweep only talks to this.
pub trait DifferentiableClosure: Closure {
    fn num_params(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// `∂h/∂u · du`
    fn jvp_state(&self, u: &VectorField, du: &VectorField) -> VectorField;

    /// `(∂h/∂u)ᵀ v` and `(∂h/∂θ)ᵀ v`.
    fn vjp(&self, u: &VectorField, v: &VectorField) -> (VectorField, Vec<f64>);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClosure;

impl Closure for NoClosure {
    fn forcing(&self, u: &VectorField) -> VectorField {
        VectorField::zeros(u.grid)
    }

    fn name(&self) -> String {
        "no_model".into()
    }

    fn is_zero(&self) -> bool {
        true
    }
}

impl DifferentiableClosure for NoClosure {
    fn num_params(&self) -> usize {
        0
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn jvp_state(&self, u: &VectorField, _du: &VectorField) -> VectorField {
        VectorField::zeros(u.grid)
    }

    fn vjp(&self, u: &VectorField, _v: &VectorField) -> (VectorField, Vec<f64>) {
        (VectorField::zeros(u.grid), Vec::new())
    }
}

/// `h(u) = θ·u`, a one-parameter closure used to exercise the training loop
/// against manufactured data.
#[derive(Debug, Clone)]
pub struct LinearClosure {
    pub theta: [f64; 1],
}

impl LinearClosure {
    pub fn new(theta: f64) -> Self {
        Self { theta: [theta] }
    }
}

impl Closure for LinearClosure {
    fn forcing(&self, u: &VectorField) -> VectorField {
        u.scaled(self.theta[0])
    }

    fn name(&self) -> String {
        format!("linear({})", self.theta[0])
    }
}

impl DifferentiableClosure for LinearClosure {
    fn num_params(&self) -> usize {
        1
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn jvp_state(&self, _u: &VectorField, du: &VectorField) -> VectorField {
        du.scaled(self.theta[0])
    }

    fn vjp(&self, u: &VectorField, v: &VectorField) -> (VectorField, Vec<f64>) {
        (v.scaled(self.theta[0]), vec![u.dot(v)])
    }
}

/// Symmetric tensor components at cell centers, ordered
/// `(00, 11, 22, 01, 02, 12)`.
pub type SymTensor = [Vec<f64>; 6];

pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Slot of `(m, l)` in a [`SymTensor`].
pub fn sym_slot(m: usize, l: usize) -> usize {
    match (m.min(l), m.max(l)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => unreachable!(),
    }
}

/// Face-located divergence `∂τ_ml/∂x_l` of a center-located symmetric tensor.
///
/// Diagonal terms use the compact face difference; off-diagonal terms use
/// central differences at the two adjacent centers averaged onto the face.
pub fn tensor_divergence(grid: GridSpec, tau: &SymTensor) -> VectorField {
    let n = grid.n();
    let dx = grid.dx();
    let mut out = VectorField::zeros(grid);
    for m in 0..3 {
        let diag = &tau[sym_slot(m, m)];
        let lo = shifted(diag, n, m, -1);
        let mut acc: Vec<f64> = diag.iter().zip(&lo).map(|(a, b)| (a - b) / dx).collect();
        for l in (0..3).filter(|&l| l != m) {
            let d = central_diff(&tau[sym_slot(m, l)], n, l, dx);
            let dlo = shifted(&d, n, m, -1);
            for (a, (x, y)) in acc.iter_mut().zip(d.iter().zip(&dlo)) {
                *a += 0.5 * (x + y);
            }
        }
        out.comp[m] = acc;
    }
    out
}

/// Transpose of [`tensor_divergence`].
pub fn tensor_divergence_transpose(v: &VectorField) -> SymTensor {
    let g = v.grid;
    let n = g.n();
    let dx = g.dx();
    let mut tau: SymTensor = std::array::from_fn(|_| vec![0.0; g.len()]);
    for m in 0..3 {
        let hi = shifted(&v.comp[m], n, m, 1);
        for (t, (a, b)) in tau[sym_slot(m, m)].iter_mut().zip(v.comp[m].iter().zip(&hi)) {
            *t += (a - b) / dx;
        }
        let avg: Vec<f64> = v.comp[m].iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        for l in (0..3).filter(|&l| l != m) {
            // central_diff transposes to its negative
            let d = central_diff(&avg, n, l, dx);
            for (t, x) in tau[sym_slot(m, l)].iter_mut().zip(&d) {
                *t -= x;
            }
        }
    }
    tau
}

/// Resolved strain rate `S_ij` at cell centers: compact differences on the
/// diagonal, central differences of center-interpolated velocity elsewhere.
pub fn strain_rate(u: &VectorField) -> SymTensor {
    let g = u.grid;
    let n = g.n();
    let dx = g.dx();
    let centers = [0, 1, 2].map(|m| u.center_component(m));
    let mut s: SymTensor = std::array::from_fn(|_| Vec::new());
    for m in 0..3 {
        let hi = shifted(&u.comp[m], n, m, 1);
        s[sym_slot(m, m)] = hi.iter().zip(&u.comp[m]).map(|(a, b)| (a - b) / dx).collect();
    }
    for &(m, l) in &SYM_PAIRS[3..] {
        let a = central_diff(&centers[m], n, l, dx);
        let b = central_diff(&centers[l], n, m, dx);
        s[sym_slot(m, l)] = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    }
    s
}

/// `|S| = (2 S_ij S_ij)^{1/2}` pointwise.
pub fn strain_magnitude(s: &SymTensor) -> Vec<f64> {
    (0..s[0].len())
        .map(|x| {
            let diag = s[0][x] * s[0][x] + s[1][x] * s[1][x] + s[2][x] * s[2][x];
            let off = s[3][x] * s[3][x] + s[4][x] * s[4][x] + s[5][x] * s[5][x];
            (2.0 * (diag + 2.0 * off)).sqrt()
        })
        .collect()
}

/// Divergence of `2 c |S| S_ij` where `c` is the squared length scale.
fn eddy_viscosity_forcing(u: &VectorField, c_delta_sq: f64) -> VectorField {
    let s = strain_rate(u);
    let mag = strain_magnitude(&s);
    let tau: SymTensor = std::array::from_fn(|p| {
        s[p].iter()
            .zip(&mag)
            .map(|(sij, m)| 2.0 * c_delta_sq * m * sij)
            .collect()
    });
    tensor_divergence(u.grid, &tau)
}

/// Constant-coefficient Smagorinsky model with `Δ̄ = dx`.
#[derive(Debug, Clone, Copy)]
pub struct Smagorinsky {
    pub cs: f64,
}

impl Smagorinsky {
    pub fn new(cs: f64) -> crate::Result<Self> {
        if !(cs > 0.0 && cs.is_finite()) {
            return Err(crate::DpmError::InvalidArgument(format!(
                "Smagorinsky coefficient {cs} must be positive"
            )));
        }
        Ok(Self { cs })
    }

    /// Eddy viscosity `(C_S Δ̄)² |S|` at cell centers.
    pub fn eddy_viscosity(&self, u: &VectorField) -> Vec<f64> {
        let cd = (self.cs * u.grid.dx()).powi(2);
        strain_magnitude(&strain_rate(u)).into_iter().map(|m| cd * m).collect()
    }
}

impl Closure for Smagorinsky {
    fn forcing(&self, u: &VectorField) -> VectorField {
        eddy_viscosity_forcing(u, (self.cs * u.grid.dx()).powi(2))
    }

    fn name(&self) -> String {
        format!("smagorinsky({})", self.cs)
    }
}

/// Dynamic Smagorinsky with a domain-averaged Germano–Lilly coefficient,
/// a `[¼, ½, ¼]` tensor-product test filter (width 2Δ̄) and clipping at zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct DynamicSmagorinsky;

/// Discrete test filter of width two cells on center data.
pub fn test_filter(a: &[f64], n: usize) -> Vec<f64> {
    let mut cur = a.to_vec();
    for axis in 0..3 {
        let hi = shifted(&cur, n, axis, 1);
        let lo = shifted(&cur, n, axis, -1);
        cur = (0..cur.len())
            .map(|x| 0.25 * lo[x] + 0.5 * cur[x] + 0.25 * hi[x])
            .collect();
    }
    cur
}

impl DynamicSmagorinsky {
    /// The coefficient `C_d` multiplying `Δ̄²` (so `C_d = C_S²`).
    pub fn coefficient(&self, u: &VectorField) -> f64 {
        let g = u.grid;
        let n = g.n();
        let delta_sq = g.dx() * g.dx();
        let centers = [0, 1, 2].map(|m| u.center_component(m));
        let filtered = [0, 1, 2].map(|m| test_filter(&centers[m], n));

        let s = strain_rate(u);
        let mag = strain_magnitude(&s);
        let s_hat: SymTensor = std::array::from_fn(|p| test_filter(&s[p], n));
        let mag_hat = strain_magnitude(&s_hat);

        let mut leo: SymTensor = std::array::from_fn(|p| {
            let (i, j) = SYM_PAIRS[p];
            let prod: Vec<f64> = centers[i].iter().zip(&centers[j]).map(|(a, b)| a * b).collect();
            let fp = test_filter(&prod, n);
            (0..g.len()).map(|x| fp[x] - filtered[i][x] * filtered[j][x]).collect()
        });
        for x in 0..g.len() {
            let tr = (leo[0][x] + leo[1][x] + leo[2][x]) / 3.0;
            for slot in leo.iter_mut().take(3) {
                slot[x] -= tr;
            }
        }
        let alpha_sq = 4.0;
        let mut num = 0.0;
        let mut den = 0.0;
        for p in 0..6 {
            let weight = if p < 3 { 1.0 } else { 2.0 };
            let ms: Vec<f64> = mag.iter().zip(&s[p]).map(|(a, b)| a * b).collect();
            let ms_hat = test_filter(&ms, n);
            for x in 0..g.len() {
                let mij = 2.0 * delta_sq * (ms_hat[x] - alpha_sq * mag_hat[x] * s_hat[p][x]);
                num += weight * leo[p][x] * mij;
                den += weight * mij * mij;
            }
        }
        if den == 0.0 {
            return 0.0;
        }
        (num / den / delta_sq).max(0.0)
    }
}

impl Closure for DynamicSmagorinsky {
    fn forcing(&self, u: &VectorField) -> VectorField {
        let c = self.coefficient(u);
        if c == 0.0 {
            return VectorField::zeros(u.grid);
        }
        eddy_viscosity_forcing(u, c * u.grid.dx() * u.grid.dx())
    }

    fn name(&self) -> String {
        "dynamic_smagorinsky".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn no_model_is_zero() {
        let u = random_field(grid(6), 1);
        assert_eq!(NoClosure.forcing(&u).max_abs(), 0.0);
    }

    #[test]
    fn uniform_fields_give_zero_forcing() {
        let u = VectorField::uniform(grid(8), [0.3, -1.0, 2.0]);
        assert!(Smagorinsky::new(0.18).unwrap().forcing(&u).max_abs() < 1e-14);
        assert!(DynamicSmagorinsky.forcing(&u).max_abs() < 1e-14);
        assert!(Smagorinsky::new(0.0).is_err());
    }

    #[test]
    fn zero_field_dynamic_coefficient_is_zero() {
        let u = VectorField::zeros(grid(8));
        assert_eq!(DynamicSmagorinsky.coefficient(&u), 0.0);
        assert_eq!(DynamicSmagorinsky.forcing(&u).max_abs(), 0.0);
    }

    #[test]
    fn linear_shear_strain_and_eddy_viscosity() {
        let g = grid(16);
        let shear = 0.9;
        let u = VectorField::from_fn(g, |m, x| if m == 0 { shear * x[1] } else { 0.0 });
        let model = Smagorinsky::new(0.18).unwrap();
        let s = strain_rate(&u);
        let nut = model.eddy_viscosity(&u);
        let cd = (0.18 * g.dx()).powi(2);
        for i in 0..16 {
            for j in 2..14 {
                let x = g.index(i, j, 3);
                assert!((s[sym_slot(0, 1)][x] - shear / 2.0).abs() < 1e-12);
                assert!((nut[x] - cd * shear).abs() < 1e-12);
                let tau12 = 2.0 * nut[x] * s[sym_slot(0, 1)][x];
                assert!((tau12 - cd * shear * shear).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_divergence_transpose_is_exact() {
        let g = grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau: SymTensor = std::array::from_fn(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let v = random_field(g, 4);
        let lhs = tensor_divergence(g, &tau).dot(&v);
        let tt = tensor_divergence_transpose(&v);
        let rhs: f64 = (0..6).map(|p| crate::grid::dot(&tau[p], &tt[p])).sum();
        assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0));
    }

    #[test]
    fn smagorinsky_matches_pointwise_oracle() {
        let g = grid(5);
        let u = random_field(g, 5);
        let cs = 0.2;
        let f = Smagorinsky::new(cs).unwrap().forcing(&u);
        let dx = g.dx();
        let at = |m: usize, p: [isize; 3]| u.comp[m][g.index_wrapped(p[0], p[1], p[2])];
        let center = |m: usize, p: [isize; 3]| {
            let mut q = p;
            q[m] += 1;
            0.5 * (at(m, p) + at(m, q))
        };
        let strain = |i: usize, j: usize, p: [isize; 3]| -> f64 {
            if i == j {
                let mut q = p;
                q[i] += 1;
                (at(i, q) - at(i, p)) / dx
            } else {
                let d = |a: usize, b: usize| {
                    let mut hi = p;
                    let mut lo = p;
                    hi[b] += 1;
                    lo[b] -= 1;
                    (center(a, hi) - center(a, lo)) / (2.0 * dx)
                };
                0.5 * (d(i, j) + d(j, i))
            }
        };
        let tau = |i: usize, j: usize, p: [isize; 3]| -> f64 {
            let mut ss = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    ss += strain(a, b, p).powi(2);
                }
            }
            2.0 * (cs * dx).powi(2) * (2.0 * ss).sqrt() * strain(i, j, p)
        };
        for i in 0..5isize {
            for j in 0..5isize {
                for k in 0..5isize {
                    let p = [i, j, k];
                    for m in 0..3 {
                        let mut lo = p;
                        lo[m] -= 1;
                        let mut val = (tau(m, m, p) - tau(m, m, lo)) / dx;
                        for l in (0..3).filter(|&l| l != m) {
                            let cdiff = |c: [isize; 3]| {
                                let mut hi = c;
                                let mut dn = c;
                                hi[l] += 1;
                                dn[l] -= 1;
                                (tau(m, l, hi) - tau(m, l, dn)) / (2.0 * dx)
                            };
                            val += 0.5 * (cdiff(p) + cdiff(lo));
                        }
                        let got = f.comp[m][g.index_wrapped(i, j, k)];
                        assert!((got - val).abs() < 1e-12, "{got} vs {val}");
                    }
                }
            }
        }
    }

    #[test]
    fn smagorinsky_is_quadratically_homogeneous() {
        let u = random_field(grid(8), 6);
        let model = Smagorinsky::new(0.18).unwrap();
        let f1 = model.forcing(&u);
        let f2 = model.forcing(&u.scaled(3.0));
        let err = f2.sub(&f1.scaled(9.0)).max_abs();
        assert!(err <= 1e-12 * f2.max_abs());
    }

    #[test]
    fn dynamic_coefficient_is_scale_invariant() {
        let u = random_field(grid(8), 7);
        let c1 = DynamicSmagorinsky.coefficient(&u);
        let c2 = DynamicSmagorinsky.coefficient(&u.scaled(2.5));
        assert!((c1 - c2).abs() <= 1e-12 * c1.abs().max(1e-300));
    }

    #[test]
    fn linear_closure_vjp_is_transpose() {
        let g = grid(5);
        let u = random_field(g, 8);
        let v = random_field(g, 9);
        let c = LinearClosure::new(-0.4);
        let (gu, gt) = c.vjp(&u, &v);
        assert!((c.jvp_state(&u, &u).dot(&v) - u.dot(&gu)).abs() < 1e-12);
        assert!((gt[0] - u.dot(&v)).abs() < 1e-12);
    }
}
