//! Periodic staggered (MAC) grid geometry and field containers.
//!
//! Storage convention: a cubic grid of `n` cells per axis, flat index
//! `(i * n + j) * n + k` with `i` along x (axis 0), `j` along y, `k` along z.
//! Scalars live at cell centers `(i+½, j+½, k+½)·dx`. Vector component `m`
//! lives on the face normal to axis `m` on the low side of the cell, so
//! `u₁[i,j,k]` sits at `(i, j+½, k+½)·dx`.
//!
//! With this layout the discrete divergence at a center is
//! `Σ_m (u_m[c + e_m] − u_m[c]) / dx` and the face gradient is
//! `(p[c] − p[c − e_m]) / dx`; the two are negative transposes.

use crate::error::{DpmError, Result};

/// Wraps a signed index into `[0, n)`.
#[inline]
pub fn wrap_index(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    n: usize,
    domain_length: f64,
    dx: f64,
}

impl GridSpec {
    pub fn new(n: usize, domain_length: f64) -> Result<Self> {
        if n < 4 {
            return Err(DpmError::InvalidGrid(format!("n = {n} (need n >= 4)")));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(DpmError::InvalidGrid(format!(
                "domain length {domain_length} must be positive and finite"
            )));
        }
        Ok(Self {
            n,
            domain_length,
            dx: domain_length / n as f64,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Number of cells, `n³`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Flat index of a signed, periodically wrapped triple.
    #[inline]
    pub fn index_wrapped(&self, i: isize, j: isize, k: isize) -> usize {
        self.index(
            wrap_index(i, self.n),
            wrap_index(j, self.n),
            wrap_index(k, self.n),
        )
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    /// Fundamental wavenumber `2π / L`.
    pub fn kappa0(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.domain_length
    }

    /// Physical position of a cell center.
    pub fn center_position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.dx,
            (j as f64 + 0.5) * self.dx,
            (k as f64 + 0.5) * self.dx,
        ]
    }

    /// Physical position of the face carrying component `m` of cell `(i,j,k)`.
    pub fn face_position(&self, m: usize, i: usize, j: usize, k: usize) -> [f64; 3] {
        let mut x = self.center_position(i, j, k);
        x[m] -= 0.5 * self.dx;
        x
    }

    pub fn same_geometry(&self, other: &GridSpec) -> bool {
        self.n == other.n && self.domain_length == other.domain_length
    }
}

/// Returns `out[x] = a[x + shift·e_axis]` under periodic wrap.
pub fn shifted(a: &[f64], n: usize, axis: usize, shift: isize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    shift_into(a, n, axis, shift, &mut out);
    out
}

pub(crate) fn shift_into(a: &[f64], n: usize, axis: usize, shift: isize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * n * n);
    let s = wrap_index(shift, n);
    if s == 0 {
        out.copy_from_slice(a);
        return;
    }
    match axis {
        0 => {
            let plane = n * n;
            for i in 0..n {
                let src = ((i + s) % n) * plane;
                out[i * plane..(i + 1) * plane].copy_from_slice(&a[src..src + plane]);
            }
        }
        1 => {
            for i in 0..n {
                for j in 0..n {
                    let dst = (i * n + j) * n;
                    let src = (i * n + (j + s) % n) * n;
                    out[dst..dst + n].copy_from_slice(&a[src..src + n]);
                }
            }
        }
        2 => {
            for row in 0..n * n {
                let base = row * n;
                let head = n - s;
                out[base..base + head].copy_from_slice(&a[base + s..base + n]);
                out[base + head..base + n].copy_from_slice(&a[base..base + s]);
            }
        }
        _ => panic!("axis {axis} out of range"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(DpmError::Shape(format!(
                "scalar field needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y, z)` at cell centers.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    values.push(f(grid.center_position(i, j, k)));
                }
            }
        }
        Self { grid, values }
    }

    pub fn shifted(&self, axis: usize, shift: isize) -> Vec<f64> {
        shifted(&self.values, self.grid.n(), axis, shift)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        dot(&self.values, &other.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: GridSpec,
    pub comp: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        let len = grid.len();
        Self {
            grid,
            comp: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
        }
    }

    pub fn from_components(grid: GridSpec, comp: [Vec<f64>; 3]) -> Result<Self> {
        if comp.iter().any(|c| c.len() != grid.len()) {
            return Err(DpmError::Shape(format!(
                "vector field components must each hold {} values",
                grid.len()
            )));
        }
        Ok(Self { grid, comp })
    }

    /// Samples `f(m, position)` at the face location of each component.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, [f64; 3]) -> f64) -> Self {
        let n = grid.n();
        let mut out = Self::zeros(grid);
        for (m, c) in out.comp.iter_mut().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        c[grid.index(i, j, k)] = f(m, grid.face_position(m, i, j, k));
                    }
                }
            }
        }
        out
    }

    /// Uniform field with the same value on every face of each component.
    pub fn uniform(grid: GridSpec, value: [f64; 3]) -> Self {
        let len = grid.len();
        Self {
            grid,
            comp: [
                vec![value[0]; len],
                vec![value[1]; len],
                vec![value[2]; len],
            ],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comp.iter().flatten().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        (0..3).map(|m| dot(&self.comp[m], &other.comp[m])).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.comp.iter().map(|c| max_abs(c)).fold(0.0, f64::max)
    }

    /// `⟨u_i u_i⟩^{1/2}` over faces.
    pub fn rms(&self) -> f64 {
        (self.norm_sq() / self.grid.len() as f64).sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for v in self.comp.iter_mut().flatten() {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for m in 0..3 {
            axpy(&mut self.comp[m], a, &other.comp[m]);
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Per-component mean (the zero wavenumber mode).
    pub fn mean(&self) -> [f64; 3] {
        let len = self.grid.len() as f64;
        [0, 1, 2].map(|m| self.comp[m].iter().sum::<f64>() / len)
    }

    /// Component `m` interpolated to cell centers.
    pub fn center_component(&self, m: usize) -> Vec<f64> {
        let up = shifted(&self.comp[m], self.grid.n(), m, 1);
        self.comp[m]
            .iter()
            .zip(&up)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Total resolved kinetic energy `½⟨u·u⟩` using face values.
    pub fn face_energy(&self) -> f64 {
        0.5 * self.norm_sq() / self.grid.len() as f64
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Discrete divergence `𝒟^Δ(u)` at cell centers.
pub fn divergence(u: &VectorField) -> ScalarField {
    let g = u.grid;
    let n = g.n();
    let inv = 1.0 / g.dx();
    let mut out = vec![0.0; g.len()];
    let mut buf = vec![0.0; g.len()];
    for m in 0..3 {
        shift_into(&u.comp[m], n, m, 1, &mut buf);
        for ((o, hi), lo) in out.iter_mut().zip(&buf).zip(&u.comp[m]) {
            *o += (hi - lo) * inv;
        }
    }
    ScalarField {
        grid: g,
        values: out,
    }
}

/// Face-located gradient of a center scalar.
pub fn gradient(p: &ScalarField) -> VectorField {
    let g = p.grid;
    let n = g.n();
    let inv = 1.0 / g.dx();
    let comp = [0, 1, 2].map(|m| {
        let lo = shifted(&p.values, n, m, -1);
        p.values
            .iter()
            .zip(&lo)
            .map(|(c, l)| (c - l) * inv)
            .collect::<Vec<_>>()
    });
    VectorField { grid: g, comp }
}

/// 7-point Laplacian of a periodic array on an `n³` grid.
pub(crate) fn laplacian_values(a: &[f64], n: usize, dx: f64) -> Vec<f64> {
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0; a.len()];
    let mut up = vec![0.0; a.len()];
    let mut dn = vec![0.0; a.len()];
    for axis in 0..3 {
        shift_into(a, n, axis, 1, &mut up);
        shift_into(a, n, axis, -1, &mut dn);
        for (((o, u), d), c) in out.iter_mut().zip(&up).zip(&dn).zip(a) {
            *o += (u - 2.0 * c + d) * inv;
        }
    }
    out
}

pub fn laplacian(p: &ScalarField) -> ScalarField {
    ScalarField {
        grid: p.grid,
        values: laplacian_values(&p.values, p.grid.n(), p.grid.dx()),
    }
}

/// Center values interpolated onto the faces normal to `axis`.
pub(crate) fn center_to_face(c: &[f64], n: usize, axis: usize) -> Vec<f64> {
    let lo = shifted(c, n, axis, -1);
    c.iter().zip(&lo).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Central difference `(a[x+e] − a[x−e]) / (2dx)` along `axis`.
pub(crate) fn central_diff(a: &[f64], n: usize, axis: usize, dx: f64) -> Vec<f64> {
    let up = shifted(a, n, axis, 1);
    let dn = shifted(a, n, axis, -1);
    let s = 0.5 / dx;
    up.iter().zip(&dn).map(|(u, d)| (u - d) * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, 2.0 * std::f64::consts::PI).unwrap()
    }

    #[test]
    fn wrap_index_examples() {
        assert_eq!(wrap_index(-1, 16), 15);
        assert_eq!(wrap_index(16, 16), 0);
        assert_eq!(wrap_index(7, 16), 7);
        assert_eq!(wrap_index(-33, 16), 15);
    }

    #[test]
    fn grid_rejects_small_n() {
        assert!(GridSpec::new(3, 1.0).is_err());
        assert!(GridSpec::new(4, 0.0).is_err());
        let g = GridSpec::new(10, 3.0).unwrap();
        assert!((g.dx() * g.n() as f64 - g.domain_length()).abs() < 1e-15);
    }

    #[test]
    fn shift_matches_index_arithmetic() {
        let g = grid(5);
        let a: Vec<f64> = (0..g.len()).map(|x| x as f64).collect();
        for axis in 0..3 {
            for s in [-3isize, -1, 0, 1, 2, 7] {
                let out = shifted(&a, 5, axis, s);
                for i in 0..5 {
                    for j in 0..5 {
                        for k in 0..5 {
                            let mut t = [i as isize, j as isize, k as isize];
                            t[axis] += s;
                            assert_eq!(out[g.index(i, j, k)], a[g.index_wrapped(t[0], t[1], t[2])]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn divergence_of_constant_is_zero() {
        let u = VectorField::uniform(grid(8), [1.5, -2.0, 0.25]);
        assert!(divergence(&u).max_abs() < 1e-14);
    }

    #[test]
    fn divergence_of_ramp_is_uniform_except_seam() {
        let g = grid(8);
        let u = VectorField::from_fn(g, |m, x| if m == 0 { x[0] } else { 0.0 });
        let d = divergence(&u);
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let v = d.values[g.index(i, j, k)];
                    if i == 7 {
                        // wraps from x = 7dx back to x = 0
                        assert!((v - (0.0 - 7.0 * g.dx()) / g.dx()).abs() < 1e-12);
                    } else {
                        assert!((v - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn center_interpolation_commutes_with_shift() {
        let g = grid(6);
        let u = VectorField::from_fn(g, |m, x| (m as f64 + 1.0) * x[0].sin() * x[1].cos() + x[2]);
        for m in 0..3 {
            let c = u.center_component(m);
            for axis in 0..3 {
                let mut s = u.clone();
                for comp in s.comp.iter_mut() {
                    *comp = shifted(comp, 6, axis, 1);
                }
                assert_eq!(s.center_component(m), shifted(&c, 6, axis, 1));
            }
        }
    }
}
