//! FFT utilities on the periodic grid: 3-D transforms, shell-averaged
//! energy spectra and the exact spectral solve of the 7-point Poisson problem.
//!
//! Forward transforms are unnormalized; the inverse carries the `1/n³`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{GridSpec, ScalarField, VectorField};

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place 3-D transform of an `n³` array (no normalization either way).
fn fft3_in_place(data: &mut [Complex64], n: usize, inverse: bool) {
    let fft = plan(n, inverse);
    // axis 2 is contiguous
    fft.process(data);

    let mut lines = vec![Complex64::new(0.0, 0.0); data.len()];
    // axis 1
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                lines[(i * n + k) * n + j] = data[(i * n + j) * n + k];
            }
        }
    }
    fft.process(&mut lines);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data[(i * n + j) * n + k] = lines[(i * n + k) * n + j];
            }
        }
    }
    // axis 0
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                lines[(j * n + k) * n + i] = data[(i * n + j) * n + k];
            }
        }
    }
    fft.process(&mut lines);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data[(i * n + j) * n + k] = lines[(j * n + k) * n + i];
            }
        }
    }
}

/// Unnormalized forward transform of a real field.
pub fn fft3_real(field: &ScalarField) -> Vec<Complex64> {
    fft3_values(&field.values, field.grid.n())
}

pub(crate) fn fft3_values(values: &[f64], n: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3_in_place(&mut data, n, false);
    data
}

/// Normalized inverse transform; returns the real part.
pub fn ifft3_real(coeffs: &[Complex64], grid: GridSpec) -> ScalarField {
    ScalarField {
        grid,
        values: ifft3_values(coeffs.to_vec(), grid.n()),
    }
}

pub(crate) fn ifft3_values(mut coeffs: Vec<Complex64>, n: usize) -> Vec<f64> {
    fft3_in_place(&mut coeffs, n, true);
    let norm = 1.0 / (n * n * n) as f64;
    coeffs.iter().map(|c| c.re * norm).collect()
}

/// Signed integer wavenumber for FFT index `k`.
#[inline]
pub fn signed_mode(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `κ_b = (b + ½)·κ₀`
    pub shell_centers: Vec<f64>,
    pub energy: Vec<f64>,
    pub bin_width: f64,
}

impl Spectrum {
    /// `Σ_b E_b · Δκ`
    pub fn total_energy(&self) -> f64 {
        self.energy.iter().sum::<f64>() * self.bin_width
    }

    /// Index of the most energetic shell.
    pub fn peak_shell(&self) -> usize {
        self.energy
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (b, &e)| if e > best.1 { (b, e) } else { best })
            .0
    }
}

/// Shell index for squared integer wavenumber `k2`. Shell `b` collects
/// `bκ₀ < |κ| ≤ (b+1)κ₀`; the mean mode goes to shell 0.
pub fn shell_of(k2: u64) -> usize {
    if k2 == 0 {
        return 0;
    }
    let mut s = (k2 as f64).sqrt() as u64;
    while s * s > k2 {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= k2 {
        s += 1;
    }
    let ceil = if s * s == k2 { s } else { s + 1 };
    (ceil - 1) as usize
}

pub fn shell_count(n: usize) -> usize {
    let half = (n / 2) as u64;
    shell_of(3 * half * half) + 1
}

/// Shell-summed kinetic energy spectrum of the face velocities.
///
/// Normalized so that `Σ_b E_b Δκ = ½⟨u·u⟩` exactly (Parseval).
pub fn shell_spectrum(u: &VectorField) -> Spectrum {
    let g = u.grid;
    let n = g.n();
    let nb = shell_count(n);
    let kappa0 = g.kappa0();
    let mut energy = vec![0.0; nb];
    let norm = 0.5 / ((g.len() as f64) * (g.len() as f64)) / kappa0;
    for comp in &u.comp {
        let hat = fft3_values(comp, n);
        for i in 0..n {
            let ki = signed_mode(i, n);
            for j in 0..n {
                let kj = signed_mode(j, n);
                for k in 0..n {
                    let kk = signed_mode(k, n);
                    let k2 = (ki * ki + kj * kj + kk * kk) as u64;
                    energy[shell_of(k2)] += hat[(i * n + j) * n + k].norm_sqr() * norm;
                }
            }
        }
    }
    Spectrum {
        shell_centers: (0..nb).map(|b| (b as f64 + 0.5) * kappa0).collect(),
        energy,
        bin_width: kappa0,
    }
}

/// Eigenvalues of the 1-D periodic second difference, `(2cos(2πk/n) − 2)/dx²`.
fn second_difference_eigenvalues(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            (2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos() - 2.0) / (dx * dx)
        })
        .collect()
}

/// Solves `Lap(φ) = rhs − mean(rhs)` for the 7-point Laplacian, returning
/// the zero-mean solution.
pub fn poisson_solve(rhs: &ScalarField) -> ScalarField {
    let g = rhs.grid;
    let n = g.n();
    let eig = second_difference_eigenvalues(n, g.dx());
    let mut hat = fft3_values(&rhs.values, n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = (i * n + j) * n + k;
                let lam = eig[i] + eig[j] + eig[k];
                if idx == 0 {
                    hat[idx] = Complex64::new(0.0, 0.0);
                } else {
                    hat[idx] /= lam;
                }
            }
        }
    }
    ScalarField {
        grid: g,
        values: ifft3_values(hat, n),
    }
}
