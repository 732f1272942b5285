//! Explicit operator-split incompressible Navier–Stokes stepper on the
//! staggered grid:
//!
//! ```text
//! u* = u + dt·(A(u) + h(u))
//! Lap(p) = D(u*)/dt
//! u' = u* − dt·G(p)
//! ```
//!
//! `A` is second-order central advection in divergence form plus
//! `(μ/ρ)·Lap(u)`. The same stepper runs DNS (no closure) and LES (any
//! closure). Linearized and transposed versions of `A` live here too, since
//! the adjoint sweep differentiates exactly this map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closure::Closure;
use crate::error::{DpmError, Result};
use crate::grid::{
    central_diff, divergence, gradient, laplacian_values, shift_into, shifted, GridSpec,
    ScalarField, VectorField,
};
use crate::spectral::{fft3_values, ifft3_values, poisson_solve, signed_mode};

#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub u: VectorField,
    pub p: ScalarField,
    pub time: f64,
    /// Dynamic viscosity μ.
    pub viscosity: f64,
    pub density: f64,
}

impl FluidState {
    pub fn new(u: VectorField, viscosity: f64, density: f64) -> Self {
        let p = ScalarField::zeros(u.grid);
        Self {
            u,
            p,
            time: 0.0,
            viscosity,
            density,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.u.grid
    }

    /// Kinematic viscosity μ/ρ.
    pub fn nu(&self) -> f64 {
        self.viscosity / self.density
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    /// Bound on `max|D(u)|·dx/u_ref` accepted after a projected step.
    pub poisson_tol: f64,
    pub projection_enabled: bool,
    /// A step fails once any face velocity exceeds this magnitude.
    pub blowup_bound: f64,
}

impl SolverConfig {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DpmError::InvalidArgument(format!("dt = {dt} must be positive")));
        }
        Ok(Self {
            dt,
            poisson_tol: 1e-9,
            projection_enabled: true,
            blowup_bound: f64::INFINITY,
        })
    }

    /// Blow-up bound of 1e3 × the given reference rms velocity.
    pub fn with_blowup_reference(mut self, u_rms: f64) -> Self {
        self.blowup_bound = 1e3 * u_rms;
        self
    }

    pub fn with_projection(mut self, enabled: bool) -> Self {
        self.projection_enabled = enabled;
        self
    }
}

/// Velocity interpolated to cell centers along its own axis, squared.
fn center_products(u: &VectorField) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|m| u.center_component(m).iter().map(|c| c * c).collect())
}

/// Axis pairs `(m, l)` with `m < l`; edge products are symmetric.
const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Edge interpolants for pair `(m, l)`: `a = ½(u_m[x−e_l] + u_m[x])`,
/// `b = ½(u_l[x−e_m] + u_l[x])`, both located at the `(m,l)` edge.
fn edge_factors(u: &VectorField, m: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
    let n = u.grid.n();
    let am = shifted(&u.comp[m], n, l, -1);
    let bl = shifted(&u.comp[l], n, m, -1);
    let a = am.iter().zip(&u.comp[m]).map(|(x, y)| 0.5 * (x + y)).collect();
    let b = bl.iter().zip(&u.comp[l]).map(|(x, y)| 0.5 * (x + y)).collect();
    (a, b)
}

/// Assembles `−∂(u_m u_j)/∂x_j` from center fluxes `c[m]` and edge fluxes.
fn advective_divergence(
    grid: GridSpec,
    centers: &[Vec<f64>; 3],
    edges: &[Vec<f64>; 3],
) -> VectorField {
    let n = grid.n();
    let inv = 1.0 / grid.dx();
    let mut out = VectorField::zeros(grid);
    let mut buf = vec![0.0; grid.len()];
    for m in 0..3 {
        shift_into(&centers[m], n, m, -1, &mut buf);
        for ((o, c), lo) in out.comp[m].iter_mut().zip(&centers[m]).zip(&buf) {
            *o -= (c - lo) * inv;
        }
    }
    for (p, &(m, l)) in PAIRS.iter().enumerate() {
        // edge (m,l) feeds d/dx_l of component m and d/dx_m of component l
        shift_into(&edges[p], n, l, 1, &mut buf);
        for ((o, e), hi) in out.comp[m].iter_mut().zip(&edges[p]).zip(&buf) {
            *o -= (hi - e) * inv;
        }
        shift_into(&edges[p], n, m, 1, &mut buf);
        for ((o, e), hi) in out.comp[l].iter_mut().zip(&edges[p]).zip(&buf) {
            *o -= (hi - e) * inv;
        }
    }
    out
}

fn add_diffusion(out: &mut VectorField, u: &VectorField, nu: f64) {
    if nu == 0.0 {
        return;
    }
    let g = u.grid;
    for m in 0..3 {
        let lap = laplacian_values(&u.comp[m], g.n(), g.dx());
        for (o, l) in out.comp[m].iter_mut().zip(&lap) {
            *o += nu * l;
        }
    }
}

/// Advective plus viscous tendency `Â(u)` (pressure excluded).
pub fn rhs_advect_diffuse(u: &VectorField, nu: f64) -> VectorField {
    let centers = center_products(u);
    let edges = PAIRS.map(|(m, l)| {
        let (a, b) = edge_factors(u, m, l);
        a.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<_>>()
    });
    let mut out = advective_divergence(u.grid, &centers, &edges);
    add_diffusion(&mut out, u, nu);
    out
}

/// Directional derivative of [`rhs_advect_diffuse`] at `u` along `du`.
pub fn rhs_jvp(u: &VectorField, du: &VectorField, nu: f64) -> VectorField {
    let centers = [0, 1, 2].map(|m| {
        let c = u.center_component(m);
        let dc = du.center_component(m);
        c.iter().zip(&dc).map(|(a, b)| 2.0 * a * b).collect::<Vec<_>>()
    });
    let edges = PAIRS.map(|(m, l)| {
        let (a, b) = edge_factors(u, m, l);
        let (da, db) = edge_factors(du, m, l);
        (0..a.len())
            .map(|x| a[x] * db[x] + da[x] * b[x])
            .collect::<Vec<_>>()
    });
    let mut out = advective_divergence(u.grid, &centers, &edges);
    add_diffusion(&mut out, du, nu);
    out
}

/// Transpose of the linearization of [`rhs_advect_diffuse`] at `u`,
/// applied to `v`.
pub fn rhs_vjp(u: &VectorField, v: &VectorField, nu: f64) -> VectorField {
    let g = u.grid;
    let n = g.n();
    let inv = 1.0 / g.dx();
    let mut out = VectorField::zeros(g);

    // center fluxes: out_m = −(C_m − S⁻C_m)/dx, C_m = c_m²
    for m in 0..3 {
        let vhi = shifted(&v.comp[m], n, m, 1);
        let c = u.center_component(m);
        let gc: Vec<f64> = (0..g.len())
            .map(|x| -(v.comp[m][x] - vhi[x]) * inv * 2.0 * c[x])
            .collect();
        let glo = shifted(&gc, n, m, -1);
        for (o, (a, b)) in out.comp[m].iter_mut().zip(gc.iter().zip(&glo)) {
            *o += 0.5 * (a + b);
        }
    }

    // edge fluxes
    for &(m, l) in PAIRS.iter() {
        let (a, b) = edge_factors(u, m, l);
        let vm_lo = shifted(&v.comp[m], n, l, -1);
        let vl_lo = shifted(&v.comp[l], n, m, -1);
        let ge: Vec<f64> = (0..g.len())
            .map(|x| -(vm_lo[x] - v.comp[m][x]) * inv - (vl_lo[x] - v.comp[l][x]) * inv)
            .collect();
        // a = ½(S⁻_l u_m + u_m)
        let ga: Vec<f64> = ge.iter().zip(&b).map(|(e, bb)| e * bb).collect();
        let ga_hi = shifted(&ga, n, l, 1);
        for (o, (x, y)) in out.comp[m].iter_mut().zip(ga.iter().zip(&ga_hi)) {
            *o += 0.5 * (x + y);
        }
        // b = ½(S⁻_m u_l + u_l)
        let gb: Vec<f64> = ge.iter().zip(&a).map(|(e, aa)| e * aa).collect();
        let gb_hi = shifted(&gb, n, m, 1);
        for (o, (x, y)) in out.comp[l].iter_mut().zip(gb.iter().zip(&gb_hi)) {
            *o += 0.5 * (x + y);
        }
    }
    add_diffusion(&mut out, v, nu);
    out
}

/// Pressure projection: `p = Lap⁻¹(D(u*)/dt)`, `u = u* − dt·G(p)`.
pub fn project(u_star: &VectorField, dt: f64) -> (VectorField, ScalarField) {
    let mut rhs = divergence(u_star);
    rhs.values.iter_mut().for_each(|v| *v /= dt);
    let p = poisson_solve(&rhs);
    let gp = gradient(&p);
    let mut u = u_star.clone();
    u.axpy(-dt, &gp);
    (u, p)
}

/// The projection as a linear operator on velocity (symmetric, idempotent).
pub fn project_velocity(v: &VectorField) -> VectorField {
    project(v, 1.0).0
}

pub struct StepOutput {
    pub state: FluidState,
    pub u_star: VectorField,
}

/// One explicit step, keeping the pre-projection velocity.
pub fn step_detailed(
    state: &FluidState,
    cfg: &SolverConfig,
    closure: &dyn Closure,
) -> Result<StepOutput> {
    let mut u_star = state.u.clone();
    let tendency = rhs_advect_diffuse(&state.u, state.nu());
    u_star.axpy(cfg.dt, &tendency);
    if !closure.is_zero() {
        let forcing = closure.forcing(&state.u);
        u_star.axpy(cfg.dt, &forcing);
    }
    let (u, p) = if cfg.projection_enabled {
        project(&u_star, cfg.dt)
    } else {
        (u_star.clone(), state.p.clone())
    };
    let time = state.time + cfg.dt;
    let max_velocity = u.max_abs();
    if !(max_velocity <= cfg.blowup_bound) {
        return Err(DpmError::BlowUp {
            time,
            max_velocity,
            bound: cfg.blowup_bound,
        });
    }
    Ok(StepOutput {
        state: FluidState {
            u,
            p,
            time,
            viscosity: state.viscosity,
            density: state.density,
        },
        u_star,
    })
}

pub fn step(state: &FluidState, cfg: &SolverConfig, closure: &dyn Closure) -> Result<FluidState> {
    step_detailed(state, cfg, closure).map(|s| s.state)
}

/// Time step giving the requested CFL number, `dt = cfl·dx / max|u|`.
pub fn cfl_time_step(u: &VectorField, cfl: f64) -> f64 {
    cfl * u.grid.dx() / u.max_abs()
}

/// Two-dimensional Taylor–Green vortex `(sin x cos y, −cos x sin y, 0)·amp`.
pub fn taylor_green(g: GridSpec, amp: f64) -> VectorField {
    VectorField::from_fn(g, |m, x| match m {
        0 => amp * x[0].sin() * x[1].cos(),
        1 => -amp * x[0].cos() * x[1].sin(),
        _ => 0.0,
    })
}

/// Max-norm error against the exact decay `exp(−2νt)` after integrating the
/// Taylor–Green vortex to `t_end` on an `n³` grid with `dt = dt_factor·dx²`
/// (so time and space errors both scale as `dx²`).
pub fn taylor_green_error(n: usize, nu: f64, t_end: f64, dt_factor: f64) -> Result<f64> {
    let g = GridSpec::new(n, 2.0 * std::f64::consts::PI)?;
    let u0 = taylor_green(g, 1.0);
    let steps = (t_end / (dt_factor * g.dx() * g.dx())).ceil() as usize;
    let cfg = SolverConfig::new(t_end / steps as f64)?;
    let mut s = FluidState::new(u0.clone(), nu, 1.0);
    for _ in 0..steps {
        s = step(&s, &cfg, &crate::closure::NoClosure)?;
    }
    Ok(s.u.sub(&u0.scaled((-2.0 * nu * s.time).exp())).max_abs())
}

/// Random-phase solenoidal field with a Passot–Pouquet spectrum
/// `E(κ) ∝ κ⁴ exp(−2(κ/κ_p)²)`, projected and rescaled to `target_urms`.
///
/// `peak_wavenumber` is in units of the fundamental `2π/L`.
pub fn init_isotropic(
    grid: GridSpec,
    target_urms: f64,
    peak_wavenumber: f64,
    seed: u64,
) -> Result<VectorField> {
    if !(target_urms > 0.0 && target_urms.is_finite()) {
        return Err(DpmError::InvalidArgument(format!(
            "target u_rms = {target_urms} must be positive"
        )));
    }
    let n = grid.n();
    if !(peak_wavenumber > 0.0 && peak_wavenumber < (n / 2) as f64) {
        return Err(DpmError::InvalidArgument(format!(
            "peak wavenumber {peak_wavenumber} not resolvable on n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = VectorField::zeros(grid);
    for m in 0..3 {
        let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut hat = fft3_values(&noise, n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let kv = [signed_mode(i, n), signed_mode(j, n), signed_mode(k, n)];
                    let idx = (i * n + j) * n + k;
                    let nyquist = kv.iter().any(|&c| c.unsigned_abs() as usize * 2 == n);
                    let kmag = ((kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]) as f64).sqrt();
                    // sqrt(E(κ)/κ²) per mode: κ·exp(−(κ/κ_p)²)
                    let amp = if nyquist || kmag == 0.0 {
                        0.0
                    } else {
                        kmag * (-(kmag / peak_wavenumber).powi(2)).exp()
                    };
                    hat[idx] *= amp;
                }
            }
        }
        u.comp[m] = ifft3_values(hat, n);
    }
    let mut u = project_velocity(&u);
    let rms = u.rms();
    if rms == 0.0 {
        return Err(DpmError::InvalidArgument("degenerate initial field".into()));
    }
    u.scale(target_urms / rms);
    Ok(u)
}

/// `|∇×u|` at cell centers from central differences of center-interpolated
/// velocity.
pub fn vorticity_magnitude(u: &VectorField) -> ScalarField {
    let g = u.grid;
    let n = g.n();
    let c = [0, 1, 2].map(|m| u.center_component(m));
    let d = |m: usize, l: usize| central_diff(&c[m], n, l, g.dx());
    let wx_a = d(2, 1);
    let wx_b = d(1, 2);
    let wy_a = d(0, 2);
    let wy_b = d(2, 0);
    let wz_a = d(1, 0);
    let wz_b = d(0, 1);
    let values = (0..g.len())
        .map(|x| {
            let wx = wx_a[x] - wx_b[x];
            let wy = wy_a[x] - wy_b[x];
            let wz = wz_a[x] - wz_b[x];
            (wx * wx + wy * wy + wz * wz).sqrt()
        })
        .collect();
    ScalarField { grid: g, values }
}

/// Viscous dissipation rate of the discrete scheme,
/// `ε = ν·⟨Σ_{m,l} (δ_l u_m / dx)²⟩` with forward differences.
pub fn dissipation_rate(u: &VectorField, nu: f64) -> f64 {
    let g = u.grid;
    let inv = 1.0 / g.dx();
    let mut acc = 0.0;
    for m in 0..3 {
        for l in 0..3 {
            let hi = shifted(&u.comp[m], g.n(), l, 1);
            acc += hi
                .iter()
                .zip(&u.comp[m])
                .map(|(a, b)| ((a - b) * inv).powi(2))
                .sum::<f64>();
        }
    }
    nu * acc / g.len() as f64
}

/// Initial-condition scales used to normalize decay curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceScales {
    /// `⟨u_i u_i⟩^{1/2}`
    pub u_rms: f64,
    /// `k = ⟨u_i u_i⟩/2`
    pub tke: f64,
    pub epsilon: f64,
    /// Eddy-turnover time `k/ε`.
    pub t_eddy: f64,
    /// Pseudo-integral scale `k^{3/2}/ε`.
    pub length: f64,
    /// `ρ u_rms ℓ / μ`
    pub reynolds: f64,
}

impl TurbulenceScales {
    pub fn measure(state: &FluidState) -> Self {
        let u_rms = state.u.rms();
        let tke = 0.5 * u_rms * u_rms;
        let epsilon = dissipation_rate(&state.u, state.nu());
        let length = tke.powf(1.5) / epsilon;
        Self {
            u_rms,
            tke,
            epsilon,
            t_eddy: tke / epsilon,
            length,
            reynolds: state.density * u_rms * length / state.viscosity,
        }
    }
}
