//! Discrete adjoint of the explicit projection stepper over a short window.
//!
//! Forward, per step: `u* = u + dt(A(u) + h(u))`, `u' = P u*` with `P` the
//! (symmetric, idempotent) pressure projection, or `P = I` when projection is
//! off. Backward, per step:
//!
//! ```text
//! û*  = P û'
//! û   = û* + dt (A'(u)ᵀ û* + h'(u)ᵀ û*)  (+ loss seed at compared times)
//! ∇θ += dt h_θ(u)ᵀ û*
//! ```
//!
//! which is the exact transpose of the linearized forward map.

use crate::closure::{Closure, DifferentiableClosure};
use crate::error::{DpmError, Result};
use crate::grid::{GridSpec, VectorField};
use crate::solver::{
    project_velocity, rhs_jvp, rhs_vjp, step_detailed, FluidState, SolverConfig,
};

/// Densely stored forward window: `states[0..=W]` and the `W` pre-projection
/// velocities.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<FluidState>,
    pub u_star: Vec<VectorField>,
    pub cfg: SolverConfig,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.u_star.len()
    }

    pub fn last(&self) -> &FluidState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Runs `steps` explicit steps from `initial`.
pub fn run_window(
    initial: &FluidState,
    cfg: &SolverConfig,
    steps: usize,
    closure: &dyn Closure,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut u_star = Vec::with_capacity(steps);
    states.push(initial.clone());
    for _ in 0..steps {
        let out = step_detailed(states.last().unwrap(), cfg, closure)?;
        states.push(out.state);
        u_star.push(out.u_star);
    }
    Ok(Trajectory {
        states,
        u_star,
        cfg: cfg.clone(),
    })
}

/// A loss on the window states together with its gradient seeds.
pub trait WindowLoss {
    fn value(&self, traj: &Trajectory) -> Result<f64>;

    /// `∂J/∂u` at step `n` (0 ≤ n ≤ W), or `None` when step `n` is not compared.
    fn seed(&self, traj: &Trajectory, n: usize) -> Result<Option<VectorField>>;
}

/// Squared ℓ² mismatch `Σ_n Σ_faces (u_n − w_n)²` over the compared steps.
#[derive(Debug, Clone)]
pub struct FieldLoss {
    pub targets: Vec<(usize, VectorField)>,
}

impl FieldLoss {
    /// Compare only at the window end.
    pub fn terminal(steps: usize, target: VectorField) -> Self {
        Self {
            targets: vec![(steps, target)],
        }
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        for (n, w) in &self.targets {
            if *n > traj.steps() {
                return Err(DpmError::InvalidArgument(format!(
                    "target step {n} outside a window of {} steps",
                    traj.steps()
                )));
            }
            if !w.grid.same_geometry(&traj.states[0].grid()) {
                return Err(DpmError::Shape("target grid differs from trajectory grid".into()));
            }
        }
        Ok(())
    }
}

/// `Σ_faces (u − w)²`.
pub fn squared_mismatch(u: &VectorField, w: &VectorField) -> f64 {
    u.sub(w).norm_sq()
}

impl WindowLoss for FieldLoss {
    fn value(&self, traj: &Trajectory) -> Result<f64> {
        self.check(traj)?;
        Ok(self
            .targets
            .iter()
            .map(|(n, w)| squared_mismatch(&traj.states[*n].u, w))
            .sum())
    }

    fn seed(&self, traj: &Trajectory, n: usize) -> Result<Option<VectorField>> {
        self.check(traj)?;
        let mut acc: Option<VectorField> = None;
        for (m, w) in &self.targets {
            if *m == n {
                let g = traj.states[n].u.sub(w).scaled(2.0);
                acc = Some(match acc {
                    Some(a) => a.add(&g),
                    None => g,
                });
            }
        }
        Ok(acc)
    }
}

/// A pointwise measurement of one velocity component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub step: usize,
    pub component: usize,
    pub cell: usize,
    pub value: f64,
}

impl Probe {
    /// Snaps a physical position to the nearest face of `component`.
    pub fn at_position(
        grid: GridSpec,
        step: usize,
        component: usize,
        position: [f64; 3],
        value: f64,
    ) -> Self {
        let dx = grid.dx();
        let idx = [0, 1, 2].map(|a| {
            // faces of `component` sit at integer multiples along it, half-integers elsewhere
            let shift = if a == component { 0.0 } else { 0.5 };
            (position[a] / dx - shift).round() as isize
        });
        Self {
            step,
            component,
            cell: grid.index_wrapped(idx[0], idx[1], idx[2]),
            value,
        }
    }
}

/// Squared error summed over sparse probes only.
#[derive(Debug, Clone, Default)]
pub struct ProbeLoss {
    pub probes: Vec<Probe>,
}

impl WindowLoss for ProbeLoss {
    fn value(&self, traj: &Trajectory) -> Result<f64> {
        let mut j = 0.0;
        for p in &self.probes {
            let s = traj.states.get(p.step).ok_or_else(|| {
                DpmError::InvalidArgument(format!("probe step {} outside the window", p.step))
            })?;
            let d = s.u.comp[p.component][p.cell] - p.value;
            j += d * d;
        }
        Ok(j)
    }

    fn seed(&self, traj: &Trajectory, n: usize) -> Result<Option<VectorField>> {
        let mut seed: Option<VectorField> = None;
        for p in self.probes.iter().filter(|p| p.step == n) {
            let s = &traj.states[n];
            let f = seed.get_or_insert_with(|| VectorField::zeros(s.grid()));
            f.comp[p.component][p.cell] += 2.0 * (s.u.comp[p.component][p.cell] - p.value);
        }
        Ok(seed)
    }
}

/// Adjoint outputs: parameter gradient and the gradient with respect to the
/// initial velocity.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    pub grad_params: Vec<f64>,
    pub grad_initial: VectorField,
}

/// Backward sweep seeded by `loss`.
pub fn adjoint_sweep<C, L>(traj: &Trajectory, closure: &C, loss: &L) -> Result<AdjointResult>
where
    C: DifferentiableClosure + ?Sized,
    L: WindowLoss + ?Sized,
{
    let w = traj.steps();
    let g = traj.states[0].grid();
    let terminal = loss.seed(traj, w)?.unwrap_or_else(|| VectorField::zeros(g));
    let mut seeds: Vec<Option<VectorField>> =
        (0..w).map(|n| loss.seed(traj, n)).collect::<Result<_>>()?;
    adjoint_sweep_from(traj, closure, terminal, |n| seeds[n].take())
}

/// Backward sweep with an explicit terminal adjoint and per-step seeds.
pub fn adjoint_sweep_from<C, F>(
    traj: &Trajectory,
    closure: &C,
    terminal: VectorField,
    mut seed_at: F,
) -> Result<AdjointResult>
where
    C: DifferentiableClosure + ?Sized,
    F: FnMut(usize) -> Option<VectorField>,
{
    if traj.states.len() != traj.u_star.len() + 1 {
        return Err(DpmError::MissingData("trajectory is missing states".into()));
    }
    let cfg = &traj.cfg;
    let dt = cfg.dt;
    let mut grad = vec![0.0; closure.num_params()];
    let mut adj = terminal;
    for n in (0..traj.steps()).rev() {
        let state = &traj.states[n];
        let a_star = if cfg.projection_enabled {
            project_velocity(&adj)
        } else {
            adj
        };
        let mut next = a_star.clone();
        next.axpy(dt, &rhs_vjp(&state.u, &a_star, state.nu()));
        if !closure.is_zero() {
            let (gu, gp) = closure.vjp(&state.u, &a_star);
            next.axpy(dt, &gu);
            for (a, b) in grad.iter_mut().zip(&gp) {
                *a += dt * b;
            }
        }
        if let Some(s) = seed_at(n) {
            next.axpy(1.0, &s);
        }
        if !next.is_finite() {
            return Err(DpmError::BlowUp {
                time: state.time,
                max_velocity: f64::INFINITY,
                bound: f64::INFINITY,
            });
        }
        adj = next;
    }
    Ok(AdjointResult {
        grad_params: grad,
        grad_initial: adj,
    })
}

/// Linearized forward map in the initial velocity: `δu_W` for `δu_0`.
pub fn linearized_forward<C: DifferentiableClosure + ?Sized>(
    traj: &Trajectory,
    closure: &C,
    du0: &VectorField,
) -> VectorField {
    let dt = traj.cfg.dt;
    let mut du = du0.clone();
    for n in 0..traj.steps() {
        let state = &traj.states[n];
        let mut star = du.clone();
        star.axpy(dt, &rhs_jvp(&state.u, &du, state.nu()));
        star.axpy(dt, &closure.jvp_state(&state.u, &du));
        du = if traj.cfg.projection_enabled {
            project_velocity(&star)
        } else {
            star
        };
    }
    du
}

/// Loss after re-running the window with parameters `params`.
pub fn loss_at_params<C, L>(
    initial: &FluidState,
    cfg: &SolverConfig,
    steps: usize,
    closure: &C,
    params: &[f64],
    loss: &L,
) -> Result<f64>
where
    C: DifferentiableClosure + Clone,
    L: WindowLoss + ?Sized,
{
    let mut c = closure.clone();
    if params.len() != c.num_params() {
        return Err(DpmError::Shape("parameter vector length mismatch".into()));
    }
    c.params_mut().copy_from_slice(params);
    loss.value(&run_window(initial, cfg, steps, &c)?)
}

/// One finite-difference step of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckRow {
    pub step: f64,
    pub finite_difference: f64,
    pub adjoint: f64,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub best_rel_error: f64,
    pub best_abs_error: f64,
    /// `|⟨Lδu, v⟩ − ⟨δu, Lᵀv⟩| / |⟨Lδu, v⟩|`
    pub transpose_rel_error: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "loss = {:.6e}\ntranspose relative error = {:.3e}\n{:>10} {:>16} {:>16} {:>11}\n",
            self.loss, self.transpose_rel_error, "step", "finite diff", "adjoint", "rel error"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>10.1e} {:>16.9e} {:>16.9e} {:>11.3e}\n",
                r.step, r.finite_difference, r.adjoint, r.rel_error
            ));
        }
        s.push_str(&format!("best relative error = {:.3e}\n", self.best_rel_error));
        s
    }
}

/// Directional check of `adjoint_sweep` against central differences of the
/// window loss over `steps_fd`, plus the state transpose test.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check<C, L>(
    initial: &FluidState,
    cfg: &SolverConfig,
    steps: usize,
    closure: &C,
    loss: &L,
    direction: &[f64],
    transpose_probe: (&VectorField, &VectorField),
    steps_fd: &[f64],
) -> Result<GradCheckReport>
where
    C: DifferentiableClosure + Clone,
    L: WindowLoss + ?Sized,
{
    if direction.len() != closure.num_params() {
        return Err(DpmError::Shape("direction length differs from parameter count".into()));
    }
    let traj = run_window(initial, cfg, steps, closure)?;
    let j0 = loss.value(&traj)?;
    let res = adjoint_sweep(&traj, closure, loss)?;
    let adjoint: f64 = res.grad_params.iter().zip(direction).map(|(a, b)| a * b).sum();
    let base = closure.params().to_vec();
    let mut rows = Vec::new();
    for &h in steps_fd {
        let fd = central_difference(h, |e| {
            let p: Vec<f64> = base.iter().zip(direction).map(|(p, d)| p + e * d).collect();
            loss_at_params(initial, cfg, steps, closure, &p, loss)
        })?;
        let abs_error = (fd - adjoint).abs();
        rows.push(GradCheckRow {
            step: h,
            finite_difference: fd,
            adjoint,
            abs_error,
            rel_error: if adjoint == 0.0 { abs_error } else { abs_error / adjoint.abs() },
        });
    }
    let best_rel_error = rows.iter().map(|r| r.rel_error).fold(f64::INFINITY, f64::min);
    let best_abs_error = rows.iter().map(|r| r.abs_error).fold(f64::INFINITY, f64::min);

    let (du0, v) = transpose_probe;
    let lhs = linearized_forward(&traj, closure, du0).dot(v);
    let back = adjoint_sweep_from(&traj, closure, v.clone(), |_| None)?;
    let rhs = du0.dot(&back.grad_initial);
    let transpose_rel_error = if lhs == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / lhs.abs()
    };
    Ok(GradCheckReport {
        rows,
        best_rel_error,
        best_abs_error,
        transpose_rel_error,
        loss: j0,
    })
}

/// Standard 3D check: isotropic field on an `n³` grid, a `tensor_divergence`
/// network with `hidden` units and full-Hessian features, a random terminal
/// target, and random directions, all drawn from `seed`.
pub fn les_gradcheck(n: usize, steps: usize, hidden: usize, seed: u64, projection: bool) -> Result<GradCheckReport> {
    use crate::neural::{DerivativeSet, FeatureConfig, NetDims, NetParams, NeuralClosure, OutputMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let g = GridSpec::new(n, 2.0 * std::f64::consts::PI)?;
    let u = crate::solver::init_isotropic(g, 1.0, 2.0, seed)?;
    let s0 = FluidState::new(u, 0.02, 1.0);
    let cfg = SolverConfig::new(0.2 * g.dx())?.with_projection(projection);
    let set = DerivativeSet::FullHessian;
    let dims = NetDims::new(set.dimension(), hidden, OutputMode::TensorDivergence.outputs())?;
    let c = NeuralClosure::new(
        NetParams::xavier(dims, seed),
        FeatureConfig::unit(set),
        OutputMode::TensorDivergence,
        0.05,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut field = |scale: f64| VectorField::from_fn(g, |_, _| scale * rng.gen_range(-1.0..1.0));
    let loss = FieldLoss::terminal(steps, field(0.5));
    let du0 = field(1.0);
    let v = field(1.0);
    let dir: Vec<f64> = (0..c.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    gradient_check(&s0, &cfg, steps, &c, &loss, &dir, (&du0, &v), &FD_STEPS)
}

/// Fourth-order central difference `(−f(2h) + 8f(h) − 8f(−h) + f(−2h)) / 12h`.
pub fn central_difference<F>(h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok((-f(2.0 * h)? + 8.0 * f(h)? - 8.0 * f(-h)? + f(-2.0 * h)?) / (12.0 * h))
}

/// Decade sweep `1e-4 … 1e-8` used by the checks.
pub const FD_STEPS: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
