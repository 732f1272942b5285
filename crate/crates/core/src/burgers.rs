//! Periodic viscous Burgers equation with a per-point neural source,
//!
//! ```text
//! u_t = ν u_xx − (u²/2)_x + h_θ(u, u_x, u_xx),
//! ```
//!
//! together with its discrete adjoint (exact transpose of the stepper) and
//! an independently discretized continuous adjoint, used to check the adjoint
//! calculus away from the 3D machinery.
//!
//! The loss is `J = Σ_k dx Σ_i (u_i(t_k) − V_i(t_k))²` over the compared
//! times, so both adjoints approximate the same continuous functional.

use crate::error::{DpmError, Result};
use crate::neural::{NetDims, NetParams, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct Line1DState {
    pub u: Vec<f64>,
    pub time: f64,
    pub nu: f64,
    pub length: f64,
}

impl Line1DState {
    pub fn new(u: Vec<f64>, nu: f64, length: f64) -> Result<Self> {
        if u.len() < 3 {
            return Err(DpmError::InvalidGrid("Burgers line needs at least 3 points".into()));
        }
        if !(nu >= 0.0 && length > 0.0) {
            return Err(DpmError::InvalidArgument("need ν ≥ 0 and a positive length".into()));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(DpmError::InvalidArgument("initial field is not finite".into()));
        }
        Ok(Self { u, time: 0.0, nu, length })
    }

    pub fn from_fn(n: usize, nu: f64, length: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dx = length / n as f64;
        Self::new((0..n).map(|i| f(i as f64 * dx)).collect(), nu, length)
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n() as f64
    }

    /// `Σ u dx`
    pub fn mass(&self) -> f64 {
        self.u.iter().sum::<f64>() * self.dx()
    }

    /// `0.5 · min(dx²/(2ν), dx/max|u|)`
    pub fn stable_dt(&self) -> f64 {
        let dx = self.dx();
        let umax = self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = if self.nu > 0.0 { dx * dx / (2.0 * self.nu) } else { f64::INFINITY };
        let adv = if umax > 0.0 { dx / umax } else { f64::INFINITY };
        0.5 * diff.min(adv)
    }
}

/// Central first difference.
fn d1(a: &[f64], dx: f64) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|i| (a[(i + 1) % n] - a[(i + n - 1) % n]) / (2.0 * dx))
        .collect()
}

/// Central second difference.
fn d2(a: &[f64], dx: f64) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|i| (a[(i + 1) % n] - 2.0 * a[i] + a[(i + n - 1) % n]) / (dx * dx))
        .collect()
}

/// Pointwise gated network `h_θ(u, u_x, u_xx)` (`D = 3`, `K = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersModel {
    pub params: NetParams,
    /// Switches the source off entirely (pure Burgers).
    pub enabled: bool,
    /// Constant multiplying the network output.
    pub scale: f64,
}

impl BurgersModel {
    pub fn new(params: NetParams) -> Result<Self> {
        let d = params.dims();
        if d.inputs != 3 || d.outputs != 1 {
            return Err(DpmError::Shape(format!(
                "Burgers source needs D = 3, K = 1, got D = {}, K = {}",
                d.inputs, d.outputs
            )));
        }
        Ok(Self { params, enabled: true, scale: 1.0 })
    }

    pub fn xavier(hidden: usize, seed: u64) -> Result<Self> {
        Self::new(NetParams::xavier(NetDims::new(3, hidden, 1)?, seed))
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn off(hidden: usize) -> Result<Self> {
        let mut m = Self::new(NetParams::zeros(NetDims::new(3, hidden, 1)?))?;
        m.enabled = false;
        Ok(m)
    }

    fn features(u: &[f64], dx: f64) -> [Vec<f64>; 3] {
        [u.to_vec(), d1(u, dx), d2(u, dx)]
    }

    fn source(&self, u: &[f64], dx: f64) -> Vec<f64> {
        if !self.enabled {
            return vec![0.0; u.len()];
        }
        let f = Self::features(u, dx);
        let mut tape = Tape::new(self.params.dims());
        (0..u.len())
            .map(|i| {
                self.params.forward_tape(&[f[0][i], f[1][i], f[2][i]], &mut tape);
                self.scale * tape.y[0]
            })
            .collect()
    }

    /// Per point: `∂h/∂(u, u_x, u_xx)` and, if `weights` is given,
    /// `Σ_i weights_i ∇_θ h_i` accumulated into `gp`.
    fn partials(&self, u: &[f64], dx: f64, weights: Option<(&[f64], &mut [f64])>) -> [Vec<f64>; 3] {
        let n = u.len();
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        if !self.enabled {
            return out;
        }
        let f = Self::features(u, dx);
        let mut tape = Tape::new(self.params.dims());
        let mut gz = [0.0; 3];
        let mut weights = weights;
        for i in 0..n {
            let z = [f[0][i], f[1][i], f[2][i]];
            self.params.forward_tape(&z, &mut tape);
            self.params.backward_input(&tape, &[1.0], &mut gz);
            for c in 0..3 {
                out[c][i] = self.scale * gz[c];
            }
            if let Some((w, gp)) = weights.as_mut() {
                self.params.backward(&z, &tape, &[self.scale * w[i]], gp, &mut gz);
            }
        }
        out
    }
}

/// One explicit Euler step with central differences and divergence-form
/// advection.
pub fn burgers_step(state: &Line1DState, model: &BurgersModel, dt: f64) -> Result<Line1DState> {
    let dx = state.dx();
    let u = &state.u;
    let lap = d2(u, dx);
    let half_sq: Vec<f64> = u.iter().map(|v| 0.5 * v * v).collect();
    let adv = d1(&half_sq, dx);
    let h = model.source(u, dx);
    let next: Vec<f64> = (0..u.len())
        .map(|i| u[i] + dt * (state.nu * lap[i] - adv[i] + h[i]))
        .collect();
    let time = state.time + dt;
    let max = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !max.is_finite() {
        return Err(DpmError::BlowUp { time, max_velocity: max, bound: f64::MAX });
    }
    Ok(Line1DState { u: next, time, nu: state.nu, length: state.length })
}

#[derive(Debug, Clone)]
pub struct BurgersTrajectory {
    pub states: Vec<Line1DState>,
    pub dt: f64,
}

pub fn burgers_run(
    initial: &Line1DState,
    model: &BurgersModel,
    dt: f64,
    steps: usize,
) -> Result<BurgersTrajectory> {
    let mut states = vec![initial.clone()];
    for _ in 0..steps {
        let s = burgers_step(states.last().unwrap(), model, dt)?;
        states.push(s);
    }
    Ok(BurgersTrajectory { states, dt })
}

/// Reference values at selected steps.
#[derive(Debug, Clone)]
pub struct BurgersTargets {
    pub targets: Vec<(usize, Vec<f64>)>,
}

impl BurgersTargets {
    pub fn terminal(steps: usize, v: Vec<f64>) -> Self {
        Self { targets: vec![(steps, v)] }
    }

    fn check(&self, traj: &BurgersTrajectory) -> Result<()> {
        let n = traj.states[0].n();
        for (k, v) in &self.targets {
            if *k >= traj.states.len() || v.len() != n {
                return Err(DpmError::Shape(format!("target at step {k} does not fit the trajectory")));
            }
        }
        Ok(())
    }

    pub fn loss(&self, traj: &BurgersTrajectory) -> Result<f64> {
        self.check(traj)?;
        let dx = traj.states[0].dx();
        Ok(self
            .targets
            .iter()
            .map(|(k, v)| {
                dx * traj.states[*k].u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum())
    }

    /// `∂J/∂u_k` (zero when step `k` is not compared).
    fn seed(&self, traj: &BurgersTrajectory, k: usize) -> Vec<f64> {
        let dx = traj.states[0].dx();
        let mut s = vec![0.0; traj.states[0].n()];
        for (m, v) in &self.targets {
            if *m == k {
                for (i, (a, b)) in traj.states[k].u.iter().zip(v).enumerate() {
                    s[i] += 2.0 * dx * (a - b);
                }
            }
        }
        s
    }
}

/// Exact transpose of the stepper composition applied to the loss seeds.
/// Returns `(∇_θ J, ∂J/∂u_0)`.
pub fn burgers_discrete_adjoint(
    traj: &BurgersTrajectory,
    model: &BurgersModel,
    targets: &BurgersTargets,
) -> Result<(Vec<f64>, Vec<f64>)> {
    targets.check(traj)?;
    let steps = traj.states.len() - 1;
    let dt = traj.dt;
    let mut grad = vec![0.0; model.params.len()];
    let mut adj = targets.seed(traj, steps);
    for k in (0..steps).rev() {
        let s = &traj.states[k];
        let dx = s.dx();
        let mut gp = vec![0.0; grad.len()];
        let hz = model.partials(&s.u, dx, Some((&adj, &mut gp)));
        // û ← û + dt (ν D2 û + u ⊙ D1 û + h_u û − D1(h_v û) + D2(h_w û))
        let lap = d2(&adj, dx);
        let grad_adj = d1(&adj, dx);
        let gv: Vec<f64> = hz[1].iter().zip(&adj).map(|(a, b)| a * b).collect();
        let gw: Vec<f64> = hz[2].iter().zip(&adj).map(|(a, b)| a * b).collect();
        let dgv = d1(&gv, dx);
        let dgw = d2(&gw, dx);
        let seed = targets.seed(traj, k);
        let next: Vec<f64> = (0..adj.len())
            .map(|i| {
                adj[i]
                    + dt * (s.nu * lap[i] + s.u[i] * grad_adj[i] + hz[0][i] * adj[i] - dgv[i] + dgw[i])
                    + seed[i]
            })
            .collect();
        for (a, b) in grad.iter_mut().zip(&gp) {
            *a += dt * b;
        }
        adj = next;
    }
    Ok((grad, adj))
}

/// Backward-in-time discretization of the continuous adjoint PDE
///
/// ```text
/// −û_t = û ∂F/∂u − ∂x(û ∂F/∂u_x) + ∂xx(û ∂F/∂u_xx),   F = ν u_xx − u u_x + h
/// ```
///
/// with terminal value `2(u − V)`, jumps `+2(u − V)` at interior compared
/// times and `∇_θ J = ∫∫ û ∇_θ h dx dt` by the trapezoid rule. Coefficients
/// of each backward step are taken at the later time level and advection is
/// in non-conservative form, so this agrees with the discrete adjoint only to
/// `O(dt, dx²)`.
pub fn burgers_continuous_adjoint(
    traj: &BurgersTrajectory,
    model: &BurgersModel,
    targets: &BurgersTargets,
) -> Result<Vec<f64>> {
    targets.check(traj)?;
    let steps = traj.states.len() - 1;
    let dt = traj.dt;
    let dx = traj.states[0].dx();
    let jump = |k: usize| targets.seed(traj, k).iter().map(|v| v / dx).collect::<Vec<f64>>();
    let integrand = |k: usize, adj: &[f64]| -> Vec<f64> {
        let mut gp = vec![0.0; model.params.len()];
        let w: Vec<f64> = adj.iter().map(|a| a * dx).collect();
        model.partials(&traj.states[k].u, dx, Some((&w, &mut gp)));
        gp
    };
    let mut adj = jump(steps);
    let mut grad = vec![0.0; model.params.len()];
    let mut g_hi = integrand(steps, &adj);
    for k in (0..steps).rev() {
        let s = &traj.states[k + 1];
        let u = &s.u;
        let hz = model.partials(u, dx, None);
        let ux = d1(u, dx);
        let a: Vec<f64> = (0..u.len()).map(|i| -ux[i] + hz[0][i]).collect();
        let bu: Vec<f64> = (0..u.len()).map(|i| adj[i] * (-u[i] + hz[1][i])).collect();
        let cu: Vec<f64> = (0..u.len()).map(|i| adj[i] * (s.nu + hz[2][i])).collect();
        let db = d1(&bu, dx);
        let dc = d2(&cu, dx);
        let j = jump(k);
        adj = (0..u.len())
            .map(|i| adj[i] + dt * (adj[i] * a[i] - db[i] + dc[i]))
            .collect();
        // the integrand just after the jump-free part, then the jump
        let g_lo = integrand(k, &adj);
        for ((t, hi), lo) in grad.iter_mut().zip(&g_hi).zip(&g_lo) {
            *t += 0.5 * dt * (hi + lo);
        }
        for (v, d) in adj.iter_mut().zip(&j) {
            *v += d;
        }
        g_hi = if j.iter().any(|&v| v != 0.0) { integrand(k, &adj) } else { g_lo };
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct BurgersGradCheck {
    pub rows: Vec<crate::adjoint::GradCheckRow>,
    pub best_rel_error: f64,
    /// `|⟨g_cont − g_disc, δθ⟩| / |⟨g_disc, δθ⟩|`
    pub continuous_rel_gap: f64,
}

impl BurgersGradCheck {
    pub fn render(&self) -> String {
        let mut s = format!("{:>10} {:>18} {:>18} {:>11}\n", "step", "finite diff", "adjoint", "rel error");
        for r in &self.rows {
            s.push_str(&format!(
                "{:>10.1e} {:>18.11e} {:>18.11e} {:>11.3e}\n",
                r.step, r.finite_difference, r.adjoint, r.rel_error
            ));
        }
        s.push_str(&format!(
            "best relative error = {:.3e}\ncontinuous vs discrete adjoint relative gap = {:.3e}\n",
            self.best_rel_error, self.continuous_rel_gap
        ));
        s
    }
}

/// Standard test problem: `u₀ = sin x + ½cos 2x` on `[0, 2π)`, target
/// `V = 0.7 sin x`, `ν = 0.1`, stable `dt`.
pub fn standard_problem(n: usize, steps: usize) -> Result<(Line1DState, f64, BurgersTargets)> {
    let s = Line1DState::from_fn(n, 0.1, 2.0 * std::f64::consts::PI, |x| x.sin() + 0.5 * (2.0 * x).cos())?;
    let dt = 0.5 * s.stable_dt();
    let dx = s.dx();
    let v = (0..n).map(|i| 0.7 * (i as f64 * dx).sin()).collect();
    Ok((s, dt, BurgersTargets::terminal(steps, v)))
}

/// Dot-product check of the discrete adjoint against central differences
/// along `direction`, plus the continuous-adjoint gap.
pub fn burgers_gradcheck(
    initial: &Line1DState,
    model: &BurgersModel,
    dt: f64,
    steps: usize,
    targets: &BurgersTargets,
    direction: &[f64],
    fd_steps: &[f64],
) -> Result<BurgersGradCheck> {
    if direction.len() != model.params.len() {
        return Err(DpmError::Shape("direction length differs from parameter count".into()));
    }
    let traj = burgers_run(initial, model, dt, steps)?;
    let (grad, _) = burgers_discrete_adjoint(&traj, model, targets)?;
    let cont = burgers_continuous_adjoint(&traj, model, targets)?;
    let dot = |g: &[f64]| g.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>();
    let adjoint = dot(&grad);
    let loss_at = |h: f64| -> Result<f64> {
        let mut m = model.clone();
        for (p, d) in m.params.as_mut_slice().iter_mut().zip(direction) {
            *p += h * d;
        }
        targets.loss(&burgers_run(initial, &m, dt, steps)?)
    };
    let mut rows = Vec::new();
    for &h in fd_steps {
        let fd = crate::adjoint::central_difference(h, &loss_at)?;
        let abs_error = (fd - adjoint).abs();
        rows.push(crate::adjoint::GradCheckRow {
            step: h,
            finite_difference: fd,
            adjoint,
            abs_error,
            rel_error: if adjoint == 0.0 { abs_error } else { abs_error / adjoint.abs() },
        });
    }
    let best_rel_error = rows.iter().map(|r| r.rel_error).fold(f64::INFINITY, f64::min);
    let continuous_rel_gap = (dot(&cont) - adjoint).abs() / adjoint.abs().max(f64::MIN_POSITIVE);
    Ok(BurgersGradCheck { rows, best_rel_error, continuous_rel_gap })
}
