//! Stochastic adjoint training (sample a case and a window, run forward,
//! run the adjoint backward, take one RMSprop step) and the decoupled
//! a-priori regression used as a baseline.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::{adjoint_sweep, run_window, FieldLoss, WindowLoss};
use crate::closure::{Closure, DifferentiableClosure};
use crate::error::{DpmError, Result};
use crate::filter::CoarseTarget;
use crate::grid::VectorField;
use crate::solver::{FluidState, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// LES steps per training window.
    pub window_steps: usize,
    /// DNS steps per LES step when the dataset is generated.
    pub les_to_dns_step_ratio: usize,
    /// α₀ of the schedule `α_k = α₀ / (1 + k / k_decay)`.
    pub learning_rate: f64,
    pub lr_decay_iterations: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    /// Project every LES step (and compare against `w`); off compares
    /// unprojected LES against `Ū`.
    pub divergence_free: bool,
    /// Also compare at every stored target inside the window.
    pub compare_intermediate: bool,
    pub iterations: usize,
    /// Windows averaged per update.
    pub batch: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window_steps: 5,
            les_to_dns_step_ratio: 10,
            learning_rate: 1e-3,
            lr_decay_iterations: 1000.0,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            divergence_free: true,
            compare_intermediate: false,
            iterations: 1000,
            batch: 1,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DpmError::Config(m.to_string()));
        if self.window_steps == 0 {
            return bad("window_steps must be at least 1");
        }
        if self.les_to_dns_step_ratio == 0 {
            return bad("les_to_dns_step_ratio must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be nonnegative");
        }
        if !(self.lr_decay_iterations > 0.0) {
            return bad("lr_decay_iterations must be positive");
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return bad("rmsprop_decay must lie in [0, 1)");
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop_epsilon must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, k: u64) -> f64 {
        self.learning_rate / (1.0 + k as f64 / self.lr_decay_iterations)
    }
}

/// Coarse targets for one viscosity, equally spaced in time.
#[derive(Debug, Clone)]
pub struct TrainingCase {
    pub name: String,
    pub viscosity: f64,
    pub density: f64,
    pub targets: Vec<CoarseTarget>,
}

/// All cases together with the LES step and the number of LES steps
/// between consecutive stored targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cases: Vec<TrainingCase>,
    pub dt: f64,
    pub stride: usize,
}

/// One sampled window: case `m`, starting target `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowIndex {
    pub case: usize,
    pub start: usize,
}

impl Dataset {
    fn span(&self, cfg: &TrainConfig) -> Result<usize> {
        if self.stride == 0 || !cfg.window_steps.is_multiple_of(self.stride) {
            return Err(DpmError::Config(format!(
                "window of {} steps is not a multiple of the target stride {}",
                cfg.window_steps, self.stride
            )));
        }
        Ok(cfg.window_steps / self.stride)
    }

    /// Every valid window, case-major.
    pub fn windows(&self, cfg: &TrainConfig) -> Result<Vec<WindowIndex>> {
        let span = self.span(cfg)?;
        let mut out = Vec::new();
        for (m, c) in self.cases.iter().enumerate() {
            for n in 0..c.targets.len().saturating_sub(span) {
                out.push(WindowIndex { case: m, start: n });
            }
        }
        Ok(out)
    }

    /// Initial state, solver settings and loss for one window.
    pub fn window_problem(
        &self,
        idx: WindowIndex,
        cfg: &TrainConfig,
    ) -> Result<(FluidState, SolverConfig, FieldLoss)> {
        let span = self.span(cfg)?;
        let case = self
            .cases
            .get(idx.case)
            .ok_or_else(|| DpmError::MissingData(format!("case {}", idx.case)))?;
        if idx.start + span >= case.targets.len() {
            return Err(DpmError::MissingData(format!(
                "window starting at target {} runs past the data of case {}",
                idx.start, case.name
            )));
        }
        let pick = |t: &CoarseTarget| if cfg.divergence_free { t.w.clone() } else { t.u_bar.clone() };
        let t0 = &case.targets[idx.start];
        let expected = cfg.window_steps as f64 * self.dt;
        let actual = case.targets[idx.start + span].time - t0.time;
        if (actual - expected).abs() > 1e-9 * expected.max(1e-300) {
            return Err(DpmError::InvalidArgument(format!(
                "target times misaligned: window spans {actual} but {} steps of {} give {expected}",
                cfg.window_steps, self.dt
            )));
        }
        let mut state = FluidState::new(pick(t0), case.viscosity, case.density);
        state.time = t0.time;
        let solver = SolverConfig::new(self.dt)?
            .with_projection(cfg.divergence_free)
            .with_blowup_reference(t0.u_bar.rms());
        let first = if cfg.compare_intermediate { 1 } else { span };
        let targets = (first..=span)
            .map(|s| (s * self.stride, pick(&case.targets[idx.start + s])))
            .collect();
        Ok((state, solver, FieldLoss { targets }))
    }
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub case: usize,
    pub start: usize,
    /// Mean loss over the windows that completed (NaN if none did).
    pub loss: f64,
    pub skipped: usize,
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState<C> {
    pub model: C,
    /// RMSprop second moments, same length as the parameters.
    pub accum: Vec<f64>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub history: Vec<IterationRecord>,
}

impl<C: DifferentiableClosure> TrainState<C> {
    pub fn new(model: C, seed: u64) -> Self {
        let n = model.num_params();
        Self {
            model,
            accum: vec![0.0; n],
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
        }
    }

    pub fn params(&self) -> &[f64] {
        self.model.params()
    }
}

/// `v ← ρv + (1−ρ)g²`, `θ ← θ − α g / (√v + ε)`.
pub fn rmsprop_step(
    params: &mut [f64],
    accum: &mut [f64],
    grad: &[f64],
    alpha: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if params.len() != grad.len() || accum.len() != grad.len() {
        return Err(DpmError::Shape(format!(
            "gradient of length {} for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    for ((p, v), g) in params.iter_mut().zip(accum.iter_mut()).zip(grad) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *p -= alpha * g / (v.sqrt() + eps);
    }
    Ok(())
}

/// One RMSprop update at the state's iteration count, then advances it.
pub fn rmsprop_update<C: DifferentiableClosure>(
    state: &mut TrainState<C>,
    grad: &[f64],
    cfg: &TrainConfig,
) -> Result<()> {
    let alpha = cfg.learning_rate_at(state.iteration);
    rmsprop_step(
        state.model.params_mut(),
        &mut state.accum,
        grad,
        alpha,
        cfg.rmsprop_decay,
        cfg.rmsprop_epsilon,
    )?;
    state.iteration += 1;
    Ok(())
}

/// Window loss and parameter gradient for one sampled window.
pub fn window_gradient<C: DifferentiableClosure>(
    model: &C,
    data: &Dataset,
    idx: WindowIndex,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let (s0, solver, loss) = data.window_problem(idx, cfg)?;
    let traj = run_window(&s0, &solver, cfg.window_steps, model)?;
    let j = loss.value(&traj)?;
    let res = adjoint_sweep(&traj, model, &loss)?;
    if !res.grad_params.iter().all(|g| g.is_finite()) {
        return Err(DpmError::BlowUp {
            time: traj.last().time,
            max_velocity: f64::NAN,
            bound: f64::NAN,
        });
    }
    Ok((j, res.grad_params))
}

/// One stochastic adjoint iteration: sample `batch` windows uniformly,
/// average their gradients in sample order and update once. Windows that
/// blow up are skipped and logged.
pub fn sam_iteration<C: DifferentiableClosure>(
    state: &mut TrainState<C>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<IterationRecord> {
    let span = data.span(cfg)?;
    let sizes: Vec<usize> = data
        .cases
        .iter()
        .map(|c| c.targets.len().saturating_sub(span))
        .collect();
    if sizes.iter().all(|&s| s == 0) {
        return Err(DpmError::MissingData("no training window fits the dataset".into()));
    }
    let mut grad = vec![0.0; state.model.num_params()];
    let mut loss_sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut first = WindowIndex { case: 0, start: 0 };
    for b in 0..cfg.batch {
        // cases with no window are redrawn so every case stays uniformly likely
        let case = loop {
            let m = state.rng.gen_range(0..sizes.len());
            if sizes[m] > 0 {
                break m;
            }
        };
        let start = state.rng.gen_range(0..sizes[case]);
        let idx = WindowIndex { case, start };
        if b == 0 {
            first = idx;
        }
        match window_gradient(&state.model, data, idx, cfg) {
            Ok((j, g)) => {
                loss_sum += j;
                used += 1;
                for (a, x) in grad.iter_mut().zip(&g) {
                    *a += x;
                }
            }
            Err(e @ DpmError::BlowUp { .. }) => {
                warn!(
                    "iteration {}: skipped window (case {}, start {}): {e}",
                    state.iteration, case, start
                );
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let loss = if used > 0 {
        let inv = 1.0 / used as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss_sum * inv
    } else {
        f64::NAN
    };
    let record = IterationRecord {
        iteration: state.iteration,
        case: first.case,
        start: first.start,
        loss,
        skipped,
    };
    if used > 0 {
        rmsprop_update(state, &grad, cfg)?;
    } else {
        state.iteration += 1;
    }
    debug!("iteration {}: loss {loss:.6e}", record.iteration);
    state.history.push(record);
    Ok(record)
}

/// Held-out window losses for an arbitrary closure.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEvaluation {
    pub losses: Vec<f64>,
    pub blowups: usize,
}

impl WindowEvaluation {
    /// Mean loss; infinite if any window blew up.
    pub fn mean(&self) -> f64 {
        if self.blowups > 0 {
            return f64::INFINITY;
        }
        if self.losses.is_empty() {
            return 0.0;
        }
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

pub fn evaluate_windows(
    closure: &dyn Closure,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<WindowEvaluation> {
    let mut losses = Vec::new();
    let mut blowups = 0;
    for idx in data.windows(cfg)? {
        let (s0, solver, loss) = data.window_problem(idx, cfg)?;
        match run_window(&s0, &solver, cfg.window_steps, closure) {
            Ok(traj) => losses.push(loss.value(&traj)?),
            Err(DpmError::BlowUp { .. }) => blowups += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(WindowEvaluation { losses, blowups })
}

/// A coarse velocity paired with the forcing it should produce.
#[derive(Debug, Clone)]
pub struct AprioriSample {
    pub u_bar: VectorField,
    pub target: VectorField,
}

/// `Σ_samples Σ_faces (h(Ū) − target)²`.
pub fn apriori_loss<C: Closure + ?Sized>(closure: &C, samples: &[AprioriSample]) -> f64 {
    samples
        .iter()
        .map(|s| closure.forcing(&s.u_bar).sub(&s.target).norm_sq())
        .sum()
}

/// Decoupled regression of the closure output onto precomputed forcing
/// targets. Each iteration draws `batch` snapshots (all of their cells form
/// the mini-batch). Returns the per-iteration batch loss.
pub fn apriori_train<C: DifferentiableClosure>(
    state: &mut TrainState<C>,
    samples: &[AprioriSample],
    cfg: &TrainConfig,
    iterations: usize,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(DpmError::MissingData("a-priori training needs samples".into()));
    }
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut grad = vec![0.0; state.model.num_params()];
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let s = &samples[state.rng.gen_range(0..samples.len())];
            let mut r = state.model.forcing(&s.u_bar).sub(&s.target);
            loss += r.norm_sq();
            r.scale(2.0);
            let (_, g) = state.model.vjp(&s.u_bar, &r);
            for (a, x) in grad.iter_mut().zip(&g) {
                *a += x;
            }
        }
        let inv = 1.0 / cfg.batch as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        rmsprop_update(state, &grad, cfg)?;
        state.history.push(IterationRecord {
            iteration: state.iteration - 1,
            case: 0,
            start: 0,
            loss: loss * inv,
            skipped: 0,
        });
        out.push(loss * inv);
    }
    Ok(out)
}
