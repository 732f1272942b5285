//! End-to-end stages shared by the command-line tool and the acceptance
//! suite: DNS with on-the-fly filtering, dataset assembly, training and
//! held-out evaluation.

use std::path::{Path, PathBuf};

use log::info;

use crate::analysis::{decay_experiment, CaseRole, CaseSpec, DecayReport, DecaySetup, Normalization};
use crate::closure::{Closure, DynamicSmagorinsky, NoClosure, Smagorinsky};
use crate::config::ExperimentConfig;
use crate::error::{DpmError, Result};
use crate::filter::{filter_to_coarse, sgs_forcing_target, CoarseTarget};
use crate::grid::{GridSpec, VectorField};
use crate::io::{Snapshot, SnapshotHeader, SnapshotKind};
use crate::neural::{FeatureConfig, NetDims, NetParams, NeuralClosure};
use crate::solver::{cfl_time_step, init_isotropic, step, FluidState, SolverConfig, TurbulenceScales};
use crate::train::{
    apriori_train, evaluate_windows, sam_iteration, AprioriSample, Dataset, TrainState, TrainingCase,
    WindowEvaluation,
};

/// Frozen time steps of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSteps {
    pub dt_dns: f64,
    pub dt_les: f64,
    /// DNS steps between stored snapshots.
    pub snapshot_dns_steps: usize,
}

/// `dt_dns` from the CFL target on the first case's initial field.
pub fn time_steps(cfg: &ExperimentConfig) -> Result<TimeSteps> {
    let first = &cfg.cases[0];
    let u0 = init_isotropic(cfg.fine_grid(), cfg.flow.u_rms0, cfg.flow.peak_wavenumber, first.seed)?;
    let dt_dns = cfl_time_step(&u0, cfg.flow.cfl);
    let ratio = cfg.training.les_to_dns_step_ratio;
    Ok(TimeSteps {
        dt_dns,
        dt_les: dt_dns * ratio as f64,
        snapshot_dns_steps: cfg.snapshot_les_steps() * ratio,
    })
}

/// One stored DNS snapshot as handed to a sink.
pub struct SnapshotRecord<'a> {
    pub case: &'a CaseSpec,
    pub index: usize,
    pub fine: &'a FluidState,
    pub target: &'a CoarseTarget,
    /// Initial-field normalization of the case.
    pub norm: Normalization,
    pub epsilon0: f64,
}

/// Filtered data of one DNS case.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub spec: CaseSpec,
    pub id: String,
    pub viscosity: f64,
    pub density: f64,
    pub norm: Normalization,
    pub epsilon0: f64,
    pub targets: Vec<CoarseTarget>,
    pub apriori: Vec<AprioriSample>,
}

/// Runs one DNS case, filtering each stored snapshot immediately.
pub fn run_dns_case(
    cfg: &ExperimentConfig,
    case: &CaseSpec,
    steps: &TimeSteps,
    sink: &mut dyn FnMut(&SnapshotRecord) -> Result<()>,
) -> Result<CaseData> {
    let grid = cfg.fine_grid();
    let spec = cfg.filter();
    let viscosity = cfg.flow.base_viscosity * case.viscosity_ratio;
    let u0 = init_isotropic(grid, cfg.flow.u_rms0, cfg.flow.peak_wavenumber, case.seed)?;
    let mut state = FluidState::new(u0, viscosity, cfg.flow.density);
    let initial = TurbulenceScales::measure(&state);
    let norm = Normalization::new(initial.u_rms, initial.t_eddy)?;
    let solver = SolverConfig::new(steps.dt_dns)?.with_blowup_reference(initial.u_rms);
    let id = ExperimentConfig::case_id(case);

    let decay_steps = (cfg.dns.initial_decay * initial.t_eddy / steps.dt_dns).round() as usize;
    info!(
        "{id}: nu = {viscosity:.4e}, t_eddy = {:.4}, Re = {:.1}, {decay_steps} decay steps",
        initial.t_eddy, initial.reynolds
    );
    for _ in 0..decay_steps {
        state = step(&state, &solver, &NoClosure)?;
    }
    let mut targets = Vec::with_capacity(cfg.dns.snapshots);
    let mut apriori = Vec::with_capacity(cfg.dns.snapshots);
    for index in 0..cfg.dns.snapshots {
        if index > 0 {
            for _ in 0..steps.snapshot_dns_steps {
                state = step(&state, &solver, &NoClosure)?;
            }
        }
        let target = CoarseTarget::from_coarse(filter_to_coarse(&state.u, spec)?, state.time, &id)?;
        apriori.push(AprioriSample {
            u_bar: target.u_bar.clone(),
            target: sgs_forcing_target(&state.u, spec)?,
        });
        sink(&SnapshotRecord { case, index, fine: &state, target: &target, norm, epsilon0: initial.epsilon })?;
        targets.push(target);
    }
    Ok(CaseData {
        spec: case.clone(),
        id,
        viscosity,
        density: cfg.flow.density,
        norm,
        epsilon0: initial.epsilon,
        targets,
        apriori,
    })
}

fn snapshot_header(
    cfg: &ExperimentConfig,
    case: &CaseSpec,
    kind: SnapshotKind,
    grid: GridSpec,
    time: f64,
    norm: Normalization,
    epsilon0: f64,
) -> SnapshotHeader {
    SnapshotHeader {
        kind,
        n: grid.n(),
        domain_length: grid.domain_length(),
        time,
        viscosity: cfg.flow.base_viscosity * case.viscosity_ratio,
        density: cfg.flow.density,
        case_id: ExperimentConfig::case_id(case),
        seed: case.seed,
        u_rms0: norm.u_rms0,
        t_eddy0: norm.t_eddy0,
        epsilon0,
        config_hash: cfg.data_hash(),
    }
}

fn snapshot_path(dir: &Path, case: &CaseSpec, stem: &str, index: usize) -> PathBuf {
    dir.join(ExperimentConfig::case_id(case)).join(format!("{stem}_{index:04}.snap"))
}

/// Writes the coarse targets and a-priori forcing targets of one case under
/// `dir/<case id>/`.
pub fn write_case(dir: &Path, cfg: &ExperimentConfig, case: &CaseData) -> Result<()> {
    for (i, (t, a)) in case.targets.iter().zip(&case.apriori).enumerate() {
        let g = t.u_bar.grid;
        let h = snapshot_header(cfg, &case.spec, SnapshotKind::CoarseTarget, g, t.time, case.norm, case.epsilon0);
        Snapshot::new(h.clone(), vec![t.u_bar.clone(), t.w.clone()])?.write(&snapshot_path(dir, &case.spec, "target", i))?;
        let h = SnapshotHeader { kind: SnapshotKind::Filtered, ..h };
        Snapshot::new(h, vec![a.target.clone()])?.write(&snapshot_path(dir, &case.spec, "sgs", i))?;
    }
    Ok(())
}

/// Writes one fine DNS snapshot.
pub fn write_fine(dir: &Path, cfg: &ExperimentConfig, rec: &SnapshotRecord) -> Result<()> {
    let h = snapshot_header(cfg, rec.case, SnapshotKind::Dns, rec.fine.grid(), rec.fine.time, rec.norm, rec.epsilon0);
    Snapshot::new(h, vec![rec.fine.u.clone()])?.write(&snapshot_path(dir, rec.case, "fine", rec.index))
}

/// Reads back what [`write_case`] stored, refusing data produced by a
/// different data configuration.
pub fn read_case(dir: &Path, cfg: &ExperimentConfig, case: &CaseSpec) -> Result<CaseData> {
    let mut targets = Vec::new();
    let mut apriori = Vec::new();
    let mut header = None;
    for i in 0.. {
        let p = snapshot_path(dir, case, "target", i);
        if !p.exists() {
            break;
        }
        let s = Snapshot::read(&p)?;
        if s.header.config_hash != cfg.data_hash() {
            return Err(DpmError::Config(format!(
                "{} was produced by a different data configuration; rerun `dpm dns`",
                p.display()
            )));
        }
        let sgs = Snapshot::read(&snapshot_path(dir, case, "sgs", i))?;
        if !sgs.velocity().grid.same_geometry(&s.velocity().grid) {
            return Err(DpmError::Shape(format!("{}: grids of target and forcing differ", p.display())));
        }
        let t = s.to_coarse_target()?;
        apriori.push(AprioriSample { u_bar: t.u_bar.clone(), target: sgs.velocity().clone() });
        targets.push(t);
        header = Some(s.header);
    }
    let h = header.ok_or_else(|| {
        DpmError::MissingData(format!(
            "no targets for case {} under {}; run `dpm dns` first",
            ExperimentConfig::case_id(case),
            dir.display()
        ))
    })?;
    Ok(CaseData {
        spec: case.clone(),
        id: h.case_id,
        viscosity: h.viscosity,
        density: h.density,
        norm: Normalization::new(h.u_rms0, h.t_eddy0)?,
        epsilon0: h.epsilon0,
        targets,
        apriori,
    })
}

/// Rebuilds coarse targets of one case from its stored fine snapshots with
/// the configured filter ratio.
pub fn refilter_case(dir: &Path, cfg: &ExperimentConfig, case: &CaseSpec) -> Result<CaseData> {
    let spec = cfg.filter();
    let id = ExperimentConfig::case_id(case);
    let mut targets = Vec::new();
    let mut apriori = Vec::new();
    let mut header = None;
    for i in 0.. {
        let p = snapshot_path(dir, case, "fine", i);
        if !p.exists() {
            break;
        }
        let s = Snapshot::read(&p)?;
        let u = s.velocity();
        if !u.grid.same_geometry(&cfg.fine_grid()) {
            return Err(DpmError::Shape(format!(
                "{}: grid {}³ does not match dns_n = {}",
                p.display(),
                u.grid.n(),
                cfg.grid.dns_n
            )));
        }
        targets.push(CoarseTarget::from_coarse(filter_to_coarse(u, spec)?, s.header.time, &id)?);
        apriori.push(AprioriSample {
            u_bar: targets[targets.len() - 1].u_bar.clone(),
            target: sgs_forcing_target(u, spec)?,
        });
        header = Some(s.header);
    }
    let h = header.ok_or_else(|| {
        DpmError::MissingData(format!(
            "no fine snapshots for case {id} under {}; run `dpm dns` with store_fine = true",
            dir.display()
        ))
    })?;
    Ok(CaseData {
        spec: case.clone(),
        id,
        viscosity: h.viscosity,
        density: h.density,
        norm: Normalization::new(h.u_rms0, h.t_eddy0)?,
        epsilon0: h.epsilon0,
        targets,
        apriori,
    })
}

/// Runs every configured case in order.
pub fn run_all_cases(
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&SnapshotRecord) -> Result<()>,
) -> Result<(TimeSteps, Vec<CaseData>)> {
    let steps = time_steps(cfg)?;
    let mut out = Vec::with_capacity(cfg.cases.len());
    for case in &cfg.cases {
        out.push(run_dns_case(cfg, case, &steps, sink)?);
    }
    Ok((steps, out))
}

pub fn dataset(cfg: &ExperimentConfig, steps: &TimeSteps, cases: &[&CaseData]) -> Dataset {
    Dataset {
        cases: cases
            .iter()
            .map(|c| TrainingCase {
                name: c.id.clone(),
                viscosity: c.viscosity,
                density: c.density,
                targets: c.targets.clone(),
            })
            .collect(),
        dt: steps.dt_les,
        stride: cfg.snapshot_les_steps(),
    }
}

pub fn with_role(cases: &[CaseData], role: CaseRole) -> Vec<&CaseData> {
    cases.iter().filter(|c| c.spec.role == role).collect()
}

/// Untrained closure with feature scales fitted to the training targets.
pub fn initial_model(cfg: &ExperimentConfig, train: &[&CaseData]) -> Result<NeuralClosure> {
    let set = cfg.model.derivative_set;
    let features = if cfg.model.fit_feature_scales {
        let fields: Vec<&VectorField> = train.iter().flat_map(|c| c.targets.iter().map(|t| &t.w)).collect();
        if fields.is_empty() {
            return Err(DpmError::MissingData("no training targets to fit feature scales".into()));
        }
        FeatureConfig::fitted(set, &fields)?
    } else {
        FeatureConfig::unit(set)
    };
    let mode = cfg.model.mode()?;
    let dims = NetDims::new(set.dimension(), cfg.model.hidden, mode.outputs())?;
    NeuralClosure::new(NetParams::xavier(dims, cfg.model.init_seed), features, mode, cfg.model.output_scale)
}

/// Stochastic adjoint training for `cfg.training.iterations` iterations,
/// calling `checkpoint` every `checkpoint_every` iterations.
pub fn train_adjoint(
    cfg: &ExperimentConfig,
    state: &mut TrainState<NeuralClosure>,
    data: &Dataset,
    checkpoint: &mut dyn FnMut(&TrainState<NeuralClosure>) -> Result<()>,
) -> Result<()> {
    let tc = &cfg.training;
    while (state.iteration as usize) < tc.iterations {
        let r = sam_iteration(state, data, tc)?;
        if r.iteration % 50 == 0 {
            info!("iteration {}: loss {:.6e}", r.iteration, r.loss);
        }
        if tc.checkpoint_every > 0 && (state.iteration as usize).is_multiple_of(tc.checkpoint_every) {
            checkpoint(state)?;
        }
    }
    Ok(())
}

/// Decoupled regression onto the filtered-DNS subgrid forcing.
pub fn train_apriori(
    cfg: &ExperimentConfig,
    state: &mut TrainState<NeuralClosure>,
    train: &[&CaseData],
) -> Result<()> {
    let samples: Vec<AprioriSample> = train.iter().flat_map(|c| c.apriori.iter().cloned()).collect();
    let remaining = cfg.training.iterations.saturating_sub(state.iteration as usize);
    apriori_train(state, &samples, &cfg.training, remaining)?;
    Ok(())
}

/// Baseline closures of the comparison, by label.
pub fn baselines(cfg: &ExperimentConfig) -> Result<Vec<(String, Box<dyn Closure>)>> {
    let mut out: Vec<(String, Box<dyn Closure>)> = vec![
        ("no_model".into(), Box::new(NoClosure)),
        ("smagorinsky".into(), Box::new(Smagorinsky::new(cfg.evaluation.smagorinsky_cs)?)),
    ];
    if cfg.evaluation.include_dynamic {
        out.push(("dynamic_smagorinsky".into(), Box::new(DynamicSmagorinsky)));
    }
    Ok(out)
}

/// Held-out window losses and decay curves of several closures on one case.
#[derive(Debug, Clone)]
pub struct CaseEvaluation {
    pub case: String,
    pub windows: Vec<(String, WindowEvaluation)>,
    pub decay: DecayReport,
}

impl CaseEvaluation {
    pub fn window_loss(&self, label: &str) -> Option<f64> {
        self.windows.iter().find(|(l, _)| l == label).map(|(_, e)| e.mean())
    }

    pub fn decay_distance(&self, label: &str) -> Option<f64> {
        self.decay.distances().into_iter().find(|(l, _)| l == label).map(|(_, d)| d)
    }

    pub fn render(&self) -> String {
        let mut s = format!("case {}\n{:<24} {:>16} {:>16}\n", self.case, "closure", "window loss", "decay L1");
        for (label, e) in &self.windows {
            s.push_str(&format!(
                "{:<24} {:>16.6e} {:>16.6e}\n",
                label,
                e.mean(),
                self.decay_distance(label).unwrap_or(f64::NAN)
            ));
        }
        s
    }
}

pub fn evaluate_case(
    cfg: &ExperimentConfig,
    steps: &TimeSteps,
    case: &CaseData,
    closures: &[(&str, &dyn Closure)],
) -> Result<CaseEvaluation> {
    let data = dataset(cfg, steps, &[case]);
    let mut windows = Vec::with_capacity(closures.len());
    for (label, c) in closures {
        windows.push((label.to_string(), evaluate_windows(*c, &data, &cfg.training)?));
    }
    let setup = DecaySetup {
        viscosity: case.viscosity,
        density: case.density,
        dt: steps.dt_les,
        norm: case.norm,
        divergence_free: cfg.training.divergence_free,
    };
    let decay = decay_experiment(&case.targets, closures, &setup)?;
    Ok(CaseEvaluation { case: case.id.clone(), windows, decay })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::CaseRole;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.grid.dns_n = 16;
        c.dns.snapshots = 3;
        c.training.window_steps = 2;
        c.training.iterations = 3;
        c.model.hidden = 2;
        c.cases = vec![
            CaseSpec { viscosity_ratio: 1.0, seed: 1, role: CaseRole::Train },
            CaseSpec { viscosity_ratio: 1.5, seed: 2, role: CaseRole::Test },
        ];
        c
    }

    #[test]
    fn pipeline_runs_and_is_deterministic() {
        let cfg = tiny();
        let run = || {
            let mut seen = 0;
            let (steps, cases) = run_all_cases(&cfg, &mut |_| {
                seen += 1;
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, 6);
            let train = with_role(&cases, CaseRole::Train);
            let data = dataset(&cfg, &steps, &train);
            let mut st = TrainState::new(initial_model(&cfg, &train).unwrap(), cfg.training.seed);
            train_adjoint(&cfg, &mut st, &data, &mut |_| Ok(())).unwrap();
            let test = with_role(&cases, CaseRole::Test)[0];
            let base = baselines(&cfg).unwrap();
            let mut closures: Vec<(&str, &dyn Closure)> =
                base.iter().map(|(l, c)| (l.as_str(), c.as_ref())).collect();
            closures.push(("dpm", &st.model));
            let ev = evaluate_case(&cfg, &steps, test, &closures).unwrap();
            (cases, st, ev)
        };
        let (ca, sa, ea) = run();
        let (cb, sb, eb) = run();
        assert_eq!(ca[1].targets, cb[1].targets);
        assert_eq!(sa.model, sb.model);
        assert_eq!(ea.windows, eb.windows);
        assert_eq!(ea.decay.curves, eb.decay.curves);
        let spacing = ca[0].targets[1].time - ca[0].targets[0].time;
        assert!((spacing - 4.0 * time_steps(&cfg).unwrap().dt_dns).abs() < 1e-12);
        assert!(ea.window_loss("dpm").unwrap().is_finite());
        assert!(ea.render().contains("smagorinsky"));

        let dir = std::env::temp_dir().join(format!("dpm-pipeline-{}", std::process::id()));
        write_case(&dir, &cfg, &ca[1]).unwrap();
        let back = read_case(&dir, &cfg, &cfg.cases[1]).unwrap();
        assert_eq!(back.targets, ca[1].targets);
        assert_eq!(back.norm, ca[1].norm);
        let mut other = cfg.clone();
        other.flow.base_viscosity *= 2.0;
        assert!(read_case(&dir, &other, &cfg.cases[1]).is_err());
        // training settings do not invalidate the data
        let mut retrain = cfg.clone();
        retrain.training.learning_rate = 0.5;
        assert!(read_case(&dir, &retrain, &cfg.cases[1]).is_ok());
        std::fs::remove_dir_all(&dir).ok();
    }
}
