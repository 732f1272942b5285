use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use dpm_core::adjoint::{les_gradcheck, FD_STEPS};
use dpm_core::analysis::{table1_report, write_decay_csv, write_spectrum_csv, CaseRole, DecayCurve};
use dpm_core::burgers::{burgers_gradcheck, standard_problem, BurgersModel};
use dpm_core::closure::Closure;
use dpm_core::config::ExperimentConfig;
use dpm_core::io::{read_checkpoint, read_model, write_checkpoint, write_model, Snapshot};
use dpm_core::neural::NeuralClosure;
use dpm_core::pipeline::{
    baselines, dataset, evaluate_case, initial_model, read_case, refilter_case, run_all_cases, time_steps,
    train_adjoint, train_apriori, write_case, write_fine, CaseData, CaseEvaluation, TimeSteps,
};
use dpm_core::train::TrainState;
use dpm_core::{DpmError, Result};

use crate::TrainMode;

/// Loaded configuration plus the directory its relative paths resolve from.
struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Run {
    fn load(path: &Path) -> Result<Self> {
        let cfg = ExperimentConfig::from_path(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let out = if cfg.output.dir.is_absolute() {
            cfg.output.dir.clone()
        } else {
            base.join(&cfg.output.dir)
        };
        Ok(Self { cfg, out })
    }

    fn data(&self) -> PathBuf {
        self.out.join("data")
    }

    fn models(&self) -> PathBuf {
        self.out.join("models")
    }

    fn read_cases(&self, role: Option<CaseRole>) -> Result<Vec<CaseData>> {
        self.cfg
            .cases
            .iter()
            .filter(|c| role.is_none_or(|r| c.role == r))
            .map(|c| read_case(&self.data(), &self.cfg, c))
            .collect()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn dns(config: &Path) -> Result<()> {
    let run = Run::load(config)?;
    let cfg = &run.cfg;
    let data = run.data();
    let store_fine = cfg.dns.store_fine;
    let mut fine_written = 0usize;
    let (steps, cases) = run_all_cases(cfg, &mut |rec| {
        if store_fine {
            write_fine(&data, cfg, rec)?;
            fine_written += 1;
        }
        Ok(())
    })?;
    for c in &cases {
        write_case(&data, cfg, c)?;
    }
    info!(
        "dt_dns = {:.4e}, dt_les = {:.4e}, {} snapshots per case, {} fine snapshots",
        steps.dt_dns, steps.dt_les, cfg.dns.snapshots, fine_written
    );
    println!("wrote {} cases to {}", cases.len(), data.display());
    Ok(())
}

pub fn filter(config: &Path) -> Result<()> {
    let run = Run::load(config)?;
    for c in &run.cfg.cases {
        let case = refilter_case(&run.data(), &run.cfg, c)?;
        write_case(&run.data(), &run.cfg, &case)?;
        println!("{}: {} coarse targets at ratio {}", case.id, case.targets.len(), run.cfg.grid.filter_ratio);
    }
    Ok(())
}

/// File stem of a trained model.
fn model_label(mode: TrainMode, divergence_free: bool) -> String {
    match (mode, divergence_free) {
        (TrainMode::Adjoint, true) => "dpm".into(),
        (TrainMode::Adjoint, false) => "dpm_nodivfree".into(),
        (TrainMode::Apriori, _) => "apriori".into(),
    }
}

pub fn train(config: &Path, mode: TrainMode, divfree: Option<bool>, resume: Option<&Path>) -> Result<()> {
    let mut run = Run::load(config)?;
    if let Some(d) = divfree {
        run.cfg.training.divergence_free = d;
    }
    let cfg = run.cfg.clone();
    let hash = cfg.hash();
    let label = model_label(mode, cfg.training.divergence_free);
    let cases = run.read_cases(Some(CaseRole::Train))?;
    let train: Vec<&CaseData> = cases.iter().collect();
    let mut state = match resume {
        Some(p) => {
            let (s, h) = read_checkpoint(p)?;
            if h != hash {
                warn!("{} was written under a different configuration", p.display());
            }
            info!("resuming {label} at iteration {}", s.iteration);
            s
        }
        None => TrainState::new(initial_model(&cfg, &train)?, cfg.training.seed),
    };
    let ckpt_dir = run.out.join("checkpoints");
    match mode {
        TrainMode::Adjoint => {
            let steps = time_steps(&cfg)?;
            let data = dataset(&cfg, &steps, &train);
            train_adjoint(&cfg, &mut state, &data, &mut |s| {
                fs::create_dir_all(&ckpt_dir)?;
                write_checkpoint(&ckpt_dir.join(format!("{label}_{:06}.ckpt", s.iteration)), s, hash)
            })?;
        }
        TrainMode::Apriori => train_apriori(&cfg, &mut state, &train)?,
    }
    fs::create_dir_all(&ckpt_dir)?;
    write_checkpoint(&ckpt_dir.join(format!("{label}_final.ckpt")), &state, hash)?;
    let model_path = run.models().join(format!("{label}.model"));
    fs::create_dir_all(run.models())?;
    write_model(&model_path, &state.model, hash)?;

    let mut w = create(&run.models().join(format!("{label}_history.csv")))?;
    writeln!(w, "iteration,case,start,loss,skipped")?;
    for r in &state.history {
        writeln!(w, "{},{},{},{:e},{}", r.iteration, r.case, r.start, r.loss, r.skipped)?;
    }
    w.flush()?;
    let tail: Vec<f64> = state.history.iter().rev().take(50).map(|r| r.loss).collect();
    let mean = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    println!(
        "trained {label} for {} iterations; mean loss of last {} = {mean:.6e}; model {}",
        state.iteration,
        tail.len(),
        model_path.display()
    );
    Ok(())
}

/// Every `.model` file under the models directory, sorted by name.
fn trained_models(dir: &Path) -> Result<Vec<(String, NeuralClosure)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "model"))
        .collect();
    paths.sort();
    for p in paths {
        let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.push((label, read_model(&p)?.0));
    }
    Ok(out)
}

fn is_unprojected(label: &str) -> bool {
    label.ends_with("_nodivfree")
}

/// Evaluates the projected closures together and each unprojected model on
/// its own, merging the results into one report per case.
fn evaluate(
    cfg: &ExperimentConfig,
    steps: &TimeSteps,
    case: &CaseData,
    closures: &[(&str, &dyn Closure)],
) -> Result<CaseEvaluation> {
    let (off, on): (Vec<_>, Vec<_>) = closures.iter().partition(|(l, _)| is_unprojected(l));
    let on: Vec<(&str, &dyn Closure)> = on.into_iter().copied().collect();
    let mut ev = evaluate_case(cfg, steps, case, &on)?;
    if !off.is_empty() {
        let mut c = cfg.clone();
        c.training.divergence_free = false;
        let off: Vec<(&str, &dyn Closure)> = off.into_iter().copied().collect();
        let e = evaluate_case(&c, steps, case, &off)?;
        ev.windows.extend(e.windows);
        ev.decay.curves.extend(e.decay.curves);
        ev.decay.spectra.extend(e.decay.spectra.into_iter().filter(|s| s.label != "filtered_dns"));
    }
    Ok(ev)
}

fn write_evaluation(dir: &Path, ev: &CaseEvaluation, prefix: &str) -> Result<()> {
    let mut curves: Vec<&DecayCurve> = vec![&ev.decay.reference];
    curves.extend(ev.decay.curves.iter());
    write_decay_csv(create(&dir.join(format!("{prefix}decay_{}.csv", ev.case)))?, &curves)?;
    write_spectrum_csv(create(&dir.join(format!("{prefix}spectrum_{}.csv", ev.case)))?, &ev.decay.spectra)?;
    Ok(())
}

fn check_geometry(cases: &[CaseData]) -> Result<()> {
    let g = cases[0].targets[0].u_bar.grid;
    for c in cases {
        if c.targets.iter().any(|t| !t.u_bar.grid.same_geometry(&g)) {
            return Err(DpmError::Shape(format!("case {} mixes grid geometries", c.id)));
        }
    }
    Ok(())
}

pub fn les(config: &Path, closure: &str) -> Result<()> {
    let run = Run::load(config)?;
    let cfg = &run.cfg;
    let steps = time_steps(cfg)?;
    let base = baselines(cfg)?;
    let model;
    let (label, c): (String, &dyn Closure) = match base.iter().find(|(l, _)| l == closure) {
        Some((l, c)) => (l.clone(), c.as_ref()),
        None => {
            let p = Path::new(closure);
            if !p.exists() {
                return Err(DpmError::Config(format!(
                    "unknown closure '{closure}': expected no_model, smagorinsky, dynamic_smagorinsky or a model file"
                )));
            }
            model = read_model(p)?.0;
            (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), &model)
        }
    };
    let cases = run.read_cases(Some(CaseRole::Test))?;
    check_geometry(&cases)?;
    let dir = run.out.join("les");
    for case in &cases {
        let ev = evaluate(cfg, &steps, case, &[(label.as_str(), c)])?;
        write_evaluation(&dir, &ev, &format!("{label}_"))?;
        print!("{}", ev.render());
    }
    Ok(())
}

pub fn compare(config: &Path) -> Result<()> {
    let run = Run::load(config)?;
    let cfg = &run.cfg;
    let steps = time_steps(cfg)?;
    let base = baselines(cfg)?;
    let models = trained_models(&run.models())?;
    let mut closures: Vec<(&str, &dyn Closure)> = base.iter().map(|(l, c)| (l.as_str(), c.as_ref())).collect();
    closures.extend(models.iter().map(|(l, m)| (l.as_str(), m as &dyn Closure)));
    let cases = run.read_cases(Some(CaseRole::Test))?;
    if cases.is_empty() {
        return Err(DpmError::Config("no test cases configured".into()));
    }
    check_geometry(&cases)?;
    let dir = run.out.join("compare");
    let mut report = String::new();
    for case in &cases {
        let ev = evaluate(cfg, &steps, case, &closures)?;
        write_evaluation(&dir, &ev, "")?;
        report.push_str(&ev.render());
        report.push('\n');
    }
    let mut w = create(&dir.join("report.txt"))?;
    w.write_all(report.as_bytes())?;
    w.flush()?;
    print!("{report}");
    Ok(())
}

pub fn gradcheck(burgers: bool, hidden: usize, seed: u64) -> Result<()> {
    if burgers {
        let (s0, dt, targets) = standard_problem(64, 20)?;
        let model = BurgersModel::xavier(hidden, seed)?.with_scale(0.1);
        let dir = direction(model.params.len(), seed);
        let r = burgers_gradcheck(&s0, &model, dt, 20, &targets, &dir, &FD_STEPS)?;
        print!("{}", r.render());
        pass_line("burgers discrete adjoint", r.best_rel_error, 1e-9)
    } else {
        let mut ok = Ok(());
        for projection in [true, false] {
            let r = les_gradcheck(16, 2, hidden, seed, projection)?;
            println!("projection {}", if projection { "on" } else { "off" });
            print!("{}", r.render());
            ok = ok.and(pass_line("transpose", r.transpose_rel_error, 1e-11));
            ok = ok.and(pass_line("finite difference", r.best_rel_error, 1e-6));
        }
        ok
    }
}

fn direction(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn pass_line(what: &str, err: f64, tol: f64) -> Result<()> {
    let ok = err <= tol;
    println!("{what}: {} (error {err:.3e}, tolerance {tol:.0e})", if ok { "PASS" } else { "FAIL" });
    if ok {
        Ok(())
    } else {
        Err(DpmError::InvalidArgument(format!("{what} gradient check failed")))
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let bad = || DpmError::Config(format!("expected filter:sampling, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn diagnose(snapshot: &Path, ratios: &[usize], explicit: &[String], csv: Option<&Path>) -> Result<()> {
    let s = Snapshot::read(snapshot)?;
    let pairs = explicit.iter().map(|e| parse_pair(e)).collect::<Result<Vec<_>>>()?;
    let report = table1_report(s.velocity(), ratios, &pairs)?;
    print!("{}", report.render());
    if let Some(p) = csv {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}
