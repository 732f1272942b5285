//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6-8 run the desk-scale experiment from `configs/desk.toml`
//! (DNS 64³ filtered to 16³, adjoint, projection-off and a-priori training).
//! That takes a while on one core; `DPM_ACCEPTANCE_SKIP_DESK=1` reports them
//! as SKIP instead.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dpm_core::adjoint::{les_gradcheck, FD_STEPS};
use dpm_core::analysis::{table1_report, CaseRole};
use dpm_core::burgers::{burgers_gradcheck, standard_problem, BurgersModel};
use dpm_core::closure::{Closure, NoClosure};
use dpm_core::config::ExperimentConfig;
use dpm_core::filter::{divfree_project, filter_to_coarse};
use dpm_core::grid::divergence;
use dpm_core::io::{model_to_bytes, Snapshot};
use dpm_core::neural::param_count;
use dpm_core::pipeline::{
    baselines, dataset, evaluate_case, initial_model, run_all_cases, run_dns_case, time_steps, train_adjoint,
    train_apriori, with_role, write_case, CaseData, TimeSteps,
};
use dpm_core::solver::{init_isotropic, step, taylor_green_error, FluidState, SolverConfig};
use dpm_core::spectral::poisson_solve;
use dpm_core::train::TrainState;
use dpm_core::{GridSpec, ScalarField, VectorField};

const PARAM_COUNTS: [(usize, usize); 5] = [(5, 4278), (25, 22318), (50, 47118), (100, 104218), (200, 248418)];
const TRANSPOSE_TOL: f64 = 1e-11;
const BURGERS_TOL: f64 = 1e-9;
const LES_FD_TOL: f64 = 1e-6;
const PROJECTION_TOL: f64 = 1e-12;
const ORDER_TARGET: f64 = 2.0;
const ORDER_TOL: f64 = 0.2;
const POISSON_TOL: f64 = 1e-12;
const TREND_FACTOR: f64 = 10.0;
const MAX_SAM_ITERATIONS: usize = 5000;
const HELD_OUT_RATIO: f64 = 1.5;
const VARIANT_LOSS_FACTOR: f64 = 2.0;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail }
    }

    fn skip(detail: &str) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

fn report(n: usize, name: &str, o: &Outcome, secs: f64) -> bool {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("criterion {n} {name}: {tag} ({secs:.1} s) {}", o.detail);
    o.pass != Some(false)
}

fn criterion_1() -> Outcome {
    let got: Vec<usize> = PARAM_COUNTS.iter().map(|&(nh, _)| param_count(273, nh, 18)).collect();
    let want: Vec<usize> = PARAM_COUNTS.iter().map(|&(_, c)| c).collect();
    Outcome::check(got == want, format!("d_theta = {got:?}"))
}

fn criterion_2() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for projection in [true, false] {
        let r = les_gradcheck(16, 2, 5, 1, projection).expect("3D gradient check runs");
        ok &= r.transpose_rel_error <= TRANSPOSE_TOL && r.best_rel_error <= LES_FD_TOL;
        detail.push(format!(
            "proj={projection}: transpose {:.2e}, fd {:.2e}",
            r.transpose_rel_error, r.best_rel_error
        ));
    }
    let (s0, dt, targets) = standard_problem(64, 20).unwrap();
    let model = BurgersModel::xavier(5, 1).unwrap().with_scale(0.1);
    let dir: Vec<f64> = (0..model.params.len()).map(|i| ((i * 37 % 17) as f64 / 8.0) - 1.0).collect();
    let b = burgers_gradcheck(&s0, &model, dt, 20, &targets, &dir, &FD_STEPS).unwrap();
    ok &= b.best_rel_error <= BURGERS_TOL;
    detail.push(format!("burgers {:.2e}", b.best_rel_error));
    Outcome::check(ok, detail.join("; "))
}

fn desk_field(cfg: &ExperimentConfig) -> VectorField {
    // initial decay only: one stored snapshot of the first case
    let mut c = cfg.clone();
    c.dns.snapshots = 1;
    let steps = time_steps(&c).unwrap();
    let mut fine = None;
    run_dns_case(&c, &c.cases[0], &steps, &mut |rec| {
        fine = Some(rec.fine.u.clone());
        Ok(())
    })
    .unwrap();
    fine.unwrap()
}

fn criterion_3(fine: &VectorField, filter_ratio: usize) -> Outcome {
    let spec = dpm_core::filter::FilterSpec::new(filter_ratio).unwrap();
    let u_bar = filter_to_coarse(fine, spec).unwrap();
    let (w, _) = divfree_project(&u_bar);
    let scale = w.rms() / w.grid.dx();
    let div = divergence(&w).max_abs() / scale;
    let (ww, _) = divfree_project(&w);
    let idem = ww.sub(&w).max_abs() / w.max_abs();
    let g = GridSpec::new(16, 2.0 * std::f64::consts::PI).unwrap();
    let free = init_isotropic(g, 1.0, 3.0, 7).unwrap();
    let (fixed, _) = divfree_project(&free);
    let fix = fixed.sub(&free).max_abs() / free.max_abs();
    let ok = div <= PROJECTION_TOL && idem <= PROJECTION_TOL && fix <= PROJECTION_TOL;
    Outcome::check(
        ok,
        format!("max|div w|/(u_rms/dx) {div:.2e}, idempotence {idem:.2e}, fixed {fix:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let ns = [16, 32, 64];
    let errs: Vec<f64> = ns.iter().map(|&n| taylor_green_error(n, 0.1, 0.1, 0.1).unwrap()).collect();
    let orders: Vec<f64> = errs.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    let order_ok = orders.iter().all(|o| (o - ORDER_TARGET).abs() <= ORDER_TOL);

    let g = GridSpec::new(32, 2.0 * std::f64::consts::PI).unwrap();
    let mut psi = ScalarField::from_fn(g, |x| (x[0] + 0.3).sin() * (2.0 * x[1]).cos() + 0.5 * (3.0 * x[2]).sin());
    let m = psi.mean();
    psi.values.iter_mut().for_each(|v| *v -= m);
    let phi = poisson_solve(&dpm_core::grid::laplacian(&psi));
    let rt = phi.values.iter().zip(&psi.values).fold(0.0f64, |a, (p, q)| a.max((p - q).abs())) / psi.max_abs();
    Outcome::check(
        order_ok && rt <= POISSON_TOL,
        format!(
            "errors {}, orders {orders:.3?}, poisson round trip {rt:.2e}",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_5(fine: &VectorField) -> Outcome {
    let t = table1_report(fine, &[2, 4, 8], &[]).unwrap();
    let delta: Vec<f64> = t.rows.iter().map(|r| r.diag.delta_ratio()).collect();
    let coarse: Vec<f64> = t.rows.iter().map(|r| r.diag.coarse_div_mean_ratio()).collect();
    let increasing = delta.windows(2).all(|d| d[1] > d[0]);
    let comparable = delta.iter().zip(&coarse).all(|(d, c)| {
        let q = c / d;
        (1.0 / TREND_FACTOR..=TREND_FACTOR).contains(&q)
    });
    Outcome::check(
        increasing && comparable,
        format!("<|du1|>/<|grad u|> {delta:.4?}, coarse div mean ratio {coarse:.4?}"),
    )
}

struct Desk {
    cfg: ExperimentConfig,
    steps: TimeSteps,
    cases: Vec<CaseData>,
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::from_path(&path).expect("desk config loads")
}

fn held_out(desk: &Desk) -> &CaseData {
    desk.cases
        .iter()
        .find(|c| c.spec.role == CaseRole::Test && (c.spec.viscosity_ratio - HELD_OUT_RATIO).abs() < 1e-12)
        .expect("held-out case configured")
}

fn train_model(desk: &Desk, divergence_free: bool, apriori: bool) -> (TrainState<dpm_core::neural::NeuralClosure>, f64) {
    let mut cfg = desk.cfg.clone();
    cfg.training.divergence_free = divergence_free;
    let train = with_role(&desk.cases, CaseRole::Train);
    let mut st = TrainState::new(initial_model(&cfg, &train).unwrap(), cfg.training.seed);
    let t = Instant::now();
    if apriori {
        train_apriori(&cfg, &mut st, &train).unwrap();
    } else {
        let data = dataset(&cfg, &desk.steps, &train);
        train_adjoint(&cfg, &mut st, &data, &mut |_| Ok(())).unwrap();
    }
    (st, t.elapsed().as_secs_f64())
}

fn desk_outcomes() -> [Outcome; 3] {
    let cfg = desk_config();
    assert!(cfg.training.iterations <= MAX_SAM_ITERATIONS);
    let t = Instant::now();
    let (steps, cases) = run_all_cases(&cfg, &mut |_| Ok(())).unwrap();
    println!("desk DNS: {:.0} s", t.elapsed().as_secs_f64());
    let desk = Desk { cfg, steps, cases };
    let case = held_out(&desk);

    let (dpm, t_dpm) = train_model(&desk, true, false);
    let (apriori, t_apr) = train_model(&desk, true, true);
    let (variant, t_var) = train_model(&desk, false, false);
    println!("desk training: adjoint {t_dpm:.0} s, a priori {t_apr:.0} s, projection off {t_var:.0} s");

    let base = baselines(&desk.cfg).unwrap();
    let mut closures: Vec<(&str, &dyn Closure)> = base.iter().map(|(l, c)| (l.as_str(), c.as_ref())).collect();
    closures.push(("dpm", &dpm.model));
    closures.push(("apriori", &apriori.model));
    let ev = evaluate_case(&desk.cfg, &desk.steps, case, &closures).unwrap();
    print!("{}", ev.render());
    let loss = |l: &str| ev.window_loss(l).unwrap();
    let dist = |l: &str| ev.decay_distance(l).unwrap();

    let c6 = Outcome::check(
        loss("dpm") < loss("no_model")
            && loss("dpm") < loss("smagorinsky")
            && dist("dpm") <= dist("no_model")
            && dist("dpm") <= dist("smagorinsky"),
        format!(
            "window loss dpm {:.4e} vs none {:.4e}, smagorinsky {:.4e}; decay L1 dpm {:.4e} vs none {:.4e}, smagorinsky {:.4e}",
            loss("dpm"),
            loss("no_model"),
            loss("smagorinsky"),
            dist("dpm"),
            dist("no_model"),
            dist("smagorinsky")
        ),
    );
    let c7 = Outcome::check(
        loss("apriori") >= loss("dpm"),
        format!("a priori {:.4e} vs adjoint {:.4e}", loss("apriori"), loss("dpm")),
    );

    let mut off_cfg = desk.cfg.clone();
    off_cfg.training.divergence_free = false;
    let ev_off = evaluate_case(&off_cfg, &desk.steps, case, &[("dpm_nodivfree", &variant.model)]).unwrap();
    let var_loss = ev_off.window_loss("dpm_nodivfree").unwrap();
    let ratio = var_loss / loss("dpm");
    let (cost_on, cost_off) = step_costs(case, desk.steps.dt_les);
    let c8 = Outcome::check(
        var_loss.is_finite()
            && cost_off < cost_on
            && (1.0 / VARIANT_LOSS_FACTOR..=VARIANT_LOSS_FACTOR).contains(&ratio),
        format!(
            "step cost without network {:.3} ms (off) vs {:.3} ms (on); held-out loss {var_loss:.4e} = {ratio:.3}x projected",
            cost_off * 1e3,
            cost_on * 1e3
        ),
    );
    [c6, c7, c8]
}

/// Median wall time of a closure-free LES step with projection on and off.
fn step_costs(case: &CaseData, dt: f64) -> (f64, f64) {
    let s0 = FluidState::new(case.targets[0].w.clone(), case.viscosity, case.density);
    let time = |projection: bool| {
        let cfg = SolverConfig::new(dt).unwrap().with_projection(projection);
        let mut t: Vec<f64> = (0..41)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(step(&s0, &cfg, &NoClosure).unwrap());
                start.elapsed().as_secs_f64()
            })
            .collect();
        t.sort_by(f64::total_cmp);
        t[t.len() / 2]
    };
    // warm both paths before measuring
    time(true);
    time(false);
    (time(true), time(false))
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.grid.dns_n = 16;
    c.dns.snapshots = 3;
    c.training.window_steps = 2;
    c.training.iterations = 4;
    c.model.hidden = 3;
    c.cases.truncate(1);
    c.cases.push(dpm_core::analysis::CaseSpec { viscosity_ratio: 1.5, seed: 9, role: CaseRole::Test });
    c
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let root = std::env::temp_dir().join(format!("dpm-acceptance-{}", std::process::id()));
    let run = |tag: &str| {
        let dir = root.join(tag);
        let cfg = tiny_config();
        let (steps, cases) = run_all_cases(&cfg, &mut |_| Ok(())).unwrap();
        for c in &cases {
            write_case(&dir.join("data"), &cfg, c).unwrap();
        }
        let train = with_role(&cases, CaseRole::Train);
        let mut st = TrainState::new(initial_model(&cfg, &train).unwrap(), cfg.training.seed);
        train_adjoint(&cfg, &mut st, &dataset(&cfg, &steps, &train), &mut |_| Ok(())).unwrap();
        let mut ap = TrainState::new(initial_model(&cfg, &train).unwrap(), cfg.training.seed);
        train_apriori(&cfg, &mut ap, &train).unwrap();
        let test = with_role(&cases, CaseRole::Test)[0];
        let ev = evaluate_case(&cfg, &steps, test, &[("dpm", &st.model)]).unwrap();
        let mut csv = Vec::new();
        dpm_core::analysis::write_decay_csv(&mut csv, &[&ev.decay.reference, &ev.decay.curves[0]]).unwrap();
        let mut files = tree_bytes(&dir.join("data"));
        let mismatch = files.iter().find(|(_, b)| b.is_empty()).map(|(p, _)| p.clone());
        assert!(mismatch.is_none(), "empty artifact {mismatch:?}");
        files.push(("dpm.model".into(), model_to_bytes(&st.model, cfg.hash())));
        files.push(("apriori.model".into(), model_to_bytes(&ap.model, cfg.hash())));
        files.push(("decay.csv".into(), csv));
        files
    };
    let a = run("a");
    let b = run("b");
    for ((pa, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            println!("  differs: {}", pa.display());
        }
    }
    std::fs::remove_dir_all(&root).ok();
    let snaps = a.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "snap")).count();
    // snapshots must also decode, not just match
    let decodes = a
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "snap"))
        .all(|(_, bytes)| Snapshot::from_bytes(bytes).is_ok());
    Outcome::check(
        a == b && decodes && snaps > 0,
        format!("{} artifacts ({snaps} snapshots) bitwise identical across two runs", a.len()),
    )
}

fn timed(n: usize, name: &str, f: &mut dyn FnMut() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    report(n, name, &o, t.elapsed().as_secs_f64())
}

fn main() {
    // the libtest protocol passes flags such as --list; answer them quietly
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let skip_desk = std::env::var("DPM_ACCEPTANCE_SKIP_DESK").is_ok_and(|v| v == "1");
    let cfg = desk_config();
    let mut ok = true;
    ok &= timed(1, "parameter counts", &mut criterion_1);
    ok &= timed(2, "adjoint exactness", &mut criterion_2);
    let t = Instant::now();
    let fine = desk_field(&cfg);
    println!("desk field for criteria 3 and 5: {:.1} s", t.elapsed().as_secs_f64());
    ok &= timed(3, "projection", &mut || criterion_3(&fine, cfg.grid.filter_ratio));
    ok &= timed(4, "solver verification", &mut criterion_4);
    ok &= timed(5, "discretization trend", &mut || criterion_5(&fine));
    let t = Instant::now();
    let desk = if skip_desk {
        let s = || Outcome::skip("DPM_ACCEPTANCE_SKIP_DESK=1");
        [s(), s(), s()]
    } else {
        desk_outcomes()
    };
    let secs = t.elapsed().as_secs_f64();
    let names = ["training effectiveness", "a priori inferiority", "projection-off variant"];
    for (i, o) in desk.iter().enumerate() {
        ok &= report(6 + i, names[i], o, if i == 0 { secs } else { 0.0 });
    }
    ok &= timed(9, "determinism", &mut criterion_9);
    if !ok {
        std::process::exit(1);
    }
}
