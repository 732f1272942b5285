use std::path::Path;
use std::process::{Command, Output};

use dpm_core::analysis::CaseRole;
use dpm_core::config::ExperimentConfig;
use dpm_core::pipeline::{read_case, run_all_cases};

fn dpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpm"))
        .args(args)
        .arg("--log=warn")
        .output()
        .expect("dpm runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
[grid]
dns_n = 16

[dns]
snapshots = 3
store_fine = true

[training]
window_steps = 2
iterations = 3

[model]
hidden = 2

[[cases]]
viscosity_ratio = 1.0
seed = 1
role = "train"

[[cases]]
viscosity_ratio = 1.5
seed = 2
role = "test"

[output]
dir = "out"
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn misspelled_key_gives_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[grid]\ndns_nn = 32\n");
    let o = dpm(&["dns", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("error kind=config code=2"), "{e}");
    assert!(e.contains("dns_nn"), "{e}");
}

#[test]
fn missing_data_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = dpm(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=missing_data"), "{}", stderr(&o));
}

#[test]
fn burgers_gradcheck_passes() {
    let o = dpm(&["gradcheck", "--burgers"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("burgers discrete adjoint: PASS"), "{out}");
    let alias = dpm(&["burgers-gradcheck"]);
    assert_eq!(stdout(&alias), out);
}

#[test]
fn full_workflow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), TINY);
    let c = cfg_path.to_str().unwrap();
    let out = dir.path().join("out");

    let o = dpm(&["dns", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));

    // stored targets reload bitwise equal to an in-process run
    let cfg = ExperimentConfig::from_path(&cfg_path).unwrap();
    let (_, cases) = run_all_cases(&cfg, &mut |_| Ok(())).unwrap();
    for case in &cases {
        let back = read_case(&out.join("data"), &cfg, &case.spec).unwrap();
        assert_eq!(back.targets, case.targets);
        for (a, b) in back.apriori.iter().zip(&case.apriori) {
            assert_eq!(a.target, b.target);
        }
    }

    // refiltering the stored fine fields reproduces the same files
    let target = out.join("data").join(&cases[0].id).join("target_0001.snap");
    let before = std::fs::read(&target).unwrap();
    let o = dpm(&["filter", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&target).unwrap(), before);

    for args in [
        vec!["train", "--config", c],
        vec!["train", "--config", c, "--divfree", "off"],
        vec!["train", "--config", c, "--mode", "apriori"],
    ] {
        let o = dpm(&args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for m in ["dpm", "dpm_nodivfree", "apriori"] {
        assert!(out.join("models").join(format!("{m}.model")).exists(), "{m}");
    }

    // resuming a finished run is a no-op on the model
    let model = std::fs::read(out.join("models/dpm.model")).unwrap();
    let ckpt = out.join("checkpoints/dpm_final.ckpt");
    let o = dpm(&["train", "--config", c, "--resume", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("models/dpm.model")).unwrap(), model);

    let o = dpm(&["compare", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(out.join("compare/report.txt")).unwrap();
    for label in ["no_model", "smagorinsky", "dpm", "dpm_nodivfree", "apriori"] {
        assert!(report.contains(label), "{report}");
    }
    let test_id = ExperimentConfig::case_id(cfg.cases_with_role(CaseRole::Test).next().unwrap());
    assert!(out.join(format!("compare/decay_{test_id}.csv")).exists());
    assert!(out.join(format!("compare/spectrum_{test_id}.csv")).exists());

    let o = dpm(&["les", "--config", c, "--closure", "smagorinsky"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dpm(&["les", "--config", c, "--closure", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));

    let fine = out.join("data").join(&cases[0].id).join("fine_0000.snap");
    let csv = dir.path().join("table.csv");
    let o = dpm(&["diagnose", "--snapshot", fine.to_str().unwrap(), "--ratios", "2,4", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}
