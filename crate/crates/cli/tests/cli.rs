use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use greenlab_cli::{emit_plotdata, run, ExperimentConfig, Kind};

fn greenlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greenlab")).args(args).env_remove("GREENLAB_WORKERS").output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn admissibility_on_squaring_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = greenlab(&["admissibility", "--out", &out_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(tmp.path(), "admissibility.csv")).unwrap();
    assert!(csv.starts_with("j,dist,cesaro_average,per_index_rate\n"));
    let summary: serde_json::Value = serde_json::from_slice(&read(tmp.path(), "summary.json")).unwrap();
    assert_eq!(summary["schema"], "1");
    assert_eq!(summary["pass"], true);
    let artifacts: Vec<&str> = summary["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for v in summary["verdicts"].as_array().unwrap() {
        assert!(artifacts.contains(&v["csv"].as_str().unwrap()));
    }
}

#[test]
fn degenerating_profile_fails_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = greenlab(&[
        "admissibility",
        "--out",
        &out_arg(tmp.path()),
        "--set",
        "sequence.kind=degenerating",
        "--set",
        "sequence.profile=exp(1)",
        "--set",
        "params.n_max=24",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL condition B"));
}

#[test]
fn clt_below_sample_floor_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = greenlab(&["clt", "--out", &out_arg(&out), "--set", "params.count=10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("minimum sample floor"));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "seed = 1\n[params]\ncout = 100\n").unwrap();
    let o = greenlab(&["green", "--config", &cfg.display().to_string(), "--out", &out_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cout"));
    fs::write(&cfg, "kind = \"clt\"\n").unwrap();
    let o = greenlab(&["green", "--config", &cfg.display().to_string(), "--out", &out_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("clt.toml");
    fs::write(
        &cfg,
        "seed = 5\nobservables = [\"harmonic(1) + 0.5*dsh(1, inf)\"]\n\n[sequence]\nkind = \"perturbed\"\namplitude = 0.05\nseed = 3\n\n[params]\ncount = 1000\nn_list = [2, 4, 8]\ncentering_count = 2000\n",
    )
    .unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    let c = cfg.display().to_string();
    for (dir, workers) in dirs.iter().zip(["2", "2", "4"]) {
        let o = greenlab(&["clt", "--config", &c, "--workers", workers, "--out", &out_arg(dir)]);
        assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["clt.csv", "clt_quantiles.csv", "summary.json", "clt_qq.dat"] {
        assert_eq!(read(&dirs[0], name), read(&dirs[1], name), "{name}");
    }
    // The summary records the worker count; the data files do not depend on it.
    for name in ["clt.csv", "clt_quantiles.csv", "clt_qq.dat"] {
        assert_eq!(read(&dirs[0], name), read(&dirs[2], name), "{name}");
    }
    // A different seed changes the sample.
    let d = tmp.path().join("d");
    greenlab(&["clt", "--config", &c, "--seed", "6", "--out", &out_arg(&d)]);
    assert_ne!(read(&dirs[0], "clt.csv"), read(&d, "clt.csv"));
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["measure", "--set", "params.count=500", "--set", "sequence.kind=perturbed", "--set", "sequence.amplitude=0.05"];
    let mut one = args.to_vec();
    one.extend(["--workers", "1", "--out"]);
    let a_s = out_arg(&a);
    one.push(&a_s);
    greenlab(&one);
    let b_s = out_arg(&b);
    let o = Command::new(env!("CARGO_BIN_EXE_greenlab"))
        .args(args)
        .args(["--out", &b_s])
        .env("GREENLAB_WORKERS", "3")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&a, "cloud.csv"), read(&b, "cloud.csv"));
    assert_eq!(read(&a, "invariance.csv"), read(&b, "invariance.csv"));
    let s: serde_json::Value = serde_json::from_slice(&read(&b, "summary.json")).unwrap();
    assert_eq!(s["workers"], 3);
}

#[test]
fn failed_runs_leave_no_partial_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // sigma never reaches e^e at this horizon: the run fails after sampling.
    let o = greenlab(&["lil", "--out", &out_arg(&out), "--set", "params.n_max=32", "--set", "params.count=50"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stochastics"));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().count() == 0);

    let o = greenlab(&["green", "--out", &out_arg(&out)]);
    assert!(o.status.success());
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().all(|n| n.ends_with(".csv") || n.ends_with(".json") || n.ends_with(".dat")), "{names:?}");
}

#[test]
fn decay_plot_data_is_log_l1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = greenlab(&[
        "decay",
        "--out",
        &out_arg(tmp.path()),
        "--set",
        "observables=[\"dsh(1, inf)\"]",
        "--set",
        "params.count=2000",
        "--set",
        "params.mode=\"full\"",
        "--set",
        "params.n_list=[1, 2, 3, 4, 5]",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(tmp.path(), "decay.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,L1,L2,stderr,fitted_rate,floor"));
    let l1: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let dat = String::from_utf8(read(tmp.path(), "decay_log_l1.dat")).unwrap();
    let rows: Vec<(f64, f64)> = dat
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            assert_eq!(v.len(), 2);
            (v[0], v[1])
        })
        .collect();
    assert_eq!(rows.len(), 5);
    for (k, (n, y)) in rows.iter().enumerate() {
        assert_eq!(*n, (k + 1) as f64);
        assert!((y - l1[k].ln()).abs() < 1e-12);
    }
}

#[test]
fn clt_plot_data_is_99_quantile_pairs() {
    let cfg = ExperimentConfig::load(None, &["params.count=1000".into(), "params.n_list=[2, 6]".into()], Kind::Clt).unwrap();
    let report = run(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let files = emit_plotdata(&report, tmp.path()).unwrap();
    assert_eq!(files.len(), 1);
    let text = fs::read_to_string(&files[0]).unwrap();
    let pairs: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(pairs.len(), 99);
    assert!(pairs.iter().all(|l| l.split_whitespace().count() == 2));

    let mut empty = report.clone();
    empty.verdicts.clear();
    let dir = tmp.path().join("empty");
    assert!(emit_plotdata(&empty, &dir).unwrap().is_empty());
    assert!(!dir.exists());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let kind = match path.file_stem().and_then(|s| s.to_str()) {
            Some("decay") => Kind::Decay,
            Some("clt") => Kind::Clt,
            Some("asip") => Kind::Asip,
            Some("admissibility") => Kind::Admissibility,
            Some("mixing") => Kind::Mixing,
            other => panic!("unexpected config {other:?}"),
        };
        ExperimentConfig::load(Some(&path), &[], kind).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert_eq!(seen, 5);
}
