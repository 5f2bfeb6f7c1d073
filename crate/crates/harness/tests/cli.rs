use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn stepeql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepeql"))
        .args(args)
        .env_remove("STEPEQL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stepeql(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

/// Every CSV in `dir`, sorted by name.
fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn last_field(csv: &[u8], row_label: &str, column: &str) -> String {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == column).unwrap();
    let row = lines.find(|l| l.starts_with(row_label)).unwrap();
    row.split(',').nth(col).unwrap().to_string()
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let out = stepeql(&["run", "cs9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
    let out = stepeql(&["dump-preset", "--set", "model.k"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_failures_name_the_stage() {
    let dir = TempDir::new().unwrap();
    let out = stepeql(&["learn", "--preset", "cs1", "--out", &out_dir(&dir, "o")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage learn"));
}

/// Parameter columns per case: k, s, dt, beta, K, M, t_1, t_M, n_s, n_k,
/// tau_q, tau_dL/dt, tau_t. CS2 uses M = 200, the value its reported fits
/// were made with.
#[test]
fn dumped_presets_reproduce_the_parameter_columns() {
    type Stage = (usize, f64, f64, Option<i64>, f64, f64, f64);
    let cases: [(&str, f64, Option<(f64, f64, f64)>, Option<i64>, Vec<Stage>); 6] = [
        ("cs1", 50.0, None, None, vec![(50, 0.0, 5.0, None, 0.1, 0.0, 0.0)]),
        ("cs2", 50.0, None, None, vec![(200, 0.0, 15.0, None, 0.35, 0.1, 0.0)]),
        ("cs3a", 50.0, Some((0.01, 0.15, 15.0)), Some(1000), vec![(501, 0.0, 50.0, Some(50), 0.1, 0.0, 0.0)]),
        ("cs3b", 0.2, Some((0.01, 0.15, 15.0)), Some(1000), vec![(751, 0.0, 75.0, Some(200), 0.25, 0.0, 0.0)]),
        (
            "cs4a",
            50.0,
            Some((0.01, 0.15, 15.0)),
            Some(1000),
            vec![
                (25, 0.0, 0.1, Some(25), 0.1, 0.0, 0.0),
                (50, 0.0, 5.0, Some(50), 0.0, 0.2, 0.0),
                (100, 5.0, 10.0, Some(100), 0.0, 0.0, 0.0),
                (250, 10.0, 50.0, Some(50), 0.0, 0.0, 0.0),
            ],
        ),
        (
            "cs4b",
            0.2,
            Some((0.01, 0.15, 15.0)),
            Some(1000),
            vec![
                (20, 0.0, 2.0, Some(50), 0.0, 0.0, 0.4),
                (200, 2.0, 10.0, Some(100), 0.0, 0.4, 0.4),
                (200, 10.0, 20.0, Some(100), 0.0, 0.0, 0.0),
                (200, 20.0, 50.0, Some(100), 0.3, 0.0, 0.0),
            ],
        ),
    ];
    for (name, k, prolif, n_s, stages) in cases {
        let out = ok(&["dump-preset", name]);
        let cfg: toml::Table = String::from_utf8(out.stdout).unwrap().parse().unwrap();
        let model = cfg["model"].as_table().unwrap();
        let f = |t: &toml::Table, key: &str| t[key].as_float().unwrap();
        assert_eq!(f(model, "k"), k, "{name} k");
        assert_eq!(f(model, "eta"), 1.0, "{name} eta");
        assert_eq!(f(model, "s"), 0.2, "{name} s");
        match prolif {
            Some((dt, beta, capacity)) => {
                assert_eq!(model["proliferation"].as_str(), Some("logistic"), "{name}");
                assert_eq!((f(model, "dt"), f(model, "beta"), f(model, "capacity")), (dt, beta, capacity));
            }
            None => assert_eq!(model["proliferation"].as_str(), Some("none"), "{name}"),
        }
        let ensemble = cfg.get("ensemble").and_then(|e| e.get("n_s")).and_then(|v| v.as_integer());
        assert_eq!(ensemble, n_s, "{name} n_s");
        let got = cfg["stages"].as_array().unwrap();
        assert_eq!(got.len(), stages.len(), "{name} stage count");
        for (g, (m, t1, tm, n_k, tau_q, tau_dl, tau_t)) in got.iter().zip(stages) {
            let g = g.as_table().unwrap();
            assert_eq!(g["m"].as_integer(), Some(m as i64), "{name} M");
            assert_eq!((f(g, "t1"), f(g, "tm")), (t1, tm), "{name} times");
            assert_eq!(g.get("n_k").and_then(|v| v.as_integer()), n_k, "{name} n_k");
            assert_eq!((f(g, "tau_q"), f(g, "tau_dl_dt"), f(g, "tau_t")), (tau_q, tau_dl, tau_t), "{name} tau");
        }
    }
}

#[test]
fn dump_is_a_loadable_config() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("cs2.toml");
    let dumped = ok(&["dump-preset", "cs2", "--set", "stages.0.tau_q=0.3"]).stdout;
    fs::write(&path, &dumped).unwrap();
    let again = ok(&["dump-preset", "--config", path.to_str().unwrap()]).stdout;
    assert_eq!(dumped, again);
    assert!(String::from_utf8_lossy(&again).contains("tau_q = 0.3"));
}

#[test]
fn identical_runs_write_identical_csvs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (out_dir(&dir, "a"), out_dir(&dir, "b"));
    ok(&["run", "cs1", "--seed", "1", "--out", &a]);
    ok(&["run", "cs1", "--seed", "1", "--out", &b]);
    let (ca, cb) = (csvs(Path::new(&a)), csvs(Path::new(&b)));
    assert!(ca.len() >= 7);
    assert_eq!(ca, cb);

    // A small stochastic ensemble, averaged with different thread counts.
    let small = [
        "--preset",
        "cs3a",
        "--seed",
        "7",
        "--set",
        "ensemble.n_s=6",
        "--set",
        "stages.0.m=11",
        "--set",
        "stages.0.tm=1",
    ];
    let (c, d) = (out_dir(&dir, "c"), out_dir(&dir, "d"));
    ok(&[&["average", "--threads", "1", "--out", &c][..], &small].concat());
    ok(&[&["average", "--threads", "3", "--out", &d][..], &small].concat());
    assert_eq!(csvs(Path::new(&c)), csvs(Path::new(&d)));
}

#[test]
fn learning_from_saved_densities_matches_the_full_run() {
    let dir = TempDir::new().unwrap();
    let full = out_dir(&dir, "full");
    ok(&["run", "cs1", "--out", &full]);
    let fit = fs::read(Path::new(&full).join("fit_data.csv")).unwrap();

    let alone = dir.path().join("alone");
    fs::create_dir_all(&alone).unwrap();
    fs::copy(Path::new(&full).join("density_data.csv"), alone.join("density_data.csv")).unwrap();
    ok(&["learn", "--preset", "cs1", "--out", alone.to_str().unwrap()]);
    assert_eq!(fs::read(alone.join("fit_data.csv")).unwrap(), fit);

    // Second learn in the same directory hits the fit cache.
    ok(&["learn", "--preset", "cs1", "--out", alone.to_str().unwrap()]);
    assert_eq!(fs::read(alone.join("fit_data.csv")).unwrap(), fit);
}

#[test]
fn single_value_sweep_matches_the_run() {
    let dir = TempDir::new().unwrap();
    let run = out_dir(&dir, "run");
    ok(&["run", "cs1", "--out", &run]);
    let fit = fs::read(Path::new(&run).join("fit_data.csv")).unwrap();

    let sweep = out_dir(&dir, "sweep");
    ok(&["sweep", "--preset", "cs1", "--param", "tau_q", "--values", "0.1", "--out", &sweep]);
    let table = fs::read(Path::new(&sweep).join("sweep.csv")).unwrap();
    let text = String::from_utf8(table.clone()).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert_eq!(last_field(&table, "tau_q", "loss"), last_field(&fit, "final", "loss"));
    assert_eq!(last_field(&table, "tau_q", "d_active"), "true");
    assert!(Path::new(&sweep).join("sweep.svg").exists());
}

#[test]
fn single_realization_with_proliferation_warns_and_completes() {
    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "run",
        "cs3a",
        "--set",
        "ensemble.n_s=1",
        "--set",
        "stages.0.m=51",
        "--set",
        "stages.0.tm=5",
        "--out",
        &out_dir(&dir, "o"),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: n_s = 1"));
    assert!(dir.path().join("o/mechanisms.csv").exists());
}

#[test]
fn run_writes_the_report_bundle() {
    let dir = TempDir::new().unwrap();
    let o = out_dir(&dir, "o");
    let out = ok(&["run", "cs1", "--out", &o]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("D(q) = "));
    for name in [
        "config.toml",
        "trajectory_data.csv",
        "density_data.csv",
        "derivatives_data.csv",
        "fit_data.csv",
        "coefficients.csv",
        "pde_data.csv",
        "mechanisms.csv",
        "continuum.csv",
        "density_data.svg",
        "mechanism_D.svg",
    ] {
        assert!(Path::new(&o).join(name).exists(), "{name} missing");
    }
    // Fixed boundary: no edge plot and no edge laws.
    assert!(!Path::new(&o).join("edge_data.svg").exists());
    assert!(!Path::new(&o).join("mechanism_H.svg").exists());
    let fit = fs::read_to_string(Path::new(&o).join("fit_data.csv")).unwrap();
    assert!(fit.starts_with("step,θ1d,θ2d,θ3d,loss,move"));
}
