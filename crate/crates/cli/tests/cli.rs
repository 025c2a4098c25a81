use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn compactnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compactnet"))
        .args(args)
        .env_remove("COMPACTNET_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

const SUBCOMMANDS: [&str; 6] = [
    "experiment-sparse",
    "experiment-cnn",
    "train",
    "analyze-hessian",
    "covdim",
    "zeta",
];

#[test]
fn covdim_prints_the_conv_dimension() {
    let out = compactnet(&["covdim", "--constraint", "conv", "--k", "4", "--b", "15"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "60");
    let out = compactnet(&["covdim", "--constraint", "none", "--h", "3", "--p", "7"]);
    assert_eq!(stdout(&out), "21");
    let out = compactnet(&["covdim", "--constraint", "rank", "--r", "2", "--h", "5", "--p", "9"]);
    assert_eq!(stdout(&out), "10");
}

#[test]
fn zeta_of_softplus_is_bounded_away_from_zero() {
    let out = compactnet(&["zeta", "--activation", "softplus", "--theta", "10"]);
    assert!(out.status.success());
    let v: f64 = stdout(&out).parse().unwrap();
    assert!(v > 0.05, "{v}");
    let out = compactnet(&["zeta", "--activation", "identity", "--alpha", "0.5", "--beta", "2"]);
    assert_eq!(stdout(&out).parse::<f64>().unwrap(), 0.0);
}

#[test]
fn help_documents_every_flag() {
    assert!(compactnet(&["--help"]).status.success());
    for sub in SUBCOMMANDS {
        let out = compactnet(&[sub, "-h"]);
        assert!(out.status.success(), "{sub}");
        let text = stdout(&out);
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let words: Vec<&str> = line.split_whitespace().collect();
            let described = words.iter().skip(1).any(|w| !w.starts_with('<'));
            assert!(described, "{sub}: undocumented flag in '{line}'");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let cases: [&[&str]; 5] = [
        &["--no-such-flag"],
        &["covdim", "--constraint", "conv", "--k", "4"],
        &["zeta", "--activation", "softplus"],
        &["zeta", "--activation", "nope", "--theta", "1"],
        &[
            "experiment-sparse",
            "--preset",
            "smoke",
            "--s",
            "999",
            "--out-dir",
            "/nonexistent/never",
        ],
    ];
    for args in cases {
        let out = compactnet(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn divergence_exits_with_three_and_names_the_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = compactnet(&[
        "train",
        "--constraint",
        "none",
        "--activation",
        "squared_relu",
        "--mu",
        "500",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iter="));
}

fn read_manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn smoke_experiment_writes_records_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "n_grid = [30]\ntrials = 3\niters = 40\nmaster_seed = 4\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = compactnet(&[
        "experiment-sparse",
        "--preset",
        "smoke",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut rdr = csv::Reader::from_path(out_dir.join("records.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.get(0), Some("trial"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // 3 arms, 2 trials (flag beats config), one n
    assert_eq!(rows.len(), 6);
    let status = headers.iter().position(|h| h == "status").unwrap();
    assert!(rows.iter().all(|r| &r[status] == "ok"));
    assert!(rows.iter().all(|r| r[1].parse::<usize>().unwrap() == 30));

    let m = read_manifest(&out_dir);
    for key in ["config", "seed", "version", "started_at", "duration_s"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["iters"], 40);
    assert_eq!(m["config"]["trials"], 2);
    assert_eq!(m["config"]["p"], 20, "preset value survives");
}

#[test]
fn seed_precedence_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, extra: &[&str], env: Option<&str>| {
        let out_dir = dir.path().join(sub);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_compactnet"));
        cmd.args([
            "experiment-cnn",
            "--preset",
            "smoke",
            "--n-grid",
            "30",
            "--trials",
            "1",
            "--iters",
            "20",
        ])
        .args(extra)
        .arg("--out-dir")
        .arg(&out_dir)
        .env_remove("COMPACTNET_SEED");
        if let Some(s) = env {
            cmd.env("COMPACTNET_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        (
            read_manifest(&out_dir)["seed"].as_u64().unwrap(),
            fs::read_to_string(out_dir.join("records.csv")).unwrap(),
        )
    };
    let (a, rec_a) = run("a", &[], Some("11"));
    let (b, rec_b) = run("b", &["--seed", "11"], Some("99"));
    let (c, rec_c) = run("c", &["--jobs", "2"], Some("11"));
    assert_eq!((a, b, c), (11, 11, 11));
    assert_eq!(rec_a, rec_b);
    assert_eq!(rec_a, rec_c);

    // the environment is only a fallback: a config file seed wins over it
    let cfg = dir.path().join("seed.toml");
    fs::write(&cfg, "master_seed = 11\n").unwrap();
    let (d, rec_d) = run("d", &["--config", cfg.to_str().unwrap()], Some("99"));
    assert_eq!(d, 11);
    assert_eq!(rec_a, rec_d);
    let (e, _) = run("e", &[], None);
    assert_eq!(e, 0);
}

#[test]
fn train_and_hessian_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("train");
    let out = compactnet(&[
        "train",
        "--iters",
        "25",
        "--seed",
        "2",
        "--out-dir",
        t.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let trace = fs::read_to_string(t.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,loss,grad_norm,dist_to_truth\n"));
    assert_eq!(trace.lines().count(), 27);
    assert_eq!(read_manifest(&t)["config"]["constraint"], "l1");

    let a = dir.path().join("hess");
    let out = compactnet(&["analyze-hessian", "--n", "60", "--out-dir", a.to_str().unwrap()]);
    assert!(out.status.success());
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert!(report.starts_with("quantity,value,inputs,seed\n"));
    let min_eig: f64 = report
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(min_eig > 0.0);
    assert!(report.contains("\ntheta,"));
}
