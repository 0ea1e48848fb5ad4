use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qrenv::{catalog, CatalogModel, CatalogParams, ModelDocument};
use qrenv_cli::Record;

fn qrenv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrenv"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn record(dir: &Path, name: &str) -> Record {
    Record::parse(&fs::read_to_string(dir.join(name)).unwrap())
}

const BASE_STOCK: &[&str] = &[
    "--catalog",
    "base_stock",
    "--lambda",
    "1",
    "--mu",
    "2",
    "--nu",
    "1",
    "--b",
    "2",
];

fn with(cmd: &str, model: &[&str], extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd)
        .chain(model.iter().copied())
        .chain(extra.iter().copied())
        .map(String::from)
        .collect()
}

fn run(args: &[String], out: &Path) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    qrenv(&refs, out)
}

#[test]
fn base_stock_separability_reports_uniform_theta() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&with("separability", BASE_STOCK, &[]), dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("theta.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,theta"));
    let theta: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(theta.len(), 3);
    for t in theta {
        assert!((t - 1.0 / 3.0).abs() < 1e-12);
    }
    let rec = record(dir.path(), "separability.txt");
    assert_eq!(rec.get("separable"), Some("true"));
    let th: f64 = rec.get("throughput").unwrap().parse().unwrap();
    assert!((th - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn perishable_target_with_ageing_is_not_separable() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(
        "separability",
        &[
            "--catalog",
            "perishable_o",
            "--lambda",
            "1",
            "--mu",
            "2",
            "--nu",
            "1",
            "--gamma",
            "1",
            "--b",
            "2",
        ],
        &[],
    );
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        record(dir.path(), "separability.txt").get("separable"),
        Some("false")
    );
}

#[test]
fn certify_distinguishes_stable_and_overloaded_models() {
    let dir = tempfile::tempdir().unwrap();
    let stable = with(
        "certify",
        &[
            "--catalog",
            "perishable_o",
            "--lambda",
            "1",
            "--mu",
            "2",
            "--nu",
            "1",
            "--gamma",
            "1",
            "--b",
            "2",
        ],
        &["--kind", "linear-drift"],
    );
    let out = run(&stable, dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let rec = record(dir.path(), "certificate.txt");
    assert_eq!(rec.get("certified"), Some("true"));
    assert!(dir.path().join("levels.csv").exists());
    assert!(dir.path().join("tau.csv").exists());

    let dir = tempfile::tempdir().unwrap();
    let overloaded = with(
        "certify",
        &[
            "--catalog",
            "base_stock",
            "--lambda",
            "2",
            "--mu",
            "1",
            "--nu",
            "1",
            "--b",
            "2",
        ],
        &[],
    );
    let out = run(&overloaded, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let rec = record(dir.path(), "certificate.txt");
    assert_eq!(rec.get("certified"), Some("false"));
    assert!(!rec.get("reason").unwrap().is_empty());
}

#[test]
fn usage_and_model_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_file = dir.path().join("bad.toml");
    fs::write(&bad_file, "[rates]\nlambda = -1\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        with("validate", &["--model", bad_file.to_str().unwrap()], &[]),
        with("validate", &["--catalog", "no_such_model"], &[]),
        with("validate", &[], &[]),
        with(
            "validate",
            &[
                "--catalog",
                "base_stock",
                "--model",
                bad_file.to_str().unwrap(),
            ],
            &[],
        ),
        with("solve", BASE_STOCK, &["--method", "power"]),
        with(
            "bounds",
            &[
                "--lambda", "2", "--mu", "1", "--nu", "1", "--b", "1", "--gamma", "0",
            ],
            &["--no-sim"],
        ),
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let out = run(&args, &dir.path().join("o"));
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn help_and_version_succeed() {
    for flag in ["--help", "--version"] {
        let out = Command::new(env!("CARGO_BIN_EXE_qrenv"))
            .arg(flag)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn model_file_round_trips_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let model = catalog(
        CatalogModel::BaseStock,
        &CatalogParams {
            lambda: Some(1.0),
            mu: Some(2.0),
            nu: Some(1.0),
            b: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    let path = dir.path().join("model.toml");
    fs::write(&path, ModelDocument::from_model(&model).to_toml()).unwrap();

    let from_file = dir.path().join("file");
    let out = qrenv(&["validate", "--model", path.to_str().unwrap()], &from_file);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let from_catalog = dir.path().join("catalog");
    let out = run(&with("validate", BASE_STOCK, &[]), &from_catalog);
    assert_eq!(out.status.code(), Some(0));

    let a = record(&from_file, "manifest.txt");
    let b = record(&from_catalog, "manifest.txt");
    assert_eq!(a.get("model_sha256"), b.get("model_sha256"));
    assert_eq!(a.get("model_sha256").unwrap().len(), 64);
}

#[test]
fn reruns_produce_identical_csv_files() {
    let commands: Vec<Vec<String>> = vec![
        with("solve", BASE_STOCK, &["--cap", "80"]),
        with("solve", BASE_STOCK, &[]),
        with(
            "simulate",
            BASE_STOCK,
            &[
                "--seed",
                "7",
                "--jumps",
                "5000",
                "--replications",
                "4",
                "--trace",
            ],
        ),
        with("certify", BASE_STOCK, &[]),
        vec![
            "bounds",
            "--lambda",
            "1",
            "--mu",
            "2",
            "--nu",
            "1",
            "--gamma",
            "1",
            "--b",
            "2",
            "--seed",
            "42",
            "--time",
            "500",
            "--iso-cap",
            "30",
            "--iso-horizon",
            "20",
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    ];
    for args in commands {
        let root = tempfile::tempdir().unwrap();
        let (a, b) = (root.path().join("a"), root.path().join("b"));
        assert_eq!(run(&args, &a).status.code(), Some(0), "{args:?}");
        assert_eq!(run(&args, &b).status.code(), Some(0), "{args:?}");
        let mut csvs = 0;
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            let (x, y) = (
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
            );
            if name.to_str().unwrap().ends_with(".csv") {
                csvs += 1;
                assert_eq!(x, y, "{args:?} {name:?}");
                let text = String::from_utf8(x).unwrap();
                assert!(text.ends_with('\n'));
            }
        }
        assert!(csvs > 0, "{args:?}");
    }
}

#[test]
fn every_run_writes_a_manifest_listing_its_files() {
    let commands: Vec<Vec<String>> = vec![
        with("validate", BASE_STOCK, &[]),
        with("separability", BASE_STOCK, &["--tol", "1e-9"]),
        with("certify", BASE_STOCK, &["--kind", "hitting-time"]),
        with(
            "solve",
            BASE_STOCK,
            &["--cap", "64", "--method", "power", "--tol", "1e-12"],
        ),
        with("simulate", BASE_STOCK, &["--seed", "3", "--time", "200"]),
        vec![
            "sweep", "--lambda", "1", "--mu", "2", "--nu", "1", "--b", "2", "--gammas", "0,0.5,1",
        ]
        .into_iter()
        .map(String::from)
        .collect(),
    ];
    for args in commands {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let m = record(dir.path(), "manifest.txt");
        assert_eq!(m.get("tool"), Some("qrenv"));
        assert_eq!(m.get("command"), Some(args[0].as_str()));
        assert!(m.get("version").is_some());
        assert!(m.get("args").unwrap().starts_with(&args[0]));
        if args[0] != "sweep" {
            assert_eq!(m.get("model_sha256").map(str::len), Some(64));
        }
        for name in m.get("files").unwrap().split(';') {
            let bytes = fs::read(dir.path().join(name)).unwrap();
            assert_eq!(
                m.get(&format!("sha256.{name}")).unwrap(),
                qrenv_cli::sha256_hex(&bytes)
            );
        }
    }
}

#[test]
fn sweep_without_ageing_collapses_the_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrenv(
        &[
            "sweep", "--lambda", "1", "--mu", "2", "--nu", "1", "--b", "2", "--gammas", "0,1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("gamma,th_minus,th_o,th_plus"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((first[1] - first[3]).abs() < 1e-9);
    assert!((first[2] - 2.0 / 3.0).abs() < 1e-9);
}
