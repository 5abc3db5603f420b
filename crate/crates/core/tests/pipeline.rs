use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use polcoord::harness::{Pipeline, RunConfig, StageOutcome};
use polcoord::recommender::Method;
use polcoord::Error;
use tempfile::TempDir;

fn desk(dir: &Path) -> RunConfig {
    RunConfig {
        out_dir: dir.to_path_buf(),
        ..RunConfig::desk()
    }
}

/// Relative path -> bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn header(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn desk_run_completes_with_valid_schema() {
    let tmp = TempDir::new().unwrap();
    let report = polcoord::harness::run_pipeline(desk(tmp.path())).unwrap();
    assert_eq!(report.typologies.len(), 9);
    assert_eq!(report.methods, Method::ALL.to_vec());
    assert_eq!(
        header(tmp.path(), "report.csv"),
        "typology,CTR_NN,CTR_FNPC,WD_NN,WD_FNPC,PT,NE_NN,NE_FNNN,NE_FNPC,AB_NN,AB_FNNN,AB_FNPC"
    );
    let csv = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    for m in Method::ALL {
        let dist = fs::read_to_string(tmp.path().join(format!("fn_distribution_{m}.csv"))).unwrap();
        let rows: Vec<&str> = dist.lines().collect();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.split(',').count() == 10));
    }
    for stage in ["gen-corpus", "simulate", "train-disentangler", "build-cpc", "recommend-nn", "evaluate"] {
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(format!("{stage}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["stage"], stage);
        assert!(m["config_hash"].as_str().unwrap().len() == 64);
        assert!(!m["outputs"].as_object().unwrap().is_empty());
    }
    let cpc = header(tmp.path(), "cpc.csv");
    assert!(cpc.starts_with("user_id,typology,bystanders,solid_liberals"));
}

#[test]
fn same_config_is_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    polcoord::harness::run_pipeline(desk(a.path())).unwrap();
    polcoord::harness::run_pipeline(desk(b.path())).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(sb[k] == *v, "{k} differs");
    }
}

#[test]
fn single_method_report_has_only_its_columns() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        methods: vec![Method::Nn],
        ..desk(tmp.path())
    };
    let report = polcoord::harness::run_pipeline(cfg).unwrap();
    assert_eq!(report.methods, vec![Method::Nn]);
    assert_eq!(header(tmp.path(), "report.csv"), "typology,CTR_NN,WD_NN,PT,NE_NN,AB_NN");
    assert!(!tmp.path().join("cpc.csv").exists());
    assert!(!tmp.path().join("recommendations_fnpc.csv").exists());
}

#[test]
fn evaluate_without_recommendations_names_recommend() {
    let tmp = TempDir::new().unwrap();
    let p = Pipeline::new(desk(tmp.path())).unwrap();
    p.gen_corpus().unwrap();
    p.simulate().unwrap();
    let err = p.evaluate().unwrap_err();
    let chain = format!("{err} / {}", std::error::Error::source(&err).map(|e| e.to_string()).unwrap_or_default());
    assert!(chain.contains("`recommend`"), "{chain}");
    assert!(matches!(err, Error::Stage { stage: "evaluate", .. }));
}

#[test]
fn stages_in_sequence_equal_run_all() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    polcoord::harness::run_pipeline(desk(a.path())).unwrap();
    let p = Pipeline::new(desk(b.path())).unwrap();
    p.gen_corpus().unwrap();
    p.simulate().unwrap();
    p.train_disentangler().unwrap();
    p.build_cpc().unwrap();
    for m in Method::ALL {
        p.recommend(m).unwrap();
    }
    p.evaluate().unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn unchanged_inputs_are_cached() {
    let tmp = TempDir::new().unwrap();
    let p = Pipeline::new(desk(tmp.path())).unwrap();
    p.run_all().unwrap();
    let before = snapshot(tmp.path());
    assert_eq!(p.gen_corpus().unwrap(), StageOutcome::Cached);
    assert_eq!(p.simulate().unwrap(), StageOutcome::Cached);
    assert_eq!(p.train_disentangler().unwrap(), StageOutcome::Cached);
    assert_eq!(p.build_cpc().unwrap(), StageOutcome::Cached);
    assert_eq!(p.recommend(Method::Fnpc).unwrap(), StageOutcome::Cached);
    p.evaluate().unwrap();
    assert_eq!(snapshot(tmp.path()), before);

    // a recommender change reruns only the recommend stages
    let mut cfg = desk(tmp.path());
    cfg.recommender.top_r = 5;
    let q = Pipeline::new(cfg).unwrap();
    assert_eq!(q.train_disentangler().unwrap(), StageOutcome::Cached);
    assert_eq!(q.build_cpc().unwrap(), StageOutcome::Cached);
    assert_eq!(q.recommend(Method::Nn).unwrap(), StageOutcome::Ran);

    // a tampered output invalidates its stage
    fs::write(tmp.path().join("cpc.csv"), "garbage").unwrap();
    assert_eq!(p.build_cpc().unwrap(), StageOutcome::Ran);
}

#[test]
fn seed_changes_values_not_schema() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    polcoord::harness::run_pipeline(desk(a.path())).unwrap();
    polcoord::harness::run_pipeline(RunConfig {
        seed: 7,
        ..desk(b.path())
    })
    .unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    assert_ne!(sa["report.csv"], sb["report.csv"]);
    assert_ne!(sa["population.json"], sb["population.json"]);
    for f in ["report.csv", "cpc.csv", "graphs_nn.csv", "recommendations_fnpc.csv", "fn_distribution_fnpc.csv"] {
        assert_eq!(header(a.path(), f), header(b.path(), f), "{f}");
    }
}

#[test]
fn bad_profile_file_fails_in_simulate() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        profiles: Some(tmp.path().join("missing.json")),
        ..desk(tmp.path())
    };
    let err = polcoord::harness::run_pipeline(cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "simulate", .. }), "{err}");
    assert!(tmp.path().join("corpus.txt").exists());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polcoord"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_subcommands_and_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    let run = cli(&["--desk", "--out", out, "gen-corpus"]);
    assert!(run.status.success());
    let run = cli(&["--desk", "--out", out, "simulate"]);
    assert!(run.status.success());

    let run = cli(&["--desk", "--out", out, "evaluate"]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("stage `evaluate` failed"), "{stderr}");
    assert!(stderr.contains("run `recommend` first"), "{stderr}");

    let run = cli(&["--desk", "--out", out, "recommend", "--method", "bogus"]);
    assert!(!run.status.success());

    for sub in ["train-disentangler", "build-cpc"] {
        assert!(cli(&["--desk", "--out", out, sub]).status.success(), "{sub}");
    }
    for m in ["nn", "fn-nn", "fnpc"] {
        assert!(cli(&["--desk", "--out", out, "recommend", "--method", m]).status.success(), "{m}");
    }
    assert!(cli(&["--desk", "--out", out, "evaluate"]).status.success());

    // the CLI with an explicit seed matches the library run
    let lib = TempDir::new().unwrap();
    polcoord::harness::run_pipeline(RunConfig {
        seed: 3,
        ..desk(lib.path())
    })
    .unwrap();
    let via_cli = TempDir::new().unwrap();
    let run = cli(&["--desk", "--threads", "1", "--seed", "3", "--out", via_cli.path().to_str().unwrap(), "run-all"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(snapshot(lib.path()), snapshot(via_cli.path()));
}

#[test]
fn config_file_is_honoured() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig {
        methods: vec![Method::FnNn],
        ..desk(&tmp.path().join("out"))
    };
    let path = tmp.path().join("run.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let run = cli(&["--config", path.to_str().unwrap(), "run-all"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(header(&tmp.path().join("out"), "report.csv"), "typology,PT,NE_FNNN,AB_FNNN");
}
