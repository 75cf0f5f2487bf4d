use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pathrisk");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const FAST: [&str; 8] = ["--k-min", "5", "--k-max", "6", "--ada-rounds", "5", "--gbt-rounds", "5"];

#[test]
fn synth_then_evaluate_happy_path() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, e) = (tmp.path().join("d"), tmp.path().join("e"));
    ok(&["synth", "--n", "200", "--seed", "7", "--out", p(&d)]);
    let mut args = vec![
        "evaluate",
        "--in",
        p(&d),
        "--out",
        p(&e),
        "--seed",
        "7",
        "--versions",
        "v1,v4",
    ];
    args.extend(FAST);
    ok(&args);
    for f in [
        "results.csv",
        "summary.csv",
        "consistency.csv",
        "overlap.csv",
        "headline.json",
        "run_config.toml",
    ] {
        assert!(e.join(f).exists(), "{f} missing");
    }
    let results = String::from_utf8(read(&e.join("results.csv"))).unwrap();
    assert!(results.starts_with("version,model,k,fold,accuracy,sensitivity,specificity\n"));
    // 2 versions x 3 models x 2 k x 10 folds
    assert_eq!(results.lines().count(), 1 + 2 * 3 * 2 * 10);
    let summary = String::from_utf8(read(&e.join("summary.csv"))).unwrap();
    assert_eq!(summary.lines().next(), Some("version,model,k,mean_accuracy,std"));

    // the echoed config reproduces the run byte for byte
    let e2 = tmp.path().join("e2");
    let cfg = e.join("run_config.toml");
    ok(&["evaluate", "--in", p(&d), "--out", p(&e2), "--config", p(&cfg)]);
    for f in ["results.csv", "summary.csv", "consistency.csv", "run_config.toml"] {
        assert_eq!(read(&e.join(f)), read(&e2.join(f)), "{f}");
    }

    // so does the generator config
    let d2 = tmp.path().join("d2");
    ok(&["synth", "--config", p(&d.join("run_config.toml")), "--out", p(&d2)]);
    for f in ["patients.csv", "observations.csv", "cohort_meta.json"] {
        assert_eq!(read(&d.join(f)), read(&d2.join(f)), "{f}");
    }
}

#[test]
fn file_chained_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&["synth", "--n", "120", "--seed", "3", "--out", p(&d)]);
    let before = read(&d.join("observations.csv"));

    let ingested = tmp.path().join("ingested");
    ok(&["ingest", "--in", p(&d), "--out", p(&ingested)]);
    let report: serde_json::Value = serde_json::from_slice(&read(&ingested.join("filter_report.json"))).unwrap();
    assert_eq!(report["retained"], 120);

    let stats = tmp.path().join("stats");
    ok(&[
        "stats",
        "--in",
        p(&d),
        "--out",
        p(&stats),
        "--pre-filter-stats",
        "false",
    ]);
    let text = String::from_utf8(read(&stats.join("stats.csv"))).unwrap();
    assert!(text.starts_with("measure,group,stratum_kind,stratum,n_patients,n_deceased,pct_deceased\n"));
    // G1 + G2 + G3 over the full cohort, per measure
    let total: usize = text
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("PLATELETS,") && l.contains(",all,all,"))
        .map(|l| l.split(',').nth(4).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 120);

    let labels = tmp.path().join("labels");
    ok(&["label", "--in", p(&d), "--out", p(&labels), "--window-close", "-60:+30"]);
    let feats = tmp.path().join("features");
    let labels_file = labels.join("labels.csv");
    ok(&[
        "features",
        "--in",
        p(&d),
        "--out",
        p(&feats),
        "--version",
        "v4",
        "--labels",
        p(&labels_file),
    ]);
    let header = String::from_utf8(read(&feats.join("features.csv"))).unwrap();
    let header = header.lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 2 + 88);
    assert!(header.starts_with("patient_id,target,lbl_PLATELETS,"));

    // recomputed labels give the same matrix
    let feats2 = tmp.path().join("features2");
    ok(&["features", "--in", p(&d), "--out", p(&feats2), "--version", "v4"]);
    assert_eq!(read(&feats.join("features.csv")), read(&feats2.join("features.csv")));

    let sel = tmp.path().join("select");
    let fcsv = feats.join("features.csv");
    ok(&["select", "--in", p(&fcsv), "--out", p(&sel), "--k", "7"]);
    let ranking = String::from_utf8(read(&sel.join("ranking.csv"))).unwrap();
    assert_eq!(ranking.lines().count(), 1 + 88);
    assert_eq!(ranking.lines().filter(|l| l.ends_with(",1")).count(), 7);

    // inputs are untouched and outputs carry the echoed config
    assert_eq!(read(&d.join("observations.csv")), before);
    for dir in [&ingested, &stats, &labels, &feats, &sel] {
        assert!(dir.join("run_config.toml").exists());
    }
}

#[test]
fn empty_cohort_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    fs::create_dir(&d).unwrap();
    // diagnosed less than two years before the end of the extract, alive
    fs::write(
        d.join("patients.csv"),
        "patient_id,sex,age_at_diagnosis,diagnosis_date,death_date\np1,F,61,2017-01-01,\n",
    )
    .unwrap();
    fs::write(
        d.join("observations.csv"),
        "patient_id,measure,value,date,ref_low,ref_high\np1,MCV,90,2016-12-20,80,100\n",
    )
    .unwrap();
    fs::write(d.join("cohort_meta.json"), r#"{"data_end_date":"2017-12-31"}"#).unwrap();
    let out = run(&["evaluate", "--in", p(&d), "--out", p(&tmp.path().join("e"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("empty cohort after inclusion filters"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn schema_errors_name_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    fs::create_dir(&d).unwrap();
    fs::write(
        d.join("patients.csv"),
        "patient_id,sex,age_at_diagnosis,diagnosis_date,death_date\np1,F,61,2010-01-01,\np2,X,61,2010-01-01,\n",
    )
    .unwrap();
    fs::write(
        d.join("observations.csv"),
        "patient_id,measure,value,date,ref_low,ref_high\n",
    )
    .unwrap();
    let out = run(&[
        "ingest",
        "--in",
        p(&d),
        "--out",
        p(&tmp.path().join("o")),
        "--data-end-date",
        "2017-12-31",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("patients.csv:3") && err.contains("sex"), "{err}");
}

#[test]
fn bad_invocations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(!run(&["frobnicate"]).status.success());
    assert!(!run(&["evaluate", "--in", "x", "--out", "y", "--no-such-flag"])
        .status
        .success());
    let missing = run(&[
        "stats",
        "--in",
        p(&tmp.path().join("nope")),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    let d = tmp.path().join("d");
    ok(&["synth", "--n", "30", "--seed", "1", "--out", p(&d)]);
    let same = run(&["ingest", "--in", p(&d), "--out", p(&d)]);
    assert!(!same.status.success());
    let bad_window = run(&[
        "label",
        "--in",
        p(&d),
        "--out",
        p(&tmp.path().join("l")),
        "--window-close",
        "+30:-60",
    ]);
    assert!(!bad_window.status.success());
}
