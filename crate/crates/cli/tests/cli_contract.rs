use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_densecotrain");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("DENSECOTRAIN_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

fn parse_svg(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc =
        roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

/// A small synthetic config so full runs finish in seconds.
fn small_config(dir: &Path, extra: &str) {
    write(
        dir,
        "small.json",
        &format!(
            r#"{{"dataset": {{"kind": "synthetic"}}, "n_labeled": 60, "n_unlabeled": 60,
                "cotrain": {{"max_rounds": 1}}{extra}}}"#
        ),
    );
}

fn strip_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn synth_gen_counts_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "synth-gen",
        "--images",
        "10",
        "--rows",
        "5",
        "--cols",
        "8",
        "--seed",
        "7",
    ];
    let a = run(d.path(), &[&args[..], &["--out", "a"]].concat());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let csv = std::fs::read_to_string(d.path().join("a/annotations.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 400);
    let b = run(d.path(), &[&args[..], &["--out", "b"]].concat());
    assert_eq!(code(&b), 0);
    assert_eq!(
        csv,
        std::fs::read_to_string(d.path().join("b/annotations.csv")).unwrap()
    );

    let missing = run(d.path(), &["synth-gen", "--images", "10"]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--seed"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    write(
        p,
        "gt.csv",
        "a.jpg,0,0,10,10,object,100,100\na.jpg,20,0,30,10,object,100,100\n",
    );
    write(p, "bad_gt.csv", "a.jpg,0,0,ten,10,object,100,100\n");
    write(
        p,
        "ok.jsonl",
        r#"{"image_id":"a","detections":[{"x1":0,"y1":0,"x2":10,"y2":10,"score":0.9,"label":0}]}"#,
    );
    write(p, "garbled.jsonl", "{not json\n");
    write(
        p,
        "score.jsonl",
        r#"{"image_id":"a","detections":[{"x1":0,"y1":0,"x2":10,"y2":10,"score":1.5,"label":0}]}"#,
    );
    write(p, "unknown.jsonl", r#"{"image_id":"zzz","detections":[]}"#);
    write(
        p,
        "extra.jsonl",
        r#"{"image_id":"a","detections":[],"colour":"red"}"#,
    );
    write(p, "broken.json", "{ \"n_labeled\": ");
    write(
        p,
        "fractions.json",
        r#"{"fractions": {"train": 0.5, "val": 0.1, "test": 0.1}, "seed": 1}"#,
    );
    write(p, "typo.json", r#"{"n_labelled": 5, "seed": 1}"#);
    write(
        p,
        "tiny.json",
        r#"{"n_labeled": 1, "n_unlabeled": 0, "seed": 1}"#,
    );
    std::fs::create_dir(p.join("empty_run")).unwrap();

    let cases: Vec<(Vec<&str>, i32)> = vec![
        (
            vec![
                "evaluate",
                "--predictions",
                "ok.jsonl",
                "--annotations",
                "gt.csv",
            ],
            0,
        ),
        (vec!["no-such-command"], 2),
        (vec!["synth-gen", "--images", "many", "--seed", "1"], 2),
        (vec!["synth-gen", "--images", "0", "--seed", "1"], 2),
        (
            vec![
                "synth-gen",
                "--images",
                "2",
                "--seed",
                "1",
                "--overlap",
                "1.5",
            ],
            2,
        ),
        (
            vec![
                "synth-gen",
                "--images",
                "2",
                "--seed",
                "1",
                "--threads",
                "0",
            ],
            2,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "missing.jsonl",
                "--annotations",
                "gt.csv",
            ],
            3,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "ok.jsonl",
                "--annotations",
                "missing.csv",
            ],
            3,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "garbled.jsonl",
                "--annotations",
                "gt.csv",
            ],
            2,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "score.jsonl",
                "--annotations",
                "gt.csv",
            ],
            2,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "unknown.jsonl",
                "--annotations",
                "gt.csv",
            ],
            2,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "extra.jsonl",
                "--annotations",
                "gt.csv",
            ],
            2,
        ),
        (
            vec![
                "evaluate",
                "--predictions",
                "ok.jsonl",
                "--annotations",
                "bad_gt.csv",
            ],
            2,
        ),
        (
            vec![
                "split",
                "--annotations",
                "gt.csv",
                "--n-labeled",
                "5",
                "--seed",
                "1",
            ],
            2,
        ),
        (
            vec![
                "split",
                "--annotations",
                "gt.csv",
                "--n-labeled",
                "1",
                "--seed",
                "1",
            ],
            0,
        ),
        (
            vec!["cotrain", "--config", "missing.json", "--seed", "1"],
            3,
        ),
        (vec!["cotrain", "--config", "broken.json", "--seed", "1"], 2),
        (vec!["cotrain", "--config", "fractions.json"], 2),
        (vec!["cotrain", "--config", "typo.json"], 2),
        (vec!["cotrain", "--n-labeled", "10"], 2),
        (
            vec!["cotrain", "--config", "tiny.json", "--out", "tiny_run"],
            4,
        ),
        (
            vec!["tune", "--config", "tiny.json", "--algorithm", "hill-climb"],
            2,
        ),
        (vec!["report", "--run", "empty_run"], 3),
        (vec!["report", "--run", "nowhere"], 3),
    ];
    for (args, want) in cases {
        let o = run(p, &args);
        assert_eq!(
            code(&o),
            want,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = run(p, &["report", "--run", "empty_run"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("run_report.json"));
    let o = run(
        p,
        &[
            "evaluate",
            "--predictions",
            "score.jsonl",
            "--annotations",
            "gt.csv",
        ],
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("score.jsonl:1"));
}

#[test]
fn evaluate_fixtures_and_plots() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(
        code(&run(
            p,
            &["synth-gen", "--images", "4", "--seed", "3", "--out", "gen"]
        )),
        0
    );

    // every ground-truth box echoed back with score 1
    let mut rdr = csv::Reader::from_path(p.join("gen/annotations.csv")).unwrap();
    let mut per_image: std::collections::BTreeMap<String, Vec<serde_json::Value>> =
        Default::default();
    for r in rdr.records() {
        let r = r.unwrap();
        let id = r[0].trim_end_matches(".jpg").to_string();
        let n = |i: usize| r[i].parse::<f64>().unwrap();
        per_image.entry(id).or_default().push(serde_json::json!({
            "x1": n(1), "y1": n(2), "x2": n(3), "y2": n(4), "score": 1.0, "label": 0
        }));
    }
    let lines: Vec<String> = per_image
        .iter()
        .map(|(k, v)| serde_json::json!({"image_id": k, "detections": v}).to_string())
        .collect();
    write(p, "copy.jsonl", &lines.join("\n"));
    let o = run(
        p,
        &[
            "evaluate",
            "--predictions",
            "copy.jsonl",
            "--annotations",
            "gen/annotations.csv",
            "--pr-svg",
            "--out",
            "ev",
        ],
    );
    assert_eq!(code(&o), 0);
    assert!(
        stdout(&o).lines().any(|l| l == "mAP 1.0000"),
        "{}",
        stdout(&o)
    );
    let svgs: Vec<_> = std::fs::read_dir(p.join("ev"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|x| x.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert_eq!(svgs.len(), 10);
    svgs.iter().for_each(|s| parse_svg(s));

    write(p, "empty.jsonl", "");
    let o = run(
        p,
        &[
            "evaluate",
            "--predictions",
            "empty.jsonl",
            "--annotations",
            "gen/annotations.csv",
            "--out",
            "ev0",
        ],
    );
    assert_eq!(code(&o), 0);
    for line in stdout(&o).lines() {
        assert!(line.ends_with(" 0.0000"), "{line}");
    }

    write(
        p,
        "three.csv",
        "img.jpg,0,0,10,10,object,100,100\nimg.jpg,20,0,30,10,object,100,100\n",
    );
    write(
        p,
        "three.jsonl",
        r#"{"image_id":"img","detections":[{"x1":0,"y1":0,"x2":10,"y2":10,"score":0.9,"label":0},{"x1":50,"y1":50,"x2":60,"y2":60,"score":0.8,"label":0},{"x1":20,"y1":0,"x2":30,"y2":10,"score":0.7,"label":0}]}"#,
    );
    let o = run(
        p,
        &[
            "evaluate",
            "--predictions",
            "three.jsonl",
            "--annotations",
            "three.csv",
            "--out",
            "ev3",
        ],
    );
    assert!(
        stdout(&o).lines().any(|l| l == "AP@0.50 0.8350"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn split_sizes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(
        code(&run(
            p,
            &[
                "synth-gen",
                "--images",
                "2000",
                "--rows",
                "1",
                "--cols",
                "1",
                "--seed",
                "1",
                "--out",
                "g"
            ]
        )),
        0
    );
    let o = run(
        p,
        &[
            "split",
            "--annotations",
            "g/annotations.csv",
            "--n-labeled",
            "2000",
            "--seed",
            "9",
            "--out",
            "s",
        ],
    );
    assert_eq!(stdout(&o).trim(), "train 1400 val 200 test 400 unlabeled 0");
}

#[test]
fn cotrain_runs_report_and_reproduce() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    small_config(p, "");
    let o = run(
        p,
        &[
            "cotrain",
            "--config",
            "small.json",
            "--seed",
            "5",
            "--out",
            "r1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "run_report.json",
        "config.json",
        "history.csv",
        "checkpoints/checkpoint_000.json",
    ] {
        assert!(p.join("r1").join(f).exists(), "{f}");
    }

    // identical flags into a second directory: identical report apart from timings and the echoed out
    assert_eq!(
        code(&run(
            p,
            &[
                "cotrain",
                "--config",
                "small.json",
                "--seed",
                "5",
                "--out",
                "r2"
            ]
        )),
        0
    );
    let mut a = strip_timings(&p.join("r1/run_report.json"));
    let mut b = strip_timings(&p.join("r2/run_report.json"));
    a["config"].as_object_mut().unwrap().remove("out");
    b["config"].as_object_mut().unwrap().remove("out");
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(p.join("r1/history.csv")).unwrap(),
        std::fs::read(p.join("r2/history.csv")).unwrap()
    );

    // the echoed config alone reproduces the metrics
    let echo = serde_json::to_string(&a["config"]).unwrap();
    write(p, "echo.json", &echo);
    assert_eq!(
        code(&run(
            p,
            &["cotrain", "--config", "echo.json", "--out", "r3"]
        )),
        0
    );
    let c = strip_timings(&p.join("r3/run_report.json"));
    assert_eq!(a["test"], c["test"]);
    assert_eq!(a["history"], c["history"]);

    // report: 3x3 table, one plot, no tuning trace
    let o = run(p, &["report", "--run", "r1"]);
    assert_eq!(code(&o), 0);
    let table: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(table.len(), 4);
    assert_eq!(
        table[0].split_whitespace().collect::<Vec<_>>(),
        ["view", "mAP", "AP.75", "AR300"]
    );
    for (row, name) in table[1..].iter().zip(["A", "B", "combined"]) {
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0], name);
    }
    parse_svg(&p.join("r1/val_map.svg"));
    assert!(!p.join("r1/tuning_trace.svg").exists());

    // zero rounds: just the supervised phase
    assert_eq!(
        code(&run(
            p,
            &[
                "cotrain",
                "--config",
                "small.json",
                "--seed",
                "5",
                "--max-rounds",
                "0",
                "--out",
                "r0"
            ]
        )),
        0
    );
    let z = strip_timings(&p.join("r0/run_report.json"));
    assert_eq!(z["history"].as_array().unwrap().len(), 1);
    assert_eq!(z["best_round"], 0);
    assert_eq!(z["history"][0], a["history"][0]);

    // resume after losing the last checkpoint gives the same report
    std::fs::remove_file(p.join("r2/checkpoints/checkpoint_001.json")).unwrap();
    assert_eq!(
        code(&run(
            p,
            &[
                "cotrain",
                "--config",
                "small.json",
                "--seed",
                "5",
                "--out",
                "r2",
                "--resume"
            ]
        )),
        0
    );
    let mut resumed = strip_timings(&p.join("r2/run_report.json"));
    resumed["config"].as_object_mut().unwrap().remove("out");
    assert_eq!(resumed, b);

    // self-training baseline is recorded in the echo
    assert_eq!(
        code(&run(
            p,
            &[
                "cotrain",
                "--config",
                "small.json",
                "--seed",
                "5",
                "--baseline",
                "self-train",
                "--out",
                "st"
            ]
        )),
        0
    );
    let s = strip_timings(&p.join("st/run_report.json"));
    assert_eq!(s["config"]["cotrain"]["mode"], "self-train");
}

#[test]
fn tune_outputs_feed_cotrain() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    small_config(p, "");
    let o = run(
        p,
        &[
            "tune",
            "--config",
            "small.json",
            "--seed",
            "2",
            "--budget",
            "1",
            "--out",
            "t1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(p.join("t1/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);

    let o = run(
        p,
        &[
            "tune",
            "--config",
            "small.json",
            "--seed",
            "2",
            "--algorithm",
            "sa",
            "--budget",
            "50",
            "--out",
            "t50",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(p.join("t50/trace.csv")).unwrap();
    let best: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(best.len(), 50);
    assert!(best.windows(2).all(|w| w[1] >= w[0]));

    // the emitted vector loads back into a run, and the report picks up the trace
    let o = run(
        p,
        &[
            "cotrain",
            "--config",
            "small.json",
            "--seed",
            "2",
            "--hyper",
            "t50/best_hyper.json",
            "--out",
            "t50",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = strip_timings(&p.join("t50/run_report.json"));
    assert!(r["config"]["hyper"].is_object());
    assert_eq!(code(&run(p, &["report", "--run", "t50"])), 0);
    parse_svg(&p.join("t50/tuning_trace.svg"));

    write(p, "oob.json", r#"{"lr_xgb": 5.0}"#);
    assert_eq!(
        code(&run(
            p,
            &[
                "cotrain",
                "--config",
                "small.json",
                "--seed",
                "2",
                "--hyper",
                "oob.json",
                "--out",
                "x"
            ]
        )),
        2
    );
}
