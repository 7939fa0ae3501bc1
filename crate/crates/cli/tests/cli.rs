use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn redcore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redcore"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.json");
    let body = format!(
        r#"{{
  "data": {{"n_samples": 240, "n_classes": 3, "latent_dim": 4, "modality_dims": [5, 4, 3],
            "informativeness": [0.7, 0.5, 0.4], "missing_rates": [0.5, 0.2, 0.3], "seed": 5}},
  "train": {{"outer_steps": 8, "batch_size": 32, "eval_every": 4}}{extra}
}}"#
    );
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn gen_small(dir: &Path) -> (String, String) {
    let cfg = small_config(dir, "");
    let data = dir.join("data");
    let o = redcore(&["gen-data", "--config", &cfg, "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (cfg, p(&data).to_string())
}

#[test]
fn gen_data_layout_and_realized_rates() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("d");
    let o = redcore(&["gen-data", "--out", p(&out), "--rates", "0.8,0.2,0.5", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    for f in ["meta.json", "modality_1.csv", "modality_2.csv", "modality_3.csv", "labels.csv", "presence.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let declared = [0.8, 0.2, 0.5];
    let text = stdout(&o);
    let realized: Vec<f64> = text
        .lines()
        .filter(|l| l.starts_with('m') && !l.starts_with("modality"))
        .map(|l| l.split_whitespace().nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(realized.len(), 3);
    for (r, d) in realized.iter().zip(declared) {
        assert!((r - d).abs() <= 0.05, "realized {r} vs declared {d}");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = redcore(&["gen-data", "--out", p(&tmp.path().join("d")), "--rates", "1.0,0.2,0.5"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"outer_steps": "many"}}"#).unwrap();
    assert_eq!(code(&redcore(&["gen-data", "--config", p(&bad), "--out", p(tmp.path())])), 2);

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"trian": {}}"#).unwrap();
    assert_eq!(code(&redcore(&["gen-data", "--config", p(&unknown), "--out", p(tmp.path())])), 2);

    assert_eq!(code(&redcore(&["train", "--data", p(tmp.path()), "--mode", "both", "--out", "x"])), 2);
    assert_eq!(code(&redcore(&["frobnicate"])), 2);
}

#[test]
fn io_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nothing");
    assert_eq!(code(&redcore(&["gen-data", "--config", p(&missing), "--out", p(tmp.path())])), 3);
    assert_eq!(code(&redcore(&["train", "--data", p(&missing), "--out", p(&tmp.path().join("r"))])), 3);
    let (_, data) = gen_small(tmp.path());
    assert_eq!(code(&redcore(&["eval", "--checkpoint", p(&missing), "--data", &data])), 3);
}

#[test]
fn train_is_deterministic_and_modes_compare() {
    let tmp = TempDir::new().unwrap();
    let (cfg, data) = gen_small(tmp.path());
    let run = |name: &str, mode: &str| {
        let out = tmp.path().join(name);
        let o = redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&out), "--mode", mode, "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("8 outer steps, 24 Adam steps, 8 eta updates"));
        out
    };
    let a = run("a", "redcore");
    let b = run("b", "redcore");
    let c = run("c", "core");
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "trace.csv"), read(&b, "trace.csv"));
    assert_eq!(read(&a, "checkpoint/weights.bin"), read(&b, "checkpoint/weights.bin"));

    let header = |d: &Path| String::from_utf8(read(d, "metrics.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header(&a), header(&c));
    let rows = |d: &Path| String::from_utf8(read(d, "metrics.csv")).unwrap().lines().count();
    assert_eq!(rows(&a), rows(&c));
    assert!(a.join("checkpoint/manifest.json").is_file());
}

#[test]
fn resume_matches_unbroken_run() {
    let tmp = TempDir::new().unwrap();
    let (cfg, data) = gen_small(tmp.path());
    let full = tmp.path().join("full");
    let head = tmp.path().join("head");
    let tail = tmp.path().join("tail");
    assert_eq!(code(&redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&full)])), 0);
    let o = redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&head), "--stop-after", "3"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("3 outer steps"));
    let ckpt = head.join("checkpoint");
    let o = redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&tail), "--resume", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "trace.csv", "checkpoint/weights.bin"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(tail.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn eval_table_has_seven_combos_and_average() {
    let tmp = TempDir::new().unwrap();
    let (cfg, data) = gen_small(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&run)])), 0);
    let ev = tmp.path().join("ev");
    let o = redcore(&["eval", "--checkpoint", p(&run.join("checkpoint")), "--data", &data, "--out", p(&ev)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 9);

    let mut r = csv::Reader::from_path(ev.join("eval.csv")).unwrap();
    let rows: Vec<(String, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[1].parse().unwrap())
        })
        .collect();
    let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["A", "V", "L", "AV", "AL", "VL", "AVL", "Ave."]);
    let mean = rows[..7].iter().map(|(_, f)| f).sum::<f64>() / 7.0;
    assert!((rows[7].1 - mean).abs() < 1e-9);
    assert!(rows.iter().all(|(_, f)| (0.0..=1.0).contains(f)));
}

#[test]
fn csv_outputs_parse_round_trip() {
    let tmp = TempDir::new().unwrap();
    let (cfg, data) = gen_small(tmp.path());
    let run = tmp.path().join("run");
    assert_eq!(code(&redcore(&["train", "--config", &cfg, "--data", &data, "--out", p(&run)])), 0);
    for f in ["metrics.csv", "trace.csv"] {
        let original = fs::read_to_string(run.join(f)).unwrap();
        let mut r = csv::Reader::from_reader(original.as_bytes());
        let header = r.headers().unwrap().clone();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).unwrap();
        for rec in r.records() {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), header.len());
            w.write_record(&rec).unwrap();
        }
        assert_eq!(String::from_utf8(w.into_inner().unwrap()).unwrap(), original, "{f}");
    }
    let mut r = csv::Reader::from_path(run.join("metrics.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        let f1: f64 = rec[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
}

#[test]
fn sweep_counts_rows_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(
        tmp.path(),
        r#",
  "sweep": {"missing_rates": [[0.8, 0.5, 0.5], [0.8, 0.5, 0.2]], "modes": ["core", "redcore"], "seeds": [0, 1, 2]}"#,
    );
    let out = tmp.path().join("sweep");
    let o = redcore(&["sweep", "--config", &cfg, "--out", p(&out), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("12 cells: 12 run, 0 already complete, 0 failed"));
    assert_eq!(fs::read_dir(out.join("cells")).unwrap().count(), 12);
    let first = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(first.lines().count(), 1 + 12 * 8);
    assert_eq!(first.lines().next().unwrap(), "rate_1,rate_2,rate_3,mode,seed,combo,f1_weighted");

    let o = redcore(&["sweep", "--config", &cfg, "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0 run, 12 already complete"));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), first);
}

#[test]
fn sweep_records_failed_cells() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(
        tmp.path(),
        r#",
  "sweep": {"missing_rates": [[1.0, 0.5, 0.5], [0.5, 0.5, 0.2]], "modes": ["red"], "seeds": [0]}"#,
    );
    let out = tmp.path().join("sweep");
    let o = redcore(&["sweep", "--config", &cfg, "--out", p(&out)]);
    assert_eq!(code(&o), 0);
    assert!(out.join("cells/mr1_0.5_0.5-red-s0/error.txt").is_file());
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 1 + 8);

    let all_bad = small_config(
        tmp.path(),
        r#",
  "sweep": {"missing_rates": [[1.0, 0.5, 0.5]], "modes": ["red"], "seeds": [0]}"#,
    );
    assert_eq!(code(&redcore(&["sweep", "--config", &all_bad, "--out", p(&tmp.path().join("s2"))])), 2);
}

#[test]
fn verify_suites_and_mutation() {
    let o = redcore(&["verify", "--suite", "projection", "--trials", "500"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("projection")).unwrap().to_string();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[1], "500");
    assert_eq!(fields[2], "0");

    for suite in ["lemma1", "ra", "direction"] {
        assert_eq!(code(&redcore(&["verify", "--suite", suite])), 0, "{suite}");
    }
    let o = redcore(&["verify", "--suite", "direction", "--inject-sign-flip"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
    assert_eq!(code(&redcore(&["verify", "--suite", "nonsense"])), 2);
}

#[test]
fn default_verify_passes() {
    let o = redcore(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).matches(" pass").count(), 5);
}
