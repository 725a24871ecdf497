use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crossconf"));
    c.env_remove("CROSSCONF_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// y = 2 x1 − x2 + small deterministic wiggle.
fn write_linear_csv(dir: &Path, n: usize, noise: f64) -> PathBuf {
    let mut s = String::from("x1,x2,y\n");
    for i in 0..n {
        let x1 = (i as f64 * 0.37).sin() * 3.0;
        let x2 = (i as f64 * 0.11).cos() * 2.0 + i as f64 / n as f64;
        let y = 2.0 * x1 - x2 + noise * (i as f64 * 1.7).sin();
        writeln!(s, "{x1},{x2},{y}").unwrap();
    }
    let path = dir.join("train.csv");
    std::fs::write(&path, s).unwrap();
    path
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn data_lines(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

const SIM: &[&str] = &[
    "simulate", "--n", "40", "--p", "2:6:2", "--reps", "20", "--k", "4", "--methods", "mod,e-mod,u-mod,eu-mod,cross,split,cv+",
];

#[test]
fn simulate_is_reproducible_across_threads() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let mut args = SIM.to_vec();
    args.extend(["--seed", "7", "--out"]);
    let oa = bin().args(&args).arg(&a).args(["--threads", "1"]).output().unwrap();
    let ob = bin().args(&args).arg(&b).args(["--threads", "4"]).output().unwrap();
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success(), "{}", stderr(&ob));
    let (ca, cb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.lines().any(|l| l.starts_with("# config ") && l.contains("\"seed\":7")));
    let lines = data_lines(&text);
    assert_eq!(
        lines[0],
        "method,p,reps,coverage,mean_width,sd_width,median_width,min_width,max_width,n_infinite"
    );
    assert_eq!(lines.len(), 1 + 7 * 3);
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 21);
    assert_eq!(json["config"]["seed"], 7);
}

#[test]
fn env_seed_matches_flag_seed() {
    let mut args = SIM.to_vec();
    args.extend(["--seed", "3"]);
    let flag = run(&args);
    let env = bin().args(SIM).env("CROSSCONF_SEED", "3").output().unwrap();
    assert!(env.status.success(), "{}", stderr(&env));
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn single_rep_gives_one_row_per_method_and_p() {
    let o = run(&["simulate", "--n", "30", "--p", "3,5", "--reps", "1", "--methods", "mod,cross", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows = &data_lines(&out)[1..];
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert_eq!(r.split(',').nth(2), Some("1"));
    }
}

#[test]
fn randomized_methods_need_a_seed() {
    let o = run(&["simulate", "--n", "30", "--p", "3", "--reps", "2", "--methods", "u-mod"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
    let o = run(&["simulate", "--n", "30", "--p", "3", "--reps", "2", "--methods", "u-mod", "--entropy"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# seed_source entropy"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["simulate", "--alpha", "1.5", "--seed", "1"],
        vec!["simulate", "--p", "5:1:1", "--seed", "1"],
        vec!["simulate", "--methods", "nope", "--seed", "1"],
        vec!["simulate", "--fold-mode", "varying", "--methods", "e-cross", "--seed", "1"],
        vec!["simulate", "--regressor", "ridge:-1", "--seed", "1"],
        vec!["simulate", "--score", "absolute"],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn predict_hull_gives_one_interval() {
    let dir = TempDir::new().unwrap();
    let train = write_linear_csv(dir.path(), 60, 0.8);
    let query = write(dir.path(), "q.csv", "x1,x2\n0.5,0.2\n-1,1\n");
    let o = bin()
        .args(["predict", "--target", "y", "--methods", "mod,e-mod,u-mod,eu-mod,cross,cv+,split", "--seed", "4", "--hull"])
        .arg("--data")
        .arg(&train)
        .arg("--query")
        .arg(&query)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let json: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let preds = json["predictions"].as_array().unwrap();
    assert_eq!(preds.len(), 2);
    for p in preds {
        for (m, set) in p["sets"].as_object().unwrap() {
            assert_eq!(set.as_array().unwrap().len(), 1, "{m}");
        }
    }
}

#[test]
fn predict_narrow_set_at_training_row() {
    let dir = TempDir::new().unwrap();
    let train = write_linear_csv(dir.path(), 50, 0.01);
    let (x1, x2) = ((3.0f64 * 0.37).sin() * 3.0, (3.0f64 * 0.11).cos() * 2.0 + 3.0 / 50.0);
    let query = write(dir.path(), "q.csv", &format!("x1,x2\n{x1},{x2}\n"));
    let o = bin()
        .args(["predict", "--target", "y", "--methods", "mod,cross", "--seed", "2", "--alpha", "0.7"])
        .arg("--data")
        .arg(&train)
        .arg("--query")
        .arg(&query)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let json: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let fitted = 2.0 * x1 - x2;
    for m in ["mod", "cross"] {
        let set = json["predictions"][0]["sets"][m].as_array().unwrap();
        assert!(!set.is_empty(), "{m}");
        let lo = set[0][0].as_f64().unwrap();
        let hi = set[set.len() - 1][1].as_f64().unwrap();
        assert!(hi - lo < 0.05, "{m}: [{lo}, {hi}]");
        assert!(lo - 0.01 <= fitted && fitted <= hi + 0.01, "{m}: [{lo}, {hi}] vs {fitted}");
    }
}

#[test]
fn predict_warns_when_level_cannot_exclude() {
    let dir = TempDir::new().unwrap();
    let train = write_linear_csv(dir.path(), 20, 0.5);
    let query = write(dir.path(), "q.csv", "x1,x2\n0,0\n");
    // K = 5 folds of 4: 0.1 * 5 <= 1
    let o = bin()
        .args(["predict", "--target", "y", "--methods", "mod", "--seed", "1"])
        .arg("--data")
        .arg(&train)
        .arg("--query")
        .arg(&query)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("whole real line"), "{}", stderr(&o));
    let json: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["predictions"][0]["sets"]["mod"], serde_json::json!([["-inf", "inf"]]));
}

#[test]
fn predict_data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let train = write_linear_csv(dir.path(), 30, 0.5);
    let wide = write(dir.path(), "wide.csv", "a,b,c\n1,2,3\n");
    let o = bin()
        .args(["predict", "--target", "y", "--methods", "mod", "--seed", "1"])
        .arg("--data")
        .arg(&train)
        .arg("--query")
        .arg(&wide)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("feature"));

    let text = write(dir.path(), "text.csv", "x1,name,y\n1,abc,2\n2,def,3\n");
    let q = write(dir.path(), "q.csv", "x1\n1\n");
    let o = bin()
        .args(["predict", "--target", "y", "--seed", "1"])
        .arg("--data")
        .arg(&text)
        .arg("--query")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`name`"), "{}", stderr(&o));

    let o = bin()
        .args(["predict", "--target", "missing", "--seed", "1"])
        .arg("--data")
        .arg(&train)
        .arg("--query")
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn run_on_csv_writes_report() {
    let dir = TempDir::new().unwrap();
    let train = write_linear_csv(dir.path(), 120, 1.0);
    let out = dir.path().join("real.csv");
    let o = bin()
        .args([
            "run", "--target", "y", "--train-size", "80", "--test-size", "30", "--trials", "5", "--seed", "3",
            "--methods", "mod,eu-mod,split-2alpha", "--intercept",
        ])
        .arg("--data")
        .arg(&train)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = &data_lines(&text)[1..];
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("5")));
    let o = bin()
        .args(["run", "--target", "y", "--train-size", "100", "--test-size", "30", "--seed", "3"])
        .arg("--data")
        .arg(&train)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_table_values() {
    let o = run(&["bounds", "--alpha", "0.1", "--k", "5,100,n,sqrt", "--n", "100"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines = data_lines(&out);
    assert_eq!(lines[0], "K,n,bound_small_K,bound_large_K,combined,floor");
    let row = |k: &str| -> Vec<f64> {
        lines
            .iter()
            .find(|l| l.starts_with(&format!("{k},100,")))
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect()
    };
    assert!((row("5")[2] - 0.73143).abs() < 1e-5);
    assert_eq!(row("100")[3], 0.8);
    assert_eq!(row("10").len(), 6);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(v[4] >= v[5]);
    }
}
