//! Behavior of the `treespin` binary: output shapes, exit codes, determinism.

use std::process::{Command, Output};

use serde_json::Value;

fn treespin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treespin")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn coloring_model_prints_kernel() {
    let o = treespin(&["model", "--k", "3"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("i,j,m_ij,pi_i\n"));
    assert!(s.contains("1,2,0.5,"));
    assert_eq!(s.lines().count(), 10);
}

#[test]
fn two_coloring_is_rejected() {
    let o = treespin(&["model", "--type", "coloring", "--k", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not ergodic"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(treespin(&["--bogus"]).status.code(), Some(2));
    assert_eq!(treespin(&["model", "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn guard_exits_three() {
    let o = treespin(&["mixing", "--k", "6", "--depth", "2", "--guard", "100"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn model_json_echoes_parameters() {
    let o = treespin(&["model", "--k", "4", "--format", "json", "--seed", "7"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["spec_version"], "1.0");
    assert_eq!(v["parameters"]["global"]["seed"], 7);
    assert_eq!(v["parameters"]["global"]["k"], 4);
    assert!((v["result"]["lambda"].as_f64().unwrap() + 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn model_file_is_read() {
    let dir = std::env::temp_dir().join(format!("treespin-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("potts.txt");
    std::fs::write(&path, "k=2\ntype=custom\nU(1,1)=0\nU(1,2)=1\nU(2,1)=1\nU(2,2)=0\nW(1)=0\nW(2)=0\n").unwrap();
    let o = treespin(&["model", "--model", path.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = v["result"]["kernel"].as_array().unwrap();
    let stay = 1.0 / (1.0 + (-1f64).exp());
    assert!((m[0][0].as_f64().unwrap() - stay).abs() < 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn recursion_first_level_is_three_quarters() {
    let o = treespin(&["recursion", "--k", "3", "--d", "2", "--levels", "1"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let header: Vec<&str> = s.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "p_b").unwrap();
    let rows: Vec<Vec<&str>> = s.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][col], "1");
    assert_eq!(rows[1][col], "0.75");
}

#[test]
fn scan_has_documented_columns() {
    let o = treespin(&["scan", "--k-min", "10", "--k-max", "10", "--levels", "8"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next().unwrap(), "k,d,beta,l,p_r,p2,p3,p_b,y_l,certified,l0,log_p_b");
}

#[test]
fn mixing_row_has_documented_columns() {
    let o = treespin(&["mixing", "--k", "3", "--depth", "1", "--trials", "20"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let mut lines = s.lines();
    assert_eq!(lines.next().unwrap(), "n,depth,k,d,dynamics,gap,t_mix");
    assert!(lines.next().unwrap().starts_with("3,1,3,2,glauber,"));
}

#[test]
fn samples_are_proper_colorings() {
    let o = treespin(&["sample", "--k", "3", "--depth", "2", "--samples", "20"]);
    let s = stdout(&o);
    for line in s.lines().skip(1) {
        let cfg: Vec<u8> = line.split(',').nth(1).unwrap().split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(cfg.len(), 7);
        for v in 1..7 {
            assert_ne!(cfg[v], cfg[(v - 1) / 2]);
        }
    }
}

#[test]
fn same_seed_same_output() {
    for args in [
        vec!["sample", "--samples", "50", "--seed", "11"],
        vec!["dynamics", "--steps", "40", "--seed", "11"],
        vec!["dynamics", "--dynamics", "component", "--steps", "10", "--seed", "11"],
        vec!["classify", "--samples", "500", "--k", "4", "--d", "3", "--depth", "2", "--seed", "11"],
        vec!["ratio", "--what", "tail", "--monte-carlo", "--samples", "300", "--seed", "11"],
    ] {
        let a = treespin(&args);
        let b = treespin(&args);
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
    let a = treespin(&["sample", "--samples", "50", "--seed", "11"]);
    let b = treespin(&["sample", "--samples", "50", "--seed", "12"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("treespin-out-{}.csv", std::process::id()));
    let o = treespin(&["ratio", "--k", "4", "--max-m", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let s = std::fs::read_to_string(&path).unwrap();
    assert!(s.starts_with("m,contraction_factor\n"));
    assert!(s.contains("\n2,"));
    std::fs::remove_file(&path).ok();
}

#[test]
fn verify_subset_reports_and_times() {
    let o = treespin(&["verify", "--only", "3,5", "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let crit = v["criteria"].as_array().unwrap();
    assert_eq!(crit.len(), 2);
    assert!(crit.iter().all(|c| c["passed"] == true));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("criterion 3") && err.contains("elapsed_ms="));
    assert_eq!(treespin(&["verify", "--only", "11"]).status.code(), Some(1));
}
