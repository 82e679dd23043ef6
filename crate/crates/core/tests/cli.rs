use magcgo::cli::{run_command, KEYS};
use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["magcgo".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run_command(&argv)
}

fn summary(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_to_string(dir.join("summary.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn cgo_rejects_h_times_xi_at_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["cgo", "--h", "2.0", "--xi-norm", "2.0", "--out", &out]), 1);
    let s = summary(dir.path());
    assert_eq!(s["status"], "validation_error");
    assert_eq!(s["exit_code"], "1");
    assert!(s["error"].contains("h|xi|"), "{}", s["error"]);
    assert_eq!(s["config.h"], "2.0 [dimensionless]");
}

#[test]
fn every_config_key_is_echoed_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["eskin-ralston", "--n", "32", "--tau", "0.5", "--frames", "1", "--out", &out]), 0);
    let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    for k in KEYS {
        let prefix = format!("config.{} = ", k.name);
        assert_eq!(text.lines().filter(|l| l.starts_with(&prefix)).count(), 1, "{}", k.name);
    }
    assert!(text.starts_with("schema_version = 1\ncommand = eskin-ralston\nstatus = ok\nexit_code = 0\n"));
}

#[test]
fn usage_errors_exit_64_without_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["bogus"]), 64);
    assert_eq!(run(&[]), 64);
    assert_eq!(run(&["cgo", "--no-such-flag", "1", "--out", &out]), 64);
    assert_eq!(run(&["cgo", "--n", "many", "--out", &out]), 64);
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "n = 16 [count]\nwobble = 3\n").unwrap();
    assert_eq!(run(&["cgo", "--config", cfg.to_str().unwrap(), "--out", &out]), 64);
    std::fs::write(&cfg, "n = 16 [length]\n").unwrap();
    assert_eq!(run(&["cgo", "--config", cfg.to_str().unwrap(), "--out", &out]), 64);
    assert_eq!(run(&["cgo", "--config", dir.path().join("missing.txt").to_str().unwrap()]), 64);
    assert!(!dir.path().join("summary.txt").exists());
}

#[test]
fn reconstruct_config_with_equal_potentials_is_at_the_noise_floor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    let out = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!("# equal pair\nn = 16 [count]\np1 = smooth [kind]\np2 = same [kind]\nxi_max = 1 [lattice_2pi_over_L]\nout = {}\n", out.display()),
    )
    .unwrap();
    assert_eq!(run(&["reconstruct", "--config", cfg.to_str().unwrap()]), 0);
    let s = summary(&out);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["result.at_noise_floor"], "true");
    assert_eq!(s["result.gauge_status"], "gauged");
    assert_eq!(s["config.p2"], "same [kind]");
    assert!(out.join("recon/da12.bin").exists() && out.join("coefficients.csv").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "n = 16\nframes = 3\n").unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["eskin-ralston", "--config", cfg.to_str().unwrap(), "--n", "32", "--tau", "0.5", "--frames", "1", "--out", &out]), 0);
    let s = summary(dir.path());
    assert_eq!(s["config.n"], "32 [count]");
    assert_eq!(s["config.frames"], "1 [count]");
}

#[test]
fn carleman_probe_writes_a_csv_with_the_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["carleman-probe", "--n", "32", "--samples", "30", "--out", &out]), 0);
    let csv = std::fs::read_to_string(dir.path().join("carleman.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "h,epsilon,s,min_ratio,slope,constant");
    assert_eq!(lines.len(), 5);
    let slope = lines[1].split(',').nth(4).unwrap();
    let s = summary(dir.path());
    assert_eq!(s["result.sweep0.slope"], slope);
    assert_eq!(s["config.h"], "0.4,0.2,0.1,0.05 [dimensionless]");
}

#[test]
fn summaries_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let args = ["dbar-verify", "--n", "32", "--samples", "2", "--frames", "2", "--seed", "5", "--out", &out];
    assert_eq!(run(&args), 0);
    let a = std::fs::read(dir.path().join("summary.txt")).unwrap();
    let csv_a = std::fs::read(dir.path().join("dbar_inverse.csv")).unwrap();
    assert_eq!(run(&args), 0);
    assert_eq!(a, std::fs::read(dir.path().join("summary.txt")).unwrap());
    assert_eq!(csv_a, std::fs::read(dir.path().join("dbar_inverse.csv")).unwrap());
    let other = ["dbar-verify", "--n", "32", "--samples", "2", "--frames", "2", "--seed", "6", "--out", &out];
    assert_eq!(run(&other), 0);
    assert_ne!(a, std::fs::read(dir.path().join("summary.txt")).unwrap());
}

#[test]
fn cgo_solution_hands_off_to_reconstruct_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cgo_out = dir.path().join("cgo");
    let common = ["--n", "32", "--p1", "smooth", "--tau-rule", "fixed", "--tau", "0"];
    let mut a: Vec<&str> = vec!["cgo", "--h", "0.3", "--weak-bumps", "0", "--out", cgo_out.to_str().unwrap()];
    a.extend(common);
    assert_eq!(run(&a), 0);
    let c = summary(&cgo_out);
    let rec_out = dir.path().join("rec");
    let input = cgo_out.join("cgo/h0");
    let mut b: Vec<&str> = vec![
        "reconstruct",
        "--p2",
        "same",
        "--xi-max",
        "1",
        "--cgo-input",
        input.to_str().unwrap(),
        "--out",
        rec_out.to_str().unwrap(),
    ];
    b.extend(common);
    assert_eq!(run(&b), 0);
    let r = summary(&rec_out);
    assert_eq!(r["result.cgo_input.r_norm_h1"], c["result.h0.r_norm_h1"]);
    assert_eq!(r["result.cgo_input.stored_r_norm_h1"], c["result.h0.r_norm_h1"]);
    assert_eq!(r["result.cgo_input.h"], c["result.h0.h"]);
}

#[test]
fn stalled_remainder_solve_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let args = ["cgo", "--n", "16", "--p1", "smooth", "--h", "0.3", "--tau-rule", "fixed", "--tau", "0", "--max-iter", "1", "--rel-tol", "1e-12", "--out", &out];
    assert_eq!(run(&args), 2);
    let s = summary(dir.path());
    assert_eq!(s["status"], "no_convergence");
    assert_eq!(s["exit_code"], "2");
}

#[test]
fn forward_reports_gauge_discrepancy_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(run(&["forward", "--p2", "gauge", "--m", "4", "--out", &out]), 0);
    let csv = std::fs::read_to_string(dir.path().join("discrepancy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    let s = summary(dir.path());
    let rel: f64 = s["result.relative_discrepancy"].parse().unwrap();
    assert!(rel < 1e-3, "{rel}");
    assert!(dir.path().join("dataset/q.bin").exists() && dir.path().join("potentials/manifest.json").exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_magcgo");
    let dir = tempfile::tempdir().unwrap();
    let st = Command::new(bin)
        .args(["cgo", "--h", "2.0", "--xi-norm", "2.0", "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
    let st = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(st.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&st.stderr).contains("Usage"));
}
