//! End-to-end checks of the `fa1f` binary: outputs exist, parse, and are
//! byte-identical across reruns with the same config and seed.

use std::fs;
use std::path::Path;
use std::process::Command;

fn run(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fa1f"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("fa1f-cli-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn oracle_decay_produces_curve_and_summary() {
    let dir = tempdir("oracle");
    let cfg = write_config(
        &dir,
        "oracle.cfg",
        "[graph]\nkind = path\nradius = 1\n\n[oracle]\nq = 0.5\ny = 0\nprobe = 1\nt_grid = 0.5, 1, 2, 4\n",
    );
    let out = run(
        &["oracle-decay", "--config", &cfg, "--out", "run1"],
        &dir,
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let curve = fs::read_to_string(dir.join("run1/curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next().unwrap(), "t,exact_prob,stationary_prob,abs_diff");
    assert_eq!(lines.count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run1/summary.json")).unwrap()).unwrap();
    let gap = summary["gap"].as_f64().unwrap();
    assert!((gap - 0.5).abs() < 1e-9, "2-site gap at q=0.5 is q");
}

#[test]
fn same_seed_reproduces_outputs_byte_for_byte() {
    let dir = tempdir("determinism");
    let cfg = write_config(
        &dir,
        "assembly.cfg",
        "[graph]\nkind = half_line\nradius = 80\n\n[assembly]\nq = 0.9\ny = 0\nx = 3\nt_grid = 2, 5, 8\nmargin_factor = 3\n",
    );
    for out_dir in ["a", "b"] {
        let out = run(
            &[
                "assembly",
                "--config",
                &cfg,
                "--seed",
                "7",
                "--replicas",
                "400",
                "--out",
                out_dir,
            ],
            &dir,
        );
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.join("a/decay.csv")).unwrap();
    let b = fs::read(dir.join("b/decay.csv")).unwrap();
    assert_eq!(a, b, "decay.csv must be byte-identical for a fixed seed");
    let sa = fs::read(dir.join("a/summary.json")).unwrap();
    let sb = fs::read(dir.join("b/summary.json")).unwrap();
    assert_eq!(sa, sb);
}

#[test]
fn scheme_dump_roundtrips_against_the_library() {
    let dir = tempdir("scheme");
    let cfg = write_config(
        &dir,
        "scheme.cfg",
        "[graph]\nkind = path\nradius = 2\n\n[scheme]\nhorizon = 5\nq = 0.7\n",
    );
    let out = run(
        &["sample-scheme", "--config", &cfg, "--seed", "11", "--out", "s"],
        &dir,
    );
    assert!(out.status.success());
    let dump = fs::read_to_string(dir.join("s/scheme.txt")).unwrap();
    for line in dump.lines() {
        let cols: Vec<&str> = line.split(' ').collect();
        assert_eq!(cols.len(), 3);
        let site: usize = cols[0].parse().unwrap();
        let time: f64 = cols[1].parse().unwrap();
        let gamma: u8 = cols[2].parse().unwrap();
        assert!(site < 3 && time > 0.0 && time <= 5.0 && gamma <= 1);
    }
}

#[test]
fn fit_command_recovers_synthetic_rate() {
    let dir = tempdir("fit");
    let mut csv = String::from("x,estimate,se\n");
    for i in 1..=6 {
        let t = i as f64;
        csv.push_str(&format!("{t},{},0.001\n", 2.0 * (-0.5 * t).exp()));
    }
    fs::write(dir.join("series.csv"), csv).unwrap();
    let cfg = write_config(&dir, "fit.cfg", "[fit]\ninput = series.csv\n");
    let out = run(&["fit", "--config", &cfg, "--out", "f"], &dir);
    assert!(out.status.success());
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("f/fit.json")).unwrap()).unwrap();
    assert!((fit["rate"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert!((fit["prefactor"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn precondition_failures_emit_error_json_and_nonzero_exit() {
    let dir = tempdir("error");
    // hitting bound is vacuous at q <= 1/2
    let cfg = write_config(
        &dir,
        "nav.cfg",
        "[navigate]\nq_grid = 0.4\nd_grid = 3\n",
    );
    let out = run(
        &["navigate-stats", "--config", &cfg, "--replicas", "10", "--out", "n"],
        &dir,
    );
    assert!(!out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("1/2"));
}

#[test]
fn renorm_tails_writes_all_artifacts() {
    let dir = tempdir("renorm");
    let cfg = write_config(
        &dir,
        "renorm.cfg",
        "[renorm]\nblock = 6\nn_max = 5\nfit_lo = 1\nfit_hi = 5\nchains = 4\n",
    );
    let out = run(
        &["renorm-tails", "--config", &cfg, "--replicas", "2000", "--out", "r"],
        &dir,
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let death = fs::read_to_string(dir.join("r/death_tail.csv")).unwrap();
    assert!(death.starts_with("K,n,p_hat,se,bound"));
    assert_eq!(death.lines().count(), 7);
    let chains = fs::read_to_string(dir.join("r/chains.jsonl")).unwrap();
    assert_eq!(chains.lines().count(), 4);
    for line in chains.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["outcome"].is_string() || v["outcome"].is_object());
    }
}
