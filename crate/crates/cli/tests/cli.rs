//! End-to-end checks of the binary: determinism of output files, format
//! round-trips, configuration validation, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use potrec_cli::files::read_dataset;

fn potrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_potrec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("potrec_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_QUANTUM: &str = "
[run]
mode = quantum

[lattice]
n_points = 14
spacing = 0.4
origin = centered
boundary = dirichlet

[physics]
mass = 0.5
beta = 1.5

[prior]
operator = laplacian
lambda = 0.1
reference = zero

[data]
source = sample
n_samples = 15
seed = 5
true_potential = gaussian_well 3.0 1.0 0.0

[optimizer]
gradient_tolerance = 1e-3
max_iterations = 40
require_convergence = false
";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn identical_config_and_seed_give_byte_identical_outputs() {
    let dir = temp_dir("determinism");
    let cfg = write_config(&dir, "run.ini", SMALL_QUANTUM);
    for out in ["a", "b"] {
        let r = potrec(&[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join(out).to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for file in ["curves.csv", "dataset.txt", "summary.txt", "config_resolved.ini"] {
        let a = std::fs::read(dir.join("a").join(file)).unwrap();
        let b = std::fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn seed_flag_overrides_config_and_is_echoed() {
    let dir = temp_dir("seed_flag");
    let cfg = write_config(&dir, "run.ini", SMALL_QUANTUM);
    for (out, seed) in [("s1", "11"), ("s2", "12")] {
        let r = potrec(&[
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join(out).to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(r.status.success());
    }
    let d1 = std::fs::read_to_string(dir.join("s1/dataset.txt")).unwrap();
    let d2 = std::fs::read_to_string(dir.join("s2/dataset.txt")).unwrap();
    assert_ne!(d1, d2);
    let echo = std::fs::read_to_string(dir.join("s1/config_resolved.ini")).unwrap();
    assert!(echo.contains("seed = 11"));
}

#[test]
fn unknown_config_keys_exit_with_code_2() {
    let dir = temp_dir("unknown_key");
    let cfg = write_config(&dir, "bad.ini", &format!("{SMALL_QUANTUM}\nmystery_key = 3\n"));
    let r = potrec(&["reconstruct", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("mystery_key"));
}

#[test]
fn missing_dataset_file_exits_with_code_2() {
    let dir = temp_dir("missing_file");
    let cfg = write_config(
        &dir,
        "run.ini",
        &SMALL_QUANTUM.replace(
            "source = sample",
            "source = file\nfile = /nonexistent/data.txt",
        ),
    );
    let r = potrec(&["reconstruct", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn zero_iteration_budget_echoes_the_initial_guess() {
    let dir = temp_dir("zero_budget");
    let text = SMALL_QUANTUM
        .replace("max_iterations = 40", "max_iterations = 0\npin_boundary = none")
        .replace("reference = zero", "reference = gaussian_well 2.0 1.0 0.0");
    let cfg = write_config(&dir, "run.ini", &text);
    let out = dir.join("out");
    let r = potrec(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    for line in curves.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], fields[3], "v_rec must equal v_ref: {line}");
    }
}

#[test]
fn curves_reload_to_bit_identical_values() {
    let dir = temp_dir("curves_roundtrip");
    let cfg = write_config(&dir, "run.ini", SMALL_QUANTUM);
    let out = dir.join("out");
    let r = potrec(&[
        "curves",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    for line in text.lines().skip(1) {
        for field in line.split(',').filter(|f| !f.is_empty()) {
            let value: f64 = field.parse().unwrap();
            assert_eq!(format!("{value:.16e}"), field, "field not round-trip stable");
        }
    }
}

#[test]
fn sampled_datasets_read_back_exactly() {
    let dir = temp_dir("dataset_roundtrip");
    let cfg = write_config(&dir, "run.ini", SMALL_QUANTUM);
    let out = dir.join("out");
    let r = potrec(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let path = out.join("dataset.txt");
    let data = read_dataset(&path).unwrap();
    assert_eq!(data.len(), 15);
    // Re-serializing the parsed coordinates reproduces the stored text.
    let text = std::fs::read_to_string(&path).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    for (line, sample) in body.iter().zip(data.samples()) {
        let expect: Vec<String> = sample.iter().map(|x| format!("{x:.16e}")).collect();
        assert_eq!(*line, expect.join(" "));
    }
}

#[test]
fn sweep_mode_runs_each_config_in_isolation() {
    let dir = temp_dir("sweep");
    let a = write_config(&dir, "first.ini", SMALL_QUANTUM);
    let b = write_config(
        &dir,
        "second.ini",
        &SMALL_QUANTUM.replace("seed = 5", "seed = 6"),
    );
    let sweep = dir.join("sweep.txt");
    std::fs::write(
        &sweep,
        format!("{}\n{}\n", a.display(), b.display()),
    )
    .unwrap();
    let out = dir.join("out");
    let r = potrec(&[
        "reconstruct",
        "--sweep",
        sweep.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("first/curves.csv").exists());
    assert!(out.join("second/curves.csv").exists());
}

#[test]
fn resolved_config_lists_defaulted_values() {
    let dir = temp_dir("echo_defaults");
    let cfg = write_config(&dir, "run.ini", SMALL_QUANTUM);
    let out = dir.join("out");
    let r = potrec(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let echo = std::fs::read_to_string(out.join("config_resolved.ini")).unwrap();
    // Keys never mentioned in the input must appear with their defaults.
    for needle in [
        "step_growth = 1.2",
        "posterior_tolerance = 0.0000000001",
        "preconditioner = prior",
        "wavefn_boundary = dirichlet",
    ] {
        assert!(echo.contains(needle), "echo missing '{needle}':\n{echo}");
    }
}

#[test]
fn gradcheck_exits_cleanly_with_a_table() {
    let r = potrec(&["gradcheck", "--seed", "7"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("mean-field likelihood gradient"));
    assert!(stdout.contains("pass"));
    assert!(!stdout.contains("FAIL"));
}
