//! End-to-end checks of the meshsim binary: every subcommand runs, writes
//! the promised file shapes, and the sweep output is reproducible.

use std::path::PathBuf;
use std::process::{Command, Output};

use meshsim_core::matrix::write_matrix;
use meshsim_core::sampling::{sample_haar_qr, SeededRng};

fn meshsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshsim"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn tmp(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("meshsim-cli-{}-{}", std::process::id(), name));
    p
}

fn read(path: &PathBuf) -> String {
    let s = std::fs::read_to_string(path).expect("output file should exist");
    let _ = std::fs::remove_file(path);
    s
}

fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn sweep_writes_a_deterministic_csv() {
    let out_a = tmp("sweep-a.csv");
    let out_b = tmp("sweep-b.csv");
    let base = [
        "sweep",
        "--topology",
        "reck",
        "--methods",
        "none,local,direct,ratio",
        "--N",
        "4,5",
        "--sigma",
        "0.0,0.01",
        "--trials",
        "2",
        "--seed",
        "42",
        "--out",
    ];
    let mut args_a: Vec<&str> = base.to_vec();
    let path_a = out_a.to_str().unwrap().to_string();
    args_a.push(&path_a);
    let run_a = meshsim(&args_a);
    assert!(run_a.status.success(), "{:?}", run_a);

    let mut args_b: Vec<&str> = base.to_vec();
    let path_b = out_b.to_str().unwrap().to_string();
    args_b.push(&path_b);
    assert!(meshsim(&args_b).status.success());

    let a = read(&out_a);
    let b = read(&out_b);
    let mut lines = a.lines();
    assert_eq!(
        lines.next().unwrap(),
        "topology,method,N,error_model,error_param,trial,seed,E_uncorrected,E_corrected,n_unsat,measurements,wall_ms"
    );
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 2 * 4);
    assert_eq!(strip_wall_clock(&a), strip_wall_clock(&b));

    let stdout = String::from_utf8(run_a.stdout).unwrap();
    assert!(stdout.contains("wrote 32 rows"), "{}", stdout);
    assert!(stdout.contains("median E_corr"), "{}", stdout);
}

#[test]
fn heatmap_writes_a_square_grid_of_magnitudes() {
    let out = tmp("heatmap.csv");
    let run = meshsim(&[
        "heatmap",
        "--topology",
        "reck",
        "--method",
        "direct",
        "--N",
        "5",
        "--sigma",
        "0.0",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{:?}", run);
    let text = read(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let vals: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 5);
        for v in vals {
            assert!(v >= 0.0 && v < 1e-9);
        }
    }
}

#[test]
fn haar_check_writes_one_row_per_rank() {
    let out = tmp("ks.csv");
    let run = meshsim(&[
        "haar-check",
        "--N",
        "6",
        "--samples",
        "1200",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{:?}", run);
    let text = read(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "quantity,rank,samples,ks_distance,p_value");
    assert_eq!(rows.len(), 1 + 6);
    assert!(rows[1].starts_with("phi,0,"));
    assert!(rows[2].starts_with("theta,1,"));
}

#[test]
fn predict_prints_the_closed_forms() {
    let run = meshsim(&[
        "predict",
        "--N",
        "64",
        "--sigma",
        "0.02",
        "--model",
        "uncorrelated",
    ]);
    assert!(run.status.success(), "{:?}", run);
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("coverage"), "{}", stdout);
    assert!(stdout.contains("E corrected floor"), "{}", stdout);
    // sqrt(2 * 63) * 0.02 = 0.2245
    assert!(stdout.contains("2.2449"), "{}", stdout);
}

#[test]
fn decompose_writes_a_phase_row_per_knob() {
    let mat = tmp("target.txt");
    let out = tmp("phases.csv");
    let mut rng = SeededRng::new(11, 0);
    write_matrix(&mat, &sample_haar_qr(5, &mut rng)).unwrap();
    let run = meshsim(&[
        "decompose",
        "--in",
        mat.to_str().unwrap(),
        "--topology",
        "reck",
        "--out",
        out.to_str().unwrap(),
    ]);
    let _ = std::fs::remove_file(&mat);
    assert!(run.status.success(), "{:?}", run);
    let text = read(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "phase,a,b,value");
    // 10 cells with two phases each, plus 5 input phases.
    assert_eq!(rows.len(), 1 + 2 * 10 + 5);
    for row in &rows[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 4);
        let _: f64 = fields[3].parse().unwrap();
    }
}

#[test]
fn unknown_method_is_rejected_with_a_clear_message() {
    let run = meshsim(&[
        "sweep",
        "--topology",
        "reck",
        "--methods",
        "psychic",
        "--N",
        "4",
        "--sigma",
        "0.01",
        "--out",
        "/dev/null",
    ]);
    assert!(!run.status.success());
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert!(stderr.contains("unknown method"), "{}", stderr);
}
