use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixedfem"))
}

fn scene(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn mixedfem");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn vertices(obj: &Path) -> Vec<[f64; 3]> {
    std::fs::read_to_string(obj)
        .unwrap()
        .lines()
        .filter_map(|l| l.strip_prefix("v "))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn rest_cube_frames_do_not_move() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args(["run", "--frames", "10", "--out"]).arg(dir.path()).arg("--scene").arg(scene("rest_cube.toml")));
    let first = vertices(&dir.path().join("frame_00000.obj"));
    assert!(!first.is_empty());
    for k in 1..=10 {
        let frame = vertices(&dir.path().join(format!("frame_{k:05}.obj")));
        assert_eq!(frame.len(), first.len());
        let drift = frame
            .iter()
            .zip(&first)
            .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "frame {k}: drift {drift}");
    }
    assert!(!dir.path().join("frame_00011.obj").exists());
    let obj = std::fs::read_to_string(dir.path().join("frame_00000.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("f ")), "tets are written as their surface");
}

#[test]
fn stats_rows_are_steps_times_substeps() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        bin()
            .args(["run", "--frames", "7", "--stride", "3", "--out"])
            .arg(dir.path())
            .arg("--scene")
            .arg(scene("rest_cube.toml")),
    );
    let stats = std::fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    let mut lines = stats.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,substep,assembly_ms,kkt_solve_ms,rotation_ms,cg_iters,cg_residual,constraint_residual,energy"
    );
    // rest_cube.toml runs 5 substeps per step.
    assert_eq!(lines.count(), 7 * 5);
    // Stride 3 over 7 steps: the initial frame plus steps 3 and 6.
    let frames: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("frame_"))
        .collect();
    assert_eq!(frames.len(), 3, "{frames:?}");
}

#[test]
fn single_threaded_runs_are_bitwise_identical() {
    let runs: Vec<(tempfile::TempDir, Vec<u8>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            run_ok(
                bin()
                    .args(["--threads", "1", "run", "--no-timing", "--frames", "5", "--out"])
                    .arg(dir.path())
                    .arg("--scene")
                    .arg(scene("three_ways_rod.toml")),
            );
            let stats = std::fs::read(dir.path().join("stats.csv")).unwrap();
            (dir, stats)
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
    let a = std::fs::read(runs[0].0.path().join("frame_00005.obj")).unwrap();
    let b = std::fs::read(runs[1].0.path().join("frame_00005.obj")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        bin()
            .env("MIXEDFEM_THREADS", "2")
            .args(["run", "--frames", "2", "--out"])
            .arg(dir.path())
            .arg("--scene")
            .arg(scene("rest_cube.toml")),
    );
    let out = bin().env("MIXEDFEM_THREADS", "many").args(["validate", "--list"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scene("rest_cube.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("Model = ", "Modle = ")).unwrap();
    let out = bin().args(["run", "--out"]).arg(dir.path()).arg("--scene").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Modle"), "{stderr}");

    std::fs::write(&bad, text.replace("Substeps = 5", "Substeps = 0")).unwrap();
    let out = bin().args(["run", "--out"]).arg(dir.path()).arg("--scene").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Substeps"));

    let out = bin().args(["run", "--out"]).arg(dir.path()).arg("--scene").arg(dir.path().join("missing.toml")).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn bundled_scenes_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = tempfile::tempdir().unwrap();
            run_ok(bin().args(["run", "--frames", "1", "--out"]).arg(out.path()).arg("--scene").arg(&path));
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn validate_filter_runs_one_module() {
    let out = run_ok(bin().args(["validate", "--filter", "rotation"]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let checks: Vec<&str> = stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|l| l.split_whitespace().nth(1).unwrap().starts_with("rotation.")), "{stdout}");
}

#[test]
fn flipped_rhs_sign_fails_validation() {
    run_ok(bin().args(["validate", "--filter", "solver.dense_oracle"]));
    let out = bin()
        .args(["validate", "--filter", "solver.dense_oracle", "--mutate-rhs-sign"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL solver.dense_oracle"));
}

#[test]
fn quick_validation_passes() {
    run_ok(bin().args(["validate", "--quick"]));
}
