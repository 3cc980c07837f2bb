//! End-to-end tests that drive the compiled `sflow` binary: worked
//! examples from the operator-path format, exit-code contract, artifact
//! layout, determinism across parallelism degrees, and the config
//! registries for custom problems.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// Run the binary with `args`, inheriting nothing, from `dir`.
fn sflow_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawning the sflow binary")
}

fn sflow(args: &[&str]) -> Output {
    let dir = std::env::temp_dir();
    sflow_in(&dir, args)
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("binary terminated by signal")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).expect("writing test input");
    path.to_str().expect("UTF-8 temp path").to_owned()
}

const SCALAR_PATH: &str = "1 2\n0 1\n-0.5\n0.5\n";
const SPLIT_PATH: &str = "\
2 2
0 1
involution
1 0
0 -1
-0.5 0
0 0.5
0.5 0
0 -0.5
";

// ------------------------------------------------------------------ //
// Worked examples from the operator-path format
// ------------------------------------------------------------------ //

#[test]
fn scalar_example_reports_unit_flow() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "scalar.txt", SCALAR_PATH);
    let out = sflow(&["path", &file, "--no-timestamp"]);
    let text = stdout(&out);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(text.contains("\nsfl = 1\n"), "missing flow line:\n{text}");
    assert!(
        text.contains("verdict: bifurcation_certified"),
        "missing verdict:\n{text}"
    );
    assert!(text.contains("kind = sign-change"), "crossing detail:\n{text}");
}

#[test]
fn constant_path_without_crossings_is_inconclusive() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "constant.txt", "1 2\n0 1\n1\n1\n");
    let out = sflow(&["path", &file, "--no-timestamp"]);
    let text = stdout(&out);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(text.contains("\nsfl = 0\n"), "flow line:\n{text}");
    assert!(text.contains("crossings: 0"), "crossing count:\n{text}");
    assert!(text.contains("verdict: inconclusive"), "verdict:\n{text}");
}

#[test]
fn involution_example_reports_split_flow() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "split.txt", SPLIT_PATH);
    let out = sflow(&["path", &file, "--no-timestamp"]);
    let text = stdout(&out);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(text.contains("\nsfl = 0\n"), "total flow:\n{text}");
    assert!(text.contains("\nsfl_G = (0, 1)\n"), "split flow:\n{text}");
    assert!(
        text.contains("fixed sfl = 1, antifixed sfl = -1"),
        "block detail:\n{text}"
    );
}

// ------------------------------------------------------------------ //
// Exit-code contract
// ------------------------------------------------------------------ //

#[test]
fn malformed_header_is_invalid_input() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "bad.txt", "x y\n0 1\n");
    let out = sflow(&["path", &file]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("invalid input"), "{}", stderr(&out));
}

#[test]
fn asymmetric_block_is_invalid_input() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "asym.txt", "2 2\n0 1\n0 1\n0 0\n1 0\n0 1\n");
    let out = sflow(&["path", &file]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("invalid input"), "{}", stderr(&out));
}

#[test]
fn non_involutive_matrix_is_invalid_input() {
    let dir = TempDir::new().unwrap();
    let text = "1 2\n0 1\ninvolution\n2\n-0.5\n0.5\n";
    let file = write(&dir, "badsigma.txt", text);
    let out = sflow(&["path", &file]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("invalid input"), "{}", stderr(&out));
}

#[test]
fn missing_path_file_is_an_io_failure() {
    let out = sflow(&["path", "/nonexistent/path/file.txt"]);
    assert_eq!(exit_code(&out), 3);
    assert!(stderr(&out).contains("i/o failure"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_an_io_failure() {
    let out = sflow(&["selftest", "--config", "/nonexistent/config.toml"]);
    assert_eq!(exit_code(&out), 3);
    assert!(stderr(&out).contains("i/o failure"), "{}", stderr(&out));
}

#[test]
fn unknown_presets_are_invalid_input() {
    for args in [["ham", "--preset", "nope"], ["pde", "--preset", "nope"]] {
        let out = sflow(&args);
        assert_eq!(exit_code(&out), 1, "args: {args:?}");
        assert!(stderr(&out).contains("invalid input"), "{}", stderr(&out));
    }
}

#[test]
fn help_exits_zero_and_unknown_flags_exit_one() {
    let help = sflow(&["--help"]);
    assert_eq!(exit_code(&help), 0);
    assert!(stdout(&help).contains("Usage"));

    let bad = sflow(&["path", "x.txt", "--bogus"]);
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn pathway_disagreement_is_a_numerical_failure() {
    // At this deliberately starved resolution the matrix pathway misses
    // the crossing that the shooting pathway finds.
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "fast.toml", "[ham]\nconvergence = false\n");
    let out = sflow(&[
        "ham",
        "--preset",
        "pejsachowicz-loop",
        "--truncation",
        "5",
        "--grid",
        "120",
        "--config",
        &cfg,
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("numerical failure"), "{err}");
    assert!(err.contains("pathways disagree"), "{err}");
}

// ------------------------------------------------------------------ //
// Artifacts, determinism, timestamps
// ------------------------------------------------------------------ //

#[test]
fn out_directory_mirrors_stdout_and_writes_curves() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "split.txt", SPLIT_PATH);
    let outdir = dir.path().join("artifacts");
    let out = sflow(&[
        "path",
        &file,
        "--no-timestamp",
        "--out",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));

    let report = std::fs::read_to_string(outdir.join("report.txt")).unwrap();
    assert_eq!(report, stdout(&out), "report.txt must mirror stdout");

    let csv = std::fs::read_to_string(outdir.join("curves_path.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda,mu_1,mu_2"));
    let rows: Vec<Vec<f64>> = lines
        .map(|line| line.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    // Every sampled lambda gets a row: the 101-point display grid plus
    // whatever the adaptive flow computation refined on top of it.
    assert!(rows.len() >= 101, "display grid missing: {} rows", rows.len());
    assert_eq!(rows.first().map(|r| r[0]), Some(0.0));
    assert_eq!(rows.last().map(|r| r[0]), Some(1.0));
    for pair in rows.windows(2) {
        assert!(pair[0][0] < pair[1][0], "rows sorted by lambda, no repeats");
    }
    for row in &rows {
        assert_eq!(row.len(), 3);
        assert!(row[1] <= row[2], "eigenvalues ascending: {row:?}");
    }
}

#[test]
fn parallel_degree_does_not_change_any_byte() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "split.txt", SPLIT_PATH);
    let mut artifacts = Vec::new();
    for degree in ["1", "1", "8"] {
        let outdir = dir.path().join(format!("out{degree}-{}", artifacts.len()));
        let out = sflow(&[
            "path",
            &file,
            "--no-timestamp",
            "--parallel",
            degree,
            "--out",
            outdir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
        let report = std::fs::read(outdir.join("report.txt")).unwrap();
        let curves = std::fs::read(outdir.join("curves_path.csv")).unwrap();
        artifacts.push((out.stdout, report, curves));
    }
    assert_eq!(artifacts[0], artifacts[1], "repeat run at degree 1");
    assert_eq!(artifacts[0], artifacts[2], "degree 8 vs degree 1");
}

#[test]
fn timestamp_line_is_present_unless_suppressed() {
    let dir = TempDir::new().unwrap();
    let file = write(&dir, "scalar.txt", SCALAR_PATH);

    let stamped = sflow(&["path", &file]);
    assert_eq!(exit_code(&stamped), 0);
    assert!(
        stdout(&stamped).lines().any(|l| {
            l.strip_prefix("timestamp: ")
                .is_some_and(|v| v.parse::<u64>().is_ok())
        }),
        "expected a unix timestamp line:\n{}",
        stdout(&stamped)
    );

    let bare = sflow(&["path", &file, "--no-timestamp"]);
    assert!(!stdout(&bare).contains("timestamp:"));
}

// ------------------------------------------------------------------ //
// Config handling
// ------------------------------------------------------------------ //

#[test]
fn command_line_flags_override_config_values() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cfg.toml", "[pde]\nmodes = 16\n");
    let out = sflow(&[
        "pde",
        "--preset",
        "indefinite-cubic",
        "--modes",
        "8",
        "--config",
        &cfg,
        "--no-timestamp",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("modes: 8"), "{}", stdout(&out));
}

#[test]
fn unknown_config_keys_are_invalid_input() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cfg.toml", "[pde]\nmode_count = 16\n");
    let out = sflow(&["pde", "--preset", "indefinite-cubic", "--config", &cfg]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("mode_count"), "{}", stderr(&out));
}

#[test]
fn custom_pde_families_reproduce_the_preset() {
    // The registry entries below assemble the same Hessian path as the
    // indefinite-cubic preset, so everything after the header must match.
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "custom.toml",
        "[pde]\n\
         modes = 16\n\
         s1 = [\"affine-lambda\", 0.0, 1.0]\n\
         s2 = [\"constant\", 0.0]\n\
         s3 = [\"affine-lambda\", 0.0, -1.0]\n\
         nonlinearity = \"indefinite-cubic\"\n",
    );
    let custom = sflow(&["pde", "--config", &cfg, "--no-timestamp"]);
    let preset = sflow(&[
        "pde",
        "--preset",
        "indefinite-cubic",
        "--modes",
        "16",
        "--no-timestamp",
    ]);
    assert_eq!(exit_code(&custom), 0, "stderr: {}", stderr(&custom));
    assert_eq!(exit_code(&preset), 0, "stderr: {}", stderr(&preset));

    let body = |out: &Output| {
        stdout(out)
            .lines()
            .skip_while(|l| !l.starts_with("modes:"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let custom_body = body(&custom);
    assert_eq!(custom_body, body(&preset));
    assert!(stdout(&custom).contains("family: custom"));
    assert!(custom_body.contains("sfl = 0"), "{custom_body}");
}

#[test]
fn custom_time_family_matches_the_planar_model() {
    // arctan(t) * [[-sin(lambda), cos(lambda)], [cos(lambda), sin(lambda)]]
    // for t >= 0, with the angle frozen at 0 on t < 0: one homoclinic at
    // lambda = 0 whose crossing form is negative.
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "planar.toml",
        "[ham]\n\
         dim = 2\n\
         lambda_min = -3.141592653589793\n\
         lambda_max = 3.141592653589793\n\
         entry_1_1 = [[0.0, inf, \"arctan-t-sin-lambda\", -1.0, 1.0]]\n\
         entry_1_2 = [[-inf, 0.0, \"arctan-t\", 1.0, 1.0], [0.0, inf, \"arctan-t-cos-lambda\", 1.0, 1.0]]\n\
         entry_2_2 = [[0.0, inf, \"arctan-t-sin-lambda\", 1.0, 1.0]]\n\
         convergence = false\n",
    );
    let out = sflow(&[
        "ham",
        "--config",
        &cfg,
        "--truncation",
        "6",
        "--grid",
        "160",
        "--no-timestamp",
    ]);
    let text = stdout(&out);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(text.contains("family: custom"), "{text}");
    assert!(text.contains("\nsfl = -1\n"), "total flow:\n{text}");
    assert!(
        text.contains("crossing at lambda = 0: form = -0.25528667"),
        "crossing form:\n{text}"
    );
    assert!(text.contains("verdict: bifurcation_certified"), "{text}");
}

#[test]
fn preset_window_without_crossings_is_inconclusive() {
    // [pi/4, pi/2] avoids the loop's only crossing at lambda = 0.
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "window.toml",
        "[ham]\n\
         convergence = false\n\
         lambda_min = 0.7853981633974483\n\
         lambda_max = 1.5707963267948966\n",
    );
    let out = sflow(&[
        "ham",
        "--preset",
        "pejsachowicz-loop",
        "--truncation",
        "5",
        "--grid",
        "120",
        "--config",
        &cfg,
        "--no-timestamp",
    ]);
    let text = stdout(&out);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(text.contains("\nsfl = 0\n"), "{text}");
    assert!(text.contains("\nsfl_G = (0, 0)\n"), "{text}");
    assert!(text.contains("verdict: inconclusive"), "{text}");
}

#[test]
fn selftest_output_is_deterministic_and_seeded() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "st.toml",
        "[selftest]\nagreement_cases = 25\nproperty_cases = 25\nmax_dim = 4\n",
    );
    let args = [
        "selftest",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--no-timestamp",
    ];
    let first = sflow(&args);
    let second = sflow(&args);
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    assert_eq!(first.stdout, second.stdout, "identical seed, identical bytes");
    let text = stdout(&first);
    assert!(text.contains("selftest: seed 7"), "{text}");
    assert!(text.contains("0 violations -- ok"), "{text}");
}
