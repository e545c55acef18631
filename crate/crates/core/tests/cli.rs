use std::path::Path;
use std::process::{Command, Output};

use cvtrf::metrics::MetricsReport;
use cvtrf::scenedata::read_ply;

fn cvtrf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvtrf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&cvtrf(&["--help"], d)), 0);
    assert_eq!(code(&cvtrf(&["frobnicate"], d)), 2);
    assert_eq!(code(&cvtrf(&["train"], d)), 2);
    assert_eq!(
        code(&cvtrf(
            &["train", "--config", "x.json", "--iters", "many"],
            d
        )),
        2
    );
    assert_eq!(
        code(&cvtrf(
            &[
                "eval",
                "--config",
                "x.json",
                "--checkpoint",
                "a",
                "--pred",
                "b"
            ],
            d
        )),
        2
    );

    let missing = cvtrf(&["train", "--config", "missing.json"], d);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.json"));

    std::fs::write(
        d.join("bad.json"),
        r#"{"scene": {"kind": "toy"}, "train": {"iters": 5, "bogus": 1}}"#,
    )
    .unwrap();
    let bad = cvtrf(&["train", "--config", "bad.json"], d);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus"));
}

#[test]
fn toy_workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let made = cvtrf(
        &[
            "make-toy", "--out", "toy", "--views", "3", "--size", "16", "--seed", "2",
        ],
        d,
    );
    assert_eq!(code(&made), 0, "{}", String::from_utf8_lossy(&made.stderr));
    let config = "toy/run.json";

    for out in ["a", "b"] {
        let run = cvtrf(
            &[
                "train", "--config", config, "--iters", "100", "--seed", "7", "--out", out,
            ],
            d,
        );
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    let csv_a = std::fs::read_to_string(d.join("a/loss.csv")).unwrap();
    assert_eq!(
        csv_a,
        std::fs::read_to_string(d.join("b/loss.csv")).unwrap()
    );
    let mut lines = csv_a.lines();
    assert_eq!(
        lines.next(),
        Some("iter,mse_coarse,mse_fine,contrast,total,lr")
    );
    assert_eq!(lines.count(), 100);

    let gt = cvtrf(
        &[
            "eval", "--config", config, "--pred", "toy/test", "--out", "gt.json",
        ],
        d,
    );
    assert_eq!(code(&gt), 0, "{}", String::from_utf8_lossy(&gt.stderr));
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("gt.json")).unwrap()).unwrap();
    assert_eq!(report.views.len(), 16);
    assert_eq!(report.mean_psnr, 99.0);
    assert!((report.mean_ssim - 1.0).abs() < 1e-6);

    let rendered = cvtrf(
        &[
            "render",
            "--config",
            config,
            "--checkpoint",
            "a/checkpoint.bin",
            "--out",
            "renders",
        ],
        d,
    );
    assert_eq!(code(&rendered), 0);
    let scored = cvtrf(
        &[
            "eval",
            "--config",
            config,
            "--pred",
            "renders",
            "--out",
            "pred.json",
        ],
        d,
    );
    assert_eq!(code(&scored), 0);
    let direct = cvtrf(
        &[
            "eval",
            "--config",
            config,
            "--checkpoint",
            "a/checkpoint.bin",
            "--out",
            "ck.json",
        ],
        d,
    );
    assert_eq!(code(&direct), 0);
    let ck: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("ck.json")).unwrap()).unwrap();
    assert_eq!(ck.iteration, 100);
    assert!(ck.mean_psnr > 0.0 && ck.mean_psnr < 99.0);

    let export = cvtrf(
        &[
            "export-cloud",
            "--config",
            config,
            "--checkpoint",
            "a/checkpoint.bin",
            "--out",
            "cloud.ply",
        ],
        d,
    );
    assert_eq!(code(&export), 0);
    let text = stdout(&export);
    let retained: usize = text
        .split_whitespace()
        .nth(1)
        .and_then(|w| w.parse().ok())
        .unwrap_or_else(|| panic!("no count in {text:?}"));
    assert_eq!(read_ply(&d.join("cloud.ply")).unwrap().len(), retained);
}
