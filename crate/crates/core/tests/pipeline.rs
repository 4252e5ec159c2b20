//! End-to-end runs of the installed binary: synth -> train -> eval chains,
//! cache inspection, reproducibility of checkpoints under a fixed seed, and
//! the error/help surface.

use std::path::Path;
use std::process::{Command, Output};

fn uhead(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhead"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = uhead(dir, args);
    assert!(
        out.status.success(),
        "`uhead {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn run_err(dir: &Path, args: &[&str]) -> String {
    let out = uhead(dir, args);
    assert!(
        !out.status.success(),
        "`uhead {}` unexpectedly succeeded",
        args.join(" ")
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const PIPELINE_CFG: &str = "\
seed = 7

[synth]
n_classes = 2
embed_dim = 8
sigma = 0.5
noise = boundary-ramp
max_flip = 0.42
ramp_width = 0.65
n_samples = 400
n_epochs = 2

[head]
hidden_dim = 16

[train]
variant = l2
batch_size = 100
total_steps = 120
warmup_steps = 12

[eval]
severities = 0,1
";

#[test]
fn synth_train_eval_produces_a_report_with_both_headline_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), PIPELINE_CFG).unwrap();

    run_ok(
        dir.path(),
        &["synth", "--config", "run.cfg", "--out", "synth.cache"],
    );
    run_ok(
        dir.path(),
        &[
            "train",
            "--config",
            "run.cfg",
            "--cache",
            "synth.cache",
            "--out",
            "head.ckpt",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "eval",
            "--config",
            "run.cfg",
            "--cache",
            "synth.cache",
            "--head",
            "head.ckpt",
            "--out",
            "report.txt",
        ],
    );

    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("r_auroc = "), "missing r_auroc:\n{report}");
    assert!(
        report.contains("recall_at_1 = "),
        "missing recall_at_1:\n{report}"
    );

    // The JSON flavor carries the same fields, machine-readable.
    run_ok(
        dir.path(),
        &[
            "eval",
            "--config",
            "run.cfg",
            "--cache",
            "synth.cache",
            "--head",
            "head.ckpt",
            "--out",
            "report.json",
        ],
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!(json.get("r_auroc").and_then(|v| v.as_f64()).is_some());
    assert!(json.get("recall_at_1").and_then(|v| v.as_f64()).is_some());
}

#[test]
fn cache_inspect_prints_the_build_inputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("synth.cfg"),
        "seed = 3\n[synth]\nn_samples = 300\nn_epochs = 3\nembed_dim = 8\n",
    )
    .unwrap();
    run_ok(
        dir.path(),
        &["synth", "--config", "synth.cfg", "--out", "s.cache"],
    );
    let stdout = run_ok(dir.path(), &["cache", "inspect", "s.cache"]);
    for line in [
        "n_samples: 300",
        "n_epochs: 3",
        "embed_dim: 8",
        "n_classes: 2",
        "has_losses: true",
        "has_logits: true",
    ] {
        assert!(stdout.contains(line), "inspect output lacks `{line}`:\n{stdout}");
    }
}

#[test]
fn training_twice_with_one_seed_writes_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PIPELINE_CFG.replace(
        "warmup_steps = 12\n",
        "warmup_steps = 12\ncheckpoint_every = 60\n",
    );
    std::fs::write(dir.path().join("run.cfg"), cfg).unwrap();
    run_ok(
        dir.path(),
        &["synth", "--config", "run.cfg", "--out", "synth.cache"],
    );

    for tag in ["a", "b"] {
        std::fs::create_dir(dir.path().join(format!("ckpt-{tag}"))).unwrap();
        run_ok(
            dir.path(),
            &[
                "train",
                "--config",
                "run.cfg",
                "--seed",
                "1",
                "--cache",
                "synth.cache",
                "--out",
                &format!("head-{tag}.ckpt"),
                "--checkpoint-dir",
                &format!("ckpt-{tag}"),
            ],
        );
    }

    let final_a = std::fs::read(dir.path().join("head-a.ckpt")).unwrap();
    let final_b = std::fs::read(dir.path().join("head-b.ckpt")).unwrap();
    assert_eq!(final_a, final_b, "final checkpoints differ between runs");

    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("ckpt-a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty(), "no intermediate checkpoints were written");
    for name in names {
        let a = std::fs::read(dir.path().join("ckpt-a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("ckpt-b").join(&name)).unwrap();
        assert_eq!(a, b, "intermediate checkpoint {name} differs between runs");
    }
}

#[test]
fn train_help_lists_every_fixed_hyperparameter_default() {
    let dir = tempfile::tempdir().unwrap();
    let help = run_ok(dir.path(), &["train", "--help"]);
    for needle in [
        "(default 0.1)",        // ranking margin
        "(default 0.8, 0.95)",  // AdamW betas
        "(default 0.0001)",     // weight decay and warmup-start lr
        "(default 0.0028)",     // peak lr
        "(default 1e-8)",       // epsilon and final lr
        "(default 512)",        // hidden width
        "LeakyReLU (slope 0.01)",
        "Softplus (beta 1, threshold 20)",
    ] {
        assert!(help.contains(needle), "train --help lacks `{needle}`:\n{help}");
    }
}

#[test]
fn version_flag_reports_the_package_version() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(dir.path(), &["--version"]);
    assert!(stdout.contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_mistakes_fail_with_the_key_and_line_number() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key: the schema rejects it by name and position.
    std::fs::write(
        dir.path().join("bad.cfg"),
        "seed = 1\n[train]\nlearning_rate = 3\n",
    )
    .unwrap();
    run_ok(dir.path(), &["synth", "--out", "s.cache"]);
    let stderr = run_err(
        dir.path(),
        &[
            "train",
            "--config",
            "bad.cfg",
            "--cache",
            "s.cache",
            "--out",
            "h.ckpt",
        ],
    );
    assert!(
        stderr.contains("line 3") && stderr.contains("learning_rate"),
        "unknown-key error lacks location or key name: {stderr}"
    );

    // Malformed value: named key with its line.
    std::fs::write(
        dir.path().join("bad2.cfg"),
        "seed = 1\n\n[train]\nbatch_size = many\n",
    )
    .unwrap();
    let stderr = run_err(
        dir.path(),
        &[
            "train",
            "--config",
            "bad2.cfg",
            "--cache",
            "s.cache",
            "--out",
            "h.ckpt",
        ],
    );
    assert!(
        stderr.contains("line 4") && stderr.contains("batch_size"),
        "bad-value error lacks location or key name: {stderr}"
    );

    // Missing input file: nonzero exit with a structured message.
    let stderr = run_err(
        dir.path(),
        &[
            "train",
            "--cache",
            "missing.cache",
            "--out",
            "h.ckpt",
        ],
    );
    assert!(stderr.starts_with("error:"), "unstructured error: {stderr}");
    assert!(stderr.contains("missing.cache"), "error omits the path: {stderr}");
}
