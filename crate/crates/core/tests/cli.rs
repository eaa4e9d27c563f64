use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ptyinr::io::{read_manifest, MANIFEST};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptyinr"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ptyinr")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn no_partials(dir: &Path) {
    for e in fs::read_dir(dir).unwrap() {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        assert!(!name.contains(".partial") && !name.ends_with(".lock") && !name.contains(".old"), "{name}");
    }
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"{
  "phantom": { "object_shape": [24, 24], "probe_shape": [16, 16] },
  "scan": { "step_pixels": 4 },
  "train": { "steps": 5, "lr_object": 1e-3, "lr_probe": 1e-3 },
  "networks": { "siren": { "hidden_layers": 1, "hidden_width": 8 },
                "hashgrid": { "levels": 2, "table_size_log2": 6, "mlp_hidden_layers": 1, "mlp_hidden_width": 8 } },
  "epie": { "iterations": 3 }
}"#;

#[test]
fn default_pipeline_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = configs().join("default.json");
    let (data, recon, report) = (t.join("data"), t.join("recon"), t.join("report.txt"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "--quiet"]);
    ok(&["reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&recon), "--quiet"]);
    let out = ok(&["evaluate", "--recon", s(&recon), "--truth", s(&data), "--report", s(&report)]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("object_phase_psnr_db"), "{text}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("object_phase_psnr_db"));
    for dir in [&data, &recon] {
        let m = read_manifest(dir).unwrap();
        assert_eq!(m.provenance.version, ptyinr::provenance::VERSION);
        assert_eq!(m.provenance.config_hash.len(), 64);
    }
    assert!(recon.join("object_phase.png").exists());
    no_partials(t);
}

#[test]
fn fixed_probe_smoke_reaches_low_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = configs().join("smoke.json");
    let (data, recon) = (t.join("data"), t.join("recon"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "--quiet"]);
    let probe = format!("fixed:{}", s(&data));
    ok(&["reconstruct", "--data", s(&data), "--config", s(&cfg), "--out", s(&recon), "--probe", &probe, "--quiet"]);
    let loss = read_manifest(&recon).unwrap().metrics["data_loss"];
    assert!(loss < 1e-5, "data loss {loss}");
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("max_relative_error =")).unwrap();
    let v: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(v < 1e-4, "{text}");
}

#[test]
fn mismatched_shapes_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let small = write_config(t, "small.json", TINY);
    let big = write_config(t, "big.json", &TINY.replace("[24, 24]", "[32, 32]"));
    ok(&["simulate", "--config", s(&small), "--out", s(&t.join("a")), "--quiet"]);
    ok(&["simulate", "--config", s(&big), "--out", s(&t.join("b")), "--quiet"]);
    ok(&["epie", "--data", s(&t.join("a")), "--config", s(&small), "--out", s(&t.join("r")), "--quiet"]);
    let out = run(&["evaluate", "--recon", s(&t.join("r")), "--truth", s(&t.join("b")), "--report", s(&t.join("x.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
    assert!(!t.join("x.txt").exists());
    no_partials(t);
}

#[test]
fn bad_invocations_fail_cleanly() {
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let bad = write_config(t, "bad.json", r#"{"train": {"stpes": 3}}"#);
    let out = run(&["simulate", "--config", s(&bad), "--out", s(&t.join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stpes"));
    assert!(!t.join("d").exists());

    let good = write_config(t, "good.json", TINY);
    ok(&["simulate", "--config", s(&good), "--out", s(&t.join("d")), "--quiet"]);
    let again = run(&["simulate", "--config", s(&good), "--out", s(&t.join("d")), "--quiet"]);
    assert_eq!(again.status.code(), Some(2));
    ok(&["simulate", "--config", s(&good), "--out", s(&t.join("d")), "--quiet", "--force"]);
    no_partials(t);
}

#[test]
fn evaluate_refuses_other_format_versions() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = write_config(t, "c.json", TINY);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&t.join("d")), "--quiet"]);
    ok(&["epie", "--data", s(&t.join("d")), "--config", s(&cfg), "--out", s(&t.join("r")), "--quiet"]);
    let m = t.join("d").join(MANIFEST);
    let text = fs::read_to_string(&m).unwrap();
    fs::write(&m, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
    let out = run(&["evaluate", "--recon", s(&t.join("r")), "--truth", s(&t.join("d")), "--report", s(&t.join("x.txt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format_version"));
}

#[test]
fn resume_continues_a_checkpointed_run() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = write_config(t, "c.json", &TINY.replace("\"steps\": 5", "\"steps\": 6, \"checkpoint_every\": 4"));
    ok(&["simulate", "--config", s(&cfg), "--out", s(&t.join("d")), "--quiet"]);
    let ck = t.join("ck.bin");
    ok(&["reconstruct", "--data", s(&t.join("d")), "--config", s(&cfg), "--out", s(&t.join("full")), "--checkpoint", s(&ck), "--quiet"]);
    assert!(ck.exists());
    ok(&["reconstruct", "--data", s(&t.join("d")), "--config", s(&cfg), "--out", s(&t.join("resumed")), "--resume", s(&ck), "--quiet"]);
    for f in ["object.bin", "probe.bin", "loss_history.bin"] {
        let a = fs::read(t.join("full").join(f)).unwrap();
        let b = fs::read(t.join("resumed").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}
