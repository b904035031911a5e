use std::path::Path;
use std::process::{Command, Output};

use lscodec::codec::{decode, Bitstream, CodecModel};
use lscodec::harness::image_io::{load_image, save_image, to_rgb8};
use lscodec::harness::dataset::synthetic_image;

const CONFIG: &str = r#"
seed = 3
lambdas = [0.01, 0.1]
iterations = 20
batch_size = 1
synthetic_count = 1
synthetic_size = 32
finetune_iterations = 5

[arch]
hidden = [4, 6]
latent = 6
hyper = 4
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lscodec"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    let out = run(dir.path(), &["train", "--config", "cfg.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "iterations = \"many\"").unwrap();
    let out = run(dir.path(), &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(dir.path().join("cfg.toml"), CONFIG).unwrap();
    let out = run(dir.path(), &["eval", "--config", "cfg.toml", "--out", "nowhere"]);
    assert_eq!(out.status.code(), Some(3), "missing checkpoints are a config error");
}

#[test]
fn encode_decode_roundtrip_and_error_codes() {
    let dir = setup();
    let p = dir.path();
    assert!(p.join("run/model_0.ckpt").exists() && p.join("run/model_1.ckpt").exists());
    assert!(rows(&p.join("run/kkt_report.csv")) == 4);
    let img = synthetic_image(64, 77);
    save_image(&p.join("in.ppm"), &img).unwrap();

    let out = run(p, &["encode", "in.ppm", "a.gsls", "--config", "cfg.toml", "--out", "run", "--no-shift", "--lambda-index", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(p.join("a.gsls")).unwrap();
    let stream = Bitstream::from_bytes(&bytes).unwrap();
    assert_eq!((stream.lambda_index, stream.rho_f, stream.rho_h), (1, 0, 0));

    let out = run(p, &["decode", "a.gsls", "out.ppm", "--config", "cfg.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = CodecModel::load(&p.join("run/model_1.ckpt")).unwrap();
    let expected = to_rgb8(&decode(&stream, &model).unwrap().reconstruction).unwrap().2;
    let got = to_rgb8(&load_image(&p.join("out.ppm")).unwrap()).unwrap().2;
    assert_eq!(got, expected);

    let out = run(p, &["encode", "in.ppm", "b.gsls", "--config", "cfg.toml", "--out", "run"]);
    assert!(out.status.success());

    std::fs::write(p.join("junk.gsls"), b"not a stream").unwrap();
    assert_eq!(run(p, &["decode", "junk.gsls", "x.ppm", "--out", "run"]).status.code(), Some(5));
    assert_eq!(run(p, &["encode", "missing.ppm", "c.gsls", "--out", "run"]).status.code(), Some(4));
    let out = run(p, &["encode", "in.ppm", "c.gsls", "--config", "cfg.toml", "--out", "run", "--lambda-index", "7"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_analyze_and_complexity_outputs() {
    let dir = setup();
    let p = dir.path();
    let out = run(p, &["eval", "--config", "cfg.toml", "--out", "run", "--lambda-index", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&p.join("run/eval.csv")), 1);
    assert_eq!(rows(&p.join("run/shift_gain.csv")), 1);
    let header = std::fs::read_to_string(p.join("run/shift_gain.csv")).unwrap();
    assert!(header.starts_with(
        "image_id,lambda,bpp_base,bpp_shift,psnr_base,psnr_shift,rho_f_idx,rho_h_idx,corr_side,corr_main"
    ));

    std::fs::write(p.join("cfg2.toml"), format!("model_dir = \"run\"\n{CONFIG}")).unwrap();
    let out = run(p, &["eval", "--config", "cfg2.toml", "--out", "run2", "--finetune-iters", "3", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(p.join("run2/eval.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("psnr_finetune+shift"));
    assert_eq!(rows(&p.join("run2/eval.csv")), 2);

    let out = run(p, &["analyze", "--config", "cfg.toml", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["kkt_report.csv", "corr_records.csv", "histogram.csv", "scatter.csv", "histogram.svg"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }
    assert_eq!(rows(&p.join("run/histogram.csv")), 40);

    let out = run(p, &["complexity", "--config", "cfg.toml", "--out", "run", "--finetune-iters", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&p.join("run/complexity.csv")), 1);
}

#[test]
fn same_seed_gives_identical_reports() {
    let a = setup();
    let b = setup();
    for d in [&a, &b] {
        let out = run(d.path(), &["eval", "--config", "cfg.toml", "--out", "run"]);
        assert!(out.status.success());
    }
    for f in ["eval.csv", "shift_gain.csv", "bd_rate.csv", "train_log.csv"] {
        assert_eq!(
            std::fs::read(a.path().join("run").join(f)).unwrap(),
            std::fs::read(b.path().join("run").join(f)).unwrap(),
            "{f}"
        );
    }
}
