use std::path::{Path, PathBuf};

use lscodec::analysis::{correlation_survey, kkt_residuals};
use lscodec::codec::{decode as decode_stream, encode as encode_image, train as train_model, Bitstream, CodecModel, EncodeOptions};
use lscodec::harness::complexity::measure_complexity;
use lscodec::harness::config::HarnessConfig;
use lscodec::harness::evaluate::{evaluate, shift_gain_report, EvalOptions, Mode};
use lscodec::harness::image_io::{load_image, save_image};
use lscodec::harness::metrics::format_psnr;
use lscodec::harness::report::{write_csv, write_kkt, write_survey};
use lscodec::{Error, Result, Tensor};

use crate::svg;
use crate::Global;

fn config(g: &Global) -> Result<HarnessConfig> {
    let mut cfg = match &g.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.finetune_iters {
        cfg.finetune_iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn model_dir(cfg: &HarnessConfig, g: &Global) -> PathBuf {
    cfg.model_dir.clone().unwrap_or_else(|| g.out.clone())
}

fn checkpoint_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("model_{k}.ckpt"))
}

/// The lambda indices a command works on.
fn selected(cfg: &HarnessConfig, g: &Global) -> Result<Vec<usize>> {
    match g.lambda_index {
        Some(k) if k >= cfg.lambdas.len() => Err(Error::Config(format!(
            "lambda index {k} out of range for {} lambdas",
            cfg.lambdas.len()
        ))),
        Some(k) => Ok(vec![k]),
        None => Ok((0..cfg.lambdas.len()).collect()),
    }
}

fn load_model(dir: &Path, k: usize) -> Result<CodecModel> {
    let p = checkpoint_path(dir, k);
    if !p.exists() {
        return Err(Error::Config(format!("missing checkpoint {}", p.display())));
    }
    CodecModel::load(&p)
}

fn out_dir(g: &Global) -> Result<&Path> {
    std::fs::create_dir_all(&g.out)?;
    Ok(&g.out)
}

fn tensors(images: &[(String, Tensor)]) -> Vec<Tensor> {
    images.iter().map(|(_, t)| t.clone()).collect()
}

#[derive(serde::Serialize)]
struct TrainLogRow {
    lambda_index: usize,
    lambda: f64,
    iteration: usize,
    loss_per_pixel: f64,
}

pub fn train(g: &Global) -> Result<()> {
    let cfg = config(g)?;
    let out = out_dir(g)?;
    let dir = model_dir(&cfg, g);
    std::fs::create_dir_all(&dir)?;
    let data = tensors(&cfg.train_images()?);
    let tc = cfg.train_config();
    let mut log = Vec::new();
    let mut kkt = Vec::new();
    for k in selected(&cfg, g)? {
        let lambda = cfg.lambdas[k];
        let outcome = train_model(&tc, lambda, &data)?;
        outcome.model.save(&checkpoint_path(&dir, k))?;
        for (i, &l) in outcome.trajectory.iter().enumerate() {
            log.push(TrainLogRow { lambda_index: k, lambda, iteration: i, loss_per_pixel: l });
        }
        let before = kkt_residuals(&outcome.initial, &data)?;
        let after = kkt_residuals(&outcome.model, &data)?;
        println!(
            "lambda {lambda}: final loss {:.4}/px, kkt z {:.4} -> {:.4}, y {:.4} -> {:.4}",
            outcome.trajectory.last().copied().unwrap_or(f64::NAN),
            before.residual_z,
            after.residual_z,
            before.residual_y,
            after.residual_y
        );
        kkt.push((format!("init_{k}"), before));
        kkt.push((format!("trained_{k}"), after));
    }
    write_csv(&out.join("train_log.csv"), &log)?;
    let refs: Vec<(&str, _)> = kkt.iter().map(|(l, r)| (l.as_str(), r)).collect();
    write_kkt(&out.join("kkt_report.csv"), &refs)
}

pub fn encode(g: &Global, input: &Path, output: &Path) -> Result<()> {
    let cfg = config(g)?;
    let k = g.lambda_index.unwrap_or(0);
    if k >= cfg.lambdas.len().max(1) || k > u8::MAX as usize {
        return Err(Error::Config(format!("lambda index {k} out of range")));
    }
    let model = load_model(&model_dir(&cfg, g), k)?;
    let x = load_image(input)?;
    let out = encode_image(&x, &model, EncodeOptions { shift: !g.no_shift, lambda_index: k as u8 })?;
    let bytes = out.stream.to_bytes();
    std::fs::write(output, &bytes)?;
    let pixels = x.shape()[0] * x.shape()[1];
    println!(
        "{} bytes, {:.4} bpp, rho_f {} rho_h {}",
        bytes.len(),
        8.0 * bytes.len() as f64 / pixels as f64,
        out.stream.rho_f,
        out.stream.rho_h
    );
    Ok(())
}

pub fn decode(g: &Global, input: &Path, output: &Path) -> Result<()> {
    let cfg = config(g)?;
    let bytes = std::fs::read(input)?;
    let stream = Bitstream::from_bytes(&bytes)?;
    let model = load_model(&model_dir(&cfg, g), stream.lambda_index as usize)?;
    let out = decode_stream(&stream, &model)?;
    save_image(output, &out.reconstruction)
}

pub fn eval(g: &Global) -> Result<()> {
    let cfg = config(g)?;
    let out = out_dir(g)?;
    let dir = model_dir(&cfg, g);
    let ks = selected(&cfg, g)?;
    let models = ks.iter().map(|&k| load_model(&dir, k)).collect::<Result<Vec<_>>>()?;
    let images = cfg.eval_images()?;
    let mut modes = vec![Mode::Baseline];
    if !g.no_shift {
        modes.push(Mode::Shift);
    }
    let finetune = g.finetune_iters.unwrap_or(0) > 0;
    if finetune {
        modes.push(Mode::Finetune);
        if !g.no_shift {
            modes.push(Mode::FinetuneShift);
        }
    }
    let report = evaluate(&models, &images, &EvalOptions { modes: modes.clone(), finetune: cfg.finetune_config() })?;

    // One row per (image, lambda) with a bpp/psnr pair per mode.
    let mut w = csv::Writer::from_path(out.join("eval.csv")).map_err(csv_err)?;
    let mut header = vec!["image_id".to_string(), "lambda_index".into(), "lambda".into()];
    for m in &modes {
        header.push(format!("bpp_{}", m.name()));
        header.push(format!("psnr_{}", m.name()));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (id, _) in &images {
        for (pos, &k) in ks.iter().enumerate() {
            let mut rec = vec![id.clone(), k.to_string(), cfg.lambdas[k].to_string()];
            for m in &modes {
                let r = report
                    .rows_for(*m)
                    .find(|r| &r.image_id == id && r.lambda_index == pos)
                    .ok_or_else(|| Error::Evaluation("missing evaluation row".into()))?;
                rec.push(r.bpp.to_string());
                rec.push(format_psnr(r.psnr));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    write_csv(&out.join("bd_rate.csv"), &report.bd_rates)?;
    if !g.no_shift {
        write_csv(&out.join("shift_gain.csv"), &shift_gain_report(&models, &images)?)?;
    }
    let curves: Vec<(&str, Vec<(f64, f64)>)> = report
        .curves
        .iter()
        .filter_map(|(m, c)| c.as_ref().map(|c| (m.name(), c.points().iter().map(|p| (p.bpp, p.psnr)).collect())))
        .collect();
    if !curves.is_empty() {
        std::fs::write(out.join("rd_curves.svg"), svg::lines("bpp", "PSNR (dB)", &curves))?;
    }
    for row in &report.bd_rates {
        match row.bd_rate {
            Some(v) => println!("{:<16} BD-rate {v:+.3}%", row.mode),
            None => println!("{:<16} BD-rate n/a ({})", row.mode, row.note),
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn analyze(g: &Global) -> Result<()> {
    let cfg = config(g)?;
    let out = out_dir(g)?;
    let dir = model_dir(&cfg, g);
    let ks = selected(&cfg, g)?;
    let models = ks.iter().map(|&k| load_model(&dir, k)).collect::<Result<Vec<_>>>()?;
    let train = tensors(&cfg.train_images()?);
    let mut kkt = Vec::new();
    for (&k, m) in ks.iter().zip(&models) {
        let init = CodecModel::new(m.arch, m.lambda, cfg.seed)?;
        kkt.push((format!("init_{k}"), kkt_residuals(&init, &train)?));
        kkt.push((format!("trained_{k}"), kkt_residuals(m, &train)?));
    }
    let refs: Vec<(&str, _)> = kkt.iter().map(|(l, r)| (l.as_str(), r)).collect();
    write_kkt(&out.join("kkt_report.csv"), &refs)?;
    let survey = correlation_survey(&models, &cfg.eval_images()?)?;
    write_survey(out, &survey)?;
    let bars: Vec<(f64, usize)> = survey.histogram.iter().map(|b| (b.lo, b.count)).collect();
    std::fs::write(out.join("histogram.svg"), svg::histogram("corr_main", &bars))?;
    std::fs::write(out.join("scatter.svg"), svg::scatter("corr_main", "gain (dB)", &survey.scatter))?;
    match survey.mean_corr_main() {
        Some(m) => println!("mean corr_main {m:.4} over {} records", survey.scatter.len()),
        None => println!("corr_main undefined for every record"),
    }
    Ok(())
}

pub fn complexity(g: &Global) -> Result<()> {
    let cfg = config(g)?;
    let out = out_dir(g)?;
    let k = g.lambda_index.unwrap_or(0);
    let model = load_model(&model_dir(&cfg, g), k)?;
    let images = tensors(&cfg.eval_images()?);
    let rec = measure_complexity(&model, &images, &cfg.finetune_config(), 5)?;
    write_csv(&out.join("complexity.csv"), &[&rec])?;
    println!(
        "shift encode x{:.2}, finetune encode x{:.1} ({} iterations), shift decode {:+.2}%",
        rec.shift_encode_ratio, rec.finetune_encode_ratio, rec.finetune_iterations, rec.decode_overhead_percent
    );
    println!(
        "passes per image set: baseline encode {:?}, shift encode {:?}",
        rec.baseline_encode, rec.shift_encode
    );
    Ok(())
}
