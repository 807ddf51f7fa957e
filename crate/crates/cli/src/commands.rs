//! One function per subcommand. Each resolves its configuration, writes it
//! beside the outputs and then does the work.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use keytailor::dit::checkpoint;
use keytailor::dit::{denoise, KeyTailorModel, LatentBundle};
use keytailor::gradsuite::{run_scope, Scope};
use keytailor::keyframe::{parse_instruction, select_keyframes};
use keytailor::latents::ToyVae;
use keytailor::metrics::{psnr, ssim, MetricReport};
use keytailor::numerics::{ktsr, Tensor};
use keytailor::pipeline::{self, KeyframeChoice, PrepareConfig, VAE_SEED};
use keytailor::synth::{
    generate_scene, read_sample, video_frame, write_sample, SceneSpec, SyntheticSample,
};
use keytailor::{Error, Result};

use crate::config::{FileConfig, RunConfig};
use crate::report;

pub const CHECKPOINT: &str = "checkpoint.ktckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ktckpt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn show_config(file: Option<&Path>, flags: FileConfig) -> Result<()> {
    let cfg = RunConfig::resolve(file, flags)?;
    print!("{}", cfg.to_toml());
    Ok(())
}

pub fn gen_synthetic(
    file: Option<&Path>,
    seeds: Option<String>,
    frames: Option<usize>,
    size: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut flags = FileConfig::default();
    flags.corpus.seeds = seeds;
    flags.corpus.frames = frames;
    flags.corpus.size = size;
    let mut cfg = RunConfig::resolve(file, flags)?;
    let (t, s) = (cfg.corpus_frames, cfg.corpus_size);
    // validate the geometry once before fanning out
    SceneSpec::from_seed(cfg.corpus_seeds[0], t, s)?;
    cfg.record_run("gen-synthetic", &[]);
    cfg.write(out)?;
    cfg.corpus_seeds
        .par_iter()
        .map(|&seed| {
            let sample = generate_scene(&SceneSpec::from_seed(seed, t, s)?)?;
            write_sample(&out.join(sample_dir_name(seed)), &sample)
        })
        .collect::<Result<Vec<()>>>()?;
    log::info!(
        "wrote {} samples to {}",
        cfg.corpus_seeds.len(),
        out.display()
    );
    Ok(())
}

pub fn sample_dir_name(seed: u64) -> String {
    format!("sample_{seed:04}")
}

pub fn sample_keyframes(
    file: Option<&Path>,
    flags: FileConfig,
    sample_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(file, flags)?;
    let sample = read_sample(sample_path)?;
    let targets = parse_instruction(&cfg.instruction)?;
    let set = select_keyframes(&sample.frames()?, &targets, &cfg.sampler)?;
    let text = report::keyframe_report(&set, &targets);
    print!("{text}");
    if let Some(out) = out {
        cfg.record_run("sample-keyframes", &[("sample", sample_path)]);
        cfg.write(out)?;
        write_text(&out.join("keyframes.tsv"), &text)?;
    }
    Ok(())
}

pub fn score_frames(
    file: Option<&Path>,
    flags: FileConfig,
    sample_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(file, flags)?;
    let sample = read_sample(sample_path)?;
    let targets = parse_instruction(&cfg.instruction)?;
    let text = report::frame_scores(
        &sample.frames()?,
        &targets,
        &cfg.sampler,
        cfg.clarity_threshold,
    )?;
    print!("{text}");
    if let Some(out) = out {
        cfg.record_run("score-frames", &[("sample", sample_path)]);
        cfg.write(out)?;
        write_text(&out.join("frame_scores.tsv"), &text)?;
    }
    Ok(())
}

fn prepare_config(cfg: &RunConfig) -> PrepareConfig {
    PrepareConfig {
        instruction: cfg.instruction.clone(),
        sampler: cfg.sampler.clone(),
        ablations: cfg.ablations,
        clarity_threshold: cfg.clarity_threshold,
        seed: cfg.model.seed,
    }
}

/// Keyframes and conditioning bundle, recorded under `out`.
fn prepare(
    cfg: &RunConfig,
    sample: &SyntheticSample,
    out: &Path,
) -> Result<(ToyVae, LatentBundle)> {
    let vae = ToyVae::new(cfg.model.latent_channels, VAE_SEED)?;
    let (bundle, choice): (LatentBundle, KeyframeChoice) =
        pipeline::prepare(sample, &prepare_config(cfg), &vae)?;
    let targets = parse_instruction(&cfg.instruction).ok();
    write_text(
        &out.join("keyframes.tsv"),
        &report::choice_report(&choice, targets.as_ref()),
    )?;
    bundle.write(&out.join("bundle"))?;
    log::info!(
        "keyframes {:?}, background frame {}",
        choice.indices,
        choice.background_index
    );
    Ok((vae, bundle))
}

pub fn train(
    file: Option<&Path>,
    flags: FileConfig,
    sample_path: &Path,
    out: &Path,
    checkpoint_out: Option<&Path>,
    infer_after: bool,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(file, flags)?;
    cfg.record_run("train", &[("sample", sample_path)]);
    cfg.write(out)?;
    let sample = read_sample(sample_path)?;
    let (vae, bundle) = prepare(&cfg, &sample, out)?;

    let mut model = KeyTailorModel::new(cfg.model.clone(), cfg.ablations)?;
    let frozen_before = model.store.checksum(|p| !p.trainable);
    let trainable_before = model.store.checksum(|p| p.trainable);
    let mut losses: Vec<(usize, f64)> = Vec::with_capacity(cfg.train.steps);
    let started = Instant::now();
    let result = pipeline::train(&mut model, &bundle, &cfg.train, |step, loss| {
        losses.push((step, loss));
        if (step + 1) % 20 == 0 {
            log::info!("step {}\tloss {loss:.6}", step + 1);
        }
    });
    let loss_log: String = losses.iter().map(|(s, l)| format!("{s}\t{l}\n")).collect();
    write_text(&out.join("loss.tsv"), &loss_log)?;

    let log = match result {
        Ok(log) => log,
        Err(e @ Error::Numeric(_)) => {
            let path = out.join(LAST_GOOD_CHECKPOINT);
            checkpoint::save(&path, &model)?;
            eprintln!(
                "training stopped after {} good steps; last good parameters saved to {}",
                losses.len(),
                path.display()
            );
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let ckpt = checkpoint_out.map_or_else(|| out.join(CHECKPOINT), Path::to_path_buf);
    checkpoint::save(&ckpt, &model)?;

    let summary = format!(
        "steps\t{}\n\
         seconds\t{:.3}\n\
         probe_loss_initial\t{}\n\
         probe_loss_final\t{}\n\
         probe_loss_ratio\t{}\n\
         frozen_checksum_initial\t{frozen_before}\n\
         frozen_checksum_final\t{}\n\
         trainable_checksum_initial\t{trainable_before}\n\
         trainable_checksum_final\t{}\n\
         checkpoint\t{}\n",
        cfg.train.steps,
        started.elapsed().as_secs_f64(),
        log.probe_initial,
        log.probe_final,
        log.probe_final / log.probe_initial,
        model.store.checksum(|p| !p.trainable),
        model.store.checksum(|p| p.trainable),
        ckpt.display(),
    );
    write_text(&out.join("train_summary.tsv"), &summary)?;
    log::info!(
        "probe loss {:.6} -> {:.6}",
        log.probe_initial,
        log.probe_final
    );
    if infer_after {
        sample_video(&model, &bundle, &vae, &sample, &cfg, &out.join("infer"))?;
    }
    Ok(())
}

pub fn infer(
    file: Option<&Path>,
    flags: FileConfig,
    checkpoint_path: &Path,
    sample_path: &Path,
    out: &Path,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(file, flags)?;
    cfg.record_run(
        "infer",
        &[("checkpoint", checkpoint_path), ("sample", sample_path)],
    );
    cfg.write(out)?;
    let model = checkpoint::load(checkpoint_path, cfg.model.clone(), cfg.ablations)?;
    let sample = read_sample(sample_path)?;
    let (vae, bundle) = prepare(&cfg, &sample, out)?;
    sample_video(&model, &bundle, &vae, &sample, &cfg, out)
}

/// Denoises, decodes and writes the latent, the video, its frames and
/// metrics against the sample's own video.
fn sample_video(
    model: &KeyTailorModel,
    bundle: &LatentBundle,
    vae: &ToyVae,
    sample: &SyntheticSample,
    cfg: &RunConfig,
    out: &Path,
) -> Result<()> {
    let latent = denoise(model, bundle, cfg.infer_steps, cfg.infer_seed)?;
    let video = vae.decode_video(&latent, bundle.frames())?;
    fs::create_dir_all(out.join("frames")).map_err(io_err(out))?;
    ktsr::write(&out.join("latent.ktsr"), &latent)?;
    ktsr::write(&out.join("video.ktsr"), &video)?;
    for t in 0..bundle.frames() {
        ktsr::write(
            &out.join("frames").join(format!("frame_{t:03}.ktsr")),
            &video_frame(&video, t)?,
        )?;
    }
    let metrics = compare(&video, &sample.video)?;
    write_text(&out.join("metrics.tsv"), &metrics.to_string())?;
    log::info!("mean SSIM {:.4}", metrics.mean_ssim());
    Ok(())
}

/// A KTSR video, or the video of a sample directory or manifest.
fn read_video(path: &Path) -> Result<Tensor> {
    let is_ktsr = path.extension().is_some_and(|e| e == "ktsr");
    if is_ktsr {
        ktsr::read(path)
    } else {
        Ok(read_sample(path)?.video)
    }
}

fn compare(generated: &Tensor, reference: &Tensor) -> Result<MetricReport> {
    if generated.shape() != reference.shape() {
        return Err(Error::Dimension(format!(
            "videos have shapes {:?} and {:?}",
            generated.shape(),
            reference.shape()
        )));
    }
    let &[_, t, _, _] = generated.shape() else {
        return Err(Error::Shape(format!(
            "expected a [C×T×H×W] video, got {:?}",
            generated.shape()
        )));
    };
    let rows = (0..t)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (video_frame(generated, i)?, video_frame(reference, i)?);
            Ok((ssim(&a, &b)?, psnr(&a, &b)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(MetricReport {
        ssim: rows.iter().map(|r| r.0).collect(),
        psnr: rows.iter().map(|r| r.1).collect(),
    })
}

pub fn eval(generated: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let report = compare(&read_video(generated)?, &read_video(reference)?)?;
    let text = report.to_string();
    print!("{text}");
    if let Some(out) = out {
        let mut cfg = RunConfig::resolve(None, FileConfig::default())?;
        cfg.record_run(
            "eval",
            &[("generated", generated), ("reference", reference)],
        );
        cfg.write(out)?;
        write_text(&out.join("metrics.tsv"), &text)?;
    }
    Ok(())
}

pub fn gradcheck(scope: Scope, seeds: u64, corrupt: bool, out: Option<&Path>) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    let started = Instant::now();
    let mut lines = String::new();
    let results = run_scope(scope, seeds, corrupt, |r| {
        log::debug!("{r}");
        lines.push_str(&format!("{r}\n"));
    })?;
    let failures: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    let worst = results
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .map(|r| format!("{:.3e} ({} seed {})", r.rel_error, r.case, r.seed))
        .unwrap_or_default();
    let summary = format!(
        "scope\t{scope}\tcases\t{}\tfailed\t{}\tmax_rel_error\t{worst}\ttolerance\t{:e}\tseconds\t{:.2}\n",
        results.len(),
        failures.len(),
        scope.tolerance(),
        started.elapsed().as_secs_f64()
    );
    for f in &failures {
        eprintln!("{f}");
    }
    print!("{summary}");
    if let Some(out) = out {
        let path: PathBuf = out.join("gradcheck.tsv");
        write_text(&path, &(lines + &summary))?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{} of {} gradient checks exceeded tolerance {:e}",
            failures.len(),
            results.len(),
            scope.tolerance()
        )))
    }
}
