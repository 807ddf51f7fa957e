//! End-to-end wiring: keyframes, conditioning latents, training and sampling
//! for one synthetic sample.

use crate::dit::{
    denoise, evaluate_loss, probe_draws, train_step, Ablations, AdamW, FlowDraw, KeyTailorModel,
    LatentBundle, TrainConfig,
};
use crate::keyframe::scores::CLARITY_THRESHOLD;
use crate::keyframe::{parse_instruction, select_keyframes, Frame, KeyframeSet, SamplerConfig};
use crate::latents::fusion::apply_mask;
use crate::latents::{
    background_keyframe_latent, extract_keyframe_garment_latents, first_frame_tryon, resize_mask,
    ToyVae,
};
use crate::numerics::{ParamId, SeededRng, Tensor};
use crate::synth::{video_frame, SyntheticSample};
use crate::{Error, Result};

pub const DEFAULT_INSTRUCTION: &str =
    "Show front and back of clothes, raise hand to display sleeves";
/// Seed of the fixed toy encoder shared by every run.
pub const VAE_SEED: u64 = 0;
/// Draws in the fixed probe set used to report training progress.
pub const PROBE_DRAWS: usize = 8;

/// How keyframes were chosen for a bundle.
#[derive(Clone, Debug)]
pub struct KeyframeChoice {
    pub indices: Vec<usize>,
    /// The sampler's full report when instruction-guided sampling ran.
    pub report: Option<KeyframeSet>,
    pub background_index: usize,
}

/// Keyframe indices under the active ablations. Instruction-guided sampling
/// falls back to the first frame when every frame is filtered out.
pub fn choose_keyframes(
    frames: &[Frame],
    instruction: &str,
    sampler: &SamplerConfig,
    ablations: &Ablations,
    seed: u64,
) -> Result<(Vec<usize>, Option<KeyframeSet>)> {
    if frames.is_empty() {
        return Err(Error::Usage("no frames to choose keyframes from".into()));
    }
    if ablations.keyframes_1 {
        return Ok((vec![frames[0].index], None));
    }
    if ablations.no_iks {
        let mut rng = SeededRng::new(seed).fork(0x1c5);
        let mut pool: Vec<usize> = frames.iter().map(|f| f.index).collect();
        let k = sampler.k_max.min(pool.len());
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            picked.push(pool.swap_remove(rng.below(pool.len())));
        }
        return Ok((picked, None));
    }
    let targets = parse_instruction(instruction)?;
    let set = select_keyframes(frames, &targets, sampler)?;
    let indices = if set.is_empty() {
        log::warn!("every frame was filtered; falling back to the first frame");
        vec![frames[0].index]
    } else {
        set.indices()
    };
    Ok((indices, Some(set)))
}

/// Assembles the conditioning tensors of `sample` for the given keyframes.
/// `clarity_threshold` drives the choice of background keyframe.
pub fn build_bundle(
    sample: &SyntheticSample,
    frames: &[Frame],
    keyframes: &[usize],
    vae: &ToyVae,
    clarity_threshold: f64,
) -> Result<(LatentBundle, usize)> {
    sample.validate()?;
    let first = &frames[0];
    let tryon = first_frame_tryon(
        &video_frame(&sample.agnostic, 0)?,
        &sample.garment_ref,
        &first.garment_mask,
    )?;
    let garment_latent = vae.encode_image(&apply_mask(&tryon, &first.garment_mask, false)?)?;
    let keyframe_latents = extract_keyframe_garment_latents(keyframes, frames, vae)?;
    let background = background_keyframe_latent(keyframes, frames, vae, clarity_threshold)?;
    let bundle = LatentBundle {
        pose_maps: sample.pose_maps(),
        agnostic: sample.agnostic.clone(),
        mask_latent: resize_mask(&sample.agnostic_mask())?,
        garment_latent,
        reference_latent: vae.encode_image(&sample.garment_ref)?,
        keyframe_garment: Tensor::stack(&keyframe_latents)?,
        key_background: background.latent,
        agnostic_latent: vae.encode_video(&sample.agnostic)?,
        target: vae.encode_video(&sample.video)?,
    };
    bundle.validate()?;
    Ok((bundle, background.index))
}

/// How keyframes and conditioning latents are derived from a sample.
#[derive(Clone, Debug)]
pub struct PrepareConfig {
    pub instruction: String,
    pub sampler: SamplerConfig,
    pub ablations: Ablations,
    pub clarity_threshold: f64,
    /// Seed of the random keyframe choice under `no-iks`.
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            instruction: DEFAULT_INSTRUCTION.to_string(),
            sampler: SamplerConfig::default(),
            ablations: Ablations::default(),
            clarity_threshold: CLARITY_THRESHOLD,
            seed: 0,
        }
    }
}

/// Keyframes plus bundle for one sample.
pub fn prepare(
    sample: &SyntheticSample,
    cfg: &PrepareConfig,
    vae: &ToyVae,
) -> Result<(LatentBundle, KeyframeChoice)> {
    let frames = sample.frames()?;
    let (indices, report) = choose_keyframes(
        &frames,
        &cfg.instruction,
        &cfg.sampler,
        &cfg.ablations,
        cfg.seed,
    )?;
    let (bundle, background_index) =
        build_bundle(sample, &frames, &indices, vae, cfg.clarity_threshold)?;
    Ok((
        bundle,
        KeyframeChoice {
            indices,
            report,
            background_index,
        },
    ))
}

/// Loss trajectory of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    /// Loss of each step's own random draw.
    pub step_losses: Vec<f64>,
    /// Mean loss on the fixed probe set before training.
    pub probe_initial: f64,
    /// Mean loss on the fixed probe set after training.
    pub probe_final: f64,
}

/// Runs `cfg.steps` optimizer steps on one bundle. `on_step` sees each
/// step's index and loss as it completes. On a non-finite loss the trainable
/// parameters are restored to the last values whose loss was finite.
pub fn train(
    model: &mut KeyTailorModel,
    bundle: &LatentBundle,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    cfg.validate()?;
    let grid = bundle.grid();
    let probes = probe_draws(PROBE_DRAWS, &grid, cfg.seed);
    let probe_initial = evaluate_loss(model, bundle, &probes)?;
    let mut opt = AdamW::new(cfg, &model.store);
    let mut rng = SeededRng::new(cfg.seed).fork(0x7a1);
    let mut step_losses = Vec::with_capacity(cfg.steps);
    // trainable values at which the most recent finite loss was measured
    let mut last_good: Option<Vec<(ParamId, Tensor)>> = None;
    for step in 0..cfg.steps {
        let draw = FlowDraw::sample(&mut rng, &grid);
        let before = trainable_values(model);
        let loss = match train_step(model, &mut opt, bundle, &draw) {
            Ok(loss) => loss,
            Err(e) => {
                if let Some(values) = last_good {
                    for (id, v) in values {
                        model.store.get_mut(id).value = v;
                    }
                }
                return Err(e);
            }
        };
        last_good = Some(before);
        on_step(step, loss);
        step_losses.push(loss);
    }
    let probe_final = evaluate_loss(model, bundle, &probes)?;
    Ok(TrainLog {
        step_losses,
        probe_initial,
        probe_final,
    })
}

fn trainable_values(model: &KeyTailorModel) -> Vec<(ParamId, Tensor)> {
    model
        .store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.value.clone()))
        .collect()
}

/// Samples a latent and decodes it to a `[3 × T × H × W]` video.
pub fn infer(
    model: &KeyTailorModel,
    bundle: &LatentBundle,
    vae: &ToyVae,
    steps: usize,
    seed: u64,
) -> Result<Tensor> {
    let latent = denoise(model, bundle, steps, seed)?;
    vae.decode_video(&latent, bundle.frames())
}
