//! Layered run configuration: command-line flags over a TOML file over
//! built-in defaults. Every command writes the resolved result beside its
//! outputs in the same schema, so a run can be repeated from that file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use keytailor::dit::{Ablations, ModelConfig, TrainConfig, DEFAULT_INFERENCE_STEPS};
use keytailor::keyframe::scores::CLARITY_THRESHOLD;
use keytailor::keyframe::SamplerConfig;
use keytailor::pipeline::DEFAULT_INSTRUCTION;
use keytailor::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub k_max: Option<usize>,
    pub weights: Option<[f64; 4]>,
    pub lambda: Option<f64>,
    /// Seconds; omitted means a fifth of the video span.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_thres: Option<f64>,
    pub occlu_thres: Option<f64>,
    pub score_diff_min: Option<f64>,
    /// `eq1` or `algorithm`.
    pub mode: Option<String>,
    /// Sobel magnitude threshold of the background clarity score.
    pub clarity_threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub blocks: Option<usize>,
    pub width: Option<usize>,
    pub heads: Option<usize>,
    pub rank: Option<usize>,
    pub latent_channels: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// `a..b` (inclusive) or a comma-separated list.
    pub seeds: Option<String>,
    pub frames: Option<usize>,
    pub size: Option<usize>,
}

/// The on-disk schema. Plain values precede tables so it serializes as TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub instruction: Option<String>,
    pub ablations: Vec<String>,
    pub sampler: SamplerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub corpus: CorpusSection,
    /// The command and input paths of the run that wrote the file. Ignored on load.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub run: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Fields set in `top` win over fields set in `self`; ablation lists are merged.
    pub fn overlay(mut self, top: FileConfig) -> FileConfig {
        fn pick<T>(base: &mut Option<T>, top: Option<T>) {
            if top.is_some() {
                *base = top;
            }
        }
        pick(&mut self.instruction, top.instruction);
        for a in top.ablations {
            if !self.ablations.contains(&a) {
                self.ablations.push(a);
            }
        }
        let (s, t) = (&mut self.sampler, top.sampler);
        pick(&mut s.k_max, t.k_max);
        pick(&mut s.weights, t.weights);
        pick(&mut s.lambda, t.lambda);
        pick(&mut s.t_thres, t.t_thres);
        pick(&mut s.occlu_thres, t.occlu_thres);
        pick(&mut s.score_diff_min, t.score_diff_min);
        pick(&mut s.mode, t.mode);
        pick(&mut s.clarity_threshold, t.clarity_threshold);
        let (m, t) = (&mut self.model, top.model);
        pick(&mut m.blocks, t.blocks);
        pick(&mut m.width, t.width);
        pick(&mut m.heads, t.heads);
        pick(&mut m.rank, t.rank);
        pick(&mut m.latent_channels, t.latent_channels);
        pick(&mut m.alpha, t.alpha);
        pick(&mut m.seed, t.seed);
        let (r, t) = (&mut self.train, top.train);
        pick(&mut r.lr, t.lr);
        pick(&mut r.beta1, t.beta1);
        pick(&mut r.beta2, t.beta2);
        pick(&mut r.eps, t.eps);
        pick(&mut r.weight_decay, t.weight_decay);
        pick(&mut r.steps, t.steps);
        pick(&mut r.seed, t.seed);
        let (i, t) = (&mut self.infer, top.infer);
        pick(&mut i.steps, t.steps);
        pick(&mut i.seed, t.seed);
        let (c, t) = (&mut self.corpus, top.corpus);
        pick(&mut c.seeds, t.seeds);
        pick(&mut c.frames, t.frames);
        pick(&mut c.size, t.size);
        self
    }

    /// Every field filled from the built-in defaults.
    pub fn defaults() -> FileConfig {
        let s = SamplerConfig::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        FileConfig {
            instruction: Some(DEFAULT_INSTRUCTION.to_string()),
            ablations: Vec::new(),
            sampler: SamplerSection {
                k_max: Some(s.k_max),
                weights: Some(s.weights),
                lambda: Some(s.lambda),
                t_thres: s.t_thres,
                occlu_thres: Some(s.occlu_thres),
                score_diff_min: Some(s.score_diff_min),
                mode: Some(s.mode.name().to_string()),
                clarity_threshold: Some(CLARITY_THRESHOLD),
            },
            model: ModelSection {
                blocks: Some(m.blocks),
                width: Some(m.width),
                heads: Some(m.heads),
                rank: Some(m.rank),
                latent_channels: Some(m.latent_channels),
                alpha: Some(m.alpha),
                seed: Some(m.seed),
            },
            train: TrainSection {
                lr: Some(t.lr),
                beta1: Some(t.beta1),
                beta2: Some(t.beta2),
                eps: Some(t.eps),
                weight_decay: Some(t.weight_decay),
                steps: Some(t.steps),
                seed: Some(t.seed),
            },
            infer: InferSection {
                steps: Some(DEFAULT_INFERENCE_STEPS),
                seed: Some(0),
            },
            corpus: CorpusSection {
                seeds: Some("1..50".into()),
                frames: Some(16),
                size: Some(64),
            },
            run: BTreeMap::new(),
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub instruction: String,
    pub ablations: Ablations,
    pub sampler: SamplerConfig,
    pub clarity_threshold: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer_steps: usize,
    pub infer_seed: u64,
    pub corpus_seeds: Vec<u64>,
    pub corpus_frames: usize,
    pub corpus_size: usize,
    /// The layered file form, written beside outputs.
    pub snapshot: FileConfig,
}

fn required<T>(v: Option<T>, what: &str) -> T {
    v.unwrap_or_else(|| panic!("defaults provide {what}"))
}

impl RunConfig {
    /// Resolves `flags` over the optional config file over the defaults and
    /// validates the result.
    pub fn resolve(file: Option<&Path>, flags: FileConfig) -> Result<Self> {
        let mut layered = FileConfig::defaults();
        if let Some(path) = file {
            layered = layered.overlay(FileConfig::load(path)?);
        }
        let snapshot = layered.overlay(flags);

        let mut ablations = Ablations::default();
        for name in &snapshot.ablations {
            ablations.set(name, true)?;
        }
        ablations.validate()?;

        let s = &snapshot.sampler;
        let sampler = SamplerConfig {
            k_max: required(s.k_max, "k_max"),
            weights: required(s.weights, "weights"),
            lambda: required(s.lambda, "lambda"),
            t_thres: s.t_thres,
            occlu_thres: required(s.occlu_thres, "occlu_thres"),
            score_diff_min: required(s.score_diff_min, "score_diff_min"),
            mode: required(s.mode.as_deref(), "mode").parse()?,
        };
        sampler.validate()?;
        let clarity_threshold = required(s.clarity_threshold, "clarity_threshold");
        if !(clarity_threshold.is_finite() && clarity_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "clarity threshold must be ≥ 0, got {clarity_threshold}"
            )));
        }

        let m = &snapshot.model;
        let model = ModelConfig {
            blocks: required(m.blocks, "blocks"),
            width: required(m.width, "width"),
            heads: required(m.heads, "heads"),
            rank: required(m.rank, "rank"),
            latent_channels: required(m.latent_channels, "latent_channels"),
            alpha: required(m.alpha, "alpha"),
            seed: required(m.seed, "model seed"),
        };
        model.validate()?;
        if !(0.0..=1.0).contains(&model.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {}",
                model.alpha
            )));
        }

        let t = &snapshot.train;
        let train = TrainConfig {
            lr: required(t.lr, "lr"),
            beta1: required(t.beta1, "beta1"),
            beta2: required(t.beta2, "beta2"),
            eps: required(t.eps, "eps"),
            weight_decay: required(t.weight_decay, "weight_decay"),
            batch_size: 1,
            steps: required(t.steps, "train steps"),
            seed: required(t.seed, "train seed"),
        };
        train.validate()?;

        let infer_steps = required(snapshot.infer.steps, "infer steps");
        if infer_steps == 0 {
            return Err(Error::Config("inference needs at least one step".into()));
        }
        let c = &snapshot.corpus;
        let corpus_seeds = parse_seeds(&required(c.seeds.clone(), "corpus seeds"))?;
        Ok(RunConfig {
            corpus_seeds,
            corpus_frames: required(c.frames, "corpus frames"),
            corpus_size: required(c.size, "corpus size"),
            instruction: required(snapshot.instruction.clone(), "instruction"),
            ablations,
            sampler,
            clarity_threshold,
            model,
            train,
            infer_steps,
            infer_seed: required(snapshot.infer.seed, "infer seed"),
            snapshot,
        })
    }

    /// Records the command and its inputs in the snapshot.
    pub fn record_run(&mut self, command: &str, inputs: &[(&str, &Path)]) {
        self.snapshot.run.clear();
        self.snapshot.run.insert("command".into(), command.into());
        for (role, path) in inputs {
            self.snapshot
                .run
                .insert(role.to_string(), path.display().to_string());
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.snapshot).expect("config snapshot serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|e| Error::Io { path, source: e })
    }
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seeds must look like 1..50 or 1,2,3, got {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
