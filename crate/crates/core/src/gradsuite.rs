//! Finite-difference suites over every differentiable operation, one
//! transformer block and the whole model, all in 64-bit.

use std::fmt;
use std::str::FromStr;

use crate::dit::block::{BlockInputs, DiTBlock};
use crate::dit::lora::lora_linear;
use crate::dit::{Ablations, KeyTailorModel, LatentBundle, ModelConfig};
use crate::latents::fusion::broadcast_frames;
use crate::latents::{cbdo_fuse, fuse_guidance, gdde_distill};
use crate::latents::{DistillComponent, FusionInputs, FusionProjection, GuiderNet};
use crate::numerics::gradcheck::{
    check_inputs, check_params, GradcheckConfig, GradcheckReport, Probe,
};
use crate::numerics::layers::{
    attention, channel_layernorm, conv1x1, linear, patchify, unpatchify,
};
use crate::numerics::{Graph, ParamId, ParamStore, SeededRng, Tensor, Var};
use crate::{Error, Result};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const LAYER_SEEDS: u64 = 20;
pub const BLOCK_SEEDS: u64 = 20;
pub const MODEL_SEEDS: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Layer,
    Block,
    Model,
}

impl Scope {
    pub fn tolerance(self) -> f64 {
        match self {
            Scope::Layer => LAYER_TOLERANCE,
            Scope::Block => BLOCK_TOLERANCE,
            Scope::Model => MODEL_TOLERANCE,
        }
    }

    pub fn default_seeds(self) -> u64 {
        match self {
            Scope::Layer => LAYER_SEEDS,
            Scope::Block => BLOCK_SEEDS,
            Scope::Model => MODEL_SEEDS,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Layer => "layer",
            Scope::Block => "block",
            Scope::Model => "model",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(Scope::Layer),
            "block" => Ok(Scope::Block),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Config(format!(
                "scope must be layer, block or model, got {s:?}"
            ))),
        }
    }
}

/// Outcome of one case at one seed.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub case: String,
    pub seed: u64,
    pub rel_error: f64,
    /// Tensor with the largest error.
    pub worst: String,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\tseed\t{}\trel_error\t{:.3e}\tworst\t{}",
            if self.passed() { "pass" } else { "FAIL" },
            self.case,
            self.seed,
            self.rel_error,
            self.worst
        )
    }
}

type Case = fn(&mut SeededRng, &GradcheckConfig) -> Result<GradcheckReport>;

fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

fn inputs(shapes: &[&[usize]], rng: &mut SeededRng) -> Vec<Tensor<f64>> {
    shapes.iter().map(|s| randn(s, rng)).collect()
}

/// Checks `f` over fresh random inputs of the given shapes.
fn over(
    shapes: &[&[usize]],
    rng: &mut SeededRng,
    cfg: &GradcheckConfig,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradcheckReport> {
    check_inputs(f, &inputs(shapes, rng), cfg)
}

fn merge(parts: Vec<GradcheckReport>) -> GradcheckReport {
    GradcheckReport {
        entries: parts.into_iter().flat_map(|r| r.entries).collect(),
    }
}

/// Every differentiable graph operation and composite layer.
pub fn layer_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("add", |r, c| {
            over(&[&[3, 4], &[3, 4]], r, c, |g, x| g.add(x[0], x[1]))
        }),
        ("sub", |r, c| {
            over(&[&[3, 4], &[3, 4]], r, c, |g, x| g.sub(x[0], x[1]))
        }),
        ("mul", |r, c| {
            over(&[&[3, 4], &[3, 4]], r, c, |g, x| g.mul(x[0], x[1]))
        }),
        ("scale", |r, c| {
            over(&[&[5]], r, c, |g, x| Ok(g.scale(x[0], -1.7)))
        }),
        ("matmul", |r, c| {
            over(&[&[3, 4], &[4, 5]], r, c, |g, x| g.matmul(x[0], x[1]))
        }),
        ("matmul_bt", |r, c| {
            over(&[&[3, 4], &[5, 4]], r, c, |g, x| g.matmul_bt(x[0], x[1]))
        }),
        ("gather", |r, c| {
            let map: Vec<usize> = (0..10).map(|_| r.below(12)).collect();
            over(&[&[3, 4]], r, c, move |g, x| {
                g.gather(x[0], map.clone(), &[2, 5])
            })
        }),
        ("reshape", |r, c| {
            over(&[&[3, 4]], r, c, |g, x| {
                let y = g.reshape(x[0], &[2, 6])?;
                let w = g.constant(Tensor::from_fn([2, 6], |i| i as f64 - 3.0));
                g.mul(y, w)
            })
        }),
        ("transpose", |r, c| {
            over(&[&[3, 4]], r, c, |g, x| g.transpose(x[0]))
        }),
        ("slice_cols", |r, c| {
            over(&[&[3, 6]], r, c, |g, x| g.slice_cols(x[0], 2, 3))
        }),
        ("add_row_vector", |r, c| {
            over(&[&[3, 4], &[4]], r, c, |g, x| g.add_row_vector(x[0], x[1]))
        }),
        ("add_col_vector", |r, c| {
            over(&[&[3, 4], &[3]], r, c, |g, x| g.add_col_vector(x[0], x[1]))
        }),
        ("concat", |r, c| {
            over(&[&[2, 3], &[2, 2], &[1, 5]], r, c, |g, x| {
                let a = g.concat(&[x[0], x[1]], 1)?;
                g.concat(&[a, x[2]], 0)
            })
        }),
        ("softmax", |r, c| {
            over(&[&[3, 5]], r, c, |g, x| g.softmax(x[0]))
        }),
        ("layernorm", |r, c| {
            over(&[&[3, 6], &[6], &[6]], r, c, |g, x| {
                g.layernorm(x[0], x[1], x[2], 1e-5)
            })
        }),
        ("gelu", |r, c| {
            over(&[&[3, 4]], r, c, |g, x| Ok(g.gelu(x[0])))
        }),
        ("silu", |r, c| {
            over(&[&[3, 4]], r, c, |g, x| Ok(g.silu(x[0])))
        }),
        ("conv3d", |r, c| {
            over(&[&[2, 3, 5, 6], &[3, 2, 3, 3, 3], &[3]], r, c, |g, x| {
                g.conv3d(x[0], x[1], x[2], [1, 2, 2])
            })
        }),
        ("conv3d_strided", |r, c| {
            over(&[&[2, 4, 4, 4], &[2, 2, 3, 3, 3], &[2]], r, c, |g, x| {
                g.conv3d(x[0], x[1], x[2], [2, 2, 2])
            })
        }),
        ("sum", |r, c| over(&[&[3, 4]], r, c, |g, x| Ok(g.sum(x[0])))),
        ("mean", |r, c| {
            over(&[&[3, 4]], r, c, |g, x| Ok(g.mean(x[0])))
        }),
        ("mse", |r, c| {
            over(&[&[3, 4], &[3, 4]], r, c, |g, x| g.mse(x[0], x[1]))
        }),
        ("linear", |r, c| {
            over(&[&[3, 4], &[5, 4], &[5]], r, c, |g, x| {
                linear(g, x[0], x[1], Some(x[2]))
            })
        }),
        ("conv1x1", |r, c| {
            over(&[&[4, 2, 3], &[3, 4], &[3]], r, c, |g, x| {
                conv1x1(g, x[0], x[1], x[2])
            })
        }),
        ("channel_layernorm", |r, c| {
            over(&[&[4, 2, 3], &[4], &[4]], r, c, |g, x| {
                channel_layernorm(g, x[0], x[1], x[2], 1e-5)
            })
        }),
        ("attention", |r, c| {
            over(&[&[4, 8], &[5, 8], &[5, 8]], r, c, |g, x| {
                attention(g, x[0], x[1], x[2], 2)
            })
        }),
        ("cross_attention", |r, c| {
            // queries from hidden tokens, keys and values from garment tokens
            over(
                &[&[4, 8], &[3, 6], &[8, 8], &[8, 6], &[8, 6]],
                r,
                c,
                |g, x| {
                    let q = g.matmul_bt(x[0], x[2])?;
                    let k = g.matmul_bt(x[1], x[3])?;
                    let v = g.matmul_bt(x[1], x[4])?;
                    attention(g, q, k, v, 2)
                },
            )
        }),
        ("patchify", |r, c| {
            over(&[&[2, 2, 4, 4]], r, c, |g, x| patchify(g, x[0], [1, 2, 2]))
        }),
        ("unpatchify", |r, c| {
            over(&[&[8, 8]], r, c, |g, x| {
                unpatchify(g, x[0], [2, 2, 4, 4], [1, 2, 2])
            })
        }),
        ("lora_linear", |r, c| {
            over(&[&[3, 5], &[4, 5], &[4, 2], &[5, 2]], r, c, |g, x| {
                lora_linear(g, x[0], x[1], x[2], x[3])
            })
        }),
        ("keyframe_query_bias", |r, c| {
            over(&[&[1, 6], &[6, 2], &[4, 2], &[3, 4]], r, c, |g, x| {
                let down = g.matmul(x[0], x[1])?;
                let b = g.matmul_bt(down, x[2])?;
                let b = g.reshape(b, &[4])?;
                g.add_row_vector(x[3], b)
            })
        }),
        ("broadcast_frames", |r, c| {
            over(&[&[2, 3, 2]], r, c, |g, x| broadcast_frames(g, x[0], 3))
        }),
        ("cbdo_fuse", |r, c| {
            over(&[&[2, 3, 2, 2], &[2, 2, 2]], r, c, |g, x| {
                cbdo_fuse(g, x[0], x[1], 0.3)
            })
        }),
        ("gdde_distill", gdde_case),
        ("fuse_guidance", fuse_case),
        ("guider", guider_case),
    ]
}

fn gdde_case(rng: &mut SeededRng, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut store = ParamStore::new();
    let d = DistillComponent::new(&mut store, "d", 3, rng);
    let parts = inputs(&[&[3, 2, 2], &[3, 2, 2], &[3, 2, 2]], rng);
    let by_input = check_inputs(
        |g, x| gdde_distill(g, &store, &d, x[0], &x[1..]),
        &parts,
        cfg,
    )?;
    let by_param = check_params(
        &store,
        &d.param_ids(),
        |g| {
            let vars: Vec<Var> = parts.iter().map(|t| g.constant(t.clone())).collect();
            gdde_distill(g, &store, &d, vars[0], &vars[1..])
        },
        cfg,
    )?;
    Ok(merge(vec![by_input, by_param]))
}

fn fuse_case(rng: &mut SeededRng, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let c = 2;
    let mut store = ParamStore::new();
    let r = FusionProjection::new(&mut store, "r", 4 * (c + 1) + 4 * c, 4 * c, 0.1, rng);
    let parts = inputs(
        &[
            &[c, 2, 4, 4],
            &[1, 2, 4, 4],
            &[c, 4, 4],
            &[c, 2, 4, 4],
            &[c, 2, 4, 4],
        ],
        rng,
    );
    let build = |g: &mut Graph<f64>, x: &[Var]| {
        fuse_guidance(
            g,
            &store,
            &r,
            FusionInputs {
                pose: x[0],
                mask: x[1],
                garment: x[2],
                noise: x[3],
                background: x[4],
            },
        )
    };
    let by_input = check_inputs(build, &parts, cfg)?;
    let by_param = check_params(
        &store,
        &[r.weight],
        |g| {
            let vars: Vec<Var> = parts.iter().map(|t| g.constant(t.clone())).collect();
            build(g, &vars)
        },
        cfg,
    )?;
    Ok(merge(vec![by_input, by_param]))
}

fn guider_case(rng: &mut SeededRng, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut store = ParamStore::new();
    let guider = GuiderNet::new(&mut store, "guider", 3, 2, rng);
    silence_to_noise(&mut store, 0.5, rng);
    let x = Tensor::<f64>::uniform([3, 4, 16, 16], 0.0, 1.0, rng);
    let cfg = GradcheckConfig {
        probe: Probe::Directional,
        ..cfg.clone()
    };
    check_params(
        &store,
        &guider.param_ids(),
        |g| {
            let xv = g.constant(x.clone());
            guider.forward(g, &store, xv)
        },
        &cfg,
    )
}

fn silence_to_noise(store: &mut ParamStore, std: f64, rng: &mut SeededRng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let p = store.get_mut(id);
        if p.trainable && p.value.data().iter().all(|&v| v == 0.0) {
            p.value = Tensor::randn(p.value.shape().to_vec(), std, rng);
        }
    }
}

/// One block with random adapters, against its parameters and inputs.
fn block_case(rng: &mut SeededRng, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (d, heads, rank, gw) = (16, 2, 2, 8);
    let mut store = ParamStore::new();
    let block = DiTBlock::new(&mut store, "block", d, heads, rank, gw, rng);
    silence_to_noise(&mut store, 0.1, rng);
    let parts = inputs(&[&[6, d], &[4, gw], &[1, gw]], rng);
    let run = |g: &mut Graph<f64>, x: &[Var]| {
        block.forward(
            g,
            &store,
            BlockInputs {
                hidden: x[0],
                garment: x[1],
                pooled_keyframe: Some(x[2]),
                adapt: true,
            },
        )
    };
    let by_input = check_inputs(run, &parts, cfg)?;
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).trainable).collect();
    let by_param = check_params(
        &store,
        &ids,
        |g| {
            let vars: Vec<Var> = parts.iter().map(|t| g.constant(t.clone())).collect();
            run(g, &vars)
        },
        cfg,
    )?;
    Ok(merge(vec![by_input, by_param]))
}

/// The full model on a small random bundle, against every trainable tensor.
fn model_case(rng: &mut SeededRng, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let config = ModelConfig {
        seed: rng.next_u64(),
        ..ModelConfig::default()
    };
    let c = config.latent_channels;
    let mut model = KeyTailorModel::new(config, Ablations::default())?;
    model.perturb_silent_params(0.05, rng);
    let bundle = LatentBundle::random(4, 32, c, 2, rng);
    let x_t = randn(&bundle.grid(), rng);
    let t = 0.2 + 0.6 * rng.uniform();
    let ids: Vec<ParamId> = model
        .store
        .ids()
        .filter(|&id| model.store.get(id).trainable)
        .collect();
    let cfg = GradcheckConfig {
        probe: Probe::Directional,
        ..cfg.clone()
    };
    check_params(
        &model.store,
        &ids,
        |g| {
            let x = g.constant(x_t.clone());
            Ok(model.forward(g, &bundle, x, t)?.velocity)
        },
        &cfg,
    )
}

/// Runs `scope` over seeds `0..seeds`. `corrupt` perturbs every analytic
/// gradient so the failure path can be exercised.
pub fn run_scope(
    scope: Scope,
    seeds: u64,
    corrupt: bool,
    mut on_result: impl FnMut(&CaseResult),
) -> Result<Vec<CaseResult>> {
    let cases: Vec<(&str, Case)> = match scope {
        Scope::Layer => layer_cases(),
        Scope::Block => vec![("dit_block", block_case)],
        Scope::Model => vec![("model", model_case)],
    };
    let mut results = Vec::new();
    for (name, case) in cases {
        for seed in 0..seeds {
            let cfg = GradcheckConfig {
                seed,
                corrupt,
                ..GradcheckConfig::default()
            };
            let mut rng = SeededRng::new(seed).fork(0x96);
            let report = case(&mut rng, &cfg)?;
            let worst = report.worst().map(|e| e.name.clone()).unwrap_or_default();
            let result = CaseResult {
                case: name.to_string(),
                seed,
                rel_error: report.max_rel_error(),
                worst,
                tolerance: scope.tolerance(),
            };
            on_result(&result);
            results.push(result);
        }
    }
    Ok(results)
}
