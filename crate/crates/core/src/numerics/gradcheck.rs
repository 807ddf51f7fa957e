//! Finite-difference gradient checking in 64-bit floats.
//!
//! Non-scalar outputs are reduced to `sum(out ⊙ R)` with a fixed seeded `R`,
//! so every output element contributes a distinct weight to the check.
//! Relative error of a tensor gradient is
//! `max|a − n| / max(‖a‖∞, ‖n‖∞, floor)`.

use crate::Result;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::SeededRng;
use super::tensor::Tensor;

/// Below this scale two gradients are both treated as zero.
pub const REL_FLOOR: f64 = 1e-8;
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    /// Perturb every element separately.
    Full,
    /// One random direction per tensor; compares directional derivatives.
    Directional,
}

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub probe: Probe,
    /// Seeds the output projection and the probe directions.
    pub seed: u64,
    /// Perturbs the analytic gradient so the failure path can be exercised.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: DEFAULT_STEP,
            probe: Probe::Full,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorError {
    pub name: String,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub entries: Vec<TensorError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorError> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Scalar projection `sum(out ⊙ R)`; scalars pass through unchanged.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    if g.value(out).len() == 1 {
        return Ok(g.sum(out));
    }
    let mut rng = SeededRng::new(seed).fork(0x9c);
    let r = Tensor::<f64>::randn(g.shape(out).to_vec(), 1.0, &mut rng);
    let r = g.constant(r);
    let weighted = g.mul(out, r)?;
    Ok(g.sum(weighted))
}

type Evaluator<'a> = dyn Fn(&[Tensor<f64>], bool) -> Result<(f64, Vec<Tensor<f64>>)> + 'a;

fn run(
    base: &[Tensor<f64>],
    names: &[String],
    eval: &Evaluator<'_>,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let (_, mut analytic) = eval(base, true)?;
    if cfg.corrupt {
        if let Some(a) = analytic.first_mut() {
            let bump = 0.5 * a.max_abs() + 1e-3;
            if let Some(v) = a.data_mut().first_mut() {
                *v += bump;
            }
        }
    }
    let h = cfg.step;
    let mut point: Vec<Tensor<f64>> = base.to_vec();
    let value_at = |point: &[Tensor<f64>]| -> Result<f64> { Ok(eval(point, false)?.0) };
    let mut entries = Vec::with_capacity(base.len());
    let mut dir_rng = SeededRng::new(cfg.seed).fork(0xd1);
    for (idx, a) in analytic.iter().enumerate() {
        let rel_error = match cfg.probe {
            Probe::Full => {
                let mut numeric = Vec::with_capacity(a.len());
                for i in 0..a.len() {
                    let x0 = base[idx].data()[i];
                    point[idx].data_mut()[i] = x0 + h;
                    let up = value_at(&point)?;
                    point[idx].data_mut()[i] = x0 - h;
                    let down = value_at(&point)?;
                    point[idx].data_mut()[i] = x0;
                    numeric.push((up - down) / (2.0 * h));
                }
                let diff = a
                    .data()
                    .iter()
                    .zip(&numeric)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                let scale = a
                    .max_abs()
                    .max(numeric.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
                    .max(REL_FLOOR);
                diff / scale
            }
            Probe::Directional => {
                let u = Tensor::<f64>::randn(a.shape().to_vec(), 1.0, &mut dir_rng);
                let along: f64 = a.data().iter().zip(u.data()).map(|(x, y)| x * y).sum();
                point[idx] = base[idx].zip_map(&u, |x, d| x + h * d)?;
                let up = value_at(&point)?;
                point[idx] = base[idx].zip_map(&u, |x, d| x - h * d)?;
                let down = value_at(&point)?;
                point[idx] = base[idx].clone();
                let numeric = (up - down) / (2.0 * h);
                (along - numeric).abs() / along.abs().max(numeric.abs()).max(REL_FLOOR)
            }
        };
        entries.push(TensorError {
            name: names[idx].clone(),
            rel_error,
        });
    }
    Ok(GradcheckReport { entries })
}

/// Checks the gradient of `f` with respect to its single input `x`, elementwise.
/// Returns the maximum relative error.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let cfg = GradcheckConfig {
        step: h,
        ..GradcheckConfig::default()
    };
    let report = check_inputs(|g, xs| f(g, xs[0]), std::slice::from_ref(x), &cfg)?;
    Ok(report.max_rel_error())
}

/// Checks the gradients of `f` with respect to every tensor in `inputs`.
pub fn check_inputs<F>(
    f: F,
    inputs: &[Tensor<f64>],
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let seed = cfg.seed;
    let eval = |point: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = if want_grad {
            Graph::new()
        } else {
            Graph::inference()
        };
        let vars: Vec<Var> = point
            .iter()
            .map(|t| g.input(t.clone(), want_grad))
            .collect();
        let out = f(&mut g, &vars)?;
        let loss = project(&mut g, out, seed)?;
        let value = g.value(loss).data()[0];
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(point)
            .map(|(&v, t)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect();
        Ok((value, grads))
    };
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    run(inputs, &names, &eval, cfg)
}

/// Checks gradients with respect to stored parameters `ids`; `build` binds
/// parameters through [`Graph::param`] and returns the output node.
pub fn check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    build: F,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let seed = cfg.seed;
    let base: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).value.cast()).collect();
    let names: Vec<String> = ids.iter().map(|&id| store.get(id).name.clone()).collect();
    let eval = |point: &[Tensor<f64>], want_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = if want_grad {
            Graph::new()
        } else {
            Graph::inference()
        };
        for (&id, t) in ids.iter().zip(point) {
            g.override_param(id, t.clone());
        }
        let out = build(&mut g)?;
        let loss = project(&mut g, out, seed)?;
        let value = g.value(loss).data()[0];
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        let grads = ids
            .iter()
            .zip(point)
            .map(|(&id, t)| {
                g.param_var(id)
                    .and_then(|v| g.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect();
        Ok((value, grads))
    };
    run(&base, &names, &eval, cfg)
}
