//! One optimization step of the flow-matching objective, and the sampler
//! driven by a trained model.

use crate::numerics::{Graph, SeededRng, Tensor};
use crate::{Error, Result};

use super::bundle::LatentBundle;
use super::flow::{
    euler_integrate, flow_interpolate, fm_loss, initial_noise, sample_timestep, target_velocity,
    VelocityField,
};
use super::model::{ConditioningValues, KeyTailorModel};
use super::optim::AdamW;

/// The random draws of one training step.
#[derive(Clone, Debug)]
pub struct FlowDraw {
    pub t: f64,
    pub x0: Tensor,
}

impl FlowDraw {
    pub fn sample(rng: &mut SeededRng, grid: &[usize]) -> Self {
        let t = sample_timestep(rng);
        let x0 = Tensor::randn(grid.to_vec(), 1.0, rng);
        FlowDraw { t, x0 }
    }
}

/// A fixed set of draws for tracking the loss across steps without noise
/// from fresh sampling.
pub fn probe_draws(count: usize, grid: &[usize], seed: u64) -> Vec<FlowDraw> {
    let mut rng = SeededRng::new(seed).fork(0x70);
    (0..count)
        .map(|_| FlowDraw::sample(&mut rng, grid))
        .collect()
}

fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!(
            "training loss became non-finite ({loss}); aborting"
        )))
    }
}

/// Forward, backward and one optimizer update. Returns the loss before the update.
pub fn train_step(
    model: &mut KeyTailorModel,
    opt: &mut AdamW,
    bundle: &LatentBundle,
    draw: &FlowDraw,
) -> Result<f64> {
    let x1 = &bundle.target;
    let x_t = flow_interpolate(&draw.x0, x1, draw.t)?;
    let v = target_velocity(&draw.x0, x1)?;
    let mut g = Graph::<f32>::new();
    let xv = g.constant(x_t);
    let trace = model.forward(&mut g, bundle, xv, draw.t)?;
    let target = g.constant(v);
    let loss = fm_loss(&mut g, trace.velocity, target)?;
    let value = check_loss(g.value(loss).data()[0] as f64)?;
    g.backward(loss)?;
    model.store.zero_grads();
    g.accumulate_param_grads(&mut model.store);
    opt.step(&mut model.store);
    Ok(value)
}

/// Mean loss over `draws` without updating anything. The conditioning stage
/// is evaluated once.
pub fn evaluate_loss(
    model: &KeyTailorModel,
    bundle: &LatentBundle,
    draws: &[FlowDraw],
) -> Result<f64> {
    let cond = conditioning_values(model, bundle)?;
    let mut total = 0.0;
    for draw in draws {
        let x_t = flow_interpolate(&draw.x0, &bundle.target, draw.t)?;
        let v = target_velocity(&draw.x0, &bundle.target)?;
        let mut g = Graph::<f32>::inference();
        let c = cond.bind(&mut g);
        let xv = g.constant(x_t);
        let trace = model.velocity(&mut g, &c, xv, draw.t)?;
        let target = g.constant(v);
        let loss = fm_loss(&mut g, trace.velocity, target)?;
        total += g.value(loss).data()[0] as f64;
    }
    check_loss(total / draws.len().max(1) as f64)
}

fn conditioning_values(
    model: &KeyTailorModel,
    bundle: &LatentBundle,
) -> Result<ConditioningValues> {
    let mut g = Graph::<f32>::inference();
    let cond = model.condition(&mut g, bundle)?;
    Ok(cond.values(&g))
}

/// A trained model with its conditioning evaluated for one bundle.
pub struct ConditionedModel<'a> {
    model: &'a KeyTailorModel,
    cond: ConditioningValues,
}

impl<'a> ConditionedModel<'a> {
    pub fn new(model: &'a KeyTailorModel, bundle: &LatentBundle) -> Result<Self> {
        Ok(ConditionedModel {
            model,
            cond: conditioning_values(model, bundle)?,
        })
    }
}

impl VelocityField for ConditionedModel<'_> {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let mut g = Graph::<f32>::inference();
        let c = self.cond.bind(&mut g);
        let xv = g.constant(x.clone());
        let trace = self.model.velocity(&mut g, &c, xv, t)?;
        Ok(g.value(trace.velocity).clone())
    }
}

/// Samples a video latent on the bundle's grid from seeded noise.
pub fn denoise(
    model: &KeyTailorModel,
    bundle: &LatentBundle,
    steps: usize,
    seed: u64,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Usage("denoising needs at least one step".into()));
    }
    let field = ConditionedModel::new(model, bundle)?;
    let x0 = initial_noise(&bundle.grid(), seed);
    euler_integrate(&field, &x0, steps)
}
