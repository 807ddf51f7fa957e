//! Rectified-flow objective and the Euler sampler.
//!
//! Time runs from noise at `t = 0` to data at `t = 1`:
//! `x_t = t·x1 + (1 − t)·x0`, with constant velocity `x1 − x0`.

use crate::numerics::{Graph, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

pub fn flow_interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Usage(format!("flow time {t} is outside [0, 1]")));
    }
    let (a, b) = (t as f32, (1.0 - t) as f32);
    x1.zip_map(x0, |v1, v0| a * v1 + b * v0)
}

pub fn target_velocity(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    x1.sub(x0)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logit-normal time: `sigmoid(z)` with `z` standard normal.
pub fn sample_timestep(rng: &mut SeededRng) -> f64 {
    sigmoid(rng.normal())
}

/// Mean squared error between predicted and target velocity.
pub fn fm_loss<E: Real>(g: &mut Graph<E>, pred: Var, target: Var) -> Result<Var> {
    g.mse(pred, target)
}

/// A velocity field `u(x, t)` over latent tensors.
pub trait VelocityField {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

impl<F: Fn(&Tensor, f64) -> Result<Tensor>> VelocityField for F {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self(x, t)
    }
}

/// Euler integration from `t = 0` to `t = 1` in `steps` uniform steps.
/// The state is accumulated in `f64`.
pub fn euler_integrate(field: &impl VelocityField, x0: &Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::Usage("denoising needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut state: Vec<f64> = x0.data().iter().map(|&v| v as f64).collect();
    let mut x = x0.clone();
    for i in 0..steps {
        let t = i as f64 * dt;
        let u = field.velocity(&x, t)?;
        if u.shape() != x.shape() {
            return Err(Error::Shape(format!(
                "velocity {:?} does not match state {:?}",
                u.shape(),
                x.shape()
            )));
        }
        for ((s, &du), xv) in state.iter_mut().zip(u.data()).zip(x.data_mut()) {
            *s += dt * du as f64;
            *xv = *s as f32;
        }
    }
    if !x.all_finite() {
        return Err(Error::Numeric(
            "denoising produced non-finite values".into(),
        ));
    }
    Ok(x)
}

/// Standard normal starting point of the sampler.
pub fn initial_noise(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut SeededRng::new(seed).fork(0x6e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints() {
        let mut rng = SeededRng::new(1);
        let x0 = Tensor::randn([5], 1.0, &mut rng);
        let x1 = Tensor::randn([5], 1.0, &mut rng);
        assert_eq!(flow_interpolate(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(flow_interpolate(&x0, &x1, 1.0).unwrap(), x1);
        let mid = flow_interpolate(&x0, &x1, 0.5).unwrap();
        for i in 0..5 {
            let want = 0.5 * (x0.data()[i] + x1.data()[i]);
            assert!((mid.data()[i] - want).abs() < 1e-7);
        }
        assert!(matches!(
            flow_interpolate(&x0, &x1, 1.5),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn velocity_trivia() {
        let x = Tensor::from_fn([4], |i| i as f32);
        assert_eq!(target_velocity(&x, &x).unwrap().max_abs(), 0.0);
        assert_eq!(target_velocity(&Tensor::zeros([4]), &x).unwrap(), x);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn fm_loss_offset_and_gradient() {
        let mut rng = SeededRng::new(2);
        let target = Tensor::<f64>::randn([3, 4], 1.0, &mut rng);
        let mut g = Graph::<f64>::new();
        let p = g.input(target.map(|v| v + 1.0), true);
        let t = g.constant(target.clone());
        let loss = fm_loss(&mut g, p, t).unwrap();
        assert!((g.value(loss).data()[0] - 1.0).abs() < 1e-12);
        g.backward(loss).unwrap();
        // d/dp mean((p − t)²) = 2(p − t)/n
        let grad = g.grad(p).unwrap();
        assert!(grad.data().iter().all(|&v| (v - 2.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn single_step_is_one_full_update() {
        let x0 = Tensor::from_fn([3], |i| i as f32);
        let field = |x: &Tensor, _t: f64| Ok(x.scale(2.0));
        let y = euler_integrate(&field, &x0, 1).unwrap();
        assert_eq!(y, x0.scale(3.0));
        assert!(matches!(
            euler_integrate(&field, &x0, 0),
            Err(Error::Usage(_))
        ));
    }
}
