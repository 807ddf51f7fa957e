mod oracles;

use keytailor::dit::flow::{initial_noise, sigmoid};
use keytailor::dit::{euler_integrate, flow_interpolate, sample_timestep, target_velocity};
use keytailor::numerics::{SeededRng, Tensor};
use keytailor::Error;

#[test]
fn euler_with_exact_field_lands_on_data() {
    for steps in [1, 5, 25] {
        let err = oracles::euler_oracle_error(steps);
        assert!(err < 1e-6, "{steps} steps: {err:e}");
    }
}

#[test]
fn euler_is_first_order_on_a_curved_field() {
    // u = x integrates to e·x0; Euler gives (1 + 1/n)^n·x0
    let x0 = Tensor::from_fn([3], |i| 1.0 + i as f32);
    let field = |x: &Tensor, _t: f64| -> keytailor::Result<Tensor> { Ok(x.clone()) };
    for n in [4usize, 16, 64] {
        let out = euler_integrate(&field, &x0, n).unwrap();
        let factor = (1.0 + 1.0 / n as f64).powi(n as i32);
        for (o, x) in out.data().iter().zip(x0.data()) {
            assert!((*o as f64 - factor * *x as f64).abs() < 1e-5);
        }
    }
    let e = std::f64::consts::E;
    let err = |n: usize| {
        let out = euler_integrate(&field, &x0, n).unwrap();
        (out.data()[0] as f64 - e).abs()
    };
    let ratio = err(16) / err(32);
    assert!((1.8..2.2).contains(&ratio), "{ratio}");
}

#[test]
fn interpolation_derivative_is_target_velocity() {
    let mut rng = SeededRng::new(4);
    let x0: Tensor = Tensor::randn([2, 3, 4], 1.0, &mut rng);
    let x1: Tensor = Tensor::randn([2, 3, 4], 1.0, &mut rng);
    let v = target_velocity(&x0, &x1).unwrap();
    let h = 1e-2;
    for t in [0.2, 0.5, 0.8] {
        let up = flow_interpolate(&x0, &x1, t + h).unwrap();
        let down = flow_interpolate(&x0, &x1, t - h).unwrap();
        for i in 0..v.len() {
            let fd = (up.data()[i] as f64 - down.data()[i] as f64) / (2.0 * h);
            assert!((fd - v.data()[i] as f64).abs() < 1e-4);
        }
    }
    assert!(matches!(
        flow_interpolate(&x0, &x1, 1.5),
        Err(Error::Usage(_))
    ));
}

#[test]
fn timesteps_are_logit_normal() {
    let mut rng = SeededRng::new(12);
    let mut ts: Vec<f64> = (0..100_000).map(|_| sample_timestep(&mut rng)).collect();
    assert!(ts.iter().all(|&t| t > 0.0 && t < 1.0));
    ts.sort_by(f64::total_cmp);
    let quantile = |q: f64| ts[(q * ts.len() as f64) as usize];
    assert!((quantile(0.5) - 0.5).abs() < 0.01);
    // Φ(1) ≈ 0.8413 of the mass lies below sigmoid(1)
    assert!((quantile(0.841_344_7) - sigmoid(1.0)).abs() < 0.01);
    assert!((quantile(0.158_655_3) - sigmoid(-1.0)).abs() < 0.01);
}

#[test]
fn sampler_noise_depends_only_on_seed() {
    let a = initial_noise(&[2, 3, 4, 4], 9);
    assert!(a.bit_eq(&initial_noise(&[2, 3, 4, 4], 9)));
    assert!(!a.bit_eq(&initial_noise(&[2, 3, 4, 4], 10)));
}

#[test]
fn euler_rejects_zero_steps_and_shape_drift() {
    let x0 = Tensor::zeros([4]);
    let same = |x: &Tensor, _t: f64| -> keytailor::Result<Tensor> { Ok(x.clone()) };
    assert!(matches!(
        euler_integrate(&same, &x0, 0),
        Err(Error::Usage(_))
    ));
    let wrong = |_x: &Tensor, _t: f64| -> keytailor::Result<Tensor> { Ok(Tensor::zeros([5])) };
    assert!(matches!(
        euler_integrate(&wrong, &x0, 2),
        Err(Error::Shape(_))
    ));
    let blowup = |_x: &Tensor, _t: f64| -> keytailor::Result<Tensor> {
        Ok(Tensor::full([4], f32::INFINITY))
    };
    assert!(matches!(
        euler_integrate(&blowup, &x0, 2),
        Err(Error::Numeric(_))
    ));
}
