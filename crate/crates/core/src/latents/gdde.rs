//! Garment detail distillation: `D(concat(L_g, mean of keyframe latents))`
//! with `D` = conv1×1 (2C→C), GELU, conv1×1 (C→C), channel LayerNorm.

use crate::numerics::layers::{channel_layernorm, conv1x1};
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct DistillComponent {
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub norm: (ParamId, ParamId),
    channels: usize,
}

impl DistillComponent {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut SeededRng) -> Self {
        let c = channels;
        let mut conv = |name: &str, c_in: usize, rng: &mut SeededRng| {
            let w = Tensor::randn([c, c_in], 1.0 / (c_in as f64).sqrt(), rng);
            (
                store.add(format!("{prefix}.{name}.w"), w, true),
                store.add(format!("{prefix}.{name}.b"), Tensor::zeros([c]), true),
            )
        };
        let conv1 = conv("conv1", 2 * c, rng);
        let conv2 = conv("conv2", c, rng);
        let norm = (
            store.add(format!("{prefix}.norm.gain"), Tensor::ones([c]), true),
            store.add(format!("{prefix}.norm.bias"), Tensor::zeros([c]), true),
        );
        DistillComponent {
            conv1,
            conv2,
            norm,
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `D` applied to an already concatenated `[2C × ...]` input.
    pub fn apply_concat<E: Real>(
        &self,
        g: &mut Graph<E>,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var> {
        let p =
            |g: &mut Graph<E>, (w, b): (ParamId, ParamId)| (g.param(store, w), g.param(store, b));
        let (w1, b1) = p(g, self.conv1);
        let y = conv1x1(g, x, w1, b1)?;
        let y = g.gelu(y);
        let (w2, b2) = p(g, self.conv2);
        let y = conv1x1(g, y, w2, b2)?;
        let (gain, bias) = p(g, self.norm);
        channel_layernorm(g, y, gain, bias, LAYERNORM_EPS)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.conv1.0,
            self.conv1.1,
            self.conv2.0,
            self.conv2.1,
            self.norm.0,
            self.norm.1,
        ]
    }
}

/// Mean of equally shaped latents.
pub fn mean_latent<E: Real>(g: &mut Graph<E>, latents: &[Var]) -> Result<Var> {
    let (&first, rest) = latents
        .split_first()
        .ok_or_else(|| Error::Usage("mean of zero latents".into()))?;
    let mut acc = first;
    for &l in rest {
        acc = g.add(acc, l)?;
    }
    Ok(if latents.len() == 1 {
        acc
    } else {
        g.scale(acc, 1.0 / latents.len() as f64)
    })
}

/// `L̄_g = D(concat(L_g, mean(keyframes)))`; the output has the shape of `L_g`.
pub fn gdde_distill<E: Real>(
    g: &mut Graph<E>,
    store: &ParamStore,
    d: &DistillComponent,
    l_g: Var,
    keyframes: &[Var],
) -> Result<Var> {
    if keyframes.is_empty() {
        return Err(Error::Usage(
            "garment distillation needs at least one keyframe latent".into(),
        ));
    }
    for &k in keyframes {
        if g.shape(k) != g.shape(l_g) {
            return Err(Error::Dimension(format!(
                "keyframe latent {:?} does not match garment latent {:?}",
                g.shape(k),
                g.shape(l_g)
            )));
        }
    }
    let mean = mean_latent(g, keyframes)?;
    let x = g.concat(&[l_g, mean], 0)?;
    d.apply_concat(g, store, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamStore, DistillComponent, SeededRng) {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(4);
        let d = DistillComponent::new(&mut store, "d", 3, &mut rng);
        (store, d, rng)
    }

    #[test]
    fn empty_keyframes_is_usage_error() {
        let (store, d, mut rng) = setup();
        let mut g = Graph::<f32>::inference();
        let l = g.constant(Tensor::randn([3, 2, 2], 1.0, &mut rng));
        assert!(matches!(
            gdde_distill(&mut g, &store, &d, l, &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn keyframe_order_does_not_matter() {
        let (store, d, mut rng) = setup();
        let parts: Vec<Tensor> = (0..4)
            .map(|_| Tensor::randn([3, 2, 2], 1.0, &mut rng))
            .collect();
        let run = |order: &[usize]| {
            let mut g = Graph::<f64>::inference();
            let l = g.constant(parts[0].cast());
            let ks: Vec<Var> = order.iter().map(|&i| g.constant(parts[i].cast())).collect();
            let y = gdde_distill(&mut g, &store, &d, l, &ks).unwrap();
            g.value(y).clone()
        };
        let a = run(&[1, 2, 3]);
        let b = run(&[3, 1, 2]);
        assert_eq!(a.shape(), [3, 2, 2]);
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}
