//! Low-rank adapters `ΔW = A·Bᵀ` on frozen linear weights.

use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::{Error, Result};

/// Initial standard deviation of `A`.
pub const LORA_A_STD: f64 = 0.02;

/// `y = x·W0ᵀ + (x·B)·Aᵀ` for `x[n×k]`, `W0[d×k]`, `A[d×r]`, `B[k×r]`,
/// without forming `A·Bᵀ`.
pub fn lora_linear<E: Real>(g: &mut Graph<E>, x: Var, w0: Var, a: Var, b: Var) -> Result<Var> {
    let (&[_, k], &[d, k0], &[da, r], &[kb, rb]) =
        (g.shape(x), g.shape(w0), g.shape(a), g.shape(b))
    else {
        return Err(Error::Dimension(format!(
            "lora: expected matrices, got x {:?}, W0 {:?}, A {:?}, B {:?}",
            g.shape(x),
            g.shape(w0),
            g.shape(a),
            g.shape(b)
        )));
    };
    if k != k0 || da != d || kb != k || rb != r {
        return Err(Error::Dimension(format!(
            "lora: x [.×{k}], W0 [{d}×{k0}], A [{da}×{r}], B [{kb}×{rb}] are incompatible"
        )));
    }
    let base = g.matmul_bt(x, w0)?;
    let down = g.matmul(x, b)?;
    let up = g.matmul_bt(down, a)?;
    g.add(base, up)
}

/// A frozen weight with its trainable adapter pair.
#[derive(Clone, Debug)]
pub struct LoraLinear {
    pub w0: ParamId,
    pub a: ParamId,
    pub b: ParamId,
}

impl LoraLinear {
    /// `W0 ~ N(0, std²)` frozen, `A ~ N(0, 0.02²)`, `B = 0`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        out: usize,
        inp: usize,
        rank: usize,
        std: f64,
        rng: &mut SeededRng,
    ) -> Self {
        let w0 = store.add(
            format!("{name}.w0"),
            Tensor::randn([out, inp], std, rng),
            false,
        );
        let a = store.add(
            format!("{name}.lora_a"),
            Tensor::randn([out, rank], LORA_A_STD, rng),
            true,
        );
        let b = store.add(format!("{name}.lora_b"), Tensor::zeros([inp, rank]), true);
        LoraLinear { w0, a, b }
    }

    /// With `adapt = false` only the frozen path runs.
    pub fn forward<E: Real>(
        &self,
        g: &mut Graph<E>,
        store: &ParamStore,
        x: Var,
        adapt: bool,
    ) -> Result<Var> {
        let w0 = g.param(store, self.w0);
        if !adapt {
            return g.matmul_bt(x, w0);
        }
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        lora_linear(g, x, w0, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::matmul_t;

    #[test]
    fn zero_b_is_bit_identical_to_base() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(2);
        let l = LoraLinear::new(&mut store, "l", 6, 5, 2, 0.5, &mut rng);
        let x = Tensor::randn([4, 5], 1.0, &mut rng);
        let mut g = Graph::<f32>::inference();
        let xv = g.constant(x);
        let with = l.forward(&mut g, &store, xv, true).unwrap();
        let without = l.forward(&mut g, &store, xv, false).unwrap();
        assert!(g.value(with).bit_eq(g.value(without)));
    }

    #[test]
    fn factored_matches_materialized() {
        let mut rng = SeededRng::new(3);
        let x = Tensor::randn([4, 5], 1.0, &mut rng);
        let w0 = Tensor::randn([6, 5], 1.0, &mut rng);
        let a = Tensor::randn([6, 2], 1.0, &mut rng);
        let b = Tensor::randn([5, 2], 1.0, &mut rng);
        let delta = matmul_t(&a, false, &b, true).unwrap();
        let w = w0.add(&delta).unwrap();
        let naive = matmul_t(&x, false, &w, true).unwrap();
        let mut g = Graph::<f32>::inference();
        let vars = [x, w0, a, b].map(|t| g.constant(t));
        let y = lora_linear(&mut g, vars[0], vars[1], vars[2], vars[3]).unwrap();
        assert!(g.value(y).max_abs_diff(&naive).unwrap() < 1e-5);
    }

    #[test]
    fn cancelling_delta_gives_zero() {
        // r = min(d, k): A = −W0, B = I so that A·Bᵀ = −W0
        let mut rng = SeededRng::new(4);
        let w0: Tensor = Tensor::randn([3, 3], 1.0, &mut rng);
        let x: Tensor = Tensor::randn([2, 3], 1.0, &mut rng);
        let mut g = Graph::<f64>::inference();
        let xv = g.constant(x.cast());
        let wv = g.constant(w0.cast());
        let av = g.constant(w0.cast::<f64>().scale(-1.0));
        let bv = g.constant(Tensor::eye(3));
        let y = lora_linear(&mut g, xv, wv, av, bv).unwrap();
        assert!(g.value(y).max_abs() < 1e-12);
    }

    #[test]
    fn mismatch_is_dimension_error() {
        let mut g = Graph::<f32>::inference();
        let x = g.constant(Tensor::zeros([2, 3]));
        let w = g.constant(Tensor::zeros([4, 3]));
        let a = g.constant(Tensor::zeros([4, 2]));
        let b = g.constant(Tensor::zeros([4, 2]));
        assert!(matches!(
            lora_linear(&mut g, x, w, a, b),
            Err(Error::Dimension(_))
        ));
    }
}
