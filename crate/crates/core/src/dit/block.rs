//! One transformer block: self-attention with a keyframe query bias,
//! cross-attention onto garment tokens, and a GELU feed-forward layer, each
//! behind a pre-LayerNorm and a residual connection.

use crate::numerics::layers::attention;
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var};
use crate::Result;

use super::lora::{LoraLinear, LORA_A_STD};

pub const LAYERNORM_EPS: f64 = 1e-5;
/// Extra scale on the initial weights of layers writing into the residual stream.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;
pub const FFN_EXPANSION: usize = 4;

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNormParams {
            gain: store.add(format!("{name}.gain"), Tensor::ones([d]), false),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([d]), false),
        }
    }

    fn forward<E: Real>(&self, g: &mut Graph<E>, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layernorm(x, gain, bias, LAYERNORM_EPS)
    }
}

/// Query-bias adapter `b = A_key·(B_keyᵀ·pooled)`.
#[derive(Clone, Debug)]
pub struct KeyAdapter {
    pub a: ParamId,
    pub b: ParamId,
}

impl KeyAdapter {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        k: usize,
        r: usize,
        rng: &mut SeededRng,
    ) -> Self {
        KeyAdapter {
            a: store.add(
                format!("{name}.a"),
                Tensor::randn([d, r], LORA_A_STD, rng),
                true,
            ),
            b: store.add(format!("{name}.b"), Tensor::zeros([k, r]), true),
        }
    }

    /// Bias `[1 × d]` for a pooled keyframe vector `[1 × k]`.
    pub fn bias<E: Real>(&self, g: &mut Graph<E>, store: &ParamStore, pooled: Var) -> Result<Var> {
        let a = g.param(store, self.a);
        let b = g.param(store, self.b);
        let down = g.matmul(pooled, b)?;
        g.matmul_bt(down, a)
    }
}

#[derive(Clone, Debug)]
pub struct DiTBlock {
    pub norm1: LayerNormParams,
    pub q: LoraLinear,
    pub k: LoraLinear,
    pub v: LoraLinear,
    pub o: LoraLinear,
    pub key: KeyAdapter,
    pub norm2: LayerNormParams,
    pub cq: LoraLinear,
    pub ck: LoraLinear,
    pub cv: LoraLinear,
    pub co: LoraLinear,
    pub norm3: LayerNormParams,
    pub ffn1: LoraLinear,
    pub ffn2: LoraLinear,
    heads: usize,
}

/// Per-call switches for a block.
#[derive(Clone, Copy, Debug)]
pub struct BlockInputs {
    /// Hidden tokens `[N × d]`.
    pub hidden: Var,
    /// Garment key/value tokens `[M × k]`.
    pub garment: Var,
    /// Pooled keyframe vector `[1 × k]`; `None` disables the query bias.
    pub pooled_keyframe: Option<Var>,
    /// Run the LoRA paths.
    pub adapt: bool,
}

impl DiTBlock {
    /// `garment_width` is the width of garment tokens and of the pooled keyframe vector.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rank: usize,
        garment_width: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let base = 1.0 / (d as f64).sqrt();
        let hidden = FFN_EXPANSION * d;
        let mut lin = |suffix: &str, out: usize, inp: usize, std: f64, rng: &mut SeededRng| {
            LoraLinear::new(store, &format!("{name}.{suffix}"), out, inp, rank, std, rng)
        };
        let q = lin("attn.q", d, d, base, rng);
        let k = lin("attn.k", d, d, base, rng);
        let v = lin("attn.v", d, d, base, rng);
        let o = lin("attn.o", d, d, base * OUTPUT_INIT_SCALE, rng);
        let gbase = 1.0 / (garment_width as f64).sqrt();
        let cq = lin("cross.q", d, d, base, rng);
        let ck = lin("cross.k", d, garment_width, gbase, rng);
        let cv = lin("cross.v", d, garment_width, gbase, rng);
        let co = lin("cross.o", d, d, base * OUTPUT_INIT_SCALE, rng);
        let ffn1 = lin("ffn.1", hidden, d, base, rng);
        let ffn2 = lin(
            "ffn.2",
            d,
            hidden,
            OUTPUT_INIT_SCALE / (hidden as f64).sqrt(),
            rng,
        );
        DiTBlock {
            norm1: LayerNormParams::new(store, &format!("{name}.norm1"), d),
            key: KeyAdapter::new(store, &format!("{name}.qkey"), d, garment_width, rank, rng),
            norm2: LayerNormParams::new(store, &format!("{name}.norm2"), d),
            norm3: LayerNormParams::new(store, &format!("{name}.norm3"), d),
            q,
            k,
            v,
            o,
            cq,
            ck,
            cv,
            co,
            ffn1,
            ffn2,
            heads,
        }
    }

    pub fn forward<E: Real>(
        &self,
        g: &mut Graph<E>,
        store: &ParamStore,
        x: BlockInputs,
    ) -> Result<Var> {
        let adapt = x.adapt;
        // self-attention
        let h = self.norm1.forward(g, store, x.hidden)?;
        let mut q = self.q.forward(g, store, h, adapt)?;
        if let (Some(pooled), true) = (x.pooled_keyframe, adapt) {
            let b = self.key.bias(g, store, pooled)?;
            let d = g.shape(b)[1];
            let b = g.reshape(b, &[d])?;
            q = g.add_row_vector(q, b)?;
        }
        let k = self.k.forward(g, store, h, adapt)?;
        let v = self.v.forward(g, store, h, adapt)?;
        let a = attention(g, q, k, v, self.heads)?;
        let a = self.o.forward(g, store, a, adapt)?;
        let hidden = g.add(x.hidden, a)?;
        // cross-attention onto the garment tokens
        let h = self.norm2.forward(g, store, hidden)?;
        let q = self.cq.forward(g, store, h, adapt)?;
        let k = self.ck.forward(g, store, x.garment, adapt)?;
        let v = self.cv.forward(g, store, x.garment, adapt)?;
        let a = attention(g, q, k, v, self.heads)?;
        let a = self.co.forward(g, store, a, adapt)?;
        let hidden = g.add(hidden, a)?;
        // feed-forward
        let h = self.norm3.forward(g, store, hidden)?;
        let f = self.ffn1.forward(g, store, h, adapt)?;
        let f = g.gelu(f);
        let f = self.ffn2.forward(g, store, f, adapt)?;
        g.add(hidden, f)
    }

    pub fn lora_layers(&self) -> [&LoraLinear; 10] {
        [
            &self.q, &self.k, &self.v, &self.o, &self.cq, &self.ck, &self.cv, &self.co, &self.ffn1,
            &self.ffn2,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_garment_token_gives_value_projection() {
        // With one garment token the cross-attention output is its value projection.
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(5);
        let blk = DiTBlock::new(&mut store, "b", 8, 2, 2, 4, &mut rng);
        let mut g = Graph::<f64>::inference();
        let q = g.constant(Tensor::<f64>::randn([3, 8], 1.0, &mut rng));
        let garment = g.constant(Tensor::<f64>::randn([1, 4], 1.0, &mut rng));
        let k = blk.ck.forward(&mut g, &store, garment, true).unwrap();
        let v = blk.cv.forward(&mut g, &store, garment, true).unwrap();
        let a = attention(&mut g, q, k, v, 2).unwrap();
        for row in 0..3 {
            for c in 0..8 {
                let got = g.value(a).data()[row * 8 + c];
                let want = g.value(v).data()[c];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}
