//! Transformer building blocks shared by the DAG model and the AT baseline.
//! All blocks are pre-LayerNorm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Graph, Real, Result, Tensor};

pub(crate) const LN_EPS: Real = 1e-5;

/// Random state for dropout during training; `None` at inference.
pub(crate) struct Dropout<'a> {
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub rate: Real,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { rng: None, rate: 0.0 }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Tensor) -> Tensor {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

impl NormIds {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        NormIds {
            gain: store.add_const(format!("{prefix}.g"), &[d], 1.0),
            bias: store.add_const(format!("{prefix}.b"), &[d], 0.0),
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Tensor) -> Result<Tensor> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIds {
    w: ParamId,
    b: ParamId,
}

impl LinearIds {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        LinearIds {
            w: store.add_xavier(format!("{prefix}.w"), &[d_in, d_out], rng),
            b: store.add_const(format!("{prefix}.b"), &[d_out], 0.0),
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Tensor) -> Result<Tensor> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
}

/// Boolean attention mask, `true` where a query may attend to a key.
pub(crate) fn mask_tensor(
    g: &mut Graph<'_>,
    rows: usize,
    cols: usize,
    allowed: impl Fn(usize, usize) -> bool,
) -> Result<Tensor> {
    let mut m = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            if !allowed(i, j) {
                m[i * cols + j] = Real::NEG_INFINITY;
            }
        }
    }
    g.constant(&[rows, cols], m)
}

impl AttentionIds {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        AttentionIds {
            q: LinearIds::register(store, &format!("{prefix}.q"), d, d, rng),
            k: LinearIds::register(store, &format!("{prefix}.k"), d, d, rng),
            v: LinearIds::register(store, &format!("{prefix}.v"), d, d, rng),
            o: LinearIds::register(store, &format!("{prefix}.o"), d, d, rng),
        }
    }

    /// Projected keys and values for `kv` (m×d).
    pub fn keys_values<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, kv: Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.k.forward(g, store, kv)?, self.v.forward(g, store, kv)?))
    }

    /// Multi-head attention of `query` (n×d) over precomputed keys/values (m×d).
    /// `mask` is an additive n×m tensor of 0 / -inf.
    pub fn attend<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        query: Tensor,
        keys: Tensor,
        values: Tensor,
        n_heads: usize,
        mask: Option<Tensor>,
    ) -> Result<Tensor> {
        let d = g.shape(query)[1];
        let dh = d / n_heads;
        let q = self.q.forward(g, store, query)?;
        let q = g.scale(q, 1.0 / (dh as Real).sqrt());
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let (qh, kh, vh) = if n_heads == 1 {
                (q, keys, values)
            } else {
                (
                    g.slice(q, 1, h * dh, dh)?,
                    g.slice(keys, 1, h * dh, dh)?,
                    g.slice(values, 1, h * dh, dh)?,
                )
            };
            let mut scores = g.matmul_nt(qh, kh)?;
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let p = g.softmax(scores, 1)?;
            heads.push(g.matmul(p, vh)?);
        }
        let merged = if n_heads == 1 { heads[0] } else { g.concat(&heads, 1)? };
        self.o.forward(g, store, merged)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FfnIds {
    up: LinearIds,
    down: LinearIds,
}

impl FfnIds {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, width: usize, rng: &mut R) -> Self {
        FfnIds {
            up: LinearIds::register(store, &format!("{prefix}.up"), d, width, rng),
            down: LinearIds::register(store, &format!("{prefix}.down"), width, d, rng),
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Tensor) -> Result<Tensor> {
        let h = self.up.forward(g, store, x)?;
        let h = g.relu(h);
        self.down.forward(g, store, h)
    }
}

/// Self-attention + feed-forward block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayerIds {
    ln1: NormIds,
    attn: AttentionIds,
    ln2: NormIds,
    ffn: FfnIds,
}

impl EncoderLayerIds {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, rng: &mut R) -> Self {
        EncoderLayerIds {
            ln1: NormIds::register(store, &format!("{prefix}.ln1"), d),
            attn: AttentionIds::register(store, &format!("{prefix}.self"), d, rng),
            ln2: NormIds::register(store, &format!("{prefix}.ln2"), d),
            ffn: FfnIds::register(store, &format!("{prefix}.ffn"), d, ffn, rng),
        }
    }

    /// `x` holds `blocks` sentences of `len` rows each, stacked. Attention
    /// never crosses block boundaries; `mask` (len×len) is shared by all
    /// blocks unless `block_masks` gives one per block.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        x: Tensor,
        blocks: usize,
        n_heads: usize,
        block_masks: &[Option<Tensor>],
        drop: &mut Dropout<'_>,
    ) -> Result<Tensor> {
        let len = g.shape(x)[0] / blocks;
        let h = self.ln1.forward(g, store, x)?;
        let (k, v) = self.attn.keys_values(g, store, h)?;
        let mut outs = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let (hb, kb, vb) = if blocks == 1 {
                (h, k, v)
            } else {
                (
                    g.slice(h, 0, b * len, len)?,
                    g.slice(k, 0, b * len, len)?,
                    g.slice(v, 0, b * len, len)?,
                )
            };
            outs.push(self.attn.attend(g, store, hb, kb, vb, n_heads, block_masks[b])?);
        }
        let a = if blocks == 1 { outs[0] } else { g.concat(&outs, 0)? };
        let a = drop.apply(g, a);
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        let f = drop.apply(g, f);
        g.add(x, f)
    }
}

/// Self-attention, cross-attention and feed-forward block.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayerIds {
    ln1: NormIds,
    self_attn: AttentionIds,
    ln2: NormIds,
    cross: AttentionIds,
    ln3: NormIds,
    ffn: FfnIds,
}

impl DecoderLayerIds {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, rng: &mut R) -> Self {
        DecoderLayerIds {
            ln1: NormIds::register(store, &format!("{prefix}.ln1"), d),
            self_attn: AttentionIds::register(store, &format!("{prefix}.self"), d, rng),
            ln2: NormIds::register(store, &format!("{prefix}.ln2"), d),
            cross: AttentionIds::register(store, &format!("{prefix}.cross"), d, rng),
            ln3: NormIds::register(store, &format!("{prefix}.ln3"), d),
            ffn: FfnIds::register(store, &format!("{prefix}.ffn"), d, ffn, rng),
        }
    }

    /// Cross-attention keys/values for this layer, computable once per source.
    pub fn memory<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, enc: Tensor) -> Result<(Tensor, Tensor)> {
        self.cross.keys_values(g, store, enc)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        x: Tensor,
        memory: (Tensor, Tensor),
        n_heads: usize,
        self_mask: Option<Tensor>,
        drop: &mut Dropout<'_>,
    ) -> Result<Tensor> {
        let h = self.ln1.forward(g, store, x)?;
        let (k, v) = self.self_attn.keys_values(g, store, h)?;
        let a = self.self_attn.attend(g, store, h, k, v, n_heads, self_mask)?;
        let a = drop.apply(g, a);
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, store, x)?;
        let c = self.cross.attend(g, store, h, memory.0, memory.1, n_heads, None)?;
        let c = drop.apply(g, c);
        let x = g.add(x, c)?;
        let h = self.ln3.forward(g, store, x)?;
        let f = self.ffn.forward(g, store, h)?;
        let f = drop.apply(g, f);
        g.add(x, f)
    }
}
