use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::Encoder;
use super::layers::{mask_tensor, DecoderLayerIds, Dropout, LinearIds, NormIds};
use super::{DagOutput, LanguageTag, ModelConfig};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor};

#[derive(Clone, Debug)]
struct DatIds {
    encoder: Encoder,
    pos_emb: ParamId,
    layers: Vec<DecoderLayerIds>,
    ln: NormIds,
    word: LinearIds,
    link_k: ParamId,
    link_q: ParamId,
}

/// In-graph word and link tables of one sentence.
#[derive(Clone, Copy, Debug)]
pub struct DagTensors {
    /// S×V log-probabilities.
    pub word: Tensor,
    /// S×S log-probabilities, -inf outside the strict upper triangle.
    pub link: Tensor,
    pub steps: usize,
}

/// Non-autoregressive model whose decoder steps form a DAG.
#[derive(Clone, Debug)]
pub struct DatModel {
    config: ModelConfig,
    params: ParamStore,
    ids: DatIds,
}

impl DatModel {
    /// Fresh model with weights drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let std = 1.0 / (d as Real).sqrt();
        let encoder = Encoder::register(&mut store, &config, &mut rng);
        let pos_emb = store.add_normal("dag.pos_emb", &[config.max_positions, d], std, &mut rng);
        let layers = (0..config.n_dec_layers)
            .map(|l| DecoderLayerIds::register(&mut store, &format!("dag.{l}"), d, config.ffn_width, &mut rng))
            .collect();
        let ln = NormIds::register(&mut store, "dag.ln", d);
        let word = LinearIds::register(&mut store, "dag.word", d, config.vocab_size, &mut rng);
        let link_k = store.add_xavier("dag.link.k", &[d, d], &mut rng);
        let link_q = store.add_xavier("dag.link.q", &[d, d], &mut rng);
        let ids = DatIds {
            encoder,
            pos_emb,
            layers,
            ln,
            word,
            link_k,
            link_q,
        };
        Ok(DatModel {
            config,
            params: store,
            ids,
        })
    }

    /// Rebuild a model around existing parameters (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = DatModel::new(config.clone())?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Format(
                "parameter layout does not match the configuration".into(),
            ));
        }
        Ok(DatModel {
            config,
            params,
            ids: reference.ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn steps_for(&self, src_len: usize) -> usize {
        self.config.steps_for(src_len)
    }

    /// Contextual states of the source tokens (|x|×d), encoded after the
    /// target-language tag.
    pub fn encode<'p>(&'p self, g: &mut Graph<'p>, x: &[usize], tag: LanguageTag) -> Result<Tensor> {
        Ok(self.encode_batch(g, &[(x, tag)])?.remove(0))
    }

    pub fn encode_batch<'p>(&'p self, g: &mut Graph<'p>, batch: &[(&[usize], LanguageTag)]) -> Result<Vec<Tensor>> {
        self.ids
            .encoder
            .encode_batch(g, &self.params, &self.config, batch, &mut Dropout::off())
    }

    pub(crate) fn encode_train<'p>(
        &'p self,
        g: &mut Graph<'p>,
        x: &[usize],
        tag: LanguageTag,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let mut drop = Dropout {
            rng: Some(rng),
            rate: self.config.dropout,
        };
        Ok(self
            .ids
            .encoder
            .encode_batch(g, &self.params, &self.config, &[(x, tag)], &mut drop)?
            .remove(0))
    }

    /// Decoder pass over `ceil(upsample · src_len)` steps.
    pub fn decode_dag<'p>(&'p self, g: &mut Graph<'p>, enc: Tensor, src_len: usize) -> Result<DagTensors> {
        let steps = self.steps_for(src_len);
        self.decode_steps(g, enc, steps, &mut Dropout::off())
    }

    pub(crate) fn decode_dag_train<'p>(
        &'p self,
        g: &mut Graph<'p>,
        enc: Tensor,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<DagTensors> {
        let mut drop = Dropout {
            rng: Some(rng),
            rate: self.config.dropout,
        };
        self.decode_steps(g, enc, steps, &mut drop)
    }

    /// Decoder pass with an explicit number of steps.
    pub fn decode_with_steps<'p>(&'p self, g: &mut Graph<'p>, enc: Tensor, steps: usize) -> Result<DagTensors> {
        self.decode_steps(g, enc, steps, &mut Dropout::off())
    }

    fn decode_steps<'p>(
        &'p self,
        g: &mut Graph<'p>,
        enc: Tensor,
        steps: usize,
        drop: &mut Dropout<'_>,
    ) -> Result<DagTensors> {
        if steps < 2 || steps > self.config.max_positions {
            return Err(Error::TooLong {
                len: steps,
                max: self.config.max_positions,
            });
        }
        let store = &self.params;
        let pos = g.param(store, self.ids.pos_emb);
        let positions: Vec<usize> = (0..steps).collect();
        let mut h = g.gather_rows(pos, &positions)?;
        h = drop.apply(g, h);
        for layer in &self.ids.layers {
            let memory = layer.memory(g, store, enc)?;
            h = layer.forward(g, store, h, memory, self.config.n_heads, None, drop)?;
        }
        let h = self.ids.ln.forward(g, store, h)?;
        let logits = self.ids.word.forward(g, store, h)?;
        let word = g.log_softmax(logits, 1)?;
        let link = self.link_head(g, h)?;
        Ok(DagTensors { word, link, steps })
    }

    /// Link distribution of every step over the steps after it:
    /// `log softmax_{s' > s}( (W_k h_s) · (W_q h_s') / sqrt(d) )`.
    pub fn link_head<'p>(&'p self, g: &mut Graph<'p>, h: Tensor) -> Result<Tensor> {
        let steps = g.shape(h)[0];
        let wk = g.param(&self.params, self.ids.link_k);
        let wq = g.param(&self.params, self.ids.link_q);
        link_log_probs(g, h, wk, wq, steps)
    }

    /// Full forward pass without gradient tracking.
    pub fn predict(&self, x: &[usize], tag: LanguageTag) -> Result<DagOutput> {
        let mut g = Graph::inference();
        let enc = self.encode(&mut g, x, tag)?;
        let dag = self.decode_dag(&mut g, enc, x.len())?;
        dag_output(&g, dag, self.config.vocab_size)
    }
}

/// Scaled dot-product link scores restricted to later steps, log-normalised.
pub(crate) fn link_log_probs<'p>(g: &mut Graph<'p>, h: Tensor, wk: Tensor, wq: Tensor, steps: usize) -> Result<Tensor> {
    let d = g.shape(h)[1];
    let k = g.matmul(h, wk)?;
    let q = g.matmul(h, wq)?;
    let scores = g.matmul_nt(k, q)?;
    let scores = g.scale(scores, 1.0 / (d as Real).sqrt());
    let mask = mask_tensor(g, steps, steps, |i, j| j > i)?;
    let scores = g.add(scores, mask)?;
    Ok(g.log_softmax(scores, 1)?)
}

/// Copy in-graph tables out into a [`DagOutput`].
pub(crate) fn dag_output(g: &Graph<'_>, dag: DagTensors, vocab: usize) -> Result<DagOutput> {
    DagOutput::new(dag.steps, vocab, g.value(dag.word).to_vec(), g.value(dag.link).to_vec())
}
