//! Relation-typed message-passing encoder and inner-product decoder.
//!
//! Each layer computes, for every node `v` of the prompt-augmented graph,
//!
//! ```text
//! h'(v) = act( h(v) W_self + sum_r mean_{u in N_r(v)} h(u) W_r + b )
//! ```
//!
//! over the three relations (prompt, original, cross). The last layer has
//! no activation. Only the first `n` rows (data-graph nodes) are returned.
//! The decoder scores node `v` as `sigmoid(<h_q, h(v)>)` where `h_q` is the
//! mean embedding of the query nodes.

use std::path::Path;

use promptcs_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::io::{read_json, write_json, FORMAT_VERSION};
use crate::prompt::{
    build_prompt_graph, insert, select_query_tokens, PromptAugmentedGraph, PromptConfig,
    PromptTokenStore, TokenId, EDGE_TYPES,
};
use crate::query::Query;

/// Default decision threshold on membership probabilities.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "encoder needs at least one layer and one hidden unit (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub self_weight: Tensor,
    /// One matrix per relation, indexed by `EdgeType as usize`.
    pub relation_weights: Vec<Tensor>,
    pub bias: Tensor,
}

impl LayerParams {
    fn check(&self, d_in: usize, d_out: usize) -> Result<()> {
        let ok = self.self_weight.shape() == (d_in, d_out)
            && self.relation_weights.len() == EDGE_TYPES.len()
            && self
                .relation_weights
                .iter()
                .all(|w| w.shape() == (d_in, d_out))
            && self.bias.shape() == (1, d_out);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "layer parameters do not map {d_in} -> {d_out}"
            )))
        }
    }
}

/// Weights of the whole encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    input_dim: usize,
    layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// Glorot-uniform weights and zero biases.
    pub fn glorot(cfg: &EncoderConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let d_in = if k == 0 { input_dim } else { cfg.hidden };
            let limit = (6.0 / (d_in + cfg.hidden) as f64).sqrt();
            let mut w = || Tensor::from_fn(d_in, cfg.hidden, |_, _| rng.gen_range(-limit..=limit));
            let self_weight = w();
            let relation_weights = (0..EDGE_TYPES.len()).map(|_| w()).collect();
            layers.push(LayerParams {
                self_weight,
                relation_weights,
                bias: Tensor::zeros(1, cfg.hidden),
            });
        }
        Ok(Self { input_dim, layers })
    }

    pub fn zeros(cfg: &EncoderConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|k| {
                let d_in = if k == 0 { input_dim } else { cfg.hidden };
                LayerParams {
                    self_weight: Tensor::zeros(d_in, cfg.hidden),
                    relation_weights: (0..EDGE_TYPES.len())
                        .map(|_| Tensor::zeros(d_in, cfg.hidden))
                        .collect(),
                    bias: Tensor::zeros(1, cfg.hidden),
                }
            })
            .collect();
        Ok(Self { input_dim, layers })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<LayerParams>) -> Result<Self> {
        let hidden = layers
            .first()
            .ok_or_else(|| Error::Dimension("encoder has no layers".into()))?
            .bias
            .cols();
        for (k, l) in layers.iter().enumerate() {
            l.check(if k == 0 { input_dim } else { hidden }, hidden)?;
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].bias.cols()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers.len(),
            hidden: self.hidden(),
        }
    }

    /// All weight tensors in a fixed order: per layer self, relations, bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| {
                std::iter::once(&l.self_weight)
                    .chain(&l.relation_weights)
                    .chain(std::iter::once(&l.bias))
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                std::iter::once(&mut l.self_weight)
                    .chain(l.relation_weights.iter_mut())
                    .chain(std::iter::once(&mut l.bias))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &EncoderCheckpoint::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: EncoderCheckpoint = read_json(path, "encoder checkpoint")?;
        c.try_into()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderHeader {
    pub format_version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub relations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderCheckpoint {
    pub header: EncoderHeader,
    pub layers: Vec<LayerParams>,
}

impl From<&EncoderParams> for EncoderCheckpoint {
    fn from(p: &EncoderParams) -> Self {
        Self {
            header: EncoderHeader {
                format_version: FORMAT_VERSION,
                layers: p.layers.len(),
                hidden: p.hidden(),
                input_dim: p.input_dim,
                relations: EDGE_TYPES.len(),
            },
            layers: p.layers.clone(),
        }
    }
}

impl TryFrom<EncoderCheckpoint> for EncoderParams {
    type Error = Error;

    fn try_from(c: EncoderCheckpoint) -> Result<Self> {
        let h = &c.header;
        if h.relations != EDGE_TYPES.len() || h.layers != c.layers.len() {
            return Err(Error::Dimension(format!(
                "encoder header {h:?} does not match its layers"
            )));
        }
        let p = EncoderParams::from_layers(h.input_dim, c.layers)?;
        if p.hidden() != h.hidden {
            return Err(Error::Dimension(format!(
                "encoder header hidden={} but layers use {}",
                h.hidden,
                p.hidden()
            )));
        }
        Ok(p)
    }
}

/// Per-node membership probabilities for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub threshold: f64,
}

impl Prediction {
    pub fn new(probs: Vec<f64>) -> Self {
        Self {
            probs,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn members(&self) -> Vec<usize> {
        predict_community(self)
    }
}

/// Nodes whose probability is strictly above the threshold.
pub fn predict_community(pred: &Prediction) -> Vec<usize> {
    pred.probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > pred.threshold)
        .map(|(v, _)| v)
        .collect()
}

/// A forward pass recorded on a tape, ready for a loss and backward.
pub struct TapeForward {
    pub tape: Tape,
    /// `n x 1` membership probabilities.
    pub probs: Var,
    /// Encoder leaves in [`EncoderParams::tensors`] order.
    pub encoder_vars: Vec<Var>,
    /// Token-embedding leaf (`|tau_q| x d_in`), absent when no tokens were selected.
    pub token_var: Option<Var>,
    pub token_ids: Vec<TokenId>,
}

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradTargets {
    pub encoder: bool,
    pub tokens: bool,
}

impl GradTargets {
    pub const NONE: GradTargets = GradTargets {
        encoder: false,
        tokens: false,
    };
    pub const ENCODER: GradTargets = GradTargets {
        encoder: true,
        tokens: false,
    };
    pub const TOKENS: GradTargets = GradTargets {
        encoder: false,
        tokens: true,
    };
    pub const BOTH: GradTargets = GradTargets {
        encoder: true,
        tokens: true,
    };
}

fn check_dims(gm: &PromptAugmentedGraph<'_>, params: &EncoderParams) -> Result<()> {
    let d_in = gm.base().attr_count();
    if params.input_dim != d_in {
        return Err(Error::Dimension(format!(
            "encoder expects {}-dim input, graph features are {d_in}-dim",
            params.input_dim
        )));
    }
    Ok(())
}

/// Records the encoder on `tape`; returns the `n x d` output embeddings
/// together with the encoder and token leaves.
fn encode_on_tape(
    tape: &mut Tape,
    gm: &PromptAugmentedGraph<'_>,
    params: &EncoderParams,
    targets: GradTargets,
) -> Result<(Var, Vec<Var>, Option<Var>)> {
    check_dims(gm, params)?;
    let leaf = |tape: &mut Tape, t: &Tensor, grad: bool| {
        if grad {
            tape.param(t.clone())
        } else {
            tape.constant(t.clone())
        }
    };
    let features = tape.constant(gm.base().features());
    let token_var =
        (!gm.prompt().is_empty()).then(|| leaf(tape, gm.prompt().embeddings(), targets.tokens));
    let mut h = match token_var {
        Some(tv) => tape.concat_rows(&[features, tv])?,
        None => features,
    };

    let mut encoder_vars = Vec::new();
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let w_self = leaf(tape, &layer.self_weight, targets.encoder);
        let w_rel: Vec<Var> = layer
            .relation_weights
            .iter()
            .map(|w| leaf(tape, w, targets.encoder))
            .collect();
        let bias = leaf(tape, &layer.bias, targets.encoder);
        encoder_vars.push(w_self);
        encoder_vars.extend(&w_rel);
        encoder_vars.push(bias);

        let mut z = tape.matmul(h, w_self)?;
        for r in EDGE_TYPES {
            let seg = gm.relation(r);
            // An empty relation contributes exactly zero.
            if seg.nnz() == 0 {
                continue;
            }
            let agg = tape.segment_mean(h, seg.clone())?;
            let msg = tape.matmul(agg, w_rel[r as usize])?;
            z = tape.add(z, msg)?;
        }
        z = tape.add_row(z, bias)?;
        h = if k == last { z } else { tape.relu(z) };
    }
    let n = gm.original_count();
    let out = if token_var.is_some() {
        let rows: Vec<usize> = (0..n).collect();
        tape.gather_rows(h, &rows)?
    } else {
        h
    };
    Ok((out, encoder_vars, token_var))
}

fn decode_on_tape(tape: &mut Tape, h: Var, query_nodes: &[usize]) -> Result<Var> {
    if query_nodes.is_empty() {
        return Err(Error::Query("decoder needs at least one query node".into()));
    }
    let hq = tape.gather_rows(h, query_nodes)?;
    let hq = tape.row_mean(hq)?;
    let logits = tape.row_dot(h, hq)?;
    Ok(tape.sigmoid(logits))
}

/// Full forward pass on a prebuilt prompt-augmented graph, recorded for backward.
pub fn forward_tape(
    gm: &PromptAugmentedGraph<'_>,
    params: &EncoderParams,
    targets: GradTargets,
) -> Result<TapeForward> {
    let mut tape = Tape::new();
    let (h, encoder_vars, token_var) = encode_on_tape(&mut tape, gm, params, targets)?;
    let probs = decode_on_tape(&mut tape, h, gm.query_nodes())?;
    Ok(TapeForward {
        tape,
        probs,
        encoder_vars,
        token_var,
        token_ids: gm.prompt().token_ids().to_vec(),
    })
}

/// Output embeddings `H` (`n x d`) of the data-graph nodes.
pub fn encode(gm: &PromptAugmentedGraph<'_>, params: &EncoderParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (h, _, _) = encode_on_tape(&mut tape, gm, params, GradTargets::NONE)?;
    Ok(tape.value(h).clone())
}

/// `sigmoid(<h_q, H[v]>)` for every row, `h_q` the mean of the query rows.
pub fn decode(h: &Tensor, query_nodes: &[usize]) -> Result<Prediction> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let p = decode_on_tape(&mut tape, hv, query_nodes)?;
    Ok(Prediction::new(tape.value(p).data().to_vec()))
}

/// Builds the prompt-augmented graph for `q` from the current tokens.
pub fn augment<'g>(
    g: &'g AttributedGraph,
    tokens: &PromptTokenStore,
    q: &Query,
    cfg: &PromptConfig,
) -> Result<PromptAugmentedGraph<'g>> {
    if tokens.dim() != g.attr_count() {
        return Err(Error::Dimension(format!(
            "tokens are {}-dim, graph features {}-dim",
            tokens.dim(),
            g.attr_count()
        )));
    }
    let ids = select_query_tokens(tokens, q, cfg)?;
    let pg = build_prompt_graph(tokens, ids, cfg.delta)?;
    insert(g, pg, q)
}

/// Prompt graph, insertion, encoding and decoding for one query.
pub fn forward_pass(
    g: &AttributedGraph,
    tokens: &PromptTokenStore,
    q: &Query,
    params: &EncoderParams,
    cfg: &PromptConfig,
) -> Result<Prediction> {
    let gm = augment(g, tokens, q, cfg)?;
    let f = forward_tape(&gm, params, GradTargets::NONE)?;
    Ok(Prediction::new(f.tape.value(f.probs).data().to_vec()))
}
