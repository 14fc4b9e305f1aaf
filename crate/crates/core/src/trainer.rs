//! Alternating prompt/model training.
//!
//! Each epoch walks the training queries in order. For every query the
//! selected prompt tokens are updated first with the encoder frozen, then the
//! prompt graph is rebuilt from the new tokens and the encoder is updated with
//! the tokens frozen.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use promptcs_tensor::{Adam, AdamState, Optimizer, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::{
    augment, forward_pass, forward_tape, EncoderCheckpoint, EncoderConfig, EncoderParams,
    GradTargets, Prediction, DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::eval::{prf1, Metrics};
use crate::graph::AttributedGraph;
use crate::io::{read_json, write_json, OutputHeader};
use crate::prompt::{PromptConfig, PromptTokenStore, TokenCheckpoint, TokenId};
use crate::query::{EvalQuery, LabeledQuery, Query};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    fn build(self) -> Optimizer {
        match self {
            OptimizerKind::Adam => Optimizer::Adam(Adam::default()),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }
}

/// Which epoch's parameters `train` returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// Highest validation F1, earliest epoch on ties.
    #[default]
    BestF1,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_tau: f64,
    pub optimizer: OptimizerKind,
    /// Number of virtual prompt tokens `v_n`.
    pub virtual_tokens: usize,
    pub validation: Validation,
    pub threshold: f64,
    pub seed: u64,
    pub prompt: PromptConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr_theta: 1e-4,
            lr_tau: 1e-4,
            optimizer: OptimizerKind::Adam,
            virtual_tokens: 1,
            validation: Validation::BestF1,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            prompt: PromptConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_tau", self.lr_tau)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!(
                    "{name}={lr} must be finite and non-negative"
                )));
            }
        }
        if self.virtual_tokens == 0 {
            return Err(Error::Config("virtual_tokens must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0,1)",
                self.threshold
            )));
        }
        self.prompt.validate()?;
        self.encoder.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss of the first forward pass of each query, per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean validation F1 per epoch (`None` without validation queries).
    pub val_f1: Vec<Option<f64>>,
    pub selected_epoch: Option<usize>,
    pub epoch_seconds: Vec<f64>,
    /// Largest `nodes + edges` of any graph a training step ran on.
    pub peak_step_graph: usize,
}

impl TrainReport {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            0.0
        } else {
            self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
        }
    }
}

/// Everything needed to answer queries: prompt settings, tokens and encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub prompt: PromptConfig,
    pub tokens: PromptTokenStore,
    pub encoder: EncoderParams,
}

impl ModelState {
    pub fn init(attr_count: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            prompt: cfg.prompt,
            tokens: PromptTokenStore::init(attr_count, cfg.virtual_tokens, attr_count, cfg.seed)?,
            encoder: EncoderParams::glorot(&cfg.encoder, attr_count, cfg.seed.wrapping_add(1))?,
        })
    }

    pub fn predict(&self, g: &AttributedGraph, q: &Query, threshold: f64) -> Result<Prediction> {
        let mut p = forward_pass(g, &self.tokens, q, &self.encoder, &self.prompt)?;
        p.threshold = threshold;
        Ok(p)
    }

    fn check_graph(&self, g: &AttributedGraph) -> Result<()> {
        if self.encoder.input_dim() != g.attr_count() || self.tokens.attr_count() != g.attr_count()
        {
            return Err(Error::Dimension(format!(
                "model was trained for {} attributes, graph has {}",
                self.tokens.attr_count(),
                g.attr_count()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, header: Option<OutputHeader>) -> Result<()> {
        write_json(
            path,
            &ModelCheckpoint {
                header,
                prompt: self.prompt,
                tokens: TokenCheckpoint::from(&self.tokens),
                encoder: EncoderCheckpoint::from(&self.encoder),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: ModelCheckpoint = read_json(path, "model checkpoint")?;
        Ok(Self {
            prompt: c.prompt,
            tokens: c.tokens.try_into()?,
            encoder: c.encoder.try_into()?,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelCheckpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    header: Option<OutputHeader>,
    prompt: PromptConfig,
    tokens: TokenCheckpoint,
    encoder: EncoderCheckpoint,
}

/// Records the BCE loss of `probs` (`n x 1`) on an existing tape.
pub fn bce_on_tape(
    tape: &mut Tape,
    probs: Var,
    positives: &[usize],
    negatives: &[usize],
) -> Result<Var> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::Query("loss needs at least one labelled node".into()));
    }
    let mut parts = Vec::new();
    if !positives.is_empty() {
        let p = tape.gather_rows(probs, positives)?;
        let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let lp = tape.log(p)?;
        parts.push(tape.sum(lp));
    }
    if !negatives.is_empty() {
        let p = tape.gather_rows(probs, negatives)?;
        let q = tape.affine(p, -1.0, 1.0);
        let q = tape.clamp(q, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let lq = tape.log(q)?;
        parts.push(tape.sum(lq));
    }
    let total = match parts[..] {
        [a, b] => tape.add(a, b)?,
        [a] => a,
        _ => unreachable!(),
    };
    Ok(tape.scale(total, -1.0))
}

/// Binary cross entropy of a prediction against sampled labels.
pub fn bce_loss(pred: &Prediction, positives: &[usize], negatives: &[usize]) -> Result<f64> {
    let n = pred.probs.len();
    let mut tape = Tape::new();
    let probs = tape.constant(Tensor::from_vec(n, 1, pred.probs.clone())?);
    let loss = bce_on_tape(&mut tape, probs, positives, negatives)?;
    Ok(tape.value(loss).data()[0])
}

/// Loss and full analytic gradients for one labelled query, with every
/// parameter group trainable at once.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: f64,
    /// In [`EncoderParams::tensors`] order.
    pub encoder: Vec<Tensor>,
    pub tokens: Vec<(TokenId, Vec<f64>)>,
}

pub fn loss_and_gradients(
    state: &ModelState,
    g: &AttributedGraph,
    lq: &LabeledQuery,
) -> Result<LossGradients> {
    let gm = augment(g, &state.tokens, &lq.query, &state.prompt)?;
    let f = forward_tape(&gm, &state.encoder, GradTargets::BOTH)?;
    let mut tape = f.tape;
    let loss = bce_on_tape(&mut tape, f.probs, &lq.positives, &lq.negatives)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let encoder = f.encoder_vars.iter().map(|&v| grads.take(v)).collect();
    let tokens = match f.token_var {
        Some(tv) => {
            let t = grads.take(tv);
            f.token_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, t.row(i).to_vec()))
                .collect()
        }
        None => vec![],
    };
    Ok(LossGradients {
        loss: value,
        encoder,
        tokens,
    })
}

/// One supervised step input: a graph plus a query and labels in its id space.
#[derive(Clone, Debug)]
pub(crate) struct Step<'a> {
    pub graph: Cow<'a, AttributedGraph>,
    pub query: Query,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Supplies the step inputs for the `i`-th training query of an epoch.
pub(crate) trait StepSource {
    fn query_count(&self) -> usize;
    fn steps(&mut self, index: usize) -> Result<Vec<Step<'_>>>;
}

struct WholeGraph<'a> {
    graph: &'a AttributedGraph,
    queries: &'a [LabeledQuery],
}

impl StepSource for WholeGraph<'_> {
    fn query_count(&self) -> usize {
        self.queries.len()
    }

    fn steps(&mut self, index: usize) -> Result<Vec<Step<'_>>> {
        let lq = &self.queries[index];
        Ok(vec![Step {
            graph: Cow::Borrowed(self.graph),
            query: lq.query.clone(),
            positives: lq.positives.clone(),
            negatives: lq.negatives.clone(),
        }])
    }
}

/// Which parameter groups a training run may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Phases {
    pub tokens: bool,
    pub encoder: bool,
}

/// Optimizer bookkeeping for one training run. Token moments are kept per
/// row so that only tokens touched by a query advance their step count.
struct Optimizers {
    opt: Optimizer,
    encoder: Vec<AdamState>,
    tokens: BTreeMap<TokenId, AdamState>,
}

impl Optimizers {
    fn new(cfg: &TrainConfig, state: &ModelState) -> Self {
        Self {
            opt: cfg.optimizer.build(),
            encoder: state
                .encoder
                .tensors()
                .into_iter()
                .map(AdamState::for_param)
                .collect(),
            tokens: BTreeMap::new(),
        }
    }
}

fn check_loss(value: f64, epoch: usize, index: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "loss is {value} at epoch {epoch}, query {index}"
        )))
    }
}

/// Runs both phases for one step; returns the loss before any update.
fn train_step(
    step: &Step<'_>,
    state: &mut ModelState,
    opts: &mut Optimizers,
    cfg: &TrainConfig,
    phases: Phases,
    peak: &mut usize,
    at: (usize, usize),
) -> Result<f64> {
    let mut first_loss = None;

    if phases.tokens {
        let gm = augment(&step.graph, &state.tokens, &step.query, &state.prompt)?;
        *peak = (*peak).max(gm.node_count() + gm.edge_count());
        let f = forward_tape(&gm, &state.encoder, GradTargets::TOKENS)?;
        let mut tape = f.tape;
        let loss = bce_on_tape(&mut tape, f.probs, &step.positives, &step.negatives)?;
        let value = tape.value(loss).data()[0];
        check_loss(value, at.0, at.1)?;
        first_loss = Some(value);
        if let Some(tv) = f.token_var {
            let mut grads = tape.backward(loss)?;
            let g = grads.take(tv);
            for (i, &id) in f.token_ids.iter().enumerate() {
                let row = state.tokens.embedding_mut(id);
                let mut param = Tensor::from_vec(1, row.len(), row.to_vec())?;
                let grad = Tensor::from_vec(1, row.len(), g.row(i).to_vec())?;
                let st = opts
                    .tokens
                    .entry(id)
                    .or_insert_with(|| AdamState::new(1, row.len()));
                opts.opt.step(&mut param, &grad, st, cfg.lr_tau)?;
                row.copy_from_slice(param.data());
            }
        }
    }

    if phases.encoder {
        let gm = augment(&step.graph, &state.tokens, &step.query, &state.prompt)?;
        *peak = (*peak).max(gm.node_count() + gm.edge_count());
        let f = forward_tape(&gm, &state.encoder, GradTargets::ENCODER)?;
        let mut tape = f.tape;
        let loss = bce_on_tape(&mut tape, f.probs, &step.positives, &step.negatives)?;
        let value = tape.value(loss).data()[0];
        check_loss(value, at.0, at.1)?;
        first_loss.get_or_insert(value);
        let mut grads = tape.backward(loss)?;
        for ((param, var), st) in state
            .encoder
            .tensors_mut()
            .into_iter()
            .zip(&f.encoder_vars)
            .zip(&mut opts.encoder)
        {
            let g = grads.take(*var);
            opts.opt.step(param, &g, st, cfg.lr_theta)?;
        }
    }

    match first_loss {
        Some(v) => Ok(v),
        None => {
            let pred = state.predict(&step.graph, &step.query, cfg.threshold)?;
            let v = bce_loss(&pred, &step.positives, &step.negatives)?;
            check_loss(v, at.0, at.1)?;
            Ok(v)
        }
    }
}

/// Mean F1 of `state` on `queries`, predicted over the whole graph.
pub fn evaluate(
    state: &ModelState,
    g: &AttributedGraph,
    queries: &[EvalQuery],
    threshold: f64,
) -> Result<Metrics> {
    let all = queries
        .iter()
        .map(|eq| {
            let pred = state.predict(g, &eq.query, threshold)?;
            prf1(&pred.members(), eq.truth.members())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::mean(&all))
}

/// The shared epoch loop behind whole-graph, sharded and warm-start training.
pub(crate) fn run_training(
    mut state: ModelState,
    source: &mut dyn StepSource,
    validate: &dyn Fn(&ModelState) -> Result<Option<f64>>,
    cfg: &TrainConfig,
    phases: Phases,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    if source.query_count() == 0 {
        return Err(Error::Query("no training queries".into()));
    }
    let mut opts = Optimizers::new(cfg, &state);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ModelState)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut losses = Vec::new();
        for i in 0..source.query_count() {
            for step in source.steps(i)? {
                losses.push(train_step(
                    &step,
                    &mut state,
                    &mut opts,
                    cfg,
                    phases,
                    &mut report.peak_step_graph,
                    (epoch, i),
                )?);
            }
        }
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        report.epoch_loss.push(if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        });

        let f1 = validate(&state)?;
        report.val_f1.push(f1);
        if cfg.validation == Validation::BestF1 {
            if let Some(f1) = f1 {
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    best = Some((f1, state.clone()));
                    report.selected_epoch = Some(epoch);
                }
            }
        }
    }

    match best {
        Some((_, s)) => Ok((s, report)),
        None => {
            report.selected_epoch = Some(cfg.epochs - 1);
            Ok((state, report))
        }
    }
}

pub(crate) fn validator<'a>(
    g: &'a AttributedGraph,
    val: &'a [EvalQuery],
    threshold: f64,
) -> impl Fn(&ModelState) -> Result<Option<f64>> + 'a {
    move |s: &ModelState| {
        if val.is_empty() {
            Ok(None)
        } else {
            evaluate(s, g, val, threshold).map(|m| Some(m.f1))
        }
    }
}

/// Trains tokens and encoder from scratch on `g`.
pub fn train(
    g: &AttributedGraph,
    queries: &[LabeledQuery],
    val: &[EvalQuery],
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    let state = ModelState::init(g.attr_count(), cfg)?;
    for lq in queries {
        lq.query.validate(g)?;
    }
    let mut source = WholeGraph { graph: g, queries };
    let phases = Phases {
        tokens: true,
        encoder: true,
    };
    run_training(
        state,
        &mut source,
        &validator(g, val, cfg.threshold),
        cfg,
        phases,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    /// Update tokens only; the encoder stays frozen throughout.
    PromptOnly,
    Both,
    /// Return the warm state untouched.
    None,
}

/// Continues training a warm model on a new graph sharing its attribute space.
pub fn fine_tune(
    g: &AttributedGraph,
    queries: &[LabeledQuery],
    val: &[EvalQuery],
    warm: &ModelState,
    cfg: &TrainConfig,
    mode: FineTuneMode,
) -> Result<(ModelState, TrainReport)> {
    warm.check_graph(g)?;
    for lq in queries {
        lq.query.validate(g)?;
    }
    let phases = match mode {
        FineTuneMode::None => return Ok((warm.clone(), TrainReport::default())),
        FineTuneMode::PromptOnly => Phases {
            tokens: true,
            encoder: false,
        },
        FineTuneMode::Both => Phases {
            tokens: true,
            encoder: true,
        },
    };
    let mut source = WholeGraph { graph: g, queries };
    run_training(
        warm.clone(),
        &mut source,
        &validator(g, val, cfg.threshold),
        cfg,
        phases,
    )
}
