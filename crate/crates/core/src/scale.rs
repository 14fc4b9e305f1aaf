//! Shard-level training and divide-and-conquer inference.
//!
//! A query-route subgraph is a shard plus the query nodes it does not own,
//! each imported with only its edges into the shard.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Prediction;
use crate::error::{Error, Result};
use crate::eval::{prf1, Metrics};
use crate::graph::AttributedGraph;
use crate::partition::Partition;
use crate::query::{EvalQuery, LabeledQuery, Query};
use crate::trainer::{
    run_training, ModelState, Phases, Step, StepSource, TrainConfig, TrainReport,
};

/// Seed offset separating shard sampling from token and encoder init.
const SHARD_RNG_OFFSET: u64 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// Shard count; `None` picks about 1000 nodes per shard.
    pub shards: Option<usize>,
    pub shards_per_query: usize,
    pub parallel: bool,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            shards: None,
            shards_per_query: 1,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRouteSubgraph {
    pub shard: usize,
    pub graph: AttributedGraph,
    /// Global id of every local node: shard nodes first, then imported query nodes.
    pub global_ids: Vec<usize>,
    /// Number of leading local nodes owned by the shard.
    pub owned: usize,
    local: HashMap<usize, usize>,
}

impl QueryRouteSubgraph {
    pub fn local(&self, global: usize) -> Option<usize> {
        self.local.get(&global).copied()
    }

    pub fn imported(&self) -> &[usize] {
        &self.global_ids[self.owned..]
    }

    /// The query re-expressed in local ids.
    pub fn localize(&self, q: &Query) -> Result<Query> {
        let nodes = q
            .nodes
            .iter()
            .map(|&v| {
                self.local(v)
                    .ok_or_else(|| Error::Query(format!("query node {v} missing from route graph")))
            })
            .collect::<Result<Vec<_>>>()?;
        Query::new(&self.graph, nodes, q.attrs.clone(), q.community)
    }

    /// Keeps the labels present in the route graph, in their original order.
    pub fn localize_labels(&self, labels: &[usize]) -> Vec<usize> {
        labels.iter().filter_map(|&v| self.local(v)).collect()
    }
}

pub fn build_query_route(
    p: &Partition,
    shard: usize,
    q: &Query,
    g: &AttributedGraph,
) -> Result<QueryRouteSubgraph> {
    q.validate(g)?;
    if shard >= p.shard_count() {
        return Err(Error::Config(format!(
            "shard {shard} of {}",
            p.shard_count()
        )));
    }
    let base = p.shard(shard);
    let owned = base.global_ids.len();
    let mut global_ids = base.global_ids.clone();
    global_ids.extend(q.nodes.iter().copied().filter(|&v| p.home(v) != shard));
    let local: HashMap<usize, usize> = global_ids
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();

    let mut edges: Vec<(usize, usize)> = base.graph.edges().to_vec();
    for (i, &u) in global_ids[owned..].iter().enumerate() {
        for &w in g.neighbors_unchecked(u) {
            if p.home(w) == shard {
                edges.push((p.local_index(w), owned + i));
            }
        }
    }
    let attrs = global_ids
        .iter()
        .map(|&v| g.node_attrs(v).to_vec())
        .collect();
    let graph = AttributedGraph::new(global_ids.len(), g.attr_count(), edges, attrs)?;
    Ok(QueryRouteSubgraph {
        shard,
        graph,
        global_ids,
        owned,
        local,
    })
}

/// Runs the model on every shard's route graph and gives each node the
/// probability computed in its home shard.
pub fn infer_scaled(
    p: &Partition,
    g: &AttributedGraph,
    state: &ModelState,
    q: &Query,
    threshold: f64,
    parallel: bool,
) -> Result<Prediction> {
    let run = |shard: usize| -> Result<(usize, Vec<f64>)> {
        let route = build_query_route(p, shard, q, g)?;
        let pred = state.predict(&route.graph, &route.localize(q)?, threshold)?;
        Ok((shard, pred.probs[..route.owned].to_vec()))
    };
    let shards: Vec<usize> = (0..p.shard_count()).collect();
    let parts: Vec<(usize, Vec<f64>)> = if parallel {
        shards.into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        shards.into_iter().map(run).collect::<Result<_>>()?
    };
    let mut probs = vec![f64::NAN; g.node_count()];
    for (shard, values) in parts {
        for (&v, x) in p.shard(shard).global_ids.iter().zip(values) {
            probs[v] = x;
        }
    }
    Ok(Prediction { probs, threshold })
}

/// Mean metrics of scaled inference over evaluation queries.
pub fn evaluate_scaled(
    p: &Partition,
    g: &AttributedGraph,
    state: &ModelState,
    queries: &[EvalQuery],
    threshold: f64,
    parallel: bool,
) -> Result<Metrics> {
    let all = queries
        .iter()
        .map(|eq| {
            let pred = infer_scaled(p, g, state, &eq.query, threshold, parallel)?;
            prf1(&pred.members(), eq.truth.members())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::mean(&all))
}

struct ShardSampler<'a> {
    graph: &'a AttributedGraph,
    partition: &'a Partition,
    queries: &'a [LabeledQuery],
    per_query: usize,
    rng: ChaCha8Rng,
}

impl StepSource for ShardSampler<'_> {
    fn query_count(&self) -> usize {
        self.queries.len()
    }

    fn steps(&mut self, index: usize) -> Result<Vec<Step<'_>>> {
        let lq = &self.queries[index];
        let s = self.partition.shard_count();
        let mut picked: Vec<usize> = if self.per_query >= s {
            (0..s).collect()
        } else {
            sample(&mut self.rng, s, self.per_query).into_vec()
        };
        picked.sort_unstable();
        let mut steps = Vec::with_capacity(picked.len());
        for shard in picked {
            let route = build_query_route(self.partition, shard, &lq.query, self.graph)?;
            let query = route.localize(&lq.query)?;
            let positives = route.localize_labels(&lq.positives);
            let negatives = route.localize_labels(&lq.negatives);
            if positives.is_empty() && negatives.is_empty() {
                continue;
            }
            steps.push(Step {
                graph: Cow::Owned(route.graph),
                query,
                positives,
                negatives,
            });
        }
        Ok(steps)
    }
}

/// Trains on sampled query-route subgraphs instead of the whole graph.
/// Labels outside a sampled route graph are dropped for that step.
pub fn train_scaled(
    g: &AttributedGraph,
    partition: &Partition,
    queries: &[LabeledQuery],
    val: &[EvalQuery],
    cfg: &TrainConfig,
    scale: &ScaleConfig,
) -> Result<(ModelState, TrainReport)> {
    if scale.shards_per_query == 0 {
        return Err(Error::Config("shards_per_query must be at least 1".into()));
    }
    if partition.assignment().len() != g.node_count() {
        return Err(Error::Graph(
            "partition was built for a different graph".into(),
        ));
    }
    for lq in queries {
        lq.query.validate(g)?;
    }
    let state = ModelState::init(g.attr_count(), cfg)?;
    let mut source = ShardSampler {
        graph: g,
        partition,
        queries,
        per_query: scale.shards_per_query,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SHARD_RNG_OFFSET)),
    };
    let validate = |s: &ModelState| -> Result<Option<f64>> {
        if val.is_empty() {
            Ok(None)
        } else {
            evaluate_scaled(partition, g, s, val, cfg.threshold, scale.parallel).map(|m| Some(m.f1))
        }
    };
    let phases = Phases {
        tokens: true,
        encoder: true,
    };
    run_training(state, &mut source, &validate, cfg, phases)
}
