//! Precision/recall/F1 and synthetic planted-partition graphs.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Community};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores a predicted node set against a nonempty ground truth.
pub fn prf1(predicted: &[usize], truth: &[usize]) -> Result<Metrics> {
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    if truth.is_empty() {
        return Err(Error::Query("ground-truth community is empty".into()));
    }
    let predicted: BTreeSet<usize> = predicted.iter().copied().collect();
    let hits = predicted.intersection(&truth).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        hits / predicted.len() as f64
    };
    let recall = hits / truth.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        precision,
        recall,
        f1,
    })
}

impl Metrics {
    /// Component-wise mean; the zero metric for an empty slice.
    pub fn mean(all: &[Metrics]) -> Metrics {
        if all.is_empty() {
            return Metrics::default();
        }
        let k = all.len() as f64;
        Metrics {
            precision: all.iter().map(|m| m.precision).sum::<f64>() / k,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / k,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / k,
        }
    }
}

/// Planted-partition generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub communities: usize,
    pub community_size: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Attributes reserved for each community.
    pub signature_attrs: usize,
    /// Extra attributes owned by no community.
    pub background_attrs: usize,
    /// Chance a member drops a signature attribute, and chance any node
    /// picks up each attribute outside its signature.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            communities: 4,
            community_size: 60,
            p_in: 0.2,
            p_out: 0.02,
            signature_attrs: 3,
            background_attrs: 0,
            noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.p_in) && prob(self.p_out) && prob(self.noise)) {
            return Err(Error::Config(format!(
                "probabilities must lie in [0,1] (p_in={}, p_out={}, noise={})",
                self.p_in, self.p_out, self.noise
            )));
        }
        if self.p_in <= self.p_out {
            return Err(Error::Config(format!(
                "p_in={} must exceed p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.communities == 0 || self.community_size == 0 {
            return Err(Error::Config("need at least one nonempty community".into()));
        }
        if self.signature_attrs + self.background_attrs == 0 {
            return Err(Error::Config("graph needs at least one attribute".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.communities * self.community_size
    }

    pub fn attr_count(&self) -> usize {
        self.communities * self.signature_attrs + self.background_attrs
    }
}

/// Stochastic block model with community-correlated binary attributes.
/// Community `i` holds nodes `[i*size, (i+1)*size)` and signature
/// attributes `[i*sig, (i+1)*sig)`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(AttributedGraph, Vec<Community>)> {
    cfg.validate()?;
    let n = cfg.node_count();
    let c = cfg.attr_count();
    let size = cfg.community_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if u / size == v / size {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let sig = cfg.signature_attrs;
    let attrs = (0..n)
        .map(|v| {
            let own = (v / size) * sig..(v / size + 1) * sig;
            (0..c)
                .filter(|a| {
                    let p = if own.contains(a) {
                        1.0 - cfg.noise
                    } else {
                        cfg.noise
                    };
                    rng.gen_bool(p)
                })
                .collect()
        })
        .collect();

    let graph = AttributedGraph::new(n, c, edges, attrs)?;
    let communities = (0..cfg.communities)
        .map(|i| Community::new((i * size..(i + 1) * size).collect(), n))
        .collect::<Result<_>>()?;
    Ok((graph, communities))
}

/// Uniform random graph with exactly `edges` distinct edges and `attrs`
/// attributes of which each node carries one at random.
pub fn random_sparse_graph(
    nodes: usize,
    edges: usize,
    attrs: usize,
    seed: u64,
) -> Result<AttributedGraph> {
    let max = nodes.saturating_mul(nodes.saturating_sub(1)) / 2;
    if edges > max || attrs == 0 {
        return Err(Error::Config(format!(
            "cannot place {edges} edges on {nodes} nodes with {attrs} attributes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    while set.len() < edges {
        let u = rng.gen_range(0..nodes);
        let v = rng.gen_range(0..nodes);
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    let node_attrs: Vec<Vec<usize>> = (0..nodes).map(|_| vec![rng.gen_range(0..attrs)]).collect();
    AttributedGraph::new(nodes, attrs, set, node_attrs)
}
