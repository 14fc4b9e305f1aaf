//! Query representation, AFC/AFN/EQA workload generation and
//! positive/negative label sampling.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributedGraph, Community};
use crate::io::{read_json, write_json, OutputHeader};

/// An attributed community search query `(V_q, A_q)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Query {
    pub nodes: Vec<usize>,
    pub attrs: Vec<usize>,
    /// Index of the ground-truth community the query was drawn from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub community: Option<usize>,
}

impl Query {
    /// Builds a validated query; node and attribute lists become sorted sets.
    pub fn new(
        g: &AttributedGraph,
        mut nodes: Vec<usize>,
        mut attrs: Vec<usize>,
        community: Option<usize>,
    ) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        attrs.sort_unstable();
        attrs.dedup();
        let q = Query {
            nodes,
            attrs,
            community,
        };
        q.validate(g)?;
        Ok(q)
    }

    pub fn validate(&self, g: &AttributedGraph) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Query("query has no nodes".into()));
        }
        if let Some(&v) = self.nodes.iter().find(|&&v| v >= g.node_count()) {
            return Err(Error::Query(format!(
                "query node {v} outside [0,{})",
                g.node_count()
            )));
        }
        if let Some(&a) = self.attrs.iter().find(|&&a| a >= g.attr_count()) {
            return Err(Error::Query(format!(
                "query attribute {a} outside [0,{})",
                g.attr_count()
            )));
        }
        Ok(())
    }

    /// True for empty-query-attribute (EQA) queries.
    pub fn is_eqa(&self) -> bool {
        self.attrs.is_empty()
    }
}

/// A training query with sampled supervision `l_q^+`, `l_q^-`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    #[serde(flatten)]
    pub query: Query,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// A query scored against its full ground-truth community.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalQuery {
    pub query: Query,
    pub truth: Community,
}

/// How query attributes are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Most frequent attributes of the target community.
    Afc,
    /// Union of the query nodes' own attributes.
    Afn,
    /// No query attributes.
    Eqa,
}

impl std::fmt::Display for QueryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QueryKind::Afc => "AFC",
            QueryKind::Afn => "AFN",
            QueryKind::Eqa => "EQA",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadParams {
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub attrs_per_query: usize,
    pub seed: u64,
}

impl WorkloadParams {
    /// Every query gets exactly `nodes_per_query` nodes.
    pub fn fixed(count: usize, nodes_per_query: usize, seed: u64) -> Self {
        Self {
            count,
            min_nodes: nodes_per_query,
            max_nodes: nodes_per_query,
            attrs_per_query: 3,
            seed,
        }
    }
}

/// The `k` most frequent attributes among `members`, ties to the lower id,
/// returned in ascending id order. Attributes nobody carries are never chosen.
pub fn top_attributes(g: &AttributedGraph, members: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; g.attr_count()];
    for &v in members {
        for &a in g.node_attrs(v) {
            counts[a] += 1;
        }
    }
    let mut ranked: Vec<usize> = (0..g.attr_count()).filter(|&a| counts[a] > 0).collect();
    ranked.sort_by_key(|&a| (std::cmp::Reverse(counts[a]), a));
    ranked.truncate(k);
    ranked.sort_unstable();
    ranked
}

fn node_attr_union(g: &AttributedGraph, nodes: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = nodes
        .iter()
        .flat_map(|&v| g.node_attrs(v).iter().copied())
        .collect();
    set.into_iter().collect()
}

/// Draws `params.count` distinct queries of the given kind. Each query picks
/// a community uniformly, then its nodes uniformly without replacement.
pub fn generate_workload(
    kind: QueryKind,
    g: &AttributedGraph,
    communities: &[Community],
    params: &WorkloadParams,
) -> Result<Vec<Query>> {
    if communities.is_empty() {
        return Err(Error::Query("no communities to draw queries from".into()));
    }
    if params.min_nodes == 0 || params.min_nodes > params.max_nodes {
        return Err(Error::Query(format!(
            "invalid query size range [{}, {}]",
            params.min_nodes, params.max_nodes
        )));
    }
    for c in communities {
        c.check(g.node_count())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(params.count);
    let max_attempts = params.count.saturating_mul(100).max(100);
    let mut attempts = 0;
    while out.len() < params.count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Query(format!(
                "only {} distinct queries found after {max_attempts} draws (wanted {})",
                out.len(),
                params.count
            )));
        }
        let ci = rng.gen_range(0..communities.len());
        let size = rng.gen_range(params.min_nodes..=params.max_nodes);
        let members = communities[ci].members();
        if members.len() < size {
            return Err(Error::Query(format!(
                "community {ci} has {} members, fewer than {size} query nodes",
                members.len()
            )));
        }
        let mut nodes: Vec<usize> = sample(&mut rng, members.len(), size)
            .into_iter()
            .map(|i| members[i])
            .collect();
        nodes.sort_unstable();
        let attrs = match kind {
            QueryKind::Afc => top_attributes(g, members, params.attrs_per_query),
            QueryKind::Afn => node_attr_union(g, &nodes),
            QueryKind::Eqa => Vec::new(),
        };
        let q = Query {
            nodes,
            attrs,
            community: Some(ci),
        };
        if seen.insert((q.nodes.clone(), q.attrs.clone())) {
            out.push(q);
        }
    }
    Ok(out)
}

pub fn gen_afc(
    g: &AttributedGraph,
    communities: &[Community],
    params: &WorkloadParams,
) -> Result<Vec<Query>> {
    generate_workload(QueryKind::Afc, g, communities, params)
}

pub fn gen_afn(
    g: &AttributedGraph,
    communities: &[Community],
    params: &WorkloadParams,
) -> Result<Vec<Query>> {
    generate_workload(QueryKind::Afn, g, communities, params)
}

pub fn gen_eqa(
    g: &AttributedGraph,
    communities: &[Community],
    params: &WorkloadParams,
) -> Result<Vec<Query>> {
    generate_workload(QueryKind::Eqa, g, communities, params)
}

fn ceil_fraction(ratio: f64, total: usize) -> usize {
    // Guard against 0.6 * 60 = 36.000000000000004 style round-up.
    let k = (ratio * total as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(total)
}

/// Samples supervision for a training query: `ceil(ratio*|C|)` members plus
/// the query nodes as positives, `ceil(ratio*|V\C|)` non-members as negatives.
pub fn sample_labels(
    g: &AttributedGraph,
    query: &Query,
    community: &Community,
    label_ratio: f64,
    seed: u64,
) -> Result<LabeledQuery> {
    if !(label_ratio > 0.0 && label_ratio <= 1.0) {
        return Err(Error::Query(format!(
            "label ratio {label_ratio} outside (0,1]"
        )));
    }
    query.validate(g)?;
    community.check(g.node_count())?;
    if let Some(&v) = query.nodes.iter().find(|&&v| !community.contains(v)) {
        return Err(Error::Query(format!(
            "query node {v} is not in its community"
        )));
    }
    let members = community.members();
    let outsiders: Vec<usize> = (0..g.node_count())
        .filter(|&v| !community.contains(v))
        .collect();
    if outsiders.is_empty() {
        return Err(Error::Query(
            "community covers the whole graph; no negatives available".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_pos = ceil_fraction(label_ratio, members.len());
    let k_neg = ceil_fraction(label_ratio, outsiders.len());
    let mut positives: BTreeSet<usize> = sample(&mut rng, members.len(), k_pos)
        .into_iter()
        .map(|i| members[i])
        .collect();
    positives.extend(query.nodes.iter().copied());
    let mut negatives: Vec<usize> = sample(&mut rng, outsiders.len(), k_neg)
        .into_iter()
        .map(|i| outsiders[i])
        .collect();
    negatives.sort_unstable();
    Ok(LabeledQuery {
        query: query.clone(),
        positives: positives.into_iter().collect(),
        negatives,
    })
}

/// Splits a workload into consecutive train/val/test slices.
pub fn split_queries<T: Clone>(
    items: &[T],
    train: usize,
    val: usize,
    test: usize,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.len() < train + val + test {
        return Err(Error::Query(format!(
            "workload has {} queries, split needs {}",
            items.len(),
            train + val + test
        )));
    }
    Ok((
        items[..train].to_vec(),
        items[train..train + val].to_vec(),
        items[train + val..train + val + test].to_vec(),
    ))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WorkloadFile {
    Wrapped {
        header: OutputHeader,
        queries: Vec<LabeledQuery>,
    },
    Bare(Vec<LabeledQuery>),
}

pub fn save_workload(
    path: &Path,
    queries: &[LabeledQuery],
    header: Option<OutputHeader>,
) -> Result<()> {
    match header {
        Some(header) => write_json(
            path,
            &WorkloadFile::Wrapped {
                header,
                queries: queries.to_vec(),
            },
        ),
        None => write_json(path, &queries),
    }
}

/// Reads a workload, either a bare JSON list or a `{header, queries}` object.
pub fn load_workload(path: &Path) -> Result<Vec<LabeledQuery>> {
    let file: WorkloadFile = read_json(path, "workload file")?;
    Ok(match file {
        WorkloadFile::Wrapped { queries, .. } | WorkloadFile::Bare(queries) => queries,
    })
}
