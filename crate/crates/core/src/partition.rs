//! Balanced edge-cut partitioning into shards.
//!
//! Regions are grown one at a time from a random seed node, always absorbing
//! the frontier node with the most links into the region. A refinement pass
//! then moves boundary nodes to the neighbouring shard holding most of their
//! neighbours whenever that strictly reduces the cut and keeps every shard
//! within 10% of `n / s`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::io::{read_json, write_json, OutputHeader};

const MAX_REFINE_PASSES: usize = 16;

/// One shard: the induced subgraph on its nodes, in ascending global id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub graph: AttributedGraph,
    pub global_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    local_index: Vec<usize>,
    shards: Vec<Shard>,
    cut: usize,
}

/// Number of edges whose endpoints lie in different shards.
pub fn edge_cut(g: &AttributedGraph, assignment: &[usize]) -> usize {
    g.edges()
        .iter()
        .filter(|&&(u, v)| assignment[u] != assignment[v])
        .count()
}

impl Partition {
    pub fn from_assignment(g: &AttributedGraph, s: usize, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != g.node_count() {
            return Err(Error::Graph(format!(
                "assignment covers {} nodes, graph has {}",
                assignment.len(),
                g.node_count()
            )));
        }
        if s == 0 {
            return Err(Error::Config("shard count must be at least 1".into()));
        }
        let mut members = vec![Vec::new(); s];
        let mut local_index = vec![0; g.node_count()];
        for (v, &a) in assignment.iter().enumerate() {
            if a >= s {
                return Err(Error::Graph(format!(
                    "node {v} assigned to shard {a} of {s}"
                )));
            }
            local_index[v] = members[a].len();
            members[a].push(v);
        }
        let shards = members
            .into_iter()
            .map(|ids| {
                Ok(Shard {
                    graph: g.induced(&ids)?,
                    global_ids: ids,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cut = edge_cut(g, &assignment);
        Ok(Self {
            assignment,
            local_index,
            shards,
            cut,
        })
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, i: usize) -> &Shard {
        &self.shards[i]
    }

    /// Shard that owns global node `v`.
    pub fn home(&self, v: usize) -> usize {
        self.assignment[v]
    }

    /// Position of `v` inside its home shard.
    pub fn local_index(&self, v: usize) -> usize {
        self.local_index[v]
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.global_ids.len()).collect()
    }

    pub fn save(&self, path: &Path, header: Option<OutputHeader>) -> Result<()> {
        write_json(
            path,
            &PartitionFile {
                header,
                s: self.shard_count(),
                assignment: self.assignment.clone(),
                cut: Some(self.cut),
            },
        )
    }

    pub fn load(path: &Path, g: &AttributedGraph) -> Result<Self> {
        let f: PartitionFile = read_json(path, "partition file")?;
        Self::from_assignment(g, f.s, f.assignment)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    header: Option<OutputHeader>,
    s: usize,
    assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cut: Option<usize>,
}

/// Shard count giving roughly `target` nodes per shard.
pub fn default_shard_count(n: usize, target: usize) -> usize {
    n.div_ceil(target.max(1)).max(1)
}

pub fn partition_graph(g: &AttributedGraph, s: usize, seed: u64) -> Result<Partition> {
    let n = g.node_count();
    if s == 0 || s > n {
        return Err(Error::Config(format!(
            "cannot split {n} nodes into {s} shards"
        )));
    }
    let mut assignment = grow_regions(g, s, seed);
    refine(g, s, &mut assignment);
    Partition::from_assignment(g, s, assignment)
}

fn grow_regions(g: &AttributedGraph, s: usize, seed: u64) -> Vec<usize> {
    const FREE: usize = usize::MAX;
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![FREE; n];
    let mut unassigned: Vec<usize> = (0..n).collect();
    let mut links = vec![0usize; n];

    for shard in 0..s {
        let target = n / s + usize::from(shard < n % s);
        let mut heap: BinaryHeap<(usize, Reverse<usize>)> = BinaryHeap::new();
        let mut touched = Vec::new();
        let mut size = 0;
        while size < target {
            let next = loop {
                match heap.pop() {
                    Some((l, Reverse(v))) if assignment[v] == FREE && links[v] == l => {
                        break Some(v)
                    }
                    Some(_) => continue,
                    None => break None,
                }
            };
            let v = match next {
                Some(v) => v,
                None => {
                    unassigned.retain(|&v| assignment[v] == FREE);
                    if size == 0 {
                        unassigned[rng.gen_range(0..unassigned.len())]
                    } else {
                        unassigned[0]
                    }
                }
            };
            assignment[v] = shard;
            size += 1;
            for &u in g.neighbors_unchecked(v) {
                if assignment[u] == FREE {
                    if links[u] == 0 {
                        touched.push(u);
                    }
                    links[u] += 1;
                    heap.push((links[u], Reverse(u)));
                }
            }
        }
        for u in touched {
            links[u] = 0;
        }
    }
    assignment
}

fn refine(g: &AttributedGraph, s: usize, assignment: &mut [usize]) {
    if s == 1 {
        return;
    }
    let n = g.node_count();
    let lo = (0.9 * n as f64 / s as f64).floor() as usize;
    let hi = (1.1 * n as f64 / s as f64).ceil() as usize;
    let mut sizes = vec![0usize; s];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    let mut counts = vec![0usize; s];
    for _ in 0..MAX_REFINE_PASSES {
        let mut moved = false;
        for v in 0..n {
            let home = assignment[v];
            let nbrs = g.neighbors_unchecked(v);
            for &u in nbrs {
                counts[assignment[u]] += 1;
            }
            let mut best: Option<usize> = None;
            for &u in nbrs {
                let b = assignment[u];
                if b != home
                    && best
                        .is_none_or(|c| counts[b] > counts[c] || (counts[b] == counts[c] && b < c))
                {
                    best = Some(b);
                }
            }
            if let Some(b) =
                best.filter(|&b| counts[b] > counts[home] && sizes[home] > lo && sizes[b] < hi)
            {
                assignment[v] = b;
                sizes[home] -= 1;
                sizes[b] += 1;
                moved = true;
            }
            for &u in nbrs {
                counts[assignment[u]] = 0;
            }
        }
        if !moved {
            break;
        }
    }
}
