//! Attributed graph store.
//!
//! Nodes and attributes are dense 0-based ids. Adjacency is kept in CSR form
//! with sorted neighbour lists, and an inverted attribute index is built at
//! construction so that prompt insertion can enumerate `{v : a in A(v)}`
//! without scanning every node.

use std::collections::BTreeMap;
use std::path::Path;

use promptcs_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json, OutputHeader};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributedGraph {
    node_count: usize,
    attr_count: usize,
    /// Normalised `(min, max)` pairs in ascending order.
    edges: Vec<(usize, usize)>,
    node_attrs: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    attr_index: Vec<Vec<usize>>,
}

impl AttributedGraph {
    /// Validates and indexes a graph.
    ///
    /// Edges are unordered; a pair given twice (in either orientation) or a
    /// self-loop is rejected. Attribute lists are treated as sets.
    pub fn new(
        node_count: usize,
        attr_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_attrs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if node_attrs.len() != node_count {
            return Err(Error::Graph(format!(
                "{} attribute rows for {node_count} nodes",
                node_attrs.len()
            )));
        }
        let mut norm = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::Graph(format!(
                    "edge ({u},{v}) references a node outside [0,{node_count})"
                )));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop on node {u}")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        if let Some(w) = norm.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Graph(format!(
                "duplicate edge ({},{})",
                w[0].0, w[0].1
            )));
        }

        let mut attrs = node_attrs;
        let mut attr_index = vec![Vec::new(); attr_count];
        for (v, row) in attrs.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&a) = row.iter().find(|&&a| a >= attr_count) {
                return Err(Error::Graph(format!(
                    "node {v} has attribute {a} outside [0,{attr_count})"
                )));
            }
            for &a in row.iter() {
                attr_index[a].push(v);
            }
        }

        let mut degree = vec![0usize; node_count];
        for &(u, v) in &norm {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..node_count].to_vec();
        let mut adjacency = vec![0usize; norm.len() * 2];
        for &(u, v) in &norm {
            adjacency[fill[u]] = v;
            fill[u] += 1;
            adjacency[fill[v]] = u;
            fill[v] += 1;
        }
        for v in 0..node_count {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable();
        }

        Ok(Self {
            node_count,
            attr_count,
            edges: norm,
            node_attrs: attrs,
            offsets,
            adjacency,
            attr_index,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Size `c` of the attribute universe, also the feature width.
    pub fn attr_count(&self) -> usize {
        self.attr_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_attrs(&self, v: usize) -> &[usize] {
        &self.node_attrs[v]
    }

    pub fn has_attr(&self, v: usize, a: usize) -> bool {
        self.node_attrs[v].binary_search(&a).is_ok()
    }

    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        if v >= self.node_count {
            return Err(Error::Graph(format!(
                "node {v} outside [0,{})",
                self.node_count
            )));
        }
        Ok(self.neighbors_unchecked(v))
    }

    pub(crate) fn neighbors_unchecked(&self, v: usize) -> &[usize] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Sorted ids of every node carrying attribute `a`.
    pub fn nodes_with_attribute(&self, a: usize) -> Result<&[usize]> {
        self.attr_index
            .get(a)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Graph(format!("attribute {a} outside [0,{})", self.attr_count)))
    }

    /// Binary attribute-indicator matrix, `n x c`.
    pub fn features(&self) -> Tensor {
        let mut x = Tensor::zeros(self.node_count, self.attr_count);
        for (v, row) in self.node_attrs.iter().enumerate() {
            for &a in row {
                x.set(v, a, 1.0);
            }
        }
        x
    }

    /// Subgraph induced on `nodes`; local id `i` is `nodes[i]`.
    pub fn induced(&self, nodes: &[usize]) -> Result<AttributedGraph> {
        let mut local = vec![usize::MAX; self.node_count];
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.node_count {
                return Err(Error::Graph(format!(
                    "node {v} outside [0,{})",
                    self.node_count
                )));
            }
            local[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(u, v)| local[*u] != usize::MAX && local[*v] != usize::MAX)
            .map(|&(u, v)| (local[u], local[v]));
        let attrs = nodes.iter().map(|&v| self.node_attrs[v].clone()).collect();
        AttributedGraph::new(nodes.len(), self.attr_count, edges, attrs)
    }
}

/// Ground-truth community: a nonempty sorted set of node ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Community(Vec<usize>);

impl TryFrom<Vec<usize>> for Community {
    type Error = Error;

    fn try_from(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::Graph("empty community".into()));
        }
        Ok(Community(members))
    }
}

impl From<Community> for Vec<usize> {
    fn from(c: Community) -> Self {
        c.0
    }
}

impl Community {
    pub fn new(members: Vec<usize>, node_count: usize) -> Result<Self> {
        let c = Community::try_from(members)?;
        c.check(node_count)?;
        Ok(c)
    }

    pub fn check(&self, node_count: usize) -> Result<()> {
        match self.0.last() {
            Some(&v) if v >= node_count => Err(Error::Graph(format!(
                "community member {v} outside [0,{node_count})"
            ))),
            _ => Ok(()),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }
}

/// On-disk graph layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    header: Option<OutputHeader>,
    n: usize,
    c: usize,
    edges: Vec<[usize; 2]>,
    attrs: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    communities: Option<Vec<Vec<usize>>>,
}

/// A graph as read from disk, with any ground-truth communities it carries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadedGraph {
    pub graph: AttributedGraph,
    pub communities: Option<Vec<Community>>,
}

pub fn load_graph(path: &Path) -> Result<AttributedGraph> {
    Ok(load_graph_file(path)?.graph)
}

pub fn load_graph_file(path: &Path) -> Result<LoadedGraph> {
    let raw: GraphFile = read_json(path, "graph file")?;
    let graph = AttributedGraph::new(
        raw.n,
        raw.c,
        raw.edges.iter().map(|e| (e[0], e[1])),
        raw.attrs,
    )?;
    let communities = raw
        .communities
        .map(|cs| {
            cs.into_iter()
                .map(|m| Community::new(m, graph.node_count()))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(LoadedGraph { graph, communities })
}

pub fn save_graph(
    path: &Path,
    graph: &AttributedGraph,
    communities: Option<&[Community]>,
    header: Option<OutputHeader>,
) -> Result<()> {
    let file = GraphFile {
        header,
        n: graph.node_count,
        c: graph.attr_count,
        edges: graph.edges.iter().map(|&(u, v)| [u, v]).collect(),
        attrs: graph.node_attrs.clone(),
        communities: communities.map(|cs| cs.iter().map(|c| c.members().to_vec()).collect()),
    };
    write_json(path, &file)
}

/// Mapping from external string names to dense ids, persisted next to a
/// graph file as `dict.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdDictionary {
    pub nodes: BTreeMap<String, usize>,
    pub attrs: BTreeMap<String, usize>,
}

impl IdDictionary {
    pub fn node_id(&mut self, name: &str) -> usize {
        let next = self.nodes.len();
        *self.nodes.entry(name.to_owned()).or_insert(next)
    }

    pub fn attr_id(&mut self, name: &str) -> usize {
        let next = self.attrs.len();
        *self.attrs.entry(name.to_owned()).or_insert(next)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "id dictionary")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Builds a graph from string-labelled edges and attribute lists,
    /// interning every name into this dictionary.
    pub fn build_graph<S: AsRef<str>>(
        &mut self,
        edges: &[(S, S)],
        node_attrs: &[(S, Vec<S>)],
    ) -> Result<AttributedGraph> {
        let mut id_edges = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            id_edges.push((self.node_id(u.as_ref()), self.node_id(v.as_ref())));
        }
        let mut pending = Vec::new();
        for (v, attrs) in node_attrs {
            let v = self.node_id(v.as_ref());
            let ids: Vec<usize> = attrs.iter().map(|a| self.attr_id(a.as_ref())).collect();
            pending.push((v, ids));
        }
        let mut rows = vec![Vec::new(); self.nodes.len()];
        for (v, ids) in pending {
            rows[v].extend(ids);
        }
        AttributedGraph::new(self.nodes.len(), self.attrs.len(), id_edges, rows)
    }
}
