//! Prompt tokens, query-prompt graphs and their insertion into the data graph.
//!
//! A query selects the attribute tokens of its query attributes plus every
//! virtual-node token. Tokens are linked to each other when the sigmoid of
//! their inner product exceeds `delta`, then wired into the data graph:
//! attribute token `a` to every node carrying `a`, virtual tokens to every
//! query node. In the merged graph, token `i` has id `n + i`.

use std::path::Path;
use std::sync::Arc;

use promptcs_tensor::{Segments, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::io::{read_json, write_json};
use crate::query::Query;

/// Half-width of the uniform token initialisation range.
pub const TOKEN_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenId {
    Attr(usize),
    Virtual(usize),
}

/// Learnable embeddings: one row per attribute, one per virtual node.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTokenStore {
    attr_tokens: Tensor,
    virt_tokens: Tensor,
    seed: u64,
}

impl PromptTokenStore {
    /// Uniform `[-0.1, 0.1]` initialisation, deterministic in `seed`.
    pub fn init(attr_count: usize, virtual_count: usize, dim: usize, seed: u64) -> Result<Self> {
        if attr_count == 0 || virtual_count == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "token store needs c >= 1, v_n >= 1, d >= 1 (got {attr_count}, {virtual_count}, {dim})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |_, _| rng.gen_range(-TOKEN_INIT_RANGE..=TOKEN_INIT_RANGE);
        let attr_tokens = Tensor::from_fn(attr_count, dim, &mut draw);
        let virt_tokens = Tensor::from_fn(virtual_count, dim, &mut draw);
        Ok(Self {
            attr_tokens,
            virt_tokens,
            seed,
        })
    }

    pub fn from_parts(attr_tokens: Tensor, virt_tokens: Tensor, seed: u64) -> Result<Self> {
        if attr_tokens.cols() != virt_tokens.cols() {
            return Err(Error::Dimension(format!(
                "attribute tokens have width {}, virtual tokens {}",
                attr_tokens.cols(),
                virt_tokens.cols()
            )));
        }
        Ok(Self {
            attr_tokens,
            virt_tokens,
            seed,
        })
    }

    pub fn attr_count(&self) -> usize {
        self.attr_tokens.rows()
    }

    pub fn virtual_count(&self) -> usize {
        self.virt_tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.attr_tokens.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn attr_tokens(&self) -> &Tensor {
        &self.attr_tokens
    }

    pub fn virt_tokens(&self) -> &Tensor {
        &self.virt_tokens
    }

    pub fn contains(&self, id: TokenId) -> bool {
        match id {
            TokenId::Attr(a) => a < self.attr_count(),
            TokenId::Virtual(j) => j < self.virtual_count(),
        }
    }

    pub fn embedding(&self, id: TokenId) -> &[f64] {
        match id {
            TokenId::Attr(a) => self.attr_tokens.row(a),
            TokenId::Virtual(j) => self.virt_tokens.row(j),
        }
    }

    pub fn embedding_mut(&mut self, id: TokenId) -> &mut [f64] {
        match id {
            TokenId::Attr(a) => self.attr_tokens.row_mut(a),
            TokenId::Virtual(j) => self.virt_tokens.row_mut(j),
        }
    }

    /// Stacks the embeddings of `ids` into a `|ids| x d` matrix.
    pub fn gather(&self, ids: &[TokenId]) -> Tensor {
        let mut t = Tensor::zeros(ids.len(), self.dim());
        for (i, &id) in ids.iter().enumerate() {
            t.row_mut(i).copy_from_slice(self.embedding(id));
        }
        t
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &TokenCheckpoint::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: TokenCheckpoint = read_json(path, "token checkpoint")?;
        ckpt.try_into()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenHeader {
    pub c: usize,
    pub v_n: usize,
    pub d_in: usize,
    pub seed: u64,
}

/// Serialized token store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenCheckpoint {
    pub header: TokenHeader,
    pub attr_tokens: Tensor,
    pub virt_tokens: Tensor,
}

impl From<&PromptTokenStore> for TokenCheckpoint {
    fn from(s: &PromptTokenStore) -> Self {
        Self {
            header: TokenHeader {
                c: s.attr_count(),
                v_n: s.virtual_count(),
                d_in: s.dim(),
                seed: s.seed,
            },
            attr_tokens: s.attr_tokens.clone(),
            virt_tokens: s.virt_tokens.clone(),
        }
    }
}

impl TryFrom<TokenCheckpoint> for PromptTokenStore {
    type Error = Error;

    fn try_from(c: TokenCheckpoint) -> Result<Self> {
        let h = &c.header;
        if c.attr_tokens.shape() != (h.c, h.d_in) || c.virt_tokens.shape() != (h.v_n, h.d_in) {
            return Err(Error::Dimension(format!(
                "token checkpoint header {h:?} disagrees with matrices {:?} / {:?}",
                c.attr_tokens.shape(),
                c.virt_tokens.shape()
            )));
        }
        PromptTokenStore::from_parts(c.attr_tokens, c.virt_tokens, h.seed)
    }
}

/// Prompt construction knobs, including the token-type ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Similarity threshold for token-token edges.
    pub delta: f64,
    pub use_attr_tokens: bool,
    pub use_virtual_tokens: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            delta: 0.6,
            use_attr_tokens: true,
            use_virtual_tokens: true,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0,1)", self.delta)));
        }
        Ok(())
    }
}

/// Tokens for `q`: its attributes in ascending id order, then all virtual
/// tokens. Either group can be switched off for ablations.
pub fn select_query_tokens(
    store: &PromptTokenStore,
    q: &Query,
    cfg: &PromptConfig,
) -> Result<Vec<TokenId>> {
    if let Some(&a) = q.attrs.iter().find(|&&a| a >= store.attr_count()) {
        return Err(Error::Query(format!(
            "query attribute {a} has no token (store holds {})",
            store.attr_count()
        )));
    }
    let mut ids = Vec::with_capacity(q.attrs.len() + store.virtual_count());
    if cfg.use_attr_tokens {
        let mut attrs = q.attrs.clone();
        attrs.sort_unstable();
        attrs.dedup();
        ids.extend(attrs.into_iter().map(TokenId::Attr));
    }
    if cfg.use_virtual_tokens {
        ids.extend((0..store.virtual_count()).map(TokenId::Virtual));
    }
    Ok(ids)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(<x, y>)`.
pub fn similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "token widths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(sigmoid(x.iter().zip(y).map(|(a, b)| a * b).sum()))
}

/// All pairs `(i, j)`, `i < j`, of rows whose similarity is strictly above `delta`.
pub fn prompt_edges(embeddings: &Tensor, delta: f64) -> Vec<(usize, usize)> {
    let t = embeddings.rows();
    let mut edges = Vec::new();
    for i in 0..t {
        for j in i + 1..t {
            let s = similarity(embeddings.row(i), embeddings.row(j)).expect("rows share a width");
            if s > delta {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Graph over the tokens selected for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPromptGraph {
    token_ids: Vec<TokenId>,
    /// Snapshot of the token embeddings, row `i` for `token_ids[i]`.
    embeddings: Tensor,
    edges: Vec<(usize, usize)>,
}

impl QueryPromptGraph {
    pub fn from_embeddings(
        token_ids: Vec<TokenId>,
        embeddings: Tensor,
        delta: f64,
    ) -> Result<Self> {
        if token_ids.len() != embeddings.rows() {
            return Err(Error::Dimension(format!(
                "{} token ids for {} embedding rows",
                token_ids.len(),
                embeddings.rows()
            )));
        }
        let edges = prompt_edges(&embeddings, delta);
        Ok(Self {
            token_ids,
            embeddings,
            edges,
        })
    }

    pub fn token_ids(&self) -> &[TokenId] {
        &self.token_ids
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    /// Token-index pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Thresholds the current embeddings of `token_ids` into a prompt graph.
pub fn build_prompt_graph(
    store: &PromptTokenStore,
    token_ids: Vec<TokenId>,
    delta: f64,
) -> Result<QueryPromptGraph> {
    if let Some(id) = token_ids.iter().find(|id| !store.contains(**id)) {
        return Err(Error::Query(format!("token {id:?} not in store")));
    }
    let emb = store.gather(&token_ids);
    QueryPromptGraph::from_embeddings(token_ids, emb, delta)
}

/// Relation types of the merged graph. The discriminant is the relation
/// index used by the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeType {
    Prompt = 0,
    Original = 1,
    Cross = 2,
}

pub const EDGE_TYPES: [EdgeType; 3] = [EdgeType::Prompt, EdgeType::Original, EdgeType::Cross];

/// Data graph with a query-prompt graph inserted.
#[derive(Clone, Debug)]
pub struct PromptAugmentedGraph<'g> {
    base: &'g AttributedGraph,
    prompt: QueryPromptGraph,
    query_nodes: Vec<usize>,
    /// `(token index, data node)` pairs.
    cross_edges: Vec<(usize, usize)>,
    relations: [Arc<Segments>; 3],
}

/// Inserts `prompt` into `g` for query `q`.
pub fn insert<'g>(
    g: &'g AttributedGraph,
    prompt: QueryPromptGraph,
    q: &Query,
) -> Result<PromptAugmentedGraph<'g>> {
    q.validate(g)?;
    if prompt.embeddings.cols() != g.attr_count() {
        return Err(Error::Dimension(format!(
            "token width {} differs from feature width {}",
            prompt.embeddings.cols(),
            g.attr_count()
        )));
    }
    let n = g.node_count();
    let t = prompt.len();
    let total = n + t;
    let mut query_nodes = q.nodes.clone();
    query_nodes.sort_unstable();
    query_nodes.dedup();

    let mut cross_edges = Vec::new();
    for (i, id) in prompt.token_ids.iter().enumerate() {
        match *id {
            TokenId::Attr(a) => {
                cross_edges.extend(g.nodes_with_attribute(a)?.iter().map(|&v| (i, v)))
            }
            TokenId::Virtual(_) => cross_edges.extend(query_nodes.iter().map(|&v| (i, v))),
        }
    }

    // Original relation: the data graph's CSR, with empty rows for tokens.
    let mut offsets = Vec::with_capacity(total + 1);
    let mut sources = Vec::with_capacity(2 * g.edge_count());
    offsets.push(0);
    for v in 0..n {
        sources.extend_from_slice(g.neighbors_unchecked(v));
        offsets.push(sources.len());
    }
    offsets.extend(std::iter::repeat_n(sources.len(), t));
    let original = Segments::new(offsets, sources, total)?;

    let mut prompt_lists = vec![Vec::new(); total];
    for &(i, j) in &prompt.edges {
        prompt_lists[n + i].push(n + j);
        prompt_lists[n + j].push(n + i);
    }
    let mut cross_lists = vec![Vec::new(); total];
    for &(i, v) in &cross_edges {
        cross_lists[n + i].push(v);
        cross_lists[v].push(n + i);
    }
    for l in prompt_lists.iter_mut().chain(cross_lists.iter_mut()) {
        l.sort_unstable();
    }
    let relations = [
        Arc::new(Segments::from_lists(&prompt_lists, total)?),
        Arc::new(original),
        Arc::new(Segments::from_lists(&cross_lists, total)?),
    ];

    Ok(PromptAugmentedGraph {
        base: g,
        prompt,
        query_nodes,
        cross_edges,
        relations,
    })
}

impl<'g> PromptAugmentedGraph<'g> {
    pub fn base(&self) -> &'g AttributedGraph {
        self.base
    }

    pub fn prompt(&self) -> &QueryPromptGraph {
        &self.prompt
    }

    pub fn query_nodes(&self) -> &[usize] {
        &self.query_nodes
    }

    /// Nodes of the data graph (the first `n` merged ids).
    pub fn original_count(&self) -> usize {
        self.base.node_count()
    }

    pub fn node_count(&self) -> usize {
        self.base.node_count() + self.prompt.len()
    }

    pub fn edge_count(&self) -> usize {
        self.base.edge_count() + self.prompt.edges.len() + self.cross_edges.len()
    }

    pub fn cross_edges(&self) -> &[(usize, usize)] {
        &self.cross_edges
    }

    /// Neighbourhoods per relation, indexed by `EdgeType as usize`.
    pub fn relation(&self, r: EdgeType) -> &Arc<Segments> {
        &self.relations[r as usize]
    }

    /// Every undirected edge in merged ids, `(u, v, type)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize, EdgeType)> {
        let n = self.base.node_count();
        let mut out: Vec<_> = self
            .base
            .edges()
            .iter()
            .map(|&(u, v)| (u, v, EdgeType::Original))
            .collect();
        out.extend(
            self.prompt
                .edges
                .iter()
                .map(|&(i, j)| (n + i, n + j, EdgeType::Prompt)),
        );
        out.extend(
            self.cross_edges
                .iter()
                .map(|&(i, v)| (v, n + i, EdgeType::Cross)),
        );
        out
    }

    pub fn edge_type(&self, u: usize, v: usize) -> Option<EdgeType> {
        EDGE_TYPES.into_iter().find(|&r| {
            u < self.node_count() && self.relation(r).segment(u).binary_search(&v).is_ok()
        })
    }

    /// Data-graph features followed by the token embedding rows.
    pub fn combined_features(&self) -> Tensor {
        let n = self.base.node_count();
        let mut x = Tensor::zeros(self.node_count(), self.base.attr_count());
        for v in 0..n {
            for &a in self.base.node_attrs(v) {
                x.set(v, a, 1.0);
            }
        }
        for i in 0..self.prompt.len() {
            x.row_mut(n + i)
                .copy_from_slice(self.prompt.embeddings.row(i));
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tokens of the worked example: a1, a3, a4, p1, p2.
    fn example_tokens() -> Tensor {
        Tensor::from_rows(&[
            [1.0, 0.0, 0.0],
            [0.5, 0.0, 0.5],
            [0.0, 0.0, 1.0],
            [0.0, 0.9, 0.1],
            [0.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn example_similarities() {
        let t = example_tokens();
        let s13 = similarity(t.row(0), t.row(1)).unwrap();
        assert!((s13 - 0.62).abs() < 1e-2 && s13 > 0.6);
        assert_eq!(similarity(t.row(0), t.row(3)).unwrap(), 0.5);
    }

    #[test]
    fn example_prompt_edges() {
        // a1-a3, a3-a4, p1-p2
        assert_eq!(
            prompt_edges(&example_tokens(), 0.6),
            vec![(0, 1), (1, 2), (3, 4)]
        );
    }

    #[test]
    fn threshold_is_strict() {
        // sigmoid(0) = 0.5 exactly; delta = 0.5 must give no edge.
        let t = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(prompt_edges(&t, 0.5).is_empty());
    }

    #[test]
    fn high_threshold_gives_no_edges() {
        assert!(prompt_edges(&example_tokens(), 1.0 - 1e-12).is_empty());
    }

    #[test]
    fn similarity_rejects_width_mismatch() {
        assert!(similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn token_selection_order() {
        let store = PromptTokenStore::init(5, 2, 3, 1).unwrap();
        let g = AttributedGraph::new(1, 5, vec![], vec![vec![]]).unwrap();
        let q = Query::new(&g, vec![0], vec![4, 1, 3], None).unwrap();
        let ids = select_query_tokens(&store, &q, &PromptConfig::default()).unwrap();
        assert_eq!(
            ids,
            vec![
                TokenId::Attr(1),
                TokenId::Attr(3),
                TokenId::Attr(4),
                TokenId::Virtual(0),
                TokenId::Virtual(1)
            ]
        );
        let eqa = Query::new(&g, vec![0], vec![], None).unwrap();
        let store1 = PromptTokenStore::init(5, 1, 3, 1).unwrap();
        assert_eq!(
            select_query_tokens(&store1, &eqa, &PromptConfig::default()).unwrap(),
            vec![TokenId::Virtual(0)]
        );
        let bad = Query {
            nodes: vec![0],
            attrs: vec![9],
            community: None,
        };
        assert!(select_query_tokens(&store, &bad, &PromptConfig::default()).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = PromptTokenStore::init(3, 2, 3, 7).unwrap();
        let b = PromptTokenStore::init(3, 2, 3, 7).unwrap();
        let c = PromptTokenStore::init(3, 2, 3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.attr_tokens(), c.attr_tokens());
        assert_eq!(a.attr_tokens().rows() + a.virt_tokens().rows(), 5);
        for x in a.attr_tokens().data().iter().chain(a.virt_tokens().data()) {
            assert!(x.abs() <= TOKEN_INIT_RANGE);
        }
        assert!(PromptTokenStore::init(3, 0, 3, 7).is_err());
    }

    #[test]
    fn eqa_insert_has_single_cross_edge() {
        let g = AttributedGraph::new(3, 2, vec![(0, 1), (1, 2)], vec![vec![0], vec![1], vec![0]])
            .unwrap();
        let store = PromptTokenStore::init(2, 1, 2, 0).unwrap();
        let q = Query::new(&g, vec![1], vec![], None).unwrap();
        let ids = select_query_tokens(&store, &q, &PromptConfig::default()).unwrap();
        let pg = build_prompt_graph(&store, ids, 0.6).unwrap();
        let gm = insert(&g, pg, &q).unwrap();
        assert_eq!(gm.cross_edges(), &[(0, 1)]);
        assert!(gm.prompt().edges().is_empty());
        assert_eq!(gm.node_count(), 4);
        assert_eq!(gm.edge_count(), 3);
        assert_eq!(gm.edge_type(3, 1), Some(EdgeType::Cross));
        assert_eq!(gm.edge_type(0, 1), Some(EdgeType::Original));
        assert_eq!(gm.edge_type(0, 2), None);
    }

    #[test]
    fn example_insertion_links_attribute_token_to_query_node() {
        // v_q = node 0 carries a1, a3, a4 (ids 1,3,4); node 1 carries a3 only.
        let g = AttributedGraph::new(2, 5, vec![(0, 1)], vec![vec![1, 3, 4], vec![3]]).unwrap();
        let q = Query::new(&g, vec![0], vec![1, 3, 4], None).unwrap();
        let ids = vec![
            TokenId::Attr(1),
            TokenId::Attr(3),
            TokenId::Attr(4),
            TokenId::Virtual(0),
            TokenId::Virtual(1),
        ];
        let emb = Tensor::from_fn(5, 5, |i, j| {
            if j < 3 {
                example_tokens().get(i, j)
            } else {
                0.0
            }
        });
        let pg = QueryPromptGraph::from_embeddings(ids, emb, 0.6).unwrap();
        let gm = insert(&g, pg, &q).unwrap();
        let n = 2;
        // token a3 is index 1
        assert_eq!(gm.edge_type(n + 1, 0), Some(EdgeType::Cross));
        assert_eq!(gm.edge_type(n + 1, 1), Some(EdgeType::Cross));
        assert_eq!(gm.edge_type(n, 1), None);
        assert_eq!(gm.edge_type(n + 3, 0), Some(EdgeType::Cross));
        assert_eq!(gm.edge_type(n + 4, 0), Some(EdgeType::Cross));
        assert_eq!(gm.edge_type(n, n + 1), Some(EdgeType::Prompt));
        let x = gm.combined_features();
        assert_eq!(x.shape(), (7, 5));
        assert_eq!(x.row(n + 1), &[0.5, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn checkpoint_header_is_checked() {
        let s = PromptTokenStore::init(3, 2, 4, 5).unwrap();
        let mut c = TokenCheckpoint::from(&s);
        assert_eq!(PromptTokenStore::try_from(c.clone()).unwrap(), s);
        c.header.v_n = 3;
        assert!(PromptTokenStore::try_from(c).is_err());
    }
}
