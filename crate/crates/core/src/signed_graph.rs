//! Signed digraphs and their purely structural quantities.
//!
//! Orientation convention: an edge record `from = l, to = k` populates the
//! adjacency entry `w[k][l]`. Rows are receivers and columns are senders, so
//! row `k` of the adjacency matrix lists the in-neighbors of node `k`. All
//! indices are 0-based in memory; the JSON document format is 1-based.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge #{index} ({from}->{to}): self-loop")]
    SelfLoop { index: usize, from: usize, to: usize },
    #[error("edge #{index} ({from}->{to}): zero weight")]
    ZeroWeight { index: usize, from: usize, to: usize },
    #[error("edge #{index} ({from}->{to}): weight is not finite")]
    NonFiniteWeight { index: usize, from: usize, to: usize },
    #[error("edge #{index} ({from}->{to}): duplicate of edge #{first}")]
    DuplicateEdge { index: usize, first: usize, from: usize, to: usize },
    #[error("edge #{index} ({from}->{to}): node index out of range 1..={n}")]
    IndexOutOfRange { index: usize, from: i64, to: i64, n: usize },
    #[error("labels: expected {expected} entries, found {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("node subset is empty")]
    EmptySubset,
    #[error("node subset contains out-of-range index {0}")]
    SubsetOutOfRange(usize),
    #[error("invalid graph document: {0}")]
    Document(String),
}

/// One directed, weighted edge `from -> to` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedDigraph {
    n: usize,
    edges: Vec<Edge>,
    labels: Option<Vec<String>>,
}

/// On-disk graph document. Node indices are 1-based and `from`/`to` follow
/// the edge direction `v_from -> v_to`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub n: usize,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub from: i64,
    pub to: i64,
    pub w: f64,
}

impl SignedDigraph {
    /// Builds a validated graph from 0-based edges.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        Self::with_labels(n, edges, None)
    }

    pub fn with_labels(
        n: usize,
        edges: Vec<Edge>,
        labels: Option<Vec<String>>,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::LabelCount { expected: n, found: l.len() });
            }
        }
        let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (index, e) in edges.iter().enumerate() {
            let (from, to) = (e.from + 1, e.to + 1);
            if e.from >= n || e.to >= n {
                return Err(GraphError::IndexOutOfRange {
                    index,
                    from: from as i64,
                    to: to as i64,
                    n,
                });
            }
            if e.from == e.to {
                return Err(GraphError::SelfLoop { index, from, to });
            }
            if !e.weight.is_finite() {
                return Err(GraphError::NonFiniteWeight { index, from, to });
            }
            if e.weight == 0.0 {
                return Err(GraphError::ZeroWeight { index, from, to });
            }
            if let Some(&first) = seen.get(&(e.from, e.to)) {
                return Err(GraphError::DuplicateEdge { index, first, from, to });
            }
            seen.insert((e.from, e.to), index);
        }
        Ok(Self { n, edges, labels })
    }

    /// Convenience constructor from 1-based `(from, to, weight)` triples.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(triples.len());
        for (index, &(from, to, weight)) in triples.iter().enumerate() {
            if from == 0 || to == 0 {
                return Err(GraphError::IndexOutOfRange {
                    index,
                    from: from as i64,
                    to: to as i64,
                    n,
                });
            }
            edges.push(Edge { from: from - 1, to: to - 1, weight });
        }
        Self::new(n, edges)
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        let n = doc.n;
        let mut edges = Vec::with_capacity(doc.edges.len());
        for (index, r) in doc.edges.iter().enumerate() {
            let in_range = |v: i64| v >= 1 && (v as u64) <= n as u64;
            if !in_range(r.from) || !in_range(r.to) {
                return Err(GraphError::IndexOutOfRange { index, from: r.from, to: r.to, n });
            }
            edges.push(Edge { from: r.from as usize - 1, to: r.to as usize - 1, weight: r.w });
        }
        Self::with_labels(n, edges, doc.labels)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord { from: e.from as i64 + 1, to: e.to as i64 + 1, w: e.weight })
                .collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Adjacency matrix with `w[to][from] = weight`.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            w[(e.to, e.from)] = e.weight;
        }
        w
    }

    /// In-neighbors of every node as `(sender, weight)` lists.
    pub fn in_neighbors(&self) -> Vec<Vec<(usize, f64)>> {
        let mut nb = vec![Vec::new(); self.n];
        for e in &self.edges {
            nb[e.to].push((e.from, e.weight));
        }
        for list in &mut nb {
            list.sort_by_key(|&(l, _)| l);
        }
        nb
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for e in &self.edges {
            out[e.from].push(e.to);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn laplacian(&self) -> LaplacianBundle {
        let w = self.adjacency();
        let mut degrees = vec![0.0; self.n];
        for k in 0..self.n {
            degrees[k] = (0..self.n).map(|l| w[(k, l)].abs()).sum();
        }
        let mut laplacian = -w;
        for (k, d) in degrees.iter().enumerate() {
            laplacian[(k, k)] = *d;
        }
        let comparison = comparison_matrix(&laplacian);
        LaplacianBundle { laplacian, comparison, degrees }
    }

    /// The subgraph induced by `nodes`, relabelled `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Result<SignedDigraph, GraphError> {
        let mut pos = vec![usize::MAX; self.n];
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.n {
                return Err(GraphError::SubsetOutOfRange(v));
            }
            pos[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| pos[e.from] != usize::MAX && pos[e.to] != usize::MAX)
            .map(|e| Edge { from: pos[e.from], to: pos[e.to], weight: e.weight })
            .collect();
        SignedDigraph::new(nodes.len(), edges)
    }
}

/// Parses and validates a graph JSON document.
pub fn parse_graph(doc: &str) -> Result<SignedDigraph, GraphError> {
    let parsed: GraphDocument = serde_json::from_str(doc).map_err(|e| {
        GraphError::Document(format!("{e} (line {}, column {})", e.line(), e.column()))
    })?;
    SignedDigraph::from_document(parsed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBundle {
    pub laplacian: DMatrix<f64>,
    pub comparison: DMatrix<f64>,
    pub degrees: Vec<f64>,
}

/// `m_ii = |a_ii|`, `m_ij = -|a_ij|` for `i != j`.
pub fn comparison_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "comparison matrix needs a square input");
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        if i == j {
            a[(i, j)].abs()
        } else {
            -a[(i, j)].abs()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentPartition {
    /// Strong components in topological order of the condensation; ties are
    /// broken by the smallest node index. Members are sorted ascending.
    pub sccs: Vec<Vec<usize>>,
    /// `closed[i]` is true iff no edge enters `sccs[i]` from outside.
    pub closed: Vec<bool>,
    /// Indices into `sccs` of the closed strong components, in order.
    pub cscs: Vec<usize>,
    pub leaders: Vec<usize>,
    pub followers: Vec<usize>,
}

impl ComponentPartition {
    pub fn csc_count(&self) -> usize {
        self.cscs.len()
    }

    pub fn csc_sizes(&self) -> Vec<usize> {
        self.cscs.iter().map(|&i| self.sccs[i].len()).collect()
    }

    pub fn leader_count(&self) -> usize {
        self.leaders.len()
    }

    pub fn csc_members(&self, k: usize) -> &[usize] {
        &self.sccs[self.cscs[k]]
    }
}

/// Iterative Tarjan; returns components in reverse topological order.
fn tarjan(out: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = out.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0usize;

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child < out[v].len() {
                let w = out[v][*child];
                *child += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Strong components (sign-agnostic), closed flags and the leader/follower split.
pub fn strong_components(g: &SignedDigraph) -> ComponentPartition {
    let out = g.out_adjacency();
    let raw = tarjan(&out);

    let mut comp_of = vec![0usize; g.n()];
    for (c, members) in raw.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let nc = raw.len();
    let mut indeg = vec![0usize; nc];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for e in g.edges() {
        let (a, b) = (comp_of[e.from], comp_of[e.to]);
        if a != b {
            succ[a].push(b);
            indeg[b] += 1;
        }
    }

    // Kahn with a min-heap on the smallest member index for a deterministic order.
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::new();
    let closed_raw: Vec<bool> = indeg.iter().map(|&d| d == 0).collect();
    for c in 0..nc {
        if indeg[c] == 0 {
            heap.push(Reverse((raw[c][0], c)));
        }
    }
    let mut order = Vec::with_capacity(nc);
    while let Some(Reverse((_, c))) = heap.pop() {
        order.push(c);
        for &s in &succ[c] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse((raw[s][0], s)));
            }
        }
    }

    let sccs: Vec<Vec<usize>> = order.iter().map(|&c| raw[c].clone()).collect();
    let closed: Vec<bool> = order.iter().map(|&c| closed_raw[c]).collect();
    let mut cscs: Vec<usize> = (0..nc).filter(|&i| closed[i]).collect();
    cscs.sort_by_key(|&i| sccs[i][0]);

    let mut is_leader = vec![false; g.n()];
    for &i in &cscs {
        for &v in &sccs[i] {
            is_leader[v] = true;
        }
    }
    let leaders = cscs.iter().flat_map(|&i| sccs[i].iter().copied()).collect();
    let followers = (0..g.n()).filter(|&v| !is_leader[v]).collect();

    ComponentPartition { sccs, closed, cscs, leaders, followers }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Connectivity {
    Disconnected,
    Weak,
    QuasiStrong,
    Strong,
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Connectivity::Disconnected => "Disconnected",
            Connectivity::Weak => "Weak",
            Connectivity::QuasiStrong => "QuasiStrong",
            Connectivity::Strong => "Strong",
        };
        f.write_str(s)
    }
}

pub fn classify_connectivity(g: &SignedDigraph) -> Connectivity {
    let part = strong_components(g);
    if part.sccs.len() == 1 {
        return Connectivity::Strong;
    }
    // A root exists iff there is exactly one closed strong component.
    if part.csc_count() == 1 {
        return Connectivity::QuasiStrong;
    }
    if undirected_connected(g) {
        Connectivity::Weak
    } else {
        Connectivity::Disconnected
    }
}

fn undirected_connected(g: &SignedDigraph) -> bool {
    let mut adj = vec![Vec::new(); g.n()];
    for e in g.edges() {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; g.n()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == g.n()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceVerdict {
    pub balanced: bool,
    /// Gauge entries in the order of the tested subset.
    pub gauge: Option<Vec<i8>>,
    /// Edges `(from, to)` (0-based) of a sign-inconsistent cycle.
    pub witness: Option<Vec<(usize, usize)>>,
}

impl BalanceVerdict {
    pub fn gauge_f64(&self) -> Option<Vec<f64>> {
        self.gauge.as_ref().map(|g| g.iter().map(|&s| f64::from(s)).collect())
    }
}

/// Structural balance of the subgraph induced by `nodes`, via sign-constraint
/// propagation. Every directed edge is an independent constraint
/// `g_to * g_from = sign(w)`; the lowest-index node of each constraint
/// component is fixed to `+1`.
pub fn structural_balance(g: &SignedDigraph, nodes: &[usize]) -> Result<BalanceVerdict, GraphError> {
    if nodes.is_empty() {
        return Err(GraphError::EmptySubset);
    }
    let mut pos = vec![usize::MAX; g.n()];
    for (i, &v) in nodes.iter().enumerate() {
        if v >= g.n() {
            return Err(GraphError::SubsetOutOfRange(v));
        }
        pos[v] = i;
    }

    // (neighbor, sign, edge from, edge to)
    let mut adj: Vec<Vec<(usize, i8, usize, usize)>> = vec![Vec::new(); g.n()];
    for e in g.edges() {
        if pos[e.from] == usize::MAX || pos[e.to] == usize::MAX {
            continue;
        }
        let s = if e.weight > 0.0 { 1 } else { -1 };
        adj[e.from].push((e.to, s, e.from, e.to));
        adj[e.to].push((e.from, s, e.from, e.to));
    }

    let mut sorted: Vec<usize> = nodes.to_vec();
    sorted.sort_unstable();
    let mut sign = vec![0i8; g.n()];
    let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; g.n()];

    for &root in &sorted {
        if sign[root] != 0 {
            continue;
        }
        sign[root] = 1;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            for &(w, s, ef, et) in &adj[v] {
                let want = sign[v] * s;
                if sign[w] == 0 {
                    sign[w] = want;
                    parent[w] = Some((v, (ef, et)));
                    queue.push_back(w);
                } else if sign[w] != want {
                    let witness = conflict_cycle(&parent, v, w, (ef, et));
                    return Ok(BalanceVerdict { balanced: false, gauge: None, witness: Some(witness) });
                }
            }
        }
    }

    let gauge = nodes.iter().map(|&v| sign[v]).collect();
    Ok(BalanceVerdict { balanced: true, gauge: Some(gauge), witness: None })
}

fn conflict_cycle(
    parent: &[Option<(usize, (usize, usize))>],
    a: usize,
    b: usize,
    closing: (usize, usize),
) -> Vec<(usize, usize)> {
    let path = |mut v: usize| {
        let mut nodes = vec![v];
        let mut edges = Vec::new();
        while let Some((p, e)) = parent[v] {
            edges.push(e);
            nodes.push(p);
            v = p;
        }
        (nodes, edges)
    };
    let (na, ea) = path(a);
    let (nb, eb) = path(b);
    // Strip the shared tail (common ancestors).
    let mut ia = na.len();
    let mut ib = nb.len();
    while ia > 0 && ib > 0 && na[ia - 1] == nb[ib - 1] {
        ia -= 1;
        ib -= 1;
    }
    let mut cycle: Vec<(usize, usize)> = ea[..ia].to_vec();
    cycle.extend_from_slice(&eb[..ib]);
    if !cycle.contains(&closing) {
        cycle.push(closing);
    }
    cycle
}

/// Laplacian in leader-first ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    /// `order[i]` is the original index of the node at permuted position `i`.
    pub order: Vec<usize>,
    /// Leader-block ranges (in permuted positions) for each closed strong component.
    pub csc_ranges: Vec<std::ops::Range<usize>>,
    pub l_l: DMatrix<f64>,
    pub l_lk: Vec<DMatrix<f64>>,
    pub l_fl: DMatrix<f64>,
    pub l_flk: Vec<DMatrix<f64>>,
    pub l_f: DMatrix<f64>,
    /// Leader-rows/follower-columns block; zero for any valid partition.
    pub l_lf: DMatrix<f64>,
}

impl LaplacianBlocks {
    pub fn leader_count(&self) -> usize {
        self.l_l.nrows()
    }

    pub fn follower_count(&self) -> usize {
        self.l_f.nrows()
    }

    /// Reassembles the Laplacian in the original node ordering.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.order.len();
        let k = self.leader_count();
        let mut permuted = DMatrix::zeros(n, n);
        permuted.view_mut((0, 0), (k, k)).copy_from(&self.l_l);
        permuted.view_mut((0, k), (k, n - k)).copy_from(&self.l_lf);
        permuted.view_mut((k, 0), (n - k, k)).copy_from(&self.l_fl);
        permuted.view_mut((k, k), (n - k, n - k)).copy_from(&self.l_f);
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.order[i], self.order[j])] = permuted[(i, j)];
            }
        }
        out
    }
}

pub fn laplacian_blocks(g: &SignedDigraph, partition: &ComponentPartition) -> LaplacianBlocks {
    let l = g.laplacian().laplacian;
    let mut order = Vec::with_capacity(g.n());
    let mut csc_ranges = Vec::with_capacity(partition.csc_count());
    for k in 0..partition.csc_count() {
        let start = order.len();
        order.extend_from_slice(partition.csc_members(k));
        csc_ranges.push(start..order.len());
    }
    order.extend_from_slice(&partition.followers);

    let n = g.n();
    let k = partition.leader_count();
    let permuted = DMatrix::from_fn(n, n, |i, j| l[(order[i], order[j])]);
    let l_l = permuted.view((0, 0), (k, k)).into_owned();
    let l_lf = permuted.view((0, k), (k, n - k)).into_owned();
    let l_fl = permuted.view((k, 0), (n - k, k)).into_owned();
    let l_f = permuted.view((k, k), (n - k, n - k)).into_owned();
    let l_lk = csc_ranges
        .iter()
        .map(|r| l_l.view((r.start, r.start), (r.len(), r.len())).into_owned())
        .collect();
    let l_flk = csc_ranges
        .iter()
        .map(|r| l_fl.view((0, r.start), (n - k, r.len())).into_owned())
        .collect();

    LaplacianBlocks { order, csc_ranges, l_l, l_lk, l_fl, l_flk, l_f, l_lf }
}
