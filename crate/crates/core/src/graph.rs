//! Weighted and binary DAG algebra.
//!
//! Orientation: row = child, column = parent. `W[i][j] ≠ 0` is the edge
//! `j → i` with weight `W[i][j]`, so `X = W·X` propagates parents into
//! children. Most structure-learning code uses the transpose; this crate
//! does not.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::rng;
use crate::tensorcore::Tensor;

/// `V×V` weighted adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAdjacency {
    w: Tensor,
}

impl WeightedAdjacency {
    pub fn new(w: Tensor) -> Result<Self> {
        let (r, c) = w.dims();
        if r != c {
            return Err(dim_err("WeightedAdjacency", (r, r), (r, c)));
        }
        if !w.is_finite() {
            return Err(Error::InvalidParameter(
                "adjacency has non-finite entries".into(),
            ));
        }
        if (0..r).any(|i| w.at(i, i) != 0.0) {
            return Err(Error::InvalidParameter(
                "adjacency diagonal must be zero".into(),
            ));
        }
        Ok(Self { w })
    }

    pub fn zeros(v: usize) -> Self {
        Self {
            w: Tensor::zeros(v, v),
        }
    }

    /// Builds from `(parent, child, weight)` triples.
    pub fn from_edges(v: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = Tensor::zeros(v, v);
        for &(from, to, weight) in edges {
            for idx in [from, to] {
                if idx >= v {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        size: v,
                    });
                }
            }
            w.set(to, from, weight);
        }
        Self::new(w)
    }

    pub fn size(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.w
    }

    pub fn weight(&self, child: usize, parent: usize) -> f64 {
        self.w.at(child, parent)
    }

    /// `(parent, child, weight)` for every nonzero entry, row-major.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let v = self.size();
        let mut out = Vec::new();
        for i in 0..v {
            for j in 0..v {
                let x = self.w.at(i, j);
                if x != 0.0 {
                    out.push((j, i, x));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.w.values().iter().filter(|x| **x != 0.0).count()
    }

    /// `(h, ∇h)` for this matrix; see [`acyclicity`].
    pub fn acyclicity(&self) -> Result<(f64, Tensor)> {
        acyclicity(&self.w)
    }
}

/// Binary DAG with derived ordering metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskRepr", into = "MaskRepr")]
pub struct CausalMask {
    v: usize,
    m: Vec<bool>,
    topo: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    depth: usize,
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    v: usize,
    /// `(parent, child)`
    edges: Vec<(usize, usize)>,
}

impl TryFrom<MaskRepr> for CausalMask {
    type Error = Error;
    fn try_from(r: MaskRepr) -> Result<Self> {
        CausalMask::from_edges(r.v, &r.edges)
    }
}

impl From<CausalMask> for MaskRepr {
    fn from(m: CausalMask) -> Self {
        MaskRepr {
            v: m.v,
            edges: m.edges(),
        }
    }
}

impl CausalMask {
    /// Validates acyclicity and computes the metadata.
    pub fn from_bools(v: usize, m: Vec<bool>) -> Result<Self> {
        if m.len() != v * v {
            return Err(dim_err("CausalMask", v * v, m.len()));
        }
        if (0..v).any(|i| m[i * v + i]) {
            return Err(Error::Cyclic {
                cycle: vec![(0..v).find(|&i| m[i * v + i]).unwrap_or(0)],
            });
        }
        let topo = kahn(v, &m)?;
        let parents: Vec<Vec<usize>> = (0..v)
            .map(|i| (0..v).filter(|&j| m[i * v + j]).collect())
            .collect();
        let children: Vec<Vec<usize>> = (0..v)
            .map(|j| (0..v).filter(|&i| m[i * v + j]).collect())
            .collect();
        let mut level = vec![0usize; v];
        for &node in &topo {
            for &p in &parents[node] {
                level[node] = level[node].max(level[p] + 1);
            }
        }
        let depth = level.iter().copied().max().unwrap_or(0);
        Ok(Self {
            v,
            m,
            topo,
            parents,
            children,
            depth,
        })
    }

    pub fn empty(v: usize) -> Self {
        Self::from_bools(v, vec![false; v * v])
            .unwrap_or_else(|_| unreachable!("empty graph is acyclic"))
    }

    /// From `(parent, child)` pairs.
    pub fn from_edges(v: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut m = vec![false; v * v];
        for &(from, to) in edges {
            for idx in [from, to] {
                if idx >= v {
                    return Err(Error::IndexOutOfRange {
                        index: idx,
                        size: v,
                    });
                }
            }
            m[to * v + from] = true;
        }
        Self::from_bools(v, m)
    }

    /// Nonzero entries of `t` are edges.
    pub fn from_matrix(t: &Tensor) -> Result<Self> {
        let (r, c) = t.dims();
        if r != c {
            return Err(dim_err("CausalMask::from_matrix", (r, r), (r, c)));
        }
        Self::from_bools(r, t.values().iter().map(|x| *x != 0.0).collect())
    }

    pub fn size(&self) -> usize {
        self.v
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.m[child * self.v + parent]
    }

    /// `(parent, child)` pairs, row-major over children.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let v = self.v;
        let mut out = Vec::new();
        for i in 0..v {
            for j in 0..v {
                if self.m[i * v + j] {
                    out.push((j, i));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.m.iter().filter(|b| **b).count()
    }

    /// 0/1 matrix.
    pub fn matrix(&self) -> Tensor {
        Tensor::from_fn(self.v, self.v, |i, j| {
            if self.m[i * self.v + j] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Row `node` of the 0/1 matrix.
    pub fn row(&self, node: usize) -> Vec<f64> {
        (0..self.v)
            .map(|j| if self.m[node * self.v + j] { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.parents[node].is_empty()
    }

    /// Longest directed path length, in edges.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// All nodes reachable from `node` along directed edges, excluding itself.
    pub fn descendants(&self, node: usize) -> Vec<usize> {
        let mut seen = vec![false; self.v];
        let mut stack = vec![node];
        while let Some(u) = stack.pop() {
            for &c in &self.children[u] {
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        (0..self.v).filter(|&i| seen[i]).collect()
    }

    /// `M·diag(x)`: row μ holds the values of μ's parents in their own
    /// columns and zeros elsewhere.
    pub fn parental_mask(&self, x: &[f64]) -> Result<Tensor> {
        if x.len() != self.v {
            return Err(dim_err("parental_mask", self.v, x.len()));
        }
        let v = self.v;
        Ok(Tensor::from_fn(v, v, |i, j| {
            if self.m[i * v + j] {
                x[j]
            } else {
                0.0
            }
        }))
    }
}

/// Binarizes `|W| / (|W| + ε)` at 0.5 and validates acyclicity.
pub fn mask_from_weights(w: &WeightedAdjacency, eps: f64) -> Result<CausalMask> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mask epsilon must be positive, got {eps}"
        )));
    }
    let m = w
        .matrix()
        .values()
        .iter()
        .map(|x| {
            let a = x.abs();
            a / (a + eps) >= 0.5
        })
        .collect();
    CausalMask::from_bools(w.size(), m)
}

fn kahn(v: usize, m: &[bool]) -> Result<Vec<usize>> {
    let mut indeg: Vec<usize> = (0..v)
        .map(|i| (0..v).filter(|&j| m[i * v + j]).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..v).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(v);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for c in 0..v {
            if m[c * v + u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
    }
    if order.len() == v {
        return Ok(order);
    }
    Err(Error::Cyclic {
        cycle: cycle_among(v, m, &indeg),
    })
}

/// Walks parent links among unresolved nodes until one repeats; every such
/// node has at least one unresolved parent, so the walk must close a cycle.
fn cycle_among(v: usize, m: &[bool], indeg: &[usize]) -> Vec<usize> {
    let Some(start) = (0..v).find(|&i| indeg[i] > 0) else {
        return Vec::new();
    };
    let mut pos = vec![usize::MAX; v];
    let mut walk = Vec::new();
    let mut u = start;
    while pos[u] == usize::MAX {
        pos[u] = walk.len();
        walk.push(u);
        u = (0..v).find(|&p| m[u * v + p] && indeg[p] > 0).unwrap_or(u);
    }
    let mut cycle = walk[pos[u]..].to_vec();
    cycle.reverse();
    cycle
}

/// Kahn ordering of a binary matrix (nonzero = edge), lowest ready index
/// first. Fails with a cycle witness listed in edge order.
pub fn topological_order(m: &Tensor) -> Result<Vec<usize>> {
    let (r, c) = m.dims();
    if r != c {
        return Err(dim_err("topological_order", (r, r), (r, c)));
    }
    let b: Vec<bool> = m.values().iter().map(|x| *x != 0.0).collect();
    kahn(r, &b)
}

/// A cycle of the binary pattern of `m`, if any, in edge order.
pub fn find_cycle(m: &Tensor) -> Option<Vec<usize>> {
    match topological_order(m) {
        Err(Error::Cyclic { cycle }) => Some(cycle),
        _ => None,
    }
}

/// `e^A` by scaling and squaring with a truncated Taylor series.
pub fn matrix_exp(a: &Tensor) -> Result<Tensor> {
    let (n, c) = a.dims();
    if n != c {
        return Err(dim_err("matrix_exp", (n, n), (n, c)));
    }
    if !a.is_finite() {
        return Err(Error::InvalidParameter(
            "matrix_exp of non-finite matrix".into(),
        ));
    }
    let norm = (0..n)
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        math::ceil(math::log2(norm / 0.5)) as u32
    } else {
        0
    };
    let scale = 1.0 / f64::from(2u32.pow(squarings.min(31)));
    let scale = if squarings > 31 {
        math::powf(0.5, f64::from(squarings))
    } else {
        scale
    };
    let b = a.map(|x| x * scale);

    let mut result = Tensor::identity(n);
    let mut term = Tensor::identity(n);
    for k in 1..=30 {
        term = term.matmul(&b)?;
        let inv_k = 1.0 / k as f64;
        term.values_mut().iter_mut().for_each(|x| *x *= inv_k);
        result
            .values_mut()
            .iter_mut()
            .zip(term.values())
            .for_each(|(r, t)| *r += t);
        if term.max_abs() <= 1e-20 * result.max_abs().max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result)
}

/// `h(W) = tr(e^{W∘W}) − V` and its gradient `(e^{W∘W})ᵀ ∘ 2W`.
pub fn acyclicity(w: &Tensor) -> Result<(f64, Tensor)> {
    let (v, c) = w.dims();
    if v != c {
        return Err(dim_err("acyclicity", (v, v), (v, c)));
    }
    let sq = w.map(|x| x * x);
    let e = matrix_exp(&sq)?;
    let trace: f64 = (0..v).map(|i| e.at(i, i)).sum();
    let h = trace - v as f64;
    let grad = Tensor::from_fn(v, v, |i, j| e.at(j, i) * 2.0 * w.at(i, j));
    Ok((h, grad))
}

/// Removal of all incoming edges of a node.
pub trait Mutilate: Sized {
    fn mutilate(&self, node: usize) -> Result<Self>;
}

impl Mutilate for WeightedAdjacency {
    fn mutilate(&self, node: usize) -> Result<Self> {
        let v = self.size();
        if node >= v {
            return Err(Error::IndexOutOfRange {
                index: node,
                size: v,
            });
        }
        let mut w = self.w.clone();
        w.row_mut(node).iter_mut().for_each(|x| *x = 0.0);
        Ok(Self { w })
    }
}

impl Mutilate for CausalMask {
    fn mutilate(&self, node: usize) -> Result<Self> {
        let v = self.v;
        if node >= v {
            return Err(Error::IndexOutOfRange {
                index: node,
                size: v,
            });
        }
        let mut m = self.m.clone();
        m[node * v..(node + 1) * v]
            .iter_mut()
            .for_each(|b| *b = false);
        Self::from_bools(v, m)
    }
}

/// Graph generator families.
///
/// Node indices: `X0 = 0, X1 = 1, X2 = 2`, confounders `S1..Sn = 3..n+2`.
/// Both confounded families share the spine `X2 → X1 → X0`.
/// * `GraphA(n)`: confounder chain `S1 → … → Sn` with `S1 → X2` and `Sn → X0`.
/// * `GraphB(n)`: independent confounders, each with `Si → X2` and `Si → X0`.
/// * `ErdosRenyi`: random DAG over `X0..X{V-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphFamily {
    GraphA { confounders: usize },
    GraphB { confounders: usize },
    ErdosRenyi { nodes: usize, edge_prob: f64 },
}

impl GraphFamily {
    pub fn size(&self) -> usize {
        match *self {
            Self::GraphA { confounders } | Self::GraphB { confounders } => 3 + confounders,
            Self::ErdosRenyi { nodes, .. } => nodes,
        }
    }

    pub fn node_names(&self) -> Vec<String> {
        match *self {
            Self::GraphA { confounders } | Self::GraphB { confounders } => (0..3)
                .map(|i| format!("X{i}"))
                .chain((1..=confounders).map(|i| format!("S{i}")))
                .collect(),
            Self::ErdosRenyi { nodes, .. } => (0..nodes).map(|i| format!("X{i}")).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ErdosRenyi { nodes, edge_prob } => {
                if nodes == 0 {
                    return Err(Error::InvalidParameter(
                        "Erdős–Rényi graph needs at least one node".into(),
                    ));
                }
                if !(0.0..=1.0).contains(&edge_prob) {
                    return Err(Error::InvalidParameter(format!(
                        "edge_prob {edge_prob} outside [0, 1]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Unweighted `(parent, child)` skeleton; ER draws from `rng`.
    fn skeleton(&self, rng: &mut rng::Rng) -> Vec<(usize, usize)> {
        match *self {
            Self::GraphA { confounders: n } => {
                let mut e = vec![(2, 1), (1, 0)];
                if n > 0 {
                    e.push((3, 2));
                    for i in 0..n - 1 {
                        e.push((3 + i, 4 + i));
                    }
                    e.push((n + 2, 0));
                }
                e
            }
            Self::GraphB { confounders: n } => {
                let mut e = vec![(2, 1), (1, 0)];
                for i in 0..n {
                    e.push((3 + i, 2));
                    e.push((3 + i, 0));
                }
                e
            }
            Self::ErdosRenyi { nodes, edge_prob } => {
                let mut order: Vec<usize> = (0..nodes).collect();
                order.shuffle(rng);
                let mut e = Vec::new();
                for a in 0..nodes {
                    for b in a + 1..nodes {
                        if rng.random::<f64>() < edge_prob {
                            e.push((order[a], order[b]));
                        }
                    }
                }
                e
            }
        }
    }
}

/// Family plus weight-magnitude range and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub family: GraphFamily,
    pub weight_low: f64,
    pub weight_high: f64,
    pub seed: u64,
}

impl GraphSpec {
    pub fn new(family: GraphFamily, seed: u64) -> Self {
        Self {
            family,
            weight_low: 0.5,
            weight_high: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if !(self.weight_low > 0.0
            && self.weight_low <= self.weight_high
            && self.weight_high.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "weight range must satisfy 0 < low <= high, got [{}, {}]",
                self.weight_low, self.weight_high
            )));
        }
        Ok(())
    }
}

/// Draws a weighted graph: magnitudes uniform in `[low, high]`, sign by a
/// fair coin.
pub fn gen_graph(spec: &GraphSpec) -> Result<WeightedAdjacency> {
    spec.validate()?;
    let mut r = rng::rng(spec.seed);
    let v = spec.family.size();
    let skeleton = spec.family.skeleton(&mut r);
    let edges: Vec<(usize, usize, f64)> = skeleton
        .into_iter()
        .map(|(from, to)| {
            let mag = if spec.weight_low == spec.weight_high {
                spec.weight_low
            } else {
                r.random_range(spec.weight_low..=spec.weight_high)
            };
            let w = if r.random::<bool>() { mag } else { -mag };
            (from, to, w)
        })
        .collect();
    WeightedAdjacency::from_edges(v, &edges)
}

/// Structural Hamming distance: per unordered node pair, 1 if the edge
/// state differs (missing, extra, or reversed), else 0.
pub fn shd(pred: &CausalMask, truth: &CausalMask) -> Result<usize> {
    if pred.size() != truth.size() {
        return Err(dim_err("shd", truth.size(), pred.size()));
    }
    let v = pred.size();
    let mut d = 0;
    for i in 0..v {
        for j in i + 1..v {
            let p = (pred.has_edge(i, j), pred.has_edge(j, i));
            let t = (truth.has_edge(i, j), truth.has_edge(j, i));
            if p != t {
                d += 1;
            }
        }
    }
    Ok(d)
}
