//! Dual graphs of semistable log curves over the standard log point, the
//! presentation of the truncated fundamental Lie algebra they determine, and
//! the decision procedure for triviality of the monodromy in `Out`.
//!
//! Symbols of a presentation:
//! - `a` symbols: the `2g` genus generators of a component,
//! - `m` symbols: loops around marked points,
//! - `e` symbols: residues at the two branches of each double point,
//! - `t` symbols: one per edge outside a spanning tree.
//!
//! Each component satisfies `Σ[a₂ᵢ₋₁, a₂ᵢ] − Σ m − Σ e = 0`; a tree edge
//! identifies `e₁ + e₂ = 0`, a cycle edge `e₁ + exp(ad t) e₂ = 0`.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use num_traits::One;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::exactlin::{int, Matrix, Scalar};
use crate::nilpotent_lie::{
    present, InnerVerdict, LieAutomorphism, LieElement, LieError, LieExpr, NilpotentLie,
};

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown vertex {0:?}")]
    UnknownVertex(String),
    #[error("unknown edge {0:?}")]
    UnknownEdge(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("truncation level must be at least 2")]
    LevelTooLow,
    #[error("graph has a loop; use the loop criterion")]
    HasLoop,
    #[error("no loop present")]
    NoLoop,
    #[error("not a line graph")]
    NotALine,
    #[error("invalid base point: {0}")]
    BadBase(String),
    #[error(transparent)]
    Lie(#[from] LieError),
}

fn de_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

fn de_ends<'de, D: Deserializer<'de>>(d: D) -> Result<[String; 2], D::Error> {
    #[derive(Deserialize)]
    struct W(#[serde(deserialize_with = "de_id")] String);
    let [a, b] = <[W; 2]>::deserialize(d)?;
    Ok([a.0, b.0])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vertex {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(default)]
    pub genus: usize,
    #[serde(default)]
    pub marked: usize,
}

/// An edge joins `ends[0]` (side 1) and `ends[1]` (side 2); equal ends make
/// a self-loop whose two branches are still distinguished by side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(deserialize_with = "de_ends")]
    pub ends: [String; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualGraph {
    pub vertices: Vec<Vertex>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseDatum {
    Good {
        #[serde(deserialize_with = "de_id")]
        vertex: String,
    },
    Marked {
        #[serde(deserialize_with = "de_id")]
        vertex: String,
        slope: u64,
    },
    Tangential {
        #[serde(deserialize_with = "de_id")]
        edge: String,
        side: u8,
    },
}

/// Graph file: the graph, an optional base point and truncation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphInput {
    #[serde(flatten)]
    pub graph: DualGraph,
    #[serde(default)]
    pub base: Option<BaseDatum>,
    #[serde(default)]
    pub q: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    MinimalSemistable,
}

impl DualGraph {
    pub fn vertex(&self, id: &str) -> Option<&Vertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    pub fn edge(&self, id: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Ids are unique, ends exist, and the graph is connected.
    pub fn check(&self) -> Result<(), CurveError> {
        let mut seen = BTreeSet::new();
        for v in &self.vertices {
            if !seen.insert(v.id.clone()) {
                return Err(CurveError::DuplicateId(v.id.clone()));
            }
        }
        if self.vertices.is_empty() {
            return Err(CurveError::Invalid("no vertices".into()));
        }
        let mut eseen = BTreeSet::new();
        for e in &self.edges {
            if !eseen.insert(e.id.clone()) {
                return Err(CurveError::DuplicateId(e.id.clone()));
            }
            for end in &e.ends {
                if !seen.contains(end) {
                    return Err(CurveError::UnknownVertex(end.clone()));
                }
            }
        }
        let mut reached = BTreeSet::new();
        let mut queue = VecDeque::from([self.vertices[0].id.clone()]);
        while let Some(v) = queue.pop_front() {
            if !reached.insert(v.clone()) {
                continue;
            }
            for e in &self.edges {
                for (a, b) in [(0, 1), (1, 0)] {
                    if e.ends[a] == v && !reached.contains(&e.ends[b]) {
                        queue.push_back(e.ends[b].clone());
                    }
                }
            }
        }
        if reached.len() != self.vertices.len() {
            return Err(CurveError::Disconnected);
        }
        Ok(())
    }

    /// Branches at `v`: `(edge index, side)`; a self-loop contributes two.
    fn branches(&self, v: &str) -> Vec<(usize, u8)> {
        let mut out = Vec::new();
        for (k, e) in self.edges.iter().enumerate() {
            if e.ends[0] == v {
                out.push((k, 1));
            }
            if e.ends[1] == v {
                out.push((k, 2));
            }
        }
        out
    }

    fn neighbours(&self, v: &str) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (k, e) in self.edges.iter().enumerate() {
            if e.ends[0] == v && e.ends[1] != v {
                out.push((k, e.ends[1].clone()));
            } else if e.ends[1] == v && e.ends[0] != v {
                out.push((k, e.ends[0].clone()));
            }
        }
        out
    }

    pub fn has_loop(&self) -> bool {
        self.find_cycle().is_some()
    }

    /// Edge indices of some cycle, preferring self-loops.
    fn find_cycle(&self) -> Option<Vec<usize>> {
        if let Some(k) = self.edges.iter().position(|e| e.ends[0] == e.ends[1]) {
            return Some(vec![k]);
        }
        let (tree, _) = self.spanning_tree();
        let extra = (0..self.edges.len()).find(|k| !tree.contains(k))?;
        let e = &self.edges[extra];
        let mut path = self.tree_path(&tree, &e.ends[0], &e.ends[1])?;
        path.push(extra);
        Some(path)
    }

    /// Spanning tree edges (BFS from the first vertex) and the BFS order.
    fn spanning_tree(&self) -> (BTreeSet<usize>, Vec<String>) {
        let mut tree = BTreeSet::new();
        let mut seen = BTreeSet::from([self.vertices[0].id.clone()]);
        let mut order = vec![self.vertices[0].id.clone()];
        let mut queue = VecDeque::from([self.vertices[0].id.clone()]);
        while let Some(v) = queue.pop_front() {
            for (k, w) in self.neighbours(&v) {
                if seen.insert(w.clone()) {
                    tree.insert(k);
                    order.push(w.clone());
                    queue.push_back(w);
                }
            }
        }
        (tree, order)
    }

    fn tree_path(&self, tree: &BTreeSet<usize>, from: &str, to: &str) -> Option<Vec<usize>> {
        let mut prev: HashMap<String, (usize, String)> = HashMap::new();
        let mut queue = VecDeque::from([from.to_string()]);
        let mut seen = BTreeSet::from([from.to_string()]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for (k, w) in self.neighbours(&v) {
                if tree.contains(&k) && seen.insert(w.clone()) {
                    prev.insert(w.clone(), (k, v.clone()));
                    queue.push_back(w);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = to.to_string();
        while cur != from {
            let (k, p) = prev.get(&cur)?.clone();
            path.push(k);
            cur = p;
        }
        path.reverse();
        Some(path)
    }

    /// Vertices of degree 1 (no self-loops counted).
    fn leaves(&self) -> Vec<String> {
        self.vertices
            .iter()
            .filter(|v| self.branches(&v.id).len() == 1)
            .map(|v| v.id.clone())
            .collect()
    }
}

/// Per-vertex stability check.
pub fn validate_graph(g: &DualGraph, kind: Stability) -> Result<(), CurveError> {
    g.check()?;
    if g.vertices.len() == 1 && g.edges.is_empty() {
        let v = &g.vertices[0];
        if v.genus == 1 && v.marked == 0 {
            return Err(CurveError::Invalid("smooth genus-1 curve without marked points".into()));
        }
    }
    for v in &g.vertices {
        if v.genus > 0 {
            continue;
        }
        let double_points = g.branches(&v.id).len();
        let contacts = g.neighbours(&v.id).len();
        let constrained = match kind {
            Stability::Stable => true,
            Stability::MinimalSemistable => contacts <= 1,
        };
        if constrained && double_points + v.marked < 3 {
            return Err(CurveError::Invalid(format!(
                "rational component {:?} has {} double points and {} marked points",
                v.id, double_points, v.marked
            )));
        }
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Label stem for a vertex or edge id: alphabetic ids are used as they are,
/// others get a prefix, and a trailing digit gets a separator.
fn stem(prefix: &str, id: &str) -> String {
    let s = sanitize(id);
    let base = if s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s
    } else {
        format!("{prefix}{s}")
    };
    if base.ends_with(|c: char| c.is_ascii_digit()) {
        format!("{base}_")
    } else {
        base
    }
}

/// Who a symbol belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Owner {
    Vertex(String),
    Edge(String),
}

/// Truncated presentation of the fundamental Lie algebra of a graph.
#[derive(Clone, Debug)]
pub struct CurvePresentation {
    pub lie: NilpotentLie,
    pub q: usize,
    pub symbols: Vec<String>,
    pub owners: BTreeMap<String, Owner>,
    pub relations: Vec<LieExpr>,
    /// Residue `e(edge, side)`; cycle edges carry side 2 transported along
    /// the cycle generator, so `e(edge, 1) + e(edge, 2) = 0` always holds.
    pub residues: BTreeMap<(String, u8), LieElement>,
    /// Image of the double point's generator through each side:
    /// `e(edge, 1)` and `−e(edge, 2)`. The two agree.
    pub gluing: BTreeMap<(String, u8), LieElement>,
    /// Generator indices of `lie` owned by each vertex.
    pub blocks: BTreeMap<String, Vec<usize>>,
    pub symbol_images: BTreeMap<String, LieElement>,
}

fn genus_symbol(v: &str, i: usize) -> String {
    format!("{}{}", stem("x", v), i)
}

fn marked_symbol(v: &str, j: usize) -> String {
    format!("{}m{}", stem("x", v), j)
}

fn residue_symbol(e: &str, side: u8) -> String {
    format!("{}s{}", stem("e", e), side)
}

fn cycle_symbol(e: &str) -> String {
    format!("t{}", stem("", e))
}

pub fn presentation(g: &DualGraph, q: usize) -> Result<CurvePresentation, CurveError> {
    if q < 2 {
        return Err(CurveError::LevelTooLow);
    }
    g.check()?;
    let (tree, _) = g.spanning_tree();
    let mut symbols = Vec::new();
    let mut owners = BTreeMap::new();
    for v in &g.vertices {
        for i in 1..=2 * v.genus {
            let s = genus_symbol(&v.id, i);
            owners.insert(s.clone(), Owner::Vertex(v.id.clone()));
            symbols.push(s);
        }
    }
    for v in &g.vertices {
        for j in 1..=v.marked {
            let s = marked_symbol(&v.id, j);
            owners.insert(s.clone(), Owner::Vertex(v.id.clone()));
            symbols.push(s);
        }
    }
    let cycle_edges: Vec<usize> = (0..g.edges.len()).filter(|k| !tree.contains(k)).collect();
    for &k in &cycle_edges {
        let s = cycle_symbol(&g.edges[k].id);
        owners.insert(s.clone(), Owner::Edge(g.edges[k].id.clone()));
        symbols.push(s);
    }
    for e in &g.edges {
        for side in [1u8, 2] {
            let s = residue_symbol(&e.id, side);
            owners.insert(s.clone(), Owner::Vertex(e.ends[side as usize - 1].clone()));
            symbols.push(s);
        }
    }
    let unique: BTreeSet<&String> = symbols.iter().collect();
    if unique.len() != symbols.len() {
        return Err(CurveError::Invalid("ids produce clashing symbol names".into()));
    }
    let one = Scalar::one();
    let mut relations = Vec::new();
    for v in &g.vertices {
        let mut terms: Vec<(Scalar, LieExpr)> = (1..=v.genus)
            .map(|i| {
                (
                    one.clone(),
                    LieExpr::bracket(
                        LieExpr::gen(&genus_symbol(&v.id, 2 * i - 1)),
                        LieExpr::gen(&genus_symbol(&v.id, 2 * i)),
                    ),
                )
            })
            .collect();
        for j in 1..=v.marked {
            terms.push((-one.clone(), LieExpr::gen(&marked_symbol(&v.id, j))));
        }
        for (k, side) in g.branches(&v.id) {
            terms.push((-one.clone(), LieExpr::gen(&residue_symbol(&g.edges[k].id, side))));
        }
        if !terms.is_empty() {
            relations.push(LieExpr::sum(terms));
        }
    }
    let transported = |k: usize| -> LieExpr {
        let e = &g.edges[k].id;
        let mut terms = vec![(one.clone(), LieExpr::gen(&residue_symbol(e, 2)))];
        let mut cur = LieExpr::gen(&residue_symbol(e, 2));
        let mut fact = Scalar::one();
        for n in 1..q {
            cur = LieExpr::bracket(LieExpr::gen(&cycle_symbol(e)), cur);
            fact /= int(n as i64);
            terms.push((fact.clone(), cur.clone()));
        }
        LieExpr::sum(terms)
    };
    for (k, e) in g.edges.iter().enumerate() {
        let second = if tree.contains(&k) {
            LieExpr::gen(&residue_symbol(&e.id, 2))
        } else {
            transported(k)
        };
        relations.push(LieExpr::sum(vec![
            (one.clone(), LieExpr::gen(&residue_symbol(&e.id, 1))),
            (one.clone(), second),
        ]));
    }
    let p = present(&symbols, &relations, q)?;
    let lie = p.lie;
    let images = p.images;
    let eval = |x: &LieExpr| -> Result<LieElement, LieError> {
        x.eval(
            &|name| images.get(name).cloned().ok_or_else(|| LieError::UnknownGenerator(name.to_string())),
            &|a, b| lie.bracket(a, b),
        )
    };
    let mut residues = BTreeMap::new();
    let mut gluing = BTreeMap::new();
    for (k, e) in g.edges.iter().enumerate() {
        let first = images[&residue_symbol(&e.id, 1)].clone();
        let second = if tree.contains(&k) {
            images[&residue_symbol(&e.id, 2)].clone()
        } else {
            eval(&transported(k))?
        };
        gluing.insert((e.id.clone(), 1), first.clone());
        gluing.insert((e.id.clone(), 2), second.neg());
        residues.insert((e.id.clone(), 1), first);
        residues.insert((e.id.clone(), 2), second);
    }
    let mut blocks: BTreeMap<String, Vec<usize>> = g.vertices.iter().map(|v| (v.id.clone(), Vec::new())).collect();
    for (i, name) in lie.generators().iter().enumerate() {
        if let Some(Owner::Vertex(v)) = owners.get(name) {
            blocks.get_mut(v).expect("owner is a vertex").push(i);
        }
    }
    Ok(CurvePresentation {
        q,
        symbols,
        owners,
        relations,
        residues,
        gluing,
        blocks,
        symbol_images: images,
        lie,
    })
}

/// A line instance: `path[0]` is the base-side terminal, `edges[i]` joins
/// `path[i]` and `path[i+1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineInstance {
    pub graph: DualGraph,
    pub path: Vec<String>,
    pub edges: Vec<String>,
    pub discarded: Vec<String>,
}

/// Reduces a tree to line instances: the line between two terminal
/// components, with off-line branches replaced by marked points, split at
/// interior components of positive genus, and interior marked points
/// erased.
pub fn reduce(g: &DualGraph, prefer: Option<&str>) -> Result<(Vec<LineInstance>, Vec<String>), CurveError> {
    g.check()?;
    let mut trace = Vec::new();
    if g.edges.is_empty() {
        trace.push("smooth: nothing to reduce".to_string());
        return Ok((Vec::new(), trace));
    }
    if g.has_loop() {
        return Err(CurveError::HasLoop);
    }
    let leaves = g.leaves();
    let start = match prefer {
        Some(v) if leaves.iter().any(|l| l == v) => v.to_string(),
        _ => leaves[0].clone(),
    };
    let end = leaves.iter().find(|l| **l != start).expect("a tree with an edge has two leaves").clone();
    let all: BTreeSet<usize> = (0..g.edges.len()).collect();
    let line_edges = g.tree_path(&all, &start, &end).expect("tree is connected");
    let mut path = vec![start.clone()];
    for &k in &line_edges {
        let e = &g.edges[k];
        let last = path.last().unwrap().clone();
        path.push(if e.ends[0] == last { e.ends[1].clone() } else { e.ends[0].clone() });
    }
    trace.push(format!("line {} between terminals {start:?} and {end:?}", path.join("-")));
    let on_line: BTreeSet<&String> = path.iter().collect();
    let line_set: BTreeSet<usize> = line_edges.iter().copied().collect();
    // Marked points gained from discarded branches.
    let mut gained: BTreeMap<String, usize> = BTreeMap::new();
    let mut discarded = Vec::new();
    for (k, e) in g.edges.iter().enumerate() {
        if line_set.contains(&k) {
            continue;
        }
        for end in &e.ends {
            if on_line.contains(end) {
                *gained.entry(end.clone()).or_default() += 1;
                trace.push(format!("discard branch at {end:?} through edge {:?}", e.id));
            }
        }
        discarded.push(e.id.clone());
    }
    let mut cuts = vec![0];
    for (i, v) in path.iter().enumerate().skip(1).take(path.len().saturating_sub(2)) {
        if g.vertex(v).unwrap().genus > 0 {
            trace.push(format!("split at interior component {v:?} of positive genus"));
            cuts.push(i);
        }
    }
    cuts.push(path.len() - 1);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut vertices = Vec::new();
        for (i, id) in path.iter().enumerate().take(hi + 1).skip(lo) {
            let v = g.vertex(id).unwrap();
            let terminal = i == lo || i == hi;
            let mut marked = v.marked + gained.get(id).copied().unwrap_or(0);
            // Line edges cut away at a split become marked points too.
            if terminal && i != 0 && i != path.len() - 1 {
                marked += 1;
            }
            if !terminal {
                if marked > 0 {
                    trace.push(format!("erase {marked} marked points on interior component {id:?}"));
                }
                marked = 0;
            }
            vertices.push(Vertex {
                id: id.clone(),
                genus: v.genus,
                marked,
            });
        }
        let edges: Vec<Edge> = line_edges[lo..hi].iter().map(|&k| g.edges[k].clone()).collect();
        out.push(LineInstance {
            path: path[lo..=hi].to_vec(),
            edges: edges.iter().map(|e| e.id.clone()).collect(),
            graph: DualGraph { vertices, edges },
            discarded: discarded.clone(),
        });
    }
    Ok((out, trace))
}

/// Monodromy of a line instance with tangential base on the first edge at
/// the `path[0]` side: identity on the base terminal's generators, and
/// `exp(−k·ad e₀)` on generators owned by the component `k` edges away.
pub fn monodromy_automorphism(p: &CurvePresentation, line: &LineInstance) -> Result<LieAutomorphism, CurveError> {
    if line.edges.len() + 1 != line.path.len() {
        return Err(CurveError::NotALine);
    }
    if line.edges.is_empty() {
        return Ok(LieAutomorphism::identity(&p.lie));
    }
    let first = line.graph.edge(&line.edges[0]).ok_or(CurveError::NotALine)?;
    let side = if first.ends[0] == line.path[0] { 1 } else { 2 };
    let e0 = p.residues[&(first.id.clone(), side)].clone();
    let position: HashMap<&String, usize> = line.path.iter().enumerate().map(|(i, v)| (v, i)).collect();
    let mut images = Vec::new();
    for (i, name) in p.lie.generators().iter().enumerate() {
        let x = p.lie.generator(i);
        let k = match p.owners.get(name) {
            Some(Owner::Vertex(v)) => *position.get(v).ok_or(CurveError::NotALine)?,
            _ => return Err(CurveError::NotALine),
        };
        images.push(if k == 0 { x } else { p.lie.ad_exp(&e0, &int(k as i64), &x) });
    }
    Ok(LieAutomorphism::new(&p.lie, images)?)
}

/// A vector space with commuting nilpotent endomorphisms.
#[derive(Clone, Debug, PartialEq)]
pub struct NilpotentPair {
    pub dim: usize,
    pub nilpotents: Vec<Matrix>,
}

impl NilpotentPair {
    pub fn new(dim: usize, nilpotents: Vec<Matrix>) -> Result<NilpotentPair, CurveError> {
        for n in &nilpotents {
            if (n.nrows(), n.ncols()) != (dim, dim) {
                return Err(CurveError::Invalid("endomorphism has the wrong size".into()));
            }
            let mut pow = n.clone();
            for _ in 1..dim.max(1) {
                pow = pow.mul(n);
            }
            if dim > 0 && !pow.is_zero() {
                return Err(CurveError::Invalid("endomorphism is not nilpotent".into()));
            }
        }
        for a in &nilpotents {
            for b in &nilpotents {
                if a.mul(b) != b.mul(a) {
                    return Err(CurveError::Invalid("endomorphisms do not commute".into()));
                }
            }
        }
        Ok(NilpotentPair { dim, nilpotents })
    }
}

/// `exp(N)` of a nilpotent matrix.
pub fn nilpotent_exp(n: &Matrix) -> Matrix {
    let dim = n.nrows();
    let mut acc = Matrix::identity(dim);
    let mut term = Matrix::identity(dim);
    for k in 1..=dim {
        term = term.mul(n).scale(&(Scalar::one() / int(k as i64)));
        acc = acc.add(&term);
    }
    acc
}

/// Upper-corner entry of the product of `exp(N₁ − N₂)` over the edges of a
/// cycle, on the rank-2 representation with residues `+1` and `−1` at the
/// two branches of every double point. Equals `2n` for a cycle of length `n`.
pub fn loop_check(g: &DualGraph, cycle: Option<&[String]>) -> Result<Scalar, CurveError> {
    g.check()?;
    let edges: Vec<usize> = match cycle {
        Some(ids) => {
            let ks: Vec<usize> = ids
                .iter()
                .map(|id| g.edges.iter().position(|e| &e.id == id).ok_or_else(|| CurveError::UnknownEdge(id.clone())))
                .collect::<Result<_, _>>()?;
            if !is_cycle(g, &ks) {
                return Err(CurveError::NoLoop);
            }
            ks
        }
        None => g.find_cycle().ok_or(CurveError::NoLoop)?,
    };
    let mut upper = Matrix::zeros(2, 2);
    upper.set(0, 1, Scalar::one());
    let mut defect = Matrix::identity(2);
    for _ in &edges {
        let pair = NilpotentPair::new(2, vec![upper.clone(), upper.scale(&-Scalar::one())])?;
        let eta = nilpotent_exp(&pair.nilpotents[0].sub(&pair.nilpotents[1]));
        defect = eta.mul(&defect);
    }
    Ok(defect.get(0, 1).clone())
}

fn is_cycle(g: &DualGraph, ks: &[usize]) -> bool {
    if ks.is_empty() {
        return false;
    }
    let mut degree: BTreeMap<&String, usize> = BTreeMap::new();
    for &k in ks {
        for end in &g.edges[k].ends {
            *degree.entry(end).or_default() += 1;
        }
    }
    let distinct: BTreeSet<usize> = ks.iter().copied().collect();
    distinct.len() == ks.len() && degree.values().all(|&d| d == 2)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TrivialInAut,
    InnerTrivialInOut,
    TrivialUpToFiltration { q: usize },
    NontrivialInOut,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::TrivialInAut => write!(f, "trivial in Aut"),
            Verdict::InnerTrivialInOut => write!(f, "inner, hence trivial in Out"),
            Verdict::TrivialUpToFiltration { q } => write!(f, "trivial up to Fil^{}", q + 1),
            Verdict::NontrivialInOut => write!(f, "NONTRIVIAL in Out"),
            Verdict::Undecided => write!(f, "undecided"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    Identity,
    Inner { element: BTreeMap<String, String> },
    Obstruction {
        degree: usize,
        forced_vanishing: usize,
        generator: Option<String>,
        residual: BTreeMap<String, String>,
    },
    LoopPairing { length: usize, value: String },
    Reason { text: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceReport {
    pub path: Vec<String>,
    pub generators: usize,
    pub gr_dims: Vec<usize>,
    pub verdict: Verdict,
    pub witness: Witness,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonodromyReport {
    pub smooth: bool,
    pub q: usize,
    pub trace: Vec<String>,
    pub instances: Vec<InstanceReport>,
    pub verdict: Verdict,
    pub witness: Witness,
}

fn inner_witness(lie: &NilpotentLie, d: &LieElement) -> Witness {
    Witness::Inner {
        element: lie.element_to_json(d),
    }
}

fn verdict_of(lie: &NilpotentLie, phi: &LieAutomorphism) -> (Verdict, Witness) {
    match lie.is_inner(phi) {
        Ok(InnerVerdict::Inner { witness, .. }) => {
            if witness.is_zero() && *phi == LieAutomorphism::identity(lie) {
                (Verdict::TrivialUpToFiltration { q: lie.q() }, Witness::Identity)
            } else {
                (Verdict::TrivialUpToFiltration { q: lie.q() }, inner_witness(lie, &witness))
            }
        }
        Ok(InnerVerdict::NotInner(ob)) => {
            let residual = ob
                .generator
                .map(|i| lie.element_to_json(&ob.residuals[i]))
                .unwrap_or_default();
            (
                Verdict::NontrivialInOut,
                Witness::Obstruction {
                    degree: ob.degree,
                    forced_vanishing: ob.forced_vanishing(),
                    generator: ob.generator.map(|i| lie.generators()[i].clone()),
                    residual,
                },
            )
        }
        Err(e) => (Verdict::Undecided, Witness::Reason { text: e.to_string() }),
    }
}

/// Decides triviality of the monodromy in `Out` at truncation `q`.
pub fn analyze(g: &DualGraph, base: &BaseDatum, q: usize) -> Result<MonodromyReport, CurveError> {
    validate_graph(g, Stability::MinimalSemistable)?;
    check_base(g, base)?;
    if q < 2 {
        return Err(CurveError::LevelTooLow);
    }
    let mut trace = Vec::new();
    if g.edges.is_empty() {
        let p = presentation(g, q)?;
        let v = &g.vertices[0];
        return Ok(match base {
            BaseDatum::Good { .. } | BaseDatum::Tangential { .. } => {
                trace.push("smooth, good base: monodromy is the identity".into());
                MonodromyReport {
                    smooth: true,
                    q,
                    trace,
                    instances: Vec::new(),
                    verdict: Verdict::TrivialInAut,
                    witness: Witness::Identity,
                }
            }
            BaseDatum::Marked { slope, .. } => {
                let m = p.symbol_images[&marked_symbol(&v.id, 1)].scale(&int(*slope as i64));
                let phi = LieAutomorphism::inner(&p.lie, &m)?;
                trace.push(format!("smooth, base at a marked point with slope {slope}: conjugation by the loop"));
                let (verdict, witness) = match p.lie.is_inner(&phi) {
                    Ok(InnerVerdict::Inner { witness, .. }) => (Verdict::InnerTrivialInOut, inner_witness(&p.lie, &witness)),
                    _ => (Verdict::Undecided, Witness::Reason { text: "conjugation not recognised".into() }),
                };
                MonodromyReport {
                    smooth: true,
                    q,
                    trace,
                    instances: Vec::new(),
                    verdict,
                    witness,
                }
            }
        });
    }
    if let Some(cycle) = g.find_cycle() {
        let ids: Vec<String> = cycle.iter().map(|&k| g.edges[k].id.clone()).collect();
        let value = loop_check(g, Some(&ids))?;
        trace.push(format!("loop through edges {}", ids.join(", ")));
        return Ok(MonodromyReport {
            smooth: false,
            q,
            trace,
            instances: Vec::new(),
            verdict: Verdict::NontrivialInOut,
            witness: Witness::LoopPairing {
                length: ids.len(),
                value: crate::exactlin::format_scalar(&value),
            },
        });
    }
    let prefer = match base {
        BaseDatum::Good { vertex } | BaseDatum::Marked { vertex, .. } => Some(vertex.as_str()),
        BaseDatum::Tangential { edge, side } => g.edge(edge).map(|e| e.ends[*side as usize - 1].as_str()),
    };
    let (lines, mut steps) = reduce(g, prefer)?;
    trace.append(&mut steps);
    trace.push("base transferred to the tangential point of the first edge of each instance".into());
    let instances: Vec<InstanceReport> = lines
        .par_iter()
        .map(|line| -> Result<InstanceReport, CurveError> {
            let p = presentation(&line.graph, q)?;
            let phi = monodromy_automorphism(&p, line)?;
            let (verdict, witness) = verdict_of(&p.lie, &phi);
            Ok(InstanceReport {
                path: line.path.clone(),
                generators: p.lie.generators().len(),
                gr_dims: p.lie.gr_dims(),
                verdict,
                witness,
            })
        })
        .collect::<Result<_, _>>()?;
    let (verdict, witness) = if let Some(bad) = instances.iter().find(|r| r.verdict == Verdict::NontrivialInOut) {
        (Verdict::NontrivialInOut, bad.witness.clone())
    } else if let Some(u) = instances.iter().find(|r| r.verdict == Verdict::Undecided) {
        (Verdict::Undecided, u.witness.clone())
    } else {
        (Verdict::TrivialUpToFiltration { q }, Witness::Identity)
    };
    Ok(MonodromyReport {
        smooth: false,
        q,
        trace,
        instances,
        verdict,
        witness,
    })
}

fn check_base(g: &DualGraph, base: &BaseDatum) -> Result<(), CurveError> {
    match base {
        BaseDatum::Good { vertex } => {
            g.vertex(vertex).ok_or_else(|| CurveError::UnknownVertex(vertex.clone()))?;
        }
        BaseDatum::Marked { vertex, slope } => {
            let v = g.vertex(vertex).ok_or_else(|| CurveError::UnknownVertex(vertex.clone()))?;
            if v.marked == 0 {
                return Err(CurveError::BadBase(format!("vertex {vertex:?} has no marked point")));
            }
            if *slope == 0 {
                return Err(CurveError::BadBase("slope must be at least 1".into()));
            }
        }
        BaseDatum::Tangential { edge, side } => {
            g.edge(edge).ok_or_else(|| CurveError::UnknownEdge(edge.clone()))?;
            if !matches!(side, 1 | 2) {
                return Err(CurveError::BadBase("side must be 1 or 2".into()));
            }
        }
    }
    Ok(())
}

/// Line of `n` edges between terminals `(g_y, r_y)` and `(g_z, r_z)`, with
/// rational unmarked components in between. Vertices are `y`, `c1…`, `z`.
pub fn line_graph(y: (usize, usize), z: (usize, usize), n: usize) -> DualGraph {
    let mut ids = vec!["y".to_string()];
    ids.extend((1..n).map(|i| format!("c{i}")));
    ids.push("z".to_string());
    let vertices = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let (genus, marked) = if i == 0 {
                y
            } else if i == n {
                z
            } else {
                (0, 0)
            };
            Vertex {
                id: id.clone(),
                genus,
                marked,
            }
        })
        .collect();
    let edges = (0..n)
        .map(|i| Edge {
            id: format!("n{}", i + 1),
            ends: [ids[i].clone(), ids[i + 1].clone()],
        })
        .collect();
    DualGraph { vertices, edges }
}
