//! Finite graded-commutative differential graded algebras over Q with a degree
//! cap, an optional weight grading, and the stock curve and interval models.

use std::collections::BTreeMap;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactlin::{
    axpy, cohomology, dense_from_sparse, format_scalar, int, parse_scalar, scaled, sparse_from_dense,
    Cohomology, Complex, LinError, Matrix, Scalar, SparseVec,
};

#[derive(Debug, Error)]
pub enum CdgaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Lin(#[from] LinError),
    #[error("json: {0}")]
    Json(String),
}

/// Structure maps of a cdga with every basis product and differential
/// stored as a sparse vector.
///
/// Degrees run over `0..=cap`. Products landing above the cap, or above the
/// weight cap when one is set, are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdga {
    cap: usize,
    labels: Vec<Vec<String>>,
    weights: Vec<Vec<u32>>,
    weight_cap: Option<u32>,
    diff: Vec<Vec<SparseVec>>,
    mult: BTreeMap<(usize, usize), Vec<Vec<SparseVec>>>,
    unit: SparseVec,
    augmentation: SparseVec,
}

/// First failing identity found by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Shape(String),
    WeightNotPreserved { degree: usize, index: usize },
    DSquared { degree: usize, index: usize },
    Commutativity { degrees: (usize, usize), indices: (usize, usize) },
    Associativity { degrees: (usize, usize, usize), indices: (usize, usize, usize) },
    Leibniz { degrees: (usize, usize), indices: (usize, usize) },
    Unit { degree: usize, index: usize },
    Augmentation(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub violation: Option<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violation.is_none()
    }
}

pub type DiffFn<'a> = dyn Fn(usize, usize) -> SparseVec + 'a;
pub type MulFn<'a> = dyn Fn(usize, usize, usize, usize) -> SparseVec + 'a;

impl Cdga {
    /// Assembles an algebra from closures giving `d(e^p_i)` and
    /// `e^p_i · e^q_j`; the unit is the first degree-0 basis vector and the
    /// augmentation is its dual coordinate unless overridden later.
    pub fn build(
        cap: usize,
        labels: Vec<Vec<String>>,
        weights: Vec<Vec<u32>>,
        weight_cap: Option<u32>,
        d: &DiffFn<'_>,
        mul: &MulFn<'_>,
    ) -> Result<Cdga, CdgaError> {
        let mut labels = labels;
        let mut weights = weights;
        labels.resize(cap + 1, Vec::new());
        weights.resize(cap + 1, Vec::new());
        for p in 0..=cap {
            if labels[p].len() != weights[p].len() {
                return Err(CdgaError::Shape(format!("degree {p}: labels and weights differ in length")));
            }
        }
        let dims: Vec<usize> = labels.iter().map(Vec::len).collect();
        let diff = (0..=cap)
            .map(|p| {
                (0..dims[p])
                    .map(|i| if p < cap { d(p, i) } else { SparseVec::new() })
                    .collect()
            })
            .collect();
        let mut mult = BTreeMap::new();
        for p in 0..=cap {
            for q in 0..=cap - p {
                let table = (0..dims[p])
                    .map(|i| {
                        (0..dims[q])
                            .map(|j| {
                                let over = weight_cap.is_some_and(|c| weights[p][i] + weights[q][j] > c);
                                if over { SparseVec::new() } else { mul(p, i, q, j) }
                            })
                            .collect()
                    })
                    .collect();
                mult.insert((p, q), table);
            }
        }
        let unit: SparseVec = if dims[0] > 0 { [(0, Scalar::one())].into() } else { SparseVec::new() };
        let cdga = Cdga {
            cap,
            labels,
            weights,
            weight_cap,
            diff,
            mult,
            augmentation: unit.clone(),
            unit,
        };
        cdga.check_shapes()?;
        Ok(cdga)
    }

    pub fn with_augmentation(mut self, augmentation: SparseVec) -> Self {
        self.augmentation = augmentation;
        self
    }

    pub fn with_unit(mut self, unit: SparseVec) -> Self {
        self.unit = unit;
        self
    }

    fn check_shapes(&self) -> Result<(), CdgaError> {
        let bad = |s: String| Err(CdgaError::Shape(s));
        for p in 0..=self.cap {
            for (i, v) in self.diff[p].iter().enumerate() {
                if v.keys().any(|&k| p == self.cap || k >= self.dim(p + 1)) {
                    return bad(format!("d(e{p}_{i}) leaves degree {}", p + 1));
                }
            }
        }
        for (&(p, q), table) in &self.mult {
            for row in table {
                for v in row {
                    if v.keys().any(|&k| k >= self.dim(p + q)) {
                        return bad(format!("product of degrees {p},{q} out of range"));
                    }
                }
            }
        }
        if self.unit.keys().chain(self.augmentation.keys()).any(|&k| k >= self.dim(0)) {
            return bad("unit or augmentation out of range".into());
        }
        Ok(())
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn weight_cap(&self) -> Option<u32> {
        self.weight_cap
    }

    pub fn dim(&self, p: usize) -> usize {
        self.labels.get(p).map_or(0, Vec::len)
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..=self.cap).map(|p| self.dim(p)).collect()
    }

    pub fn labels(&self, p: usize) -> &[String] {
        self.labels.get(p).map_or(&[], Vec::as_slice)
    }

    pub fn weight(&self, p: usize, i: usize) -> u32 {
        self.weights[p][i]
    }

    pub fn weights(&self, p: usize) -> &[u32] {
        self.weights.get(p).map_or(&[], Vec::as_slice)
    }

    /// Indices in degree `p` of the given weight, in basis order.
    pub fn weight_block(&self, p: usize, w: u32) -> Vec<usize> {
        (0..self.dim(p)).filter(|&i| self.weights[p][i] == w).collect()
    }

    pub fn weights_present(&self, p: usize) -> Vec<u32> {
        let mut ws: Vec<u32> = self.weights(p).to_vec();
        ws.sort_unstable();
        ws.dedup();
        ws
    }

    pub fn unit(&self) -> &SparseVec {
        &self.unit
    }

    pub fn augmentation(&self) -> &SparseVec {
        &self.augmentation
    }

    pub fn d_basis(&self, p: usize, i: usize) -> &SparseVec {
        &self.diff[p][i]
    }

    pub fn d(&self, p: usize, x: &SparseVec) -> SparseVec {
        let mut out = SparseVec::new();
        if p >= self.cap {
            return out;
        }
        for (&i, c) in x {
            axpy(&mut out, c, &self.diff[p][i]);
        }
        out
    }

    pub fn mul_basis(&self, p: usize, i: usize, q: usize, j: usize) -> SparseVec {
        match self.mult.get(&(p, q)) {
            Some(t) => t[i][j].clone(),
            None => SparseVec::new(),
        }
    }

    pub fn mul(&self, p: usize, x: &SparseVec, q: usize, y: &SparseVec) -> SparseVec {
        let mut out = SparseVec::new();
        let Some(t) = self.mult.get(&(p, q)) else { return out };
        for (&i, a) in x {
            for (&j, b) in y {
                axpy(&mut out, &(a * b), &t[i][j]);
            }
        }
        out
    }

    /// Matrix of `d: A^p → A^{p+1}`.
    pub fn diff_matrix(&self, p: usize) -> Matrix {
        Matrix::from_sparse_columns(self.dim(p + 1), &self.diff.get(p).cloned().unwrap_or_default())
    }

    /// Matrix of `d` restricted to the weight-`w` blocks of degrees `p`, `p+1`.
    pub fn diff_block(&self, p: usize, w: u32) -> Matrix {
        let src = self.weight_block(p, w);
        let tgt = self.weight_block(p + 1, w);
        let pos: BTreeMap<usize, usize> = tgt.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut m = Matrix::zeros(tgt.len(), src.len());
        for (c, &i) in src.iter().enumerate() {
            if p < self.cap {
                for (k, x) in &self.diff[p][i] {
                    m.set(pos[k], c, x.clone());
                }
            }
        }
        m
    }

    pub fn complex(&self) -> Complex {
        let dims = self.dims();
        let diffs = (0..self.cap).map(|p| self.diff_matrix(p)).collect();
        Complex::new(0, dims, diffs).expect("shapes checked at construction")
    }

    /// Cochain complex of the weight-`w` part.
    pub fn weight_complex(&self, w: u32) -> Complex {
        let dims = (0..=self.cap).map(|p| self.weight_block(p, w).len()).collect();
        let diffs = (0..self.cap).map(|p| self.diff_block(p, w)).collect();
        Complex::new(0, dims, diffs).expect("blocks are consistent")
    }

    pub fn cohomology(&self, p: usize) -> Result<Cohomology, CdgaError> {
        Ok(cohomology(&self.complex(), p as i32)?)
    }

    pub fn betti(&self) -> Result<Vec<usize>, CdgaError> {
        (0..=self.cap).map(|p| Ok(self.cohomology(p)?.dim)).collect()
    }

    fn within_weight(&self, total: u32) -> bool {
        self.weight_cap.is_none_or(|c| total <= c)
    }
}

fn sign(k: usize) -> Scalar {
    if k.is_multiple_of(2) { Scalar::one() } else { -Scalar::one() }
}

/// Checks shape, weight homogeneity, `d² = 0`, graded commutativity,
/// associativity, Leibniz, unit and augmentation laws on basis elements,
/// skipping identities that involve degrees above the cap.
pub fn validate(a: &Cdga) -> ValidationReport {
    ValidationReport {
        violation: first_violation(a),
    }
}

fn first_violation(a: &Cdga) -> Option<Violation> {
    if let Err(e) = a.check_shapes() {
        return Some(Violation::Shape(e.to_string()));
    }
    let cap = a.cap;
    let basis = |i: usize| -> SparseVec { [(i, Scalar::one())].into() };
    for p in 0..cap {
        for i in 0..a.dim(p) {
            if a.diff[p][i].keys().any(|&k| a.weights[p + 1][k] != a.weights[p][i]) {
                return Some(Violation::WeightNotPreserved { degree: p, index: i });
            }
        }
    }
    for (&(p, q), t) in &a.mult {
        for i in 0..a.dim(p) {
            for j in 0..a.dim(q) {
                let w = a.weights[p][i] + a.weights[q][j];
                if t[i][j].keys().any(|&k| a.weights[p + q][k] != w) {
                    return Some(Violation::WeightNotPreserved { degree: p + q, index: i });
                }
            }
        }
    }
    for p in 0..cap.saturating_sub(1) {
        for i in 0..a.dim(p) {
            if !a.d(p + 1, &a.diff[p][i]).is_empty() {
                return Some(Violation::DSquared { degree: p, index: i });
            }
        }
    }
    for p in 0..=cap {
        for q in 0..=cap - p {
            for i in 0..a.dim(p) {
                for j in 0..a.dim(q) {
                    let xy = a.mul_basis(p, i, q, j);
                    let yx = scaled(&a.mul_basis(q, j, p, i), &sign(p * q));
                    if xy != yx {
                        return Some(Violation::Commutativity { degrees: (p, q), indices: (i, j) });
                    }
                }
            }
        }
    }
    for p in 0..=cap {
        for q in 0..=cap - p {
            for r in 0..=cap - p - q {
                for i in 0..a.dim(p) {
                    for j in 0..a.dim(q) {
                        for k in 0..a.dim(r) {
                            let lhs = a.mul(p + q, &a.mul_basis(p, i, q, j), r, &basis(k));
                            let rhs = a.mul(p, &basis(i), q + r, &a.mul_basis(q, j, r, k));
                            if lhs != rhs {
                                return Some(Violation::Associativity {
                                    degrees: (p, q, r),
                                    indices: (i, j, k),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    for p in 0..=cap {
        for q in 0..=cap - p {
            if p + q + 1 > cap {
                continue;
            }
            for i in 0..a.dim(p) {
                for j in 0..a.dim(q) {
                    if !a.within_weight(a.weights[p][i] + a.weights[q][j]) {
                        continue;
                    }
                    let lhs = a.d(p + q, &a.mul_basis(p, i, q, j));
                    let mut rhs = a.mul(p + 1, &a.diff[p][i], q, &basis(j));
                    let second = a.mul(p, &basis(i), q + 1, &a.diff[q][j]);
                    axpy(&mut rhs, &sign(p), &second);
                    if lhs != rhs {
                        return Some(Violation::Leibniz { degrees: (p, q), indices: (i, j) });
                    }
                }
            }
        }
    }
    for p in 0..=cap {
        for i in 0..a.dim(p) {
            if a.mul(0, &a.unit, p, &basis(i)) != basis(i) {
                return Some(Violation::Unit { degree: p, index: i });
            }
        }
    }
    if !a.d(0, &a.unit).is_empty() {
        return Some(Violation::Unit { degree: 0, index: 0 });
    }
    let eps = |x: &SparseVec| -> Scalar {
        x.iter()
            .map(|(k, c)| c * a.augmentation.get(k).cloned().unwrap_or_else(Scalar::zero))
            .fold(Scalar::zero(), |s, t| s + t)
    };
    if eps(&a.unit) != Scalar::one() {
        return Some(Violation::Augmentation("augmentation of the unit is not 1".into()));
    }
    for i in 0..a.dim(0) {
        for j in 0..a.dim(0) {
            if !a.within_weight(a.weights[0][i] + a.weights[0][j]) {
                continue;
            }
            let lhs = eps(&a.mul_basis(0, i, 0, j));
            let rhs = eps(&basis(i)) * eps(&basis(j));
            if lhs != rhs {
                return Some(Violation::Augmentation(format!("not multiplicative on ({i}, {j})")));
            }
        }
    }
    None
}

/// Degree-preserving linear map between two cdgas.
#[derive(Clone, Debug)]
pub struct CdgaMorphism {
    pub source: Cdga,
    pub target: Cdga,
    maps: Vec<Matrix>,
}

impl CdgaMorphism {
    pub fn new(source: Cdga, target: Cdga, maps: Vec<Matrix>) -> Result<Self, CdgaError> {
        let cap = source.cap.min(target.cap);
        if maps.len() != cap + 1 {
            return Err(CdgaError::Shape(format!("need {} matrices", cap + 1)));
        }
        for (p, m) in maps.iter().enumerate() {
            if (m.nrows(), m.ncols()) != (target.dim(p), source.dim(p)) {
                return Err(CdgaError::Shape(format!("degree {p} matrix has the wrong shape")));
            }
        }
        Ok(CdgaMorphism { source, target, maps })
    }

    pub fn identity(a: &Cdga) -> Self {
        let maps = (0..=a.cap).map(|p| Matrix::identity(a.dim(p))).collect();
        CdgaMorphism {
            source: a.clone(),
            target: a.clone(),
            maps,
        }
    }

    pub fn matrix(&self, p: usize) -> &Matrix {
        &self.maps[p]
    }

    pub fn apply(&self, p: usize, x: &SparseVec) -> SparseVec {
        if p >= self.maps.len() {
            return SparseVec::new();
        }
        self.maps[p].apply_sparse(x)
    }

    /// Chain-map, multiplicativity, unit and augmentation checks. Products
    /// whose weight exceeds the source weight cap are skipped, since the
    /// source truncates them.
    pub fn check(&self) -> Result<(), String> {
        self.check_multiplicative()?;
        let (a, b) = (&self.source, &self.target);
        for i in 0..a.dim(0) {
            let x: SparseVec = [(i, Scalar::one())].into();
            let img = self.apply(0, &x);
            let lhs = a.augmentation.get(&i).cloned().unwrap_or_else(Scalar::zero);
            let rhs = img
                .iter()
                .map(|(k, c)| c * b.augmentation.get(k).cloned().unwrap_or_else(Scalar::zero))
                .fold(Scalar::zero(), |s, t| s + t);
            if lhs != rhs {
                return Err(format!("augmentation not preserved on e0_{i}"));
            }
        }
        Ok(())
    }

    /// As [`CdgaMorphism::check`] without the augmentation condition.
    pub fn check_multiplicative(&self) -> Result<(), String> {
        let (a, b) = (&self.source, &self.target);
        let cap = self.maps.len() - 1;
        for p in 0..cap {
            for i in 0..a.dim(p) {
                let x: SparseVec = [(i, Scalar::one())].into();
                let lhs = self.apply(p + 1, &a.d(p, &x));
                let rhs = b.d(p, &self.apply(p, &x));
                if lhs != rhs {
                    return Err(format!("not a chain map on e{p}_{i}"));
                }
            }
        }
        for p in 0..=cap {
            for q in 0..=cap - p {
                for i in 0..a.dim(p) {
                    for j in 0..a.dim(q) {
                        if !a.within_weight(a.weights[p][i] + a.weights[q][j]) {
                            continue;
                        }
                        let x: SparseVec = [(i, Scalar::one())].into();
                        let y: SparseVec = [(j, Scalar::one())].into();
                        let lhs = self.apply(p + q, &a.mul(p, &x, q, &y));
                        let rhs = b.mul(p, &self.apply(p, &x), q, &self.apply(q, &y));
                        if lhs != rhs {
                            return Err(format!("not multiplicative on e{p}_{i} · e{q}_{j}"));
                        }
                    }
                }
            }
        }
        if self.apply(0, &a.unit) != b.unit {
            return Err("unit not preserved".into());
        }
        Ok(())
    }
}

fn point_labels() -> Vec<String> {
    vec!["1".to_string()]
}

/// Cohomology ring of a genus-`g` curve with `r ≥ 1` marked points:
/// `Q` in degree 0, `2g + r - 1` classes in degree 1, nothing above.
pub fn marked_curve_model(g: usize, r: usize) -> Result<Cdga, CdgaError> {
    if r == 0 {
        return Err(CdgaError::Invalid("marked model needs r >= 1; use the unmarked model".into()));
    }
    let n = 2 * g + r - 1;
    let labels = vec![point_labels(), (1..=n).map(|i| format!("v{i}")).collect()];
    let weights = vec![vec![0], vec![1; n]];
    Cdga::build(3, labels, weights, None, &|_, _| SparseVec::new(), &unit_only_product)
}

fn unit_only_product(p: usize, i: usize, q: usize, j: usize) -> SparseVec {
    match (p, q) {
        (0, _) => [(j, Scalar::one())].into(),
        (_, 0) => [(i, Scalar::one())].into(),
        _ => SparseVec::new(),
    }
}

/// Cohomology ring of a closed genus-`g` curve: dims `(1, 2g, 1)` with
/// `v_{2i-1} v_{2i} = ω` and all other degree-1 products zero.
pub fn unmarked_curve_model(g: usize) -> Result<Cdga, CdgaError> {
    if g == 0 {
        return Err(CdgaError::Invalid("unmarked model needs g >= 1".into()));
    }
    let labels = vec![
        point_labels(),
        (1..=2 * g).map(|i| format!("v{i}")).collect(),
        vec!["w".to_string()],
    ];
    let weights = vec![vec![0], vec![1; 2 * g], vec![2]];
    let mul = |p: usize, i: usize, q: usize, j: usize| -> SparseVec {
        if p == 1 && q == 1 {
            // 0-based: v_{2k+1} has index 2k, its partner 2k+1.
            if i.is_multiple_of(2) && j == i + 1 {
                return [(0, Scalar::one())].into();
            }
            if j.is_multiple_of(2) && i == j + 1 {
                return [(0, -Scalar::one())].into();
            }
            return SparseVec::new();
        }
        unit_only_product(p, i, q, j)
    };
    Cdga::build(3, labels, weights, None, &|_, _| SparseVec::new(), &mul)
}

/// Exterior algebra on degree-1 generators with zero differential.
pub fn exterior_algebra(generators: &[&str], cap: usize) -> Result<Cdga, CdgaError> {
    let n = generators.len();
    let mut monomials: Vec<Vec<Vec<usize>>> = vec![vec![vec![]]];
    for p in 1..=cap {
        monomials.push(subsets(n, p));
    }
    let labels = monomials
        .iter()
        .map(|ms| {
            ms.iter()
                .map(|m| {
                    if m.is_empty() {
                        "1".to_string()
                    } else {
                        m.iter().map(|&k| generators[k]).collect::<Vec<_>>().join("^")
                    }
                })
                .collect()
        })
        .collect();
    let weights = monomials.iter().map(|ms| ms.iter().map(|m| m.len() as u32).collect()).collect();
    let index: Vec<BTreeMap<Vec<usize>, usize>> = monomials
        .iter()
        .map(|ms| ms.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect())
        .collect();
    let mul = |p: usize, i: usize, q: usize, j: usize| -> SparseVec {
        match wedge(&monomials[p][i], &monomials[q][j]) {
            Some((s, m)) => [(index[p + q][&m], s)].into(),
            None => SparseVec::new(),
        }
    };
    Cdga::build(cap, labels, weights, None, &|_, _| SparseVec::new(), &mul)
}

/// All increasing `p`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, p: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for k in start..n {
            cur.push(k);
            rec(k + 1, n, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, p, &mut Vec::new(), &mut out);
    out
}

/// Product of two sorted exterior monomials: the sign of the merging
/// permutation and the merged monomial, or `None` if an index repeats.
pub fn wedge(a: &[usize], b: &[usize]) -> Option<(Scalar, Vec<usize>)> {
    let mut inversions = 0usize;
    for &x in a {
        for &y in b {
            if x == y {
                return None;
            }
            if x > y {
                inversions += 1;
            }
        }
    }
    let mut m: Vec<usize> = a.iter().chain(b).copied().collect();
    m.sort_unstable();
    Some((sign(inversions), m))
}

/// `Q[t, dt]` modulo polynomial degree above `d` (with `deg dt = 1`);
/// weight is the polynomial degree.
pub fn interval_algebra(d: usize) -> Result<Cdga, CdgaError> {
    if d == 0 {
        return Err(CdgaError::Invalid("polynomial cap must be at least 1".into()));
    }
    let labels = vec![
        (0..=d).map(|k| format!("t^{k}")).collect(),
        (0..d).map(|k| format!("t^{k}dt")).collect(),
    ];
    let weights = vec![(0..=d as u32).collect(), (1..=d as u32).collect()];
    let dfn = |p: usize, k: usize| -> SparseVec {
        if p == 0 && k > 0 {
            [(k - 1, int(k as i64))].into()
        } else {
            SparseVec::new()
        }
    };
    let mul = |p: usize, i: usize, q: usize, j: usize| -> SparseVec {
        match (p, q) {
            (0, 0) => [(i + j, Scalar::one())].into(),
            (0, 1) | (1, 0) => [(i + j, Scalar::one())].into(),
            _ => SparseVec::new(),
        }
    };
    Cdga::build(3, labels, weights, Some(d as u32), &dfn, &mul)
}

/// Graded tensor product `A ⊗ B` capped at `cap`, with Koszul signs.
/// Weights are inherited from the left factor only.
pub fn tensor(a: &Cdga, b: &Cdga, cap: usize) -> Result<Cdga, CdgaError> {
    // Basis of degree n: pairs (p, i, q, j) with p + q = n, ordered by p.
    let mut pairs: Vec<Vec<(usize, usize, usize, usize)>> = vec![Vec::new(); cap + 1];
    for (n, slot) in pairs.iter_mut().enumerate() {
        for p in 0..=n.min(a.cap) {
            let q = n - p;
            if q > b.cap {
                continue;
            }
            for i in 0..a.dim(p) {
                for j in 0..b.dim(q) {
                    slot.push((p, i, q, j));
                }
            }
        }
    }
    let index: Vec<BTreeMap<(usize, usize, usize, usize), usize>> = pairs
        .iter()
        .map(|v| v.iter().enumerate().map(|(k, &t)| (t, k)).collect())
        .collect();
    let labels = pairs
        .iter()
        .map(|v| {
            v.iter()
                .map(|&(p, i, q, j)| format!("{}⊗{}", a.labels(p)[i], b.labels(q)[j]))
                .collect()
        })
        .collect();
    let weights = pairs.iter().map(|v| v.iter().map(|&(p, i, _, _)| a.weight(p, i)).collect()).collect();
    let dfn = |n: usize, k: usize| -> SparseVec {
        let (p, i, q, j) = pairs[n][k];
        let mut out = SparseVec::new();
        if n + 1 > cap {
            return out;
        }
        for (&i2, c) in a.d_basis(p, i) {
            if let Some(&t) = index[n + 1].get(&(p + 1, i2, q, j)) {
                axpy(&mut out, c, &[(t, Scalar::one())].into());
            }
        }
        for (&j2, c) in b.d_basis(q, j) {
            if let Some(&t) = index[n + 1].get(&(p, i, q + 1, j2)) {
                axpy(&mut out, &(c * sign(p)), &[(t, Scalar::one())].into());
            }
        }
        out
    };
    let mul = |n: usize, k: usize, m: usize, l: usize| -> SparseVec {
        let (p1, i1, q1, j1) = pairs[n][k];
        let (p2, i2, q2, j2) = pairs[m][l];
        let s = sign(q1 * p2);
        let left = a.mul_basis(p1, i1, p2, i2);
        let right = b.mul_basis(q1, j1, q2, j2);
        let mut out = SparseVec::new();
        for (&x, c) in &left {
            for (&y, e) in &right {
                if let Some(&t) = index[n + m].get(&(p1 + p2, x, q1 + q2, y)) {
                    axpy(&mut out, &(c * e * &s), &[(t, Scalar::one())].into());
                }
            }
        }
        out
    };
    let built = Cdga::build(cap, labels, weights, a.weight_cap, &dfn, &mul)?;
    let mut unit = SparseVec::new();
    let mut aug = SparseVec::new();
    for (&ia, ca) in a.unit() {
        for (&ib, cb) in b.unit() {
            unit.insert(index[0][&(0, ia, 0, ib)], ca * cb);
        }
    }
    for (&ia, ca) in a.augmentation() {
        for (&ib, cb) in b.augmentation() {
            aug.insert(index[0][&(0, ia, 0, ib)], ca * cb);
        }
    }
    Ok(built.with_unit(unit).with_augmentation(aug))
}

/// `R(t,dt)≤D ⊗ A` together with the evaluations at `t = 0` and `t = 1`.
#[derive(Clone, Debug)]
pub struct IntervalTensor {
    pub algebra: Cdga,
    pub p0: CdgaMorphism,
    pub p1: CdgaMorphism,
}

pub fn tensor_with_interval(a: &Cdga, d: usize) -> Result<IntervalTensor, CdgaError> {
    let r = interval_algebra(d)?;
    let algebra = tensor(&r, a, a.cap)?;
    let eval = |at_one: bool| -> Result<CdgaMorphism, CdgaError> {
        let maps = (0..=a.cap)
            .map(|n| {
                let mut m = Matrix::zeros(a.dim(n), algebra.dim(n));
                // Only t^k ⊗ a survives; dt-terms are sent to zero.
                let mut k = 0usize;
                for p in 0..=n.min(r.cap) {
                    let q = n - p;
                    if q > a.cap {
                        continue;
                    }
                    for i in 0..r.dim(p) {
                        for j in 0..a.dim(q) {
                            if p == 0 && (at_one || i == 0) {
                                m.set(j, k, Scalar::one());
                            }
                            k += 1;
                        }
                    }
                }
                m
            })
            .collect();
        CdgaMorphism::new(algebra.clone(), a.clone(), maps)
    };
    Ok(IntervalTensor {
        p0: eval(false)?,
        p1: eval(true)?,
        algebra,
    })
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct MultJson {
    pub p: usize,
    pub q: usize,
    pub table: Vec<Vec<String>>,
}

/// Wire format: `{cap, basis, diff, mult, augmentation}` plus optional
/// `weights`, `weight_cap` and `unit`; rationals are `"num/den"` strings.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct CdgaJson {
    pub cap: usize,
    pub basis: BTreeMap<String, Vec<String>>,
    pub diff: BTreeMap<String, Vec<Vec<String>>>,
    pub mult: Vec<MultJson>,
    pub augmentation: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_cap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<Vec<String>>,
}

pub fn matrix_to_json(m: &Matrix) -> Vec<Vec<String>> {
    (0..m.nrows()).map(|i| m.row(i).iter().map(format_scalar).collect()).collect()
}

pub fn matrix_from_json(rows: &[Vec<String>], nrows: usize, ncols: usize) -> Result<Matrix, CdgaError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(CdgaError::Shape(format!("expected a {nrows}x{ncols} matrix")));
    }
    let entries = rows
        .iter()
        .map(|r| r.iter().map(|s| parse_scalar(s)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_rows(nrows, ncols, entries)?)
}

fn row_to_json(v: &SparseVec, n: usize) -> Vec<String> {
    dense_from_sparse(v, n).iter().map(format_scalar).collect()
}

fn row_from_json(r: &[String], n: usize) -> Result<SparseVec, CdgaError> {
    if r.len() != n {
        return Err(CdgaError::Shape(format!("expected a row of length {n}")));
    }
    let v = r.iter().map(|s| parse_scalar(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(sparse_from_dense(&v))
}

impl Cdga {
    pub fn to_json(&self) -> CdgaJson {
        let basis = (0..=self.cap)
            .filter(|&p| self.dim(p) > 0)
            .map(|p| (p.to_string(), self.labels[p].clone()))
            .collect();
        let weights = Some(
            (0..=self.cap)
                .filter(|&p| self.dim(p) > 0)
                .map(|p| (p.to_string(), self.weights[p].clone()))
                .collect(),
        );
        let diff = (0..self.cap)
            .filter(|&p| self.dim(p) > 0 && self.dim(p + 1) > 0)
            .map(|p| (p.to_string(), matrix_to_json(&self.diff_matrix(p))))
            .collect();
        let mult = self
            .mult
            .iter()
            .filter(|(&(p, q), _)| self.dim(p) > 0 && self.dim(q) > 0 && self.dim(p + q) > 0)
            .map(|(&(p, q), t)| {
                let cols: Vec<SparseVec> = t.iter().flat_map(|row| row.iter().cloned()).collect();
                MultJson {
                    p,
                    q,
                    table: matrix_to_json(&Matrix::from_sparse_columns(self.dim(p + q), &cols)),
                }
            })
            .collect();
        CdgaJson {
            cap: self.cap,
            basis,
            diff,
            mult,
            augmentation: row_to_json(&self.augmentation, self.dim(0)),
            weights,
            weight_cap: self.weight_cap,
            unit: Some(row_to_json(&self.unit, self.dim(0))),
        }
    }

    pub fn from_json(j: &CdgaJson) -> Result<Cdga, CdgaError> {
        let cap = j.cap;
        let key = |s: &String| -> Result<usize, CdgaError> {
            s.parse::<usize>()
                .ok()
                .filter(|&p| p <= cap)
                .ok_or_else(|| CdgaError::Json(format!("bad degree key {s:?}")))
        };
        let mut labels = vec![Vec::new(); cap + 1];
        for (k, v) in &j.basis {
            labels[key(k)?] = v.clone();
        }
        let mut weights: Vec<Vec<u32>> = labels.iter().map(|l| vec![0; l.len()]).collect();
        if let Some(ws) = &j.weights {
            for (k, v) in ws {
                weights[key(k)?] = v.clone();
            }
        }
        let dims: Vec<usize> = labels.iter().map(Vec::len).collect();
        let mut diff: Vec<Vec<SparseVec>> = dims.iter().map(|&n| vec![SparseVec::new(); n]).collect();
        for (k, rows) in &j.diff {
            let p = key(k)?;
            if p == cap {
                return Err(CdgaError::Json("differential out of the top degree".into()));
            }
            let m = matrix_from_json(rows, dims[p + 1], dims[p])?;
            for (i, slot) in diff[p].iter_mut().enumerate() {
                *slot = m.sparse_column(i);
            }
        }
        let mut tables: BTreeMap<(usize, usize), Matrix> = BTreeMap::new();
        for t in &j.mult {
            if t.p + t.q > cap {
                return Err(CdgaError::Json(format!("product table ({}, {}) above the cap", t.p, t.q)));
            }
            let m = matrix_from_json(&t.table, dims[t.p + t.q], dims[t.p] * dims[t.q])?;
            tables.insert((t.p, t.q), m);
        }
        let dfn = |p: usize, i: usize| diff[p][i].clone();
        let mul = |p: usize, i: usize, q: usize, jj: usize| -> SparseVec {
            tables
                .get(&(p, q))
                .map_or_else(SparseVec::new, |m| m.sparse_column(i * dims[q] + jj))
        };
        let mut a = Cdga::build(cap, labels, weights, j.weight_cap, &dfn, &mul)?;
        a.augmentation = row_from_json(&j.augmentation, dims[0])?;
        if let Some(u) = &j.unit {
            a.unit = row_from_json(u, dims[0])?;
        }
        a.check_shapes()?;
        Ok(a)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_json()).expect("plain data serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Cdga, CdgaError> {
        let j: CdgaJson = serde_json::from_str(s).map_err(|e| CdgaError::Json(e.to_string()))?;
        Cdga::from_json(&j)
    }

    /// Copy with one differential coefficient overwritten, for building
    /// counterexamples.
    pub fn with_diff_entry(mut self, p: usize, i: usize, target: usize, c: Scalar) -> Self {
        let v = &mut self.diff[p][i];
        if c.is_zero() {
            v.remove(&target);
        } else {
            v.insert(target, c);
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactlin::frac;

    #[test]
    fn stock_models_validate() {
        for g in 0..=3 {
            for r in 1..=8 {
                if 2 * g + r <= 8 {
                    let a = marked_curve_model(g, r).unwrap();
                    assert!(validate(&a).is_valid(), "marked ({g},{r})");
                    assert_eq!(a.betti().unwrap(), vec![1, 2 * g + r - 1, 0, 0]);
                }
            }
        }
        for g in 1..=4 {
            let a = unmarked_curve_model(g).unwrap();
            assert!(validate(&a).is_valid(), "unmarked {g}");
            assert_eq!(a.betti().unwrap(), vec![1, 2 * g, 1, 0]);
        }
    }

    #[test]
    fn marked_model_dimensions() {
        assert_eq!(marked_curve_model(0, 3).unwrap().dim(1), 2);
        assert_eq!(marked_curve_model(1, 1).unwrap().dim(1), 2);
        assert_eq!(marked_curve_model(2, 1).unwrap().dim(1), 4);
        assert!(marked_curve_model(1, 0).is_err());
    }

    #[test]
    fn unmarked_model_products() {
        let a = unmarked_curve_model(1).unwrap();
        assert_eq!(a.dims(), vec![1, 2, 1, 0]);
        assert_eq!(a.mul_basis(1, 0, 1, 1), [(0, Scalar::one())].into());
        assert!(a.mul_basis(1, 0, 1, 0).is_empty());
        assert!(a.mul_basis(1, 1, 1, 1).is_empty());
        assert!(unmarked_curve_model(0).is_err());

        let b = unmarked_curve_model(2).unwrap();
        let mut nonzero = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                if !b.mul_basis(1, i, 1, j).is_empty() {
                    nonzero += 1;
                }
            }
        }
        assert_eq!(nonzero, 2);
    }

    /// Rank of the cup pairing Λ²H¹ → H² on the unmarked models, computed
    /// from the pair table directly.
    #[test]
    fn cup_pairing_rank_one() {
        for g in 1..=3 {
            let a = unmarked_curve_model(g).unwrap();
            let pairs = subsets(2 * g, 2);
            let cols: Vec<SparseVec> = pairs.iter().map(|m| a.mul_basis(1, m[0], 1, m[1])).collect();
            let cup = Matrix::from_sparse_columns(1, &cols);
            assert_eq!(cup.rank(), 1);
            assert_eq!(cup.kernel().ncols(), pairs.len() - 1);
        }
    }

    #[test]
    fn interval_algebra_is_valid_and_acyclic() {
        for d in 1..=4 {
            let r = interval_algebra(d).unwrap();
            assert!(validate(&r).is_valid());
            assert_eq!(r.betti().unwrap(), vec![1, 0, 0, 0]);
        }
        assert!(interval_algebra(0).is_err());
    }

    #[test]
    fn exterior_algebra_validates() {
        let e = exterior_algebra(&["x", "y"], 3).unwrap();
        assert!(validate(&e).is_valid());
        assert_eq!(e.dims(), vec![1, 2, 1, 0]);
    }

    #[test]
    fn injected_d_squared_is_reported() {
        let mut j = exterior_algebra(&["x", "y", "z"], 3).unwrap().to_json();
        j.weights = None;
        let e = Cdga::from_json(&j).unwrap();
        // d(x) = y^z, d(y^z) = x^y^z gives d(d x) ≠ 0.
        let bad = e.with_diff_entry(1, 0, 2, Scalar::one()).with_diff_entry(2, 2, 0, Scalar::one());
        match validate(&bad).violation {
            Some(Violation::DSquared { degree: 1, index: 0 }) => {}
            other => panic!("unexpected report {other:?}"),
        }
    }

    #[test]
    fn evaluation_maps_are_morphisms() {
        for model in [marked_curve_model(0, 3).unwrap(), unmarked_curve_model(1).unwrap()] {
            let it = tensor_with_interval(&model, 3).unwrap();
            assert!(validate(&it.algebra).is_valid());
            it.p0.check().unwrap();
            it.p1.check_multiplicative().unwrap();
            assert!(it.p1.check().is_err());
            let unit_image = it.p0.apply(0, it.algebra.unit());
            assert_eq!(&unit_image, model.unit());
        }
        let r = interval_algebra(3).unwrap();
        let h0 = r.cohomology(0).unwrap();
        assert_eq!(h0.dim, 1);
    }

    #[test]
    fn json_round_trip() {
        for a in [
            unmarked_curve_model(2).unwrap(),
            marked_curve_model(1, 2).unwrap(),
            interval_algebra(2).unwrap(),
        ] {
            let s = serde_json::to_string(&a.to_json_value()).unwrap();
            let b = Cdga::from_json_str(&s).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identity_morphism_checks() {
        let a = unmarked_curve_model(2).unwrap();
        CdgaMorphism::identity(&a).check().unwrap();
        let mut maps: Vec<Matrix> = (0..=3).map(|p| Matrix::identity(a.dim(p))).collect();
        maps[1] = maps[1].scale(&frac(1, 2));
        let bad = CdgaMorphism::new(a.clone(), a, maps).unwrap();
        assert!(bad.check().is_err());
    }
}
