//! Exact rational linear algebra: dense matrices, sparse echelon bases,
//! cohomology of cochain complexes, mapping cones and deterministic sections.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

pub type Scalar = BigRational;

/// Sparse vector keyed by coordinate index; never stores zeros.
pub type SparseVec = BTreeMap<usize, Scalar>;

pub fn int(n: i64) -> Scalar {
    BigRational::from_integer(BigInt::from(n))
}

pub fn frac(n: i64, d: i64) -> Scalar {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Canonical `num/den` rendering used by every serializer.
pub fn format_scalar(x: &Scalar) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

pub fn parse_scalar(s: &str) -> Result<Scalar, LinError> {
    let t = s.trim();
    let bad = || LinError::ParseScalar(s.to_string());
    match t.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(BigRational::new(n, d))
        }
        None => {
            let n: BigInt = t.parse().map_err(|_| bad())?;
            Ok(BigRational::from_integer(n))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinError {
    #[error("degree {0} is out of range")]
    DegreeOutOfRange(i32),
    #[error("d∘d is nonzero on degree {0}")]
    NotAComplex(i32),
    #[error("map does not commute with the differentials in degree {0}")]
    NotAChainMap(i32),
    #[error("map is not surjective: rank {rank}, target dimension {target}")]
    NotSurjective { rank: usize, target: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid rational literal {0:?}")]
    ParseScalar(String),
    #[error("vector is not a cocycle")]
    NotACocycle,
    #[error("duplicate basis label {label:?} in degree {degree}")]
    DuplicateLabel { degree: i32, label: String },
}

pub fn sparse_from_dense(v: &[Scalar]) -> SparseVec {
    v.iter()
        .enumerate()
        .filter(|(_, x)| !x.is_zero())
        .map(|(i, x)| (i, x.clone()))
        .collect()
}

pub fn dense_from_sparse(v: &SparseVec, n: usize) -> Vec<Scalar> {
    let mut out = vec![Scalar::zero(); n];
    for (&i, x) in v {
        out[i] = x.clone();
    }
    out
}

/// `acc += c * v`, dropping entries that cancel.
pub fn axpy(acc: &mut SparseVec, c: &Scalar, v: &SparseVec) {
    if c.is_zero() {
        return;
    }
    for (&k, x) in v {
        let e = acc.entry(k).or_insert_with(Scalar::zero);
        *e += c * x;
        if e.is_zero() {
            acc.remove(&k);
        }
    }
}

pub fn scaled(v: &SparseVec, c: &Scalar) -> SparseVec {
    if c.is_zero() {
        return SparseVec::new();
    }
    v.iter().map(|(&k, x)| (k, x * c)).collect()
}

/// Incremental row-echelon basis of a subspace of Q^n over sparse vectors.
///
/// Every stored row is normalized to leading coefficient 1 and is supported
/// on columns at or after its pivot. Each row also remembers how it is
/// combined from the inserted vectors, numbered in insertion order.
#[derive(Clone, Debug, Default)]
pub struct Echelon {
    rows: BTreeMap<usize, (SparseVec, SparseVec)>,
    inserted: usize,
    untracked: bool,
}

/// Result of reducing a vector: `v = remainder + Σ combination[i] · inserted[i]`.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub remainder: SparseVec,
    pub combination: SparseVec,
}

impl Echelon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same span bookkeeping without combinations; `express` and
    /// `Reduction::combination` are then always empty.
    pub fn untracked() -> Self {
        Echelon {
            untracked: true,
            ..Self::default()
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    pub fn pivots(&self) -> Vec<usize> {
        self.rows.keys().copied().collect()
    }

    pub fn is_pivot(&self, col: usize) -> bool {
        self.rows.contains_key(&col)
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    /// The remainder is supported on non-pivot columns and is the unique
    /// such representative of `v` modulo the span.
    pub fn reduce(&self, v: &SparseVec) -> Reduction {
        let mut acc = v.clone();
        let mut comb = SparseVec::new();
        let mut cursor = 0usize;
        loop {
            let next = acc
                .range(cursor..)
                .map(|(k, _)| *k)
                .find(|k| self.rows.contains_key(k));
            let Some(p) = next else { break };
            let c = acc[&p].clone();
            let (row, rcomb) = &self.rows[&p];
            axpy(&mut acc, &-c.clone(), row);
            if !self.untracked {
                axpy(&mut comb, &c, rcomb);
            }
            cursor = p + 1;
        }
        Reduction {
            remainder: acc,
            combination: comb,
        }
    }

    /// Inserts `v`; returns the new pivot column when `v` was independent.
    pub fn insert(&mut self, v: &SparseVec) -> Option<usize> {
        let red = self.reduce(v);
        let idx = self.inserted;
        self.inserted += 1;
        let (&p, lead) = red.remainder.iter().next()?;
        let inv = lead.recip();
        let row = scaled(&red.remainder, &inv);
        let mut comb = SparseVec::new();
        if !self.untracked {
            comb.insert(idx, Scalar::one());
            axpy(&mut comb, &-Scalar::one(), &red.combination);
            comb = scaled(&comb, &inv);
        }
        self.rows.insert(p, (row, comb));
        Some(p)
    }

    pub fn contains(&self, v: &SparseVec) -> bool {
        self.reduce(v).remainder.is_empty()
    }

    /// Coefficients over the inserted vectors when `v` lies in the span.
    pub fn express(&self, v: &SparseVec) -> Option<SparseVec> {
        let red = self.reduce(v);
        red.remainder.is_empty().then_some(red.combination)
    }

    /// Fully reduced rows (reduced row echelon form), keyed by pivot.
    pub fn reduced_rows(&self) -> BTreeMap<usize, SparseVec> {
        let mut rows: BTreeMap<usize, SparseVec> =
            self.rows.iter().map(|(&p, (r, _))| (p, r.clone())).collect();
        let pivots: Vec<usize> = rows.keys().copied().collect();
        for &p in pivots.iter().rev() {
            let prow = rows[&p].clone();
            for &q in pivots.iter().filter(|&&q| q < p) {
                let c = rows[&q].get(&p).cloned();
                if let Some(c) = c {
                    let r = rows.get_mut(&q).unwrap();
                    axpy(r, &-c, &prow);
                }
            }
        }
        rows
    }
}

/// Dense rational matrix, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Scalar>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![Scalar::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Scalar::one());
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, entries: Vec<Vec<Scalar>>) -> Result<Self, LinError> {
        if entries.len() != rows || entries.iter().any(|r| r.len() != cols) {
            return Err(LinError::Shape(format!("expected {rows}x{cols} rows")));
        }
        Ok(Matrix {
            rows,
            cols,
            data: entries.into_iter().flatten().collect(),
        })
    }

    pub fn from_i64(rows: usize, cols: usize, entries: &[i64]) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must match shape");
        Matrix {
            rows,
            cols,
            data: entries.iter().map(|&x| int(x)).collect(),
        }
    }

    /// Builds a `rows x columns.len()` matrix from sparse columns.
    pub fn from_sparse_columns(rows: usize, columns: &[SparseVec]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            for (&i, x) in c {
                m.set(i, j, x.clone());
            }
        }
        m
    }

    pub fn from_dense_columns(rows: usize, columns: &[Vec<Scalar>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column length must match row count");
            for (i, x) in c.iter().enumerate() {
                m.set(i, j, x.clone());
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Scalar {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: Scalar) {
        self.data[i * self.cols + j] = x;
    }

    pub fn add_to(&mut self, i: usize, j: usize, x: &Scalar) {
        self.data[i * self.cols + j] += x;
    }

    pub fn row(&self, i: usize) -> &[Scalar] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Scalar> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn sparse_row(&self, i: usize) -> SparseVec {
        sparse_from_dense(self.row(i))
    }

    pub fn sparse_column(&self, j: usize) -> SparseVec {
        (0..self.rows)
            .filter(|&i| !self.get(i, j).is_zero())
            .map(|i| (i, self.get(i, j).clone()))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(k, j);
                    if !b.is_zero() {
                        out.add_to(i, j, &(a * b));
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[Scalar]) -> Vec<Scalar> {
        assert_eq!(v.len(), self.cols, "vector length must match column count");
        (0..self.rows)
            .map(|i| {
                let mut s = Scalar::zero();
                for (a, x) in self.row(i).iter().zip(v) {
                    if !a.is_zero() && !x.is_zero() {
                        s += a * x;
                    }
                }
                s
            })
            .collect()
    }

    pub fn apply_sparse(&self, v: &SparseVec) -> SparseVec {
        let mut out = SparseVec::new();
        for (&j, x) in v {
            for i in 0..self.rows {
                let a = self.get(i, j);
                if !a.is_zero() {
                    let e = out.entry(i).or_insert_with(Scalar::zero);
                    *e += a * x;
                }
            }
        }
        out.retain(|_, x| !x.is_zero());
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, c: &Scalar) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.set(r0 + i, c0 + j, block.get(i, j).clone());
            }
        }
    }

    pub fn row_echelon(&self) -> Echelon {
        let mut e = Echelon::new();
        for i in 0..self.rows {
            e.insert(&self.sparse_row(i));
        }
        e
    }

    pub fn column_echelon(&self) -> Echelon {
        let mut e = Echelon::new();
        for j in 0..self.cols {
            e.insert(&self.sparse_column(j));
        }
        e
    }

    pub fn rank(&self) -> usize {
        if self.rows <= self.cols {
            self.row_echelon().rank()
        } else {
            self.column_echelon().rank()
        }
    }

    /// Reduced row echelon form and its pivot columns.
    pub fn rref(&self) -> (Matrix, Vec<usize>) {
        let rows = self.row_echelon().reduced_rows();
        let mut m = Matrix::zeros(self.rows, self.cols);
        let pivots: Vec<usize> = rows.keys().copied().collect();
        for (i, (_, r)) in rows.iter().enumerate() {
            for (&j, x) in r {
                m.set(i, j, x.clone());
            }
        }
        (m, pivots)
    }

    /// Kernel basis as columns: one vector per free column of the RREF,
    /// with a 1 in that free slot.
    pub fn kernel(&self) -> Matrix {
        let rows = self.row_echelon().reduced_rows();
        let free: Vec<usize> = (0..self.cols).filter(|j| !rows.contains_key(j)).collect();
        let mut k = Matrix::zeros(self.cols, free.len());
        for (c, &f) in free.iter().enumerate() {
            k.set(f, c, Scalar::one());
            for (&p, r) in &rows {
                if let Some(x) = r.get(&f) {
                    k.set(p, c, -x.clone());
                }
            }
        }
        k
    }

    pub fn kernel_vectors(&self) -> Vec<Vec<Scalar>> {
        let k = self.kernel();
        (0..k.ncols()).map(|j| k.column(j)).collect()
    }

    /// Indices of the greedily independent columns, in basis order.
    pub fn pivot_columns(&self) -> Vec<usize> {
        self.row_echelon().pivots()
    }

    /// A solution of `self * x = b` with every free variable set to zero.
    pub fn solve(&self, b: &[Scalar]) -> Option<Vec<Scalar>> {
        assert_eq!(b.len(), self.rows, "right-hand side length must match row count");
        let mut e = Echelon::new();
        for i in 0..self.rows {
            let mut r = self.sparse_row(i);
            if !b[i].is_zero() {
                r.insert(self.cols, b[i].clone());
            }
            e.insert(&r);
        }
        let rows = e.reduced_rows();
        if rows.contains_key(&self.cols) {
            return None;
        }
        let mut x = vec![Scalar::zero(); self.cols];
        for (&p, r) in &rows {
            if let Some(v) = r.get(&self.cols) {
                x[p] = v.clone();
            }
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Matrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut e = Echelon::new();
        for i in 0..n {
            let mut r = self.sparse_row(i);
            r.insert(n + i, Scalar::one());
            e.insert(&r);
        }
        let rows = e.reduced_rows();
        if (0..n).any(|j| !rows.contains_key(&j)) {
            return None;
        }
        let mut inv = Matrix::zeros(n, n);
        for (i, (_, r)) in rows.iter().enumerate() {
            for (&j, x) in r.range(n..) {
                inv.set(i, j - n, x.clone());
            }
        }
        Some(inv)
    }
}

/// Per-degree ordered bases of opaque labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GradedSpace {
    basis: BTreeMap<i32, Vec<String>>,
}

impl GradedSpace {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(basis: BTreeMap<i32, Vec<String>>) -> Result<Self, LinError> {
        for (&d, labels) in &basis {
            let mut seen = std::collections::BTreeSet::new();
            for l in labels {
                if !seen.insert(l) {
                    return Err(LinError::DuplicateLabel {
                        degree: d,
                        label: l.clone(),
                    });
                }
            }
        }
        Ok(GradedSpace { basis })
    }

    pub fn dim(&self, degree: i32) -> usize {
        self.basis.get(&degree).map_or(0, Vec::len)
    }

    pub fn labels(&self, degree: i32) -> &[String] {
        self.basis.get(&degree).map_or(&[], Vec::as_slice)
    }

    pub fn degrees(&self) -> Vec<i32> {
        self.basis.keys().copied().collect()
    }

    /// Labels of the dual basis, marked with a trailing `*`.
    pub fn dual(&self) -> GradedSpace {
        GradedSpace {
            basis: self
                .basis
                .iter()
                .map(|(&d, ls)| (-d, ls.iter().map(|l| format!("{l}*")).collect()))
                .collect(),
        }
    }

    fn range(&self) -> Option<(i32, i32)> {
        Some((*self.basis.keys().next()?, *self.basis.keys().next_back()?))
    }
}

/// Linear map of graded spaces raising degree by `shift`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradedMap {
    pub source: GradedSpace,
    pub target: GradedSpace,
    pub shift: i32,
    matrices: BTreeMap<i32, Matrix>,
}

impl GradedMap {
    pub fn new(
        source: GradedSpace,
        target: GradedSpace,
        shift: i32,
        matrices: BTreeMap<i32, Matrix>,
    ) -> Result<Self, LinError> {
        for (&d, m) in &matrices {
            let want = (target.dim(d + shift), source.dim(d));
            if (m.nrows(), m.ncols()) != want {
                return Err(LinError::Shape(format!(
                    "degree {d}: matrix is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    want.0,
                    want.1
                )));
            }
        }
        Ok(GradedMap {
            source,
            target,
            shift,
            matrices,
        })
    }

    pub fn matrix(&self, degree: i32) -> Matrix {
        self.matrices.get(&degree).cloned().unwrap_or_else(|| {
            Matrix::zeros(self.target.dim(degree + self.shift), self.source.dim(degree))
        })
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &GradedMap) -> Result<GradedMap, LinError> {
        if other.target != self.source {
            return Err(LinError::Shape("composition of incompatible maps".into()));
        }
        let mats = other
            .source
            .degrees()
            .into_iter()
            .map(|d| (d, self.matrix(d + other.shift).mul(&other.matrix(d))))
            .collect();
        GradedMap::new(
            other.source.clone(),
            self.target.clone(),
            self.shift + other.shift,
            mats,
        )
    }
}

/// Basis of `ker m` in `degree`, as columns over the source basis.
pub fn kernel_basis(m: &GradedMap, degree: i32) -> Result<Matrix, LinError> {
    match m.source.range() {
        Some((lo, hi)) if (lo..=hi).contains(&degree) => Ok(m.matrix(degree).kernel()),
        _ => Err(LinError::DegreeOutOfRange(degree)),
    }
}

/// Bounded cochain complex `C^lo → … → C^hi`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Complex {
    lo: i32,
    dims: Vec<usize>,
    diffs: Vec<Matrix>,
}

impl Complex {
    /// `diffs[i]` maps `C^{lo+i}` to `C^{lo+i+1}`.
    pub fn new(lo: i32, dims: Vec<usize>, diffs: Vec<Matrix>) -> Result<Self, LinError> {
        if diffs.len() + 1 != dims.len().max(1) && !(dims.is_empty() && diffs.is_empty()) {
            return Err(LinError::Shape("need one differential between consecutive terms".into()));
        }
        for (i, d) in diffs.iter().enumerate() {
            if (d.nrows(), d.ncols()) != (dims[i + 1], dims[i]) {
                return Err(LinError::Shape(format!("differential out of degree {}", lo + i as i32)));
            }
        }
        Ok(Complex { lo, dims, diffs })
    }

    pub fn from_graded_map(d: &GradedMap) -> Result<Self, LinError> {
        if d.shift != 1 || d.source != d.target {
            return Err(LinError::Shape("a differential is an endomorphism of degree +1".into()));
        }
        let Some((lo, hi)) = d.source.range() else {
            return Complex::new(0, vec![], vec![]);
        };
        let dims = (lo..=hi).map(|n| d.source.dim(n)).collect();
        let diffs = (lo..hi).map(|n| d.matrix(n)).collect();
        Complex::new(lo, dims, diffs)
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.dims.len() as i32 - 1
    }

    pub fn dim(&self, n: i32) -> usize {
        if n < self.lo || n > self.hi() {
            0
        } else {
            self.dims[(n - self.lo) as usize]
        }
    }

    /// Differential out of degree `n`; zero outside the stored range.
    pub fn d(&self, n: i32) -> Matrix {
        if n >= self.lo && n < self.hi() {
            self.diffs[(n - self.lo) as usize].clone()
        } else {
            Matrix::zeros(self.dim(n + 1), self.dim(n))
        }
    }

    pub fn check(&self) -> Result<(), LinError> {
        for n in self.lo..self.hi() {
            if !self.d(n + 1).mul(&self.d(n)).is_zero() {
                return Err(LinError::NotAComplex(n));
            }
        }
        Ok(())
    }
}

/// `H^n` with chosen cocycle representatives and a projection to class
/// coordinates.
#[derive(Clone, Debug)]
pub struct Cohomology {
    pub degree: i32,
    pub dim: usize,
    pub representatives: Vec<Vec<Scalar>>,
    ambient: usize,
    differential: Matrix,
    boundaries: Echelon,
    classes: Echelon,
}

impl Cohomology {
    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn is_coboundary(&self, z: &[Scalar]) -> bool {
        self.boundaries.contains(&sparse_from_dense(z))
    }

    /// Class coordinates of a cocycle over the chosen representatives.
    pub fn project(&self, z: &[Scalar]) -> Result<Vec<Scalar>, LinError> {
        if z.len() != self.ambient {
            return Err(LinError::Shape("cocycle has the wrong length".into()));
        }
        if self.differential.apply(z).iter().any(|x| !x.is_zero()) {
            return Err(LinError::NotACocycle);
        }
        let rem = self.boundaries.reduce(&sparse_from_dense(z)).remainder;
        let comb = self
            .classes
            .express(&rem)
            .expect("cocycles lie in boundaries plus representatives");
        Ok(dense_from_sparse(&comb, self.dim))
    }

    /// A cochain whose coboundary is `z`, when `z` is exact.
    pub fn primitive(&self, d_prev: &Matrix, z: &[Scalar]) -> Option<Vec<Scalar>> {
        d_prev.solve(z)
    }
}

pub fn cohomology(c: &Complex, n: i32) -> Result<Cohomology, LinError> {
    c.check()?;
    let dn = c.d(n);
    let cocycles = dn.kernel_vectors();
    let boundaries = c.d(n - 1).column_echelon();
    let mut span = boundaries.clone();
    let mut representatives = Vec::new();
    for z in cocycles {
        if span.insert(&sparse_from_dense(&z)).is_some() {
            representatives.push(z);
        }
    }
    let mut classes = Echelon::new();
    for z in &representatives {
        let rem = boundaries.reduce(&sparse_from_dense(z)).remainder;
        classes.insert(&rem);
    }
    Ok(Cohomology {
        degree: n,
        dim: representatives.len(),
        representatives,
        ambient: c.dim(n),
        differential: dn,
        boundaries,
        classes,
    })
}

/// Morphism of complexes `source → target`, one matrix per degree.
#[derive(Clone, Debug)]
pub struct ChainMap {
    pub source: Complex,
    pub target: Complex,
    maps: BTreeMap<i32, Matrix>,
}

impl ChainMap {
    pub fn new(source: Complex, target: Complex, maps: BTreeMap<i32, Matrix>) -> Result<Self, LinError> {
        for (&n, m) in &maps {
            if (m.nrows(), m.ncols()) != (target.dim(n), source.dim(n)) {
                return Err(LinError::Shape(format!("chain map in degree {n}")));
            }
        }
        let f = ChainMap { source, target, maps };
        f.check()?;
        Ok(f)
    }

    pub fn map(&self, n: i32) -> Matrix {
        self.maps
            .get(&n)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(self.target.dim(n), self.source.dim(n)))
    }

    fn check(&self) -> Result<(), LinError> {
        let lo = self.source.lo().min(self.target.lo()) - 1;
        let hi = self.source.hi().max(self.target.hi()) + 1;
        for n in lo..=hi {
            let lhs = self.map(n + 1).mul(&self.source.d(n));
            let rhs = self.target.d(n).mul(&self.map(n));
            if lhs != rhs {
                return Err(LinError::NotAChainMap(n));
            }
        }
        Ok(())
    }
}

/// The cone complex with `C^n = A^n ⊕ B^{n-1}` and
/// `d(a, b) = (d_A a, φ(a) - d_B b)`.
pub fn cone(phi: &ChainMap) -> Result<Complex, LinError> {
    let a = &phi.source;
    let b = &phi.target;
    let lo = a.lo().min(b.lo() + 1);
    let hi = a.hi().max(b.hi() + 1);
    let dim = |n: i32| a.dim(n) + b.dim(n - 1);
    let dims: Vec<usize> = (lo..=hi).map(dim).collect();
    let mut diffs = Vec::new();
    for n in lo..hi {
        let mut m = Matrix::zeros(dim(n + 1), dim(n));
        m.set_block(0, 0, &a.d(n));
        m.set_block(a.dim(n + 1), 0, &phi.map(n));
        m.set_block(a.dim(n + 1), a.dim(n), &b.d(n - 1).scale(&-Scalar::one()));
        diffs.push(m);
    }
    let c = Complex::new(lo, dims, diffs)?;
    c.check()?;
    Ok(c)
}

pub fn cone_cohomology(phi: &ChainMap, n: i32) -> Result<Cohomology, LinError> {
    cohomology(&cone(phi)?, n)
}

/// Order in which candidate pivot columns are scanned when choosing sections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PivotOrder {
    #[default]
    Forward,
    Reverse,
}

/// Right inverse of a surjective matrix, built from the first independent
/// columns in basis order.
pub fn choose_section(surjection: &Matrix) -> Result<Matrix, LinError> {
    choose_section_with(surjection, PivotOrder::Forward)
}

pub fn choose_section_with(s: &Matrix, order: PivotOrder) -> Result<Matrix, LinError> {
    let m = s.nrows();
    let n = s.ncols();
    let cols: Vec<usize> = match order {
        PivotOrder::Forward => (0..n).collect(),
        PivotOrder::Reverse => (0..n).rev().collect(),
    };
    let mut e = Echelon::new();
    let mut chosen = Vec::new();
    for &j in &cols {
        if chosen.len() == m {
            break;
        }
        if e.insert(&s.sparse_column(j)).is_some() {
            chosen.push(j);
        }
    }
    if chosen.len() < m {
        return Err(LinError::NotSurjective {
            rank: chosen.len(),
            target: m,
        });
    }
    chosen.sort_unstable();
    let mut sub = Matrix::zeros(m, m);
    for (c, &j) in chosen.iter().enumerate() {
        for i in 0..m {
            sub.set(i, c, s.get(i, j).clone());
        }
    }
    let inv = sub.inverse().expect("chosen columns are independent");
    let mut sec = Matrix::zeros(n, m);
    for (c, &j) in chosen.iter().enumerate() {
        for k in 0..m {
            sec.set(j, k, inv.get(c, k).clone());
        }
    }
    Ok(sec)
}

pub fn choose_section_graded(map: &GradedMap, degree: i32) -> Result<GradedMap, LinError> {
    let sec = choose_section(&map.matrix(degree))?;
    let mut mats = BTreeMap::new();
    mats.insert(degree + map.shift, sec);
    GradedMap::new(map.target.clone(), map.source.clone(), -map.shift, mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space(dims: &[(i32, usize)]) -> GradedSpace {
        GradedSpace::new(
            dims.iter()
                .map(|&(d, n)| (d, (0..n).map(|i| format!("e{d}_{i}")).collect()))
                .collect(),
        )
        .unwrap()
    }

    /// Fraction-free elimination over the integers, kept separate from the
    /// sparse echelon code it checks.
    fn bareiss_rank(rows: &[Vec<i64>]) -> usize {
        let mut a: Vec<Vec<i128>> = rows.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
        let (m, n) = (a.len(), a.first().map_or(0, Vec::len));
        let mut rank = 0;
        let mut prev = 1i128;
        for col in 0..n {
            let Some(p) = (rank..m).find(|&i| a[i][col] != 0) else { continue };
            a.swap(rank, p);
            for i in rank + 1..m {
                for j in col + 1..n {
                    a[i][j] = (a[i][j] * a[rank][col] - a[i][col] * a[rank][j]) / prev;
                }
                a[i][col] = 0;
            }
            prev = a[rank][col];
            rank += 1;
        }
        rank
    }

    #[test]
    fn kernel_of_identity_and_zero() {
        let s = space(&[(0, 3)]);
        let id = GradedMap::new(s.clone(), s.clone(), 0, [(0, Matrix::identity(3))].into()).unwrap();
        assert_eq!(kernel_basis(&id, 0).unwrap().ncols(), 0);
        let zero = GradedMap::new(s.clone(), s.clone(), 0, BTreeMap::new()).unwrap();
        assert_eq!(kernel_basis(&zero, 0).unwrap().ncols(), 3);
        assert_eq!(kernel_basis(&zero, 5), Err(LinError::DegreeOutOfRange(5)));
    }

    #[test]
    fn kernel_of_rank_three_4x5() {
        let rows = vec![
            vec![1, 2, 0, -1, 3],
            vec![0, 1, 1, 2, -1],
            vec![2, 0, -3, 1, 1],
            vec![3, 3, -2, 2, 3],
        ];
        assert_eq!(bareiss_rank(&rows), 3);
        let m = Matrix::from_i64(4, 5, &rows.concat());
        let k = m.kernel();
        assert_eq!(k.ncols(), 2);
        assert!(m.mul(&k).is_zero());
        assert_eq!(k.rank(), 2);
    }

    #[test]
    fn cohomology_examples() {
        let c = Complex::new(0, vec![1, 1], vec![Matrix::identity(1)]).unwrap();
        assert_eq!(cohomology(&c, 0).unwrap().dim, 0);
        assert_eq!(cohomology(&c, 1).unwrap().dim, 0);

        let z = Complex::new(0, vec![2, 3, 1], vec![Matrix::zeros(3, 2), Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(
            (0..3).map(|n| cohomology(&z, n).unwrap().dim).collect::<Vec<_>>(),
            vec![2, 3, 1]
        );

        // H^0 = ker [1 1] has dimension 2 - rank 1.
        let c = Complex::new(0, vec![2, 1], vec![Matrix::from_i64(1, 2, &[1, 1])]).unwrap();
        let h0 = cohomology(&c, 0).unwrap();
        assert_eq!(h0.dim, 1);
        assert_eq!(cohomology(&c, 1).unwrap().dim, 0);
        assert_eq!(h0.project(&[int(3), int(-3)]).unwrap(), vec![int(-3)]);
        assert_eq!(h0.project(&[int(1), int(0)]), Err(LinError::NotACocycle));
    }

    #[test]
    fn non_complex_is_reported_with_degree() {
        let c = Complex::new(
            0,
            vec![1, 1, 1],
            vec![Matrix::identity(1), Matrix::identity(1)],
        )
        .unwrap();
        assert_eq!(cohomology(&c, 1).unwrap_err(), LinError::NotAComplex(0));
    }

    #[test]
    fn cone_of_identity_is_acyclic() {
        let a = Complex::new(0, vec![2, 2], vec![Matrix::from_i64(2, 2, &[1, 0, 0, 0])]).unwrap();
        let maps = [(0, Matrix::identity(2)), (1, Matrix::identity(2))].into();
        let phi = ChainMap::new(a.clone(), a, maps).unwrap();
        let c = cone(&phi).unwrap();
        for n in c.lo()..=c.hi() {
            assert_eq!(cone_cohomology(&phi, n).unwrap().dim, 0);
        }
    }

    #[test]
    fn cone_of_zero_map_from_degree_two() {
        let a = Complex::new(2, vec![1], vec![]).unwrap();
        let b = Complex::new(2, vec![0], vec![]).unwrap();
        let phi = ChainMap::new(a, b, BTreeMap::new()).unwrap();
        assert_eq!(cone_cohomology(&phi, 2).unwrap().dim, 1);
    }

    #[test]
    fn cone_of_symplectic_genus_one_inclusion() {
        // Exterior algebra on x, y mapping onto the genus-1 cohomology ring in
        // degrees 0..2; the cup product Λ² → H² is an isomorphism.
        let m = Complex::new(0, vec![1, 2, 1], vec![Matrix::zeros(2, 1), Matrix::zeros(1, 2)]).unwrap();
        let maps = [(0, Matrix::identity(1)), (1, Matrix::identity(2)), (2, Matrix::identity(1))].into();
        let phi = ChainMap::new(m.clone(), m, maps).unwrap();
        assert_eq!(cone_cohomology(&phi, 2).unwrap().dim, 0);
    }

    #[test]
    fn chain_map_violation_is_reported() {
        let a = Complex::new(0, vec![1, 1], vec![Matrix::identity(1)]).unwrap();
        let b = Complex::new(0, vec![1, 1], vec![Matrix::zeros(1, 1)]).unwrap();
        let maps = [(0, Matrix::identity(1)), (1, Matrix::identity(1))].into();
        assert!(matches!(ChainMap::new(a, b, maps), Err(LinError::NotAChainMap(0))));
    }

    #[test]
    fn section_examples() {
        assert_eq!(choose_section(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        let proj = Matrix::from_i64(1, 2, &[1, 0]);
        assert_eq!(choose_section(&proj).unwrap(), Matrix::from_i64(2, 1, &[1, 0]));
        let empty = Matrix::zeros(0, 4);
        let s = choose_section(&empty).unwrap();
        assert_eq!((s.nrows(), s.ncols()), (4, 0));
        assert!(matches!(
            choose_section(&Matrix::zeros(1, 2)),
            Err(LinError::NotSurjective { rank: 0, target: 1 })
        ));
        let rev = choose_section_with(&Matrix::from_i64(1, 2, &[1, 1]), PivotOrder::Reverse).unwrap();
        assert_eq!(rev, Matrix::from_i64(2, 1, &[0, 1]));
    }

    #[test]
    fn scalar_round_trip() {
        for s in ["3/4", "-7/1", "0/1"] {
            assert_eq!(format_scalar(&parse_scalar(s).unwrap()), s);
        }
        assert_eq!(parse_scalar("6/-4").unwrap(), frac(-3, 2));
        assert!(parse_scalar("1/0").is_err());
        assert!(parse_scalar("x").is_err());
    }

    #[test]
    fn solve_and_inverse() {
        let a = Matrix::from_i64(2, 3, &[1, 2, 3, 0, 1, 1]);
        let x = a.solve(&[int(1), int(2)]).unwrap();
        assert_eq!(a.apply(&x), vec![int(1), int(2)]);
        assert!(Matrix::from_i64(2, 2, &[1, 1, 1, 1]).solve(&[int(0), int(1)]).is_none());
        let m = Matrix::from_i64(2, 2, &[2, 1, 1, 1]);
        assert_eq!(m.mul(&m.inverse().unwrap()), Matrix::identity(2));
    }

    fn small_matrix(max_dim: usize) -> impl Strategy<Value = (usize, usize, Vec<i64>)> {
        (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), proptest::collection::vec(-3i64..=3, r * c))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rank_nullity((r, c, e) in small_matrix(6), den in 1i64..5) {
            let m = Matrix::from_i64(r, c, &e).scale(&frac(1, den));
            let k = m.kernel();
            prop_assert!(m.mul(&k).is_zero());
            prop_assert_eq!(k.ncols() + m.rank(), c);
            prop_assert_eq!(m.rank(), m.transpose().rank());
            let rows: Vec<Vec<i64>> = e.chunks(c).map(|x| x.to_vec()).collect();
            prop_assert_eq!(m.rank(), bareiss_rank(&rows));
        }

        #[test]
        fn section_is_right_inverse((r, c, e) in small_matrix(5)) {
            let m = Matrix::from_i64(r, c, &e);
            match choose_section(&m) {
                Ok(s) => prop_assert_eq!(m.mul(&s), Matrix::identity(r)),
                Err(LinError::NotSurjective { rank, .. }) => prop_assert!(rank < r && rank == m.rank()),
                Err(other) => prop_assert!(false, "unexpected {other}"),
            }
        }

        #[test]
        fn zero_differential_cohomology_is_the_term(dims in proptest::collection::vec(0usize..4, 1..4)) {
            let diffs = dims.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
            let c = Complex::new(0, dims.clone(), diffs).unwrap();
            for (n, &d) in dims.iter().enumerate() {
                prop_assert_eq!(cohomology(&c, n as i32).unwrap().dim, d);
            }
        }

        #[test]
        fn cone_sequence_balance(
            d0 in proptest::collection::vec(-2i64..=2, 6),
            y in proptest::collection::vec(-2i64..=2, 9),
            h in proptest::collection::vec(-2i64..=2, 15),
            c in -2i64..=2,
        ) {
            // A: Q^2 -> Q^3 -> Q^3, with d1 built from left annihilators of d0.
            let d0 = Matrix::from_i64(3, 2, &d0);
            let ann = d0.transpose().kernel();
            let y = Matrix::from_i64(3, 3, &y);
            let mut ymat = Matrix::zeros(3, ann.ncols());
            for i in 0..3 {
                for j in 0..ann.ncols() {
                    ymat.set(i, j, y.get(i, j).clone());
                }
            }
            let d1 = ymat.mul(&ann.transpose());
            let a = Complex::new(0, vec![2, 3, 3], vec![d0.clone(), d1.clone()]).unwrap();
            // phi = c·id + d h + h d is a chain endomorphism homotopic to c·id.
            let h1 = Matrix::from_i64(2, 3, &h[0..6]);
            let h2 = Matrix::from_i64(3, 3, &h[6..15]);
            let id = |n| Matrix::identity(n).scale(&int(c));
            let p0 = id(2).add(&h1.mul(&d0));
            let p1 = id(3).add(&d0.mul(&h1)).add(&h2.mul(&d1));
            let p2 = id(3).add(&d1.mul(&h2));
            let phi = ChainMap::new(a.clone(), a.clone(), [(0, p0), (1, p1), (2, p2)].into()).unwrap();
            let cc = cone(&phi).unwrap();
            let ha = |n: i32| cohomology(&a, n).unwrap().dim as i64;
            let hc = |n: i32| cohomology(&cc, n).unwrap().dim as i64;
            let mut balance = 0i64;
            for n in -1i32..=4 {
                let sign = if n.rem_euclid(2) == 0 { 1 } else { -1 };
                balance += sign * (ha(n) - ha(n) - hc(n));
                if c != 0 {
                    prop_assert_eq!(hc(n), 0);
                } else {
                    prop_assert_eq!(hc(n), ha(n) + ha(n - 1));
                }
            }
            prop_assert_eq!(balance, 0);
        }
    }
}
