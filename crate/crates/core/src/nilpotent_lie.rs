//! Truncated nilpotent Lie algebras over Q.
//!
//! Every algebra is a quotient of a free Lie algebra truncated at class `q`,
//! written in the Lyndon basis with standard bracketing. Quotient bases are
//! the Lyndon words left over after echelon reduction of the ideal, with
//! columns ordered by degree, so the basis is adapted to the lower central
//! filtration even for inhomogeneous relators.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactlin::{axpy, format_scalar, int, parse_scalar, scaled, Echelon, Matrix, Scalar, SparseVec};

pub type Word = Vec<u8>;
type Poly = BTreeMap<Word, Scalar>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LieError {
    #[error("truncation level must be at least 1")]
    BadLevel,
    #[error("at most 255 generators are supported")]
    TooManyGenerators,
    #[error("duplicate generator {0:?}")]
    DuplicateGenerator(String),
    #[error("unknown generator {0:?}")]
    UnknownGenerator(String),
    #[error("element does not belong to this algebra")]
    Mismatch,
    #[error("relator starts in degree {degree}, above the truncation {q}")]
    RelatorTooDeep { degree: usize, q: usize },
    #[error("not an automorphism: {0}")]
    NotAutomorphism(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("undecided: {0}")]
    Undecided(String),
}

/// Lyndon words over `0..k` of length `1..=q`, sorted by length, then
/// lexicographically.
pub fn lyndon_words(k: usize, q: usize) -> Vec<Word> {
    let mut out = Vec::new();
    if k == 0 || q == 0 {
        return out;
    }
    let top = (k - 1) as u8;
    let mut w: Word = vec![0];
    loop {
        out.push(w.clone());
        let m = w.len();
        while w.len() < q {
            let c = w[w.len() - m];
            w.push(c);
        }
        while w.last() == Some(&top) {
            w.pop();
        }
        match w.last_mut() {
            Some(l) => *l += 1,
            None => break,
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn moebius(mut n: usize) -> i128 {
    let mut result = 1i128;
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            n /= p;
            if n.is_multiple_of(p) {
                return 0;
            }
            result = -result;
        }
        p += 1;
    }
    if n > 1 {
        result = -result;
    }
    result
}

/// Witt dimension of the degree-`n` part of the free Lie algebra on `k`
/// generators.
pub fn witt_dimension(k: usize, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let total: i128 = (1..=n)
        .filter(|d| n.is_multiple_of(*d))
        .map(|d| moebius(d) * (k as i128).pow((n / d) as u32))
        .sum();
    (total / n as i128) as usize
}

/// Witt dimensions for degrees `1..=q`; small cases are re-counted by
/// enumerating Lyndon words.
pub fn lyndon_dims(k: usize, q: usize) -> Vec<usize> {
    let dims: Vec<usize> = (1..=q).map(|n| witt_dimension(k, n)).collect();
    if k > 0 && k <= 255 && (k as f64).powi(q as i32) <= 2e5 {
        let mut counted = vec![0usize; q];
        for w in lyndon_words(k, q) {
            counted[w.len() - 1] += 1;
        }
        assert_eq!(counted, dims, "Witt formula disagrees with Lyndon enumeration");
    }
    dims
}

fn poly_mul(a: &Poly, b: &Poly, q: usize) -> Poly {
    let mut out = Poly::new();
    for (u, c) in a {
        for (v, e) in b {
            if u.len() + v.len() > q {
                continue;
            }
            let mut w = u.clone();
            w.extend_from_slice(v);
            let entry = out.entry(w).or_insert_with(Scalar::zero);
            *entry += c * e;
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

fn poly_axpy(acc: &mut Poly, c: &Scalar, p: &Poly) {
    for (w, x) in p {
        let entry = acc.entry(w.clone()).or_insert_with(Scalar::zero);
        *entry += c * x;
    }
    acc.retain(|_, c| !c.is_zero());
}

/// Free Lie algebra on `k` letters truncated above degree `q`, in the
/// Lyndon basis. Index order is degree, then lexicographic.
#[derive(Debug)]
pub struct FreeLie {
    k: usize,
    q: usize,
    words: Vec<Word>,
    degree: Vec<usize>,
    offsets: Vec<usize>,
    index: HashMap<Word, usize>,
    factor: Vec<Option<(usize, usize)>>,
    expansion: Vec<Poly>,
    table: HashMap<(usize, usize), SparseVec>,
}

impl FreeLie {
    pub fn new(k: usize, q: usize) -> FreeLie {
        let words = lyndon_words(k, q);
        let degree: Vec<usize> = words.iter().map(Vec::len).collect();
        let mut offsets = vec![0usize; q + 2];
        for n in 1..=q + 1 {
            offsets[n] = degree.iter().filter(|&&d| d < n).count();
        }
        let index: HashMap<Word, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let factor: Vec<Option<(usize, usize)>> = words
            .iter()
            .map(|w| {
                (1..w.len()).find_map(|s| {
                    let v = index.get(&w[s..])?;
                    Some((index[&w[..s]], *v))
                })
            })
            .collect();
        let mut expansion: Vec<Poly> = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            let p = match factor[i] {
                None => [(w.clone(), Scalar::one())].into(),
                Some((u, v)) => {
                    let mut p = poly_mul(&expansion[u], &expansion[v], q);
                    poly_axpy(&mut p, &-Scalar::one(), &poly_mul(&expansion[v], &expansion[u], q));
                    p
                }
            };
            expansion.push(p);
        }
        let mut free = FreeLie {
            k,
            q,
            words,
            degree,
            offsets,
            index,
            factor,
            expansion,
            table: HashMap::new(),
        };
        let n = free.words.len();
        let mut table = HashMap::new();
        for i in 0..n {
            for j in i + 1..n {
                if free.degree[i] + free.degree[j] > q {
                    break;
                }
                let mut p = poly_mul(&free.expansion[i], &free.expansion[j], q);
                poly_axpy(&mut p, &-Scalar::one(), &poly_mul(&free.expansion[j], &free.expansion[i], q));
                let v = free.decompose(&p);
                if !v.is_empty() {
                    table.insert((i, j), v);
                }
            }
        }
        free.table = table;
        free
    }

    pub fn dim(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, i: usize) -> &Word {
        &self.words[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    /// Standard factorization `(u, v)` of a Lyndon word of length ≥ 2.
    pub fn factor(&self, i: usize) -> Option<(usize, usize)> {
        self.factor[i]
    }

    /// Expansion of the standard bracketing in the free associative algebra.
    pub fn expansion(&self, i: usize) -> &BTreeMap<Word, Scalar> {
        &self.expansion[i]
    }

    pub fn index_of(&self, w: &[u8]) -> Option<usize> {
        self.index.get(w).copied()
    }

    /// Lyndon coordinates of a Lie polynomial. The smallest word of a Lie
    /// polynomial is Lyndon and occurs in its own expansion with coefficient
    /// one, so peeling it off terminates.
    pub fn decompose(&self, p: &BTreeMap<Word, Scalar>) -> SparseVec {
        let mut rest = p.clone();
        let mut out = SparseVec::new();
        while let Some((w, c)) = rest.iter().next().map(|(w, c)| (w.clone(), c.clone())) {
            let i = *self.index.get(&w).expect("input is not a Lie polynomial");
            poly_axpy(&mut rest, &-c.clone(), &self.expansion[i]);
            out.insert(i, c);
        }
        out
    }

    pub fn bracket_basis(&self, i: usize, j: usize) -> SparseVec {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => SparseVec::new(),
            std::cmp::Ordering::Less => self.table.get(&(i, j)).cloned().unwrap_or_default(),
            std::cmp::Ordering::Greater => scaled(&self.table.get(&(j, i)).cloned().unwrap_or_default(), &-Scalar::one()),
        }
    }

    pub fn bracket(&self, x: &SparseVec, y: &SparseVec) -> SparseVec {
        let mut out = SparseVec::new();
        for (&i, a) in x {
            for (&j, b) in y {
                if self.degree[i] + self.degree[j] <= self.q {
                    axpy(&mut out, &(a * b), &self.bracket_basis(i, j));
                }
            }
        }
        out
    }

    /// Column key reversing the order inside each degree, so echelon pivots
    /// fall on the last word of the lowest degree present.
    fn key(&self, i: usize) -> usize {
        let d = self.degree[i];
        self.offsets[d] + self.offsets[d + 1] - 1 - i
    }

    fn keyed(&self, v: &SparseVec) -> SparseVec {
        v.iter().map(|(&i, c)| (self.key(i), c.clone())).collect()
    }

    fn label(&self, i: usize, names: &[String]) -> String {
        match self.factor[i] {
            None => names[self.words[i][0] as usize].clone(),
            Some((u, v)) => format!("[{},{}]", self.label(u, names), self.label(v, names)),
        }
    }
}

/// Abstract finite Lie algebra given by structure constants on a basis with
/// filtration degrees; brackets are stored for `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LieTable {
    pub q: usize,
    pub degrees: Vec<usize>,
    pub labels: Vec<String>,
    brackets: BTreeMap<(usize, usize), SparseVec>,
}

impl LieTable {
    pub fn new(q: usize, degrees: Vec<usize>, labels: Vec<String>) -> LieTable {
        LieTable {
            q,
            degrees,
            labels,
            brackets: BTreeMap::new(),
        }
    }

    /// Sets `[e_i, e_j]` for `i < j`.
    pub fn set(&mut self, i: usize, j: usize, v: SparseVec) {
        assert!(i < j);
        if v.is_empty() {
            self.brackets.remove(&(i, j));
        } else {
            self.brackets.insert((i, j), v);
        }
    }

    pub fn dim(&self) -> usize {
        self.degrees.len()
    }

    pub fn bracket_basis(&self, i: usize, j: usize) -> SparseVec {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => SparseVec::new(),
            std::cmp::Ordering::Less => self.brackets.get(&(i, j)).cloned().unwrap_or_default(),
            std::cmp::Ordering::Greater => {
                scaled(&self.brackets.get(&(j, i)).cloned().unwrap_or_default(), &-Scalar::one())
            }
        }
    }

    pub fn bracket(&self, x: &SparseVec, y: &SparseVec) -> SparseVec {
        let mut out = SparseVec::new();
        for (&i, a) in x {
            for (&j, b) in y {
                if self.degrees[i] + self.degrees[j] <= self.q {
                    axpy(&mut out, &(a * b), &self.bracket_basis(i, j));
                }
            }
        }
        out
    }

    /// Jacobi on every basis triple within the truncation, and
    /// `[Fil^a, Fil^b] ⊆ Fil^{a+b}`.
    pub fn check_jacobi(&self) -> Result<(), String> {
        let n = self.dim();
        for i in 0..n {
            for j in i + 1..n {
                let v = self.bracket_basis(i, j);
                if v.keys().any(|&k| self.degrees[k] < self.degrees[i] + self.degrees[j]) {
                    return Err(format!("[{}, {}] drops filtration", self.labels[i], self.labels[j]));
                }
            }
        }
        let e = |i: usize| -> SparseVec { [(i, Scalar::one())].into() };
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if self.degrees[i] + self.degrees[j] + self.degrees[k] > self.q {
                        continue;
                    }
                    let mut s = self.bracket(&e(i), &self.bracket_basis(j, k));
                    axpy(&mut s, &Scalar::one(), &self.bracket(&e(j), &self.bracket_basis(k, i)));
                    axpy(&mut s, &Scalar::one(), &self.bracket(&e(k), &self.bracket_basis(i, j)));
                    if !s.is_empty() {
                        return Err(format!(
                            "Jacobi fails on ({}, {}, {})",
                            self.labels[i], self.labels[j], self.labels[k]
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Coordinates over the basis of a specific [`NilpotentLie`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LieElement {
    pub coords: SparseVec,
}

impl LieElement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn add(&self, other: &LieElement) -> LieElement {
        let mut c = self.coords.clone();
        axpy(&mut c, &Scalar::one(), &other.coords);
        LieElement { coords: c }
    }

    pub fn sub(&self, other: &LieElement) -> LieElement {
        let mut c = self.coords.clone();
        axpy(&mut c, &-Scalar::one(), &other.coords);
        LieElement { coords: c }
    }

    pub fn scale(&self, s: &Scalar) -> LieElement {
        LieElement {
            coords: scaled(&self.coords, s),
        }
    }

    pub fn neg(&self) -> LieElement {
        self.scale(&-Scalar::one())
    }
}

/// `exp(ℓ)` in the Malcev group of the algebra.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupElement(pub LieElement);

/// Coefficients of `log(e^X e^Y)` in the Lyndon basis on two letters.
#[derive(Debug)]
struct BchSeries {
    free2: FreeLie,
    coeffs: SparseVec,
}

impl BchSeries {
    fn new(q: usize) -> BchSeries {
        let free2 = FreeLie::new(2, q);
        let exp = |letter: u8| -> Poly {
            let x: Poly = [(vec![letter], Scalar::one())].into();
            let mut acc: Poly = [(Vec::new(), Scalar::one())].into();
            let mut power: Poly = acc.clone();
            let mut fact = Scalar::one();
            for n in 1..=q {
                power = poly_mul(&power, &x, q);
                fact *= int(n as i64);
                poly_axpy(&mut acc, &fact.recip(), &power);
            }
            acc
        };
        let mut z = poly_mul(&exp(0), &exp(1), q);
        poly_axpy(&mut z, &-Scalar::one(), &[(Vec::new(), Scalar::one())].into());
        let mut log = Poly::new();
        let mut power: Poly = [(Vec::new(), Scalar::one())].into();
        for n in 1..=q {
            power = poly_mul(&power, &z, q);
            let c = Scalar::new(if n % 2 == 1 { 1.into() } else { (-1).into() }, (n as i64).into());
            poly_axpy(&mut log, &c, &power);
        }
        let coeffs = free2.decompose(&log);
        BchSeries { free2, coeffs }
    }
}

/// Truncated nilpotent Lie algebra presented as `F / I` with `F` free on the
/// generators and `I` the ideal of the relators.
#[derive(Clone, Debug)]
pub struct NilpotentLie {
    generators: Vec<String>,
    free: Arc<FreeLie>,
    relators: Vec<SparseVec>,
    ideal: Echelon,
    basis: Vec<usize>,
    position: HashMap<usize, usize>,
    table: LieTable,
    graded: bool,
    bch: Arc<BchSeries>,
}

pub fn free_nilpotent(generators: &[&str], q: usize) -> Result<NilpotentLie, LieError> {
    let names: Vec<String> = generators.iter().map(|s| s.to_string()).collect();
    NilpotentLie::free(names, q)
}

impl NilpotentLie {
    pub fn free(generators: Vec<String>, q: usize) -> Result<NilpotentLie, LieError> {
        if q == 0 {
            return Err(LieError::BadLevel);
        }
        if generators.len() > 255 {
            return Err(LieError::TooManyGenerators);
        }
        for (i, g) in generators.iter().enumerate() {
            if generators[..i].contains(g) {
                return Err(LieError::DuplicateGenerator(g.clone()));
            }
        }
        let free = Arc::new(FreeLie::new(generators.len(), q));
        let bch = Arc::new(BchSeries::new(q));
        Ok(Self::assemble(generators, free, Vec::new(), bch))
    }

    fn assemble(generators: Vec<String>, free: Arc<FreeLie>, relators: Vec<SparseVec>, bch: Arc<BchSeries>) -> Self {
        let mut ideal = Echelon::untracked();
        let mut queue: VecDeque<SparseVec> = relators.iter().map(|r| free.keyed(r)).collect();
        let gens: Vec<SparseVec> = (0..free.k).map(|g| [(g, Scalar::one())].into()).collect();
        let unkey: HashMap<usize, usize> = (0..free.dim()).map(|i| (free.key(i), i)).collect();
        while let Some(v) = queue.pop_front() {
            let red = ideal.reduce(&v).remainder;
            if red.is_empty() {
                continue;
            }
            ideal.insert(&red);
            let plain: SparseVec = red.iter().map(|(k, c)| (unkey[k], c.clone())).collect();
            for g in &gens {
                let b = free.bracket(g, &plain);
                if !b.is_empty() {
                    queue.push_back(free.keyed(&b));
                }
            }
        }
        let basis: Vec<usize> = (0..free.dim()).filter(|&i| !ideal.is_pivot(free.key(i))).collect();
        let position: HashMap<usize, usize> = basis.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let graded = relators
            .iter()
            .all(|r| r.keys().map(|&i| free.degree(i)).collect::<std::collections::BTreeSet<_>>().len() <= 1);
        let mut lie = NilpotentLie {
            table: LieTable::new(free.q, Vec::new(), Vec::new()),
            generators,
            free,
            relators,
            ideal,
            basis,
            position,
            graded,
            bch,
        };
        let degrees = lie.basis.iter().map(|&i| lie.free.degree(i)).collect();
        let labels = lie.basis.iter().map(|&i| lie.free.label(i, &lie.generators)).collect();
        let mut table = LieTable::new(lie.free.q, degrees, labels);
        for a in 0..lie.basis.len() {
            for b in a + 1..lie.basis.len() {
                let (i, j) = (lie.basis[a], lie.basis[b]);
                if lie.free.degree(i) + lie.free.degree(j) > lie.free.q {
                    break;
                }
                table.set(a, b, lie.reduce_free(&lie.free.bracket_basis(i, j)));
            }
        }
        lie.table = table;
        lie
    }

    /// Quotient coordinates of an element of the free algebra.
    fn reduce_free(&self, v: &SparseVec) -> SparseVec {
        let rem = self.ideal.reduce(&self.free.keyed(v)).remainder;
        let mut out = SparseVec::new();
        for (k, c) in rem {
            // The key map is an involution inside each degree block.
            let d = (1..=self.free.q).find(|&d| k < self.free.offsets[d + 1]).expect("key in range");
            let i = self.free.offsets[d] + self.free.offsets[d + 1] - 1 - k;
            out.insert(self.position[&i], c);
        }
        out
    }

    fn lift(&self, x: &LieElement) -> SparseVec {
        x.coords.iter().map(|(&p, c)| (self.basis[p], c.clone())).collect()
    }

    pub fn quotient(&self, relators: &[LieElement]) -> Result<NilpotentLie, LieError> {
        for r in relators {
            self.check(r)?;
        }
        let mut all = self.relators.clone();
        all.extend(relators.iter().map(|r| self.lift(r)).filter(|r| !r.is_empty()));
        Ok(Self::assemble(self.generators.clone(), self.free.clone(), all, self.bch.clone()))
    }

    /// Quotient by relators written as expressions in the generators.
    pub fn quotient_by_exprs(&self, relators: &[LieExpr]) -> Result<NilpotentLie, LieError> {
        let mut elems = Vec::new();
        for r in relators {
            let degree = r.min_degree();
            if degree > self.q() {
                return Err(LieError::RelatorTooDeep { degree, q: self.q() });
            }
            elems.push(self.eval(r)?);
        }
        self.quotient(&elems)
    }

    pub fn q(&self) -> usize {
        self.free.q
    }

    pub fn generators(&self) -> &[String] {
        &self.generators
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_graded(&self) -> bool {
        self.graded
    }

    pub fn table(&self) -> &LieTable {
        &self.table
    }

    pub fn degree(&self, i: usize) -> usize {
        self.table.degrees[i]
    }

    pub fn label(&self, i: usize) -> &str {
        &self.table.labels[i]
    }

    /// Dimensions of `gr^n` for `n = 1..=q`.
    pub fn gr_dims(&self) -> Vec<usize> {
        let mut dims = vec![0; self.q()];
        for &d in &self.table.degrees {
            dims[d - 1] += 1;
        }
        dims
    }

    /// Indices of the quotient basis in degree `n`.
    pub fn degree_block(&self, n: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.degree(i) == n).collect()
    }

    /// Relators in coordinates of the free algebra.
    pub fn relators_free(&self) -> &[SparseVec] {
        &self.relators
    }

    pub fn free_algebra(&self) -> &FreeLie {
        &self.free
    }

    /// Index in the free algebra of the `i`-th quotient basis element.
    pub fn free_index(&self, i: usize) -> usize {
        self.basis[i]
    }

    pub fn free_label(&self, i: usize) -> String {
        self.free.label(i, &self.generators)
    }

    pub fn check(&self, x: &LieElement) -> Result<(), LieError> {
        if x.coords.keys().any(|&k| k >= self.dim()) {
            return Err(LieError::Mismatch);
        }
        Ok(())
    }

    pub fn basis_element(&self, i: usize) -> LieElement {
        LieElement {
            coords: [(i, Scalar::one())].into(),
        }
    }

    /// Image of the `i`-th free generator.
    pub fn generator(&self, i: usize) -> LieElement {
        LieElement {
            coords: self.reduce_free(&[(i, Scalar::one())].into()),
        }
    }

    pub fn generator_by_name(&self, name: &str) -> Result<LieElement, LieError> {
        let i = self
            .generators
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| LieError::UnknownGenerator(name.to_string()))?;
        Ok(self.generator(i))
    }

    pub fn bracket(&self, x: &LieElement, y: &LieElement) -> LieElement {
        LieElement {
            coords: self.table.bracket(&x.coords, &y.coords),
        }
    }

    /// Part of `x` on basis elements of degree exactly `n`.
    pub fn component(&self, x: &LieElement, n: usize) -> LieElement {
        LieElement {
            coords: x.coords.iter().filter(|(&i, _)| self.degree(i) == n).map(|(&i, c)| (i, c.clone())).collect(),
        }
    }

    /// Largest `n` with `x ∈ Fil^n`; `None` for zero.
    pub fn filtration_degree(&self, x: &LieElement) -> Option<usize> {
        x.coords.keys().map(|&i| self.degree(i)).min()
    }

    /// Images of every free basis element under the homomorphism sending the
    /// free generators to `images`.
    fn free_images(&self, free: &FreeLie, images: &[LieElement]) -> Vec<LieElement> {
        let mut out: Vec<LieElement> = Vec::with_capacity(free.dim());
        for i in 0..free.dim() {
            let v = match free.factor(i) {
                None => images[free.word(i)[0] as usize].clone(),
                Some((u, w)) => self.bracket(&out[u], &out[w]),
            };
            out.push(v);
        }
        out
    }

    /// `Σ_k (−n)^k / k! · ad_e^k (x)`, i.e. `exp(−n·ad e)(x)`.
    pub fn ad_exp(&self, e: &LieElement, n: &Scalar, x: &LieElement) -> LieElement {
        let mut acc = x.clone();
        let mut term = x.clone();
        for k in 1..=self.q() {
            term = self.bracket(e, &term).scale(&(-n / int(k as i64)));
            if term.is_zero() {
                break;
            }
            acc = acc.add(&term);
        }
        acc
    }

    /// Group law `log(exp(x) exp(y))`.
    pub fn bch(&self, x: &GroupElement, y: &GroupElement) -> Result<GroupElement, LieError> {
        self.check(&x.0)?;
        self.check(&y.0)?;
        let images = self.free_images(&self.bch.free2, &[x.0.clone(), y.0.clone()]);
        let mut out = LieElement::zero();
        for (&i, c) in &self.bch.coeffs {
            out = out.add(&images[i].scale(c));
        }
        Ok(GroupElement(out))
    }

    /// `h⁻¹ g h`.
    pub fn conjugate(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement, LieError> {
        let hinv = GroupElement(h.0.neg());
        let left = self.bch(&hinv, g)?;
        self.bch(&left, h)
    }

    /// BCH coefficients as `(Lyndon word over {0, 1}, coefficient)`.
    pub fn bch_coefficients(&self) -> Vec<(Word, Scalar)> {
        self.bch
            .coeffs
            .iter()
            .map(|(&i, c)| (self.bch.free2.word(i).clone(), c.clone()))
            .collect()
    }

    pub fn eval(&self, e: &LieExpr) -> Result<LieElement, LieError> {
        e.eval(&|name| self.generator_by_name(name), &|x, y| self.bracket(x, y))
    }

    pub fn format(&self, x: &LieElement) -> String {
        format_terms(x.coords.iter().map(|(&i, c)| (c.clone(), self.label(i).to_string())))
    }

    pub fn element_to_json(&self, x: &LieElement) -> BTreeMap<String, String> {
        x.coords.iter().map(|(&i, c)| (self.label(i).to_string(), format_scalar(c))).collect()
    }

    pub fn element_from_json(&self, m: &BTreeMap<String, String>) -> Result<LieElement, LieError> {
        let mut coords = SparseVec::new();
        for (label, c) in m {
            let i = self
                .table
                .labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| LieError::UnknownGenerator(label.clone()))?;
            let c = parse_scalar(c).map_err(|e| LieError::Parse { pos: 0, msg: e.to_string() })?;
            if !c.is_zero() {
                coords.insert(i, c);
            }
        }
        Ok(LieElement { coords })
    }

    pub fn to_json(&self) -> LieJson {
        LieJson {
            generators: self.generators.clone(),
            q: self.q(),
            relators: self
                .relators
                .iter()
                .map(|r| r.iter().map(|(&i, c)| (self.free_label(i), format_scalar(c))).collect())
                .collect(),
            basis: self.table.labels.clone(),
            degrees: self.table.degrees.clone(),
            gr_dims: self.gr_dims(),
            graded: self.graded,
        }
    }

    pub fn from_json(j: &LieJson) -> Result<NilpotentLie, LieError> {
        let free = NilpotentLie::free(j.generators.clone(), j.q)?;
        let mut rels = Vec::new();
        for r in &j.relators {
            let mut coords = SparseVec::new();
            for (label, c) in r {
                let i = (0..free.free.dim())
                    .find(|&i| &free.free_label(i) == label)
                    .ok_or_else(|| LieError::UnknownGenerator(label.clone()))?;
                let c = parse_scalar(c).map_err(|e| LieError::Parse { pos: 0, msg: e.to_string() })?;
                coords.insert(i, c);
            }
            rels.push(coords);
        }
        Ok(Self::assemble(free.generators, free.free, rels, free.bch))
    }
}

/// Wire format of an algebra; relators are in Lyndon coordinates of the
/// free algebra.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct LieJson {
    pub generators: Vec<String>,
    pub q: usize,
    pub relators: Vec<BTreeMap<String, String>>,
    #[serde(default)]
    pub basis: Vec<String>,
    #[serde(default)]
    pub degrees: Vec<usize>,
    #[serde(default)]
    pub gr_dims: Vec<usize>,
    #[serde(default)]
    pub graded: bool,
}

/// Human-readable rational: integers print without a denominator.
pub fn display_scalar(c: &Scalar) -> String {
    if c.denom().is_one() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

fn format_terms(terms: impl Iterator<Item = (Scalar, String)>) -> String {
    let mut s = String::new();
    for (c, label) in terms {
        let neg = c.is_negative();
        let a = c.abs();
        if s.is_empty() {
            if neg {
                s.push('-');
            }
        } else {
            s.push_str(if neg { " - " } else { " + " });
        }
        if !a.is_one() {
            let _ = write!(s, "{}*", display_scalar(&a));
        }
        s.push_str(&label);
    }
    if s.is_empty() {
        s.push('0');
    }
    s
}

/// Automorphism determined by the images of the free generators.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAutomorphism {
    images: Vec<LieElement>,
    matrix: Vec<SparseVec>,
}

impl LieAutomorphism {
    /// Checks that relators map to zero, brackets are preserved and the
    /// induced map on `gr^1` is invertible.
    pub fn new(lie: &NilpotentLie, images: Vec<LieElement>) -> Result<LieAutomorphism, LieError> {
        if images.len() != lie.generators.len() {
            return Err(LieError::NotAutomorphism("one image per generator is required".into()));
        }
        for x in &images {
            lie.check(x)?;
        }
        let on_free = lie.free_images(&lie.free, &images);
        for r in &lie.relators {
            let mut img = LieElement::zero();
            for (&i, c) in r {
                img = img.add(&on_free[i].scale(c));
            }
            if !img.is_zero() {
                return Err(LieError::NotAutomorphism("a relator does not map to zero".into()));
            }
        }
        let matrix: Vec<SparseVec> = lie.basis.iter().map(|&i| on_free[i].coords.clone()).collect();
        let phi = LieAutomorphism { images, matrix };
        for a in 0..lie.dim() {
            for b in a + 1..lie.dim() {
                if lie.degree(a) + lie.degree(b) > lie.q() {
                    continue;
                }
                let lhs = phi.apply(&lie.bracket(&lie.basis_element(a), &lie.basis_element(b)));
                let rhs = lie.bracket(&phi.apply(&lie.basis_element(a)), &phi.apply(&lie.basis_element(b)));
                if lhs != rhs {
                    return Err(LieError::NotAutomorphism(format!(
                        "bracket of {} and {} not preserved",
                        lie.label(a),
                        lie.label(b)
                    )));
                }
            }
        }
        let deg1 = lie.degree_block(1);
        let pos: HashMap<usize, usize> = deg1.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut m = Matrix::zeros(deg1.len(), deg1.len());
        for (c, &i) in deg1.iter().enumerate() {
            for (k, x) in &phi.matrix[i] {
                if let Some(&r) = pos.get(k) {
                    m.set(r, c, x.clone());
                }
            }
        }
        if m.rank() != deg1.len() {
            return Err(LieError::NotAutomorphism("not invertible on the abelianization".into()));
        }
        Ok(phi)
    }

    pub fn identity(lie: &NilpotentLie) -> LieAutomorphism {
        let images = (0..lie.generators.len()).map(|i| lie.generator(i)).collect();
        LieAutomorphism::new(lie, images).expect("identity is an automorphism")
    }

    /// `x ↦ exp(−ad d)(x)`, conjugation by `exp(d)`.
    pub fn inner(lie: &NilpotentLie, d: &LieElement) -> Result<LieAutomorphism, LieError> {
        lie.check(d)?;
        let images = (0..lie.generators.len())
            .map(|i| lie.ad_exp(d, &Scalar::one(), &lie.generator(i)))
            .collect();
        LieAutomorphism::new(lie, images)
    }

    pub fn images(&self) -> &[LieElement] {
        &self.images
    }

    pub fn apply(&self, x: &LieElement) -> LieElement {
        let mut out = SparseVec::new();
        for (&i, c) in &x.coords {
            axpy(&mut out, c, &self.matrix[i]);
        }
        LieElement { coords: out }
    }

    /// `self ∘ other`.
    pub fn compose(&self, lie: &NilpotentLie, other: &LieAutomorphism) -> Result<LieAutomorphism, LieError> {
        let images = other.images.iter().map(|x| self.apply(x)).collect();
        LieAutomorphism::new(lie, images)
    }
}

/// Outcome of the inner-automorphism test at the algebra's truncation.
#[derive(Clone, Debug, PartialEq)]
pub enum InnerVerdict {
    /// `φ(x) = exp(−ad d)(x)` for every `x`; `ambiguity[n-1]` is the
    /// dimension of the degree-`n` solution space left after fixing lower
    /// degrees.
    Inner { witness: LieElement, ambiguity: Vec<usize> },
    NotInner(Obstruction),
}

impl InnerVerdict {
    pub fn is_inner(&self) -> bool {
        matches!(self, InnerVerdict::Inner { .. })
    }
}

/// The first degree `n` at which `φ(g) ≡ exp(−ad d)(g) mod Fil^{n+1}` has no
/// solution.
#[derive(Clone, Debug, PartialEq)]
pub struct Obstruction {
    pub degree: usize,
    /// `residuals[i]`: degree-`n` part of `φ(g_i) − exp(−ad d)(g_i)` for the
    /// partial witness `d` built below degree `n − 1`.
    pub residuals: Vec<LieElement>,
    /// Generator index of the first nonzero residual.
    pub generator: Option<usize>,
    /// `fixed_centralizer[m-1]`: dimension of the degree-`m` elements whose
    /// bracket with every `φ`-fixed generator vanishes in `gr^{m+1}`, for
    /// `1 ≤ m < degree`.
    pub fixed_centralizer: Vec<usize>,
    /// Partial witness accumulated before the failure.
    pub partial_witness: LieElement,
}

impl Obstruction {
    /// Largest `m` such that the `φ`-fixed generators alone force `d ∈ Fil^m`.
    pub fn forced_vanishing(&self) -> usize {
        1 + self.fixed_centralizer.iter().take_while(|&&d| d == 0).count()
    }
}

impl NilpotentLie {
    /// Decides whether `φ` is conjugation by some `exp(d)` at this
    /// truncation, solving for `d` one degree at a time.
    ///
    /// In the graded case the ambiguity at each degree is central, so the
    /// greedy particular solution loses nothing. In the filtered case a
    /// non-central ambiguity makes the procedure return `Undecided`.
    pub fn is_inner(&self, phi: &LieAutomorphism) -> Result<InnerVerdict, LieError> {
        let q = self.q();
        let gens: Vec<LieElement> = (0..self.generators.len()).map(|i| self.generator(i)).collect();
        let fixed: Vec<usize> = (0..gens.len()).filter(|&i| phi.images[i] == gens[i]).collect();
        let mut d = LieElement::zero();
        let mut ambiguity = Vec::new();
        let mut centralizer = Vec::new();
        for n in 1..=q {
            // Equation in degree n: the degree-n part of φ(g) − exp(−ad d)(g)
            // must equal −[d_{n−1}, g] in gr^n.
            let residuals: Vec<LieElement> = gens
                .iter()
                .enumerate()
                .map(|(i, g)| phi.images[i].sub(&self.ad_exp(&d, &Scalar::one(), g)))
                .collect();
            for r in &residuals {
                if let Some(m) = self.filtration_degree(r) {
                    if m < n {
                        return Err(LieError::Undecided(format!(
                            "residual left in Fil^{m} while solving degree {n}"
                        )));
                    }
                }
            }
            let comps: Vec<LieElement> = residuals.iter().map(|r| self.component(r, n)).collect();
            let unknowns = if n >= 2 { self.degree_block(n - 1) } else { Vec::new() };
            let targets = self.degree_block(n);
            let tpos: HashMap<usize, usize> = targets.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let rows = gens.len() * targets.len();
            let mut a = Matrix::zeros(rows, unknowns.len());
            let mut b = vec![Scalar::zero(); rows];
            for (gi, g) in gens.iter().enumerate() {
                for (c, &u) in unknowns.iter().enumerate() {
                    let br = self.component(&self.bracket(&self.basis_element(u), g), n);
                    for (k, x) in &br.coords {
                        a.set(gi * targets.len() + tpos[k], c, -x.clone());
                    }
                }
                for (k, x) in &comps[gi].coords {
                    b[gi * targets.len() + tpos[k]] = x.clone();
                }
            }
            let tl = targets.len();
            if n >= 2 {
                let fixed_rows: Vec<usize> = fixed
                    .iter()
                    .flat_map(|&gi| (0..tl).map(move |k| gi * tl + k))
                    .collect();
                let sub = Matrix::from_dense_columns(
                    fixed_rows.len(),
                    &(0..unknowns.len())
                        .map(|c| fixed_rows.iter().map(|&r| a.get(r, c).clone()).collect())
                        .collect::<Vec<_>>(),
                );
                centralizer.push(unknowns.len() - sub.rank());
            }
            let Some(y) = a.solve(&b) else {
                let generator = comps.iter().position(|c| !c.is_zero());
                return Ok(InnerVerdict::NotInner(Obstruction {
                    degree: n,
                    residuals: comps,
                    generator,
                    fixed_centralizer: centralizer,
                    partial_witness: d,
                }));
            };
            if n >= 2 {
                let kernel = a.kernel();
                ambiguity.push(kernel.ncols());
                if !self.graded {
                    for c in 0..kernel.ncols() {
                        let z = LieElement {
                            coords: unknowns
                                .iter()
                                .zip(kernel.column(c))
                                .filter(|(_, x)| !x.is_zero())
                                .map(|(&u, x)| (u, x))
                                .collect(),
                        };
                        if gens.iter().any(|g| !self.bracket(&z, g).is_zero()) {
                            return Err(LieError::Undecided(format!(
                                "non-central ambiguity in degree {} of a filtered algebra",
                                n - 1
                            )));
                        }
                    }
                }
                let step = LieElement {
                    coords: unknowns
                        .iter()
                        .zip(y)
                        .filter(|(_, x)| !x.is_zero())
                        .map(|(&u, x)| (u, x))
                        .collect(),
                };
                d = d.add(&step);
            }
        }
        for (i, g) in gens.iter().enumerate() {
            if phi.images[i] != self.ad_exp(&d, &Scalar::one(), g) {
                return Err(LieError::Undecided("witness fails the final check".into()));
            }
        }
        Ok(InnerVerdict::Inner { witness: d, ambiguity })
    }
}

/// Lie expression over named generators.
#[derive(Clone, Debug, PartialEq)]
pub enum LieExpr {
    Gen(String),
    Sum(Vec<(Scalar, LieExpr)>),
    Bracket(Box<LieExpr>, Box<LieExpr>),
}

impl LieExpr {
    pub fn gen(name: &str) -> LieExpr {
        LieExpr::Gen(name.to_string())
    }

    pub fn bracket(a: LieExpr, b: LieExpr) -> LieExpr {
        LieExpr::Bracket(Box::new(a), Box::new(b))
    }

    pub fn sum(terms: Vec<(Scalar, LieExpr)>) -> LieExpr {
        LieExpr::Sum(terms)
    }

    /// Structural lower bound on the filtration degree.
    pub fn min_degree(&self) -> usize {
        match self {
            LieExpr::Gen(_) => 1,
            LieExpr::Sum(ts) => ts.iter().map(|(_, t)| t.min_degree()).min().unwrap_or(usize::MAX),
            LieExpr::Bracket(a, b) => a.min_degree().saturating_add(b.min_degree()),
        }
    }

    /// Linear part over generator names, and the remaining bracket terms.
    pub fn split_linear(&self) -> (BTreeMap<String, Scalar>, Vec<(Scalar, LieExpr)>) {
        let mut lin = BTreeMap::new();
        let mut rest = Vec::new();
        self.split_into(&Scalar::one(), &mut lin, &mut rest);
        lin.retain(|_, c: &mut Scalar| !c.is_zero());
        (lin, rest)
    }

    fn split_into(&self, c: &Scalar, lin: &mut BTreeMap<String, Scalar>, rest: &mut Vec<(Scalar, LieExpr)>) {
        match self {
            LieExpr::Gen(g) => *lin.entry(g.clone()).or_insert_with(Scalar::zero) += c,
            LieExpr::Sum(ts) => {
                for (a, t) in ts {
                    t.split_into(&(c * a), lin, rest);
                }
            }
            LieExpr::Bracket(..) => rest.push((c.clone(), self.clone())),
        }
    }

    pub fn eval<L>(
        &self,
        gen: &dyn Fn(&str) -> Result<L, LieError>,
        bracket: &dyn Fn(&L, &L) -> L,
    ) -> Result<L, LieError>
    where
        L: Clone + Default + LinearLike,
    {
        match self {
            LieExpr::Gen(g) => gen(g),
            LieExpr::Sum(ts) => {
                let mut acc = L::default();
                for (c, t) in ts {
                    acc = acc.axpy(c, &t.eval(gen, bracket)?);
                }
                Ok(acc)
            }
            LieExpr::Bracket(a, b) => Ok(bracket(&a.eval(gen, bracket)?, &b.eval(gen, bracket)?)),
        }
    }

    /// Parses `2*x - [y,[x,y]] + 1/2*[x,y]`.
    pub fn parse(s: &str) -> Result<LieExpr, LieError> {
        let mut p = Parser { s: s.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }
}

impl std::fmt::Display for LieExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LieExpr::Gen(g) => write!(f, "{g}"),
            LieExpr::Bracket(a, b) => write!(f, "[{a},{b}]"),
            LieExpr::Sum(ts) => {
                let s = format_terms(ts.iter().map(|(c, t)| {
                    let inner = t.to_string();
                    let wrapped = if matches!(t, LieExpr::Sum(_)) { format!("({inner})") } else { inner };
                    (c.clone(), wrapped)
                }));
                write!(f, "{s}")
            }
        }
    }
}

/// Minimal vector-space interface used by expression evaluation.
pub trait LinearLike {
    fn axpy(&self, c: &Scalar, other: &Self) -> Self;
}

impl LinearLike for LieElement {
    fn axpy(&self, c: &Scalar, other: &Self) -> Self {
        self.add(&other.scale(c))
    }
}

impl LinearLike for SparseVec {
    fn axpy(&self, c: &Scalar, other: &Self) -> Self {
        let mut out = self.clone();
        axpy(&mut out, c, other);
        out
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> LieError {
        LieError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> Result<(), LieError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<LieExpr, LieError> {
        let mut terms = Vec::new();
        let mut sign = Scalar::one();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            sign = -sign;
        } else if self.peek() == Some(b'+') {
            self.pos += 1;
        }
        loop {
            let (c, t) = self.term()?;
            terms.push((sign * c, t));
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    sign = Scalar::one();
                }
                Some(b'-') => {
                    self.pos += 1;
                    sign = -Scalar::one();
                }
                _ => break,
            }
        }
        if terms.len() == 1 && terms[0].0.is_one() {
            return Ok(terms.pop().expect("one term").1);
        }
        Ok(LieExpr::Sum(terms))
    }

    fn term(&mut self) -> Result<(Scalar, LieExpr), LieError> {
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            let c = self.number()?;
            self.eat(b'*')?;
            Ok((c, self.atom()?))
        } else {
            Ok((Scalar::one(), self.atom()?))
        }
    }

    fn number(&mut self) -> Result<Scalar, LieError> {
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_digit() || self.s[self.pos] == b'/') {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        parse_scalar(text).map_err(|_| LieError::Parse {
            pos: start,
            msg: format!("bad coefficient {text:?}"),
        })
    }

    fn atom(&mut self) -> Result<LieExpr, LieError> {
        match self.peek() {
            Some(b'[') => {
                self.pos += 1;
                let a = self.expr()?;
                self.eat(b',')?;
                let b = self.expr()?;
                self.eat(b']')?;
                Ok(LieExpr::bracket(a, b))
            }
            Some(b'(') => {
                self.pos += 1;
                let a = self.expr()?;
                self.eat(b')')?;
                Ok(a)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && (self.s[self.pos].is_ascii_alphanumeric() || matches!(self.s[self.pos], b'_' | b'\''))
                {
                    self.pos += 1;
                }
                Ok(LieExpr::Gen(String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()))
            }
            _ => Err(self.err("expected a generator, '[' or '('")),
        }
    }
}

/// Result of presenting an algebra by generators and arbitrary relations.
#[derive(Clone, Debug)]
pub struct Presented {
    pub lie: NilpotentLie,
    /// Image of every input symbol, including eliminated ones.
    pub images: BTreeMap<String, LieElement>,
    pub eliminated: Vec<String>,
}

/// Presents `⟨symbols | relations⟩` truncated at class `q`.
///
/// Relations with a nonzero linear part are used to eliminate symbols,
/// preferring the last symbol in the given order; eliminated symbols are
/// solved for as inhomogeneous elements of the free algebra on the others by
/// fixed-point iteration, one degree per round. The remaining relations,
/// rewritten in the kept symbols, become relators of a quotient.
pub fn present(symbols: &[String], relations: &[LieExpr], q: usize) -> Result<Presented, LieError> {
    let n = symbols.len();
    let col: HashMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut lin_rows = Vec::new();
    let mut highs = Vec::new();
    for r in relations {
        let (lin, rest) = r.split_linear();
        let mut row = vec![Scalar::zero(); n + relations.len()];
        for (g, c) in lin {
            let &i = col.get(g.as_str()).ok_or(LieError::UnknownGenerator(g))?;
            // Reversed columns make the pivot the last symbol.
            row[n - 1 - i] = c;
        }
        lin_rows.push(row);
        highs.push(rest);
    }
    for (j, row) in lin_rows.iter_mut().enumerate() {
        row[n + j] = Scalar::one();
    }
    let m = relations.len();
    let aug = if m == 0 {
        Matrix::zeros(0, n)
    } else {
        Matrix::from_rows(m, n + m, lin_rows).expect("rows have equal length")
    };
    let (rref, pivots) = aug.rref();
    let mut eliminated: Vec<(usize, usize)> = Vec::new();
    let mut pure_rows = Vec::new();
    for (r, &p) in pivots.iter().enumerate() {
        if p < n {
            eliminated.push((r, n - 1 - p));
        }
    }
    for r in 0..m {
        let linear_zero = (0..n).all(|c| rref.get(r, c).is_zero());
        if linear_zero {
            pure_rows.push(r);
        }
    }
    let elim_set: std::collections::BTreeSet<usize> = eliminated.iter().map(|&(_, s)| s).collect();
    let kept: Vec<String> = (0..n).filter(|i| !elim_set.contains(i)).map(|i| symbols[i].clone()).collect();
    let free = NilpotentLie::free(kept.clone(), q)?;
    let mut images: HashMap<String, LieElement> = HashMap::new();
    for (i, s) in symbols.iter().enumerate() {
        if !elim_set.contains(&i) {
            images.insert(s.clone(), free.generator_by_name(s)?);
        }
    }
    let combine = |r: usize, imgs: &HashMap<String, LieElement>| -> Result<LieElement, LieError> {
        let mut acc = LieElement::zero();
        for j in 0..m {
            let t = rref.get(r, n + j);
            if t.is_zero() {
                continue;
            }
            for (c, e) in &highs[j] {
                let v = e.eval(
                    &|g| imgs.get(g).cloned().ok_or_else(|| LieError::UnknownGenerator(g.to_string())),
                    &|x, y| free.bracket(x, y),
                )?;
                acc = acc.add(&v.scale(&(t * c)));
            }
        }
        Ok(acc)
    };
    let linear_image = |r: usize, images: &HashMap<String, LieElement>| -> LieElement {
        let mut acc = LieElement::zero();
        for c in 0..n {
            let x = rref.get(r, c);
            let s = n - 1 - c;
            if x.is_zero() || elim_set.contains(&s) {
                continue;
            }
            acc = acc.sub(&images[&symbols[s]].scale(x));
        }
        acc
    };
    for &(r, s) in &eliminated {
        images.insert(symbols[s].clone(), linear_image(r, &images));
    }
    for _ in 0..q {
        let mut next = images.clone();
        for &(r, s) in &eliminated {
            let v = linear_image(r, &images).sub(&combine(r, &images)?);
            next.insert(symbols[s].clone(), v);
        }
        images = next;
    }
    let mut relators = Vec::new();
    for &r in &pure_rows {
        relators.push(combine(r, &images)?);
    }
    let lie = free.quotient(&relators)?;
    let reduce = |x: &LieElement| LieElement {
        coords: lie.reduce_free(&free.lift(x)),
    };
    let images: BTreeMap<String, LieElement> = images.iter().map(|(k, v)| (k.clone(), reduce(v))).collect();
    for rel in relations {
        let v = rel.eval(
            &|g| images.get(g).cloned().ok_or_else(|| LieError::UnknownGenerator(g.to_string())),
            &|x, y| lie.bracket(x, y),
        )?;
        debug_assert!(v.is_zero(), "relation {rel} survives the presentation");
    }
    Ok(Presented {
        lie,
        images,
        eliminated: eliminated.iter().map(|&(_, s)| symbols[s].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactlin::frac;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (1..=k).map(|i| format!("x{i}")).collect()
    }

    /// Rank of the span of all right-normed brackets of length `n`,
    /// expanded as noncommutative polynomials.
    fn spanning_rank(k: usize, n: usize) -> usize {
        let mut ech = Echelon::untracked();
        let mut index: HashMap<Word, usize> = HashMap::new();
        let mut words: Vec<Word> = vec![vec![]];
        for _ in 0..n {
            words = words
                .iter()
                .flat_map(|w| (0..k as u8).map(move |c| [w.clone(), vec![c]].concat()))
                .collect();
        }
        for w in &words {
            let mut p: Poly = [(vec![w[n - 1]], Scalar::one())].into();
            for &c in w[..n - 1].iter().rev() {
                let x: Poly = [(vec![c], Scalar::one())].into();
                let mut b = poly_mul(&x, &p, n);
                poly_axpy(&mut b, &-Scalar::one(), &poly_mul(&p, &x, n));
                p = b;
            }
            let v: SparseVec = p
                .into_iter()
                .map(|(w, c)| {
                    let l = index.len();
                    (*index.entry(w).or_insert(l), c)
                })
                .collect();
            ech.insert(&v);
        }
        ech.rank()
    }

    #[test]
    fn witt_matches_spanning_oracle() {
        for k in 1..=3 {
            for n in 1..=4 {
                assert_eq!(witt_dimension(k, n), spanning_rank(k, n), "k={k} n={n}");
            }
        }
        assert_eq!(lyndon_dims(2, 4), vec![2, 1, 2, 3]);
        assert_eq!(lyndon_dims(4, 3), vec![4, 6, 20]);
        assert_eq!(lyndon_dims(0, 3), vec![0, 0, 0]);
    }

    #[test]
    fn free_dims() {
        let l = NilpotentLie::free(names(2), 4).unwrap();
        assert_eq!(l.gr_dims(), vec![2, 1, 2, 3]);
        assert_eq!(NilpotentLie::free(names(4), 2).unwrap().gr_dims(), vec![4, 6]);
        assert_eq!(NilpotentLie::free(names(1), 3).unwrap().gr_dims(), vec![1, 0, 0]);
        assert_eq!(NilpotentLie::free(Vec::new(), 2).unwrap().dim(), 0);
        assert!(NilpotentLie::free(names(2), 0).is_err());
    }

    #[test]
    fn jacobi_on_free_and_quotients() {
        for k in 1..=4 {
            let q = if k <= 3 { 4 } else { 3 };
            let l = NilpotentLie::free(names(k), q).unwrap();
            l.table().check_jacobi().unwrap();
        }
        let l = free_nilpotent(&["v1", "v2", "w1", "w2"], 3).unwrap();
        let r = l.eval(&LieExpr::parse("[v1,v2]+[w1,w2]").unwrap()).unwrap();
        l.quotient(&[r]).unwrap().table().check_jacobi().unwrap();
    }

    /// Coefficients of `1 / (1 − k t + t²)` turned into graded Lie
    /// dimensions by inverting the PBW product formula.
    fn one_relator_oracle(k: i64, q: usize) -> Vec<usize> {
        let mut u = vec![0i64; q + 1];
        u[0] = 1;
        for n in 1..=q {
            u[n] = k * u[n - 1] - if n >= 2 { u[n - 2] } else { 0 };
        }
        let mut dims = Vec::new();
        for n in 1..=q {
            // Series Π_{m<n} (1 − t^m)^{−c_m}, coefficient of t^n.
            let mut series = vec![0i64; q + 1];
            series[0] = 1;
            for (m, &c) in dims.iter().enumerate() {
                let m = m + 1;
                for _ in 0..c {
                    for i in m..=q {
                        series[i] += series[i - m];
                    }
                }
            }
            dims.push((u[n] - series[n]) as usize);
        }
        dims
    }

    #[test]
    fn one_relator_dims() {
        assert_eq!(one_relator_oracle(4, 3), vec![4, 5, 16]);
        let l = free_nilpotent(&["v1", "v2", "w1", "w2"], 4).unwrap();
        let r = l.eval(&LieExpr::parse("[v1,v2]+[w1,w2]").unwrap()).unwrap();
        let quo = l.quotient(&[r]).unwrap();
        assert_eq!(quo.gr_dims(), one_relator_oracle(4, 4));
        assert_eq!(&quo.gr_dims()[..3], &[4, 5, 16]);
        assert!(quo.is_graded());

        let a = free_nilpotent(&["w1", "w2"], 4).unwrap();
        let r = a.eval(&LieExpr::parse("[w1,w2]").unwrap()).unwrap();
        assert_eq!(a.quotient(&[r]).unwrap().gr_dims(), vec![2, 0, 0, 0]);
        assert_eq!(a.quotient(&[]).unwrap().gr_dims(), a.gr_dims());
    }

    #[test]
    fn relator_too_deep() {
        let a = free_nilpotent(&["x", "y"], 2).unwrap();
        let e = LieExpr::parse("[x,[x,y]]").unwrap();
        assert_eq!(a.quotient_by_exprs(&[e]).unwrap_err(), LieError::RelatorTooDeep { degree: 3, q: 2 });
    }

    /// Independent BCH oracle: Dynkin's formula with its own noncommutative
    /// polynomial arithmetic over words in {0, 1}.
    mod dynkin {
        use super::*;

        pub type P = BTreeMap<Vec<u8>, Scalar>;

        fn mul(a: &P, b: &P, q: usize) -> P {
            let mut out = P::new();
            for (u, x) in a {
                for (v, y) in b {
                    if u.len() + v.len() <= q {
                        let w: Vec<u8> = u.iter().chain(v).copied().collect();
                        *out.entry(w).or_insert_with(Scalar::zero) += x * y;
                    }
                }
            }
            out.retain(|_, c| !c.is_zero());
            out
        }

        fn right_nested(word: &[u8], q: usize) -> P {
            let n = word.len();
            let mut p: P = [(vec![word[n - 1]], Scalar::one())].into();
            for &c in word[..n - 1].iter().rev() {
                let x: P = [(vec![c], Scalar::one())].into();
                let mut b = mul(&x, &p, q);
                for (w, v) in mul(&p, &x, q) {
                    *b.entry(w).or_insert_with(Scalar::zero) -= v;
                }
                b.retain(|_, c| !c.is_zero());
                p = b;
            }
            p
        }

        fn factorial(n: usize) -> Scalar {
            (1..=n).fold(Scalar::one(), |a, k| a * int(k as i64))
        }

        /// `log(e^X e^Y)` through degree `q` via Dynkin's formula.
        pub fn bch(q: usize) -> P {
            let mut out = P::new();
            for n in 1..=q {
                let sign = if n % 2 == 1 { Scalar::one() } else { -Scalar::one() };
                // All (r_i, s_i) sequences of length n with r_i + s_i ≥ 1 and
                // total ≤ q.
                let mut stack: Vec<(Vec<(usize, usize)>, usize)> = vec![(Vec::new(), 0)];
                while let Some((seq, total)) = stack.pop() {
                    if seq.len() == n {
                        let mut word = Vec::new();
                        let mut denom = Scalar::one();
                        for &(r, s) in &seq {
                            word.extend(std::iter::repeat_n(0u8, r));
                            word.extend(std::iter::repeat_n(1u8, s));
                            denom *= factorial(r) * factorial(s);
                        }
                        let c = &sign / (int(n as i64) * int(total as i64) * denom);
                        for (w, x) in right_nested(&word, q) {
                            *out.entry(w).or_insert_with(Scalar::zero) += &c * x;
                        }
                        continue;
                    }
                    for r in 0..=q - total {
                        for s in 0..=q - total - r {
                            if r + s >= 1 {
                                let mut next = seq.clone();
                                next.push((r, s));
                                stack.push((next, total + r + s));
                            }
                        }
                    }
                }
            }
            out.retain(|_, c| !c.is_zero());
            out
        }
    }

    fn expand_in_free2(l: &NilpotentLie, x: &LieElement) -> dynkin::P {
        let f = l.free_algebra();
        let mut out = dynkin::P::new();
        for (&i, c) in &x.coords {
            let fi = l.basis[i];
            for (w, v) in f.expansion(fi) {
                *out.entry(w.clone()).or_insert_with(Scalar::zero) += c * v;
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    #[test]
    fn bch_matches_dynkin_oracle() {
        for q in 1..=5 {
            let l = free_nilpotent(&["v", "w"], q).unwrap();
            let z = l
                .bch(&GroupElement(l.generator(0)), &GroupElement(l.generator(1)))
                .unwrap();
            assert_eq!(expand_in_free2(&l, &z.0), dynkin::bch(q), "q={q}");
        }
    }

    #[test]
    fn bch_low_degree_formula() {
        let l = free_nilpotent(&["v", "w"], 3).unwrap();
        let e = |s: &str| l.eval(&LieExpr::parse(s).unwrap()).unwrap();
        let z = l.bch(&GroupElement(e("v")), &GroupElement(e("w"))).unwrap().0;
        let expected = e("v + w + 1/2*[v,w] + 1/12*[v,[v,w]] + 1/12*[w,[w,v]]");
        assert_eq!(z, expected);
    }

    #[test]
    fn bch_degree_four_term() {
        let l = free_nilpotent(&["v", "w"], 4).unwrap();
        let e = |s: &str| l.eval(&LieExpr::parse(s).unwrap()).unwrap();
        let z = l.bch(&GroupElement(e("v")), &GroupElement(e("w"))).unwrap().0;
        assert_eq!(l.component(&z, 4), e("[w,[v,[v,w]]]").scale(&frac(-1, 24)));
    }

    #[test]
    fn commuting_bch_is_sum() {
        let l = free_nilpotent(&["x", "y"], 4).unwrap();
        let x = l.generator(0);
        let y = x.scale(&frac(3, 2));
        let z = l.bch(&GroupElement(x.clone()), &GroupElement(y.clone())).unwrap();
        assert_eq!(z.0, x.add(&y));
    }

    #[test]
    fn conjugation_agrees_with_ad_exp() {
        let l = free_nilpotent(&["x", "y", "z"], 4).unwrap();
        let e = |s: &str| l.eval(&LieExpr::parse(s).unwrap()).unwrap();
        let x = e("x + [y,z]");
        let c = e("y - 2*z + [x,y]");
        let conj = l.conjugate(&GroupElement(x.clone()), &GroupElement(c.clone())).unwrap();
        assert_eq!(conj.0, l.ad_exp(&c, &Scalar::one(), &x));
        let id = l.conjugate(&GroupElement(x.clone()), &GroupElement::default()).unwrap();
        assert_eq!(id.0, x);
    }

    #[test]
    fn central_conjugation_is_trivial() {
        let l = free_nilpotent(&["x", "y"], 3).unwrap();
        let e = |s: &str| l.eval(&LieExpr::parse(s).unwrap()).unwrap();
        let central = e("[x,[x,y]]");
        let g = e("x + y");
        let c = l.conjugate(&GroupElement(g.clone()), &GroupElement(central)).unwrap();
        assert_eq!(c.0, g);
    }

    fn one_relator() -> NilpotentLie {
        let l = free_nilpotent(&["v1", "v2", "w1", "w2"], 4).unwrap();
        l.quotient_by_exprs(&[LieExpr::parse("[v1,v2]+[w1,w2]").unwrap()]).unwrap()
    }

    fn twist(l: &NilpotentLie, n: i64) -> LieAutomorphism {
        let e = l.eval(&LieExpr::parse("[v1,v2]").unwrap()).unwrap();
        let images = (0..4)
            .map(|i| {
                let g = l.generator(i);
                if i < 2 { g } else { l.ad_exp(&e, &int(n), &g) }
            })
            .collect();
        LieAutomorphism::new(l, images).unwrap()
    }

    #[test]
    fn twist_on_one_relator_algebra_is_not_inner() {
        let l = one_relator();
        let phi = twist(&l, 1);
        match l.is_inner(&phi).unwrap() {
            InnerVerdict::NotInner(ob) => {
                assert_eq!(ob.degree, 3);
                assert_eq!(ob.forced_vanishing(), 3);
                assert_eq!(ob.generator, Some(2));
                let expected = l.eval(&LieExpr::parse("[w1,[v1,v2]]").unwrap()).unwrap();
                assert_eq!(ob.residuals[2], expected);
                assert!(ob.partial_witness.is_zero());
            }
            v => panic!("expected an obstruction, got {v:?}"),
        }
    }

    #[test]
    fn identity_and_conjugations_are_inner() {
        let l = one_relator();
        match l.is_inner(&LieAutomorphism::identity(&l)).unwrap() {
            InnerVerdict::Inner { witness, .. } => assert!(witness.is_zero()),
            v => panic!("{v:?}"),
        }
        let c = l.eval(&LieExpr::parse("v1 - 2*w2 + [v1,w1]").unwrap()).unwrap();
        let phi = LieAutomorphism::inner(&l, &c).unwrap();
        match l.is_inner(&phi).unwrap() {
            InnerVerdict::Inner { witness, .. } => {
                let diff = witness.sub(&c);
                for i in 0..4 {
                    assert!(l.bracket(&diff, &l.generator(i)).is_zero());
                }
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn non_automorphisms_rejected() {
        let l = one_relator();
        let g: Vec<LieElement> = (0..4).map(|i| l.generator(i)).collect();
        // v1 ↦ w1 breaks the relator.
        let bad = vec![g[2].clone(), g[1].clone(), g[2].clone(), g[3].clone()];
        assert!(LieAutomorphism::new(&l, bad).is_err());
        let free = free_nilpotent(&["x", "y"], 3).unwrap();
        let h: Vec<LieElement> = (0..2).map(|i| free.generator(i)).collect();
        assert!(LieAutomorphism::new(&free, vec![h[0].clone(), h[0].clone()]).is_err());
    }

    #[test]
    fn ad_exp_is_additive_in_n() {
        let l = one_relator();
        let e = l.eval(&LieExpr::parse("[v1,v2] + w1").unwrap()).unwrap();
        let x = l.eval(&LieExpr::parse("w2 + [v1,w2]").unwrap()).unwrap();
        for (n, m) in [(1, 1), (2, -1), (3, 2)] {
            let lhs = l.ad_exp(&e, &int(n), &l.ad_exp(&e, &int(m), &x));
            assert_eq!(lhs, l.ad_exp(&e, &int(n + m), &x));
        }
    }

    #[test]
    fn parser_round_trip_and_errors() {
        let e = LieExpr::parse("2*x - [y,[x,y]] + 1/2*[x,y]").unwrap();
        assert_eq!(LieExpr::parse(&e.to_string()).unwrap(), e);
        assert!(LieExpr::parse("[x,").is_err());
        assert!(LieExpr::parse("x +").is_err());
        let l = free_nilpotent(&["x", "y"], 3).unwrap();
        assert_eq!(
            l.eval(&LieExpr::parse("z").unwrap()).unwrap_err(),
            LieError::UnknownGenerator("z".into())
        );
    }

    #[test]
    fn presentation_eliminates_linear_relations() {
        // Two genus-one blocks glued along one edge.
        let syms: Vec<String> = ["a1", "a2", "s", "b1", "b2", "t"].iter().map(|s| s.to_string()).collect();
        let rels = [
            LieExpr::parse("[a1,a2] - s").unwrap(),
            LieExpr::parse("[b1,b2] - t").unwrap(),
            LieExpr::parse("s + t").unwrap(),
        ];
        let p = present(&syms, &rels, 4).unwrap();
        assert_eq!(p.lie.generators(), &["a1", "a2", "b1", "b2"]);
        assert_eq!(&p.lie.gr_dims()[..3], &[4, 5, 16]);
        assert!(p.lie.is_graded());
        let s = &p.images["s"];
        assert_eq!(s, &p.lie.eval(&LieExpr::parse("[a1,a2]").unwrap()).unwrap());
        assert!(p.images["s"].add(&p.images["t"]).is_zero());
    }

    #[test]
    fn presentation_with_conjugated_relation_is_filtered() {
        let syms: Vec<String> = ["a", "b", "t"].iter().map(|s| s.to_string()).collect();
        // a + exp(ad t) b = 0, truncated.
        let rel = LieExpr::parse("a + b + [t,b] + 1/2*[t,[t,b]]").unwrap();
        let p = present(&syms, std::slice::from_ref(&rel), 3).unwrap();
        assert_eq!(p.eliminated, vec!["b".to_string()]);
        let v = p.lie.eval(&LieExpr::parse("a").unwrap()).unwrap();
        assert!(!v.is_zero());
        let check = rel
            .eval(
                &|g| Ok(p.images[g].clone()),
                &|x: &LieElement, y: &LieElement| p.lie.bracket(x, y),
            )
            .unwrap();
        assert!(check.is_zero());
    }

    #[test]
    fn json_round_trip() {
        let l = one_relator();
        let j = l.to_json();
        let back = NilpotentLie::from_json(&j).unwrap();
        assert_eq!(back.table(), l.table());
        let x = l.eval(&LieExpr::parse("v1 + 1/3*[v1,w2]").unwrap()).unwrap();
        assert_eq!(l.element_from_json(&l.element_to_json(&x)).unwrap(), x);
    }

    fn random_element(l: &NilpotentLie, seed: &[i64]) -> LieElement {
        let mut coords = SparseVec::new();
        for (i, &c) in seed.iter().enumerate() {
            if i < l.dim() && c != 0 {
                coords.insert(i, frac(c, 1 + (i as i64 % 3)));
            }
        }
        LieElement { coords }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bch_is_associative(a in proptest::collection::vec(-3i64..=3, 14),
                              b in proptest::collection::vec(-3i64..=3, 14),
                              c in proptest::collection::vec(-3i64..=3, 14)) {
            let l = free_nilpotent(&["x", "y"], 4).unwrap();
            let (x, y, z) = (
                GroupElement(random_element(&l, &a)),
                GroupElement(random_element(&l, &b)),
                GroupElement(random_element(&l, &c)),
            );
            let left = l.bch(&l.bch(&x, &y).unwrap(), &z).unwrap();
            let right = l.bch(&x, &l.bch(&y, &z).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn conjugations_are_inner(c in proptest::collection::vec(-2i64..=2, 30)) {
            let l = one_relator();
            let d = random_element(&l, &c);
            let phi = LieAutomorphism::inner(&l, &d).unwrap();
            prop_assert!(l.is_inner(&phi).unwrap().is_inner());
        }

        #[test]
        fn verdict_invariant_under_inner_precomposition(c in proptest::collection::vec(-2i64..=2, 30), n in 1i64..=2) {
            let l = one_relator();
            let inner = LieAutomorphism::inner(&l, &random_element(&l, &c)).unwrap();
            let phi = twist(&l, n);
            let composed = phi.compose(&l, &inner).unwrap();
            prop_assert_eq!(l.is_inner(&composed).unwrap().is_inner(), l.is_inner(&phi).unwrap().is_inner());
        }
    }
}
