//! Stage-wise 1-minimal models `M(1) ⊂ M(2) ⊂ … ⊂ M(Q) → A` built from
//! degree-1 Hirsch extensions, the dual nilpotent Lie algebra of the
//! generators, and a Sullivan-homotopy solver comparing two models.
//!
//! All linear algebra runs on weight blocks: a stage generator inherits the
//! weight of the class it kills, and `d`, products and `ρ` preserve weight.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdga::{matrix_from_json, matrix_to_json, validate, wedge, Cdga, CdgaError, CdgaJson, CdgaMorphism};
use crate::exactlin::{
    axpy, cohomology, cone, dense_from_sparse, int, sparse_from_dense, ChainMap, Complex, Echelon, LinError, Matrix,
    PivotOrder, Scalar, SparseVec,
};
use crate::nilpotent_lie::{LieElement, LieError, LieTable, NilpotentLie};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input algebra is not a valid cdga: {0}")]
    InvalidInput(String),
    #[error("H^0 of the input has dimension {0}, expected 1")]
    NotConnected(usize),
    #[error("candidate map is not a cdga morphism: {0}")]
    NotAMorphism(String),
    #[error("dual Lie algebra is not graded by stage: {0}")]
    NotStageGraded(String),
    #[error(transparent)]
    Cdga(#[from] CdgaError),
    #[error(transparent)]
    Lin(#[from] LinError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    pub label: String,
    pub stage: usize,
    pub weight: u32,
}

/// Sorted generator indices of an exterior monomial.
pub type Monomial = Vec<usize>;

/// Choice of representatives when several are possible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SectionRule {
    pub order: PivotOrder,
}

/// `ρ: ∧(E_1 ⊕ … ⊕ E_Q) → A` with `d` quadratic on generators.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimalModel {
    source: Cdga,
    gens: Vec<Generator>,
    diff: Vec<BTreeMap<(usize, usize), Scalar>>,
    rho: Vec<SparseVec>,
    stage_ends: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Block {
    monos: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl Block {
    fn len(&self) -> usize {
        self.monos.len()
    }
}

fn sign_of(k: usize) -> Scalar {
    if k.is_multiple_of(2) { Scalar::one() } else { -Scalar::one() }
}

impl MinimalModel {
    /// Runs `q` stages of the construction.
    pub fn build(a: &Cdga, q: usize) -> Result<MinimalModel, ModelError> {
        Self::build_with(a, q, SectionRule::default())
    }

    pub fn build_with(a: &Cdga, q: usize, rule: SectionRule) -> Result<MinimalModel, ModelError> {
        if let Some(v) = validate(a).violation {
            return Err(ModelError::InvalidInput(format!("{v:?}")));
        }
        let h0 = a.cohomology(0)?.dim;
        if h0 != 1 {
            return Err(ModelError::NotConnected(h0));
        }
        let mut m = MinimalModel {
            source: a.clone(),
            gens: Vec::new(),
            diff: Vec::new(),
            rho: Vec::new(),
            stage_ends: Vec::new(),
        };
        if q >= 1 {
            m.stage_one(rule)?;
        }
        for stage in 2..=q {
            m.next_stage(stage, rule)?;
        }
        Ok(m)
    }

    fn stage_one(&mut self, rule: SectionRule) -> Result<(), ModelError> {
        let a = &self.source;
        let mut new = Vec::new();
        for w in a.weights_present(1) {
            let block = a.weight_block(1, w);
            let h = cohomology(&a.weight_complex(w), 1)?;
            let mut reps = h.representatives.clone();
            if rule.order == PivotOrder::Reverse {
                reps = reverse_reps(&a.weight_complex(w), &reps);
            }
            for z in reps {
                let global: SparseVec = sparse_from_dense(&z).into_iter().map(|(i, c)| (block[i], c)).collect();
                new.push((w, global));
            }
        }
        let mut count = 0usize;
        for (w, rho) in new {
            count += 1;
            let label = match rho.iter().next() {
                Some((&i, c)) if rho.len() == 1 && c.is_one() => self.source.labels(1)[i].clone(),
                _ => format!("e1_{count}"),
            };
            self.gens.push(Generator { label, stage: 1, weight: w });
            self.diff.push(BTreeMap::new());
            self.rho.push(rho);
        }
        self.stage_ends.push(self.gens.len());
        Ok(())
    }

    fn next_stage(&mut self, stage: usize, rule: SectionRule) -> Result<(), ModelError> {
        let n = self.gens.len();
        let mut weights: BTreeSet<u32> = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                weights.insert(self.gens[i].weight + self.gens[j].weight);
            }
        }
        let mut added = Vec::new();
        for w in weights {
            for (m, a) in self.relative_classes(w, n, rule)? {
                added.push((w, m, a));
            }
        }
        for (k, (w, m, a)) in added.into_iter().enumerate() {
            let mut d = BTreeMap::new();
            for (mono, c) in m {
                d.insert((mono[0], mono[1]), c);
            }
            self.gens.push(Generator {
                label: format!("x{stage}_{}", k + 1),
                stage,
                weight: w,
            });
            self.diff.push(d);
            self.rho.push(a);
        }
        self.stage_ends.push(self.gens.len());
        Ok(())
    }

    /// Representatives `(m, a)` of `ker(H²(M) → H²(A))` in weight `w`, with
    /// `dm = 0` and `ρ(m) = d_A a`, using the first `upto` generators.
    #[allow(clippy::type_complexity)]
    fn relative_classes(
        &self,
        w: u32,
        upto: usize,
        rule: SectionRule,
    ) -> Result<Vec<(BTreeMap<Monomial, Scalar>, SparseVec)>, ModelError> {
        let b1 = self.block(1, w, upto);
        let b2 = self.block(2, w, upto);
        if b2.len() == 0 {
            return Ok(Vec::new());
        }
        let d1 = self.d_matrix(&b1, w, upto, 1);
        let d2 = self.d_matrix(&b2, w, upto, 2);
        let a = &self.source;
        let a1 = a.weight_block(1, w);
        let da = a.diff_block(1, w);
        let r2 = self.rho_matrix(&b2, 2, w);
        let ann = da.transpose().kernel().transpose();
        let mut stacked = Matrix::zeros(d2.nrows() + ann.nrows(), b2.len());
        stacked.set_block(0, 0, &d2);
        if ann.nrows() > 0 && r2.nrows() > 0 {
            stacked.set_block(d2.nrows(), 0, &ann.mul(&r2));
        }
        let kernel = stacked.kernel();
        let mut span = Echelon::untracked();
        for c in 0..d1.ncols() {
            span.insert(&d1.sparse_column(c));
        }
        let mut cols: Vec<usize> = (0..kernel.ncols()).collect();
        if rule.order == PivotOrder::Reverse {
            cols.reverse();
        }
        let mut out = Vec::new();
        for c in cols {
            let v = kernel.sparse_column(c);
            if span.insert(&v).is_none() {
                continue;
            }
            let image = r2.apply(&dense_from_sparse(&v, b2.len()));
            let sol = if a1.is_empty() {
                Some(Vec::new())
            } else {
                da.solve(&image)
            };
            let Some(sol) = sol else {
                unreachable!("ρ(m) was constrained to be exact");
            };
            let a_global: SparseVec = sparse_from_dense(&sol).into_iter().map(|(i, x)| (a1[i], x)).collect();
            let m: BTreeMap<Monomial, Scalar> = v.into_iter().map(|(i, x)| (b2.monos[i].clone(), x)).collect();
            out.push((m, a_global));
        }
        Ok(out)
    }

    /// Monomials of degree `p` and weight `w` in the first `upto` generators.
    fn block(&self, p: usize, w: u32, upto: usize) -> Block {
        fn rec(gens: &[Generator], start: usize, left: usize, w: u32, cur: &mut Vec<usize>, out: &mut Vec<Monomial>) {
            if left == 0 {
                if w == 0 {
                    out.push(cur.clone());
                }
                return;
            }
            for k in start..gens.len() {
                if gens[k].weight > w {
                    continue;
                }
                cur.push(k);
                rec(gens, k + 1, left - 1, w - gens[k].weight, cur, out);
                cur.pop();
            }
        }
        let mut monos = Vec::new();
        rec(&self.gens[..upto], 0, p, w, &mut Vec::new(), &mut monos);
        let index = monos.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Block { monos, index }
    }

    /// `d` of a monomial, expanded with the Leibniz rule.
    pub fn d_monomial(&self, mono: &[usize]) -> BTreeMap<Monomial, Scalar> {
        let mut out: BTreeMap<Monomial, Scalar> = BTreeMap::new();
        for (s, &g) in mono.iter().enumerate() {
            for (&(i, j), c) in &self.diff[g] {
                let Some((s1, left)) = wedge(&mono[..s], &[i, j]) else { continue };
                let Some((s2, full)) = wedge(&left, &mono[s + 1..]) else { continue };
                let e = out.entry(full).or_insert_with(Scalar::zero);
                *e += c * s1 * s2 * sign_of(s);
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    /// `ρ` of a monomial as an element of `A^p` (global indices).
    fn rho_monomial(&self, mono: &[usize]) -> SparseVec {
        let a = &self.source;
        let mut acc: SparseVec = a.unit().clone();
        for (deg, &g) in mono.iter().enumerate() {
            if deg + 1 > a.cap() {
                return SparseVec::new();
            }
            acc = a.mul(deg, &acc, 1, &self.rho[g]);
            if acc.is_empty() {
                break;
            }
        }
        acc
    }

    fn d_matrix(&self, src: &Block, w: u32, upto: usize, p: usize) -> Matrix {
        let tgt = self.block(p + 1, w, upto);
        let mut m = Matrix::zeros(tgt.len(), src.len());
        for (c, mono) in src.monos.iter().enumerate() {
            for (t, x) in self.d_monomial(mono) {
                m.set(tgt.index[&t], c, x);
            }
        }
        m
    }

    fn rho_matrix(&self, src: &Block, p: usize, w: u32) -> Matrix {
        let tgt = self.source.weight_block(p, w);
        let pos: HashMap<usize, usize> = tgt.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut m = Matrix::zeros(tgt.len(), src.len());
        for (c, mono) in src.monos.iter().enumerate() {
            for (i, x) in self.rho_monomial(mono) {
                m.set(pos[&i], c, x);
            }
        }
        m
    }

    /// Weight-`w` part of `M(stage)` as a complex in degrees `0..=3`.
    fn weight_complex(&self, w: u32, upto: usize) -> (Complex, Vec<Block>) {
        let blocks: Vec<Block> = (0..=3).map(|p| self.block(p, w, upto)).collect();
        let dims = blocks.iter().map(Block::len).collect();
        let diffs = (0..3).map(|p| self.d_matrix(&blocks[p], w, upto, p)).collect();
        (Complex::new(0, dims, diffs).expect("block shapes agree"), blocks)
    }

    fn rho_chain_map(&self, w: u32, upto: usize) -> Result<(ChainMap, Vec<Block>), ModelError> {
        let (mc, blocks) = self.weight_complex(w, upto);
        let ac = self.source.weight_complex(w);
        let maps = (0..=3)
            .filter(|&p| p <= self.source.cap())
            .map(|p| (p as i32, self.rho_matrix(&blocks[p], p, w)))
            .collect();
        Ok((ChainMap::new(mc, ac, maps)?, blocks))
    }

    pub fn source(&self) -> &Cdga {
        &self.source
    }

    pub fn stages(&self) -> usize {
        self.stage_ends.len()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.gens
    }

    /// Number of generators added at each stage.
    pub fn stage_dims(&self) -> Vec<usize> {
        let mut prev = 0;
        self.stage_ends
            .iter()
            .map(|&e| {
                let d = e - prev;
                prev = e;
                d
            })
            .collect()
    }

    pub fn stage_range(&self, stage: usize) -> std::ops::Range<usize> {
        let start = if stage <= 1 { 0 } else { self.stage_ends[stage - 2] };
        start..self.stage_ends[stage - 1]
    }

    /// `d(x_k)` as coefficients on products `x_i x_j`, `i < j`.
    pub fn differential(&self, k: usize) -> &BTreeMap<(usize, usize), Scalar> {
        &self.diff[k]
    }

    pub fn rho(&self, k: usize) -> &SparseVec {
        &self.rho[k]
    }

    /// `M(Q)` as an explicit cdga up to degree `cap`, keeping only
    /// monomials of weight at most `weight_cap` when one is given.
    pub fn assemble(&self, cap: usize, weight_cap: Option<u32>) -> Result<Cdga, ModelError> {
        let max_w = match weight_cap {
            Some(c) => c,
            None => self.gens.iter().map(|g| g.weight).sum(),
        };
        let n = self.gens.len();
        let mut monos: Vec<Vec<Monomial>> = Vec::new();
        for p in 0..=cap {
            let mut all = Vec::new();
            for w in 0..=max_w {
                all.extend(self.block(p, w, n).monos);
            }
            all.sort_by(|a, b| self.mono_weight(a).cmp(&self.mono_weight(b)).then_with(|| a.cmp(b)));
            all.dedup();
            monos.push(all);
        }
        let index: Vec<HashMap<Monomial, usize>> = monos
            .iter()
            .map(|ms| ms.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect())
            .collect();
        let labels = monos
            .iter()
            .map(|ms| ms.iter().map(|m| self.mono_label(m)).collect())
            .collect();
        let weights = monos
            .iter()
            .map(|ms| ms.iter().map(|m| self.mono_weight(m)).collect())
            .collect();
        let d = |p: usize, i: usize| -> SparseVec {
            self.d_monomial(&monos[p][i])
                .into_iter()
                .filter_map(|(m, c)| index[p + 1].get(&m).map(|&k| (k, c)))
                .collect()
        };
        let mul = |p: usize, i: usize, q: usize, j: usize| -> SparseVec {
            match wedge(&monos[p][i], &monos[q][j]) {
                Some((s, m)) => index[p + q].get(&m).map(|&k| [(k, s)].into()).unwrap_or_default(),
                None => SparseVec::new(),
            }
        };
        Ok(Cdga::build(cap, labels, weights, weight_cap, &d, &mul)?)
    }

    fn mono_weight(&self, m: &[usize]) -> u32 {
        m.iter().map(|&g| self.gens[g].weight).sum()
    }

    fn mono_label(&self, m: &[usize]) -> String {
        if m.is_empty() {
            "1".to_string()
        } else {
            m.iter().map(|&g| self.gens[g].label.as_str()).collect::<Vec<_>>().join("^")
        }
    }

    pub fn format_differential(&self, k: usize) -> String {
        let terms: Vec<String> = self.diff[k]
            .iter()
            .map(|(&(i, j), c)| {
                format!(
                    "{}*{}^{}",
                    crate::nilpotent_lie::display_scalar(c),
                    self.gens[i].label,
                    self.gens[j].label
                )
            })
            .collect();
        if terms.is_empty() { "0".to_string() } else { terms.join(" + ") }
    }
}

/// Cohomology representatives taken greedily from the kernel basis in
/// reverse order.
fn reverse_reps(c: &Complex, reps: &[Vec<Scalar>]) -> Vec<Vec<Scalar>> {
    let kernel = c.d(1).kernel();
    let mut span = Echelon::untracked();
    for col in 0..c.d(0).ncols() {
        span.insert(&c.d(0).sparse_column(col));
    }
    let mut out = Vec::new();
    for col in (0..kernel.ncols()).rev() {
        if out.len() == reps.len() {
            break;
        }
        let v = kernel.sparse_column(col);
        if span.insert(&v).is_some() {
            out.push(kernel.column(col));
        }
    }
    out
}

/// First failing minimal-model property, if any.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalityReport {
    pub failure: Option<(usize, String)>,
    /// Per stage `q ≥ 2`: `dim H²(cone of ρ_{q−1})`, summed over weights.
    pub relative_h2: Vec<usize>,
}

impl MinimalityReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Re-verifies, stage by stage: minimality of `d`, `ρ` a chain map, `H⁰`
/// and `H¹` isomorphisms, the relative `H²` matching the new generators and
/// dying at the next stage.
pub fn check_minimality(m: &MinimalModel, a: &Cdga) -> MinimalityReport {
    let mut relative_h2 = Vec::new();
    let fail = |q: usize, s: String, relative_h2: Vec<usize>| MinimalityReport {
        failure: Some((q, s)),
        relative_h2,
    };
    if m.source != *a {
        return fail(0, "model was built from a different algebra".into(), relative_h2);
    }
    match a.cohomology(0) {
        Ok(h) if h.dim == 1 => {}
        _ => return fail(0, "H^0 of the target is not Q".into(), relative_h2),
    }
    for q in 1..=m.stages() {
        let upto = m.stage_ends[q - 1];
        for k in m.stage_range(q) {
            for &(i, j) in m.diff[k].keys() {
                if m.gens[i].stage >= q || m.gens[j].stage >= q {
                    return fail(q, format!("d({}) is not decomposable in earlier stages", m.gens[k].label), relative_h2);
                }
            }
            let mut rho_d = SparseVec::new();
            for (&(i, j), c) in &m.diff[k] {
                axpy(&mut rho_d, c, &m.rho_monomial(&[i, j]));
            }
            if rho_d != a.d(1, &m.rho[k]) {
                return fail(q, format!("rho is not a chain map on {}", m.gens[k].label), relative_h2);
            }
        }
        let mut weights: BTreeSet<u32> = a.weights_present(1).into_iter().collect();
        weights.extend(a.weights_present(2));
        for g in &m.gens[..upto] {
            weights.insert(g.weight);
        }
        let gen_weights: Vec<u32> = m.gens[..upto].iter().map(|g| g.weight).collect();
        for &x in &gen_weights {
            for &y in &gen_weights {
                weights.insert(x + y);
            }
        }
        let mut total_rel = 0;
        for &w in &weights {
            let Ok((rho, _)) = m.rho_chain_map(w, upto) else {
                return fail(q, format!("rho is not a chain map in weight {w}"), relative_h2);
            };
            let Ok(hm) = cohomology(&rho.source, 1) else { continue };
            let Ok(ha) = cohomology(&rho.target, 1) else { continue };
            let images: Vec<Vec<Scalar>> = hm
                .representatives
                .iter()
                .map(|z| rho.map(1).apply(z))
                .collect();
            let mut coords = Vec::new();
            for z in &images {
                match ha.project(z) {
                    Ok(c) => coords.push(c),
                    Err(_) => return fail(q, "rho does not send cocycles to cocycles".into(), relative_h2),
                }
            }
            let rank = if coords.is_empty() {
                0
            } else {
                Matrix::from_dense_columns(ha.dim, &coords).rank()
            };
            if hm.dim != ha.dim || rank != ha.dim {
                return fail(q, format!("H^1 is not an isomorphism in weight {w}"), relative_h2);
            }
            if q >= 2 {
                let prev = m.stage_ends[q - 2];
                let Ok((rho_prev, prev_blocks)) = m.rho_chain_map(w, prev) else { continue };
                let Ok(cone_prev) = cone(&rho_prev) else {
                    return fail(q, "cone of the previous stage is not a complex".into(), relative_h2);
                };
                let Ok(cone_now) = cone(&rho) else {
                    return fail(q, "cone is not a complex".into(), relative_h2);
                };
                let Ok(rel_prev) = cohomology(&cone_prev, 2) else { continue };
                total_rel += rel_prev.dim;
                let added = m.stage_range(q).filter(|&k| m.gens[k].weight == w).count();
                if added != rel_prev.dim {
                    return fail(
                        q,
                        format!("stage has {added} generators in weight {w} but the relative H^2 has dimension {}", rel_prev.dim),
                        relative_h2,
                    );
                }
                let Ok(rel_now) = cohomology(&cone_now, 2) else { continue };
                let now_blocks = m.weight_complex(w, upto).1;
                for z in &rel_prev.representatives {
                    let mut padded = vec![Scalar::zero(); cone_now.dim(2)];
                    let n_prev = prev_blocks[2].len();
                    for (i, x) in z.iter().enumerate() {
                        if x.is_zero() {
                            continue;
                        }
                        let target = if i < n_prev {
                            now_blocks[2].index[&prev_blocks[2].monos[i]]
                        } else {
                            now_blocks[2].len() + (i - n_prev)
                        };
                        padded[target] = x.clone();
                    }
                    if !rel_now.is_coboundary(&padded) {
                        return fail(q, format!("a relative H^2 class survives in weight {w}"), relative_h2);
                    }
                }
            }
        }
        if q >= 2 {
            relative_h2.push(total_rel);
        }
    }
    MinimalityReport {
        failure: None,
        relative_h2,
    }
}

/// Dual Lie algebra of a model, as a quotient of the free Lie algebra on
/// the stage-1 duals together with the structure-constant algebra it was
/// computed from.
#[derive(Clone, Debug)]
pub struct DualLie {
    pub lie: NilpotentLie,
    pub structure: LieTable,
    /// Image in `structure` of each basis element of `lie`.
    pub comparison: Vec<SparseVec>,
}

/// Bracket `[x_i^∨, x_j^∨] = −Σ_k c^k_{ij} x_k^∨` where `d x_k = Σ c^k_{ij} x_i x_j`,
/// graded by stage.
pub fn dual_lie(m: &MinimalModel) -> Result<DualLie, ModelError> {
    let q = m.stages().max(1);
    let degrees: Vec<usize> = m.gens.iter().map(|g| g.stage).collect();
    let labels: Vec<String> = m.gens.iter().map(|g| g.label.clone()).collect();
    let mut structure = LieTable::new(q, degrees.clone(), labels.clone());
    let mut brackets: BTreeMap<(usize, usize), SparseVec> = BTreeMap::new();
    for (k, d) in m.diff.iter().enumerate() {
        for (&(i, j), c) in d {
            if degrees[i] + degrees[j] != degrees[k] {
                return Err(ModelError::NotStageGraded(format!(
                    "d({}) contains {}^{}",
                    labels[k], labels[i], labels[j]
                )));
            }
            brackets.entry((i, j)).or_default().insert(k, -c.clone());
        }
    }
    for ((i, j), v) in brackets {
        structure.set(i, j, v);
    }
    structure.check_jacobi().map_err(ModelError::NotStageGraded)?;

    let (lie, comparison) = present_structure(&structure)?;
    Ok(DualLie {
        lie,
        structure,
        comparison,
    })
}

/// Presents a Lie algebra graded in degrees `1..=q` and generated in degree
/// 1 as a quotient of the free one on its degree-1 basis. Returns the
/// quotient and the image of each quotient basis element.
pub fn present_structure(structure: &LieTable) -> Result<(NilpotentLie, Vec<SparseVec>), ModelError> {
    let q = structure.q;
    let degrees = &structure.degrees;
    let stage1: Vec<usize> = (0..structure.dim()).filter(|&k| degrees[k] == 1).collect();
    let free = NilpotentLie::free(stage1.iter().map(|&k| structure.labels[k].clone()).collect(), q)?;
    let fl = free.free_algebra();
    let mut images: Vec<SparseVec> = Vec::with_capacity(fl.dim());
    for i in 0..fl.dim() {
        let v = match fl.factor(i) {
            None => [(stage1[fl.word(i)[0] as usize], Scalar::one())].into(),
            Some((u, w)) => structure.bracket(&images[u], &images[w]),
        };
        images.push(v);
    }
    let mut relators = Vec::new();
    for n in 1..=q {
        let src = free.degree_block(n);
        let tgt: Vec<usize> = (0..structure.dim()).filter(|&k| degrees[k] == n).collect();
        let pos: HashMap<usize, usize> = tgt.iter().enumerate().map(|(r, &k)| (k, r)).collect();
        let mut mat = Matrix::zeros(tgt.len(), src.len());
        for (c, &i) in src.iter().enumerate() {
            for (k, x) in &images[i] {
                let Some(&r) = pos.get(k) else {
                    return Err(ModelError::NotStageGraded(format!("bracket leaves degree {n}")));
                };
                mat.set(r, c, x.clone());
            }
        }
        let kernel = mat.kernel();
        for c in 0..kernel.ncols() {
            let coords: SparseVec = src
                .iter()
                .zip(kernel.column(c))
                .filter(|(_, x)| !x.is_zero())
                .map(|(&i, x)| (i, x))
                .collect();
            relators.push(LieElement { coords });
        }
    }
    let lie = free.quotient(&relators)?;
    let comparison: Vec<SparseVec> = (0..lie.dim()).map(|i| images[lie.free_index(i)].clone()).collect();
    if lie.gr_dims() != (1..=q).map(|n| degrees.iter().filter(|&&d| d == n).count()).collect::<Vec<_>>() {
        return Err(ModelError::NotStageGraded("degree-1 elements do not generate".into()));
    }
    if Matrix::from_sparse_columns(structure.dim(), &comparison).rank() != structure.dim() {
        return Err(ModelError::NotStageGraded("comparison is not bijective".into()));
    }
    for a in 0..lie.dim() {
        for b in a + 1..lie.dim() {
            if lie.degree(a) + lie.degree(b) > q {
                continue;
            }
            let lhs = lie.bracket(&lie.basis_element(a), &lie.basis_element(b));
            let mut img = SparseVec::new();
            for (&k, c) in &lhs.coords {
                axpy(&mut img, c, &comparison[k]);
            }
            if img != structure.bracket(&comparison[a], &comparison[b]) {
                return Err(ModelError::NotStageGraded("comparison does not preserve brackets".into()));
            }
        }
    }
    Ok((lie, comparison))
}

/// Images of generators of one model in the degree-1 part (span of
/// generators) of another.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMap {
    pub images: Vec<SparseVec>,
}

impl ModelMap {
    pub fn identity(m: &MinimalModel) -> ModelMap {
        ModelMap {
            images: (0..m.gens.len()).map(|i| [(i, Scalar::one())].into()).collect(),
        }
    }

    /// `φ(x_i x_j)` as monomial coefficients in the target model.
    fn on_pair(&self, i: usize, j: usize) -> BTreeMap<Monomial, Scalar> {
        let mut out: BTreeMap<Monomial, Scalar> = BTreeMap::new();
        for (&a, x) in &self.images[i] {
            for (&b, y) in &self.images[j] {
                if let Some((s, m)) = wedge(&[a], &[b]) {
                    *out.entry(m).or_insert_with(Scalar::zero) += x * y * s;
                }
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    fn on_differential(&self, src: &MinimalModel, k: usize) -> BTreeMap<Monomial, Scalar> {
        let mut out: BTreeMap<Monomial, Scalar> = BTreeMap::new();
        for (&(i, j), c) in &src.diff[k] {
            for (m, x) in self.on_pair(i, j) {
                *out.entry(m).or_insert_with(Scalar::zero) += c * x;
            }
        }
        out.retain(|_, c| !c.is_zero());
        out
    }

    /// `d φ = φ d` on every generator.
    pub fn check(&self, src: &MinimalModel, tgt: &MinimalModel) -> Result<(), ModelError> {
        if self.images.len() != src.gens.len() {
            return Err(ModelError::NotAMorphism("one image per generator is required".into()));
        }
        for (k, img) in self.images.iter().enumerate() {
            if img.keys().any(|&i| i >= tgt.gens.len()) {
                return Err(ModelError::NotAMorphism("image outside the target".into()));
            }
            let mut lhs: BTreeMap<Monomial, Scalar> = BTreeMap::new();
            for (&y, c) in img {
                for (m, x) in tgt.d_monomial(&[y]) {
                    *lhs.entry(m).or_insert_with(Scalar::zero) += c * x;
                }
            }
            lhs.retain(|_, c| !c.is_zero());
            if lhs != self.on_differential(src, k) {
                return Err(ModelError::NotAMorphism(format!("d does not commute on {}", src.gens[k].label)));
            }
        }
        Ok(())
    }
}

/// Element of `(R(t,dt) ⊗ A)^p`: `Σ t^k ⊗ plain[k] + t^k dt ⊗ dt[k]`.
#[derive(Clone, Debug, Default, PartialEq)]
struct Form {
    plain: Vec<SparseVec>,
    dt: Vec<SparseVec>,
}

fn add_at(v: &mut Vec<SparseVec>, k: usize, c: &Scalar, x: &SparseVec) {
    if v.len() <= k {
        v.resize(k + 1, SparseVec::new());
    }
    axpy(&mut v[k], c, x);
}

/// Product of two degree-1 forms.
fn form_mul(a: &Cdga, x: &Form, y: &Form) -> Form {
    let mut out = Form::default();
    for (i, u) in x.plain.iter().enumerate() {
        for (j, v) in y.plain.iter().enumerate() {
            add_at(&mut out.plain, i + j, &Scalar::one(), &a.mul(1, u, 1, v));
        }
        for (j, v) in y.dt.iter().enumerate() {
            add_at(&mut out.dt, i + j, &-Scalar::one(), &a.mul(1, u, 0, v));
        }
    }
    for (i, u) in x.dt.iter().enumerate() {
        for (j, v) in y.plain.iter().enumerate() {
            add_at(&mut out.dt, i + j, &Scalar::one(), &a.mul(0, u, 1, v));
        }
    }
    out
}

/// Outcome of the Sullivan-homotopy search.
#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyReport {
    pub exists: bool,
    /// Polynomial cap of the successful (or last) attempt.
    pub cap: usize,
    /// Generator at which the linear system became inconsistent.
    pub failed_at: Option<String>,
    /// Absence is proven when the failure happens before any free choice
    /// was made (a stage-1 generator).
    pub proven: bool,
    /// Comparison map found along the way, when it was solved for.
    pub comparison: Option<ModelMap>,
}

/// Decides whether `f ∘ ρ` and `ρ' ∘ φ` are Sullivan homotopic.
pub fn homotopy_lift_check(
    f: &CdgaMorphism,
    m: &MinimalModel,
    m2: &MinimalModel,
    phi: &ModelMap,
) -> Result<HomotopyReport, ModelError> {
    phi.check(m, m2)?;
    check_endpoints(f, m, m2)?;
    Ok(solve_homotopy(f, m, m2, Some(phi)))
}

/// Solves for the comparison map `φ: M → M'` together with a homotopy.
pub fn comparison_map(f: &CdgaMorphism, m: &MinimalModel, m2: &MinimalModel) -> Result<HomotopyReport, ModelError> {
    check_endpoints(f, m, m2)?;
    Ok(solve_homotopy(f, m, m2, None))
}

fn check_endpoints(f: &CdgaMorphism, m: &MinimalModel, m2: &MinimalModel) -> Result<(), ModelError> {
    if f.source != m.source || f.target != m2.source {
        return Err(ModelError::NotAMorphism("f does not connect the two model targets".into()));
    }
    f.check().map_err(ModelError::NotAMorphism)
}

fn solve_homotopy(f: &CdgaMorphism, m: &MinimalModel, m2: &MinimalModel, phi: Option<&ModelMap>) -> HomotopyReport {
    let base = m.stages() + 1;
    let mut last = None;
    for cap in [base, 2 * base] {
        let report = solve_at_cap(f, m, m2, phi, cap);
        if report.exists {
            return report;
        }
        last = Some(report);
    }
    last.expect("two attempts were made")
}

fn solve_at_cap(f: &CdgaMorphism, m: &MinimalModel, m2: &MinimalModel, phi: Option<&ModelMap>, cap: usize) -> HomotopyReport {
    let a2 = &m2.source;
    let (n0, n1, n2) = (a2.dim(0), a2.dim(1), a2.dim(2));
    let d0 = a2.diff_matrix(0);
    let d1 = a2.diff_matrix(1);
    let mut h: Vec<Form> = Vec::new();
    let mut images: Vec<SparseVec> = Vec::new();
    let fail = |k: usize, images: Vec<SparseVec>| HomotopyReport {
        exists: false,
        cap,
        failed_at: Some(m.gens[k].label.clone()),
        proven: m.gens[k].stage == 1,
        comparison: phi.is_none().then_some(ModelMap { images }),
    };
    for k in 0..m.gens.len() {
        let mut rhs_form = Form::default();
        for (&(i, j), c) in &m.diff[k] {
            let p = form_mul(a2, &h[i], &h[j]);
            for (t, v) in p.plain.iter().enumerate() {
                add_at(&mut rhs_form.plain, t, c, v);
            }
            for (t, v) in p.dt.iter().enumerate() {
                add_at(&mut rhs_form.dt, t, c, v);
            }
        }
        // Candidate targets for φ(x_k): generators of M' up to the same stage.
        let z_vars: Vec<usize> = match phi {
            Some(_) => Vec::new(),
            None => (0..m2.gens.len()).filter(|&y| m2.gens[y].stage <= m.gens[k].stage).collect(),
        };
        let phi_dx: BTreeMap<Monomial, Scalar> = match phi {
            Some(_) => BTreeMap::new(),
            None => ModelMap { images: images.clone() }.on_differential(m, k),
        };
        let mut monos: Vec<Monomial> = phi_dx.keys().cloned().collect();
        for &y in &z_vars {
            monos.extend(m2.d_monomial(&[y]).into_keys());
        }
        monos.sort();
        monos.dedup();

        // Unknowns: α_0..α_cap (n1 each), β_0..β_{cap−1} (n0 each), z.
        let alpha = |t: usize, i: usize| t * n1 + i;
        let beta = |t: usize, i: usize| (cap + 1) * n1 + t * n0 + i;
        let zcol = |y: usize| (cap + 1) * n1 + cap * n0 + y;
        let ncols = (cap + 1) * n1 + cap * n0 + z_vars.len();
        let plain_len = rhs_form.plain.len().max(cap + 1);
        let dt_len = rhs_form.dt.len().max(cap);
        let mut rows: Vec<(SparseVec, Scalar)> = Vec::new();
        // d α_t = H.plain[t].
        for t in 0..plain_len {
            let target = rhs_form.plain.get(t).cloned().unwrap_or_default();
            for r in 0..n2 {
                let mut row = SparseVec::new();
                if t <= cap {
                    for i in 0..n1 {
                        let x = d1.get(r, i);
                        if !x.is_zero() {
                            row.insert(alpha(t, i), x.clone());
                        }
                    }
                }
                rows.push((row, target.get(&r).cloned().unwrap_or_else(Scalar::zero)));
            }
        }
        // (t+1) α_{t+1} − d β_t = H.dt[t].
        for t in 0..dt_len {
            let target = rhs_form.dt.get(t).cloned().unwrap_or_default();
            for r in 0..n1 {
                let mut row = SparseVec::new();
                if t < cap {
                    row.insert(alpha(t + 1, r), int(t as i64 + 1));
                    for i in 0..n0 {
                        let x = d0.get(r, i);
                        if !x.is_zero() {
                            row.insert(beta(t, i), -x.clone());
                        }
                    }
                }
                rows.push((row, target.get(&r).cloned().unwrap_or_else(Scalar::zero)));
            }
        }
        // α_0 = f ρ(x).
        let start = f.apply(1, &m.rho[k]);
        for r in 0..n1 {
            rows.push(([(alpha(0, r), Scalar::one())].into(), start.get(&r).cloned().unwrap_or_else(Scalar::zero)));
        }
        // Σ α_t = ρ'(φ(x)).
        let end_known: SparseVec = match phi {
            Some(p) => {
                let mut v = SparseVec::new();
                for (&y, c) in &p.images[k] {
                    axpy(&mut v, c, &m2.rho[y]);
                }
                v
            }
            None => SparseVec::new(),
        };
        for r in 0..n1 {
            let mut row: SparseVec = (0..=cap).map(|t| (alpha(t, r), Scalar::one())).collect();
            for (zi, &y) in z_vars.iter().enumerate() {
                if let Some(x) = m2.rho[y].get(&r) {
                    row.insert(zcol(zi), -x.clone());
                }
            }
            rows.push((row, end_known.get(&r).cloned().unwrap_or_else(Scalar::zero)));
        }
        // d φ(x) = φ(dx).
        if phi.is_none() {
            for mono in &monos {
                let mut row = SparseVec::new();
                for (zi, &y) in z_vars.iter().enumerate() {
                    if let Some(x) = m2.d_monomial(&[y]).get(mono) {
                        row.insert(zcol(zi), x.clone());
                    }
                }
                rows.push((row, phi_dx.get(mono).cloned().unwrap_or_else(Scalar::zero)));
            }
        }
        let mut mat = Matrix::zeros(rows.len(), ncols);
        let mut b = Vec::with_capacity(rows.len());
        for (r, (row, rhs)) in rows.into_iter().enumerate() {
            for (c, x) in row {
                mat.set(r, c, x);
            }
            b.push(rhs);
        }
        let Some(sol) = mat.solve(&b) else {
            return fail(k, images);
        };
        let form = Form {
            plain: (0..=cap).map(|t| sparse_from_dense(&sol[alpha(t, 0)..alpha(t, 0) + n1])).collect(),
            dt: (0..cap).map(|t| sparse_from_dense(&sol[beta(t, 0)..beta(t, 0) + n0])).collect(),
        };
        h.push(form);
        if phi.is_none() {
            let img: SparseVec = z_vars
                .iter()
                .enumerate()
                .filter(|(zi, _)| !sol[zcol(*zi)].is_zero())
                .map(|(zi, &y)| (y, sol[zcol(zi)].clone()))
                .collect();
            images.push(img);
        }
    }
    HomotopyReport {
        exists: true,
        cap,
        failed_at: None,
        proven: false,
        comparison: phi.is_none().then_some(ModelMap { images }),
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct StageJson {
    pub dim: usize,
    /// Rows: products `x_i x_j` (`i < j`) of earlier generators in
    /// lexicographic order; columns: the new generators.
    pub attach: Vec<Vec<String>>,
    /// Rows: basis of `A^1`; columns: the new generators.
    pub rho1: Vec<Vec<String>>,
    pub weights: Vec<u32>,
    pub labels: Vec<String>,
}

/// The cdga of `M(Q)` up to degree 1, the generating stages, and the
/// target algebra.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct MinimalModelJson {
    #[serde(flatten)]
    pub cdga: CdgaJson,
    pub stages: Vec<StageJson>,
    pub source: CdgaJson,
}

impl MinimalModel {
    pub fn to_json(&self) -> Result<MinimalModelJson, ModelError> {
        let mut stages = Vec::new();
        for q in 1..=self.stages() {
            let range = self.stage_range(q);
            let prev = range.start;
            let pairs: Vec<(usize, usize)> = (0..prev).flat_map(|i| (i + 1..prev).map(move |j| (i, j))).collect();
            let pos: HashMap<(usize, usize), usize> = pairs.iter().enumerate().map(|(r, &p)| (p, r)).collect();
            let mut attach = Matrix::zeros(pairs.len(), range.len());
            let mut rho1 = Matrix::zeros(self.source.dim(1), range.len());
            for (c, k) in range.clone().enumerate() {
                for (p, x) in &self.diff[k] {
                    attach.set(pos[p], c, x.clone());
                }
                for (&i, x) in &self.rho[k] {
                    rho1.set(i, c, x.clone());
                }
            }
            stages.push(StageJson {
                dim: range.len(),
                attach: matrix_to_json(&attach),
                rho1: matrix_to_json(&rho1),
                weights: range.clone().map(|k| self.gens[k].weight).collect(),
                labels: range.map(|k| self.gens[k].label.clone()).collect(),
            });
        }
        Ok(MinimalModelJson {
            cdga: self.assemble(1, None)?.to_json(),
            stages,
            source: self.source.to_json(),
        })
    }

    pub fn from_json(j: &MinimalModelJson) -> Result<MinimalModel, ModelError> {
        let source = Cdga::from_json(&j.source)?;
        let mut m = MinimalModel {
            source,
            gens: Vec::new(),
            diff: Vec::new(),
            rho: Vec::new(),
            stage_ends: Vec::new(),
        };
        for (q, st) in j.stages.iter().enumerate() {
            let prev = m.gens.len();
            let pairs: Vec<(usize, usize)> = (0..prev).flat_map(|i| (i + 1..prev).map(move |j| (i, j))).collect();
            let attach = matrix_from_json(&st.attach, pairs.len(), st.dim)?;
            let rho1 = matrix_from_json(&st.rho1, m.source.dim(1), st.dim)?;
            if st.weights.len() != st.dim || st.labels.len() != st.dim {
                return Err(ModelError::Json(format!("stage {} has inconsistent lengths", q + 1)));
            }
            for c in 0..st.dim {
                let d = attach.sparse_column(c).into_iter().map(|(r, x)| (pairs[r], x)).collect();
                m.gens.push(Generator {
                    label: st.labels[c].clone(),
                    stage: q + 1,
                    weight: st.weights[c],
                });
                m.diff.push(d);
                m.rho.push(rho1.sparse_column(c));
            }
            m.stage_ends.push(m.gens.len());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdga::{interval_algebra, marked_curve_model, unmarked_curve_model};
    use crate::nilpotent_lie::{lyndon_dims, LieExpr};

    #[test]
    fn marked_three_points_is_free() {
        let a = marked_curve_model(0, 3).unwrap();
        let m = MinimalModel::build(&a, 4).unwrap();
        assert_eq!(m.stage_dims(), lyndon_dims(2, 4));
        assert!(check_minimality(&m, &a).passed());
    }

    #[test]
    fn genus_one_is_abelian() {
        let a = unmarked_curve_model(1).unwrap();
        let m = MinimalModel::build(&a, 4).unwrap();
        assert_eq!(m.stage_dims(), vec![2, 0, 0, 0]);
        assert!(check_minimality(&m, &a).passed());
        let dual = dual_lie(&m).unwrap();
        assert_eq!(dual.lie.gr_dims(), vec![2, 0, 0, 0]);
    }

    #[test]
    fn genus_two_stage_dims() {
        let a = unmarked_curve_model(2).unwrap();
        let m = MinimalModel::build(&a, 3).unwrap();
        assert_eq!(m.stage_dims(), vec![4, 5, 16]);
        let report = check_minimality(&m, &a);
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.relative_h2, vec![5, 16]);
        let dual = dual_lie(&m).unwrap();
        assert_eq!(dual.lie.gr_dims(), vec![4, 5, 16]);
    }

    #[test]
    fn dual_of_marked_model() {
        let a = marked_curve_model(0, 3).unwrap();
        let m = MinimalModel::build(&a, 2).unwrap();
        assert_eq!(dual_lie(&m).unwrap().lie.gr_dims(), vec![2, 1]);
    }

    #[test]
    fn witt_dimensions_for_marked_models() {
        for (g, r) in [(0, 2), (0, 3), (0, 4), (0, 5), (1, 1), (1, 2), (1, 3), (2, 1)] {
            let k = 2 * g + r - 1;
            let q = if k <= 3 { 4 } else { 3 };
            let a = marked_curve_model(g, r).unwrap();
            let m = MinimalModel::build(&a, q).unwrap();
            assert_eq!(m.stage_dims(), lyndon_dims(k, q), "(g, r) = ({g}, {r})");
        }
    }

    #[test]
    fn interval_model_is_trivial() {
        for d in 1..=3 {
            let a = interval_algebra(d).unwrap();
            let m = MinimalModel::build(&a, 3).unwrap();
            assert_eq!(m.stage_dims(), vec![0, 0, 0]);
            assert!(check_minimality(&m, &a).passed());
        }
    }

    #[test]
    fn assembled_model_is_a_cdga() {
        for a in [marked_curve_model(0, 3).unwrap(), unmarked_curve_model(2).unwrap()] {
            let m = MinimalModel::build(&a, 3).unwrap();
            let c = m.assemble(3, Some(3)).unwrap();
            assert!(validate(&c).is_valid());
        }
    }

    #[test]
    fn corrupted_attaching_map_is_detected() {
        let a = marked_curve_model(0, 3).unwrap();
        let mut m = MinimalModel::build(&a, 3).unwrap();
        let k = m.stage_range(2).start;
        m.diff[k].clear();
        let report = check_minimality(&m, &a);
        assert_eq!(report.failure.map(|f| f.0), Some(2));
    }

    #[test]
    fn disconnected_input_rejected() {
        // Two orthogonal idempotents in degree 0.
        let c = Cdga::build(
            1,
            vec![vec!["e".into(), "f".into()]],
            vec![vec![0, 0]],
            None,
            &|_, _| SparseVec::new(),
            &|_, i, _, j| if i == j { [(i, Scalar::one())].into() } else { SparseVec::new() },
        )
        .unwrap()
        .with_unit([(0, Scalar::one()), (1, Scalar::one())].into());
        assert!(matches!(MinimalModel::build(&c, 2), Err(ModelError::NotConnected(2))));
    }

    #[test]
    fn identity_homotopy_exists() {
        let a = unmarked_curve_model(2).unwrap();
        let m = MinimalModel::build(&a, 2).unwrap();
        let f = CdgaMorphism::identity(&a);
        let r = homotopy_lift_check(&f, &m, &m, &ModelMap::identity(&m)).unwrap();
        assert!(r.exists);
    }

    #[test]
    fn comparison_between_section_rules() {
        for a in [marked_curve_model(0, 3).unwrap(), unmarked_curve_model(2).unwrap()] {
            let m = MinimalModel::build(&a, 3).unwrap();
            let m2 = MinimalModel::build_with(&a, 3, SectionRule { order: PivotOrder::Reverse }).unwrap();
            assert_eq!(m.stage_dims(), m2.stage_dims());
            assert_ne!(m, m2);
            let f = CdgaMorphism::identity(&a);
            let r = comparison_map(&f, &m, &m2).unwrap();
            assert!(r.exists, "{r:?}");
            let phi = r.comparison.unwrap();
            phi.check(&m, &m2).unwrap();
            assert!(homotopy_lift_check(&f, &m, &m2, &phi).unwrap().exists);
        }
    }

    #[test]
    fn swapped_generators_admit_no_homotopy() {
        let a = marked_curve_model(0, 3).unwrap();
        let m = MinimalModel::build(&a, 2).unwrap();
        let f = CdgaMorphism::identity(&a);
        let swap = ModelMap {
            images: vec![
                [(1, Scalar::one())].into(),
                [(0, Scalar::one())].into(),
                [(2, -Scalar::one())].into(),
            ],
        };
        let r = homotopy_lift_check(&f, &m, &m, &swap).unwrap();
        assert!(!r.exists);
        assert!(r.proven);
        let not_morphism = ModelMap {
            images: vec![[(1, Scalar::one())].into(), [(0, Scalar::one())].into(), [(2, Scalar::one())].into()],
        };
        assert!(homotopy_lift_check(&f, &m, &m, &not_morphism).is_err());
    }

    #[test]
    fn json_round_trip_and_rebuild() {
        let a = unmarked_curve_model(2).unwrap();
        let m = MinimalModel::build(&a, 3).unwrap();
        let text = serde_json::to_string(&m.to_json().unwrap()).unwrap();
        let parsed: MinimalModelJson = serde_json::from_str(&text).unwrap();
        assert_eq!(MinimalModel::from_json(&parsed).unwrap(), m);
        let rebuilt = MinimalModel::build(&Cdga::from_json(&parsed.source).unwrap(), 3).unwrap();
        assert_eq!(rebuilt, m);
    }

    #[test]
    fn dual_matches_one_relator_quotient() {
        let a = unmarked_curve_model(2).unwrap();
        let m = MinimalModel::build(&a, 3).unwrap();
        let dual = dual_lie(&m).unwrap();
        let l = crate::nilpotent_lie::free_nilpotent(&["v1", "v2", "v3", "v4"], 3).unwrap();
        let quo = l
            .quotient_by_exprs(&[LieExpr::parse("[v1,v2]+[v3,v4]").unwrap()])
            .unwrap();
        assert_eq!(dual.lie.gr_dims(), quo.gr_dims());
    }
}
