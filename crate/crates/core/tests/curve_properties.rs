use logpi1_core::curve_monodromy::{
    analyze, line_graph, monodromy_automorphism, presentation, reduce, validate_graph, BaseDatum, DualGraph, Edge,
    Stability, Verdict, Vertex,
};
use logpi1_core::exactlin::int;
use logpi1_core::nilpotent_lie::{LieAutomorphism, LieElement, NilpotentLie};
use proptest::prelude::*;

/// Small trees: vertex `k > 0` hangs off a vertex with smaller index.
fn tree_strategy() -> impl Strategy<Value = DualGraph> {
    (1usize..4).prop_flat_map(|n| {
        (
            proptest::collection::vec((0usize..2, 0usize..3), n + 1),
            proptest::collection::vec(any::<prop::sample::Index>(), n),
        )
            .prop_map(|(data, parents)| {
                let vertices = data
                    .iter()
                    .enumerate()
                    .map(|(i, &(genus, marked))| Vertex {
                        id: format!("v{i}"),
                        genus,
                        marked,
                    })
                    .collect();
                let edges = parents
                    .iter()
                    .enumerate()
                    .map(|(k, p)| Edge {
                        id: format!("e{k}"),
                        ends: [format!("v{}", p.index(k + 1)), format!("v{}", k + 1)],
                    })
                    .collect();
                DualGraph { vertices, edges }
            })
    })
}

fn relabel(g: &DualGraph, perm: &[usize]) -> DualGraph {
    let name = |id: &str| -> String {
        let i: usize = id[1..].parse().unwrap();
        format!("comp{}", perm[i])
    };
    let mut vertices: Vec<Vertex> = g
        .vertices
        .iter()
        .map(|v| Vertex {
            id: name(&v.id),
            ..v.clone()
        })
        .collect();
    vertices.sort_by(|a, b| a.id.cmp(&b.id));
    let mut edges: Vec<Edge> = g
        .edges
        .iter()
        .rev()
        .map(|e| Edge {
            id: format!("z{}", e.id),
            ends: [name(&e.ends[1]), name(&e.ends[0])],
        })
        .collect();
    edges.sort_by(|a, b| a.id.cmp(&b.id));
    DualGraph { vertices, edges }
}

fn small_element(lie: &NilpotentLie, coeffs: &[i64]) -> LieElement {
    let mut x = LieElement::zero();
    for (i, &c) in coeffs.iter().enumerate().take(lie.dim()) {
        x = x.add(&lie.basis_element(i).scale(&int(c)));
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn relabeling_preserves_dims(g in tree_strategy(), seed in any::<u64>()) {
        let n = g.vertices.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed as usize) % n);
        let h = relabel(&g, &perm);
        let p = presentation(&g, 3).unwrap();
        let p2 = presentation(&h, 3).unwrap();
        prop_assert_eq!(p.lie.gr_dims(), p2.lie.gr_dims());
        prop_assert_eq!(p.lie.generators().len(), p2.lie.generators().len());
    }

    #[test]
    fn residues_sum_to_zero(g in tree_strategy(), extra in any::<prop::sample::Index>()) {
        let mut g = g;
        // Close a cycle so transported residues are exercised too.
        let n = g.vertices.len();
        let a = extra.index(n);
        g.edges.push(Edge { id: "loop".into(), ends: [format!("v{a}"), format!("v{}", n - 1)] });
        let p = presentation(&g, 3).unwrap();
        for e in &g.edges {
            let s = p.residues[&(e.id.clone(), 1)].add(&p.residues[&(e.id.clone(), 2)]);
            prop_assert!(s.is_zero(), "edge {}", e.id);
            prop_assert_eq!(&p.gluing[&(e.id.clone(), 1)], &p.gluing[&(e.id.clone(), 2)]);
        }
    }

    #[test]
    fn verdict_invariant_under_inner_precomposition(coeffs in proptest::collection::vec(-2i64..3, 9)) {
        let line = &reduce(&line_graph((1, 0), (1, 0), 1), None).unwrap().0[0];
        let p = presentation(&line.graph, 4).unwrap();
        let phi = monodromy_automorphism(&p, line).unwrap();
        let d = small_element(&p.lie, &coeffs);
        let inner = LieAutomorphism::inner(&p.lie, &d).unwrap();
        let twisted = phi.compose(&p.lie, &inner).unwrap();
        prop_assert!(!p.lie.is_inner(&phi).unwrap().is_inner());
        prop_assert!(!p.lie.is_inner(&twisted).unwrap().is_inner());
        // The identity twisted by an inner automorphism stays inner.
        prop_assert!(p.lie.is_inner(&inner).unwrap().is_inner());
    }

    #[test]
    fn monodromy_is_unipotent(n in 1usize..4, gy in 0usize..2, gz in 0usize..2) {
        let g = line_graph((gy, 2 - 2 * gy), (gz, 2 - 2 * gz), n);
        prop_assume!(validate_graph(&g, Stability::MinimalSemistable).is_ok());
        let line = &reduce(&g, Some("y")).unwrap().0[0];
        let p = presentation(&line.graph, 3).unwrap();
        let phi = monodromy_automorphism(&p, line).unwrap();
        for i in 0..p.lie.generators().len() {
            let x = p.lie.generator(i);
            let diff = phi.apply(&x).sub(&x);
            prop_assert!(diff.is_zero() || p.lie.filtration_degree(&diff).unwrap() >= 2);
        }
    }
}

#[test]
fn analyze_is_deterministic() {
    let g = line_graph((1, 0), (1, 0), 2);
    let base = BaseDatum::Good { vertex: "y".into() };
    let a = serde_json::to_string(&analyze(&g, &base, 4).unwrap()).unwrap();
    let b = serde_json::to_string(&analyze(&g, &base, 4).unwrap()).unwrap();
    assert_eq!(a, b);
    let r = analyze(&g, &base, 4).unwrap();
    assert_eq!(r.verdict, Verdict::NontrivialInOut);
}
