//! Tree-family generators: random bounded-degree families, fixture
//! shapes, and the two counterexample families showing the theorem's
//! hypotheses are tight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combinat::{binom, choose2};
use crate::tree::{RootedTree, TreeFamily};
use crate::{Error, Result};

/// Descriptor for a deterministic family generator.
#[derive(Clone, Debug)]
pub enum FamilySpec {
    /// `trees` random trees grown by uniform attachment restricted to
    /// vertices of degree < delta, orders uniform in [2, n], truncated so
    /// the total edge count stays within C(n,2).
    RandomBoundedDegree { n: usize, delta: usize, trees: usize },
    /// Paths of order n, as many as the edge budget allows, finished by
    /// one shorter path if a positive remainder is left.
    Paths { n: usize, edge_budget: u64 },
    /// `trees` caterpillars of order exactly n: a spine whose vertices
    /// carry up to delta−2 legs each.
    Caterpillars { n: usize, delta: usize, trees: usize },
    /// The single full delta-regular tree of the given depth (every
    /// vertex has degree delta or 1), as a spanning family.
    RegularTree { delta: usize, depth: usize },
    /// 2k+1 identical copies of one random tree of order k+1 with degree
    /// bound delta: total edges exactly C(2k+1, 2).
    Ringel { k: usize, delta: usize },
}

/// Grows one random tree by uniform attachment among unsaturated vertices.
pub fn random_tree(order: usize, delta: usize, rng: &mut impl Rng) -> Result<RootedTree> {
    if order == 0 {
        return Err(Error::Input("tree order must be positive".into()));
    }
    if order > 2 && delta < 2 {
        return Err(Error::Input(format!(
            "no tree of order {order} has maximum degree {delta}"
        )));
    }
    let mut parent = vec![0usize; order];
    let mut degree = vec![0usize; order];
    for v in 1..order {
        // Some vertex is unsaturated: total degree 2(v−1) < v·delta.
        loop {
            let p = rng.gen_range(0..v);
            if degree[p] < delta {
                parent[v] = p;
                degree[p] += 1;
                degree[v] = 1;
                break;
            }
        }
    }
    RootedTree::new(0, parent)
}

/// Full delta-regular tree of the given depth: the root has delta
/// children, every other internal vertex delta−1, leaves at the last
/// depth. Labels are breadth-first.
pub fn regular_tree(delta: usize, depth: usize) -> Result<RootedTree> {
    if delta < 2 {
        return Err(Error::Input("regular tree needs delta ≥ 2".into()));
    }
    let mut parent = vec![0usize];
    let mut layer = vec![0usize];
    for d in 0..depth {
        let mut next = Vec::new();
        for &p in &layer {
            let kids = if d == 0 { delta } else { delta - 1 };
            for _ in 0..kids {
                parent.push(p);
                next.push(parent.len() - 1);
            }
        }
        layer = next;
    }
    RootedTree::new(0, parent)
}

fn caterpillar(order: usize, delta: usize) -> Result<RootedTree> {
    if delta < 2 && order > 2 {
        return Err(Error::Input("caterpillar needs delta ≥ 2".into()));
    }
    let mut parent = vec![0usize];
    let mut spine = 0usize;
    while parent.len() < order {
        // Extend the spine, then hang up to delta−2 legs on the new vertex.
        parent.push(spine);
        spine = parent.len() - 1;
        let legs = (delta.saturating_sub(2)).min(order - parent.len());
        for _ in 0..legs {
            parent.push(spine);
        }
    }
    RootedTree::new(0, parent)
}

/// Generates a family from a descriptor, deterministically under `seed`.
pub fn generate_family(spec: &FamilySpec, seed: u64) -> Result<TreeFamily> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        FamilySpec::RandomBoundedDegree { n, delta, trees } => {
            if n < 2 {
                return Err(Error::Input("random family needs n ≥ 2".into()));
            }
            let budget = binom(n, 2);
            let mut used = 0u128;
            let mut out = Vec::new();
            for _ in 0..trees {
                let mut order = rng.gen_range(2..=n);
                let left = budget - used;
                if left == 0 {
                    break;
                }
                if (order as u128 - 1) > left {
                    order = left as usize + 1;
                }
                out.push(random_tree(order, delta, &mut rng)?);
                used += order as u128 - 1;
            }
            Ok(TreeFamily::new(n, delta, out))
        }
        FamilySpec::Paths { n, edge_budget } => {
            if n < 2 {
                return Err(Error::Input("path family needs n ≥ 2".into()));
            }
            let budget = u128::from(edge_budget).min(binom(n, 2));
            let mut used = 0u128;
            let mut out = Vec::new();
            while used + (n as u128 - 1) <= budget {
                out.push(RootedTree::path(n));
                used += n as u128 - 1;
            }
            let left = (budget - used) as usize;
            if left >= 1 {
                out.push(RootedTree::path(left + 1));
            }
            Ok(TreeFamily::new(n, 2, out))
        }
        FamilySpec::Caterpillars { n, delta, trees } => {
            let t = caterpillar(n, delta)?;
            let fam = TreeFamily::new(n, delta, vec![t; trees]);
            fam.validate()?;
            Ok(fam)
        }
        FamilySpec::RegularTree { delta, depth } => {
            let t = regular_tree(delta, depth)?;
            let n = t.order();
            Ok(TreeFamily::new(n, delta, vec![t]))
        }
        FamilySpec::Ringel { k, delta } => {
            if k == 0 {
                return Err(Error::Input("ringel family needs k ≥ 1".into()));
            }
            let base = random_tree(k + 1, delta, &mut rng)?;
            let n = 2 * k + 1;
            let fam = TreeFamily::new(n, delta, vec![base; n]);
            debug_assert_eq!(u128::from(fam.total_edges()), binom(n, 2));
            Ok(fam)
        }
    }
}

/// The family of n/2 copies of the full delta-regular depth tree (order
/// n, total edges exactly C(n,2)), with copy 0 modified by chopping its
/// highest-indexed leaf and re-attaching it below its lowest-indexed
/// leaf. For delta ≥ 5 the modified tree has a unique vertex of degree 2;
/// for delta = 3 the chopped leaf's parent drops to degree 2 as well.
pub fn modified_regular(delta: usize, depth: usize) -> Result<TreeFamily> {
    if delta < 3 || delta % 2 == 0 {
        return Err(Error::Input(format!(
            "modified regular family needs odd delta ≥ 3, got {delta}"
        )));
    }
    if depth == 0 {
        return Err(Error::Input("modified regular family needs depth ≥ 1".into()));
    }
    let base = regular_tree(delta, depth)?;
    let n = base.order();
    debug_assert_eq!(n % 2, 0, "odd delta gives an even order");

    let chopped = n - 1; // highest-indexed vertex is a deepest leaf
    let target = base.leaves()[0];
    let mut parent: Vec<usize> = (0..n).map(|v| base.parent(v).unwrap_or(v)).collect();
    parent[chopped] = target;
    let modified = RootedTree::new(base.root(), parent)?;

    let mut trees = vec![base; n / 2];
    trees[0] = modified;
    let fam = TreeFamily::new(n, delta, trees);
    debug_assert_eq!(u128::from(fam.total_edges()), binom(n, 2));
    Ok(fam)
}

/// Stars of order s+1 with s = ⌈(1/2 + 2√ε)n⌉, as many as fit into
/// C(n,2) edges. Their total edge count lies in [C(n,2)−n, C(n,2)], yet
/// the family does not pack into K_{(1+ε)n}.
pub fn star_family(n: usize, epsilon: f64) -> Result<TreeFamily> {
    if !(epsilon > 0.0 && epsilon < 1e-3) {
        return Err(Error::Input(format!(
            "star family needs epsilon in (0, 1e-3), got {epsilon}"
        )));
    }
    if n < 8 {
        return Err(Error::Input("star family needs n ≥ 8".into()));
    }
    // The relative guard keeps exactly-integral real values (e.g. ε with a
    // rational square root) from being pushed up by floating-point noise.
    let s = ((0.5 + 2.0 * epsilon.sqrt()) * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    let count = (binom(n, 2) / s as u128) as usize;
    let fam = TreeFamily::new(n, s, vec![RootedTree::star(s + 1); count]);
    fam.validate()?;
    Ok(fam)
}

/// The counting argument behind the star family: its edges cannot fit in
/// the host clique once the star centres are excluded.
#[derive(Clone, Debug, Serialize)]
pub struct StarCapacityReport {
    pub n: usize,
    pub epsilon: f64,
    /// Edges per star, s = ⌈(1/2 + 2√ε)n⌉.
    pub star_edges: usize,
    pub star_count: usize,
    pub total_edges: u64,
    /// Lower bound C(n,2) − n on the family's edge count.
    pub family_edges_lower: f64,
    /// Upper bound C((1+ε)n, 2) − C(3√ε·n, 2) on the edges a packing
    /// could use: at least 3√ε·n host vertices carry no star centre, and
    /// no packed edge joins two of them.
    pub host_capacity: f64,
    /// Star count stays below (1 − 3√ε)n, so the centre-free set is large.
    pub count_below_centre_bound: bool,
    /// family_edges_lower > host_capacity: the family cannot pack.
    pub refutes_packing: bool,
}

pub fn star_capacity_report(n: usize, epsilon: f64) -> Result<StarCapacityReport> {
    let fam = star_family(n, epsilon)?;
    let s = fam.delta;
    let count = fam.trees.len();
    let family_edges_lower = binom(n, 2) as f64 - n as f64;
    let host_capacity =
        choose2((1.0 + epsilon) * n as f64) - choose2(3.0 * epsilon.sqrt() * n as f64);
    Ok(StarCapacityReport {
        n,
        epsilon,
        star_edges: s,
        star_count: count,
        total_edges: fam.total_edges(),
        family_edges_lower,
        host_capacity,
        count_below_centre_bound: (count as f64) < (1.0 - 3.0 * epsilon.sqrt()) * n as f64,
        refutes_packing: family_edges_lower > host_capacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_tree_of_degree_three_depth_two_has_order_ten() {
        let t = regular_tree(3, 2).unwrap();
        assert_eq!(t.order(), 10);
        assert_eq!(t.max_degree(), 3);
        // Every vertex has degree 1 or 3.
        for v in 0..10 {
            assert!(t.degree(v) == 1 || t.degree(v) == 3, "degree {}", t.degree(v));
        }
    }

    #[test]
    fn ringel_family_saturates_the_budget() {
        let fam = generate_family(&FamilySpec::Ringel { k: 10, delta: 3 }, 5).unwrap();
        assert_eq!(fam.trees.len(), 21);
        assert_eq!(fam.n, 21);
        assert!(fam.trees.iter().all(|t| t.order() == 11));
        assert_eq!(u128::from(fam.total_edges()), binom(21, 2));
        fam.validate().unwrap();
    }

    #[test]
    fn path_family_respects_edge_budget() {
        let budget = binom(10, 2) as u64; // 45
        let fam = generate_family(&FamilySpec::Paths { n: 10, edge_budget: budget }, 0).unwrap();
        assert_eq!(fam.total_edges(), 45);
        fam.validate().unwrap();
        assert_eq!(fam.trees.len(), 5);
    }

    #[test]
    fn random_families_are_deterministic_and_valid() {
        let spec = FamilySpec::RandomBoundedDegree { n: 30, delta: 4, trees: 12 };
        let a = generate_family(&spec, 99).unwrap();
        let b = generate_family(&spec, 99).unwrap();
        assert_eq!(a.trees, b.trees);
        a.validate().unwrap();
        assert!(a.max_degree() <= 4);
        let c = generate_family(&spec, 100).unwrap();
        assert_ne!(a.trees, c.trees, "different seeds should differ");
    }

    #[test]
    fn caterpillars_have_exact_order_and_degree() {
        let fam =
            generate_family(&FamilySpec::Caterpillars { n: 20, delta: 4, trees: 3 }, 0).unwrap();
        for t in &fam.trees {
            assert_eq!(t.order(), 20);
            assert!(t.max_degree() <= 4);
        }
    }

    #[test]
    fn modified_regular_three_two_matches_the_figure() {
        // Depth-2 tree of degree 3 has order 10; five copies carry
        // 5·9 = 45 = C(10,2) edges.
        let fam = modified_regular(3, 2).unwrap();
        assert_eq!(fam.trees.len(), 5);
        assert!(fam.trees.iter().all(|t| t.order() == 10));
        assert_eq!(u128::from(fam.total_edges()), binom(10, 2));
        assert_eq!(fam.max_degree(), 3);
        fam.validate().unwrap();
        // With delta = 3 the chop leaves TWO degree-2 vertices: the
        // re-attachment leaf and the chopped leaf's old parent.
        let modified = &fam.trees[0];
        let deg2 = (0..10).filter(|&v| modified.degree(v) == 2).count();
        assert_eq!(deg2, 2);
        // The unmodified copies have none.
        let deg2_base = (0..10).filter(|&v| fam.trees[1].degree(v) == 2).count();
        assert_eq!(deg2_base, 0);
    }

    #[test]
    fn modified_regular_five_has_unique_degree_two_vertex() {
        let fam = modified_regular(5, 2).unwrap();
        let n = fam.trees[0].order();
        assert_eq!(n, 26);
        assert_eq!(fam.trees.len(), 13);
        assert_eq!(u128::from(fam.total_edges()), binom(n, 2));
        let modified = &fam.trees[0];
        let deg2: Vec<usize> = (0..n).filter(|&v| modified.degree(v) == 2).collect();
        assert_eq!(deg2.len(), 1, "delta ≥ 5 leaves a unique degree-2 vertex");
    }

    #[test]
    fn modified_regular_rejects_even_delta() {
        assert!(modified_regular(4, 2).is_err());
        assert!(modified_regular(1, 2).is_err());
    }

    #[test]
    fn star_family_edge_range() {
        let fam = star_family(400, 0.0009).unwrap();
        // s = ⌈(0.5 + 0.06)·400⌉ = 224, ℓ = ⌊79800/224⌋ = 356.
        assert_eq!(fam.delta, 224);
        assert_eq!(fam.trees.len(), 356);
        assert_eq!(fam.total_edges(), 356 * 224);
        let total = u128::from(fam.total_edges());
        assert!(total >= binom(400, 2) - 400 && total <= binom(400, 2));
    }

    #[test]
    fn star_capacity_report_refutes_packing() {
        let report = star_capacity_report(400, 0.0009).unwrap();
        assert_eq!(report.star_edges, 224);
        assert_eq!(report.star_count, 356);
        assert_eq!(report.family_edges_lower, 79400.0);
        // C(400.36, 2) − C(36, 2) = 79943.88 − 630 = 79313.88.
        assert!((report.host_capacity - 79313.8848).abs() < 1e-3);
        assert!(report.refutes_packing);
        assert!(report.count_below_centre_bound);
    }

    #[test]
    fn star_family_rejects_large_epsilon() {
        assert!(star_family(400, 0.01).is_err());
        assert!(star_family(400, 0.0).is_err());
    }
}
