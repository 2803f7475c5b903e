//! Family normalization: merging small trees and grouping/padding to
//! exact per-group orders.

use crate::combinat::binom;
use crate::tree::{RootedTree, TreeFamily};
use crate::{Error, Result};

/// Identifies the lowest-indexed leaf of `a` with the lowest-indexed leaf
/// of `b`, producing one tree of order v(a)+v(b)−1 rooted at a's root.
///
/// Vertices of `a` keep their labels; vertices of `b` other than the
/// identified leaf are relabelled to v(a), v(a)+1, … in ascending order.
pub fn merge_two(a: &RootedTree, b: &RootedTree) -> RootedTree {
    let leaf_a = a.leaves()[0];
    let leaf_b = b.leaves()[0];
    let b = b.rerooted(leaf_b);

    let mut relabel = vec![0usize; b.order()];
    let mut next = a.order();
    for v in 0..b.order() {
        if v == leaf_b {
            relabel[v] = leaf_a;
        } else {
            relabel[v] = next;
            next += 1;
        }
    }

    let mut parent: Vec<usize> = (0..a.order()).map(|v| a.parent(v).unwrap_or(v)).collect();
    parent.resize(a.order() + b.order() - 1, 0);
    for v in 0..b.order() {
        if v != leaf_b {
            parent[relabel[v]] = relabel[b.parent(v).expect("only leaf_b is the root of b")];
        }
    }
    RootedTree::new(a.root(), parent).expect("leaf identification preserves the tree")
}

/// Provenance of one merged tree: (index in the input family, vertex map)
/// pairs, where `map[v]` is the merged-tree vertex carrying source vertex v.
pub type MergeTrace = Vec<(usize, Vec<usize>)>;

/// Repeatedly merges the two lowest-indexed trees of order ≤ n/2 (the
/// merge replacing the lower-indexed one) until at most one remains; that
/// survivor, if any, is recorded as the family's exceptional tree.
///
/// Total edge count is always preserved. The maximum degree is preserved
/// whenever delta ≥ 2; a merge that would exceed the declared bound is an
/// input error.
pub fn merge_small_trees(fam: &TreeFamily) -> Result<TreeFamily> {
    Ok(merge_small_trees_traced(fam)?.0)
}

/// Like [`merge_small_trees`], also returning one [`MergeTrace`] per output
/// tree so a packing of the merged family can be projected back onto the
/// input trees. The identified leaves of a merge share a vertex, so two
/// source maps may overlap there; everything else is disjoint.
pub fn merge_small_trees_traced(fam: &TreeFamily) -> Result<(TreeFamily, Vec<MergeTrace>)> {
    fam.validate()?;
    let mut out = fam.clone();
    let mut traces: Vec<MergeTrace> = (0..out.trees.len())
        .map(|i| vec![(i, (0..out.trees[i].order()).collect())])
        .collect();
    loop {
        let small: Vec<usize> = (0..out.trees.len()).filter(|&i| out.is_small(i)).collect();
        if small.len() < 2 {
            break;
        }
        let (i, j) = (small[0], small[1]);
        let a_order = out.trees[i].order();
        let leaf_a = out.trees[i].leaves()[0];
        let leaf_b = out.trees[j].leaves()[0];
        let merged = merge_two(&out.trees[i], &out.trees[j]);
        if merged.max_degree() > out.delta {
            return Err(Error::Input(format!(
                "merging trees {i} and {j} raises the maximum degree to {}, above delta = {}",
                merged.max_degree(),
                out.delta
            )));
        }
        // merge_two keeps a's labels and sends b's vertex v to leaf_a when
        // v = leaf_b, else to a_order + v, shifted down once past leaf_b.
        let relabel = |v: usize| match v.cmp(&leaf_b) {
            std::cmp::Ordering::Equal => leaf_a,
            std::cmp::Ordering::Less => a_order + v,
            std::cmp::Ordering::Greater => a_order + v - 1,
        };
        let absorbed = traces.remove(j);
        for (source, map) in absorbed {
            let map = map.into_iter().map(relabel).collect();
            traces[i].push((source, map));
        }
        out.trees[i] = merged;
        out.trees.remove(j);
    }
    out.recompute_exceptional()?;
    if out.trees.len() >= 2 * out.n {
        return Err(Error::Input(format!(
            "family still has {} trees after merging, expected fewer than 2n = {}",
            out.trees.len(),
            2 * out.n
        )));
    }
    Ok((out, traces))
}

/// A tree padded to its group's exact order, remembering where it came
/// from so a packing can be projected back onto the original tree: the
/// padding vertices are exactly `original_order..tree.order()`.
#[derive(Clone, Debug)]
pub struct PaddedTree {
    pub tree: RootedTree,
    pub original_order: usize,
    /// Index of the tree in the input family.
    pub source: usize,
}

impl PaddedTree {
    pub fn padding(&self) -> usize {
        self.tree.order() - self.original_order
    }
}

/// The grouped and padded family: group i (1-based) holds the trees of
/// original order in (b_{i−1}, b_i], each padded to exactly b_i.
#[derive(Clone, Debug)]
pub struct GroupedFamily {
    pub groups: Vec<Vec<PaddedTree>>,
    /// Integer group endpoints b_1 < … < b_c = n, with b_i = ⌈n/2 + i·n/(2c)⌉.
    pub boundaries: Vec<usize>,
    pub exceptional: Option<PaddedTree>,
    pub added_path_edges: u64,
    pub n: usize,
    pub delta: usize,
}

impl GroupedFamily {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// Order shared by every tree in group i (1-based): the endpoint b_i.
    pub fn group_order(&self, i: usize) -> usize {
        self.boundaries[i - 1]
    }

    pub fn total_padded_trees(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }
}

/// The number of groups 50/ε, rounded up.
pub fn suggested_group_count(epsilon: f64) -> usize {
    (50.0 / epsilon).ceil() as usize
}

/// Appends a path of `extra` fresh vertices below the lowest-indexed leaf.
fn pad_with_path(t: &RootedTree, extra: usize) -> RootedTree {
    if extra == 0 {
        return t.clone();
    }
    let leaf = t.leaves()[0];
    let old = t.order();
    let mut parent: Vec<usize> = (0..old).map(|v| t.parent(v).unwrap_or(v)).collect();
    parent.push(leaf);
    for k in 1..extra {
        parent.push(old + k - 1);
    }
    RootedTree::new(t.root(), parent).expect("appending a path preserves the tree")
}

/// Groups a normalized family by order into c intervals with integer
/// endpoints ⌈n/2 + i·n/(2c)⌉ and pads each tree by a leaf-appended path
/// to its interval's upper endpoint. The exceptional tree passes through
/// unpadded.
pub fn group_and_pad(fam: &TreeFamily, c: usize) -> Result<GroupedFamily> {
    fam.validate()?;
    if c == 0 {
        return Err(Error::Input("group count must be positive".into()));
    }
    let n = fam.n;
    // b_i = ceil(n(c+i) / 2c), exactly, in integers.
    let boundaries: Vec<usize> = (1..=c)
        .map(|i| (n * (c + i)).div_ceil(2 * c))
        .collect();

    let mut groups: Vec<Vec<PaddedTree>> = vec![Vec::new(); c];
    let mut exceptional = None;
    let mut added = 0u64;
    for (idx, t) in fam.trees.iter().enumerate() {
        if 2 * t.order() <= n {
            if fam.exceptional != Some(idx) {
                return Err(Error::Input(format!(
                    "tree {idx} has order {} ≤ n/2 but is not the exceptional tree",
                    t.order()
                )));
            }
            exceptional = Some(PaddedTree {
                tree: t.clone(),
                original_order: t.order(),
                source: idx,
            });
            continue;
        }
        let g = boundaries
            .iter()
            .position(|&b| t.order() <= b)
            .expect("order ≤ n = b_c");
        let target = boundaries[g];
        let extra = target - t.order();
        let padded = pad_with_path(t, extra);
        if padded.max_degree() > fam.delta {
            return Err(Error::Input(format!(
                "padding tree {idx} raises the maximum degree to {}, above delta = {}",
                padded.max_degree(),
                fam.delta
            )));
        }
        added += extra as u64;
        groups[g].push(PaddedTree {
            tree: padded,
            original_order: t.order(),
            source: idx,
        });
    }

    Ok(GroupedFamily {
        groups,
        boundaries,
        exceptional,
        added_path_edges: added,
        n,
        delta: fam.delta,
    })
}

/// Total edges after padding stay within C(n,2) plus the padding bound:
/// every tree gains fewer than one group width of edges.
pub fn padded_edge_budget(fam: &TreeFamily, c: usize) -> u128 {
    let width = (fam.n as u128).div_ceil(2 * c as u128) + 1;
    binom(fam.n, 2) + fam.trees.len() as u128 * width
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family(n: usize, delta: usize, orders: &[usize]) -> TreeFamily {
        let trees = orders.iter().map(|&k| RootedTree::path(k)).collect();
        TreeFamily::new(n, delta, trees)
    }

    #[test]
    fn merge_two_paths_is_a_path() {
        let merged = merge_two(&RootedTree::path(3), &RootedTree::path(4));
        assert_eq!(merged.order(), 6);
        assert_eq!(merged.max_degree(), 2);
        assert_eq!(merged.edge_count(), 5);
    }

    #[test]
    fn merge_small_trees_on_three_trees() {
        // Orders (3,4,8) at n=10: the two small trees merge to order 6;
        // nothing of order ≤ 5 remains, so there is no exceptional tree.
        let fam = family(10, 2, &[3, 4, 8]);
        let out = merge_small_trees(&fam).unwrap();
        let orders: Vec<usize> = out.trees.iter().map(|t| t.order()).collect();
        assert_eq!(orders, vec![6, 8]);
        assert_eq!(out.exceptional, None);
        assert_eq!(out.total_edges(), fam.total_edges());
        assert_eq!(out.max_degree(), 2);
    }

    #[test]
    fn merge_four_paths_pairwise() {
        // Four paths of order 4 at n=12 merge pairwise into two trees of
        // order 7 (7 > 6 stops further merging).
        let fam = family(12, 2, &[4, 4, 4, 4]);
        let out = merge_small_trees(&fam).unwrap();
        let orders: Vec<usize> = out.trees.iter().map(|t| t.order()).collect();
        assert_eq!(orders, vec![7, 7]);
        assert_eq!(out.total_edges(), 12);
        assert_eq!(out.max_degree(), 2);
        assert_eq!(out.exceptional, None);
    }

    #[test]
    fn merge_leaves_single_tree_alone() {
        let fam = family(10, 2, &[8]);
        let out = merge_small_trees(&fam).unwrap();
        assert_eq!(out.trees, fam.trees);
        assert_eq!(out.exceptional, None);
    }

    #[test]
    fn merge_on_empty_family_is_identity() {
        let fam = family(10, 2, &[]);
        let out = merge_small_trees(&fam).unwrap();
        assert!(out.trees.is_empty());
    }

    #[test]
    fn merge_rejects_oversized_input() {
        let fam = family(4, 2, &[6]);
        assert!(merge_small_trees(&fam).is_err());
    }

    #[test]
    fn merge_preserves_edges_and_degree_on_random_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(8..40);
            let count = rng.gen_range(1..8);
            let orders: Vec<usize> = (0..count).map(|_| rng.gen_range(2..=n)).collect();
            let total: u64 = orders.iter().map(|&k| k as u64 - 1).sum();
            if u128::from(total) > binom(n, 2) {
                continue;
            }
            let fam = family(n, 2, &orders);
            let out = merge_small_trees(&fam).unwrap();
            assert_eq!(out.total_edges(), fam.total_edges());
            assert!(out.max_degree() <= 2);
            let small = (0..out.trees.len()).filter(|&i| out.is_small(i)).count();
            assert!(small <= 1, "n={n} orders={orders:?} left {small} small trees");
            out.validate_normalized().unwrap();
        }
    }

    #[test]
    fn merge_traces_embed_sources_into_merged_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let n = rng.gen_range(8..30);
            let count = rng.gen_range(2..7);
            let orders: Vec<usize> = (0..count).map(|_| rng.gen_range(2..=n)).collect();
            let total: u64 = orders.iter().map(|&k| k as u64 - 1).sum();
            if u128::from(total) > binom(n, 2) {
                continue;
            }
            let fam = family(n, 2, &orders);
            let (out, traces) = merge_small_trees_traced(&fam).unwrap();
            assert_eq!(traces.len(), out.trees.len());
            let mut seen = vec![false; fam.trees.len()];
            for (k, trace) in traces.iter().enumerate() {
                let merged = &out.trees[k];
                let mut covered = vec![false; merged.order()];
                for &(source, ref map) in trace {
                    assert!(!seen[source]);
                    seen[source] = true;
                    let orig = &fam.trees[source];
                    assert_eq!(map.len(), orig.order());
                    for (v, p) in orig.edges() {
                        let (a, b) = (map[v], map[p]);
                        assert!(
                            merged.parent(a) == Some(b) || merged.parent(b) == Some(a),
                            "edge ({v},{p}) of source {source} lost in merged tree {k}"
                        );
                    }
                    for &img in map {
                        covered[img] = true;
                    }
                }
                assert!(covered.iter().all(|&c| c), "merged tree {k} not covered");
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn grouping_fixture_boundaries() {
        // n=100 with c=4: real endpoints 62.5, 75, 87.5, 100 round up to
        // 63, 75, 88, 100; a tree of order 55 lands in group 1, padded to 63.
        let mut fam = family(100, 2, &[55, 75, 90]);
        fam.recompute_exceptional().unwrap();
        let grouped = group_and_pad(&fam, 4).unwrap();
        assert_eq!(grouped.boundaries, vec![63, 75, 88, 100]);
        assert_eq!(grouped.group_sizes(), vec![1, 1, 0, 1]);
        let first = &grouped.groups[0][0];
        assert_eq!(first.tree.order(), 63);
        assert_eq!(first.original_order, 55);
        assert_eq!(first.source, 0);
        assert_eq!(first.padding(), 8);
        // Already at its endpoint: zero padding.
        assert_eq!(grouped.groups[1][0].padding(), 0);
        assert_eq!(grouped.groups[3][0].padding(), 10);
        assert_eq!(grouped.added_path_edges, 18);
        // Padding a path keeps the maximum degree at 2.
        for g in &grouped.groups {
            for t in g {
                assert!(t.tree.max_degree() <= 2);
            }
        }
    }

    #[test]
    fn grouping_passes_exceptional_through() {
        let mut fam = family(100, 2, &[55, 40]);
        fam.recompute_exceptional().unwrap();
        let grouped = group_and_pad(&fam, 4).unwrap();
        let exc = grouped.exceptional.as_ref().unwrap();
        assert_eq!(exc.tree.order(), 40);
        assert_eq!(exc.padding(), 0);
        assert_eq!(exc.source, 1);
    }

    #[test]
    fn grouping_rejects_unmarked_small_tree() {
        let fam = family(100, 2, &[55, 40]); // exceptional not recomputed
        assert!(group_and_pad(&fam, 4).is_err());
    }

    #[test]
    fn padding_never_exceeds_one_group_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.gen_range(40..200);
            let c = rng.gen_range(1..8);
            let count = rng.gen_range(1..6);
            let orders: Vec<usize> =
                (0..count).map(|_| rng.gen_range(n / 2 + 1..=n)).collect();
            let total: u64 = orders.iter().map(|&k| k as u64 - 1).sum();
            if u128::from(total) > binom(n, 2) {
                continue;
            }
            let mut fam = family(n, 2, &orders);
            fam.recompute_exceptional().unwrap();
            let grouped = group_and_pad(&fam, c).unwrap();
            let width = n.div_ceil(2 * c) + 1;
            assert!(grouped.added_path_edges <= (count * width) as u64);
            // Every padded tree sits exactly at its group endpoint.
            for (i, g) in grouped.groups.iter().enumerate() {
                for t in g {
                    assert_eq!(t.tree.order(), grouped.boundaries[i]);
                    assert!(t.original_order > if i == 0 { n / 2 } else { grouped.boundaries[i - 1] });
                }
            }
        }
    }
}
