//! Balanced level partitions of rooted trees.
//!
//! A tree is cut into small components by repeatedly descending from the
//! root towards the largest subtree until it first drops below a size
//! threshold; the components are then assembled into r levels, processed
//! ancestors-first so every parent pointer leaves a level only towards
//! earlier levels.

use serde::Serialize;

use crate::tree::RootedTree;
use crate::{Error, Result};

/// A partition of V(T) into r levels, each a union of whole components.
#[derive(Clone, Debug)]
pub struct LevelPartition {
    /// Vertex sets L^1…L^r, ascending within each level.
    pub levels: Vec<Vec<usize>>,
    /// X^j: the top vertices of the components of T[L^j], ascending.
    pub level_roots: Vec<Vec<usize>>,
    /// Balance parameter: level sizes satisfy |L^j| = (1 ± rho/2)·v(T)/r.
    pub rho: f64,
    /// Cut threshold: components have order at most xi·v(T).
    pub xi: f64,
}

impl LevelPartition {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Level index (0-based) of each vertex.
    pub fn level_of(&self, order: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; order];
        for (j, level) in self.levels.iter().enumerate() {
            for &v in level {
                out[v] = j;
            }
        }
        out
    }
}

/// Cuts T into components of order ≤ max(1, threshold), returned in cut
/// order (each listed root-first). The descent picks the child with the
/// largest subtree, lowest index on ties; the walk from the root to each
/// cut point stays in the residual tree, so later components are always
/// ancestors of earlier ones.
fn cut_components(t: &RootedTree, threshold: f64) -> Vec<Vec<usize>> {
    let mut size = t.subtree_sizes();
    let mut alive = vec![true; t.order()];
    let mut components = Vec::new();
    let mut remaining = t.order();

    while remaining > 0 {
        // Descend from the root along maximal subtrees.
        let mut path = Vec::new();
        let mut y = t.root();
        while size[y] as f64 > threshold {
            let mut best: Option<usize> = None;
            for &c in t.children(y) {
                if alive[c] && best.map_or(true, |b| size[c] > size[b]) {
                    best = Some(c);
                }
            }
            match best {
                Some(c) => {
                    path.push(y);
                    y = c;
                }
                // A leaf above threshold 1: cut it on its own.
                None => break,
            }
        }

        // Collect the component F(y) from the residual tree.
        let mut comp = vec![y];
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            comp.extend(t.children(v).iter().copied().filter(|&c| alive[c]));
        }
        for &v in &comp {
            alive[v] = false;
        }
        for &a in &path {
            size[a] -= comp.len();
        }
        remaining -= comp.len();
        components.push(comp);
    }
    components
}

/// Core assembly: cut with the given threshold ξ·v(T), then close level j
/// as soon as the cumulative size reaches j·v(T)/r, walking the components
/// ancestors-first.
fn assemble(t: &RootedTree, r: usize, xi: f64, rho: f64) -> Result<LevelPartition> {
    let v = t.order();
    let mut components = cut_components(t, xi * v as f64);
    components.reverse();

    let mut levels: Vec<Vec<usize>> = Vec::with_capacity(r);
    let mut current: Vec<usize> = Vec::new();
    let mut cum = 0usize;
    let mut j = 1usize;
    for comp in components {
        cum += comp.len();
        current.extend(comp);
        // Close level j once the cumulative size reaches j·v/r.
        while j <= r && cum * r >= j * v {
            levels.push(std::mem::take(&mut current));
            j += 1;
        }
    }
    if levels.len() != r || !current.is_empty() {
        return Err(Error::Internal(format!(
            "level assembly produced {} levels for r = {r}",
            levels.len()
        )));
    }

    let mut level_of = vec![usize::MAX; v];
    for (idx, level) in levels.iter().enumerate() {
        for &x in level {
            level_of[x] = idx;
        }
    }
    let mut level_roots = Vec::with_capacity(r);
    for (idx, level) in levels.iter_mut().enumerate() {
        level.sort_unstable();
        let roots = level
            .iter()
            .copied()
            .filter(|&x| t.parent(x).map_or(true, |p| level_of[p] != idx))
            .collect();
        level_roots.push(roots);
    }

    Ok(LevelPartition {
        levels,
        level_roots,
        rho,
        xi,
    })
}

/// Balanced level partition under the full hypotheses: v(T) ≥ 4Δr/ρ and
/// 0 < ρ < 1/(4r). Level sizes land in (1 ± ρ/2)·v(T)/r and each level has
/// at most 8Δ/ρ components.
pub fn balanced_level_partition(t: &RootedTree, r: usize, rho: f64) -> Result<LevelPartition> {
    if r == 0 {
        return Err(Error::Input("level count r must be positive".into()));
    }
    if !(rho > 0.0 && rho < 1.0 / (4.0 * r as f64)) {
        return Err(Error::Input(format!(
            "rho = {rho} outside (0, 1/(4r)) = (0, {})",
            1.0 / (4.0 * r as f64)
        )));
    }
    let delta = t.max_degree().max(1);
    let min_order = 4.0 * delta as f64 * r as f64 / rho;
    if (t.order() as f64) < min_order {
        return Err(Error::Input(format!(
            "tree order {} below the cutting bound 4Δr/ρ = {min_order}",
            t.order()
        )));
    }
    assemble(t, r, rho / (2.0 * r as f64), rho)
}

/// Level partition with an explicit cut threshold ξ ∈ (0, 1/r), for use
/// at small scale where the strict hypotheses are unaffordable. Larger ξ
/// yields fatter components and hence fewer level roots.
pub fn level_partition_with_xi(t: &RootedTree, r: usize, xi: f64) -> Result<LevelPartition> {
    if r == 0 {
        return Err(Error::Input("level count r must be positive".into()));
    }
    if !(xi > 0.0 && xi < 1.0 / r as f64) {
        return Err(Error::Input(format!(
            "xi = {xi} outside (0, 1/r) = (0, {})",
            1.0 / r as f64
        )));
    }
    if t.order() < r {
        return Err(Error::Input(format!(
            "tree order {} below the level count {r}",
            t.order()
        )));
    }
    assemble(t, r, xi, 2.0 * r as f64 * xi)
}

/// Class of a vertex in a level forest: a component root, or primary
/// (odd distance from the roots) or secondary (even, nonzero distance).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum VertexClass {
    Root,
    Primary,
    Secondary,
}

/// One level T[L^j] with local labels 0..order, remembering the global
/// vertex ids. Component roots carry a self-parent locally.
#[derive(Clone, Debug)]
pub struct LevelForest {
    global: Vec<usize>,
    parent: Vec<usize>,
    child_idx: Vec<usize>,
    child: Vec<usize>,
    roots: Vec<usize>,
}

impl LevelForest {
    /// Builds a forest directly from a local parent array (self-parent
    /// marks a component root) and the global ids of its vertices.
    pub fn from_parent_array(global: Vec<usize>, parent: Vec<usize>) -> Result<Self> {
        if global.len() != parent.len() {
            return Err(Error::Input(format!(
                "global ids ({}) and parent array ({}) disagree",
                global.len(),
                parent.len()
            )));
        }
        let order = parent.len();
        for (v, &p) in parent.iter().enumerate() {
            if p >= order {
                return Err(Error::Input(format!(
                    "forest parent[{v}] = {p} out of range for order {order}"
                )));
            }
        }
        let roots: Vec<usize> = (0..order).filter(|&v| parent[v] == v).collect();

        let mut counts = vec![0usize; order];
        for (v, &p) in parent.iter().enumerate() {
            if p != v {
                counts[p] += 1;
            }
        }
        let mut child_idx = vec![0usize; order + 1];
        for v in 0..order {
            child_idx[v + 1] = child_idx[v] + counts[v];
        }
        let mut cursor = child_idx.clone();
        let mut child = vec![0usize; order - roots.len()];
        for (v, &p) in parent.iter().enumerate() {
            if p != v {
                child[cursor[p]] = v;
                cursor[p] += 1;
            }
        }
        let forest = LevelForest {
            global,
            parent,
            child_idx,
            child,
            roots,
        };

        // Reachability from the component roots rules out cycles.
        let mut seen = vec![false; order];
        let mut queue = forest.roots.clone();
        for &r in &queue {
            seen[r] = true;
        }
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &c in forest.children(v) {
                seen[c] = true;
                queue.push(c);
            }
        }
        if seen.iter().any(|&b| !b) {
            return Err(Error::Input("forest parent pointers contain a cycle".into()));
        }
        Ok(forest)
    }

    /// Extracts level j (0-based) of a partition of `t` as a local forest.
    pub fn from_partition(t: &RootedTree, part: &LevelPartition, j: usize) -> Self {
        let global = part.levels[j].clone();
        let mut local = vec![usize::MAX; t.order()];
        for (i, &g) in global.iter().enumerate() {
            local[g] = i;
        }
        let parent: Vec<usize> = global
            .iter()
            .enumerate()
            .map(|(i, &g)| match t.parent(g) {
                Some(p) if local[p] != usize::MAX => local[p],
                _ => i,
            })
            .collect();
        let roots: Vec<usize> = (0..global.len()).filter(|&i| parent[i] == i).collect();

        let order = global.len();
        let mut counts = vec![0usize; order];
        for (v, &p) in parent.iter().enumerate() {
            if p != v {
                counts[p] += 1;
            }
        }
        let mut child_idx = vec![0usize; order + 1];
        for v in 0..order {
            child_idx[v + 1] = child_idx[v] + counts[v];
        }
        let mut cursor = child_idx.clone();
        let mut child = vec![0usize; parent.iter().enumerate().filter(|&(v, &p)| p != v).count()];
        for (v, &p) in parent.iter().enumerate() {
            if p != v {
                child[cursor[p]] = v;
                cursor[p] += 1;
            }
        }

        LevelForest {
            global,
            parent,
            child_idx,
            child,
            roots,
        }
    }

    pub fn order(&self) -> usize {
        self.global.len()
    }

    pub fn component_count(&self) -> usize {
        self.roots.len()
    }

    /// Local ids of the component roots (the set X), ascending.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn global(&self, local: usize) -> usize {
        self.global[local]
    }

    pub fn globals(&self) -> &[usize] {
        &self.global
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        if self.parent[v] == v {
            None
        } else {
            Some(self.parent[v])
        }
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.child[self.child_idx[v]..self.child_idx[v + 1]]
    }

    /// Forest neighbours of `v` (parent and children), ascending.
    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.children(v).to_vec();
        if let Some(p) = self.parent(v) {
            out.push(p);
        }
        out.sort_unstable();
        out
    }

    pub fn degree(&self, v: usize) -> usize {
        self.children(v).len() + usize::from(self.parent[v] != v)
    }

    /// Edges as (child, parent) local pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.order()).filter_map(move |v| self.parent(v).map(|p| (v, p)))
    }

    pub fn edge_count(&self) -> usize {
        self.order() - self.roots.len()
    }

    /// Root / primary / secondary classes by distance parity from X.
    pub fn classes(&self) -> Vec<VertexClass> {
        let mut class = vec![VertexClass::Root; self.order()];
        let mut depth = vec![0usize; self.order()];
        let mut queue: Vec<usize> = self.roots.clone();
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &c in self.children(v) {
                depth[c] = depth[v] + 1;
                class[c] = if depth[c] % 2 == 1 {
                    VertexClass::Primary
                } else {
                    VertexClass::Secondary
                };
                queue.push(c);
            }
        }
        class
    }

    /// Classes for the first level, where the anchor is the tree root one
    /// step above the forest: component roots sit at distance 1 from it,
    /// so parity flips and no vertex is classed Root — all get embedded.
    pub fn classes_from_external_root(&self) -> Vec<VertexClass> {
        let mut class = vec![VertexClass::Primary; self.order()];
        let mut depth = vec![0usize; self.order()];
        let mut queue: Vec<usize> = self.roots.clone();
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &c in self.children(v) {
                depth[c] = depth[v] + 1;
                class[c] = if depth[c] % 2 == 1 {
                    VertexClass::Secondary
                } else {
                    VertexClass::Primary
                };
                queue.push(c);
            }
        }
        class
    }
}

/// Splits V(F)∖X by distance parity from the root set X: odd distances
/// are primary, even nonzero distances secondary. Every edge of F−X joins
/// the two classes or touches X.
pub fn bipartition_primary_secondary(forest: &LevelForest) -> (Vec<usize>, Vec<usize>) {
    let classes = forest.classes();
    let primary = (0..forest.order())
        .filter(|&v| classes[v] == VertexClass::Primary)
        .collect();
    let secondary = (0..forest.order())
        .filter(|&v| classes[v] == VertexClass::Secondary)
        .collect();
    (primary, secondary)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Checks every balanced-level-partition invariant directly.
    fn assert_blp(t: &RootedTree, part: &LevelPartition, r: usize, rho: f64, comp_bound: f64) {
        let v = t.order();
        assert_eq!(part.levels.len(), r);

        // Partition of V(T).
        let mut seen = vec![false; v];
        for level in &part.levels {
            for &x in level {
                assert!(!seen[x], "vertex {x} in two levels");
                seen[x] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "levels miss a vertex");

        // Size condition (a).
        let target = v as f64 / r as f64;
        for level in &part.levels {
            let s = level.len() as f64;
            assert!(
                s >= (1.0 - rho / 2.0) * target - 1e-9 && s <= (1.0 + rho / 2.0) * target + 1e-9,
                "level size {s} outside (1±{rho}/2)·{target}"
            );
        }

        // Parent condition (b): every non-root vertex's parent lies in the
        // same or an earlier level.
        let level_of = part.level_of(v);
        for x in 0..v {
            if let Some(p) = t.parent(x) {
                assert!(
                    level_of[p] <= level_of[x],
                    "parent of {x} in level {} but {x} in level {}",
                    level_of[p],
                    level_of[x]
                );
            }
        }

        // Component bound via the induced forests.
        for j in 0..r {
            let forest = LevelForest::from_partition(t, part, j);
            assert!(
                (forest.component_count() as f64) <= comp_bound,
                "level {j} has {} components, bound {comp_bound}",
                forest.component_count()
            );
            assert_eq!(forest.roots().len(), part.level_roots[j].len());
        }
    }

    fn complete_binary_tree(depth: u32) -> RootedTree {
        let order = (1usize << (depth + 1)) - 1;
        let parent = (0..order)
            .map(|v| if v == 0 { 0 } else { (v - 1) / 2 })
            .collect();
        RootedTree::new(0, parent).unwrap()
    }

    #[test]
    fn path_400_two_levels() {
        let t = RootedTree::path(400);
        let part = balanced_level_partition(&t, 2, 0.1).unwrap();
        // Level sizes in [190, 210] and at most 8·2/0.1 = 160 components.
        for level in &part.levels {
            assert!(level.len() >= 190 && level.len() <= 210, "{}", level.len());
        }
        assert_blp(&t, &part, 2, 0.1, 160.0);
    }

    #[test]
    fn binary_tree_1023_four_levels() {
        let t = complete_binary_tree(9);
        assert_eq!(t.order(), 1023);
        assert_eq!(t.max_degree(), 3);
        // Hypotheses: 1023 ≥ 4·3·4/0.05 = 960 and 0.05 < 1/16.
        let part = balanced_level_partition(&t, 4, 0.05).unwrap();
        assert_blp(&t, &part, 4, 0.05, 8.0 * 3.0 / 0.05);
    }

    #[test]
    fn hypothesis_violations_are_named() {
        let t = RootedTree::path(100);
        let err = balanced_level_partition(&t, 2, 0.3).unwrap_err();
        assert!(err.to_string().contains("rho"), "{err}");
        let err = balanced_level_partition(&t, 2, 0.1).unwrap_err();
        assert!(err.to_string().contains("cutting bound"), "{err}");
    }

    #[test]
    fn practical_xi_partition_stays_balanced() {
        let t = RootedTree::path(60);
        let part = level_partition_with_xi(&t, 4, 0.85 / 4.0).unwrap();
        assert_eq!(part.levels.len(), 4);
        // Implied rho = 2·r·xi = 1.7: sizes in (1 ± 0.85)·15.
        assert_blp(&t, &part, 4, 1.7, 8.0 * 2.0 / 1.7 + 1.0);
        for level in &part.levels {
            assert!(!level.is_empty());
        }
    }

    #[test]
    fn random_trees_never_violate_blp() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..60 {
            let r = rng.gen_range(2..6);
            let rho = rng.gen_range(0.02..(1.0 / (4.0 * r as f64) - 1e-6));
            // Random bounded-degree tree large enough for the hypotheses.
            let delta = rng.gen_range(2..5);
            let min_order = (4.0 * delta as f64 * r as f64 / rho).ceil() as usize;
            let order = min_order + rng.gen_range(0..min_order);
            let mut parent = vec![0usize; order];
            let mut degree = vec![0usize; order];
            for v in 1..order {
                loop {
                    let p = rng.gen_range(0..v);
                    if degree[p] < delta {
                        parent[v] = p;
                        degree[p] += 1;
                        degree[v] += 1;
                        break;
                    }
                }
            }
            let t = RootedTree::new(0, parent).unwrap();
            assert!(t.max_degree() <= delta);
            let part = balanced_level_partition(&t, r, rho).unwrap();
            assert_blp(&t, &part, r, rho, 8.0 * delta as f64 / rho);
            let _ = case;
        }
    }

    #[test]
    fn bipartition_of_rooted_path() {
        // Path x–a–b–c rooted at x, all in one level: primary {a,c},
        // secondary {b}.
        let t = RootedTree::path(4);
        let part = LevelPartition {
            levels: vec![vec![0, 1, 2, 3]],
            level_roots: vec![vec![0]],
            rho: 1.0,
            xi: 1.0,
        };
        let forest = LevelForest::from_partition(&t, &part, 0);
        assert_eq!(forest.roots(), &[0]);
        let (primary, secondary) = bipartition_primary_secondary(&forest);
        assert_eq!(primary, vec![1, 3]);
        assert_eq!(secondary, vec![2]);
    }

    #[test]
    fn bipartition_of_isolated_roots_is_empty() {
        let t = RootedTree::star(4);
        // Put every vertex in its own conceptual level slice: levels of
        // singletons have no edges, so everything is a root.
        let part = LevelPartition {
            levels: vec![vec![1, 2, 3]],
            level_roots: vec![vec![1, 2, 3]],
            rho: 1.0,
            xi: 1.0,
        };
        let forest = LevelForest::from_partition(&t, &part, 0);
        assert_eq!(forest.component_count(), 3);
        let (primary, secondary) = bipartition_primary_secondary(&forest);
        assert!(primary.is_empty());
        assert!(secondary.is_empty());
    }

    #[test]
    fn bipartition_of_star_is_all_leaves() {
        let t = RootedTree::star(6);
        let part = LevelPartition {
            levels: vec![vec![0, 1, 2, 3, 4, 5]],
            level_roots: vec![vec![0]],
            rho: 1.0,
            xi: 1.0,
        };
        let forest = LevelForest::from_partition(&t, &part, 0);
        let (primary, secondary) = bipartition_primary_secondary(&forest);
        assert_eq!(primary, vec![1, 2, 3, 4, 5]);
        assert!(secondary.is_empty());
        // Every forest edge joins a root or opposite classes.
        let classes = forest.classes();
        for (a, b) in forest.edges() {
            assert!(
                classes[a] == VertexClass::Root
                    || classes[b] == VertexClass::Root
                    || classes[a] != classes[b]
            );
        }
    }

    #[test]
    fn level_forest_matches_induced_edges() {
        let t = RootedTree::path(10);
        let part = level_partition_with_xi(&t, 2, 0.3).unwrap();
        for j in 0..2 {
            let forest = LevelForest::from_partition(&t, &part, j);
            // Each forest edge corresponds to a tree edge with both ends
            // in the level.
            for (a, b) in forest.edges() {
                let (ga, gb) = (forest.global(a), forest.global(b));
                assert!(t.parent(ga) == Some(gb) || t.parent(gb) == Some(ga));
            }
            // Count induced edges directly.
            let level = &part.levels[j];
            let inside: std::collections::HashSet<usize> = level.iter().copied().collect();
            let induced = t
                .edges()
                .filter(|&(a, b)| inside.contains(&a) && inside.contains(&b))
                .count();
            assert_eq!(forest.edge_count(), induced);
        }
    }
}
