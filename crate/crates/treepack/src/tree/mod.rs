//! Rooted trees, tree families, and the line-JSON interchange format.

pub mod cut;
pub mod generate;
pub mod normalize;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::combinat::binom;
use crate::{Error, Result};

/// A tree on vertices `0..order` with parent pointers towards a fixed root.
///
/// Immutable after construction; children lists and the maximum degree are
/// cached so subtree and degree queries are cheap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootedTree {
    order: usize,
    root: usize,
    parent: Vec<usize>,
    child_idx: Vec<usize>,
    child: Vec<usize>,
    max_degree: usize,
}

impl RootedTree {
    /// Builds a tree from a parent array. `parent[root]` must equal `root`;
    /// every other vertex must point at its parent, and the pointers must
    /// form a single tree spanning `0..parent.len()`.
    pub fn new(root: usize, parent: Vec<usize>) -> Result<Self> {
        let order = parent.len();
        if order == 0 {
            return Err(Error::Input("tree must have at least one vertex".into()));
        }
        if root >= order {
            return Err(Error::Input(format!(
                "root {root} out of range for order {order}"
            )));
        }
        if parent[root] != root {
            return Err(Error::Input(format!(
                "parent[{root}] must equal the root, found {}",
                parent[root]
            )));
        }
        for (v, &p) in parent.iter().enumerate() {
            if p >= order {
                return Err(Error::Input(format!(
                    "parent[{v}] = {p} out of range for order {order}"
                )));
            }
            if v != root && p == v {
                return Err(Error::Input(format!(
                    "vertex {v} is its own parent but is not the root"
                )));
            }
        }

        // Children in ascending order, CSR layout.
        let mut counts = vec![0usize; order];
        for (v, &p) in parent.iter().enumerate() {
            if v != root {
                counts[p] += 1;
            }
        }
        let mut child_idx = vec![0usize; order + 1];
        for v in 0..order {
            child_idx[v + 1] = child_idx[v] + counts[v];
        }
        let mut cursor = child_idx.clone();
        let mut child = vec![0usize; order - 1];
        for (v, &p) in parent.iter().enumerate() {
            if v != root {
                child[cursor[p]] = v;
                cursor[p] += 1;
            }
        }

        let mut tree = RootedTree {
            order,
            root,
            parent,
            child_idx,
            child,
            max_degree: 0,
        };

        // Reachability from the root certifies both connectivity and
        // acyclicity of the parent pointers.
        let mut seen = 0usize;
        let mut queue = vec![root];
        let mut visited = vec![false; order];
        visited[root] = true;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &c in tree.children(v) {
                if !visited[c] {
                    visited[c] = true;
                    queue.push(c);
                }
            }
        }
        if seen != order {
            return Err(Error::Input(format!(
                "parent pointers do not form a tree: {seen} of {order} vertices reachable from root {root}"
            )));
        }

        tree.max_degree = (0..order).map(|v| tree.degree(v)).max().unwrap_or(0);
        Ok(tree)
    }

    /// Path 0–1–…–(k−1) rooted at vertex 0.
    pub fn path(k: usize) -> Self {
        let parent = (0..k).map(|v| v.saturating_sub(1)).collect();
        Self::new(0, parent).expect("path is a valid tree")
    }

    /// Star with centre 0 (the root) and leaves 1..k.
    pub fn star(k: usize) -> Self {
        let parent = vec![0; k];
        Self::new(0, parent).expect("star is a valid tree")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edge_count(&self) -> usize {
        self.order - 1
    }

    /// Parent of `v`, or `None` for the root.
    pub fn parent(&self, v: usize) -> Option<usize> {
        if v == self.root {
            None
        } else {
            Some(self.parent[v])
        }
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.child[self.child_idx[v]..self.child_idx[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.children(v).len() + usize::from(v != self.root)
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Neighbours of `v` (parent and children) in ascending order.
    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.children(v).to_vec();
        if let Some(p) = self.parent(v) {
            out.push(p);
        }
        out.sort_unstable();
        out
    }

    /// Edges as (child, parent) pairs in ascending child order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.order).filter_map(move |v| self.parent(v).map(|p| (v, p)))
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.degree(v) <= 1
    }

    /// Leaves in ascending order. For the one-vertex tree the root counts.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.order).filter(|&v| self.is_leaf(v)).collect()
    }

    /// Vertices in breadth-first order from the root, children ascending.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.order);
        let mut head = 0;
        order.push(self.root);
        while head < order.len() {
            let v = order[head];
            head += 1;
            order.extend_from_slice(self.children(v));
        }
        order
    }

    /// Size of the maximal subtree rooted at each vertex.
    pub fn subtree_sizes(&self) -> Vec<usize> {
        let order = self.bfs_order();
        let mut size = vec![1usize; self.order];
        for &v in order.iter().rev() {
            if let Some(p) = self.parent(v) {
                size[p] += size[v];
            }
        }
        size
    }

    /// The same tree re-rooted at `new_root`: parent pointers along the
    /// old root path are reversed, everything else is unchanged.
    pub fn rerooted(&self, new_root: usize) -> Self {
        assert!(new_root < self.order, "re-root target out of range");
        let mut parent = self.parent.clone();
        let mut v = new_root;
        let mut prev = new_root;
        loop {
            let next = self.parent[v];
            parent[v] = prev;
            if v == self.root {
                break;
            }
            prev = v;
            v = next;
        }
        Self::new(new_root, parent).expect("re-rooting preserves the tree")
    }
}

/// A family of rooted trees to be packed into a clique on roughly `n`
/// vertices: each tree has order at most `n`, degrees at most `delta`,
/// and the total edge count is at most C(n,2).
#[derive(Clone, Debug, PartialEq)]
pub struct TreeFamily {
    pub trees: Vec<RootedTree>,
    pub n: usize,
    pub delta: usize,
    /// Index of the unique tree of order ≤ n/2, if any (set after
    /// normalization).
    pub exceptional: Option<usize>,
}

impl TreeFamily {
    pub fn new(n: usize, delta: usize, trees: Vec<RootedTree>) -> Self {
        TreeFamily {
            trees,
            n,
            delta,
            exceptional: None,
        }
    }

    pub fn total_edges(&self) -> u64 {
        self.trees.iter().map(|t| t.edge_count() as u64).sum()
    }

    pub fn max_degree(&self) -> usize {
        self.trees.iter().map(|t| t.max_degree()).max().unwrap_or(0)
    }

    /// A tree is "small" when its order is at most n/2.
    pub fn is_small(&self, idx: usize) -> bool {
        2 * self.trees[idx].order() <= self.n
    }

    /// Checks the basic family invariants: orders ≤ n, degrees ≤ delta,
    /// total edges ≤ C(n,2).
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.trees.iter().enumerate() {
            if t.order() > self.n {
                return Err(Error::Input(format!(
                    "tree {i} has order {} exceeding n = {}",
                    t.order(),
                    self.n
                )));
            }
            if t.max_degree() > self.delta {
                return Err(Error::Input(format!(
                    "tree {i} has maximum degree {} exceeding delta = {}",
                    t.max_degree(),
                    self.delta
                )));
            }
        }
        let budget = binom(self.n, 2);
        if u128::from(self.total_edges()) > budget {
            return Err(Error::Input(format!(
                "family has {} edges, more than C({},2) = {budget}",
                self.total_edges(),
                self.n
            )));
        }
        Ok(())
    }

    /// Records the unique small tree as exceptional; errors if two or more
    /// trees have order ≤ n/2.
    pub fn recompute_exceptional(&mut self) -> Result<()> {
        let small: Vec<usize> = (0..self.trees.len()).filter(|&i| self.is_small(i)).collect();
        match small.len() {
            0 => {
                self.exceptional = None;
                Ok(())
            }
            1 => {
                self.exceptional = Some(small[0]);
                Ok(())
            }
            k => Err(Error::Input(format!(
                "{k} trees of order ≤ n/2 remain; the family is not normalized"
            ))),
        }
    }

    /// Full post-normalization check: basic invariants, at most one small
    /// tree (recorded as exceptional), and fewer than 2n trees.
    pub fn validate_normalized(&self) -> Result<()> {
        self.validate()?;
        for (i, _) in self.trees.iter().enumerate() {
            if self.is_small(i) && self.exceptional != Some(i) {
                return Err(Error::Input(format!(
                    "tree {i} has order ≤ n/2 but is not marked exceptional"
                )));
            }
        }
        if self.trees.len() >= 2 * self.n {
            return Err(Error::Input(format!(
                "family has {} trees, expected fewer than 2n = {}",
                self.trees.len(),
                2 * self.n
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyHeader {
    n: usize,
    delta: usize,
}

#[derive(Serialize, Deserialize)]
struct TreeLine {
    order: usize,
    parent: Vec<usize>,
    root: usize,
}

impl TreeLine {
    fn from_tree(t: &RootedTree) -> Self {
        let parent = (0..t.order())
            .filter(|&v| v != t.root())
            .map(|v| t.parent[v])
            .collect();
        TreeLine {
            order: t.order(),
            parent,
            root: t.root(),
        }
    }

    fn into_tree(self) -> Result<RootedTree> {
        if self.order == 0 {
            return Err(Error::Input("tree line with order 0".into()));
        }
        if self.parent.len() + 1 != self.order {
            return Err(Error::Input(format!(
                "tree line declares order {} but lists {} parents (expected {})",
                self.order,
                self.parent.len(),
                self.order - 1
            )));
        }
        if self.root >= self.order {
            return Err(Error::Input(format!(
                "tree line root {} out of range for order {}",
                self.root, self.order
            )));
        }
        let mut parent = Vec::with_capacity(self.order);
        let mut it = self.parent.into_iter();
        for v in 0..self.order {
            if v == self.root {
                parent.push(v);
            } else {
                parent.push(it.next().expect("length checked above"));
            }
        }
        RootedTree::new(self.root, parent)
    }
}

/// Reads a tree family: a header line `{"n":…,"delta":…}` followed by one
/// JSON object per tree, `{"order":…,"parent":[…],"root":…}`. Blank lines
/// are ignored. The family is validated before it is returned.
pub fn read_family<R: BufRead>(reader: R) -> Result<TreeFamily> {
    let mut header: Option<FamilyHeader> = None;
    let mut trees = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if header.is_none() {
            let h: FamilyHeader = serde_json::from_str(line).map_err(|e| {
                Error::Input(format!("line {}: bad family header: {e}", lineno + 1))
            })?;
            header = Some(h);
        } else {
            let t: TreeLine = serde_json::from_str(line)
                .map_err(|e| Error::Input(format!("line {}: bad tree: {e}", lineno + 1)))?;
            trees.push(t.into_tree()?);
        }
    }
    let header = header.ok_or_else(|| Error::Input("missing family header line".into()))?;
    let fam = TreeFamily::new(header.n, header.delta, trees);
    fam.validate()?;
    Ok(fam)
}

/// Writes a tree family in the format `read_family` accepts.
pub fn write_family<W: Write>(mut writer: W, fam: &TreeFamily) -> Result<()> {
    let header = FamilyHeader {
        n: fam.n,
        delta: fam.delta,
    };
    writeln!(
        writer,
        "{}",
        serde_json::to_string(&header).map_err(|e| Error::Internal(e.to_string()))?
    )?;
    for t in &fam.trees {
        let line = TreeLine::from_tree(t);
        writeln!(
            writer,
            "{}",
            serde_json::to_string(&line).map_err(|e| Error::Internal(e.to_string()))?
        )?;
    }
    Ok(())
}
