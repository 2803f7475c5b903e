//! Dense host graphs. Adjacency is a row-major bit matrix, one cache-friendly
//! block of u64 words per vertex, so codegree and induced-count kernels reduce
//! to AND + popcount sweeps.

mod bad;
mod defect;

pub use bad::{bad_profile, extract_superquasirandom, is_gamma_bad, BadEstimate, BadProfile, CountMode};
pub use defect::{defect_over_subsets, quasirandom_defect, subset_defect, DefectMode, DefectReport};

use crate::bits::{and_popcount, popcount, words_for, BitSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HostGraph {
    m: usize,
    words: usize,
    adj: Vec<u64>,
    edges: u64,
}

impl HostGraph {
    pub fn new(m: usize) -> Self {
        let words = words_for(m).max(1);
        HostGraph {
            m,
            words,
            adj: vec![0u64; m * words],
            edges: 0,
        }
    }

    pub fn complete(m: usize) -> Self {
        let mut g = HostGraph::new(m);
        for u in 0..m {
            for v in u + 1..m {
                g.insert_edge(u, v);
            }
        }
        g
    }

    #[inline(always)]
    pub fn order(&self) -> usize {
        self.m
    }

    #[inline(always)]
    pub fn edge_count(&self) -> u64 {
        self.edges
    }

    /// Edge density relative to the complete graph on the same vertex set.
    pub fn density(&self) -> f64 {
        if self.m < 2 {
            return 0.0;
        }
        self.edges as f64 / crate::combinat::choose2_int(self.m) as f64
    }

    #[inline(always)]
    pub fn row(&self, v: usize) -> &[u64] {
        &self.adj[v * self.words..(v + 1) * self.words]
    }

    #[inline(always)]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u * self.words + (v >> 6)] >> (v & 63) & 1 == 1
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.m || v >= self.m {
            return Err(Error::Input(format!(
                "edge ({u}, {v}) out of range for order {}",
                self.m
            )));
        }
        if u == v {
            return Err(Error::Input(format!("loop at vertex {u} rejected")));
        }
        Ok(())
    }

    /// Inserts an edge; returns true when it was not already present.
    pub fn insert_edge(&mut self, u: usize, v: usize) -> bool {
        debug_assert!(u < self.m && v < self.m && u != v);
        if self.has_edge(u, v) {
            return false;
        }
        self.adj[u * self.words + (v >> 6)] |= 1u64 << (v & 63);
        self.adj[v * self.words + (u >> 6)] |= 1u64 << (u & 63);
        self.edges += 1;
        true
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        self.check_pair(u, v)?;
        Ok(self.insert_edge(u, v))
    }

    /// Removes the listed pairs, erroring on the first pair that is not a live
    /// edge — a second removal of the same pair is how double use of a host
    /// edge surfaces.
    pub fn remove_edges(&mut self, pairs: &[(usize, usize)]) -> Result<()> {
        for &(u, v) in pairs {
            self.check_pair(u, v)?;
            if !self.has_edge(u, v) {
                return Err(Error::EdgeAbsent { u, v });
            }
            self.adj[u * self.words + (v >> 6)] &= !(1u64 << (v & 63));
            self.adj[v * self.words + (u >> 6)] &= !(1u64 << (u & 63));
            self.edges -= 1;
        }
        Ok(())
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        popcount(self.row(v))
    }

    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.degree(v));
        for (wi, &w) in self.row(v).iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push((wi << 6) | w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    /// |N(v_1) ∩ .. ∩ N(v_p)|. The listed vertices never count themselves:
    /// the diagonal is zero, so each v_i is absent from its own row.
    pub fn codegree(&self, vs: &[usize]) -> usize {
        debug_assert!(!vs.is_empty());
        match vs.len() {
            1 => self.degree(vs[0]),
            2 => and_popcount(self.row(vs[0]), self.row(vs[1])),
            _ => {
                let mut acc = self.row(vs[0]).to_vec();
                for &v in &vs[1..] {
                    for (a, b) in acc.iter_mut().zip(self.row(v)) {
                        *a &= b;
                    }
                }
                popcount(&acc)
            }
        }
    }

    /// Common neighbourhood, ascending by vertex index.
    pub fn common_neighbourhood(&self, vs: &[usize]) -> Vec<usize> {
        debug_assert!(!vs.is_empty());
        let mut acc = self.row(vs[0]).to_vec();
        for &v in &vs[1..] {
            for (a, b) in acc.iter_mut().zip(self.row(v)) {
                *a &= b;
            }
        }
        let mut out = Vec::new();
        for (wi, &w) in acc.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push((wi << 6) | w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    /// Number of edges with both endpoints in `set`.
    pub fn induced_edge_count(&self, set: &BitSet) -> u64 {
        debug_assert_eq!(set.len(), self.m);
        let mut twice = 0u64;
        for v in set.iter_ones() {
            twice += and_popcount(self.row(v), set.words()) as u64;
        }
        twice / 2
    }

    /// Ordered-pair count e(A, B) = |{(a, b) in A x B : ab is an edge}|;
    /// edges inside A ∩ B contribute twice, as the definition demands.
    pub fn pair_edge_count(&self, a: &BitSet, b: &BitSet) -> u64 {
        debug_assert_eq!(a.len(), self.m);
        debug_assert_eq!(b.len(), self.m);
        let mut count = 0u64;
        for v in a.iter_ones() {
            count += and_popcount(self.row(v), b.words()) as u64;
        }
        count
    }

    /// Induced subgraph on `keep` (ascending, distinct). Returned alongside the
    /// map from new indices back to old ones (`keep` itself).
    pub fn induced(&self, keep: &[usize]) -> (HostGraph, Vec<usize>) {
        let mut g = HostGraph::new(keep.len());
        for (i, &u) in keep.iter().enumerate() {
            for (j, &v) in keep.iter().enumerate().skip(i + 1) {
                if self.has_edge(u, v) {
                    g.insert_edge(i, j);
                }
            }
        }
        (g, keep.to_vec())
    }

    /// Plain-text edge list: `m=<order>` header, then one `u v` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("m={}\n", self.m);
        for u in 0..self.m {
            for v in self.neighbours(u) {
                if v > u {
                    s.push_str(&format!("{u} {v}\n"));
                }
            }
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<HostGraph> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty graph file".into()))?;
        let m: usize = header
            .trim()
            .strip_prefix("m=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Input(format!("bad header {header:?}, want m=<order>")))?;
        let mut g = HostGraph::new(m);
        for line in lines {
            let mut it = line.split_whitespace();
            let (u, v) = match (it.next(), it.next(), it.next()) {
                (Some(u), Some(v), None) => (u, v),
                _ => return Err(Error::Input(format!("bad edge line {line:?}"))),
            };
            let u: usize = u
                .parse()
                .map_err(|_| Error::Input(format!("bad vertex {u:?}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::Input(format!("bad vertex {v:?}")))?;
            g.add_edge(u, v)?;
        }
        Ok(g)
    }
}
