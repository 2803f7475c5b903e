//! Independent certification of packings and almost-packings, plus an
//! exhaustive oracle for tiny instances.
//!
//! Everything here re-derives its verdict from raw vertex maps and the
//! definitions alone; no builder-side flags or intermediate state are
//! trusted. The packing check is the O(E log E) sorted-pair-multiset
//! argument; the almost-packing check adds the reserve-size and
//! neighbour-load clauses and reports the tight exception bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::{RootedTree, TreeFamily};

/// Outcome of one named validation clause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClauseResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// First violating object, in deterministic scan order: trees ascending,
/// vertices ascending, image pairs in sorted-multiset order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub clause: &'static str,
    pub tree: usize,
    pub detail: String,
}

/// Verdict plus per-clause breakdown. An invalid certificate always
/// carries a reproducible witness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Certificate {
    pub valid: bool,
    pub checks: Vec<ClauseResult>,
    pub witness: Option<Witness>,
}

impl Certificate {
    fn from_checks(checks: Vec<ClauseResult>, witness: Option<Witness>) -> Self {
        let valid = checks.iter().all(|c| c.pass);
        debug_assert_eq!(valid, witness.is_none());
        Certificate {
            valid,
            checks,
            witness,
        }
    }
}

/// Almost-packing verdict together with the tight exception bound
/// (the smallest ℓ for which clauses (b) and (c) hold).
#[derive(Debug, Clone, Serialize)]
pub struct AlmostCertificate {
    pub certificate: Certificate,
    pub ell: usize,
    /// Largest exception set over the trees (clause (b) statistic).
    pub max_reserve: usize,
    /// Largest per-vertex neighbour-of-reserve count (clause (c) statistic).
    pub max_neighbour_load: usize,
}

fn check_shapes(maps: &[Vec<Option<usize>>], trees: &[RootedTree], host_order: usize) -> Result<()> {
    if maps.len() != trees.len() {
        return Err(Error::Input(format!(
            "{} maps for {} trees",
            maps.len(),
            trees.len()
        )));
    }
    for (i, (map, t)) in maps.iter().zip(trees).enumerate() {
        if map.len() != t.order() {
            return Err(Error::Input(format!(
                "tree {} has order {} but its map has length {}",
                i,
                t.order(),
                map.len()
            )));
        }
        for (v, img) in map.iter().enumerate() {
            if let Some(u) = img {
                if *u >= host_order {
                    return Err(Error::Input(format!(
                        "tree {} maps vertex {} to {} outside the host of order {}",
                        i, v, u, host_order
                    )));
                }
            }
        }
    }
    Ok(())
}

/// The three packing clauses over partial maps: per-tree injectivity,
/// distinct endpoints for every fully-mapped tree edge, and cross-tree
/// edge-disjointness. Vertices with image `None` and edges touching them
/// are outside the packing and ignored.
fn packing_clauses(
    maps: &[Vec<Option<usize>>],
    trees: &[RootedTree],
    host_order: usize,
) -> (Vec<ClauseResult>, Option<Witness>) {
    let mut witness: Option<Witness> = None;

    // Clause 1: each map injective on its mapped vertices.
    let mut inj_pass = true;
    let mut inj_detail = String::from("every map injective");
    let mut inj_tree = 0;
    'inj: for (i, map) in maps.iter().enumerate() {
        let mut seen = vec![usize::MAX; host_order];
        for (v, img) in map.iter().enumerate() {
            if let Some(u) = img {
                if seen[*u] != usize::MAX {
                    inj_pass = false;
                    inj_tree = i;
                    inj_detail = format!(
                        "tree {} maps vertices {} and {} both to {}",
                        i, seen[*u], v, u
                    );
                    break 'inj;
                }
                seen[*u] = v;
            }
        }
    }
    if !inj_pass && witness.is_none() {
        witness = Some(Witness {
            clause: "injective",
            tree: inj_tree,
            detail: inj_detail.clone(),
        });
    }

    // Clause 2: every fully-mapped tree edge lands on a distinct-endpoint
    // pair (the host is complete, so that is the whole embedding condition).
    let mut edge_pass = true;
    let mut edge_detail = String::from("every mapped edge has distinct endpoints");
    let mut edge_tree = 0;
    'edges: for (i, (map, t)) in maps.iter().zip(trees).enumerate() {
        for (x, y) in t.edges() {
            if let (Some(a), Some(b)) = (map[x], map[y]) {
                if a == b {
                    edge_pass = false;
                    edge_tree = i;
                    edge_detail =
                        format!("tree {} collapses edge {{{}, {}}} onto vertex {}", i, x, y, a);
                    break 'edges;
                }
            }
        }
    }
    if !edge_pass && witness.is_none() {
        witness = Some(Witness {
            clause: "edge-endpoints",
            tree: edge_tree,
            detail: edge_detail.clone(),
        });
    }

    // Clause 3: the multiset of image pairs has no duplicate. Sorted
    // multiset, ties broken by tree id, so the reported witness is the
    // lexicographically first duplicated pair.
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, (map, t)) in maps.iter().zip(trees).enumerate() {
        for (x, y) in t.edges() {
            if let (Some(a), Some(b)) = (map[x], map[y]) {
                pairs.push((a.min(b), a.max(b), i));
            }
        }
    }
    pairs.sort_unstable();
    let mut disjoint_pass = true;
    let mut disjoint_detail = format!("{} image edges, all distinct", pairs.len());
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
            disjoint_pass = false;
            disjoint_detail = format!(
                "pair {{{}, {}}} used by trees {} and {}",
                w[0].0, w[0].1, w[0].2, w[1].2
            );
            if witness.is_none() {
                witness = Some(Witness {
                    clause: "edge-disjoint",
                    tree: w[1].2,
                    detail: disjoint_detail.clone(),
                });
            }
            break;
        }
    }

    let checks = vec![
        ClauseResult {
            name: "injective",
            pass: inj_pass,
            detail: inj_detail,
        },
        ClauseResult {
            name: "edge-endpoints",
            pass: edge_pass,
            detail: edge_detail,
        },
        ClauseResult {
            name: "edge-disjoint",
            pass: disjoint_pass,
            detail: disjoint_detail,
        },
    ];
    (checks, witness)
}

/// Certify that `maps` place the trees as pairwise edge-disjoint copies
/// inside the complete host of the stated order. Each map must assign
/// every vertex of its tree.
pub fn validate_packing(
    maps: &[Vec<usize>],
    trees: &[RootedTree],
    host_order: usize,
) -> Result<Certificate> {
    let full: Vec<Vec<Option<usize>>> = maps
        .iter()
        .map(|m| m.iter().copied().map(Some).collect())
        .collect();
    check_shapes(&full, trees, host_order)?;
    let (checks, witness) = packing_clauses(&full, trees, host_order);
    Ok(Certificate::from_checks(checks, witness))
}

/// Certify an almost-packing given as per-tree partial maps (image `None`
/// marks the exception set R_i) and report the tight ℓ: clause (a) is the
/// packing check on the restrictions, (b) bounds |R_i|, and (c) bounds,
/// for each host vertex, the number of trees whose preimage there has a
/// neighbour in the exception set.
pub fn validate_almost_packing(
    maps: &[Vec<Option<usize>>],
    trees: &[RootedTree],
    host_order: usize,
) -> Result<AlmostCertificate> {
    check_shapes(maps, trees, host_order)?;
    let (mut checks, witness) = packing_clauses(maps, trees, host_order);
    for c in &mut checks {
        c.name = match c.name {
            "injective" => "a-injective",
            "edge-endpoints" => "a-edge-endpoints",
            "edge-disjoint" => "a-edge-disjoint",
            other => other,
        };
    }

    let max_reserve = maps
        .iter()
        .map(|m| m.iter().filter(|img| img.is_none()).count())
        .max()
        .unwrap_or(0);
    checks.push(ClauseResult {
        name: "b-reserve-size",
        pass: true,
        detail: format!("largest exception set has {} vertices", max_reserve),
    });

    // One pass over all tree edges: flag mapped vertices with a neighbour
    // in the exception set, then count flags per host vertex.
    let mut load = vec![0usize; host_order];
    for (map, t) in maps.iter().zip(trees) {
        let mut has_reserve_neighbour = vec![false; t.order()];
        for (x, y) in t.edges() {
            if map[x].is_none() && map[y].is_some() {
                has_reserve_neighbour[y] = true;
            }
            if map[y].is_none() && map[x].is_some() {
                has_reserve_neighbour[x] = true;
            }
        }
        for (v, img) in map.iter().enumerate() {
            if let Some(u) = img {
                if has_reserve_neighbour[v] {
                    load[*u] += 1;
                }
            }
        }
    }
    let max_neighbour_load = load.iter().copied().max().unwrap_or(0);
    checks.push(ClauseResult {
        name: "c-neighbour-load",
        pass: true,
        detail: format!(
            "largest per-vertex neighbour-of-reserve count is {}",
            max_neighbour_load
        ),
    });

    Ok(AlmostCertificate {
        certificate: Certificate::from_checks(checks, witness),
        ell: max_reserve.max(max_neighbour_load),
        max_reserve,
        max_neighbour_load,
    })
}

/// Result of the exhaustive oracle: ground-truth existence and, when a
/// packing exists, the first one in lexicographic search order.
#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub exists: bool,
    pub packing: Option<Vec<Vec<usize>>>,
    pub nodes: u64,
}

struct OracleSearch<'a> {
    host_order: usize,
    // Flattened slots: (tree, vertex, parent slot within `assign`).
    seq: Vec<(usize, usize, Option<usize>)>,
    assign: Vec<usize>,
    tree_used: Vec<u16>,
    edge_used: u64,
    nodes: u64,
    budget: u64,
    trees: &'a [RootedTree],
}

impl OracleSearch<'_> {
    fn pair_bit(&self, a: usize, b: usize) -> u64 {
        1u64 << (a.min(b) * self.host_order + a.max(b))
    }

    fn run(&mut self, slot: usize) -> Result<bool> {
        if slot == self.seq.len() {
            return Ok(true);
        }
        let (tree, _vertex, parent_slot) = self.seq[slot];
        for w in 0..self.host_order {
            if self.tree_used[tree] & (1 << w) != 0 {
                continue;
            }
            let bit = parent_slot.map(|p| self.pair_bit(self.assign[p], w));
            if let Some(bit) = bit {
                if self.edge_used & bit != 0 {
                    continue;
                }
            }
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(Error::SearchBudget(self.budget));
            }
            self.assign[slot] = w;
            self.tree_used[tree] |= 1 << w;
            if let Some(bit) = bit {
                self.edge_used |= bit;
            }
            if self.run(slot + 1)? {
                return Ok(true);
            }
            self.tree_used[tree] &= !(1 << w);
            if let Some(bit) = bit {
                self.edge_used &= !bit;
            }
        }
        Ok(false)
    }

    fn extract(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .trees
            .iter()
            .map(|t| vec![usize::MAX; t.order()])
            .collect();
        for (slot, &(tree, vertex, _)) in self.seq.iter().enumerate() {
            out[tree][vertex] = self.assign[slot];
        }
        out
    }
}

/// Exact packing-existence decision by backtracking, for hosts of order
/// at most 8. Trees are placed in order, vertices in breadth-first order,
/// candidates ascending, pruning on per-tree injectivity and the global
/// used-pair set; the returned packing (if any) is the search-order first.
pub fn exhaustive_pack_oracle(
    fam: &TreeFamily,
    host_order: usize,
    budget: u64,
) -> Result<OracleResult> {
    if host_order > 8 {
        return Err(Error::Input(format!(
            "oracle host order {} exceeds the exhaustive limit of 8",
            host_order
        )));
    }
    if fam.trees.iter().any(|t| t.order() > host_order) {
        return Ok(OracleResult {
            exists: false,
            packing: None,
            nodes: 0,
        });
    }
    let mut seq = Vec::new();
    for (i, t) in fam.trees.iter().enumerate() {
        let base = seq.len();
        let order = t.bfs_order();
        let mut slot_of = vec![usize::MAX; t.order()];
        for (k, &v) in order.iter().enumerate() {
            slot_of[v] = base + k;
            let parent_slot = t.parent(v).map(|p| slot_of[p]);
            seq.push((i, v, parent_slot));
        }
    }
    let mut search = OracleSearch {
        host_order,
        assign: vec![0; seq.len()],
        seq,
        tree_used: vec![0; fam.trees.len()],
        edge_used: 0,
        nodes: 0,
        budget,
        trees: &fam.trees,
    };
    let exists = search.run(0)?;
    Ok(OracleResult {
        exists,
        packing: exists.then(|| search.extract()),
        nodes: search.nodes,
    })
}
