//! Correction phase: completing an almost-packing of the core clique to a
//! genuine packing of the inflated clique by embedding every exception
//! vertex into the reserve.
//!
//! Trees are processed in index order, each exception set in breadth-first
//! order from the lowest-indexed embedded vertex, so the parent of an
//! exception vertex is always placed before it. Every step assigns the
//! lowest-indexed reserve vertex outside four forbidden sets:
//!
//!   X — reserve vertices already used by the current tree,
//!   Y — reserve vertices whose pair with an embedded neighbour's image
//!       was used by an earlier tree,
//!   Z — reserve vertices already saturated with reserve-reserve edges
//!       (at least εm/2 of them),
//!   U — reserve vertices whose pair with the parent's reserve image was
//!       already used (only when the parent is itself exceptional).
//!
//! Used-edge bookkeeping covers core-reserve and reserve-reserve pairs;
//! core-core pairs are the almost-packing's responsibility and are
//! certified, not tracked. The output is always passed through the
//! independent validator before being returned.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{CorrectionFailure, Error, Result};
use crate::limping::PartialEmbedding;
use crate::tree::cut::LevelForest;
use crate::tree::RootedTree;
use crate::validate::{self, AlmostCertificate, Certificate};

/// Partial maps into the core clique: `None` marks the exception set R_i.
#[derive(Clone, Debug, Serialize)]
pub struct AlmostPacking {
    pub core_order: usize,
    pub maps: Vec<Vec<Option<usize>>>,
    /// Per tree, the sorted exception set (the `None` positions of `maps`).
    pub removed: Vec<Vec<usize>>,
}

impl AlmostPacking {
    /// Shape-checked construction; semantic validity (the packing clauses)
    /// is the validator's job.
    pub fn new(core_order: usize, maps: Vec<Vec<Option<usize>>>) -> Result<Self> {
        for (i, map) in maps.iter().enumerate() {
            for (v, img) in map.iter().enumerate() {
                if let Some(u) = img {
                    if *u >= core_order {
                        return Err(Error::Input(format!(
                            "tree {} maps vertex {} to {} outside the core of order {}",
                            i, v, u, core_order
                        )));
                    }
                }
            }
        }
        let removed = maps
            .iter()
            .map(|m| {
                m.iter()
                    .enumerate()
                    .filter_map(|(v, img)| img.is_none().then_some(v))
                    .collect()
            })
            .collect();
        Ok(AlmostPacking {
            core_order,
            maps,
            removed,
        })
    }

    pub fn reserve(&self, i: usize) -> &[usize] {
        &self.removed[i]
    }

    /// Clause-by-clause certification against the trees, reporting the
    /// tight exception bound ℓ.
    pub fn certify(&self, trees: &[RootedTree]) -> Result<AlmostCertificate> {
        validate::validate_almost_packing(&self.maps, trees, self.core_order)
    }
}

/// One tree's share of one nibble round, in the coordinates the round
/// produced: forest-local collision lists, host-vertex images.
pub struct RoundContribution<'a> {
    pub forest: &'a LevelForest,
    pub emb: &'a PartialEmbedding,
    pub vertex_collisions: &'a [usize],
    pub edge_collisions: &'a [usize],
}

/// Assemble an almost-packing from per-round embeddings: the exception
/// set of tree i is its root plus every level vertex that was skipped,
/// left unembedded, or listed in the contribution's collision-drop sets;
/// everything else keeps its round image. The result is certified before
/// being returned.
pub fn build_almost_packing(
    core_order: usize,
    trees: &[RootedTree],
    rounds: &[Vec<RoundContribution>],
) -> Result<(AlmostPacking, AlmostCertificate)> {
    for (j, round) in rounds.iter().enumerate() {
        if round.len() != trees.len() {
            return Err(Error::Input(format!(
                "round {} carries {} forests for {} trees",
                j,
                round.len(),
                trees.len()
            )));
        }
    }
    let mut maps: Vec<Vec<Option<usize>>> =
        trees.iter().map(|t| vec![None; t.order()]).collect();
    let mut claimed: Vec<Vec<bool>> = trees.iter().map(|t| vec![false; t.order()]).collect();
    for round in rounds {
        for (i, contrib) in round.iter().enumerate() {
            let drop: HashSet<usize> = contrib
                .vertex_collisions
                .iter()
                .chain(contrib.edge_collisions)
                .copied()
                .collect();
            for local in 0..contrib.forest.order() {
                let g = contrib.forest.global(local);
                if g >= trees[i].order() {
                    return Err(Error::Input(format!(
                        "forest vertex {} of tree {} is out of range",
                        g, i
                    )));
                }
                if claimed[i][g] {
                    return Err(Error::Internal(format!(
                        "tree {} vertex {} appears in two rounds",
                        i, g
                    )));
                }
                claimed[i][g] = true;
                if !drop.contains(&local) {
                    if let Some(u) = contrib.emb.image(local) {
                        maps[i][g] = Some(u);
                    }
                }
            }
        }
    }
    // The anchor root is outside every level, so it must end up unclaimed
    // and exceptional; any other unclaimed vertex means a missing level.
    for (i, t) in trees.iter().enumerate() {
        for v in 0..t.order() {
            if !claimed[i][v] && v != t.root() {
                return Err(Error::Input(format!(
                    "tree {} vertex {} is covered by no round",
                    i, v
                )));
            }
        }
    }
    let ap = AlmostPacking::new(core_order, maps)?;
    let cert = ap.certify(trees)?;
    if !cert.certificate.valid {
        return Err(Error::Internal(format!(
            "assembled almost-packing fails certification: {:?}",
            cert.certificate.witness
        )));
    }
    Ok((ap, cert))
}

/// A completed packing of the inflated clique, with the validator's
/// certificate attached.
#[derive(Clone, Debug, Serialize)]
pub struct CorrectedPacking {
    pub host_total: usize,
    pub maps: Vec<Vec<usize>>,
    pub certificate: Certificate,
}

/// Run ledger for one correction pass.
#[derive(Clone, Debug, Serialize)]
pub struct CorrectionStats {
    pub core_order: usize,
    pub host_total: usize,
    pub reserve_size: usize,
    pub epsilon: f64,
    /// Tight exception bound of the input almost-packing.
    pub ell: usize,
    pub steps: usize,
    /// Smallest candidate set met across all steps (reserve size if none).
    pub min_candidates: usize,
    /// Lower bound εm − ℓ − Δ²ℓ − εm/8 − εm/2 on the candidate set,
    /// evaluated with the actual reserve size in place of εm's first term.
    pub margin_bound: f64,
    /// Whether the hypotheses behind `margin_bound` held (at most 2m
    /// trees, ℓ ≤ ε²m/(64Δ²)); the bound is only asserted when they did.
    pub preconditions_met: bool,
    pub max_x: usize,
    pub max_y: usize,
    pub max_z: usize,
    pub max_u: usize,
    /// |Z| per step, in execution order; saturation never reverses, so
    /// this trace is nondecreasing.
    pub z_trace: Vec<usize>,
}

/// Candidate-margin lower bound for one step: the reserve has εm
/// vertices, of which at most ℓ are X, Δ²ℓ are Y, εm/8 are Z and εm/2
/// are U. ℓ is real-valued so hypothesis-scale bounds can be evaluated.
pub fn candidate_margin(epsilon: f64, m: usize, delta: usize, ell: f64) -> f64 {
    let em = epsilon * m as f64;
    em - ell - (delta * delta) as f64 * ell - em / 8.0 - em / 2.0
}

/// Order of the inflated clique K_{(1+ε)m}, with a nudge so that exact
/// products like 1.4 * 1000 do not floor to 1399.
pub fn inflated_order(m: usize, epsilon: f64) -> usize {
    ((1.0 + epsilon) * m as f64 + 1e-9).floor() as usize
}

/// Complete `ap` to a packing of K_{(1+ε)m}. The input is certified
/// first (an invalid almost-packing is an input error); the output is
/// certified unconditionally before being returned.
pub fn correct(
    ap: &AlmostPacking,
    trees: &[RootedTree],
    epsilon: f64,
) -> Result<(CorrectedPacking, CorrectionStats)> {
    let m = ap.core_order;
    if ap.maps.len() != trees.len() {
        return Err(Error::Input(format!(
            "{} maps for {} trees",
            ap.maps.len(),
            trees.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Input(format!("epsilon {} must be positive", epsilon)));
    }
    let host_total = inflated_order(m, epsilon);
    let w_count = host_total - m;
    if w_count == 0 {
        return Err(Error::Input(format!(
            "reserve is empty: (1+{})·{} rounds down to {}",
            epsilon, m, host_total
        )));
    }
    let input_cert = ap.certify(trees)?;
    if !input_cert.certificate.valid {
        return Err(Error::Input(format!(
            "almost-packing invalid: {:?}",
            input_cert.certificate.witness
        )));
    }
    let ell = input_cert.ell;
    let delta = trees.iter().map(|t| t.max_degree()).max().unwrap_or(0);

    let em = epsilon * m as f64;
    let z_threshold = em / 2.0;
    let margin_bound = w_count as f64
        - ell as f64
        - (delta * delta) as f64 * ell as f64
        - em / 8.0
        - em / 2.0;
    let preconditions_met = trees.len() <= 2 * m
        && (ell as f64) <= epsilon * epsilon * m as f64 / (64.0 * (delta * delta) as f64);

    // (core vertex, reserve vertex) pairs used by finished trees.
    let mut cross_used: HashSet<(usize, usize)> = HashSet::new();
    // Reserve-reserve pairs (lo, hi) with per-vertex degree counters.
    let mut reserve_used: HashSet<(usize, usize)> = HashSet::new();
    let mut reserve_deg = vec![0usize; w_count];
    // Cross pairs consumed at each reserve vertex; steering each step to
    // the least-burnt candidate keeps the Y sets of later trees small.
    // Any candidate is correct — the existence argument and the final
    // validation don't depend on the choice rule.
    let mut cross_deg = vec![0usize; w_count];

    let mut stats = CorrectionStats {
        core_order: m,
        host_total,
        reserve_size: w_count,
        epsilon,
        ell,
        steps: 0,
        min_candidates: w_count,
        margin_bound,
        preconditions_met,
        max_x: 0,
        max_y: 0,
        max_z: 0,
        max_u: 0,
        z_trace: Vec::new(),
    };

    let mut out: Vec<Vec<usize>> = Vec::with_capacity(trees.len());
    for (i, t) in trees.iter().enumerate() {
        let r_i = ap.reserve(i);
        if r_i.len() == t.order() {
            return Err(Error::Input(format!(
                "tree {} is entirely exceptional; no root survives",
                i
            )));
        }
        if r_i.is_empty() {
            out.push(ap.maps[i].iter().map(|img| img.unwrap()).collect());
            continue;
        }
        let in_r: Vec<bool> = {
            let mut f = vec![false; t.order()];
            for &v in r_i {
                f[v] = true;
            }
            f
        };
        let root = (0..t.order())
            .find(|&v| !in_r[v])
            .expect("a non-exceptional vertex exists");
        let rt = t.rerooted(root);
        let mut assignment: Vec<Option<usize>> = ap.maps[i].clone();
        let mut banned_x = vec![false; w_count];
        let mut x_count = 0usize;
        let mut tree_cross: Vec<(usize, usize)> = Vec::new();
        for (step, &x) in rt
            .bfs_order()
            .iter()
            .filter(|&&v| in_r[v])
            .enumerate()
            .map(|(k, v)| (k + 1, v))
        {
            let neighbour_images: Vec<usize> = rt
                .neighbours(x)
                .into_iter()
                .filter_map(|y| ap.maps[i][y])
                .collect();
            let parent_reserve_img = match rt.parent(x) {
                Some(p) if in_r[p] => Some(assignment[p].ok_or_else(|| {
                    Error::Internal(format!(
                        "exceptional parent {} of {} unassigned despite BFS order",
                        p, x
                    ))
                })?),
                _ => None,
            };
            let (mut y_count, mut z_count, mut u_count) = (0usize, 0usize, 0usize);
            let mut chosen: Option<usize> = None;
            let mut chosen_burn = usize::MAX;
            let mut candidates = 0usize;
            for w_idx in 0..w_count {
                let w = m + w_idx;
                let in_x = banned_x[w_idx];
                let in_y = neighbour_images
                    .iter()
                    .any(|&v| cross_used.contains(&(v, w)));
                let in_z = reserve_deg[w_idx] as f64 >= z_threshold;
                let in_u = parent_reserve_img
                    .is_some_and(|pw| reserve_used.contains(&(pw.min(w), pw.max(w))));
                y_count += usize::from(in_y);
                z_count += usize::from(in_z);
                u_count += usize::from(in_u);
                if !(in_x || in_y || in_z || in_u) {
                    candidates += 1;
                    let burn = cross_deg[w_idx] + reserve_deg[w_idx];
                    if burn < chosen_burn {
                        chosen_burn = burn;
                        chosen = Some(w);
                    }
                }
            }
            stats.max_x = stats.max_x.max(x_count);
            stats.max_y = stats.max_y.max(y_count);
            stats.max_z = stats.max_z.max(z_count);
            stats.max_u = stats.max_u.max(u_count);
            stats.z_trace.push(z_count);
            let Some(w) = chosen else {
                return Err(Error::CorrectionFailure(CorrectionFailure {
                    tree: i,
                    step,
                    x_size: x_count,
                    y_size: y_count,
                    z_size: z_count,
                    u_size: u_count,
                    reserve_size: w_count,
                    epsilon,
                    ell,
                }));
            };
            stats.min_candidates = stats.min_candidates.min(candidates);
            stats.steps += 1;
            assignment[x] = Some(w);
            banned_x[w - m] = true;
            x_count += 1;
            if let Some(pw) = parent_reserve_img {
                reserve_used.insert((pw.min(w), pw.max(w)));
                reserve_deg[pw - m] += 1;
                reserve_deg[w - m] += 1;
            }
            for &v in &neighbour_images {
                tree_cross.push((v, w));
            }
        }
        for &(v, w) in &tree_cross {
            if cross_used.insert((v, w)) {
                cross_deg[w - m] += 1;
            }
        }
        out.push(
            assignment
                .into_iter()
                .enumerate()
                .map(|(v, img)| {
                    img.ok_or_else(|| {
                        Error::Internal(format!("tree {} vertex {} left unassigned", i, v))
                    })
                })
                .collect::<Result<Vec<usize>>>()?,
        );
    }

    if preconditions_met && (stats.min_candidates as f64) < margin_bound {
        return Err(Error::Internal(format!(
            "candidate set shrank to {} below the guaranteed margin {:.3}",
            stats.min_candidates, margin_bound
        )));
    }

    let certificate = validate::validate_packing(&out, trees, host_total)?;
    if !certificate.valid {
        return Err(Error::Internal(format!(
            "corrected packing fails certification: {:?}",
            certificate.witness
        )));
    }
    Ok((
        CorrectedPacking {
            host_total,
            maps: out,
            certificate,
        },
        stats,
    ))
}
