//! The limping-homomorphism sampler and its Monte Carlo diagnostics.
//!
//! A level forest is embedded in two passes over the probability space
//! V^P × [0,1]^S: primary vertices land independently uniformly on the
//! host, then each secondary vertex either lands uniformly in the common
//! neighbourhood of its neighbours' images or is skipped when that image
//! set has atypical codegree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::{is_gamma_bad, HostGraph};
use crate::par::map_indexed;
use crate::tree::cut::{LevelForest, VertexClass};
use crate::{Error, Result};

/// Where a forest vertex ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    /// Roots are never assigned by the sampler.
    Unmapped,
    /// Secondary vertex whose neighbour images were too atypical.
    Skipped,
    Mapped(usize),
}

/// Everything the sampler needs: the host, the forest with its
/// primary/secondary classification, and the badness parameters.
pub struct LimpingConfig<'a> {
    pub alpha: f64,
    /// Density the badness tests are run against (the host's own density
    /// in the extracted superquasirandom subgraph).
    pub density: f64,
    pub rng_seed: u64,
    pub host: &'a HostGraph,
    pub forest: &'a LevelForest,
    pub classes: &'a [VertexClass],
}

impl LimpingConfig<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.25) {
            return Err(Error::Input(format!(
                "alpha = {} outside (0, 1/4)",
                self.alpha
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Input(format!(
                "density = {} outside (0, 1]",
                self.density
            )));
        }
        if self.classes.len() != self.forest.order() {
            return Err(Error::Input(format!(
                "classification covers {} vertices, forest has {}",
                self.classes.len(),
                self.forest.order()
            )));
        }
        if self.host.order() == 0 {
            return Err(Error::Input("host graph is empty".into()));
        }
        for (a, b) in self.forest.edges() {
            let (ca, cb) = (self.classes[a], self.classes[b]);
            let same_side = (ca == VertexClass::Primary && cb == VertexClass::Primary)
                || (ca == VertexClass::Secondary && cb == VertexClass::Secondary);
            if same_side {
                return Err(Error::Input(format!(
                    "forest edge {a}–{b} joins two {ca:?} vertices; the classification is not bipartite"
                )));
            }
        }
        Ok(())
    }
}

/// A sampled partial homomorphism from the forest into the host.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialEmbedding {
    /// Per forest vertex (local ids).
    pub slots: Vec<Slot>,
    /// The skipped set Y, ascending local ids.
    pub skipped: Vec<usize>,
    /// V(h): host vertices in the image, sorted and deduplicated.
    pub image_vertices: Vec<usize>,
    /// E(h): images of fully-assigned forest edges as sorted host pairs,
    /// kept with multiplicity so collisions stay visible.
    pub image_edges: Vec<(usize, usize)>,
}

impl PartialEmbedding {
    pub fn image(&self, v: usize) -> Option<usize> {
        match self.slots[v] {
            Slot::Mapped(u) => Some(u),
            _ => None,
        }
    }

    pub fn is_skipped(&self, v: usize) -> bool {
        self.slots[v] == Slot::Skipped
    }

    pub fn mapped_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| matches!(s, Slot::Mapped(_)))
            .count()
    }
}

/// Samples one limping homomorphism from `cfg.rng_seed`.
pub fn sample_limping(cfg: &LimpingConfig) -> Result<PartialEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    sample_limping_with(cfg, &mut rng)
}

/// Samples one limping homomorphism drawing from the given generator
/// (the caller controls streams for parallel determinism).
pub fn sample_limping_with(cfg: &LimpingConfig, rng: &mut ChaCha8Rng) -> Result<PartialEmbedding> {
    cfg.validate()?;
    let forest = cfg.forest;
    let m = cfg.host.order();
    let mut slots = vec![Slot::Unmapped; forest.order()];
    let mut skipped = Vec::new();

    // Step 1: primary vertices, independently uniform on V(G).
    for v in 0..forest.order() {
        if cfg.classes[v] == VertexClass::Primary {
            slots[v] = Slot::Mapped(rng.gen_range(0..m));
        }
    }

    // Step 2: secondary vertices in index order. Each draws its τ whether
    // or not it is skipped — the probability space is V^P × [0,1]^S.
    let mut images = Vec::new();
    for y in 0..forest.order() {
        if cfg.classes[y] != VertexClass::Secondary {
            continue;
        }
        let tau = rng.gen::<f64>();
        images.clear();
        for &x in &forest.neighbours(y) {
            if let Slot::Mapped(u) = slots[x] {
                images.push(u);
            }
        }
        images.sort_unstable();
        images.dedup();
        if images.is_empty() {
            return Err(Error::Internal(format!(
                "secondary vertex {y} has no embedded neighbour; the level forest is malformed"
            )));
        }
        if is_gamma_bad(cfg.host, cfg.density, cfg.alpha, &images) {
            slots[y] = Slot::Skipped;
            skipped.push(y);
        } else {
            let nbhd = cfg.host.common_neighbourhood(&images);
            debug_assert!(!nbhd.is_empty(), "a good image set has positive codegree");
            let idx = ((tau * nbhd.len() as f64) as usize).min(nbhd.len() - 1);
            slots[y] = Slot::Mapped(nbhd[idx]);
        }
    }

    let mut image_vertices: Vec<usize> = slots
        .iter()
        .filter_map(|s| match s {
            Slot::Mapped(u) => Some(*u),
            _ => None,
        })
        .collect();
    image_vertices.sort_unstable();
    image_vertices.dedup();

    let mut image_edges: Vec<(usize, usize)> = forest
        .edges()
        .filter_map(|(a, b)| match (slots[a], slots[b]) {
            (Slot::Mapped(u), Slot::Mapped(v)) => Some((u.min(v), u.max(v))),
            _ => None,
        })
        .collect();
    image_edges.sort_unstable();

    Ok(PartialEmbedding {
        slots,
        skipped,
        image_vertices,
        image_edges,
    })
}

/// One forest's share of a census: the forest, its classification, and
/// the sampled embedding.
pub struct CensusInput<'a> {
    pub forest: &'a LevelForest,
    pub classes: &'a [VertexClass],
    pub emb: &'a PartialEmbedding,
}

/// Collision bookkeeping across a batch of embeddings sharing one host.
#[derive(Clone, Debug, Default)]
pub struct CollisionCensus {
    /// Per forest: vertices sharing an image within that forest.
    pub vc: Vec<Vec<usize>>,
    /// Per forest: vertices on an edge whose host pair is also used by a
    /// different forest.
    pub ec: Vec<Vec<usize>>,
    /// Per host vertex: (forest, vertex) entries mapped there with a
    /// faulty neighbour.
    pub fn_by_host: Vec<Vec<(usize, usize)>>,
    /// Per host vertex: entries mapped there with a skipped neighbour.
    pub yn_by_host: Vec<Vec<(usize, usize)>>,
    /// Per host vertex: entries mapped there with a root neighbour.
    pub xn_by_host: Vec<Vec<(usize, usize)>>,
}

impl CollisionCensus {
    pub fn max_fn(&self) -> usize {
        self.fn_by_host.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn max_yn(&self) -> usize {
        self.yn_by_host.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn max_xn(&self) -> usize {
        self.xn_by_host.iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

/// Computes vertex/edge collisions and the per-host-vertex neighbour
/// censuses over a batch of embeddings into a host of the given order.
pub fn census_collisions(host_order: usize, inputs: &[CensusInput]) -> CollisionCensus {
    let k = inputs.len();
    let mut census = CollisionCensus {
        vc: vec![Vec::new(); k],
        ec: vec![Vec::new(); k],
        fn_by_host: vec![Vec::new(); host_order],
        yn_by_host: vec![Vec::new(); host_order],
        xn_by_host: vec![Vec::new(); host_order],
    };

    // Vertex collisions: same image twice within one forest.
    for (i, inp) in inputs.iter().enumerate() {
        let mut by_image: Vec<(usize, usize)> = (0..inp.forest.order())
            .filter_map(|v| inp.emb.image(v).map(|u| (u, v)))
            .collect();
        by_image.sort_unstable();
        let mut j = 0;
        while j < by_image.len() {
            let mut end = j + 1;
            while end < by_image.len() && by_image[end].0 == by_image[j].0 {
                end += 1;
            }
            if end - j >= 2 {
                census.vc[i].extend(by_image[j..end].iter().map(|&(_, v)| v));
            }
            j = end;
        }
        census.vc[i].sort_unstable();
    }

    // Edge collisions: a host pair carried by edges of two distinct
    // forests. Pairs repeated within a single forest do not count.
    let mut pair_forests: std::collections::HashMap<(usize, usize), (usize, bool)> =
        std::collections::HashMap::new();
    for (i, inp) in inputs.iter().enumerate() {
        for &pair in &inp.emb.image_edges {
            pair_forests
                .entry(pair)
                .and_modify(|(first, multi)| {
                    if *first != i {
                        *multi = true;
                    }
                })
                .or_insert((i, false));
        }
    }
    for (i, inp) in inputs.iter().enumerate() {
        let mut hit = vec![false; inp.forest.order()];
        for (a, b) in inp.forest.edges() {
            if let (Some(u), Some(v)) = (inp.emb.image(a), inp.emb.image(b)) {
                let pair = (u.min(v), u.max(v));
                let &(first, multi) = pair_forests.get(&pair).expect("pair was recorded");
                if multi || first != i {
                    hit[a] = true;
                    hit[b] = true;
                }
            }
        }
        census.ec[i] = (0..inp.forest.order()).filter(|&v| hit[v]).collect();
    }

    // Neighbour censuses per host vertex.
    for (i, inp) in inputs.iter().enumerate() {
        let order = inp.forest.order();
        let mut faulty = vec![false; order];
        for &v in census.vc[i].iter().chain(census.ec[i].iter()) {
            faulty[v] = true;
        }
        for x in 0..order {
            let Some(v) = inp.emb.image(x) else { continue };
            let mut has_faulty = false;
            let mut has_skipped = false;
            let mut has_root = false;
            for &y in &inp.forest.neighbours(x) {
                has_faulty |= faulty[y];
                has_skipped |= inp.emb.is_skipped(y);
                has_root |= inp.classes[y] == VertexClass::Root;
            }
            if has_faulty {
                census.fn_by_host[v].push((i, x));
            }
            if has_skipped {
                census.yn_by_host[v].push((i, x));
            }
            if has_root {
                census.xn_by_host[v].push((i, x));
            }
        }
    }

    census
}

/// One Monte Carlo claim: an estimate against its bound.
#[derive(Clone, Debug, Serialize)]
pub struct Claim {
    pub estimate: f64,
    pub bound: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Monte Carlo check of the distributional guarantees on a small fixture.
#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub trials: u64,
    pub forest_order: usize,
    pub host_order: usize,
    pub alpha: f64,
    pub density: f64,
    /// Worst per-secondary skip frequency vs the bound alpha.
    pub skip: Claim,
    /// Worst joint placement frequency of an adjacent (primary,
    /// secondary) pair vs (2/d)^{4Δ²}/m².
    pub pairwise: Claim,
    /// Mean vertex-collision count vs 2·v(F)²/(d^Δ·m).
    pub vc_mean: Claim,
}

/// Runs `trials` independent samples of the fixture and compares the
/// empirical skip rate, pairwise placement rate, and mean vertex-collision
/// count against their stated bounds (each with a 3-standard-error
/// allowance).
pub fn estimate_lemma_bounds(cfg: &LimpingConfig, trials: u64) -> Result<DistributionReport> {
    cfg.validate()?;
    if trials < 1_000 {
        return Err(Error::Input(format!(
            "{trials} trials are too few for a meaningful estimate (need ≥ 1000)"
        )));
    }
    let order = cfg.forest.order();
    let m = cfg.host.order();
    if order > 100 || m > 500 {
        return Err(Error::Input(format!(
            "fixture too large for Monte Carlo lemma checks: v(F) = {order} (≤ 100), m = {m} (≤ 500)"
        )));
    }
    let secondaries: Vec<usize> = (0..order)
        .filter(|&v| cfg.classes[v] == VertexClass::Secondary)
        .collect();
    let Some(&y0) = secondaries.first() else {
        return Err(Error::Input(
            "fixture has no secondary vertex; nothing to estimate".into(),
        ));
    };
    // Designated adjacent pair for the pairwise claim: the first
    // secondary and its lowest primary neighbour.
    let x0 = cfg
        .forest
        .neighbours(y0)
        .into_iter()
        .find(|&x| cfg.classes[x] == VertexClass::Primary)
        .expect("validated secondaries have a primary neighbour");

    struct Trial {
        skipped: Vec<u16>,
        joint: Option<(u32, u32)>,
        vc: u32,
    }

    let results: Vec<Result<Trial>> = map_indexed(trials as usize, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(t as u64 + 1);
        let emb = sample_limping_with(cfg, &mut rng)?;
        let input = CensusInput {
            forest: cfg.forest,
            classes: cfg.classes,
            emb: &emb,
        };
        let census = census_collisions(m, &[input]);
        Ok(Trial {
            skipped: emb.skipped.iter().map(|&v| v as u16).collect(),
            joint: match (emb.image(x0), emb.image(y0)) {
                (Some(u), Some(v)) => Some((u as u32, v as u32)),
                _ => None,
            },
            vc: census.vc[0].len() as u32,
        })
    });

    let mut skip_counts = vec![0u64; order];
    let mut joint_counts = vec![0u64; m * m];
    let mut vc_sum = 0.0f64;
    let mut vc_sq = 0.0f64;
    for r in results {
        let trial = r?;
        for &v in &trial.skipped {
            skip_counts[v as usize] += 1;
        }
        if let Some((u, v)) = trial.joint {
            joint_counts[u as usize * m + v as usize] += 1;
        }
        vc_sum += trial.vc as f64;
        vc_sq += (trial.vc as f64) * (trial.vc as f64);
    }

    let t = trials as f64;
    let binom_stderr = |p: f64| (p * (1.0 - p) / t).sqrt();

    let worst_skip = secondaries
        .iter()
        .map(|&v| skip_counts[v] as f64 / t)
        .fold(0.0f64, f64::max);
    let skip = Claim {
        estimate: worst_skip,
        bound: cfg.alpha,
        stderr: binom_stderr(worst_skip),
        pass: worst_skip <= cfg.alpha + 3.0 * binom_stderr(worst_skip),
    };

    let delta = (0..order).map(|v| cfg.forest.degree(v)).max().unwrap_or(1);
    let pair_bound =
        (2.0 / cfg.density).powi(4 * (delta * delta) as i32) / (m as f64 * m as f64);
    let worst_pair = joint_counts
        .iter()
        .map(|&c| c as f64 / t)
        .fold(0.0f64, f64::max);
    let pairwise = Claim {
        estimate: worst_pair,
        bound: pair_bound,
        stderr: binom_stderr(worst_pair),
        pass: worst_pair <= pair_bound + 3.0 * binom_stderr(worst_pair),
    };

    let vc_bound = 2.0 * (order as f64) * (order as f64)
        / (cfg.density.powi(delta as i32) * m as f64);
    let mean_vc = vc_sum / t;
    let vc_var = (vc_sq / t - mean_vc * mean_vc).max(0.0);
    let vc_stderr = (vc_var / t).sqrt();
    let vc_mean = Claim {
        estimate: mean_vc,
        bound: vc_bound,
        stderr: vc_stderr,
        pass: mean_vc <= vc_bound + 3.0 * vc_stderr,
    };

    Ok(DistributionReport {
        trials,
        forest_order: order,
        host_order: m,
        alpha: cfg.alpha,
        density: cfg.density,
        skip,
        pairwise,
        vc_mean,
    })
}
