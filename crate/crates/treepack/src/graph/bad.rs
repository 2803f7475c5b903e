//! Bad-tuple profiles and superquasirandom extraction. A p-set is gamma-bad
//! when its common neighbourhood misses the window (1 ± gamma) d^p |V|; a
//! vertex lands in BAD when, for some p <= Delta, more than a gamma fraction
//! of (p-1)-sets extend it badly. Removing BAD in a single pass is the
//! extraction step the nibble relies on.

use super::HostGraph;
use crate::combinat::{binom, Subsets};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Closed-interval membership counts as not bad: only a strict miss of
/// [(1-gamma) d^p m, (1+gamma) d^p m] flags the tuple.
pub fn is_gamma_bad(g: &HostGraph, density: f64, gamma: f64, vs: &[usize]) -> bool {
    let p = vs.len();
    debug_assert!(p >= 1);
    let expected = density.powi(p as i32) * g.order() as f64;
    let lo = (1.0 - gamma) * expected;
    let hi = (1.0 + gamma) * expected;
    let codeg = g.codegree(vs) as f64;
    codeg < lo || codeg > hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CountMode {
    Exact { budget: u64 },
    Sampled { per_vertex: u64, seed: u64 },
}

impl CountMode {
    pub fn exact() -> Self {
        CountMode::Exact { budget: 10_000_000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BadEstimate {
    /// bad_{gamma,p}(v): number of (p-1)-subsets B of V \ {v} with B ∪ {v}
    /// gamma-bad (exact count, or the scaled estimate under sampling).
    pub count: f64,
    /// Sample size when estimated; None when the count is exact.
    pub samples: Option<u64>,
    /// Membership threshold gamma * C(m, p-1) the count is compared against.
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BadProfile {
    pub gamma: f64,
    pub delta_cap: usize,
    pub density_used: f64,
    /// per_vertex[v][p-1] profiles vertex v at tuple size p.
    pub per_vertex: Vec<Vec<BadEstimate>>,
    /// BAD_{gamma,Delta}: vertices exceeding the threshold at some p, ascending.
    pub bad: Vec<usize>,
}

pub fn bad_profile(
    g: &HostGraph,
    gamma: f64,
    delta_cap: usize,
    mode: CountMode,
) -> Result<BadProfile> {
    if delta_cap == 0 {
        return Err(Error::Input("delta_cap must be at least 1".into()));
    }
    let m = g.order();
    let d = g.density();
    if let CountMode::Exact { budget } = mode {
        for p in 1..=delta_cap {
            let tuples = binom(m, p - 1);
            if tuples > budget as u128 {
                return Err(Error::ExactBudget { p, tuples, budget });
            }
        }
    }
    let per_vertex: Vec<Vec<BadEstimate>> = map_indexed(m, |v| {
        let mut rows = Vec::with_capacity(delta_cap);
        let mut rng = match mode {
            CountMode::Sampled { seed, .. } => {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(v as u64 + 1);
                Some(r)
            }
            CountMode::Exact { .. } => None,
        };
        for p in 1..=delta_cap {
            let threshold = gamma * binom(m, p - 1) as f64;
            if p == 1 {
                // single tuple {v}; always counted exactly
                let count = if is_gamma_bad(g, d, gamma, &[v]) { 1.0 } else { 0.0 };
                rows.push(BadEstimate {
                    count,
                    samples: None,
                    threshold,
                });
                continue;
            }
            match mode {
                CountMode::Exact { .. } => {
                    let mut tuple = vec![0usize; p];
                    tuple[p - 1] = v;
                    let mut hits = 0u64;
                    let mut it = Subsets::new(m, p - 1, Some(v));
                    while it.next_into(&mut tuple[..p - 1]) {
                        if is_gamma_bad(g, d, gamma, &tuple) {
                            hits += 1;
                        }
                    }
                    rows.push(BadEstimate {
                        count: hits as f64,
                        samples: None,
                        threshold,
                    });
                }
                CountMode::Sampled { per_vertex, .. } => {
                    let rng = rng.as_mut().expect("sampled mode carries an rng");
                    let space = binom(m - 1, p - 1) as f64;
                    let mut tuple = vec![0usize; p];
                    tuple[p - 1] = v;
                    let mut hits = 0u64;
                    for _ in 0..per_vertex {
                        sample_distinct_excluding(m, v, &mut tuple[..p - 1], rng);
                        if is_gamma_bad(g, d, gamma, &tuple) {
                            hits += 1;
                        }
                    }
                    let count = hits as f64 / per_vertex.max(1) as f64 * space;
                    rows.push(BadEstimate {
                        count,
                        samples: Some(per_vertex),
                        threshold,
                    });
                }
            }
        }
        rows
    });
    let bad: Vec<usize> = (0..m)
        .filter(|&v| per_vertex[v].iter().any(|e| e.count > e.threshold))
        .collect();
    Ok(BadProfile {
        gamma,
        delta_cap,
        density_used: d,
        per_vertex,
        bad,
    })
}

/// Uniform (k)-subset of {0..m-1} \ {v} by rejection; k is tiny here.
fn sample_distinct_excluding(m: usize, v: usize, out: &mut [usize], rng: &mut ChaCha8Rng) {
    let k = out.len();
    debug_assert!(m > k, "need at least k+1 vertices");
    let mut filled = 0;
    while filled < k {
        let cand = rng.gen_range(0..m);
        if cand == v || out[..filled].contains(&cand) {
            continue;
        }
        out[filled] = cand;
        filled += 1;
    }
    out.sort_unstable();
}

/// One trimming pass: V' = V \ BAD, returning the induced host, the map from
/// new indices to original ones, and the profile that drove the cut.
pub fn extract_superquasirandom(
    g: &HostGraph,
    gamma: f64,
    delta_cap: usize,
    mode: CountMode,
) -> Result<(HostGraph, Vec<usize>, BadProfile)> {
    let profile = bad_profile(g, gamma, delta_cap, mode)?;
    let mut bad_iter = profile.bad.iter().peekable();
    let keep: Vec<usize> = (0..g.order())
        .filter(|v| {
            if bad_iter.peek() == Some(&v) {
                bad_iter.next();
                false
            } else {
                true
            }
        })
        .collect();
    let (induced, map) = g.induced(&keep);
    Ok((induced, map, profile))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(m: usize) -> HostGraph {
        let mut g = HostGraph::new(m);
        for v in 0..m {
            g.insert_edge(v, (v + 1) % m);
        }
        g
    }

    #[test]
    fn c5_adjacent_pair_is_bad() {
        // d = 0.5; expected codegree 0.25 * 5 = 1.25, window [1.125, 1.375];
        // adjacent vertices in C5 share no neighbour, so 0 falls outside.
        let g = cycle(5);
        assert!(is_gamma_bad(&g, 0.5, 0.1, &[0, 1]));
    }

    #[test]
    fn boundary_is_not_bad() {
        // complete graph: codegree of a pair is m-2; pick gamma so the window
        // lower end lands exactly on it, the closed interval keeps it clean
        let g = HostGraph::complete(10);
        let expected = 1.0 * 1.0 * 10.0;
        let gamma = (expected - 8.0) / expected; // lower end = 8 = codegree
        assert!(!is_gamma_bad(&g, 1.0, gamma, &[0, 1]));
        assert!(is_gamma_bad(&g, 1.0, gamma - 1e-9, &[0, 1]));
    }

    #[test]
    fn complete_profile_is_clean() {
        let g = HostGraph::complete(20);
        let prof = bad_profile(&g, 0.5, 2, CountMode::exact()).unwrap();
        assert!(prof.bad.is_empty());
        for rows in &prof.per_vertex {
            assert!(rows.iter().all(|e| e.count == 0.0));
        }
    }

    #[test]
    fn isolated_vertex_lands_in_bad() {
        // K20 plus an isolated vertex: d = 190/210; the isolated vertex has
        // degree 0, far below (1-gamma) d m, and is the only bad vertex.
        let mut g = HostGraph::new(21);
        for u in 0..20 {
            for v in u + 1..20 {
                g.insert_edge(u, v);
            }
        }
        let prof = bad_profile(&g, 0.2, 1, CountMode::exact()).unwrap();
        assert_eq!(prof.bad, vec![20]);
        assert_eq!(prof.per_vertex[20][0].count, 1.0);
        assert_eq!(prof.per_vertex[0][0].count, 0.0);
    }

    #[test]
    fn gamma_above_one_never_flags_lower_end() {
        // gamma = 1.5 makes the lower end negative; degrees can only trip the
        // upper end, which m-1 < 2.5 d m avoids whenever d > (m-1)/(2.5 m)
        let g = HostGraph::complete(8);
        let prof = bad_profile(&g, 1.5, 1, CountMode::exact()).unwrap();
        assert!(prof.bad.is_empty());
    }

    #[test]
    fn exact_budget_error_names_p() {
        // C(30,1) = 30 fits a budget of 100, C(30,2) = 435 does not
        let g = HostGraph::complete(30);
        let err = bad_profile(&g, 0.1, 4, CountMode::Exact { budget: 100 }).unwrap_err();
        match err {
            Error::ExactBudget { p, tuples, .. } => {
                assert_eq!(p, 3);
                assert_eq!(tuples, 435);
            }
            other => panic!("want ExactBudget, got {other}"),
        }
    }

    #[test]
    fn sampled_profile_agrees_on_planted_fixture() {
        let mut g = HostGraph::new(30);
        for u in 0..29 {
            for v in u + 1..29 {
                g.insert_edge(u, v);
            }
        }
        let exact = bad_profile(&g, 0.2, 2, CountMode::exact()).unwrap();
        let sampled = bad_profile(
            &g,
            0.2,
            2,
            CountMode::Sampled {
                per_vertex: 400,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(exact.bad, vec![29]);
        assert_eq!(sampled.bad, vec![29]);
        assert_eq!(sampled.per_vertex[5][1].samples, Some(400));
    }

    #[test]
    fn extraction_removes_planted_bad_set() {
        // two isolated vertices glued onto K12
        let mut g = HostGraph::new(14);
        for u in 0..12 {
            for v in u + 1..12 {
                g.insert_edge(u, v);
            }
        }
        let (h, map, prof) = extract_superquasirandom(&g, 0.3, 1, CountMode::exact()).unwrap();
        assert_eq!(prof.bad, vec![12, 13]);
        assert_eq!(h.order(), 12);
        assert_eq!(map, (0..12).collect::<Vec<_>>());
        assert_eq!(h.edge_count(), 66);
        // second pass finds nothing left to trim
        let prof2 = bad_profile(&h, 0.3, 1, CountMode::exact()).unwrap();
        assert!(prof2.bad.is_empty());
    }
}
