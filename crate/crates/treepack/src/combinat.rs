//! Small combinatorial helpers: binomials and lexicographic k-subset iteration.

/// Exact binomial coefficient. Saturates to u128::MAX on overflow, which at the
/// orders handled here (n in the thousands, k <= 8) never triggers.
pub fn binom(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

#[inline(always)]
pub fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

#[inline(always)]
pub fn choose2_int(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Lexicographic k-subsets of {0, .., n-1} \ {excluded}, yielded into a caller
/// buffer to avoid per-tuple allocation.
pub struct Subsets {
    pool: Vec<usize>,
    idx: Vec<usize>,
    done: bool,
}

impl Subsets {
    pub fn new(n: usize, k: usize, excluded: Option<usize>) -> Self {
        let pool: Vec<usize> = (0..n).filter(|&v| Some(v) != excluded).collect();
        let done = k > pool.len();
        Subsets {
            pool,
            idx: (0..k).collect(),
            done,
        }
    }

    /// Writes the next subset into `out` (len k). Returns false when exhausted.
    pub fn next_into(&mut self, out: &mut [usize]) -> bool {
        if self.done {
            return false;
        }
        let k = self.idx.len();
        debug_assert_eq!(out.len(), k);
        for (o, &i) in out.iter_mut().zip(&self.idx) {
            *o = self.pool[i];
        }
        // advance
        if k == 0 {
            self.done = true;
            return true;
        }
        let n = self.pool.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] + 1 <= n - (k - i) {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        true
    }
}
