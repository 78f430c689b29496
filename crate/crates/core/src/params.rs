//! Round parameters and quantile arithmetic.
//!
//! The target bucket size ζ = n'/(6k) is kept as the exact pair `(n', k)` so
//! that every threshold comparison against an integer bucket size is done in
//! integer arithmetic.

use serde::Serialize;

/// Target bucket size of a round: ζ = n'/(6k).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Zeta {
    n_prime: u64,
    k: u64,
}

impl Zeta {
    pub fn new(n_prime: usize, k: usize) -> Self {
        assert!(k > 0, "k must be positive");
        Self {
            n_prime: n_prime as u64,
            k: k as u64,
        }
    }

    pub fn n_prime(&self) -> usize {
        self.n_prime as usize
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn value(&self) -> f64 {
        self.n_prime as f64 / (6.0 * self.k as f64)
    }

    #[inline]
    fn k_times(&self, c: u64, size: usize) -> u128 {
        c as u128 * self.k as u128 * size as u128
    }

    /// `size > (5/3)·ζ`, the splitting threshold.
    pub fn exceeds_split(&self, size: usize) -> bool {
        self.exceeds_split_scaled(size, 1)
    }

    /// `size > scale·(5/3)·ζ`.
    pub fn exceeds_split_scaled(&self, size: usize, scale: u32) -> bool {
        self.k_times(18, size) > 5 * self.n_prime as u128 * scale as u128
    }

    /// `total <= ζ`, the merging threshold.
    pub fn within_merge(&self, total: usize) -> bool {
        self.k_times(6, total) <= self.n_prime as u128
    }

    /// `size > (5/4)·ζ`.
    pub fn exceeds_excess(&self, size: usize) -> bool {
        self.k_times(24, size) > 5 * self.n_prime as u128
    }

    /// Amount by which `size` exceeds `(5/4)·ζ`, or zero.
    pub fn excess(&self, size: usize) -> f64 {
        if self.exceeds_excess(size) {
            size as f64 - 5.0 * self.n_prime as f64 / (24.0 * self.k as f64)
        } else {
            0.0
        }
    }

    /// `size <= 2·ζ`.
    pub fn within_double(&self, size: usize) -> bool {
        self.k_times(3, size) <= self.n_prime as u128
    }
}

/// The set-aside fraction ε = num/den of a split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Epsilon {
    num: u64,
    den: u64,
}

impl Epsilon {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(
            num > 0 && den > 0 && num <= den,
            "epsilon must lie in (0, 1]"
        );
        Self { num, den }
    }

    /// ε = 8/B for a per-operation budget of B work units.
    pub fn for_budget(budget: u32) -> Self {
        Self::new(8, budget as u64)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `⌈ε·m⌉`.
    pub fn ceil_of(&self, m: usize) -> usize {
        (self.num as usize * m).div_ceil(self.den as usize)
    }

    /// Set-aside size for a bucket of `m0` items: `⌈ε·m0⌉`, leaving at least
    /// one item for pivot selection.
    pub fn reserve_for(&self, m0: usize) -> usize {
        self.ceil_of(m0).min(m0.saturating_sub(1))
    }

    /// `size <= (1/2 + ε)·m0 + extra`.
    pub fn within_half_plus(&self, size: usize, m0: usize, extra: usize) -> bool {
        let den = self.den as u128;
        2 * den * size as u128
            <= (den + 2 * self.num as u128) * m0 as u128 + 2 * den * extra as u128
    }

    /// `size <= (1 + ε)·m0`.
    pub fn within_one_plus(&self, size: usize, m0: usize) -> bool {
        let den = self.den as u128;
        den * size as u128 <= (den + self.num as u128) * m0 as u128
    }
}

/// 1-based rank interval `[lo, hi]` of the `i`-th of `k` quantiles of an
/// `n`-item multiset. Empty when `hi < lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QuantileBounds {
    pub lo: usize,
    pub hi: usize,
}

impl QuantileBounds {
    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn len(&self) -> usize {
        (self.hi + 1).saturating_sub(self.lo)
    }

    /// Midpoint rank `⌊(lo + hi)/2⌋`.
    pub fn midpoint(&self) -> usize {
        (self.lo + self.hi) / 2
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.lo <= rank && rank <= self.hi
    }

    /// Whether the whole rank run `[start, start + len - 1]` lies inside.
    pub fn contains_run(&self, start: usize, len: usize) -> bool {
        len > 0 && self.lo <= start && start + len - 1 <= self.hi
    }
}

/// `r_lo = ⌊(i−1)·n/k⌋ + 1`, `r_hi = ⌊i·n/k⌋`. Returns `None` when `i` is
/// outside `1..=k`.
pub fn quantile_bounds(n: usize, k: usize, i: usize) -> Option<QuantileBounds> {
    if i == 0 || i > k {
        return None;
    }
    let lo = ((i as u128 - 1) * n as u128 / k as u128) as usize + 1;
    let hi = (i as u128 * n as u128 / k as u128) as usize;
    Some(QuantileBounds { lo, hi })
}
