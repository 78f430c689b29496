//! The k-selectable sloppy heap.
//!
//! Items sit in buckets that partition the key order; a balanced tree over
//! the buckets routes keys and ranks. `delete_i` picks the bucket holding the
//! midpoint rank of the i-th quantile and removes any item from it. Bucket
//! sizes are kept near ζ = n'/(6k) by a background process that runs in
//! rounds: each requested operation spends a fixed budget of work either on
//! splitting the bucket it touched, or on advancing the round's scan, which
//! splits oversized buckets and merges runs of small ones.
//!
//! Below 24k items the heap switches to an exact mode with one item per
//! bucket, where deletion returns the exact midpoint-rank item.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::bucket::{BucketId, BucketState, Buckets, MergeJob, MergeStep, SplitDone, SplitStep};
use crate::params::{quantile_bounds, Epsilon, QuantileBounds, Zeta};
use crate::tree::Tree;

pub const DEFAULT_BUDGET: u32 = 16;
pub const MIN_BUDGET: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("work budget must be at least {MIN_BUDGET}, got {0}")]
    BudgetTooSmall(u32),
    #[error("split threshold scale must be positive")]
    ZeroSplitScale,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeapError {
    #[error("quantile index {i} outside 1..={k}")]
    IndexOutOfRange { i: usize, k: usize },
    #[error("quantile {i} of {k} is empty with {n} items")]
    EmptyQuantile { i: usize, k: usize, n: usize },
    #[error("internal invariant broken: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Config {
    pub k: usize,
    /// Work units granted to background maintenance per requested operation.
    pub budget: u32,
    /// Multiplies the split threshold. Anything other than 1 breaks the size
    /// bound; it exists so tests can check that the checks catch that.
    #[doc(hidden)]
    pub split_scale: u32,
}

impl Config {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            budget: DEFAULT_BUDGET,
            split_scale: 1,
        }
    }

    pub fn with_budget(mut self, budget: u32) -> Self {
        self.budget = budget;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(ConfigError::KTooSmall(self.k));
        }
        if self.budget < MIN_BUDGET {
            return Err(ConfigError::BudgetTooSmall(self.budget));
        }
        if self.split_scale == 0 {
            return Err(ConfigError::ZeroSplitScale);
        }
        Ok(())
    }

    /// Item count at or above which the heap runs in sloppy mode.
    pub fn regime_enter(&self) -> usize {
        24 * self.k
    }

    /// Item count at or below which a sloppy heap falls back to exact mode.
    pub fn regime_exit(&self) -> usize {
        12 * self.k
    }

    pub fn epsilon(&self) -> Epsilon {
        Epsilon::for_budget(self.budget)
    }

    /// Buckets absorbed per merge step.
    pub fn merge_rate(&self) -> usize {
        (self.budget as usize / 8).clamp(1, 4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sloppy,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Sloppy => "sloppy",
        })
    }
}

/// A key made unique by its arrival number, so equal keys still have a
/// strict order and split pivots always separate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Tagged<K> {
    key: K,
    seq: u64,
}

#[derive(Debug, Clone)]
struct Round {
    zeta: Zeta,
    cursor: Option<BucketId>,
    merge: Option<MergeJob>,
    /// Requested operations since the round began.
    ops: u64,
}

#[derive(Debug, Clone, Default)]
struct Metrics {
    ops: u64,
    inserts: u64,
    deletes: u64,
    work: BTreeMap<u64, u64>,
    work_sum: u64,
    max_tree_touches: u64,
    max_bucket_units: u64,
    max_buckets: usize,
    max_buckets_at_boundary: usize,
    max_size_ratio: f64,
    size_bound_violations: u64,
    half_quantile_violations: u64,
    rounds_completed: u64,
    max_round_drift: f64,
    drift_violations: u64,
    max_round_ops_ratio: f64,
    splits_completed: u64,
    degenerate_splits: u64,
    max_split_peak_ratio: f64,
    max_split_calls_ratio: f64,
    max_spawn_zeta_ratio: f64,
    split_property_violations: u64,
    split_excess_violations: u64,
    max_swollen: usize,
    swollen_total: u64,
    merges_completed: u64,
    buckets_absorbed: u64,
    containment_probes: u64,
    mode_transitions: u64,
    max_transition_work: u64,
}

/// Snapshot of the heap's counters. Field order is stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub ops: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub n: usize,
    pub k: usize,
    pub budget: u32,
    pub mode: Mode,
    pub buckets: usize,
    pub zeta: f64,
    /// Per-operation work: tree node touches plus bucket work units.
    pub max_op_work: u64,
    pub mean_op_work: f64,
    pub p99_op_work: u64,
    pub max_tree_touches: u64,
    pub max_bucket_units: u64,
    pub max_buckets: usize,
    pub max_buckets_at_round_boundary: usize,
    /// Largest bucket size over the round's ζ seen after any sloppy-mode op.
    pub max_size_zeta_ratio: f64,
    pub size_bound_violations: u64,
    pub half_quantile_violations: u64,
    pub rounds_completed: u64,
    pub max_round_drift: f64,
    pub drift_violations: u64,
    /// Requested operations per round over the round's n'.
    pub max_round_ops_ratio: f64,
    pub splits_completed: u64,
    pub degenerate_splits: u64,
    pub max_split_peak_ratio: f64,
    pub max_split_calls_ratio: f64,
    pub max_spawn_zeta_ratio: f64,
    pub split_property_violations: u64,
    pub split_excess_violations: u64,
    pub swollen_buckets: usize,
    pub max_swollen_at_round_boundary: usize,
    pub swollen_total: u64,
    pub merges_completed: u64,
    pub buckets_absorbed: u64,
    pub fallback_activations: u64,
    pub containment_probes: u64,
    pub mode_transitions: u64,
    pub max_transition_work: u64,
}

/// The potential P = P1 + P2 of the current round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Potential {
    /// Items in buckets at or right of the scan cursor.
    pub p1: f64,
    /// Summed excess of bucket sizes over (5/4)·ζ.
    pub p2: f64,
    pub total: f64,
}

/// Potential of a bucket sequence with the scan cursor at `cursor` (an index
/// into `sizes`, or `None` at a round boundary).
pub fn potential_of(sizes: &[usize], cursor: Option<usize>, zeta: Zeta) -> Potential {
    let p1 = cursor.map_or(0, |c| sizes[c.min(sizes.len())..].iter().sum::<usize>()) as f64;
    let p2 = sizes.iter().map(|&s| zeta.excess(s)).sum();
    Potential {
        p1,
        p2,
        total: p1 + p2,
    }
}

/// Outcome of [`SloppyHeap::audit`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    /// Broken structure: sizes, order, links or mode shape.
    pub violations: Vec<String>,
    /// A bucket above 2ζ while n ≥ 24k. The structure is still sound.
    pub oversized: Option<String>,
}

impl AuditReport {
    pub fn is_ok(&self) -> bool {
        self.is_consistent() && self.oversized.is_none()
    }

    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }

    fn fail(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("audit ok");
        }
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().chain(&self.oversized) {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

/// A k-selectable sloppy heap over keys of type `K`.
#[derive(Debug, Clone)]
pub struct SloppyHeap<K> {
    cfg: Config,
    eps: Epsilon,
    tree: Tree<Tagged<K>, BucketId>,
    buckets: Buckets<Tagged<K>>,
    n: usize,
    seq: u64,
    mode: Mode,
    round: Round,
    metrics: Metrics,
    /// Bucket units spent by the operation in progress.
    units: u64,
}

impl<K: Ord + Clone> SloppyHeap<K> {
    /// Empty heap in exact mode.
    pub fn new(cfg: Config) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            eps: cfg.epsilon(),
            tree: Tree::new(),
            buckets: Buckets::new(),
            n: 0,
            seq: 0,
            mode: Mode::Exact,
            round: Round {
                zeta: Zeta::new(0, cfg.k),
                cursor: None,
                merge: None,
                ops: 0,
            },
            metrics: Metrics::default(),
            units: 0,
        })
    }

    /// Heap holding `items`, bulk-loaded in sorted order.
    pub fn build(cfg: Config, items: impl IntoIterator<Item = K>) -> Result<Self, ConfigError> {
        let mut heap = Self::new(cfg)?;
        let mut tagged: Vec<_> = items
            .into_iter()
            .map(|key| {
                heap.seq += 1;
                Tagged { key, seq: heap.seq }
            })
            .collect();
        tagged.sort_unstable();
        let mode = if tagged.len() >= cfg.regime_enter() {
            Mode::Sloppy
        } else {
            Mode::Exact
        };
        heap.load_sorted(tagged, mode);
        heap.tree.take_touches();
        Ok(heap)
    }

    pub fn config(&self) -> Config {
        self.cfg
    }

    pub fn k(&self) -> usize {
        self.cfg.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// ζ of the current round (meaningful in sloppy mode).
    pub fn zeta(&self) -> Zeta {
        self.round.zeta
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Bucket sizes in key order.
    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.buckets.ids().map(|id| self.buckets.size(id)).collect()
    }

    /// Position of the scan cursor among the buckets, if a round is running.
    pub fn cursor_index(&self) -> Option<usize> {
        let c = self.round.cursor?;
        self.buckets.ids().position(|id| id == c)
    }

    /// All keys, grouped by bucket in key order; order inside a bucket is
    /// arbitrary.
    pub fn keys(&self) -> Vec<K> {
        self.buckets
            .ids()
            .flat_map(|id| self.buckets.items(id).into_iter().map(|t| t.key.clone()))
            .collect()
    }

    pub fn insert(&mut self, key: K) {
        self.seq += 1;
        let item = Tagged { key, seq: self.seq };
        self.units = 1;
        match self.mode {
            Mode::Exact => self.insert_exact(item),
            Mode::Sloppy => {
                let (leaf, id) = self
                    .tree
                    .find_by_key(&item)
                    .expect("sloppy heap has buckets");
                self.buckets.serve_insert(id, item);
                self.tree.adjust_size(leaf, 1).expect("growing a leaf");
                self.n += 1;
                if self
                    .buckets
                    .is_split_candidate(id, self.round.zeta, self.cfg.split_scale)
                {
                    self.buckets
                        .designate_split(id, self.round.zeta, self.eps)
                        .expect("candidate bucket accepts designation");
                }
                self.maintenance(Some(id));
            }
        }
        self.metrics.inserts += 1;
        self.finish_op();
    }

    /// Remove and return a key from the i-th of k quantiles (1-based).
    pub fn delete_i(&mut self, i: usize) -> Result<K, HeapError> {
        let k = self.cfg.k;
        let bounds = quantile_bounds(self.n, k, i).ok_or(HeapError::IndexOutOfRange { i, k })?;
        if bounds.is_empty() {
            return Err(HeapError::EmptyQuantile { i, k, n: self.n });
        }
        self.units = 1;
        let item = match self.mode {
            Mode::Exact => self.delete_exact(bounds.midpoint())?,
            Mode::Sloppy => self.delete_sloppy(bounds)?,
        };
        self.metrics.deletes += 1;
        self.finish_op();
        Ok(item.key)
    }

    fn insert_exact(&mut self, item: Tagged<K>) {
        self.n += 1;
        let Some((leaf, at)) = self.tree.find_by_key(&item) else {
            let id = self.buckets.insert_singleton_before(None, item);
            let leaf = self.tree.insert_root_leaf(id, 1);
            self.buckets.set_leaf(id, leaf);
            return;
        };
        let existing = self.buckets.items(at)[0].clone();
        let (l, r) = if item < existing {
            let pivot = item.clone();
            let id = self.buckets.insert_singleton_before(Some(at), item);
            let (l, r) = self.tree.split_leaf(leaf, pivot, (id, 1), (at, 1));
            ((id, l), (at, r))
        } else {
            let id = self.buckets.insert_singleton_after(at, item);
            let (l, r) = self.tree.split_leaf(leaf, existing, (at, 1), (id, 1));
            ((at, l), (id, r))
        };
        self.buckets.set_leaf(l.0, l.1);
        self.buckets.set_leaf(r.0, r.1);
    }

    fn delete_exact(&mut self, rank: usize) -> Result<Tagged<K>, HeapError> {
        let (_, id, _) = self
            .tree
            .find_by_rank(rank)
            .map_err(|e| HeapError::Internal(e.to_string()))?;
        let item = self
            .buckets
            .serve_delete_any(id)
            .map_err(|e| HeapError::Internal(e.to_string()))?;
        self.n -= 1;
        self.drop_bucket(id);
        Ok(item)
    }

    fn delete_sloppy(&mut self, bounds: QuantileBounds) -> Result<Tagged<K>, HeapError> {
        let (leaf, mut id, mut start) = self
            .tree
            .find_by_rank(bounds.midpoint())
            .map_err(|e| HeapError::Internal(e.to_string()))?;
        let mut leaf = leaf;
        if !bounds.contains_run(start, self.buckets.size(id)) {
            self.metrics.containment_probes += 1;
            let prev = self
                .buckets
                .prev(id)
                .map(|p| (p, start - self.buckets.size(p)));
            let next = self
                .buckets
                .next(id)
                .map(|q| (q, start + self.buckets.size(id)));
            let found = [prev, next]
                .into_iter()
                .flatten()
                .find(|&(b, s)| bounds.contains_run(s, self.buckets.size(b)));
            let Some((b, s)) = found else {
                return Err(HeapError::Internal(format!(
                    "no bucket near rank {} lies inside [{}, {}]",
                    bounds.midpoint(),
                    bounds.lo,
                    bounds.hi
                )));
            };
            id = b;
            start = s;
            leaf = self.buckets.leaf(b);
        }
        debug_assert!(bounds.contains_run(start, self.buckets.size(id)));
        let item = self
            .buckets
            .serve_delete_any(id)
            .map_err(|e| HeapError::Internal(e.to_string()))?;
        self.tree
            .adjust_size(leaf, -1)
            .map_err(|e| HeapError::Internal(e.to_string()))?;
        self.n -= 1;
        if self.buckets.size(id) == 0 {
            self.drop_bucket(id);
            self.maintenance(None);
        } else {
            self.maintenance(Some(id));
        }
        Ok(item)
    }

    /// Remove an emptied bucket and its leaf, repairing the round state.
    fn drop_bucket(&mut self, id: BucketId) {
        let next = self.buckets.next(id);
        if self.round.cursor == Some(id) {
            self.round.cursor = next;
        }
        if self.round.merge.as_ref().is_some_and(|m| m.target == id) {
            self.round.merge = None;
        }
        self.tree.remove_leaf(self.buckets.leaf(id));
        self.buckets
            .remove_empty(id)
            .expect("dropping an empty bucket");
    }

    /// Spend this operation's budget on one task: the touched bucket's split
    /// if it is splitting, otherwise one step of the round's scan.
    fn maintenance(&mut self, accessed: Option<BucketId>) {
        if let Some(id) = accessed {
            if self.buckets.state(id) == BucketState::Splitting {
                self.advance_split(id);
                return;
            }
        }
        self.scan_step();
    }

    fn advance_split(&mut self, id: BucketId) -> Option<SplitDone<Tagged<K>>> {
        match self
            .buckets
            .split_work(id, self.cfg.budget as u64)
            .expect("advancing a splitting bucket")
        {
            SplitStep::Progress { units } => {
                self.units += units;
                None
            }
            SplitStep::Complete { units, split } => {
                self.units += units;
                self.apply_split(&split);
                Some(split)
            }
        }
    }

    fn apply_split(&mut self, split: &SplitDone<Tagged<K>>) {
        let r = &split.report;
        let m = &mut self.metrics;
        m.splits_completed += 1;
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        m.max_split_peak_ratio = m
            .max_split_peak_ratio
            .max(ratio(r.peak as f64, r.m0 as f64));
        let allowed = self.eps.ceil_of(r.m0).max(1);
        m.max_split_calls_ratio = m.max_split_calls_ratio.max(r.calls as f64 / allowed as f64);
        let ok_a = r.calls as usize <= allowed;
        let ok_b = self.eps.within_half_plus(r.left, r.m0, r.inserted_left)
            && self.eps.within_half_plus(r.right, r.m0, r.inserted_right);
        let ok_c = self.eps.within_one_plus(r.peak, r.m0);
        if !(ok_a && ok_b && ok_c) {
            m.split_property_violations += 1;
        }
        let Some(right) = split.right else {
            m.degenerate_splits += 1;
            return;
        };
        let zeta = self.round.zeta;
        let big = r.left.max(r.right);
        m.max_spawn_zeta_ratio = m.max_spawn_zeta_ratio.max(ratio(big as f64, zeta.value()));
        if zeta.exceeds_excess(big) {
            m.split_excess_violations += 1;
        }
        let left = split.left;
        let pivot = split.pivot.clone().expect("real split has a pivot");
        let (l, rl) = self.tree.split_leaf(
            self.buckets.leaf(left),
            pivot,
            (left, self.buckets.size(left)),
            (right, self.buckets.size(right)),
        );
        self.buckets.set_leaf(left, l);
        self.buckets.set_leaf(right, rl);
    }

    fn scan_step(&mut self) {
        let Some(c) = self.round.cursor else {
            self.start_round();
            return;
        };
        let zeta = self.round.zeta;
        if self.buckets.state(c) == BucketState::Splitting {
            if let Some(done) = self.advance_split(c) {
                let after = done.right.unwrap_or(done.left);
                self.move_cursor(self.buckets.next(after));
            }
        } else if let Some(mut job) = self.round.merge.take() {
            self.merge_step(&mut job, zeta);
        } else if self
            .buckets
            .is_split_candidate(c, zeta, self.cfg.split_scale)
        {
            self.buckets
                .designate_split(c, zeta, self.eps)
                .expect("candidate bucket accepts designation");
            if let Some(done) = self.advance_split(c) {
                let after = done.right.unwrap_or(done.left);
                self.move_cursor(self.buckets.next(after));
            }
        } else if self.buckets.can_absorb_next(c, zeta) {
            let mut job = self
                .buckets
                .start_merge(c)
                .expect("cursor bucket is normal");
            self.merge_step(&mut job, zeta);
        } else {
            self.advance_scan(c, zeta);
        }
    }

    /// Pass over buckets that need nothing, one unit each, stopping at the
    /// first that does or when the budget is spent.
    fn advance_scan(&mut self, mut c: BucketId, zeta: Zeta) {
        let mut spent = 0;
        loop {
            spent += 1;
            self.units += 1;
            let Some(next) = self.buckets.next(c) else {
                self.move_cursor(None);
                return;
            };
            self.round.cursor = Some(next);
            let idle = self.buckets.state(next) == BucketState::Normal
                && !self
                    .buckets
                    .is_split_candidate(next, zeta, self.cfg.split_scale)
                && !self.buckets.can_absorb_next(next, zeta);
            if !idle || spent >= self.cfg.budget {
                return;
            }
            c = next;
        }
    }

    fn merge_step(&mut self, job: &mut MergeJob, zeta: Zeta) {
        let step = self
            .buckets
            .merge_work(job, zeta, self.cfg.merge_rate(), &mut self.tree);
        match step {
            MergeStep::Progress { absorbed } => {
                self.units += absorbed as u64;
                self.metrics.buckets_absorbed += absorbed as u64;
                self.round.merge = Some(job.clone());
            }
            MergeStep::Complete { absorbed, aborted } => {
                self.units += absorbed.max(1) as u64;
                self.metrics.buckets_absorbed += absorbed as u64;
                if !aborted {
                    if job.absorbed > 0 {
                        self.metrics.merges_completed += 1;
                    }
                    self.move_cursor(self.buckets.next(job.target));
                }
            }
        }
    }

    /// Move the scan cursor; falling off the right end starts a new round.
    fn move_cursor(&mut self, to: Option<BucketId>) {
        self.round.cursor = to;
        if to.is_none() {
            self.start_round();
        }
    }

    fn start_round(&mut self) {
        let m = &mut self.metrics;
        let n_prime = self.round.zeta.n_prime();
        if n_prime > 0 {
            m.rounds_completed += 1;
            let diff = self.n.abs_diff(n_prime);
            m.max_round_drift = m.max_round_drift.max(diff as f64 / n_prime as f64);
            if 9 * diff > n_prime {
                m.drift_violations += 1;
            }
            m.max_round_ops_ratio = m
                .max_round_ops_ratio
                .max(self.round.ops as f64 / n_prime as f64);
            m.max_buckets_at_boundary = m.max_buckets_at_boundary.max(self.buckets.len());
            let swollen = self.buckets.splitting_count();
            m.max_swollen = m.max_swollen.max(swollen);
            m.swollen_total += swollen as u64;
        }
        self.begin_round();
    }

    fn begin_round(&mut self) {
        if let Some(job) = self.round.merge.take() {
            self.buckets.cancel_merge(&job);
        }
        self.round = Round {
            zeta: Zeta::new(self.n, self.cfg.k),
            cursor: self.buckets.head(),
            merge: None,
            ops: 0,
        };
    }

    fn finish_op(&mut self) {
        let touches = self.tree.take_touches();
        let work = touches + self.units;
        let m = &mut self.metrics;
        m.ops += 1;
        *m.work.entry(work).or_default() += 1;
        m.work_sum += work;
        m.max_tree_touches = m.max_tree_touches.max(touches);
        m.max_bucket_units = m.max_bucket_units.max(self.units);
        m.max_buckets = m.max_buckets.max(self.buckets.len());
        self.units = 0;
        if self.mode == Mode::Sloppy {
            self.round.ops += 1;
            let max = self.buckets.max_size();
            let zeta = self.round.zeta;
            let m = &mut self.metrics;
            m.max_size_ratio = m.max_size_ratio.max(max as f64 / zeta.value());
            if self.n >= self.cfg.regime_enter() && !zeta.within_double(max) {
                m.size_bound_violations += 1;
            }
            if self.n >= self.cfg.regime_enter() && 2 * self.cfg.k * max >= self.n {
                m.half_quantile_violations += 1;
            }
        }
        self.check_mode();
    }

    fn check_mode(&mut self) {
        let target = match self.mode {
            Mode::Exact if self.n >= self.cfg.regime_enter() => Mode::Sloppy,
            Mode::Sloppy if self.n <= self.cfg.regime_exit() => Mode::Exact,
            _ => return,
        };
        let mut items: Vec<Tagged<K>> = Vec::with_capacity(self.n);
        for mut bucket in self.buckets.drain_all() {
            if self.mode == Mode::Sloppy {
                bucket.sort_unstable();
            }
            items.extend(bucket);
        }
        let moved = items.len() as u64;
        self.load_sorted(items, target);
        let work = moved + self.tree.take_touches();
        let m = &mut self.metrics;
        m.mode_transitions += 1;
        m.max_transition_work = m.max_transition_work.max(work);
    }

    /// Replace all contents with `items` (sorted) laid out for `mode`.
    fn load_sorted(&mut self, items: Vec<Tagged<K>>, mode: Mode) {
        debug_assert!(items.windows(2).all(|w| w[0] < w[1]));
        self.buckets = Buckets::new();
        self.tree = Tree::new();
        self.n = items.len();
        self.mode = mode;
        self.round.merge = None;
        self.round.zeta = Zeta::new(0, self.cfg.k);
        if items.is_empty() {
            self.round.cursor = None;
            return;
        }
        let count = match mode {
            Mode::Exact => items.len(),
            Mode::Sloppy => {
                let zeta = Zeta::new(items.len(), self.cfg.k).value().round().max(1.0);
                ((items.len() as f64 / zeta).round() as usize).clamp(1, items.len())
            }
        };
        let mut entries = Vec::with_capacity(count);
        let mut iter = items.into_iter();
        let n = self.n;
        for b in 0..count {
            // bucket b holds items [b·n/count, (b+1)·n/count)
            let take = (b + 1) * n / count - b * n / count;
            let chunk: Vec<_> = iter.by_ref().take(take).collect();
            let max = chunk.last().expect("buckets are non-empty").clone();
            let id = self.buckets.push_back(chunk);
            entries.push((id, take, max));
        }
        let (tree, leaves) = Tree::build(&entries).expect("non-empty bucket sequence");
        for (e, leaf) in entries.iter().zip(leaves) {
            self.buckets.set_leaf(e.0, leaf);
        }
        self.tree = tree;
        match mode {
            Mode::Sloppy => self.begin_round(),
            Mode::Exact => self.round.cursor = None,
        }
    }

    /// Current potential, from bucket sizes and the scan cursor.
    pub fn potential(&self) -> Potential {
        potential_of(&self.bucket_sizes(), self.cursor_index(), self.round.zeta)
    }

    pub fn stats(&self) -> Stats {
        let m = &self.metrics;
        let p99 = {
            let cut = (m.ops as f64 * 0.99).ceil() as u64;
            let mut seen = 0;
            m.work
                .iter()
                .find(|(_, &c)| {
                    seen += c;
                    seen >= cut
                })
                .map_or(0, |(&w, _)| w)
        };
        Stats {
            ops: m.ops,
            inserts: m.inserts,
            deletes: m.deletes,
            n: self.n,
            k: self.cfg.k,
            budget: self.cfg.budget,
            mode: self.mode,
            buckets: self.buckets.len(),
            zeta: self.round.zeta.value(),
            max_op_work: m.work.keys().next_back().copied().unwrap_or(0),
            mean_op_work: if m.ops > 0 {
                m.work_sum as f64 / m.ops as f64
            } else {
                0.0
            },
            p99_op_work: p99,
            max_tree_touches: m.max_tree_touches,
            max_bucket_units: m.max_bucket_units,
            max_buckets: m.max_buckets,
            max_buckets_at_round_boundary: m.max_buckets_at_boundary,
            max_size_zeta_ratio: m.max_size_ratio,
            size_bound_violations: m.size_bound_violations,
            half_quantile_violations: m.half_quantile_violations,
            rounds_completed: m.rounds_completed,
            max_round_drift: m.max_round_drift,
            drift_violations: m.drift_violations,
            max_round_ops_ratio: m.max_round_ops_ratio,
            splits_completed: m.splits_completed,
            degenerate_splits: m.degenerate_splits,
            max_split_peak_ratio: m.max_split_peak_ratio,
            max_split_calls_ratio: m.max_split_calls_ratio,
            max_spawn_zeta_ratio: m.max_spawn_zeta_ratio,
            split_property_violations: m.split_property_violations,
            split_excess_violations: m.split_excess_violations,
            swollen_buckets: self.buckets.splitting_count(),
            max_swollen_at_round_boundary: m.max_swollen,
            swollen_total: m.swollen_total,
            merges_completed: m.merges_completed,
            buckets_absorbed: m.buckets_absorbed,
            fallback_activations: self.buckets.fallback_activations(),
            containment_probes: m.containment_probes,
            mode_transitions: m.mode_transitions,
            max_transition_work: m.max_transition_work,
        }
    }

    /// Full structural check. O(n).
    pub fn audit(&self) -> AuditReport {
        let mut report = AuditReport::default();
        if let Err(e) = self.tree.check() {
            report.fail(format!("tree: {e}"));
        }
        let ids: Vec<_> = self.buckets.ids().collect();
        if ids.len() != self.buckets.len() {
            report.fail(format!(
                "chain reaches {} of {} buckets",
                ids.len(),
                self.buckets.len()
            ));
        }
        let sum: usize = ids.iter().map(|&id| self.buckets.size(id)).sum();
        if sum != self.n || self.tree.total() != self.n {
            report.fail(format!(
                "item counts disagree: n = {}, tree root = {}, bucket sum = {sum}",
                self.n,
                self.tree.total()
            ));
        }
        if self.buckets.pooled_items() != self.n {
            report.fail(format!(
                "item pool holds {} nodes for {} items",
                self.buckets.pooled_items(),
                self.n
            ));
        }
        let leaves = self.tree.leaves_in_order();
        let leaf_ids: Vec<_> = leaves.iter().map(|&(_, p)| p).collect();
        if leaf_ids != ids {
            report.fail("bucket chain order differs from tree leaf order");
        }
        for &(leaf, id) in &leaves {
            if !self.buckets.is_live(id) {
                report.fail(format!("leaf {leaf:?} points at dead {id:?}"));
                continue;
            }
            if self.buckets.leaf_opt(id) != Some(leaf) {
                report.fail(format!("{id:?} does not link back to its leaf"));
            }
            if self.tree.leaf_size(leaf) != self.buckets.size(id) {
                report.fail(format!(
                    "{id:?} has size {} but its leaf says {}",
                    self.buckets.size(id),
                    self.tree.leaf_size(leaf)
                ));
            }
        }
        let mut splitting = 0;
        for &id in &ids {
            if let Err(e) = self.buckets.check_bucket(id) {
                report.fail(e);
            }
            if self.buckets.size(id) == 0 {
                report.fail(format!("{id:?} is empty"));
            }
            if self.buckets.state(id) == BucketState::Splitting {
                splitting += 1;
            }
        }
        if splitting != self.buckets.splitting_count() {
            report.fail(format!(
                "{splitting} splitting buckets, counter says {}",
                self.buckets.splitting_count()
            ));
        }
        for (id, lo, hi) in self.tree.leaf_intervals() {
            if !self.buckets.is_live(id) {
                continue;
            }
            let outside = self.buckets.items(id).into_iter().any(|item| {
                lo.as_ref().is_some_and(|lo| item <= lo) || hi.as_ref().is_some_and(|hi| item > hi)
            });
            if outside {
                report.fail(format!("{id:?} holds an item outside its key interval"));
            }
        }
        match self.mode {
            Mode::Exact => {
                if ids.iter().any(|&id| self.buckets.size(id) != 1) {
                    report.fail("exact mode bucket with size other than 1");
                }
                if splitting > 0 {
                    report.fail("exact mode bucket is splitting");
                }
            }
            Mode::Sloppy => {
                let max = self.buckets.max_size();
                if self.n >= self.cfg.regime_enter() && !self.round.zeta.within_double(max) {
                    report.oversized = Some(format!(
                        "bucket of {max} items exceeds 2ζ = {:.2}",
                        2.0 * self.round.zeta.value()
                    ));
                }
                if let Some(c) = self.round.cursor {
                    if !self.buckets.is_live(c) {
                        report.fail("scan cursor points at a dead bucket");
                    }
                }
                if let Some(job) = &self.round.merge {
                    if !self.buckets.is_live(job.target)
                        || self.buckets.state(job.target) != BucketState::Absorbing
                    {
                        report.fail("active merge target is not absorbing");
                    }
                }
            }
        }
        report
    }
}
