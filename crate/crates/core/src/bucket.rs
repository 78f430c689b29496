//! Buckets: unordered item lists chained in key order, plus the resumable
//! split and merge jobs that advance by a bounded amount of work per call.
//!
//! Items live in one shared pool of singly linked nodes, so appending,
//! popping the head and splicing whole lists are all constant time.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::arena::Arena;
use crate::params::{Epsilon, Zeta};
use crate::select::Selector;
use crate::tree::{NodeId, Tree};

/// Handle to a live bucket.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketId(u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum BucketState {
    Normal,
    Splitting,
    /// Target of a merge in progress.
    Absorbing,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SplitPhase {
    Reserve,
    SelectPivot,
    Partition,
    DrainSetAside,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("{0:?} is not a live bucket")]
    Dead(BucketId),
    #[error("{0:?} is already splitting")]
    AlreadySplitting(BucketId),
    #[error("{id:?} is {state:?}, expected {expected:?}")]
    WrongState {
        id: BucketId,
        state: BucketState,
        expected: BucketState,
    },
    #[error("{id:?} holds {size} items, not above the split threshold")]
    BelowThreshold { id: BucketId, size: usize },
    #[error("{0:?} is empty")]
    Empty(BucketId),
}

#[derive(Debug, Clone)]
struct ItemNode<T> {
    value: T,
    next: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ItemList {
    head: Option<u32>,
    tail: Option<u32>,
    len: usize,
}

#[derive(Debug, Clone)]
struct Pool<T> {
    nodes: Arena<ItemNode<T>>,
}

impl<T> Pool<T> {
    fn push(&mut self, list: &mut ItemList, value: T) {
        let idx = self.nodes.insert(ItemNode { value, next: None });
        self.link(list, idx);
    }

    fn link(&mut self, list: &mut ItemList, idx: u32) {
        self.nodes[idx].next = None;
        match list.tail {
            Some(t) => self.nodes[t].next = Some(idx),
            None => list.head = Some(idx),
        }
        list.tail = Some(idx);
        list.len += 1;
    }

    fn unlink_head(&mut self, list: &mut ItemList) -> Option<u32> {
        let h = list.head?;
        list.head = self.nodes[h].next;
        if list.head.is_none() {
            list.tail = None;
        }
        list.len -= 1;
        Some(h)
    }

    fn pop(&mut self, list: &mut ItemList) -> Option<T> {
        self.unlink_head(list).map(|i| self.nodes.remove(i).value)
    }

    /// Splice `other` onto the tail of `list`. `other` must not be used again.
    fn append(&mut self, list: &mut ItemList, other: ItemList) {
        if other.len == 0 {
            return;
        }
        match list.tail {
            Some(t) => self.nodes[t].next = other.head,
            None => list.head = other.head,
        }
        list.tail = other.tail;
        list.len += other.len;
    }

    fn iter<'a>(&'a self, list: &ItemList) -> impl Iterator<Item = &'a T> + 'a {
        let mut cur = list.head;
        std::iter::from_fn(move || {
            let idx = cur?;
            let node = &self.nodes[idx];
            cur = node.next;
            Some(&node.value)
        })
    }
}

/// Outcome summary of one finished split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub m0: usize,
    pub set_aside: usize,
    pub frozen: usize,
    /// Calls to `split_work` that advanced the job.
    pub calls: u64,
    pub units: u64,
    /// Largest bucket size observed while the job was live.
    pub peak: usize,
    pub left: usize,
    pub right: usize,
    pub inserted_left: usize,
    pub inserted_right: usize,
    pub fallbacks: u64,
    pub origin: Zeta,
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
struct SplitJob<T> {
    phase: SplitPhase,
    origin: Zeta,
    m0: usize,
    reserve_target: usize,
    visited: usize,
    /// Items not yet visited by the Reserve pass.
    pending: ItemList,
    reserved: ItemList,
    /// Insertions that arrived before the pivot was known.
    inserted: ItemList,
    frozen: ItemList,
    left: ItemList,
    right: ItemList,
    scratch: Vec<T>,
    selector: Option<Selector<T>>,
    pivot: Option<T>,
    calls: u64,
    units: u64,
    peak: usize,
    inserted_left: usize,
    inserted_right: usize,
    fallbacks: u64,
}

impl<T> SplitJob<T> {
    fn len(&self) -> usize {
        self.pending.len
            + self.reserved.len
            + self.inserted.len
            + self.frozen.len
            + self.left.len
            + self.right.len
    }
}

#[derive(Debug, Clone)]
enum State<T> {
    Normal,
    Splitting(Box<SplitJob<T>>),
    Absorbing,
}

#[derive(Debug, Clone)]
struct Bucket<T> {
    /// Empty while splitting; the job owns the items then.
    items: ItemList,
    size: usize,
    prev: Option<BucketId>,
    next: Option<BucketId>,
    state: State<T>,
    leaf: Option<NodeId>,
    /// Set after a degenerate split: no re-designation at this size.
    exempt_at: Option<usize>,
}

impl<T> Bucket<T> {
    fn state(&self) -> BucketState {
        match self.state {
            State::Normal => BucketState::Normal,
            State::Splitting(_) => BucketState::Splitting,
            State::Absorbing => BucketState::Absorbing,
        }
    }
}

/// Result of one `split_work` call.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitStep<T> {
    Progress { units: u64 },
    Complete { units: u64, split: SplitDone<T> },
}

/// A finished split. On a real split the original bucket keeps the left part
/// and `right` is a new bucket linked after it, still without a tree leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDone<T> {
    /// Absent only when no item was left to select from.
    pub pivot: Option<T>,
    pub left: BucketId,
    pub right: Option<BucketId>,
    pub report: SplitReport,
}

/// An in-progress merge into `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeJob {
    pub target: BucketId,
    pub absorbed: usize,
    pub calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeStep {
    Progress { absorbed: usize },
    Complete { absorbed: usize, aborted: bool },
}

/// All buckets, their items and the left-to-right chain.
#[derive(Debug, Clone)]
pub struct Buckets<T> {
    pool: Pool<T>,
    buckets: Arena<Bucket<T>>,
    head: Option<BucketId>,
    tail: Option<BucketId>,
    splitting: usize,
    /// Multiset of bucket sizes, for constant-time maximum queries.
    sizes: BTreeMap<usize, usize>,
    fallbacks: u64,
}

impl<T> Default for Buckets<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Buckets<T> {
    pub fn new() -> Self {
        Self {
            pool: Pool {
                nodes: Arena::new(),
            },
            buckets: Arena::new(),
            head: None,
            tail: None,
            splitting: 0,
            sizes: BTreeMap::new(),
            fallbacks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.len() == 0
    }

    /// Number of buckets with a live split job.
    pub fn splitting_count(&self) -> usize {
        self.splitting
    }

    /// Deletions served outside the set-aside since creation.
    pub fn fallback_activations(&self) -> u64 {
        self.fallbacks
    }

    pub fn max_size(&self) -> usize {
        self.sizes.keys().next_back().copied().unwrap_or(0)
    }

    pub fn head(&self) -> Option<BucketId> {
        self.head
    }

    pub fn tail(&self) -> Option<BucketId> {
        self.tail
    }

    pub fn is_live(&self, id: BucketId) -> bool {
        self.buckets.contains(id.0)
    }

    fn get(&self, id: BucketId) -> Result<&Bucket<T>, EngineError> {
        self.buckets.get(id.0).ok_or(EngineError::Dead(id))
    }

    pub fn size(&self, id: BucketId) -> usize {
        self.buckets[id.0].size
    }

    pub fn state(&self, id: BucketId) -> BucketState {
        self.buckets[id.0].state()
    }

    pub fn next(&self, id: BucketId) -> Option<BucketId> {
        self.buckets[id.0].next
    }

    pub fn prev(&self, id: BucketId) -> Option<BucketId> {
        self.buckets[id.0].prev
    }

    /// Tree leaf of the bucket. Panics if none was attached yet.
    pub fn leaf(&self, id: BucketId) -> NodeId {
        self.buckets[id.0].leaf.expect("bucket has no tree leaf")
    }

    pub fn leaf_opt(&self, id: BucketId) -> Option<NodeId> {
        self.buckets[id.0].leaf
    }

    pub fn set_leaf(&mut self, id: BucketId, leaf: NodeId) {
        self.buckets[id.0].leaf = Some(leaf);
    }

    pub fn split_phase(&self, id: BucketId) -> Option<SplitPhase> {
        match &self.buckets[id.0].state {
            State::Splitting(job) => Some(job.phase),
            _ => None,
        }
    }

    /// Buckets in chain order.
    pub fn ids(&self) -> impl Iterator<Item = BucketId> + '_ {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            let id = cur?;
            cur = self.buckets[id.0].next;
            Some(id)
        })
    }

    /// Every item of the bucket, in no particular order.
    pub fn items(&self, id: BucketId) -> Vec<&T> {
        let b = &self.buckets[id.0];
        match &b.state {
            State::Splitting(job) => [
                &job.pending,
                &job.reserved,
                &job.inserted,
                &job.frozen,
                &job.left,
                &job.right,
            ]
            .into_iter()
            .flat_map(|l| self.pool.iter(l))
            .collect(),
            _ => self.pool.iter(&b.items).collect(),
        }
    }

    /// Total number of item nodes held in the pool.
    pub fn pooled_items(&self) -> usize {
        self.pool.nodes.len()
    }

    fn count_size(&mut self, size: usize) {
        *self.sizes.entry(size).or_default() += 1;
    }

    fn uncount_size(&mut self, size: usize) {
        match self.sizes.get_mut(&size) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                self.sizes.remove(&size);
            }
            None => debug_assert!(false, "size {size} missing from census"),
        }
    }

    fn set_size(&mut self, id: BucketId, size: usize) {
        let old = self.buckets[id.0].size;
        if old != size {
            self.uncount_size(old);
            self.count_size(size);
            self.buckets[id.0].size = size;
        }
    }

    fn alloc(&mut self, items: ItemList) -> BucketId {
        let id = BucketId(self.buckets.insert(Bucket {
            items,
            size: items.len,
            prev: None,
            next: None,
            state: State::Normal,
            leaf: None,
            exempt_at: None,
        }));
        self.count_size(items.len);
        id
    }

    fn link_after(&mut self, at: Option<BucketId>, id: BucketId) {
        let next = match at {
            Some(a) => self.buckets[a.0].next,
            None => self.head,
        };
        self.buckets[id.0].prev = at;
        self.buckets[id.0].next = next;
        match at {
            Some(a) => self.buckets[a.0].next = Some(id),
            None => self.head = Some(id),
        }
        match next {
            Some(n) => self.buckets[n.0].prev = Some(id),
            None => self.tail = Some(id),
        }
    }

    fn unlink(&mut self, id: BucketId) {
        let (prev, next) = (self.buckets[id.0].prev, self.buckets[id.0].next);
        match prev {
            Some(p) => self.buckets[p.0].next = next,
            None => self.head = next,
        }
        match next {
            Some(n) => self.buckets[n.0].prev = prev,
            None => self.tail = prev,
        }
    }

    /// Append a Normal bucket holding `items` at the end of the chain.
    pub fn push_back(&mut self, items: impl IntoIterator<Item = T>) -> BucketId {
        let mut list = ItemList::default();
        for item in items {
            self.pool.push(&mut list, item);
        }
        let id = self.alloc(list);
        self.link_after(self.tail, id);
        id
    }

    /// New Normal bucket holding one item, linked before `at` (or as the only
    /// bucket when the chain is empty).
    pub fn insert_singleton_before(&mut self, at: Option<BucketId>, item: T) -> BucketId {
        let mut list = ItemList::default();
        self.pool.push(&mut list, item);
        let id = self.alloc(list);
        let prev = at.and_then(|a| self.buckets[a.0].prev);
        match at {
            Some(_) => self.link_after(prev, id),
            None => self.link_after(self.tail, id),
        }
        id
    }

    /// New Normal bucket holding one item, linked after `at`.
    pub fn insert_singleton_after(&mut self, at: BucketId, item: T) -> BucketId {
        let mut list = ItemList::default();
        self.pool.push(&mut list, item);
        let id = self.alloc(list);
        self.link_after(Some(at), id);
        id
    }

    /// Unlink and free an empty bucket, dropping any job it carries.
    pub fn remove_empty(&mut self, id: BucketId) -> Result<(), EngineError> {
        let b = self.get(id)?;
        if b.size != 0 {
            return Err(EngineError::WrongState {
                id,
                state: b.state(),
                expected: BucketState::Normal,
            });
        }
        if matches!(b.state, State::Splitting(_)) {
            self.splitting -= 1;
        }
        self.unlink(id);
        self.uncount_size(0);
        self.buckets.remove(id.0);
        Ok(())
    }

    /// Remove every bucket and return all items in chain order of buckets.
    pub fn drain_all(&mut self) -> Vec<Vec<T>> {
        let ids: Vec<_> = self.ids().collect();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let b = self.buckets.remove(id.0);
            let mut lists = match b.state {
                State::Splitting(job) => vec![
                    job.pending,
                    job.reserved,
                    job.inserted,
                    job.frozen,
                    job.left,
                    job.right,
                ],
                _ => vec![b.items],
            };
            let mut items = Vec::with_capacity(b.size);
            for l in &mut lists {
                while let Some(v) = self.pool.pop(l) {
                    items.push(v);
                }
            }
            out.push(items);
        }
        self.head = None;
        self.tail = None;
        self.splitting = 0;
        self.sizes.clear();
        out
    }

    /// Whether `id` may be designated for splitting: Normal, above
    /// `scale·(5/3)·ζ`, and not exempt at its current size.
    pub fn is_split_candidate(&self, id: BucketId, zeta: Zeta, scale: u32) -> bool {
        let b = &self.buckets[id.0];
        matches!(b.state, State::Normal)
            && zeta.exceeds_split_scaled(b.size, scale)
            && b.exempt_at != Some(b.size)
    }

    /// Whether `id` is Normal and can absorb its successor within ζ.
    pub fn can_absorb_next(&self, id: BucketId, zeta: Zeta) -> bool {
        let b = &self.buckets[id.0];
        let Some(n) = b.next else { return false };
        let nb = &self.buckets[n.0];
        matches!(nb.state, State::Normal) && zeta.within_merge(b.size + nb.size)
    }

    /// Maximal run `[start, start.next, …]` of consecutive Normal buckets whose
    /// combined size stays within ζ. Always contains `start`.
    pub fn merge_run_extent(&self, start: BucketId, zeta: Zeta) -> Vec<BucketId> {
        let mut run = vec![start];
        let mut total = self.buckets[start.0].size;
        let mut cur = self.buckets[start.0].next;
        while let Some(id) = cur {
            let b = &self.buckets[id.0];
            if !matches!(b.state, State::Normal) || !zeta.within_merge(total + b.size) {
                break;
            }
            total += b.size;
            run.push(id);
            cur = b.next;
        }
        run
    }
}

impl<T: Ord + Clone> Buckets<T> {
    /// Add one item. Normal buckets append; a splitting bucket parks it with
    /// the set-aside until the pivot is known, then routes it directly.
    pub fn serve_insert(&mut self, id: BucketId, item: T) {
        let b = &mut self.buckets[id.0];
        let new_size = b.size + 1;
        match &mut b.state {
            State::Splitting(job) => {
                match &job.pivot {
                    None => self.pool.push(&mut job.inserted, item),
                    Some(p) if item <= *p => {
                        self.pool.push(&mut job.left, item);
                        job.inserted_left += 1;
                    }
                    Some(_) => {
                        self.pool.push(&mut job.right, item);
                        job.inserted_right += 1;
                    }
                }
                job.peak = job.peak.max(new_size);
            }
            _ => self.pool.push(&mut b.items, item),
        }
        self.set_size(id, new_size);
    }

    /// Remove and return one item of the bucket: the list head, or for a
    /// splitting bucket the set-aside head, falling back to frozen, left and
    /// right heads when the set-aside has run dry.
    pub fn serve_delete_any(&mut self, id: BucketId) -> Result<T, EngineError> {
        let b = self.buckets.get_mut(id.0).ok_or(EngineError::Dead(id))?;
        if b.size == 0 {
            return Err(EngineError::Empty(id));
        }
        let new_size = b.size - 1;
        let item = match &mut b.state {
            State::Splitting(job) => {
                let job = job.as_mut();
                let regular = self
                    .pool
                    .pop(&mut job.reserved)
                    .or_else(|| self.pool.pop(&mut job.inserted))
                    .or_else(|| self.pool.pop(&mut job.pending));
                match regular {
                    Some(v) => v,
                    None => {
                        job.fallbacks += 1;
                        self.fallbacks += 1;
                        self.pool
                            .pop(&mut job.frozen)
                            .or_else(|| self.pool.pop(&mut job.left))
                            .or_else(|| self.pool.pop(&mut job.right))
                            .expect("splitting bucket size out of sync with its lists")
                    }
                }
            }
            _ => self
                .pool
                .pop(&mut b.items)
                .expect("bucket size out of sync with its list"),
        };
        self.set_size(id, new_size);
        Ok(item)
    }

    /// Start splitting `id`. Constant time: the set-aside is carved out
    /// incrementally by the first phase of `split_work`.
    pub fn designate_split(
        &mut self,
        id: BucketId,
        zeta: Zeta,
        eps: Epsilon,
    ) -> Result<(), EngineError> {
        let b = self.buckets.get_mut(id.0).ok_or(EngineError::Dead(id))?;
        match b.state {
            State::Normal => {}
            State::Splitting(_) => return Err(EngineError::AlreadySplitting(id)),
            State::Absorbing => {
                return Err(EngineError::WrongState {
                    id,
                    state: BucketState::Absorbing,
                    expected: BucketState::Normal,
                })
            }
        }
        if !zeta.exceeds_split(b.size) {
            return Err(EngineError::BelowThreshold { id, size: b.size });
        }
        let m0 = b.size;
        let pending = std::mem::take(&mut b.items);
        b.exempt_at = None;
        b.state = State::Splitting(Box::new(SplitJob {
            phase: SplitPhase::Reserve,
            origin: zeta,
            m0,
            reserve_target: eps.reserve_for(m0),
            visited: 0,
            pending,
            reserved: ItemList::default(),
            inserted: ItemList::default(),
            frozen: ItemList::default(),
            left: ItemList::default(),
            right: ItemList::default(),
            scratch: Vec::with_capacity(m0 - eps.reserve_for(m0)),
            selector: None,
            pivot: None,
            calls: 0,
            units: 0,
            peak: m0,
            inserted_left: 0,
            inserted_right: 0,
            fallbacks: 0,
        }));
        self.splitting += 1;
        Ok(())
    }

    /// Advance the split of `id` by about `budget` work units (one unit per
    /// element touched or item moved; may overshoot by a small constant).
    pub fn split_work(&mut self, id: BucketId, budget: u64) -> Result<SplitStep<T>, EngineError> {
        let b = self.buckets.get_mut(id.0).ok_or(EngineError::Dead(id))?;
        let State::Splitting(job) = &mut b.state else {
            return Err(EngineError::WrongState {
                id,
                state: b.state(),
                expected: BucketState::Splitting,
            });
        };
        let job = job.as_mut();
        let pool = &mut self.pool;
        let budget = budget.max(1);
        let mut used = 0u64;
        let mut finished = false;
        while used < budget && !finished {
            match job.phase {
                SplitPhase::Reserve => match pool.unlink_head(&mut job.pending) {
                    Some(idx) => {
                        // spread the reserved picks evenly over the pass
                        let v = job.visited as u128;
                        let (r, m) = (job.reserve_target as u128, job.m0 as u128);
                        if (v + 1) * r / m > v * r / m {
                            pool.link(&mut job.reserved, idx);
                        } else {
                            job.scratch.push(pool.nodes[idx].value.clone());
                            pool.link(&mut job.frozen, idx);
                        }
                        job.visited += 1;
                        used += 1;
                    }
                    None => {
                        if job.scratch.is_empty() {
                            finished = true;
                        } else {
                            let data = std::mem::take(&mut job.scratch);
                            let target = (data.len() - 1) / 2;
                            job.selector = Some(Selector::new(data, target));
                            job.phase = SplitPhase::SelectPivot;
                        }
                    }
                },
                SplitPhase::SelectPivot => {
                    let sel = job.selector.as_mut().expect("selection state present");
                    used += sel.step(budget - used);
                    if sel.is_done() {
                        let sel = job.selector.take().expect("selection state present");
                        job.pivot = sel.into_result();
                        job.phase = SplitPhase::Partition;
                    }
                }
                SplitPhase::Partition => {
                    let pivot = job.pivot.as_ref().expect("pivot known");
                    match pool.unlink_head(&mut job.frozen) {
                        Some(idx) => {
                            if pool.nodes[idx].value <= *pivot {
                                pool.link(&mut job.left, idx);
                            } else {
                                pool.link(&mut job.right, idx);
                            }
                            used += 1;
                        }
                        None => job.phase = SplitPhase::DrainSetAside,
                    }
                }
                SplitPhase::DrainSetAside => {
                    let pivot = job.pivot.as_ref().expect("pivot known");
                    let (idx, from_insert) = match pool.unlink_head(&mut job.reserved) {
                        Some(idx) => (idx, false),
                        None => match pool.unlink_head(&mut job.inserted) {
                            Some(idx) => (idx, true),
                            None => {
                                finished = true;
                                continue;
                            }
                        },
                    };
                    if pool.nodes[idx].value <= *pivot {
                        pool.link(&mut job.left, idx);
                        job.inserted_left += from_insert as usize;
                    } else {
                        pool.link(&mut job.right, idx);
                        job.inserted_right += from_insert as usize;
                    }
                    used += 1;
                }
            }
        }
        job.calls += 1;
        job.units += used;
        if !finished {
            return Ok(SplitStep::Progress { units: used });
        }
        let split = self.finish_split(id);
        Ok(SplitStep::Complete { units: used, split })
    }

    fn finish_split(&mut self, id: BucketId) -> SplitDone<T> {
        let b = &mut self.buckets[id.0];
        let State::Splitting(job) = std::mem::replace(&mut b.state, State::Normal) else {
            unreachable!("finishing a split on a non-splitting bucket");
        };
        self.splitting -= 1;
        let mut job = *job;
        debug_assert_eq!(job.len(), b.size);
        let degenerate = job.left.len == 0 || job.right.len == 0;
        let report = SplitReport {
            m0: job.m0,
            set_aside: job.reserve_target,
            frozen: job.m0 - job.reserve_target,
            calls: job.calls,
            units: job.units,
            peak: job.peak,
            left: job.left.len,
            right: job.right.len,
            inserted_left: job.inserted_left,
            inserted_right: job.inserted_right,
            fallbacks: job.fallbacks,
            origin: job.origin,
            degenerate,
        };
        if degenerate {
            // everything back into one list; the remaining lists are all
            // empty except possibly left/right (or the set-aside lists when
            // nothing was left to select from)
            let mut items = ItemList::default();
            for l in [
                &mut job.pending,
                &mut job.reserved,
                &mut job.inserted,
                &mut job.frozen,
                &mut job.left,
                &mut job.right,
            ] {
                self.pool.append(&mut items, std::mem::take(l));
            }
            let b = &mut self.buckets[id.0];
            b.items = items;
            b.exempt_at = Some(b.size);
            return SplitDone {
                pivot: job.pivot,
                left: id,
                right: None,
                report,
            };
        }
        self.buckets[id.0].items = job.left;
        self.set_size(id, job.left.len);
        let right = self.alloc(job.right);
        self.link_after(Some(id), right);
        SplitDone {
            pivot: job.pivot,
            left: id,
            right: Some(right),
            report,
        }
    }

    /// Mark `target` as absorbing its successors.
    pub fn start_merge(&mut self, target: BucketId) -> Result<MergeJob, EngineError> {
        let b = self
            .buckets
            .get_mut(target.0)
            .ok_or(EngineError::Dead(target))?;
        if !matches!(b.state, State::Normal) {
            return Err(EngineError::WrongState {
                id: target,
                state: b.state(),
                expected: BucketState::Normal,
            });
        }
        b.state = State::Absorbing;
        Ok(MergeJob {
            target,
            absorbed: 0,
            calls: 0,
        })
    }

    /// Absorb up to `max_absorb` successors of the job's target, each only if
    /// it is Normal and the combined size stays within ζ. The absorbed
    /// bucket's leaf is removed and its key interval handed to the target.
    /// Completes when the next successor does not qualify; aborts if the
    /// target is no longer absorbing.
    pub fn merge_work<K: Clone>(
        &mut self,
        job: &mut MergeJob,
        zeta: Zeta,
        max_absorb: usize,
        tree: &mut Tree<K, BucketId>,
    ) -> MergeStep {
        let target = job.target;
        if !self.is_live(target) || !matches!(self.buckets[target.0].state, State::Absorbing) {
            return MergeStep::Complete {
                absorbed: 0,
                aborted: true,
            };
        }
        job.calls += 1;
        let mut absorbed = 0;
        while absorbed < max_absorb.max(1) {
            if !self.can_absorb_next(target, zeta) {
                self.buckets[target.0].state = State::Normal;
                job.absorbed += absorbed;
                return MergeStep::Complete {
                    absorbed,
                    aborted: false,
                };
            }
            let next = self.buckets[target.0].next.expect("successor exists");
            let moved = self.buckets[next.0].size;
            let next_leaf = self.buckets[next.0]
                .leaf
                .expect("absorbed bucket has a leaf");
            let target_leaf = self.buckets[target.0].leaf.expect("target has a leaf");
            tree.remove_leaf_into_prev(next_leaf);
            tree.adjust_size(target_leaf, moved as isize)
                .expect("growing a leaf cannot underflow");
            let items = std::mem::take(&mut self.buckets[next.0].items);
            self.pool.append(&mut self.buckets[target.0].items, items);
            self.unlink(next);
            self.uncount_size(moved);
            self.buckets.remove(next.0);
            let grown = self.buckets[target.0].size + moved;
            self.set_size(target, grown);
            absorbed += 1;
        }
        job.absorbed += absorbed;
        MergeStep::Progress { absorbed }
    }

    /// Return an absorbing target to Normal without further absorption.
    pub fn cancel_merge(&mut self, job: &MergeJob) {
        if let Some(b) = self.buckets.get_mut(job.target.0) {
            if matches!(b.state, State::Absorbing) {
                b.state = State::Normal;
            }
        }
    }

    /// Check list lengths, sizes and split-job partition invariants of one
    /// bucket. Returns a description of the first problem found.
    pub fn check_bucket(&self, id: BucketId) -> Result<(), String> {
        let b = self.get(id).map_err(|e| e.to_string())?;
        match &b.state {
            State::Splitting(job) => {
                if b.items.len != 0 {
                    return Err(format!("{id:?} splitting but holds a plain list"));
                }
                if job.len() != b.size {
                    return Err(format!(
                        "{id:?} job lists hold {} items, size says {}",
                        job.len(),
                        b.size
                    ));
                }
                let lists = [
                    job.pending,
                    job.reserved,
                    job.inserted,
                    job.frozen,
                    job.left,
                    job.right,
                ];
                for l in &lists {
                    let walked = self.pool.iter(l).count();
                    if walked != l.len {
                        return Err(format!("{id:?} job list walks {walked}, stores {}", l.len));
                    }
                }
                if let Some(p) = &job.pivot {
                    if self.pool.iter(&job.left).any(|v| v > p) {
                        return Err(format!("{id:?} left part holds an item above the pivot"));
                    }
                    if self.pool.iter(&job.right).any(|v| v <= p) {
                        return Err(format!(
                            "{id:?} right part holds an item at or below the pivot"
                        ));
                    }
                }
            }
            _ => {
                let walked = self.pool.iter(&b.items).count();
                if walked != b.items.len || walked != b.size {
                    return Err(format!(
                        "{id:?} list walks {walked}, stores {}, size {}",
                        b.items.len, b.size
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<i64>) -> Vec<i64> {
        v.sort_unstable();
        v
    }

    fn items_of(b: &Buckets<i64>, id: BucketId) -> Vec<i64> {
        sorted(b.items(id).into_iter().copied().collect())
    }

    fn job(b: &Buckets<i64>, id: BucketId) -> &SplitJob<i64> {
        match &b.buckets[id.0].state {
            State::Splitting(j) => j,
            _ => panic!("not splitting"),
        }
    }

    fn job_mut(b: &mut Buckets<i64>, id: BucketId) -> &mut SplitJob<i64> {
        match &mut b.buckets[id.0].state {
            State::Splitting(j) => j,
            _ => panic!("not splitting"),
        }
    }

    fn list(b: &Buckets<i64>, l: &ItemList) -> Vec<i64> {
        b.pool.iter(l).copied().collect()
    }

    /// Run the split to completion with the given per-call budget.
    fn run_split(b: &mut Buckets<i64>, id: BucketId, budget: u64) -> SplitDone<i64> {
        loop {
            if let SplitStep::Complete { split, .. } = b.split_work(id, budget).unwrap() {
                return split;
            }
        }
    }

    /// Advance until the Reserve pass has visited every item, stopping
    /// before the pivot search starts.
    fn finish_reserve(b: &mut Buckets<i64>, id: BucketId) {
        while job(b, id).pending.len > 0 {
            b.split_work(id, 1).unwrap();
        }
    }

    #[test]
    fn normal_insert_and_delete_use_the_head() {
        let mut b = Buckets::new();
        let id = b.push_back([5, 2]);
        b.serve_insert(id, 9);
        assert_eq!(list(&b, &b.buckets[id.0].items), vec![5, 2, 9]);
        assert_eq!(b.serve_delete_any(id), Ok(5));
        assert_eq!(list(&b, &b.buckets[id.0].items), vec![2, 9]);
        assert_eq!(b.size(id), 2);
    }

    #[test]
    fn designation_threshold_and_guard() {
        let mut b = Buckets::new();
        let zeta = Zeta::new(120, 1); // ζ = 20
        let small = b.push_back(0..33);
        assert_eq!(
            b.designate_split(small, zeta, Epsilon::new(1, 2)),
            Err(EngineError::BelowThreshold {
                id: small,
                size: 33
            })
        );
        let id = b.push_back(0..34);
        b.designate_split(id, zeta, Epsilon::new(1, 2)).unwrap();
        assert_eq!(
            b.designate_split(id, zeta, Epsilon::new(1, 2)),
            Err(EngineError::AlreadySplitting(id))
        );
        assert_eq!(b.state(id), BucketState::Splitting);
        assert_eq!(b.splitting_count(), 1);
    }

    #[test]
    fn set_aside_and_frozen_sizes() {
        let mut b = Buckets::new();
        let id = b.push_back(0..120);
        b.designate_split(id, Zeta::new(6, 1), Epsilon::new(1, 16))
            .unwrap();
        finish_reserve(&mut b, id);
        let j = job(&b, id);
        assert_eq!(j.reserved.len, 8);
        assert_eq!(j.frozen.len, 112);
        assert_eq!(j.visited, 120);
    }

    #[test]
    fn split_of_120_with_small_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut keys: Vec<i64> = (0..120).collect();
        for i in (1..keys.len()).rev() {
            keys.swap(i, rng.random_range(0..=i));
        }
        let mut b = Buckets::new();
        let id = b.push_back(keys);
        let eps = Epsilon::new(1, 16);
        b.designate_split(id, Zeta::new(6, 1), eps).unwrap();
        let done = run_split(&mut b, id, 16);
        let r = &done.report;
        assert!(!r.degenerate);
        // (1/2 + 1/16)·120 = 67.5
        assert!(r.left <= 67 && r.right <= 67, "{r:?}");
        assert_eq!(r.left + r.right, 120);
        // frozen median of 112 distinct keys has rank 56 among them
        let right = done.right.unwrap();
        let pivot = done.pivot.unwrap();
        assert!(items_of(&b, id).iter().all(|&v| v <= pivot));
        assert!(items_of(&b, right).iter().all(|&v| v > pivot));
        // units: Reserve visits 120, selection ≤ 5.3·112 for this input,
        // partition 112, drain 8
        assert!(r.units <= 120 + 112 * 6 + 112 + 8, "{r:?}");
        assert_eq!(b.next(id), Some(right));
        assert_eq!(b.prev(right), Some(id));
        assert_eq!(b.state(id), BucketState::Normal);
        assert_eq!(b.splitting_count(), 0);
    }

    #[test]
    fn mid_split_insert_parks_with_set_aside() {
        let mut b = Buckets::new();
        let id = b.push_back([1, 2, 3, 7]);
        b.designate_split(id, Zeta::new(6, 1), Epsilon::new(1, 4))
            .unwrap();
        // r = ⌈4/4⌉ = 1 reserved item, picked at the last slot of the pass
        assert_eq!(b.split_work(id, 4), Ok(SplitStep::Progress { units: 4 }));
        assert_eq!(list(&b, &job(&b, id).reserved), vec![7]);
        b.serve_insert(id, 4);
        let j = job(&b, id);
        let set_aside: Vec<_> = list(&b, &j.reserved)
            .into_iter()
            .chain(list(&b, &j.inserted))
            .collect();
        assert_eq!(set_aside, vec![7, 4]);
        assert_eq!(b.size(id), 5);
    }

    #[test]
    fn mid_split_deletes_use_set_aside_then_fall_back() {
        let mut b = Buckets::new();
        let id = b.push_back([1, 9, 2, 8, 3]);
        b.designate_split(id, Zeta::new(6, 1), Epsilon::new(2, 5))
            .unwrap();
        finish_reserve(&mut b, id);
        // r = 2: the third and fifth slots of the pass
        assert_eq!(list(&b, &job(&b, id).reserved), vec![2, 3]);
        assert_eq!(list(&b, &job(&b, id).frozen), vec![1, 9, 8]);
        assert_eq!(b.serve_delete_any(id), Ok(2));
        b.serve_insert(id, 5);
        assert_eq!(b.serve_delete_any(id), Ok(3));
        assert_eq!(b.serve_delete_any(id), Ok(5));
        assert_eq!(b.fallback_activations(), 0);
        assert_eq!(b.serve_delete_any(id), Ok(1));
        assert_eq!(b.fallback_activations(), 1);
        assert_eq!(job(&b, id).fallbacks, 1);
        // the pivot is still the median of the frozen snapshot [1, 9, 8]
        let done = run_split(&mut b, id, 100);
        assert_eq!(done.pivot, Some(8));
        assert_eq!(items_of(&b, id), vec![8]);
        assert_eq!(items_of(&b, done.right.unwrap()), vec![9]);
    }

    #[test]
    fn fallback_order_frozen_then_left_then_right() {
        let mut b = Buckets::new();
        let id = b.push_back([1, 8]);
        b.designate_split(id, Zeta::new(1, 1), Epsilon::new(1, 2))
            .unwrap();
        {
            // set-aside empty, frozen [1, 8]
            let j = job_mut(&mut b, id);
            let pending = std::mem::take(&mut j.pending);
            j.frozen = pending;
            j.phase = SplitPhase::Partition;
            j.pivot = Some(1);
        }
        assert_eq!(b.serve_delete_any(id), Ok(1));
        b.split_work(id, 1).unwrap(); // 8 moves to the right part
        b.serve_insert(id, 0); // pivot known: routed left
        assert_eq!(b.serve_delete_any(id), Ok(0));
        assert_eq!(b.serve_delete_any(id), Ok(8));
        assert_eq!(b.fallback_activations(), 3);
        assert_eq!(b.size(id), 0);
    }

    #[test]
    fn all_equal_keys_split_degenerately() {
        let mut b = Buckets::new();
        let id = b.push_back(vec![4i64; 50]);
        b.designate_split(id, Zeta::new(6, 1), Epsilon::new(1, 2))
            .unwrap();
        let done = run_split(&mut b, id, 16);
        assert!(done.report.degenerate);
        assert_eq!(done.right, None);
        assert_eq!(done.report.left, 50);
        assert_eq!(b.size(id), 50);
        assert_eq!(b.len(), 1);
        assert_eq!(b.state(id), BucketState::Normal);
        // exempt until the size changes
        assert!(!b.is_split_candidate(id, Zeta::new(6, 1), 1));
        b.serve_insert(id, 4);
        assert!(b.is_split_candidate(id, Zeta::new(6, 1), 1));
        b.check_bucket(id).unwrap();
    }

    #[test]
    fn split_calls_fit_the_epsilon_bound() {
        // B = 16, ε = 1/2: the split must finish within ⌈m0/2⌉ calls even
        // when every call is accompanied by an insertion into the bucket
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m0 in [10usize, 34, 100, 1000, 5000] {
            let mut b = Buckets::new();
            let id = b.push_back((0..m0).map(|_| rng.random_range(0..1_000_000i64)));
            let eps = Epsilon::for_budget(16);
            b.designate_split(id, Zeta::new(1, 1), eps).unwrap();
            let mut calls = 0;
            let done = loop {
                b.serve_insert(id, rng.random_range(0..1_000_000));
                calls += 1;
                if let SplitStep::Complete { split, .. } = b.split_work(id, 16).unwrap() {
                    break split;
                }
            };
            assert!(calls <= eps.ceil_of(m0), "m0 {m0}: {calls} calls");
            let r = done.report;
            assert!(eps.within_one_plus(r.peak, m0));
            assert!(eps.within_half_plus(r.left, m0, r.inserted_left));
            assert!(eps.within_half_plus(r.right, m0, r.inserted_right));
            assert_eq!(r.fallbacks, 0);
        }
    }

    #[test]
    fn merge_extent_examples() {
        let zeta = Zeta::new(84, 1); // ζ = 14
        let mut b = Buckets::new();
        let ids: Vec<_> = [4usize, 3, 6, 9]
            .iter()
            .map(|&s| b.push_back(vec![0i64; s]))
            .collect();
        assert_eq!(b.merge_run_extent(ids[0], zeta), ids[..3].to_vec());

        let mut b = Buckets::new();
        let big = b.push_back(vec![0i64; 15]);
        b.push_back(vec![0i64; 1]);
        assert_eq!(b.merge_run_extent(big, zeta), vec![big]);

        let mut b = Buckets::new();
        let first = b.push_back(vec![0i64; 2]);
        let second = b.push_back(0..30i64);
        b.push_back(vec![0i64; 1]);
        b.designate_split(second, Zeta::new(6, 1), Epsilon::new(1, 2))
            .unwrap();
        assert_eq!(b.merge_run_extent(first, zeta), vec![first]);
    }

    fn chain_with_tree(sizes: &[usize]) -> (Buckets<i64>, Tree<i64, BucketId>, Vec<BucketId>) {
        let mut b = Buckets::new();
        let mut entries = Vec::new();
        let mut key = 0i64;
        for &s in sizes {
            let items: Vec<i64> = (key..key + s as i64).collect();
            key += s as i64;
            let id = b.push_back(items);
            entries.push((id, s, key - 1));
        }
        let (tree, leaves) = Tree::build(&entries).unwrap();
        let ids: Vec<_> = entries.iter().map(|e| e.0).collect();
        for (id, leaf) in ids.iter().zip(leaves) {
            b.set_leaf(*id, leaf);
        }
        (b, tree, ids)
    }

    #[test]
    fn merge_one_per_call() {
        let (mut b, mut tree, ids) = chain_with_tree(&[4, 3, 6]);
        let zeta = Zeta::new(84, 1);
        let mut job = b.start_merge(ids[0]).unwrap();
        assert_eq!(b.state(ids[0]), BucketState::Absorbing);
        assert_eq!(
            b.merge_work(&mut job, zeta, 1, &mut tree),
            MergeStep::Progress { absorbed: 1 }
        );
        assert_eq!(
            b.merge_work(&mut job, zeta, 1, &mut tree),
            MergeStep::Progress { absorbed: 1 }
        );
        assert_eq!(
            b.merge_work(&mut job, zeta, 1, &mut tree),
            MergeStep::Complete {
                absorbed: 0,
                aborted: false
            }
        );
        assert_eq!(b.size(ids[0]), 13);
        assert_eq!(items_of(&b, ids[0]), (0..13).collect::<Vec<_>>());
        assert_eq!(b.len(), 1);
        assert_eq!(tree.leaf_count(), 1);
        assert_eq!(tree.total(), 13);
        assert_eq!(b.state(ids[0]), BucketState::Normal);
        tree.check().unwrap();
    }

    #[test]
    fn merge_keeps_key_routing() {
        let sizes = [2usize, 1, 3, 2, 1, 1, 2, 30, 1, 1];
        let (mut b, mut tree, ids) = chain_with_tree(&sizes);
        let zeta = Zeta::new(60, 1); // ζ = 10
        for start in [ids[1], ids[8]] {
            let mut job = b.start_merge(start).unwrap();
            while let MergeStep::Progress { .. } = b.merge_work(&mut job, zeta, 2, &mut tree) {}
        }
        tree.check().unwrap();
        let total: usize = sizes.iter().sum();
        for key in 0..total as i64 {
            let (_, owner) = tree.find_by_key(&key).unwrap();
            assert!(
                b.items(owner).contains(&&key),
                "key {key} routed to the wrong bucket"
            );
        }
        let chain: Vec<_> = b.ids().collect();
        let leaves: Vec<_> = tree.leaves_in_order().into_iter().map(|(_, p)| p).collect();
        assert_eq!(chain, leaves);
    }

    #[test]
    fn merge_stops_at_splitting_bucket_and_aborts_on_state_change() {
        let (mut b, mut tree, ids) = chain_with_tree(&[2, 40, 1]);
        let zeta = Zeta::new(600, 1);
        b.designate_split(ids[1], Zeta::new(6, 1), Epsilon::new(1, 2))
            .unwrap();
        let mut job = b.start_merge(ids[0]).unwrap();
        assert_eq!(
            b.merge_work(&mut job, zeta, 4, &mut tree),
            MergeStep::Complete {
                absorbed: 0,
                aborted: false
            }
        );
        let mut job = b.start_merge(ids[0]).unwrap();
        b.cancel_merge(&job);
        assert_eq!(
            b.merge_work(&mut job, zeta, 4, &mut tree),
            MergeStep::Complete {
                absorbed: 0,
                aborted: true
            }
        );
    }

    #[test]
    fn merge_of_five_with_two_per_call() {
        let (mut b, mut tree, ids) = chain_with_tree(&[1, 1, 1, 1, 1]);
        let zeta = Zeta::new(30, 1); // ζ = 5
        let mut job = b.start_merge(ids[0]).unwrap();
        let mut calls = 0;
        loop {
            calls += 1;
            if let MergeStep::Complete { .. } = b.merge_work(&mut job, zeta, 2, &mut tree) {
                break;
            }
        }
        // four absorptions at two per call, plus the call that sees no
        // further candidate
        assert_eq!(job.absorbed, 4);
        assert_eq!(calls, 3);
        assert_eq!(tree.total(), 5);
    }

    #[test]
    fn removing_empty_buckets() {
        let mut b = Buckets::new();
        let a = b.push_back([1]);
        let c = b.push_back([2]);
        assert!(b.remove_empty(a).is_err());
        b.serve_delete_any(a).unwrap();
        b.remove_empty(a).unwrap();
        assert_eq!(b.head(), Some(c));
        assert_eq!(b.prev(c), None);
        assert_eq!(b.max_size(), 1);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn singleton_insertion_positions() {
        let mut b = Buckets::new();
        let m = b.insert_singleton_before(None, 5);
        let l = b.insert_singleton_before(Some(m), 1);
        let r = b.insert_singleton_after(m, 9);
        let order: Vec<_> = b.ids().collect();
        assert_eq!(order, vec![l, m, r]);
        assert_eq!(b.tail(), Some(r));
        assert_eq!(b.drain_all(), vec![vec![1], vec![5], vec![9]]);
        assert!(b.is_empty());
        assert_eq!(b.pooled_items(), 0);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Insert(i64),
        Delete,
        Work(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            3 => (-50i64..50).prop_map(Op::Insert),
            2 => Just(Op::Delete),
            2 => (1u64..20).prop_map(Op::Work),
        ]
    }

    proptest! {
        /// Items are conserved across a split driven by interleaved inserts,
        /// deletes and work calls, and the result is correctly partitioned.
        #[test]
        fn split_conserves_items(
            initial in proptest::collection::vec(-50i64..50, 2..200),
            ops in proptest::collection::vec(op(), 0..400),
            budget_den in 2u64..32,
        ) {
            let mut b = Buckets::new();
            let id = b.push_back(initial.clone());
            let mut mirror = initial.clone();
            b.designate_split(id, Zeta::new(1, 1), Epsilon::new(1, budget_den)).unwrap();
            let mut done = None;
            for op in ops {
                match op {
                    Op::Insert(v) => {
                        b.serve_insert(id, v);
                        mirror.push(v);
                    }
                    Op::Delete => {
                        if b.size(id) > 0 {
                            let v = b.serve_delete_any(id).unwrap();
                            let pos = mirror.iter().position(|&m| m == v).unwrap();
                            mirror.swap_remove(pos);
                        }
                    }
                    Op::Work(w) => {
                        if let SplitStep::Complete { split, .. } = b.split_work(id, w).unwrap() {
                            done = Some(split);
                            break;
                        }
                    }
                }
                prop_assert!(b.check_bucket(id).is_ok(), "{:?}", b.check_bucket(id));
                prop_assert_eq!(items_of(&b, id), sorted(mirror.clone()));
            }
            let done = match done {
                Some(d) => d,
                None => run_split(&mut b, id, 7),
            };
            let mut all = items_of(&b, id);
            if let Some(r) = done.right {
                let right = items_of(&b, r);
                let pivot = done.pivot.unwrap();
                prop_assert!(all.iter().all(|&v| v <= pivot));
                prop_assert!(right.iter().all(|&v| v > pivot));
                prop_assert!(!right.is_empty() && !all.is_empty());
                all.extend(right);
            }
            prop_assert_eq!(sorted(all), sorted(mirror));
            prop_assert_eq!(b.pooled_items(), b.ids().map(|i| b.size(i)).sum::<usize>());
        }

        /// Greedy absorption leaves a chain whose sizes are what repeated
        /// extent computation predicts, and conserves every item.
        #[test]
        fn merge_conserves_items(sizes in proptest::collection::vec(1usize..12, 1..30), zeta6 in 6usize..120) {
            let (mut b, mut tree, ids) = chain_with_tree(&sizes);
            let zeta = Zeta::new(zeta6, 1);
            let total: usize = sizes.iter().sum();
            let start = ids[0];
            let expect: Vec<_> = b.merge_run_extent(start, zeta);
            let expect_size: usize = expect.iter().map(|&i| b.size(i)).sum();
            let mut job = b.start_merge(start).unwrap();
            while let MergeStep::Progress { .. } = b.merge_work(&mut job, zeta, 3, &mut tree) {}
            prop_assert_eq!(b.size(start), expect_size);
            prop_assert_eq!(job.absorbed, expect.len() - 1);
            // maximality
            if let Some(n) = b.next(start) {
                prop_assert!(!zeta.within_merge(b.size(start) + b.size(n)));
            }
            prop_assert_eq!(tree.total(), total);
            tree.check().unwrap();
            let mut all: Vec<i64> = b.ids().flat_map(|i| items_of(&b, i)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..total as i64).collect::<Vec<_>>());
            for key in 0..total as i64 {
                let (_, owner) = tree.find_by_key(&key).unwrap();
                prop_assert!(b.items(owner).contains(&&key));
            }
        }
    }
}
