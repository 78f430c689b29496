//! Leaf-oriented AVL tree whose leaves carry bucket handles.
//!
//! Internal nodes hold a separator key: every key routed into the left
//! subtree is `<=` the separator, every key routed right is `>`. Each node also
//! carries a size field, the number of items stored beneath it, which drives
//! rank descent. Leaves keep stable [`NodeId`]s across rebalancing; only
//! internal nodes move during rotations.
//!
//! All descents and updates touch `O(height)` nodes. The tree counts node
//! touches so callers can audit per-operation cost.

use std::cell::Cell;

use thiserror::Error;

use crate::arena::Arena;

/// Handle to a tree node. Leaf handles stay valid until the leaf is removed.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("cannot build a tree from an empty bucket sequence")]
    EmptyBuild,
    #[error("rank {rank} outside 1..={total}")]
    RankOutOfRange { rank: usize, total: usize },
    #[error("size field of {0:?} would become negative")]
    NegativeSize(NodeId),
    #[error("tree structure check failed: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone)]
enum Kind<K, P> {
    Leaf(P),
    Internal { left: NodeId, right: NodeId, sep: K },
}

#[derive(Debug, Clone)]
struct Node<K, P> {
    parent: Option<NodeId>,
    size: usize,
    /// Leaves have height 1.
    height: u32,
    kind: Kind<K, P>,
}

/// Height-balanced search tree over buckets.
#[derive(Debug, Clone)]
pub struct Tree<K, P> {
    nodes: Arena<Node<K, P>>,
    root: Option<NodeId>,
    leaves: usize,
    touches: Cell<u64>,
}

impl<K, P> Default for Tree<K, P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K, P> Tree<K, P> {
    pub fn new() -> Self {
        Self {
            nodes: Arena::new(),
            root: None,
            leaves: 0,
            touches: Cell::new(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    /// Total number of items beneath the root.
    pub fn total(&self) -> usize {
        self.root.map_or(0, |r| self.nodes[r.0].size)
    }

    /// Height in edges from the root to the deepest leaf.
    pub fn height(&self) -> usize {
        self.root.map_or(0, |r| self.nodes[r.0].height as usize - 1)
    }

    /// Node touches accumulated since the last call.
    pub fn take_touches(&self) -> u64 {
        self.touches.replace(0)
    }

    #[inline]
    fn touch(&self, n: u64) {
        self.touches.set(self.touches.get() + n);
    }

    pub fn contains_leaf(&self, leaf: NodeId) -> bool {
        matches!(self.nodes.get(leaf.0).map(|n| &n.kind), Some(Kind::Leaf(_)))
    }

    pub fn leaf_size(&self, leaf: NodeId) -> usize {
        self.nodes[leaf.0].size
    }

    fn children(&self, id: NodeId) -> (NodeId, NodeId) {
        match self.nodes[id.0].kind {
            Kind::Internal { left, right, .. } => (left, right),
            Kind::Leaf(_) => unreachable!("leaf has no children"),
        }
    }

    fn h(&self, id: NodeId) -> u32 {
        self.nodes[id.0].height
    }

    fn refresh(&mut self, id: NodeId) {
        let (l, r) = self.children(id);
        let size = self.nodes[l.0].size + self.nodes[r.0].size;
        let height = 1 + self.h(l).max(self.h(r));
        let node = &mut self.nodes[id.0];
        node.size = size;
        node.height = height;
    }

    fn set_child(&mut self, parent: Option<NodeId>, old: NodeId, new: NodeId) {
        match parent {
            None => self.root = Some(new),
            Some(p) => match &mut self.nodes[p.0].kind {
                Kind::Internal { left, right, .. } => {
                    if *left == old {
                        *left = new;
                    } else {
                        debug_assert_eq!(*right, old);
                        *right = new;
                    }
                }
                Kind::Leaf(_) => unreachable!("leaf as parent"),
            },
        }
    }

    fn rotate_right(&mut self, x: NodeId) -> NodeId {
        let (l, _) = self.children(x);
        let (_, lr) = self.children(l);
        let xp = self.nodes[x.0].parent;
        if let Kind::Internal { left, .. } = &mut self.nodes[x.0].kind {
            *left = lr;
        }
        self.nodes[lr.0].parent = Some(x);
        if let Kind::Internal { right, .. } = &mut self.nodes[l.0].kind {
            *right = x;
        }
        self.nodes[x.0].parent = Some(l);
        self.nodes[l.0].parent = xp;
        self.set_child(xp, x, l);
        self.refresh(x);
        self.refresh(l);
        self.touch(3);
        l
    }

    fn rotate_left(&mut self, x: NodeId) -> NodeId {
        let (_, r) = self.children(x);
        let (rl, _) = self.children(r);
        let xp = self.nodes[x.0].parent;
        if let Kind::Internal { right, .. } = &mut self.nodes[x.0].kind {
            *right = rl;
        }
        self.nodes[rl.0].parent = Some(x);
        if let Kind::Internal { left, .. } = &mut self.nodes[r.0].kind {
            *left = x;
        }
        self.nodes[x.0].parent = Some(r);
        self.nodes[r.0].parent = xp;
        self.set_child(xp, x, r);
        self.refresh(x);
        self.refresh(r);
        self.touch(3);
        r
    }

    fn rebalance(&mut self, x: NodeId) -> NodeId {
        let (l, r) = self.children(x);
        let bf = self.h(l) as i64 - self.h(r) as i64;
        if bf > 1 {
            let (ll, lr) = self.children(l);
            if self.h(ll) < self.h(lr) {
                self.rotate_left(l);
            }
            self.rotate_right(x)
        } else if bf < -1 {
            let (rl, rr) = self.children(r);
            if self.h(rr) < self.h(rl) {
                self.rotate_right(r);
            }
            self.rotate_left(x)
        } else {
            x
        }
    }

    /// Recompute sizes and heights from `start` up to the root, rotating
    /// wherever the AVL balance condition fails.
    fn retrace(&mut self, mut cur: Option<NodeId>) {
        while let Some(id) = cur {
            self.touch(1);
            self.refresh(id);
            let top = self.rebalance(id);
            cur = self.nodes[top.0].parent;
        }
    }

    /// Add `delta` to the size of `leaf` and every ancestor.
    pub fn adjust_size(&mut self, leaf: NodeId, delta: isize) -> Result<(), TreeError> {
        // ancestors hold at least the leaf's size, so checking the leaf suffices
        if self.nodes[leaf.0].size.checked_add_signed(delta).is_none() {
            return Err(TreeError::NegativeSize(leaf));
        }
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            self.touch(1);
            let node = &mut self.nodes[id.0];
            node.size = node.size.wrapping_add_signed(delta);
            cur = node.parent;
        }
        Ok(())
    }

    /// Remove `leaf`, contracting its parent into the sibling. Returns the
    /// leaf's payload.
    pub fn remove_leaf(&mut self, leaf: NodeId) -> P {
        let node = self.nodes.remove(leaf.0);
        let payload = match node.kind {
            Kind::Leaf(p) => p,
            Kind::Internal { .. } => panic!("remove_leaf on an internal node"),
        };
        self.leaves -= 1;
        self.touch(3);
        let Some(parent) = node.parent else {
            self.root = None;
            return payload;
        };
        let (l, r) = self.children(parent);
        let sibling = if l == leaf { r } else { l };
        let grand = self.nodes[parent.0].parent;
        self.nodes.remove(parent.0);
        self.nodes[sibling.0].parent = grand;
        self.set_child(grand, parent, sibling);
        self.retrace(grand);
        payload
    }

    /// Remove `leaf` and hand its key interval to the preceding leaf, so that
    /// keys it used to receive now route to its left neighbour. The leftmost
    /// leaf has no predecessor and behaves like [`Tree::remove_leaf`].
    pub fn remove_leaf_into_prev(&mut self, leaf: NodeId) -> P
    where
        K: Clone,
    {
        let parent = self.nodes[leaf.0].parent;
        if let Some(p) = parent {
            let (l, _) = self.children(p);
            if l == leaf {
                // leaf's lower bound is the separator of the nearest ancestor
                // reached from its right side; raise it to leaf's upper bound
                let upper = match &self.nodes[p.0].kind {
                    Kind::Internal { sep, .. } => sep.clone(),
                    Kind::Leaf(_) => unreachable!("leaf as parent"),
                };
                let mut child = p;
                let mut cur = self.nodes[p.0].parent;
                while let Some(a) = cur {
                    self.touch(1);
                    let (al, _) = self.children(a);
                    if al != child {
                        if let Kind::Internal { sep, .. } = &mut self.nodes[a.0].kind {
                            *sep = upper;
                        }
                        break;
                    }
                    child = a;
                    cur = self.nodes[a.0].parent;
                }
            }
        }
        self.remove_leaf(leaf)
    }

    /// Insert the first leaf of an empty tree.
    pub fn insert_root_leaf(&mut self, payload: P, size: usize) -> NodeId {
        assert!(self.root.is_none(), "tree is not empty");
        let id = NodeId(self.nodes.insert(Node {
            parent: None,
            size,
            height: 1,
            kind: Kind::Leaf(payload),
        }));
        self.root = Some(id);
        self.leaves = 1;
        self.touch(1);
        id
    }

    /// Replace `leaf` by an internal node with separator `pivot` and two
    /// fresh leaves. Returns the new (left, right) leaf handles; the old
    /// handle becomes the internal node and must no longer be used as a leaf.
    pub fn split_leaf(
        &mut self,
        leaf: NodeId,
        pivot: K,
        left: (P, usize),
        right: (P, usize),
    ) -> (NodeId, NodeId) {
        assert!(self.contains_leaf(leaf), "split_leaf on a non-leaf");
        let l = NodeId(self.nodes.insert(Node {
            parent: Some(leaf),
            size: left.1,
            height: 1,
            kind: Kind::Leaf(left.0),
        }));
        let r = NodeId(self.nodes.insert(Node {
            parent: Some(leaf),
            size: right.1,
            height: 1,
            kind: Kind::Leaf(right.0),
        }));
        let node = &mut self.nodes[leaf.0];
        node.kind = Kind::Internal {
            left: l,
            right: r,
            sep: pivot,
        };
        node.size = left.1 + right.1;
        node.height = 2;
        self.leaves += 1;
        self.touch(3);
        let parent = self.nodes[leaf.0].parent;
        self.retrace(parent);
        (l, r)
    }
}

impl<K: Clone, P: Copy> Tree<K, P> {
    /// Build a perfectly balanced tree from `(payload, size, max_key)` entries
    /// given in key order. Returns the tree and the leaf handles in order.
    pub fn build(entries: &[(P, usize, K)]) -> Result<(Self, Vec<NodeId>), TreeError> {
        if entries.is_empty() {
            return Err(TreeError::EmptyBuild);
        }
        let mut tree = Self::new();
        tree.nodes = Arena::with_capacity(2 * entries.len());
        let mut leaves = Vec::with_capacity(entries.len());
        let root = tree.build_range(entries, &mut leaves);
        tree.root = Some(root);
        tree.leaves = entries.len();
        Ok((tree, leaves))
    }

    fn build_range(&mut self, entries: &[(P, usize, K)], out: &mut Vec<NodeId>) -> NodeId {
        if let [(p, size, _)] = entries {
            let id = NodeId(self.nodes.insert(Node {
                parent: None,
                size: *size,
                height: 1,
                kind: Kind::Leaf(*p),
            }));
            out.push(id);
            return id;
        }
        let mid = entries.len().div_ceil(2);
        let l = self.build_range(&entries[..mid], out);
        let r = self.build_range(&entries[mid..], out);
        let id = NodeId(self.nodes.insert(Node {
            parent: None,
            size: self.nodes[l.0].size + self.nodes[r.0].size,
            height: 1 + self.h(l).max(self.h(r)),
            kind: Kind::Internal {
                left: l,
                right: r,
                sep: entries[mid - 1].2.clone(),
            },
        }));
        self.nodes[l.0].parent = Some(id);
        self.nodes[r.0].parent = Some(id);
        id
    }

    pub fn payload(&self, leaf: NodeId) -> P {
        match self.nodes[leaf.0].kind {
            Kind::Leaf(p) => p,
            Kind::Internal { .. } => panic!("payload of an internal node"),
        }
    }

    /// Find the leaf containing global rank `rank` (1-based). Returns the
    /// leaf, its payload, and the rank of the leaf's first item.
    pub fn find_by_rank(&self, rank: usize) -> Result<(NodeId, P, usize), TreeError> {
        let total = self.total();
        if rank == 0 || rank > total {
            return Err(TreeError::RankOutOfRange { rank, total });
        }
        let mut node = self.root.expect("nonempty tree has a root");
        let mut before = 0;
        loop {
            self.touch(1);
            match &self.nodes[node.0].kind {
                Kind::Leaf(p) => return Ok((node, *p, before + 1)),
                Kind::Internal { left, right, .. } => {
                    let ls = self.nodes[left.0].size;
                    if rank <= before + ls {
                        node = *left;
                    } else {
                        before += ls;
                        node = *right;
                    }
                }
            }
        }
    }

    /// All leaves in key order.
    pub fn leaves_in_order(&self) -> Vec<(NodeId, P)> {
        let mut out = Vec::with_capacity(self.leaves);
        let mut stack = Vec::new();
        let mut cur = self.root;
        loop {
            while let Some(id) = cur {
                match &self.nodes[id.0].kind {
                    Kind::Leaf(p) => {
                        out.push((id, *p));
                        cur = None;
                    }
                    Kind::Internal { left, right, .. } => {
                        stack.push(*right);
                        cur = Some(*left);
                    }
                }
            }
            match stack.pop() {
                Some(next) => cur = Some(next),
                None => break,
            }
        }
        out
    }

    /// For each leaf in order: payload, exclusive lower bound, inclusive upper
    /// bound (as induced by the separators on its root path).
    pub fn leaf_intervals(&self) -> Vec<(P, Option<K>, Option<K>)> {
        let mut out = Vec::with_capacity(self.leaves);
        let Some(root) = self.root else {
            return out;
        };
        let mut stack = vec![(root, None::<K>, None::<K>)];
        while let Some((id, lo, hi)) = stack.pop() {
            match &self.nodes[id.0].kind {
                Kind::Leaf(p) => out.push((*p, lo, hi)),
                Kind::Internal { left, right, sep } => {
                    stack.push((*right, Some(sep.clone()), hi));
                    stack.push((*left, lo, Some(sep.clone())));
                }
            }
        }
        out
    }

    /// Recompute every size and height bottom-up and compare with the stored
    /// fields; also verifies parent links, the AVL condition and leaf count.
    pub fn check(&self) -> Result<(), TreeError> {
        let Some(root) = self.root else {
            return if self.leaves == 0 {
                Ok(())
            } else {
                Err(TreeError::Corrupt(format!(
                    "empty tree reports {} leaves",
                    self.leaves
                )))
            };
        };
        if self.nodes[root.0].parent.is_some() {
            return Err(TreeError::Corrupt("root has a parent".into()));
        }
        let mut leaves = 0;
        self.check_node(root, &mut leaves)?;
        if leaves != self.leaves {
            return Err(TreeError::Corrupt(format!(
                "counted {leaves} leaves, stored {}",
                self.leaves
            )));
        }
        if self.nodes.len() != 2 * leaves - 1 {
            return Err(TreeError::Corrupt(format!(
                "{} live nodes for {leaves} leaves",
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn check_node(&self, id: NodeId, leaves: &mut usize) -> Result<(usize, u32), TreeError> {
        let node = &self.nodes[id.0];
        let (size, height) = match &node.kind {
            Kind::Leaf(_) => {
                *leaves += 1;
                (node.size, 1)
            }
            Kind::Internal { left, right, .. } => {
                for child in [left, right] {
                    if self.nodes[child.0].parent != Some(id) {
                        return Err(TreeError::Corrupt(format!(
                            "{child:?} does not point back to {id:?}"
                        )));
                    }
                }
                let (ls, lh) = self.check_node(*left, leaves)?;
                let (rs, rh) = self.check_node(*right, leaves)?;
                if lh.abs_diff(rh) > 1 {
                    return Err(TreeError::Corrupt(format!(
                        "{id:?} unbalanced: heights {lh} and {rh}"
                    )));
                }
                (ls + rs, 1 + lh.max(rh))
            }
        };
        if size != node.size {
            return Err(TreeError::Corrupt(format!(
                "{id:?} stores size {} but subtree holds {size}",
                node.size
            )));
        }
        if height != node.height {
            return Err(TreeError::Corrupt(format!(
                "{id:?} stores height {} but subtree has {height}",
                node.height
            )));
        }
        Ok((size, height))
    }
}

impl<K: Ord, P: Copy> Tree<K, P> {
    /// Route `key` to its leaf; equal keys go left at a separator.
    pub fn find_by_key(&self, key: &K) -> Option<(NodeId, P)> {
        let mut node = self.root?;
        loop {
            self.touch(1);
            match &self.nodes[node.0].kind {
                Kind::Leaf(p) => return Some((node, *p)),
                Kind::Internal { left, right, sep } => {
                    node = if key <= sep { *left } else { *right };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Height bound pinned for the leaf-oriented AVL tree: for `L` leaves the
    /// height in edges stays below `1.45 * log2(L) + 2`.
    pub(crate) fn height_bound(leaves: usize) -> f64 {
        1.45 * (leaves.max(1) as f64).log2() + 2.0
    }

    fn from_sizes(sizes: &[usize]) -> (Tree<i64, usize>, Vec<NodeId>) {
        let entries: Vec<_> = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| (i, s, (i as i64 + 1) * 10))
            .collect();
        Tree::build(&entries).unwrap()
    }

    #[test]
    fn build_rejects_empty() {
        assert_eq!(
            Tree::<i64, usize>::build(&[]).unwrap_err(),
            TreeError::EmptyBuild
        );
    }

    #[test]
    fn build_single_leaf() {
        let (t, leaves) = from_sizes(&[5]);
        assert_eq!(t.total(), 5);
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.height(), 0);
        assert_eq!(leaves.len(), 1);
        t.check().unwrap();
    }

    #[test]
    fn build_three_leaves() {
        let (t, _) = from_sizes(&[3, 5, 2]);
        assert_eq!(t.total(), 10);
        let sizes: Vec<_> = t
            .leaves_in_order()
            .iter()
            .map(|(id, _)| t.leaf_size(*id))
            .collect();
        assert_eq!(sizes, vec![3, 5, 2]);
        t.check().unwrap();
    }

    #[test]
    fn build_sixty_equal_leaves() {
        let (t, leaves) = from_sizes(&[20; 60]);
        assert_eq!(t.total(), 1200);
        assert_eq!(t.leaf_count(), 60);
        assert!((t.height() as f64) <= height_bound(60));
        let order: Vec<_> = t.leaves_in_order().into_iter().map(|(id, _)| id).collect();
        assert_eq!(order, leaves);
        t.check().unwrap();
    }

    #[test]
    fn ties_route_left() {
        let entries = vec![(0usize, 1, 10i64), (1, 1, 20)];
        let (t, leaves) = Tree::build(&entries).unwrap();
        assert_eq!(t.find_by_key(&10).unwrap().0, leaves[0]);
        assert_eq!(t.find_by_key(&11).unwrap().0, leaves[1]);
        assert_eq!(t.find_by_key(&i64::MIN).unwrap().0, leaves[0]);
        assert_eq!(t.find_by_key(&i64::MAX).unwrap().0, leaves[1]);
    }

    #[test]
    fn rank_descent_on_prefix_sums() {
        let (t, leaves) = from_sizes(&[3, 5, 2]);
        assert_eq!(t.find_by_rank(4).unwrap(), (leaves[1], 1, 4));
        assert_eq!(t.find_by_rank(1).unwrap(), (leaves[0], 0, 1));
        assert_eq!(t.find_by_rank(10).unwrap(), (leaves[2], 2, 9));
        assert_eq!(
            t.find_by_rank(11).unwrap_err(),
            TreeError::RankOutOfRange {
                rank: 11,
                total: 10
            }
        );
        assert!(t.find_by_rank(0).is_err());
    }

    #[test]
    fn adjust_size_propagates() {
        let (mut t, leaves) = from_sizes(&[3, 5, 2]);
        t.adjust_size(leaves[1], 1).unwrap();
        assert_eq!(t.total(), 11);
        t.adjust_size(leaves[2], -1).unwrap();
        assert_eq!(t.total(), 10);
        assert_eq!(
            t.adjust_size(leaves[2], -2),
            Err(TreeError::NegativeSize(leaves[2]))
        );
    }

    #[test]
    fn random_adjustments_keep_sizes_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut t, leaves) = from_sizes(&[50; 40]);
        let mut mirror = vec![50isize; 40];
        for _ in 0..10_000 {
            let i = rng.random_range(0..40);
            let delta = if mirror[i] == 0 || rng.random_bool(0.5) {
                1
            } else {
                -1
            };
            t.adjust_size(leaves[i], delta).unwrap();
            mirror[i] += delta;
        }
        t.check().unwrap();
        for (i, leaf) in leaves.iter().enumerate() {
            assert_eq!(t.leaf_size(*leaf) as isize, mirror[i]);
        }
    }

    #[test]
    fn split_single_leaf() {
        let (mut t, leaves) = from_sizes(&[12]);
        let (l, r) = t.split_leaf(leaves[0], 5, (0, 6), (1, 6));
        assert_eq!(t.total(), 12);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.find_by_key(&5).unwrap().0, l);
        assert_eq!(t.find_by_key(&6).unwrap().0, r);
        t.check().unwrap();
    }

    #[test]
    fn remove_left_of_two() {
        let (mut t, leaves) = from_sizes(&[4, 7]);
        assert_eq!(t.remove_leaf(leaves[0]), 0);
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.total(), 7);
        assert_eq!(t.find_by_key(&-100).unwrap().0, leaves[1]);
        t.check().unwrap();
        t.remove_leaf(leaves[1]);
        assert!(t.is_empty());
        t.check().unwrap();
    }

    /// Splits and removals against a plain vector of (payload, size, upper
    /// bound) triples; after every step the in-order leaves, sizes and the
    /// height bound must agree with the mirror.
    #[test]
    fn random_splits_and_removals_match_mirror() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // keys are spaced so there is always room for a pivot between bounds
        let (mut t, leaves) = Tree::build(&[(0u32, 8usize, 1i64 << 40)]).unwrap();
        let mut mirror: Vec<(u32, usize, NodeId)> = vec![(0, 8, leaves[0])];
        let mut next_payload = 1u32;
        for step in 0..3000 {
            let grow = mirror.len() < 4 || rng.random_bool(0.55);
            let i = rng.random_range(0..mirror.len());
            if grow {
                let (_, lo, hi) = t.leaf_intervals()[i];
                let lo = lo.unwrap_or(-(1 << 50));
                let hi = hi.unwrap_or(1 << 50);
                if hi - lo < 4 {
                    continue;
                }
                let pivot = rng.random_range(lo + 1..hi);
                let (p, size, leaf) = mirror[i];
                let ls = rng.random_range(1..=size.max(2));
                let rs = size.max(2) - ls + 1;
                let (l, r) = t.split_leaf(leaf, pivot, (p, ls), (next_payload, rs));
                mirror[i] = (p, ls, l);
                mirror.insert(i + 1, (next_payload, rs, r));
                next_payload += 1;
            } else {
                let (p, _, leaf) = mirror.remove(i);
                assert_eq!(t.remove_leaf(leaf), p);
            }
            if step % 37 == 0 {
                t.check().unwrap();
            }
            let got: Vec<_> = t
                .leaves_in_order()
                .into_iter()
                .map(|(id, p)| (p, t.leaf_size(id), id))
                .collect();
            assert_eq!(got, mirror);
            assert!((t.height() as f64) <= height_bound(t.leaf_count()));
        }
        t.check().unwrap();
        // every routed key lands in the leaf whose interval contains it
        let intervals = t.leaf_intervals();
        for _ in 0..1000 {
            let key = rng.random_range(-(1i64 << 45)..(1 << 45));
            let (_, p) = t.find_by_key(&key).unwrap();
            let (ip, lo, hi) = intervals
                .iter()
                .find(|(_, lo, hi)| lo.is_none_or(|lo| key > lo) && hi.is_none_or(|hi| key <= hi))
                .unwrap();
            assert_eq!(*ip, p, "key {key} in ({lo:?}, {hi:?}]");
        }
    }

    /// After `remove_leaf_into_prev`, the predecessor's interval is the union
    /// of its old interval and the removed one; all other intervals stay.
    #[test]
    fn removal_into_prev_extends_left_neighbour() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..40 {
            let count = rng.random_range(2..70);
            let entries: Vec<_> = (0..count)
                .map(|i| (i as u32, 3usize, (i as i64 + 1) * 10))
                .collect();
            let (mut t, _) = Tree::build(&entries).unwrap();
            while t.leaf_count() > 1 {
                let before = t.leaf_intervals();
                let order = t.leaves_in_order();
                let i = rng.random_range(0..order.len());
                let merged_total = t.total();
                t.remove_leaf_into_prev(order[i].0);
                let mut expect = before.clone();
                let (_, _, hi) = expect.remove(i);
                if i > 0 {
                    expect[i - 1].2 = hi;
                } else {
                    // leftmost: the right neighbour inherits the lower bound
                    expect[0].1 = None;
                }
                assert_eq!(
                    t.leaf_intervals(),
                    expect,
                    "round {round}, removed index {i}"
                );
                assert_eq!(t.total(), merged_total - 3);
                t.check().unwrap();
            }
        }
    }

    #[test]
    fn node_touches_are_logarithmic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut t, _) = Tree::build(&[(0u32, 1usize, 0i64)]).unwrap();
        let mut keys = vec![0i64];
        for p in 1..2000u32 {
            let key = rng.random_range(1..1_000_000_000i64);
            let (leaf, _) = t.find_by_key(&key).unwrap();
            let _ = t.take_touches();
            let pivot = key - 1;
            t.split_leaf(leaf, pivot, (t.payload(leaf), 1), (p, 1));
            let h = t.height() as u64;
            let touched = t.take_touches();
            // a leaf split touches the new nodes, every ancestor, and at most
            // two rotations' worth of extra nodes per level
            assert!(
                touched <= 4 * h + 8,
                "split touched {touched} at height {h}"
            );
            keys.push(key);
        }
        t.check().unwrap();
        let order = t.leaves_in_order();
        for _ in 0..500 {
            let i = rng.random_range(0..order.len());
            let _ = t.take_touches();
            let _ = t.find_by_rank(i + 1).unwrap();
            assert!(t.take_touches() <= t.height() as u64 + 1);
        }
    }
}
