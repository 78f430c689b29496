//! Brute-force sorted multiset used to check every `delete_i` answer.
//!
//! Keys are kept in sorted chunks of bounded length, which gives positional
//! access and insertion in O(√n) without any cleverness that could share a
//! bug with the heap.

use std::fmt;

use serde::Serialize;

use crate::params::quantile_bounds;

const CHUNK: usize = 512;

/// Why a returned key was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation<K> {
    pub i: usize,
    pub n: usize,
    pub r_lo: usize,
    pub r_hi: usize,
    pub key: K,
    /// 1-based ranks of the key's first and last occurrence, if present.
    pub ranks: Option<(usize, usize)>,
}

impl<K: fmt::Debug> fmt::Display for Violation<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "delete_{} with n = {} returned {:?}, quantile ranks [{}, {}], ",
            self.i, self.n, self.key, self.r_lo, self.r_hi
        )?;
        match self.ranks {
            Some((a, b)) => write!(f, "key occupies ranks [{a}, {b}]"),
            None => f.write_str("key not present"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Oracle<K> {
    chunks: Vec<Vec<K>>,
    len: usize,
}

impl<K: Ord + Clone> Oracle<K> {
    pub fn new() -> Self {
        Self {
            chunks: Vec::new(),
            len: 0,
        }
    }

    pub fn from_keys(keys: impl IntoIterator<Item = K>) -> Self {
        let mut all: Vec<K> = keys.into_iter().collect();
        all.sort();
        let len = all.len();
        let chunks = all.chunks(CHUNK).map(<[K]>::to_vec).collect();
        Self { chunks, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, key: K) {
        self.len += 1;
        if self.chunks.is_empty() {
            self.chunks.push(vec![key]);
            return;
        }
        // first chunk whose last key is >= key, else the last chunk
        let c = self
            .chunks
            .iter()
            .position(|ch| ch.last().is_some_and(|l| *l >= key))
            .unwrap_or(self.chunks.len() - 1);
        let ch = &mut self.chunks[c];
        let at = ch.partition_point(|x| *x < key);
        ch.insert(at, key);
        if ch.len() > 2 * CHUNK {
            let tail = ch.split_off(CHUNK);
            self.chunks.insert(c + 1, tail);
        }
    }

    /// Number of keys strictly below `key`.
    fn count_below(&self, key: &K) -> usize {
        let mut below = 0;
        for ch in &self.chunks {
            if ch.last().is_some_and(|l| l < key) {
                below += ch.len();
            } else {
                below += ch.partition_point(|x| x < key);
                break;
            }
        }
        below
    }

    /// Ranks `[first, last]` occupied by `key`, if present.
    pub fn ranks_of(&self, key: &K) -> Option<(usize, usize)> {
        let below = self.count_below(key);
        let mut equal = 0;
        let mut seen = 0;
        for ch in &self.chunks {
            if seen + ch.len() <= below {
                seen += ch.len();
                continue;
            }
            let start = below.saturating_sub(seen);
            let run = ch[start..].iter().take_while(|x| *x == key).count();
            equal += run;
            seen += ch.len();
            if start + run < ch.len() {
                break;
            }
        }
        (equal > 0).then(|| (below + 1, below + equal))
    }

    /// Key at 1-based `rank`.
    pub fn key_at_rank(&self, rank: usize) -> Option<&K> {
        if rank == 0 {
            return None;
        }
        let mut left = rank - 1;
        for ch in &self.chunks {
            if left < ch.len() {
                return Some(&ch[left]);
            }
            left -= ch.len();
        }
        None
    }

    fn remove_one(&mut self, key: &K) -> bool {
        let Some(c) = self
            .chunks
            .iter()
            .position(|ch| ch.last().is_some_and(|l| l >= key))
        else {
            return false;
        };
        let ch = &mut self.chunks[c];
        let at = ch.partition_point(|x| x < key);
        if at == ch.len() || ch[at] != *key {
            return false;
        }
        ch.remove(at);
        if ch.is_empty() {
            self.chunks.remove(c);
        }
        self.len -= 1;
        true
    }

    /// Check that `key` may be returned by `delete_i` on the current
    /// contents with `k` quantiles, then remove one occurrence. On a
    /// violation nothing is removed.
    pub fn check_and_delete(&mut self, k: usize, i: usize, key: &K) -> Result<(), Violation<K>> {
        let n = self.len;
        let b = quantile_bounds(n, k, i).expect("quantile index in range");
        let ranks = self.ranks_of(key);
        let ok = ranks.is_some_and(|(first, last)| first <= b.hi && last >= b.lo && !b.is_empty());
        if !ok {
            return Err(Violation {
                i,
                n,
                r_lo: b.lo,
                r_hi: b.hi,
                key: key.clone(),
                ranks,
            });
        }
        self.remove_one(key);
        Ok(())
    }

    /// All keys in sorted order.
    pub fn to_vec(&self) -> Vec<K> {
        self.chunks.iter().flatten().cloned().collect()
    }
}
