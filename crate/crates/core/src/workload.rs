//! Seeded synthetic workloads: initial keys plus a stream of operations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::params::quantile_bounds;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse {what} from {input:?}: {reason}")]
pub struct ParseError {
    what: &'static str,
    input: String,
    reason: String,
}

fn parse_err(what: &'static str, input: &str, reason: impl Into<String>) -> ParseError {
    ParseError {
        what,
        input: input.to_owned(),
        reason: reason.into(),
    }
}

/// Distribution of inserted keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyDist {
    Uniform,
    Ascending,
    Descending,
    /// A few dense clusters with many repeated keys.
    Clustered,
}

impl FromStr for KeyDist {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "ascending" => Ok(Self::Ascending),
            "descending" => Ok(Self::Descending),
            "clustered" => Ok(Self::Clustered),
            _ => Err(parse_err(
                "key distribution",
                s,
                "expected uniform, ascending, descending or clustered",
            )),
        }
    }
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Ascending => "ascending",
            Self::Descending => "descending",
            Self::Clustered => "clustered",
        })
    }
}

/// Share of inserts in the operation stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mix {
    InsertOnly,
    DeleteOnly,
    Balanced,
    /// Inserts with the given probability.
    InsertHeavy(f64),
    /// Deletes with the given probability.
    DeleteHeavy(f64),
}

impl Mix {
    pub fn insert_probability(&self) -> f64 {
        match *self {
            Self::InsertOnly => 1.0,
            Self::DeleteOnly => 0.0,
            Self::Balanced => 0.5,
            Self::InsertHeavy(p) => p,
            Self::DeleteHeavy(p) => 1.0 - p,
        }
    }
}

impl FromStr for Mix {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let prob = |default: f64| -> Result<f64, ParseError> {
            let p = match arg {
                None => default,
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|e| parse_err("operation mix", s, e.to_string()))?,
            };
            if (0.5..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(parse_err(
                    "operation mix",
                    s,
                    "probability must lie in [0.5, 1]",
                ))
            }
        };
        match (name, arg) {
            ("insert-only", None) => Ok(Self::InsertOnly),
            ("delete-only", None) => Ok(Self::DeleteOnly),
            ("balanced", None) => Ok(Self::Balanced),
            ("insert-heavy", _) => Ok(Self::InsertHeavy(prob(0.75)?)),
            ("delete-heavy", _) => Ok(Self::DeleteHeavy(prob(0.75)?)),
            _ => Err(parse_err(
                "operation mix",
                s,
                "expected insert-only, delete-only, balanced, insert-heavy[:p] or delete-heavy[:p]",
            )),
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsertOnly => f.write_str("insert-only"),
            Self::DeleteOnly => f.write_str("delete-only"),
            Self::Balanced => f.write_str("balanced"),
            Self::InsertHeavy(p) => write!(f, "insert-heavy:{p}"),
            Self::DeleteHeavy(p) => write!(f, "delete-heavy:{p}"),
        }
    }
}

/// Distribution of the quantile index of deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileDist {
    Uniform,
    Fixed(usize),
    /// `i = 1 + ⌊k·u²⌋`, favouring low quantiles.
    FrontLoaded,
}

impl FromStr for QuantileDist {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(Self::Uniform),
            None if s == "front-loaded" => Ok(Self::FrontLoaded),
            Some(("fixed", i)) => match i.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(Self::Fixed(i)),
                _ => Err(parse_err(
                    "quantile distribution",
                    s,
                    "fixed index must be a positive integer",
                )),
            },
            _ => Err(parse_err(
                "quantile distribution",
                s,
                "expected uniform, fixed:<i> or front-loaded",
            )),
        }
    }
}

impl fmt::Display for QuantileDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Fixed(i) => write!(f, "fixed:{i}"),
            Self::FrontLoaded => f.write_str("front-loaded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Op {
    Insert(i64),
    Delete(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub k: usize,
    pub n0: usize,
    pub ops: u64,
    pub seed: u64,
    pub mix: Mix,
    pub dist: KeyDist,
    pub qdist: QuantileDist,
}

impl WorkloadSpec {
    pub fn new(k: usize, n0: usize, ops: u64, seed: u64) -> Self {
        Self {
            k,
            n0,
            ops,
            seed,
            mix: Mix::Balanced,
            dist: KeyDist::Uniform,
            qdist: QuantileDist::Uniform,
        }
    }
}

const KEY_SPACE: i64 = 1 << 40;
const CLUSTERS: usize = 16;
const CLUSTER_WIDTH: i64 = 64;

/// Deterministic stream of operations for a [`WorkloadSpec`]. It tracks the
/// item count itself, assuming every emitted operation succeeds.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    n: usize,
    emitted: u64,
    up: i64,
    down: i64,
    centers: [i64; CLUSTERS],
}

impl Generator {
    pub fn new(spec: WorkloadSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers = std::array::from_fn(|_| rng.random_range(0..KEY_SPACE));
        Self {
            spec,
            rng,
            n: 0,
            emitted: 0,
            up: 0,
            down: -1,
            centers,
        }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    fn key(&mut self) -> i64 {
        match self.spec.dist {
            KeyDist::Uniform => self.rng.random_range(0..KEY_SPACE),
            KeyDist::Ascending => {
                self.up += 1;
                self.up
            }
            KeyDist::Descending => {
                self.down -= 1;
                self.down
            }
            KeyDist::Clustered => {
                let c = self.centers[self.rng.random_range(0..CLUSTERS)];
                c + self.rng.random_range(-CLUSTER_WIDTH..=CLUSTER_WIDTH)
            }
        }
    }

    /// The `n0` keys present before the first operation. For the monotone
    /// distributions they occupy the middle of the key range so that later
    /// inserts land beyond one end.
    pub fn initial_keys(&mut self) -> Vec<i64> {
        let n0 = self.spec.n0;
        self.n = n0;
        match self.spec.dist {
            KeyDist::Ascending | KeyDist::Descending => {
                let keys = (0..n0 as i64).collect();
                self.up = n0 as i64;
                self.down = -1;
                keys
            }
            _ => (0..n0).map(|_| self.key()).collect(),
        }
    }

    fn quantile(&mut self) -> usize {
        let k = self.spec.k;
        let nonempty = |n: usize, i: usize| quantile_bounds(n, k, i).is_some_and(|b| !b.is_empty());
        for _ in 0..64 {
            let i = match self.spec.qdist {
                QuantileDist::Uniform => self.rng.random_range(1..=k),
                QuantileDist::Fixed(i) => i.min(k),
                QuantileDist::FrontLoaded => {
                    let u: f64 = self.rng.random();
                    (1 + (k as f64 * u * u) as usize).min(k)
                }
            };
            if nonempty(self.n, i) {
                return i;
            }
        }
        // the last quantile is non-empty whenever n >= 1
        (1..=k).rev().find(|&i| nonempty(self.n, i)).unwrap_or(k)
    }
}

impl Iterator for Generator {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.emitted >= self.spec.ops {
            return None;
        }
        let p = self.spec.mix.insert_probability();
        let insert = p >= 1.0 || (p > 0.0 && self.rng.random_bool(p));
        let op = if insert || self.n == 0 {
            if self.n == 0 && p == 0.0 {
                return None;
            }
            self.n += 1;
            Op::Insert(self.key())
        } else {
            let i = self.quantile();
            self.n -= 1;
            Op::Delete(i)
        };
        self.emitted += 1;
        Some(op)
    }
}
