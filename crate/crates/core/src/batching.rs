//! Training batch plans.
//!
//! Balanced plans guarantee that the pairs inside every batch realize every
//! rank of the taxonomy at least once. Unconstrained plans are plain shuffled
//! chunks and may miss ranks.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelPath, RankMap};
use crate::rng;

pub const DEFAULT_BATCH_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    Balanced,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub mode: BatchMode,
    pub seed: u64,
    /// Row indices of the dataset, one list per batch.
    pub batches: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// Ranks realized by the pairs of `batch`.
pub fn ranks_in_batch(
    batch: &[usize],
    labels: &[LabelPath],
    rank_map: &RankMap,
) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for (k, &u) in batch.iter().enumerate() {
        for &v in &batch[k + 1..] {
            if let Some(r) = rank_map.rank(&labels[u], &labels[v])? {
                out.insert(r);
            }
        }
    }
    Ok(out)
}

/// Pair ranks restricted to a pool of rows.
struct PoolRanks {
    pool: Vec<usize>,
    ranks: Vec<Option<u8>>,
}

impl PoolRanks {
    fn new(pool: &[usize], labels: &[LabelPath], rank_map: &RankMap) -> Result<Self> {
        let n = pool.len();
        let mut ranks = vec![None; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let r = rank_map.rank(&labels[pool[a]], &labels[pool[b]])?;
                let r = r.map(|r| u8::try_from(r).expect("taxonomy deeper than 255 levels"));
                ranks[a * n + b] = r;
                ranks[b * n + a] = r;
            }
        }
        Ok(PoolRanks {
            pool: pool.to_vec(),
            ranks,
        })
    }

    fn rank(&self, a: usize, b: usize) -> Option<usize> {
        if a == b {
            return None;
        }
        self.ranks[a * self.pool.len() + b].map(usize::from)
    }

    fn covers(&self, members: &[usize], r: usize) -> bool {
        members
            .iter()
            .enumerate()
            .any(|(k, &a)| members[k + 1..].iter().any(|&b| self.rank(a, b) == Some(r)))
    }
}

/// Rank-covering batches of `batch_size` rows drawn from `pool`.
///
/// Each batch starts from a skeleton: for every rank not yet realized, a
/// partner of that rank is attached to an existing member, or a fresh pair of
/// that rank is added. Remaining slots are filled from a shuffled pass over
/// the pool. The plan has `pool.len() / batch_size` batches (at least one).
pub fn plan_balanced(
    pool: &[usize],
    labels: &[LabelPath],
    rank_map: &RankMap,
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    let ranks = PoolRanks::new(pool, labels, rank_map)?;
    let n = pool.len();
    let required: Vec<usize> = (0..=rank_map.tree_height()).collect();

    // anchors[r]: local indices with at least one partner of rank r
    let mut anchors: Vec<Vec<usize>> = vec![Vec::new(); required.len()];
    for a in 0..n {
        for &r in &required {
            if (0..n).any(|b| ranks.rank(a, b) == Some(r)) {
                anchors[r].push(a);
            }
        }
    }
    if let Some(r) = required.iter().copied().find(|&r| anchors[r].is_empty()) {
        return Err(Error::Coverage { rank: r });
    }

    let mut rng = rng::seeded(seed);
    let num_batches = (n / batch_size).max(1);
    let mut queue: Vec<usize> = (0..n).collect();
    queue.shuffle(&mut rng);
    let mut cursor = 0;
    let mut batches = Vec::with_capacity(num_batches);
    let mut in_batch = vec![false; n];

    for _ in 0..num_batches {
        let mut members: Vec<usize> = Vec::with_capacity(batch_size);
        let mut order = required.clone();
        order.shuffle(&mut rng);
        for &r in &order {
            if ranks.covers(&members, r) {
                continue;
            }
            let added = attach_partner(&ranks, &mut members, &mut in_batch, r, &mut rng)
                || add_pair(
                    &ranks,
                    &anchors[r],
                    &mut members,
                    &mut in_batch,
                    r,
                    &mut rng,
                );
            if !added {
                return Err(Error::Coverage { rank: r });
            }
        }
        if members.len() > batch_size {
            return Err(Error::BatchSizeTooSmall {
                needed: members.len(),
                batch_size,
            });
        }
        let target = batch_size.min(n);
        let mut scanned = 0;
        while members.len() < target && scanned < n {
            let a = queue[cursor];
            cursor = (cursor + 1) % n;
            if cursor == 0 {
                queue.shuffle(&mut rng);
            }
            scanned += 1;
            if !in_batch[a] {
                in_batch[a] = true;
                members.push(a);
            }
        }
        for &a in &members {
            in_batch[a] = false;
        }
        batches.push(members.into_iter().map(|a| pool[a]).collect());
    }
    Ok(BatchPlan {
        mode: BatchMode::Balanced,
        seed,
        batches,
    })
}

fn attach_partner(
    ranks: &PoolRanks,
    members: &mut Vec<usize>,
    in_batch: &mut [bool],
    r: usize,
    rng: &mut impl Rng,
) -> bool {
    let mut hosts = members.clone();
    hosts.shuffle(rng);
    let n = ranks.pool.len();
    for m in hosts {
        let candidates: Vec<usize> = (0..n)
            .filter(|&b| !in_batch[b] && ranks.rank(m, b) == Some(r))
            .collect();
        if let Some(&b) = candidates.choose(rng) {
            in_batch[b] = true;
            members.push(b);
            return true;
        }
    }
    false
}

fn add_pair(
    ranks: &PoolRanks,
    anchors: &[usize],
    members: &mut Vec<usize>,
    in_batch: &mut [bool],
    r: usize,
    rng: &mut impl Rng,
) -> bool {
    let n = ranks.pool.len();
    let mut order: Vec<usize> = anchors.iter().copied().filter(|&a| !in_batch[a]).collect();
    order.shuffle(rng);
    for a in order {
        let candidates: Vec<usize> = (0..n)
            .filter(|&b| !in_batch[b] && ranks.rank(a, b) == Some(r))
            .collect();
        if let Some(&b) = candidates.choose(rng) {
            in_batch[a] = true;
            in_batch[b] = true;
            members.push(a);
            members.push(b);
            return true;
        }
    }
    false
}

/// Shuffled consecutive chunks of `batch_size`; a trailing chunk of one row
/// is dropped.
pub fn plan_unconstrained(pool: &[usize], batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch size must be >= 2, got {batch_size}"
        )));
    }
    if pool.len() < 2 {
        return Err(Error::BatchTooSmall(pool.len()));
    }
    let mut rows = pool.to_vec();
    rows.shuffle(&mut rng::seeded(seed));
    let batches = rows
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(BatchPlan {
        mode: BatchMode::Unconstrained,
        seed,
        batches,
    })
}
