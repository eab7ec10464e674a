//! Label taxonomy and pair ranks.
//!
//! A label is a path from the root-most level down to the leaf, written
//! `coarse/fine` (or deeper). The rank of a pair of labels is the number of
//! levels below their deepest common ancestor: identical full labels have
//! rank 0, labels that only share the root have rank `L` for a tree of
//! height `L`.
//!
//! Paths may be truncated (an example whose fine class is unknown). A pair is
//! ranked only when its known prefixes are enough to locate the common
//! ancestor; otherwise the rank is undetermined and the pair is left out of
//! the loss.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEPARATOR: char = '/';

/// Label of one example, root-most level first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LabelPath(Vec<String>);

impl LabelPath {
    pub fn new<I, S>(segments: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty()
            || segments
                .iter()
                .any(|s| s.is_empty() || s.contains(SEPARATOR))
        {
            return Err(Error::InvalidLabel(segments.join("/")));
        }
        Ok(LabelPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The first `level` segments, or `None` if the path is shorter.
    pub fn prefix(&self, level: usize) -> Option<&[String]> {
        self.0.get(..level)
    }

    /// Top-level class.
    pub fn coarse(&self) -> &str {
        &self.0[0]
    }

    /// Number of leading segments shared with `other`.
    pub fn common_prefix_len(&self, other: &LabelPath) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .take_while(|(a, b)| a == b)
            .count()
    }
}

impl fmt::Display for LabelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

impl FromStr for LabelPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelPath::new(s.split(SEPARATOR)).map_err(|_| Error::InvalidLabel(s.to_string()))
    }
}

impl TryFrom<String> for LabelPath {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LabelPath> for String {
    fn from(p: LabelPath) -> String {
        p.to_string()
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct Node {
    pub level: usize,
    pub label: String,
    pub parent: Option<NodeId>,
    children: BTreeMap<String, NodeId>,
}

impl Node {
    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.values().copied()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Rooted taxonomy with every leaf at depth `height`.
#[derive(Debug, Clone)]
pub struct LabelTree {
    nodes: Vec<Node>,
    height: usize,
}

impl LabelTree {
    pub const ROOT: NodeId = 0;

    /// Builds the smallest tree containing every path.
    ///
    /// The longest path fixes the height. Shorter paths are treated as
    /// truncated labels and must end on a node that some full-depth path
    /// passes through.
    pub fn build<'a, I>(paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabelPath>,
    {
        let paths: BTreeSet<&LabelPath> = paths.into_iter().collect();
        let height = paths
            .iter()
            .map(|p| p.len())
            .max()
            .ok_or(Error::EmptyTaxonomy)?;
        let mut tree = LabelTree {
            nodes: vec![Node {
                level: 0,
                label: String::new(),
                parent: None,
                children: BTreeMap::new(),
            }],
            height,
        };
        for path in paths.iter().filter(|p| p.len() == height) {
            tree.insert(path);
        }
        for path in paths.iter().filter(|p| p.len() < height) {
            match tree.find(path) {
                Some(id) if !tree.nodes[id].is_leaf() => {}
                _ => {
                    return Err(Error::InconsistentDepth {
                        path: path.to_string(),
                        len: path.len(),
                        depth: height,
                    })
                }
            }
        }
        Ok(tree)
    }

    fn insert(&mut self, path: &LabelPath) {
        let mut at = Self::ROOT;
        for seg in path.segments() {
            at = match self.nodes[at].children.get(seg) {
                Some(&child) => child,
                None => {
                    let id = self.nodes.len();
                    let level = self.nodes[at].level + 1;
                    self.nodes.push(Node {
                        level,
                        label: seg.clone(),
                        parent: Some(at),
                        children: BTreeMap::new(),
                    });
                    self.nodes[at].children.insert(seg.clone(), id);
                    id
                }
            };
        }
    }

    /// Node reached by following `path` from the root.
    pub fn find(&self, path: &LabelPath) -> Option<NodeId> {
        path.segments().iter().try_fold(Self::ROOT, |at, seg| {
            self.nodes[at].children.get(seg).copied()
        })
    }

    pub fn contains(&self, path: &LabelPath) -> bool {
        self.find(path).is_some()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&id| self.nodes[id].is_leaf())
    }

    /// Internal nodes excluding the root.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..self.nodes.len()).filter(|&id| !self.nodes[id].is_leaf())
    }

    /// Rank of a pair, `None` when a truncated label hides the common ancestor.
    pub fn pair_rank(&self, a: &LabelPath, b: &LabelPath) -> Result<Option<usize>> {
        for p in [a, b] {
            if !self.contains(p) {
                return Err(Error::UnknownLabel(p.to_string()));
            }
        }
        Ok(rank_of_known(a, b, self.height))
    }
}

/// Rank for two labels already known to be in a tree of the given height.
fn rank_of_known(a: &LabelPath, b: &LabelPath, height: usize) -> Option<usize> {
    let common = a.common_prefix_len(b);
    if common < a.len().min(b.len()) {
        Some(height - common)
    } else if a.len() == height && b.len() == height {
        Some(0)
    } else {
        None
    }
}

/// Pair ranks for a fixed set of labels.
#[derive(Debug, Clone)]
pub struct RankMap {
    index: HashMap<LabelPath, usize>,
    ranks: Vec<Option<u32>>,
    distinct: usize,
    num_ranks: usize,
    present: BTreeSet<usize>,
    height: usize,
}

impl RankMap {
    pub fn build<'a, I>(tree: &LabelTree, paths: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a LabelPath>,
    {
        let mut distinct: Vec<&LabelPath> = paths.into_iter().collect();
        if distinct.is_empty() {
            return Err(Error::EmptyTaxonomy);
        }
        distinct.sort();
        distinct.dedup();
        let n = distinct.len();
        let mut ranks = vec![None; n * n];
        let mut present = BTreeSet::new();
        for i in 0..n {
            for j in i..n {
                let r = tree.pair_rank(distinct[i], distinct[j])?;
                ranks[i * n + j] = r.map(|r| r as u32);
                ranks[j * n + i] = r.map(|r| r as u32);
                if let Some(r) = r {
                    // rank 0 needs two examples with one label; callers that
                    // care about realizability check it against their data.
                    present.insert(r);
                }
            }
        }
        let num_ranks = present.iter().next_back().map_or(1, |&m| m + 1);
        Ok(RankMap {
            index: distinct
                .iter()
                .enumerate()
                .map(|(i, p)| ((*p).clone(), i))
                .collect(),
            ranks,
            distinct: n,
            num_ranks,
            present,
            height: tree.height(),
        })
    }

    pub fn rank(&self, a: &LabelPath, b: &LabelPath) -> Result<Option<usize>> {
        let i = self.slot(a)?;
        let j = self.slot(b)?;
        Ok(self.ranks[i * self.distinct + j].map(|r| r as usize))
    }

    fn slot(&self, p: &LabelPath) -> Result<usize> {
        self.index
            .get(p)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(p.to_string()))
    }

    /// One past the largest rank among the mapped labels.
    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    /// Ranks realized by at least one pair of mapped labels.
    pub fn present_ranks(&self) -> &BTreeSet<usize> {
        &self.present
    }

    pub fn tree_height(&self) -> usize {
        self.height
    }

    /// Rank of every pair `(i, j)`, `i < j`, of a batch, in row-major pair order.
    pub fn batch_ranks(&self, labels: &[&LabelPath]) -> Result<Vec<Option<usize>>> {
        let n = labels.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.rank(labels[i], labels[j])?);
            }
        }
        Ok(out)
    }
}
