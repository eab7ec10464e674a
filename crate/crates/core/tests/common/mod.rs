#![allow(dead_code)]

use hierank::LabelPath;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Explicit tree with parent pointers, every leaf at depth `height`.
pub struct OracleTree {
    pub parent: Vec<Option<usize>>,
    pub label: Vec<String>,
    pub depth: Vec<usize>,
    pub height: usize,
}

impl OracleTree {
    /// Random tree of the given height, at most `max_leaves` leaves. Sibling
    /// labels are unique but the same string reappears under other parents.
    pub fn random(
        rng: &mut impl Rng,
        height: usize,
        max_children: usize,
        max_leaves: usize,
    ) -> Self {
        loop {
            let mut t = OracleTree {
                parent: vec![None],
                label: vec![String::new()],
                depth: vec![0],
                height,
            };
            let mut frontier = vec![0];
            for level in 1..=height {
                let mut next = Vec::new();
                for &p in &frontier {
                    for c in 0..rng.random_range(1..=max_children) {
                        t.parent.push(Some(p));
                        t.label.push(["a", "b", "c", "d", "e"][c].to_string());
                        t.depth.push(level);
                        next.push(t.parent.len() - 1);
                    }
                }
                frontier = next;
            }
            if frontier.len() <= max_leaves {
                return t;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&v| self.depth[v] == self.height)
            .collect()
    }

    /// Root excluded, self included, deepest first.
    pub fn ancestors(&self, mut v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while let Some(p) = self.parent[v] {
            out.push(v);
            v = p;
        }
        out
    }

    pub fn path(&self, v: usize) -> LabelPath {
        let mut segs: Vec<&str> = self
            .ancestors(v)
            .iter()
            .map(|&u| self.label[u].as_str())
            .collect();
        segs.reverse();
        LabelPath::new(segs).unwrap()
    }

    /// Rank by walking ancestor chains; `None` when one node lies on the
    /// other's chain and they are not the same leaf.
    pub fn rank(&self, a: usize, b: usize) -> Option<usize> {
        let up_a = self.ancestors(a);
        let up_b = self.ancestors(b);
        let lca_depth = up_a
            .iter()
            .filter(|u| up_b.contains(u))
            .map(|&u| self.depth[u])
            .max()
            .unwrap_or(0);
        if a == b && self.depth[a] == self.height {
            return Some(0);
        }
        if up_a.contains(&b) || up_b.contains(&a) {
            return None;
        }
        Some(self.height - lca_depth)
    }
}

/// Rank-based loss computed straight from the definition by counting, with
/// no sorting of pair indices.
pub fn brute_rbl(e: &Array2<f64>, ranks: &[Option<usize>]) -> Option<f64> {
    let n = e.nrows();
    let mut d = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = (0..e.ncols()).map(|k| e[[i, k]] * e[[j, k]]).sum();
            d.push((1.0 - dot).clamp(0.0, 2.0));
        }
    }
    let inc: Vec<usize> = (0..d.len()).filter(|&p| ranks[p].is_some()).collect();
    if inc.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = inc.iter().map(|&p| d[p]).collect();
    sorted.sort_by(f64::total_cmp);
    let mut loss = 0.0;
    for &p in &inc {
        let r = ranks[p].unwrap();
        let start = inc.iter().filter(|&&q| ranks[q].unwrap() < r).count();
        let count = inc.iter().filter(|&&q| ranks[q].unwrap() == r).count();
        let target = sorted[start + count / 2];
        let below = inc.iter().filter(|&&q| d[q] < d[p]).count();
        let tied = inc.iter().filter(|&&q| d[q] == d[p]).count();
        let fits = (below..below + tied).any(|pos| pos >= start && pos < start + count);
        if !fits {
            loss += (d[p] - target).powi(2);
        }
    }
    Some(loss / inc.len() as f64)
}

/// Unit embeddings whose cosine distance is a strictly decreasing function of
/// the shared label prefix length: one coordinate per distinct prefix,
/// weighted by `weights[level]`.
pub fn hierarchical_embedding(labels: &[LabelPath], weights: &[f64]) -> Array2<f64> {
    let mut prefixes: Vec<Vec<String>> = Vec::new();
    for l in labels {
        for level in 1..=l.len() {
            let p = l.prefix(level).unwrap().to_vec();
            if !prefixes.contains(&p) {
                prefixes.push(p);
            }
        }
    }
    let mut e = Array2::zeros((labels.len(), prefixes.len()));
    for (row, l) in labels.iter().enumerate() {
        for level in 1..=l.len() {
            let p = l.prefix(level).unwrap();
            let col = prefixes.iter().position(|q| q == p).unwrap();
            e[[row, col]] = weights[level - 1];
        }
        let norm = e.row(row).dot(&e.row(row)).sqrt();
        e.row_mut(row).mapv_inplace(|x| x / norm);
    }
    e
}

/// Row-major `i < j` pair list matching the library's pair order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}
