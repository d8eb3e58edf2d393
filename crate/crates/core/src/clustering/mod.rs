//! Ward-linkage agglomerative clustering over latent embeddings.
//!
//! Heights are the Ward merge cost `(na nb / (na + nb)) |mu_a - mu_b|^2` on
//! squared Euclidean distance, not its square root.

use serde::Serialize;

use crate::generators::{LatentKind, LatentVector};
use crate::rng::SplitMix64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    Dim { index: usize, expected: usize, got: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("k = {k} is outside 1..={n}")]
    K { k: usize, n: usize },
    #[error("m = {m} exceeds the {max} available pairs")]
    M { m: usize, max: usize },
    #[error("labelings have lengths {0} and {1}")]
    Length(usize, usize),
}

fn check_points<P: AsRef<[f64]>>(points: &[P], need: usize) -> Result<usize, ClusterError> {
    if points.len() < need {
        return Err(ClusterError::TooFew { need, got: points.len() });
    }
    let dim = points[0].as_ref().len();
    for (index, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(ClusterError::Dim { index, expected: dim, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(index));
        }
    }
    Ok(dim)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major `n x n` matrix of squared Euclidean distances.
pub fn pairwise_sq_dist<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<Vec<f64>>, ClusterError> {
    check_points(points, 2)?;
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(points[i].as_ref(), points[j].as_ref());
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    /// Smaller of the two child ids.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Leaves are ids `0..n`; merge `i` creates id `n + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// `{"n": n, "merges": [[left, right, height, size], ...]}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Json {
            n: usize,
            merges: Vec<(usize, usize, f64, usize)>,
        }
        let merges = self.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect();
        serde_json::to_string(&Json { n: self.n_leaves, merges }).expect("serializable")
    }
}

/// Greedy Ward agglomeration with Lance-Williams updates. Ties go to the
/// lexicographically smallest `(left id, right id)`.
pub fn ward_agglomerate<P: AsRef<[f64]>>(points: &[P]) -> Result<Dendrogram, ClusterError> {
    let mut d = pairwise_sq_dist(points)?;
    let n = points.len();
    for row in d.iter_mut() {
        for v in row.iter_mut() {
            *v *= 0.5;
        }
    }
    // Slot i holds cluster ids[i] while active[i].
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            for b in a + 1..n {
                if !active[b] {
                    continue;
                }
                let (lo, hi) = if ids[a] < ids[b] { (ids[a], ids[b]) } else { (ids[b], ids[a]) };
                let cand = (d[a][b], lo, hi, a, b);
                let better = match best {
                    None => true,
                    Some((bd, bl, bh, _, _)) => {
                        cand.0 < bd || (cand.0 == bd && (lo, hi) < (bl, bh))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (height, left, right, a, b) = best.expect("at least two active clusters");
        let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
        for c in 0..n {
            if !active[c] || c == a || c == b {
                continue;
            }
            let nc = sizes[c] as f64;
            let v = ((na + nc) * d[a][c] + (nb + nc) * d[b][c] - nc * height) / (na + nb + nc);
            d[a][c] = v;
            d[c][a] = v;
        }
        active[b] = false;
        sizes[a] += sizes[b];
        ids[a] = n + step;
        merges.push(Merge { left, right, height, size: sizes[a] });
    }
    Ok(Dendrogram { n_leaves: n, merges })
}

/// Flat cluster index per leaf, `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeling {
    labels: Vec<usize>,
}

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct clusters.
    pub fn k(&self) -> usize {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Labels renumbered by first appearance.
    fn canonical(&self) -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        self.labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect()
    }
}

/// Undoes the last `k - 1` merges. Clusters are numbered by their smallest
/// leaf, ascending.
pub fn cut_k(tree: &Dendrogram, k: usize) -> Result<Labeling, ClusterError> {
    let n = tree.n_leaves;
    if k < 1 || k > n {
        return Err(ClusterError::K { k, n });
    }
    // Union-find over node ids 0..2n-1, applying the first n - k merges.
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, m) in tree.merges.iter().take(n - k).enumerate() {
        let node = n + i;
        let (l, r) = (root(&mut parent, m.left), root(&mut parent, m.right));
        parent[l] = node;
        parent[r] = node;
    }
    let mut label_of = std::collections::HashMap::new();
    let labels = (0..n)
        .map(|leaf| {
            let r = root(&mut parent, leaf);
            let next = label_of.len();
            *label_of.entry(r).or_insert(next)
        })
        .collect();
    Ok(Labeling { labels })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub sq_dist: f64,
}

/// The `m` closest unordered pairs, ascending by squared distance, ties by
/// `(i, j)`.
pub fn closest_pairs<P: AsRef<[f64]>>(points: &[P], m: usize) -> Result<Vec<Pair>, ClusterError> {
    let d = pairwise_sq_dist(points)?;
    let n = points.len();
    let max = n * (n - 1) / 2;
    if m > max {
        return Err(ClusterError::M { m, max });
    }
    let mut pairs = Vec::with_capacity(max);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(Pair { i, j, sq_dist: d[i][j] });
        }
    }
    pairs.sort_by(|a, b| a.sq_dist.total_cmp(&b.sq_dist).then((a.i, a.j).cmp(&(b.i, b.j))));
    pairs.truncate(m);
    Ok(pairs)
}

/// CSV with header `rank,i,j,sq_dist`; ranks start at 1.
pub fn pairs_csv(pairs: &[Pair]) -> String {
    let mut s = String::from("rank,i,j,sq_dist\n");
    for (r, p) in pairs.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", r + 1, p.i, p.j, p.sq_dist));
    }
    s
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table. When the maximum and
/// expected index coincide the result is 1 for identical partitions and 0
/// otherwise.
pub fn adjusted_rand_index(a: &Labeling, b: &Labeling) -> Result<f64, ClusterError> {
    if a.len() != b.len() {
        return Err(ClusterError::Length(a.len(), b.len()));
    }
    let (ca, cb) = (a.canonical(), b.canonical());
    let ka = ca.iter().max().map_or(0, |m| m + 1);
    let kb = cb.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in ca.iter().zip(&cb) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| choose2(table.iter().map(|row| row[j]).sum())).sum();
    let expected = sum_a * sum_b / choose2(a.len()).max(f64::MIN_POSITIVE);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(if ca == cb { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Component means sit at `+-MIXTURE_OFFSET` on latent coordinates 0 and 1.
pub const MIXTURE_OFFSET: f64 = 2.0;
pub const MIXTURE_SIGMA: f64 = 0.3;

/// `n` latents from a balanced four-component Gaussian mixture with
/// isotropic spread `MIXTURE_SIGMA`; point `i` belongs to component `i % 4`.
/// Component `c` has mean `(+-2, +-2, 0, ...)` with the sign of coordinate 0
/// from bit 1 of `c` and of coordinate 1 from bit 0.
pub fn gaussian_mixture(
    rng: &mut SplitMix64,
    n: usize,
    dim: usize,
) -> (Vec<LatentVector>, Labeling) {
    assert!(dim >= 2, "mixture needs at least two latent coordinates");
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        let sign = |bit: usize| if c >> bit & 1 == 1 { 1.0 } else { -1.0 };
        let values = (0..dim)
            .map(|d| {
                let mean = match d {
                    0 => sign(1) * MIXTURE_OFFSET,
                    1 => sign(0) * MIXTURE_OFFSET,
                    _ => 0.0,
                };
                mean + MIXTURE_SIGMA * rng.normal()
            })
            .collect();
        points.push(LatentVector::new(LatentKind::W, values));
        labels.push(c);
    }
    (points, Labeling::new(labels))
}
