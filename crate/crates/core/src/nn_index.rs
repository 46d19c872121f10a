//! Exact nearest-neighbour scans over reference sets.
//!
//! References are regrouped into blocks of [`LANES`] vectors stored
//! dimension-major, so one pass over the dimensions updates [`LANES`]
//! independent accumulators. Each accumulator sees the same operations in the
//! same order as a plain per-pair loop, which keeps results bit-identical to
//! the scalar definitions while the inner loop vectorizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{DiagonalGaussian, LOG_CHUNK};
use crate::vae::bernoulli_hellinger;

pub const LANES: usize = 8;

/// Closest reference and its distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist: f64,
    /// Original position of the reference, see `ids()`.
    pub id: usize,
}

#[derive(Debug, Clone)]
struct Blocks {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Blocks {
    fn new(rows: &[f64], d: usize, pad: f64) -> Self {
        let n = rows.len() / d;
        let nb = n.div_ceil(LANES);
        let mut data = vec![pad; nb * d * LANES];
        for i in 0..n {
            let (b, lane) = (i / LANES, i % LANES);
            for j in 0..d {
                data[(b * d + j) * LANES + lane] = rows[i * d + j];
            }
        }
        Blocks { n, d, data }
    }

    fn row(&self, i: usize) -> Vec<f64> {
        let (b, lane) = (i / LANES, i % LANES);
        (0..self.d).map(|j| self.data[(b * self.d + j) * LANES + lane]).collect()
    }

    fn rows(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.row(i)).collect()
    }

    fn blocks(&self) -> usize {
        self.n.div_ceil(LANES)
    }

    #[inline]
    fn lane(&self, b: usize, j: usize) -> &[f64; LANES] {
        let at = (b * self.d + j) * LANES;
        self.data[at..at + LANES].try_into().unwrap()
    }
}

/// Minimum over blocks of per-lane distances, lowest position on ties.
fn scan(n: usize, blocks: usize, block_dist: impl Fn(usize) -> [f64; LANES]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for b in 0..blocks {
        let dists = block_dist(b);
        for (lane, &dist) in dists.iter().enumerate() {
            let pos = b * LANES + lane;
            if pos < n && dist < best.0 {
                best = (dist, pos);
            }
        }
    }
    best
}

pub(crate) fn subsample_positions(n: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > n {
        return Err(Error::config(format!("subsample count {count} outside 1..={n}")));
    }
    let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Squared Euclidean nearest neighbours.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    blocks: Blocks,
    ids: Vec<usize>,
}

impl VectorIndex {
    /// Index over `rows.len() / d` row-major vectors.
    pub fn new(rows: &[f64], d: usize) -> Result<Self> {
        if d == 0 || rows.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        if !rows.len().is_multiple_of(d) {
            return Err(Error::data(format!("{} values do not form rows of {d}", rows.len())));
        }
        let blocks = Blocks::new(rows, d, 0.0);
        let ids = (0..blocks.n).collect();
        Ok(VectorIndex { blocks, ids })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim(d, r.len())?;
        }
        VectorIndex::new(&rows.concat(), d)
    }

    pub fn len(&self) -> usize {
        self.blocks.n
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.n == 0
    }

    pub fn dim(&self) -> usize {
        self.blocks.d
    }

    /// Original positions of the indexed vectors.
    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.blocks.row(k)
    }

    /// Exact minimum of `|query - y|^2` over the set.
    pub fn nearest_sq_dist(&self, query: &[f64]) -> Result<Neighbor> {
        check_dim(self.dim(), query.len())?;
        Ok(self.nearest_unchecked(query))
    }

    fn nearest_unchecked(&self, q: &[f64]) -> Neighbor {
        let bl = &self.blocks;
        let (dist, pos) = scan(bl.n, bl.blocks(), |b| {
            let mut acc = [0.0; LANES];
            for (j, &qj) in q.iter().enumerate() {
                let y = bl.lane(b, j);
                for l in 0..LANES {
                    let t = qj - y[l];
                    acc[l] += t * t;
                }
            }
            acc
        });
        Neighbor {
            dist,
            id: self.ids[pos],
        }
    }

    /// [`VectorIndex::nearest_sq_dist`] for every row of `queries`.
    pub fn batch_nearest(&self, queries: &[f64]) -> Result<Vec<Neighbor>> {
        let d = self.dim();
        if !queries.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                actual: queries.len() % d,
            });
        }
        Ok(queries.par_chunks(d).map(|q| self.nearest_unchecked(q)).collect())
    }

    /// `count` vectors drawn uniformly without replacement, in original order.
    pub fn subsample(&self, count: usize, seed: u64) -> Result<Self> {
        let pos = subsample_positions(self.len(), count, seed)?;
        Ok(VectorIndex {
            blocks: Blocks::new(&self.blocks.rows(&pos), self.dim(), 0.0),
            ids: pos.iter().map(|&p| self.ids[p]).collect(),
        })
    }
}

/// Bhattacharyya nearest neighbours among diagonal Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianIndex {
    mean: Blocks,
    sd: Blocks,
    ids: Vec<usize>,
}

impl GaussianIndex {
    pub fn new(components: &[DiagonalGaussian]) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("reference set"))?;
        let d = first.dim();
        let mut means = Vec::with_capacity(components.len() * d);
        let mut sds = Vec::with_capacity(components.len() * d);
        for g in components {
            check_dim(d, g.dim())?;
            means.extend_from_slice(g.mean());
            sds.extend(g.std_dev());
        }
        Ok(GaussianIndex {
            mean: Blocks::new(&means, d, 0.0),
            sd: Blocks::new(&sds, d, 1.0),
            ids: (0..components.len()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.n
    }

    pub fn is_empty(&self) -> bool {
        self.mean.n == 0
    }

    pub fn dim(&self) -> usize {
        self.mean.d
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Exact minimum Bhattacharyya distance from `query` to the set.
    pub fn nearest(&self, query: &DiagonalGaussian) -> Result<Neighbor> {
        check_dim(self.dim(), query.dim())?;
        let (mq, sq) = (query.mean(), query.std_dev());
        let d = self.dim();
        let (dist, pos) = scan(self.len(), self.mean.blocks(), |b| {
            let mut quad = [0.0; LANES];
            let mut logs = [0.0; LANES];
            let mut excess = [0.0; LANES];
            for j in 0..d {
                let (m, s) = (self.mean.lane(b, j), self.sd.lane(b, j));
                let (mj, sj) = (mq[j], sq[j]);
                for l in 0..LANES {
                    let dm = mj - m[l];
                    let avg = (sj * sj + s[l] * s[l]) * 0.5;
                    quad[l] += dm * dm / avg;
                    let ds = sj - s[l];
                    let e = ds * ds / (2.0 * (sj * s[l]));
                    excess[l] = excess[l] + e + excess[l] * e;
                }
                if (j + 1) % LOG_CHUNK == 0 {
                    for l in 0..LANES {
                        logs[l] += excess[l].ln_1p();
                        excess[l] = 0.0;
                    }
                }
            }
            if !d.is_multiple_of(LOG_CHUNK) {
                for l in 0..LANES {
                    logs[l] += excess[l].ln_1p();
                }
            }
            std::array::from_fn(|l| 0.125 * quad[l] + 0.5 * logs[l])
        });
        Ok(Neighbor {
            dist,
            id: self.ids[pos],
        })
    }

    pub fn batch_nearest(&self, queries: &[DiagonalGaussian]) -> Result<Vec<Neighbor>> {
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }

    pub fn subsample(&self, count: usize, seed: u64) -> Result<Self> {
        let pos = subsample_positions(self.len(), count, seed)?;
        Ok(GaussianIndex {
            mean: Blocks::new(&self.mean.rows(&pos), self.dim(), 0.0),
            sd: Blocks::new(&self.sd.rows(&pos), self.dim(), 1.0),
            ids: pos.iter().map(|&p| self.ids[p]).collect(),
        })
    }
}

/// Bhattacharyya nearest neighbours among independent Bernoulli vectors,
/// given by their success probabilities.
#[derive(Debug, Clone)]
pub struct BernoulliIndex {
    p: Blocks,
    ids: Vec<usize>,
}

impl BernoulliIndex {
    pub fn new(probs: &[Vec<f64>]) -> Result<Self> {
        let d = probs.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::Empty("reference set"));
        }
        for p in probs {
            check_dim(d, p.len())?;
        }
        Ok(BernoulliIndex {
            p: Blocks::new(&probs.concat(), d, 0.5),
            ids: (0..probs.len()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.p.n
    }

    pub fn is_empty(&self) -> bool {
        self.p.n == 0
    }

    pub fn dim(&self) -> usize {
        self.p.d
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn nearest(&self, query: &[f64]) -> Result<Neighbor> {
        check_dim(self.dim(), query.len())?;
        let d = self.dim();
        let (dist, pos) = scan(self.len(), self.p.blocks(), |b| {
            let mut logs = [0.0; LANES];
            let mut short = [0.0; LANES];
            for (j, &qj) in query.iter().enumerate() {
                let p = self.p.lane(b, j);
                for l in 0..LANES {
                    let h = bernoulli_hellinger(qj, p[l]);
                    short[l] = short[l] + h - short[l] * h;
                }
                if (j + 1) % LOG_CHUNK == 0 {
                    for l in 0..LANES {
                        logs[l] += (-short[l]).ln_1p();
                        short[l] = 0.0;
                    }
                }
            }
            if !d.is_multiple_of(LOG_CHUNK) {
                for l in 0..LANES {
                    logs[l] += (-short[l]).ln_1p();
                }
            }
            logs.map(|v| -v)
        });
        Ok(Neighbor {
            dist,
            id: self.ids[pos],
        })
    }

    pub fn batch_nearest(&self, queries: &[Vec<f64>]) -> Result<Vec<Neighbor>> {
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }

    pub fn subsample(&self, count: usize, seed: u64) -> Result<Self> {
        let pos = subsample_positions(self.len(), count, seed)?;
        Ok(BernoulliIndex {
            p: Blocks::new(&self.p.rows(&pos), self.dim(), 0.5),
            ids: pos.iter().map(|&p| self.ids[p]).collect(),
        })
    }
}
