//! Structural-proximity embeddings from biased random walks.
//!
//! Walks follow the second-order scheme: from node `v`, having arrived
//! from `t`, the unnormalized weight of stepping to neighbor `w` is `1/p`
//! if `w == t`, `1` if `w` is a common neighbor of `t` and `v`, and `1/q`
//! otherwise. The walk corpus then trains skip-gram with negative
//! sampling; the input-side vectors are the embedding matrix.
//!
//! Walk generation derives one RNG stream per `(seed, start node, walk
//! index)`, so the corpus is identical no matter how many worker threads
//! produce it. Skip-gram training is single-threaded for bit-stable
//! results.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{CsrAdjacency, GraphBundle, NodeId};
use crate::rng::{derive_rng, derive_seed};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<NodeId>>,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, PartialEq, Debug)]
pub struct EmbeddingMatrix {
    vectors: Array2<f32>,
}

impl EmbeddingMatrix {
    pub fn new(vectors: Array2<f32>) -> Result<EmbeddingMatrix> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(EmbeddingMatrix { vectors })
    }

    pub fn num_nodes(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row(&self, n: NodeId) -> &[f32] {
        self.vectors
            .row(n as usize)
            .to_slice()
            .expect("row-major embedding storage")
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }
}

/// Unnormalized second-order transition weights over `cur`'s neighbors,
/// given that the walk arrived from `prev`.
pub fn transition_weights(
    adj: &CsrAdjacency,
    prev: NodeId,
    cur: NodeId,
    p: f64,
    q: f64,
) -> Vec<f64> {
    adj.neighbors(cur)
        .iter()
        .map(|&w| {
            if w == prev {
                1.0 / p
            } else if adj.has_edge(w, prev) {
                1.0
            } else {
                1.0 / q
            }
        })
        .collect()
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn single_walk(
    adj: &CsrAdjacency,
    start: NodeId,
    walk_length: usize,
    p: f64,
    q: f64,
    seed: u64,
) -> Vec<NodeId> {
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut walk = Vec::with_capacity(walk_length);
    walk.push(start);
    let neighbors = adj.neighbors(start);
    let first = neighbors[rng.random_range(0..neighbors.len())];
    walk.push(first);
    while walk.len() < walk_length {
        let cur = walk[walk.len() - 1];
        let prev = walk[walk.len() - 2];
        let weights = transition_weights(adj, prev, cur, p, q);
        let next = adj.neighbors(cur)[sample_index(&weights, &mut rng)];
        walk.push(next);
    }
    walk
}

/// Generates `walks_per_node` biased walks of `walk_length` nodes from
/// every non-isolated node. Isolated nodes produce no walks.
pub fn generate_walks(
    bundle: &GraphBundle,
    p: f64,
    q: f64,
    walk_length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Result<WalkCorpus> {
    if !(p > 0.0) || !(q > 0.0) {
        return Err(Error::invalid("node2vec requires p > 0 and q > 0"));
    }
    if walk_length < 2 {
        return Err(Error::invalid("walk_length must be >= 2"));
    }
    let adj = bundle.adjacency();
    let jobs: Vec<(NodeId, usize)> = (0..bundle.num_nodes() as NodeId)
        .filter(|&n| adj.degree(n) > 0)
        .flat_map(|n| (0..walks_per_node).map(move |i| (n, i)))
        .collect();
    let walks: Vec<Vec<NodeId>> = jobs
        .par_iter()
        .map(|&(node, idx)| {
            let walk_seed = derive_seed(seed, "walk", &[u64::from(node), idx as u64]);
            single_walk(adj, node, walk_length, p, q, walk_seed)
        })
        .collect();
    Ok(WalkCorpus {
        walks,
        walk_length,
        walks_per_node,
        p,
        q,
    })
}

/// One skip-gram-with-negative-sampling partial update: nudges `target`
/// immediately and accumulates the center-side gradient into
/// `center_step` (applied by the caller after the negatives), exactly the
/// gradient of the pairwise logistic loss at the pre-update values.
pub fn sgns_accumulate<S: Scalar>(
    center: &[S],
    target: &mut [S],
    positive: bool,
    lr: S,
    center_step: &mut [S],
) {
    let mut dot = S::zero();
    for (c, t) in center.iter().zip(target.iter()) {
        dot = dot + *c * *t;
    }
    let sig = S::one() / (S::one() + (-dot).exp());
    let label = if positive { S::one() } else { S::zero() };
    let g = lr * (label - sig);
    for ((c, t), step) in center.iter().zip(target.iter_mut()).zip(center_step.iter_mut()) {
        *step = *step + g * *t;
        *t = *t + g * *c;
    }
}

struct NegativeTable {
    cumulative: Vec<f64>,
}

impl NegativeTable {
    /// Unigram distribution proportional to degree^(3/4); zero-degree
    /// nodes never get drawn.
    fn new(degrees: &[u32]) -> Result<NegativeTable> {
        let mut cumulative = Vec::with_capacity(degrees.len());
        let mut total = 0.0f64;
        for &d in degrees {
            total += f64::from(d).powf(0.75);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(Error::invalid("negative sampling needs a nonempty graph"));
        }
        Ok(NegativeTable { cumulative })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> NodeId {
        let total = *self.cumulative.last().unwrap();
        let draw = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= draw) as NodeId
    }
}

/// Trains skip-gram with negative sampling over the walk corpus and
/// returns the input-side vectors.
///
/// `degrees` drives the negative-sampling distribution (degree^(3/4))
/// and fixes the number of embedding rows. With `epochs == 0` the
/// initialization is returned untouched.
pub fn train_skipgram(
    corpus: &WalkCorpus,
    degrees: &[u32],
    dim: usize,
    window: usize,
    negatives_per_positive: usize,
    epochs: usize,
    learning_rate: f32,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if corpus.walks.is_empty() {
        return Err(Error::invalid("walk corpus is empty"));
    }
    if dim == 0 || window == 0 {
        return Err(Error::invalid("dim and window must be >= 1"));
    }
    let n = degrees.len();

    let mut rng = derive_rng(seed, "embed-init", &[]);
    let bound = 0.5 / dim as f32;
    let mut input = Array2::<f32>::zeros((n, dim));
    for v in input.iter_mut() {
        *v = f32::sample_uniform(&mut rng, -bound, bound);
    }
    if epochs == 0 {
        return EmbeddingMatrix::new(input);
    }
    let mut output = vec![0.0f32; n * dim];
    let table = NegativeTable::new(degrees)?;

    let input_flat = input
        .as_slice_mut()
        .expect("row-major embedding storage");
    let mut rng = derive_rng(seed, "sgns", &[]);
    let mut center_step = vec![0.0f32; dim];
    for _ in 0..epochs {
        for walk in &corpus.walks {
            for (pos, &center) in walk.iter().enumerate() {
                let lo = pos.saturating_sub(window);
                let hi = (pos + window).min(walk.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = walk[ctx_pos];
                    center_step.fill(0.0);
                    {
                        let (c_row, t_row) = rows_mut(
                            input_flat,
                            &mut output,
                            center as usize,
                            context as usize,
                            dim,
                        );
                        sgns_accumulate(c_row, t_row, true, learning_rate, &mut center_step);
                    }
                    for _ in 0..negatives_per_positive {
                        let mut negative = table.sample(&mut rng);
                        let mut tries = 0;
                        while negative == context && tries < 100 {
                            negative = table.sample(&mut rng);
                            tries += 1;
                        }
                        let (c_row, t_row) = rows_mut(
                            input_flat,
                            &mut output,
                            center as usize,
                            negative as usize,
                            dim,
                        );
                        sgns_accumulate(c_row, t_row, false, learning_rate, &mut center_step);
                    }
                    let c_row = &mut input_flat[center as usize * dim..(center as usize + 1) * dim];
                    for (c, s) in c_row.iter_mut().zip(&center_step) {
                        *c += *s;
                    }
                }
            }
        }
    }
    EmbeddingMatrix::new(input)
}

/// Borrows the center row from the input matrix and the target row from
/// the output matrix.
fn rows_mut<'a>(
    input: &'a mut [f32],
    output: &'a mut [f32],
    center: usize,
    target: usize,
    dim: usize,
) -> (&'a [f32], &'a mut [f32]) {
    let c = &input[center * dim..(center + 1) * dim];
    let t = &mut output[target * dim..(target + 1) * dim];
    (c, t)
}

/// Cosine similarity with f64 accumulation; zero vectors compare as 0.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "cosine",
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb).sqrt())
}

const EMBEDDING_MAGIC: &[u8; 8] = b"GSREMB1\0";

/// Writes `embeddings.f32`: a 16-byte header (magic, N, dim) followed by
/// row-major little-endian f32 values.
pub fn write_embeddings(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    let io_err = |e| Error::io(path, e);
    w.write_all(EMBEDDING_MAGIC).map_err(io_err)?;
    w.write_all(&(emb.num_nodes() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(emb.dim() as u32).to_le_bytes()).map_err(io_err)?;
    for v in emb.vectors.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut r = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
    );
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..8] != EMBEDDING_MAGIC {
        return Err(Error::parse(path, 0, "bad embeddings magic"));
    }
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut values = vec![0.0f32; n * dim];
    let mut buf = [0u8; 4];
    for v in values.iter_mut() {
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *v = f32::from_le_bytes(buf);
    }
    EmbeddingMatrix::new(
        Array2::from_shape_vec((n, dim), values).map_err(|e| Error::parse(path, 0, e.to_string()))?,
    )
}
