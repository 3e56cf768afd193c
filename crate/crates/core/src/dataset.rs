//! One-step training pairs and nearest-neighbor batch resampling.
//!
//! A [`PairStore`] flattens trajectories into `M = n_traj * len` pairs
//! `(x0, x1)` in trajectory-major, step-minor order. Batches are built per
//! epoch by drawing anchor pairs uniformly without replacement and grouping
//! each anchor with its nearest neighbors in `x0` (Euclidean distance), so
//! every batch covers a small region of state space. Batches may overlap.
//!
//! Neighbor queries use exhaustive scan for small stores and a k-d tree
//! above [`EXHAUSTIVE_LIMIT`]; both orderings break distance ties by lower
//! index, so the two paths return identical results.

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::rng;
use crate::sde::TrajectoryDataset;
use ndarray::{Array2, ArrayView1, ArrayView2};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Largest store size served by exhaustive scan; larger stores get a k-d tree.
pub const EXHAUSTIVE_LIMIT: usize = 100_000;

/// One-step training pairs with a neighbor index over `x0`.
#[derive(Debug, Clone)]
pub struct PairStore {
    x0: Array2<f64>,
    x1: Array2<f64>,
    dt: f64,
    seed: u64,
    n_traj: usize,
    traj_len: usize,
    tree: Option<KdTree>,
}

impl PairStore {
    /// Assemble a store from raw pair matrices (rows are pairs).
    pub fn from_parts(
        x0: Array2<f64>,
        x1: Array2<f64>,
        dt: f64,
        seed: u64,
        n_traj: usize,
        traj_len: usize,
    ) -> Result<Self> {
        if x0.dim() != x1.dim() {
            return Err(Error::DimensionMismatch {
                what: "pair matrices",
                expected: x0.len(),
                got: x1.len(),
            });
        }
        if x0.nrows() != n_traj * traj_len {
            return Err(Error::DimensionMismatch {
                what: "pair count",
                expected: n_traj * traj_len,
                got: x0.nrows(),
            });
        }
        if x0.nrows() == 0 {
            return Err(Error::InvalidArgument("empty pair store".into()));
        }
        let tree = if x0.nrows() > EXHAUSTIVE_LIMIT {
            Some(KdTree::build(x0.view()))
        } else {
            None
        };
        Ok(PairStore {
            x0,
            x1,
            dt,
            seed,
            n_traj,
            traj_len,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn traj_len(&self) -> usize {
        self.traj_len
    }

    pub fn x0(&self) -> ArrayView2<'_, f64> {
        self.x0.view()
    }

    pub fn x1(&self) -> ArrayView2<'_, f64> {
        self.x1.view()
    }

    pub fn pair(&self, i: usize) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.x0.row(i), self.x1.row(i))
    }

    /// Indices of the `k` pairs whose `x0` is nearest to `query`, sorted by
    /// `(distance, index)` ascending.
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "knn query point",
                expected: self.dim(),
                got: query.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::KnnTooLarge { k, size: self.len() });
        }
        match &self.tree {
            Some(tree) => Ok(tree.knn(self.x0.view(), query, k)),
            None => Ok(knn_exhaustive(self.x0.view(), query, k)),
        }
    }

    /// Gather batch rows into dense `(x0, x1)` matrices.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let d = self.dim();
        let mut x0 = Array2::zeros((indices.len(), d));
        let mut x1 = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            x0.row_mut(r).assign(&self.x0.row(i));
            x1.row_mut(r).assign(&self.x1.row(i));
        }
        (x0, x1)
    }
}

/// Slice a trajectory dataset into consecutive one-step pairs.
///
/// Pair `i * len + n` is `(states[i, n], states[i, n + 1])`, so the original
/// trajectories can be reconstructed exactly from the store.
pub fn build_pairs(ds: &TrajectoryDataset) -> Result<PairStore> {
    let (n_traj, len, d) = (ds.n_traj(), ds.len(), ds.dim());
    let m = n_traj * len;
    let mut x0 = Array2::zeros((m, d));
    let mut x1 = Array2::zeros((m, d));
    for i in 0..n_traj {
        for n in 0..len {
            let row = i * len + n;
            x0.row_mut(row).assign(&ds.state(i, n));
            x1.row_mut(row).assign(&ds.state(i, n + 1));
        }
    }
    PairStore::from_parts(x0, x1, ds.dt, ds.seed, n_traj, len)
}

/// One epoch's batches: `batches[j]` lists pair indices, anchor first batch
/// member semantics are not assumed downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch_seed: u64,
    pub anchors: Vec<usize>,
    pub batches: Vec<Vec<usize>>,
}

/// Draw `n_batches` anchors uniformly without replacement and group each
/// with its `batch_size - 1` nearest `x0`-neighbors (plus the anchor).
///
/// The same `(store, n_batches, batch_size, epoch_seed)` always yields the
/// same plan.
pub fn resample_batches(
    store: &PairStore,
    n_batches: usize,
    batch_size: usize,
    epoch_seed: u64,
    ex: Exec,
) -> Result<BatchPlan> {
    let m = store.len();
    if n_batches == 0 {
        return Err(Error::InvalidArgument("n_batches must be positive".into()));
    }
    if n_batches > m {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n_batches} anchors without replacement from {m} pairs"
        )));
    }
    if batch_size == 0 || batch_size > m {
        return Err(Error::KnnTooLarge { k: batch_size, size: m });
    }

    let mut rng = rng::stream_rng(epoch_seed, 0);
    let anchors: Vec<usize> = rand::seq::index::sample(&mut rng, m, n_batches).into_vec();

    let batches: Vec<Vec<usize>> = exec::try_map_indexed(ex, n_batches, |j| -> Result<Vec<usize>> {
        let anchor = anchors[j];
        let q: Vec<f64> = store.x0.row(anchor).to_vec();
        let mut members = store.knn_query(&q, batch_size)?;
        // The anchor is at distance zero from itself, so it can only be
        // displaced by >= batch_size duplicates with lower index; restore it.
        if !members.contains(&anchor) {
            *members.last_mut().expect("batch_size > 0") = anchor;
        }
        Ok(members)
    })?;

    Ok(BatchPlan {
        epoch_seed,
        anchors,
        batches,
    })
}

fn dist2(a: ArrayView1<'_, f64>, b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// `(distance^2, index)` with lexicographic order; ties go to the lower index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn knn_exhaustive(points: ArrayView2<'_, f64>, query: &[f64], k: usize) -> Vec<usize> {
    let mut cands: Vec<Cand> = (0..points.nrows())
        .map(|i| Cand(dist2(points.row(i), query), i))
        .collect();
    cands.select_nth_unstable(k - 1);
    cands.truncate(k);
    cands.sort_unstable();
    cands.into_iter().map(|c| c.1).collect()
}

/// k-d tree over row indices of a point matrix. Splits cycle through the
/// axis of largest extent; leaves hold up to `LEAF` points.
#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<KdNode>,
    /// Point indices, permuted so each node owns a contiguous range.
    order: Vec<u32>,
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u16,
        value: f64,
        /// Index of the right child; the left child is `self + 1`.
        right: u32,
    },
}

const LEAF: usize = 24;

impl KdTree {
    fn build(points: ArrayView2<'_, f64>) -> Self {
        let mut order: Vec<u32> = (0..points.nrows() as u32).collect();
        let mut nodes = Vec::new();
        Self::build_rec(points, &mut order, 0, &mut nodes);
        KdTree { nodes, order }
    }

    fn build_rec(
        points: ArrayView2<'_, f64>,
        order: &mut [u32],
        offset: usize,
        nodes: &mut Vec<KdNode>,
    ) -> usize {
        let me = nodes.len();
        if order.len() <= LEAF {
            nodes.push(KdNode::Leaf {
                start: offset as u32,
                end: (offset + order.len()) as u32,
            });
            return me;
        }
        // Split along the widest axis for balanced cells.
        let d = points.ncols();
        let mut axis = 0;
        let mut best = f64::NEG_INFINITY;
        for a in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in order.iter() {
                let v = points[(i as usize, a)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best {
                best = hi - lo;
                axis = a;
            }
        }
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[(a as usize, axis)]
                .total_cmp(&points[(b as usize, axis)])
                .then(a.cmp(&b))
        });
        let value = points[(order[mid] as usize, axis)];
        nodes.push(KdNode::Split {
            axis: axis as u16,
            value,
            right: 0,
        });
        let (left, right) = order.split_at_mut(mid);
        Self::build_rec(points, left, offset, nodes);
        let right_id = Self::build_rec(points, right, offset + mid, nodes);
        if let KdNode::Split { right, .. } = &mut nodes[me] {
            *right = right_id as u32;
        }
        me
    }

    fn knn(&self, points: ArrayView2<'_, f64>, query: &[f64], k: usize) -> Vec<usize> {
        // Max-heap of the k best (distance^2, index) candidates seen so far.
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.search(points, query, k, 0, &mut heap);
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| c.1).collect()
    }

    fn search(
        &self,
        points: ArrayView2<'_, f64>,
        query: &[f64],
        k: usize,
        node: usize,
        heap: &mut BinaryHeap<Cand>,
    ) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let c = Cand(dist2(points.row(i as usize), query), i as usize);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap non-empty") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split { axis, value, right } => {
                let delta = query[axis as usize] - value;
                let (near, far) = if delta < 0.0 {
                    (node + 1, right as usize)
                } else {
                    (right as usize, node + 1)
                };
                self.search(points, query, k, near, heap);
                // A tied plane distance can still hide a lower-index winner,
                // so only a strictly larger distance prunes the far side.
                let worst = heap.peek().map(|c| c.0).unwrap_or(f64::INFINITY);
                if heap.len() < k || delta * delta <= worst {
                    self.search(points, query, k, far, heap);
                }
            }
        }
    }
}
