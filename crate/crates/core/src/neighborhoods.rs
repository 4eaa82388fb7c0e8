//! Cosine k-NN neighbourhoods, k-means and conditioning-instance selection.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::embedding::InstanceStore;
use crate::error::{Error, Result};

/// For every instance, the indices of its `k` nearest instances under cosine
/// similarity. The instance itself always comes first; the rest follow in
/// descending similarity, ties going to the lower index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodIndex {
    k: usize,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborhoodIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k-NN over unit-norm features (dot product equals cosine similarity).
pub fn build_neighborhoods(store: &InstanceStore, k: usize) -> Result<NeighborhoodIndex> {
    let m = store.len();
    if k < 1 || k > m {
        return Err(Error::invalid(format!(
            "neighbourhood size k={k} must lie in [1, {m}]"
        )));
    }
    let h = store.features();
    let mut neighbors = Vec::with_capacity(m);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(m.saturating_sub(1));
    for i in 0..m {
        scored.clear();
        let hi = h.row(i);
        scored.extend((0..m).filter(|&j| j != i).map(|j| (dot(hi, h.row(j)), j)));
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k - 1 < scored.len() && k > 1 {
            scored.select_nth_unstable_by(k - 2, by_rank);
            scored.truncate(k - 1);
        } else {
            scored.truncate(k - 1);
        }
        scored.sort_unstable_by(by_rank);
        let mut row = Vec::with_capacity(k);
        row.push(i);
        row.extend(scored.iter().map(|&(_, j)| j));
        neighbors.push(row);
    }
    Ok(NeighborhoodIndex { k, neighbors })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    /// Mean squared distance to the assigned centroid after each iteration.
    pub distortion: Vec<f64>,
    pub converged: bool,
}

pub const DEFAULT_KMEANS_ITERS: usize = 100;

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans<R: Rng + ?Sized>(
    points: &Tensor,
    n_clusters: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if points.rank() != 2 {
        return Err(Error::invalid("kmeans input must be a matrix"));
    }
    let (m, d) = (points.rows(), points.cols());
    if n_clusters < 1 || n_clusters > m {
        return Err(Error::invalid(format!(
            "n_clusters={n_clusters} must lie in [1, {m}]"
        )));
    }

    let mut centroids = kmeans_pp_init(points, n_clusters, rng);
    let mut assignments = vec![usize::MAX; m];
    let mut distortion = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        for i in 0..m {
            let (best, dist) = nearest(points.row(i), &centroids);
            total += dist;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            distortion.push(total / m as f64);
            break;
        }

        let mut sums = vec![0.0; n_clusters * d];
        let mut counts = vec![0usize; n_clusters];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..n_clusters {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids
                    .row_mut(c)
                    .iter_mut()
                    .zip(&sums[c * d..(c + 1) * d])
                {
                    *dst = s * inv;
                }
            }
        }
        let after: f64 = assignments
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(points.row(i), centroids.row(c)))
            .sum();
        distortion.push(after / m as f64);
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        distortion,
        converged,
    })
}

/// Nearest centroid by squared distance, ties to the lower index.
fn nearest(x: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let dd = sq_dist(x, centroids.row(c));
        if dd < best.1 {
            best = (c, dd);
        }
    }
    best
}

fn kmeans_pp_init<R: Rng + ?Sized>(points: &Tensor, n: usize, rng: &mut R) -> Tensor {
    let m = points.rows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut d2: Vec<f64> = (0..m)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < n {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        pick = Some(i);
                        break;
                    }
                    target -= w;
                }
            }
            // Rounding can leave `target` just past the last positive weight.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            // Every point coincides with a chosen centre; pick an unused index.
            let unused: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Random,
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub method: SelectionMethod,
}

impl SelectionResult {
    pub fn all(m: usize) -> Self {
        Self {
            indices: (0..m).collect(),
            method: SelectionMethod::Clustered,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Chooses `n` distinct stored instances, either uniformly or as the points
/// nearest to k-means centroids.
pub fn select_instances<R: Rng + ?Sized>(
    features: &Tensor,
    n: usize,
    method: SelectionMethod,
    rng: &mut R,
) -> Result<SelectionResult> {
    let m = features.rows();
    if n < 1 || n > m {
        return Err(Error::invalid(format!(
            "cannot select {n} instances out of {m}"
        )));
    }
    let indices = match method {
        SelectionMethod::Random => index::sample(rng, m, n).into_vec(),
        SelectionMethod::Clustered => {
            let km = kmeans(features, n, DEFAULT_KMEANS_ITERS, rng)?;
            let mut used = vec![false; m];
            let mut picked = Vec::with_capacity(n);
            for c in 0..n {
                let centroid = km.centroids.row(c);
                let mut best: Option<(f64, usize)> = None;
                for i in (0..m).filter(|&i| !used[i]) {
                    let dd = sq_dist(features.row(i), centroid);
                    if best.is_none_or(|(bd, _)| dd < bd) {
                        best = Some((dd, i));
                    }
                }
                let (_, i) = best.expect("n <= m leaves an unused index");
                used[i] = true;
                picked.push(i);
            }
            picked
        }
    };
    Ok(SelectionResult { indices, method })
}

/// Uniform draw over a conditioning pool of `pool_size` entries.
pub fn sample_conditioning<R: Rng + ?Sized>(pool_size: usize, rng: &mut R) -> usize {
    debug_assert!(pool_size >= 1);
    rng.random_range(0..pool_size)
}

/// Uniform draw from `A_i`, with the neighbour's label when the store is labelled.
pub fn sample_neighbor<R: Rng + ?Sized>(
    index: &NeighborhoodIndex,
    store: &InstanceStore,
    i: usize,
    rng: &mut R,
) -> (usize, Option<usize>) {
    let a = index.neighbors(i);
    let j = a[rng.random_range(0..a.len())];
    (j, store.labels().map(|l| l[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn store(rows: &[&[f64]]) -> InstanceStore {
        let t = Tensor::from_rows(rows).unwrap();
        InstanceStore::new(t.clone(), None, t).unwrap()
    }

    fn unit_store(angles: &[f64]) -> InstanceStore {
        let rows: Vec<Vec<f64>> = angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
        let t = Tensor::from_rows(&rows).unwrap();
        InstanceStore::new(t.clone(), None, t).unwrap()
    }

    /// O(M^2 log M) oracle: full sort of exact cosine similarities.
    fn brute_force(h: &Tensor, k: usize) -> Vec<Vec<usize>> {
        let m = h.rows();
        (0..m)
            .map(|i| {
                let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut all: Vec<(f64, usize)> = (0..m)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let c = h
                            .row(i)
                            .iter()
                            .zip(h.row(j))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (norm(h.row(i)) * norm(h.row(j)));
                        (c, j)
                    })
                    .collect();
                all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                std::iter::once(i)
                    .chain(all.into_iter().map(|(_, j)| j))
                    .take(k)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn three_point_example() {
        let s = store(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]]);
        let idx = build_neighborhoods(&s, 2).unwrap();
        assert_eq!(idx.neighbors(0), &[0, 1]);
        assert_eq!(idx.neighbors(1), &[1, 2]);
        assert_eq!(idx.neighbors(2), &[2, 1]);
    }

    #[test]
    fn k_bounds() {
        let s = store(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(build_neighborhoods(&s, 0).is_err());
        assert!(build_neighborhoods(&s, 3).is_err());
        let one = build_neighborhoods(&s, 1).unwrap();
        assert_eq!(one.neighbors(0), &[0]);
        assert_eq!(one.neighbors(1), &[1]);
        let full = build_neighborhoods(&s, 2).unwrap();
        for i in 0..2 {
            let mut a = full.neighbors(i).to_vec();
            a.sort();
            assert_eq!(a, vec![0, 1]);
        }
    }

    #[test]
    fn self_first_even_with_duplicates() {
        let s = store(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let idx = build_neighborhoods(&s, 3).unwrap();
        assert_eq!(idx.neighbors(0), &[0, 1, 2]);
        assert_eq!(idx.neighbors(1), &[1, 0, 2]);
        assert_eq!(idx.neighbors(2), &[2, 0, 1]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..4u64 {
            let mut rng = rng_from_seed(seed);
            let m = [37, 120, 300, 500][seed as usize];
            let angles: Vec<f64> = (0..m)
                .map(|_| rand::Rng::random::<f64>(&mut rng) * std::f64::consts::TAU)
                .collect();
            let s = unit_store(&angles);
            for k in [1, 2, 5, 50.min(m), m] {
                let idx = build_neighborhoods(&s, k).unwrap();
                let oracle = brute_force(s.features(), k);
                for i in 0..m {
                    assert_eq!(idx.neighbors(i), &oracle[i][..], "m={m} k={k} i={i}");
                }
            }
        }
    }

    #[test]
    fn neighbourhoods_overlap() {
        let angles: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let s = unit_store(&angles);
        let idx = build_neighborhoods(&s, 3).unwrap();
        let overlapping = (0..20).any(|i| {
            (0..20).any(|j| i != j && idx.neighbors(i).iter().any(|a| idx.contains(j, *a)))
        });
        assert!(overlapping);
    }

    fn line(xs: &[f64]) -> Tensor {
        Tensor::matrix(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn kmeans_separated_clusters() {
        let pts = line(&[0.0, 0.1, 10.0, 10.1]);
        let km = kmeans(&pts, 2, 100, &mut rng_from_seed(0)).unwrap();
        let mut c: Vec<f64> = km.centroids.data().to_vec();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12);
        assert!(km.converged);
    }

    #[test]
    fn kmeans_one_centroid_per_point() {
        let pts = line(&[0.0, 3.0, -2.0, 7.5]);
        let km = kmeans(&pts, 4, 100, &mut rng_from_seed(5)).unwrap();
        assert_eq!(*km.distortion.last().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_identical_points() {
        let pts = Tensor::from_rows(&[[2.0, 3.0], [2.0, 3.0], [2.0, 3.0]]).unwrap();
        let km = kmeans(&pts, 1, 100, &mut rng_from_seed(1)).unwrap();
        assert_eq!(km.centroids.data(), &[2.0, 3.0]);
        assert!(kmeans(&pts, 3, 10, &mut rng_from_seed(1)).is_ok());
        assert!(kmeans(&pts, 4, 10, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn clustered_selection_tie_break() {
        let pts = line(&[0.0, 1.0, 10.0, 11.0]);
        let sel =
            select_instances(&pts, 2, SelectionMethod::Clustered, &mut rng_from_seed(3)).unwrap();
        let mut idx = sel.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn selecting_everything() {
        let pts = line(&[0.0, 1.0, 2.0, 5.0, 9.0]);
        for method in [SelectionMethod::Random, SelectionMethod::Clustered] {
            let mut sel = select_instances(&pts, 5, method, &mut rng_from_seed(2)).unwrap();
            sel.indices.sort();
            assert_eq!(sel.indices, vec![0, 1, 2, 3, 4]);
        }
        assert!(select_instances(&pts, 6, SelectionMethod::Random, &mut rng_from_seed(2)).is_err());
    }

    #[test]
    fn random_selection_is_reproducible_and_distinct() {
        let pts = line(&(0..50).map(f64::from).collect::<Vec<_>>());
        let a = select_instances(&pts, 10, SelectionMethod::Random, &mut rng_from_seed(9)).unwrap();
        let b = select_instances(&pts, 10, SelectionMethod::Random, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.indices.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn clustered_selection_is_permutation_invariant() {
        // Four tight, well separated groups on the unit circle.
        let mut rng = rng_from_seed(21);
        let mut angles = Vec::new();
        for g in 0..4 {
            for _ in 0..15 {
                angles.push(g as f64 * 1.5 + rand::Rng::random::<f64>(&mut rng) * 0.05);
            }
        }
        let s = unit_store(&angles);
        let perm: Vec<usize> = (0..angles.len()).rev().collect();
        let permuted = s.features().select_rows(&perm);
        let pick = |h: &Tensor, seed| {
            let sel = select_instances(h, 4, SelectionMethod::Clustered, &mut rng_from_seed(seed))
                .unwrap();
            let mut rows: Vec<Vec<u64>> = sel
                .indices
                .iter()
                .map(|&i| h.row(i).iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        assert_eq!(pick(s.features(), 1), pick(&permuted, 2));
    }

    #[test]
    fn sampling_degenerate_cases() {
        let s = store(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let idx = build_neighborhoods(&s, 1).unwrap();
        let mut rng = rng_from_seed(0);
        for _ in 0..100 {
            assert_eq!(sample_conditioning(1, &mut rng), 0);
            assert_eq!(sample_neighbor(&idx, &s, 1, &mut rng), (1, None));
        }
    }

    #[test]
    fn sampled_labels_follow_the_neighbour() {
        let t = Tensor::from_rows(&[[1.0, 0.0], [0.8, 0.6], [0.0, 1.0]]).unwrap();
        let s = InstanceStore::new(t.clone(), Some(vec![4, 7, 9]), t).unwrap();
        let idx = build_neighborhoods(&s, 3).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..200 {
            let (j, y) = sample_neighbor(&idx, &s, 0, &mut rng);
            assert_eq!(y, Some([4, 7, 9][j]));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let draw = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..20)
                .map(|_| sample_conditioning(13, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(8), draw(8));
    }

    proptest! {
        #[test]
        fn kmeans_distortion_never_increases(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 5..60),
            n in 1usize..5,
            seed in 0u64..100,
        ) {
            let t = Tensor::from_rows(&pts.iter().map(|&(a, b)| vec![a, b]).collect::<Vec<_>>()).unwrap();
            let km = kmeans(&t, n.min(pts.len()), 100, &mut rng_from_seed(seed)).unwrap();
            for w in km.distortion.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
        }

        #[test]
        fn neighbourhood_invariants(
            angles in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 1..40),
            k_frac in 0.0f64..1.0,
        ) {
            let s = unit_store(&angles);
            let m = angles.len();
            let k = 1 + ((m - 1) as f64 * k_frac) as usize;
            let idx = build_neighborhoods(&s, k).unwrap();
            for i in 0..m {
                let a = idx.neighbors(i);
                prop_assert_eq!(a.len(), k);
                prop_assert_eq!(a[0], i);
                prop_assert!(a.iter().all(|&j| j < m));
                let mut d = a.to_vec();
                d.sort();
                d.dedup();
                prop_assert_eq!(d.len(), k);
            }
        }
    }
}
