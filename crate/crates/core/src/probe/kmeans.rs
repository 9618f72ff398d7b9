use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

pub const RESTARTS: usize = 10;
const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans<T> {
    pub centroids: Vec<Vec<T>>,
    /// Sum of squared distances to the assigned centroid on the fitted data.
    pub inertia: T,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

impl<T: Scalar> KMeans<T> {
    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn assign(&self, x: &[T]) -> usize {
        let mut best = (0, T::infinity());
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

pub fn distinct_rows<T: Scalar>(x: &Tensor<T>) -> usize {
    let mut seen = HashSet::new();
    for i in 0..x.batch() {
        seen.insert(
            x.row(i)
                .iter()
                .map(|v| v.as_f64().to_bits())
                .collect::<Vec<u64>>(),
        );
    }
    seen.len()
}

/// Best-inertia k-means over `restarts` k-means++ initializations.
pub fn fit_kmeans<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<KMeans<T>> {
    if k == 0 {
        return Err(Error::Clustering("k must be positive".into()));
    }
    let distinct = distinct_rows(x);
    if k > distinct {
        return Err(Error::Clustering(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    x.ensure_finite("k-means input")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans<T>> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(x, plus_plus_init(x, k, &mut rng));
        if best.as_ref().map_or(true, |b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_init<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, k: usize, rng: &mut R) -> Vec<Vec<T>> {
    let n = x.batch();
    let mut centroids = vec![x.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), &centroids[0]).as_f64())
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        // k <= distinct points, so some point is still uncovered
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] == 0.0 {
            pick = d2
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("an uncovered point remains");
        }
        let c = x.row(pick).to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(x.row(i), &c).as_f64());
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd<T: Scalar>(x: &Tensor<T>, centroids: Vec<Vec<T>>) -> KMeans<T> {
    let (n, d, k) = (x.batch(), x.sample_len(), centroids.len());
    let mut model = KMeans {
        centroids,
        inertia: T::zero(),
    };
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, a) in assignment.iter_mut().enumerate() {
            let c = model.assign(x.row(i));
            if c != *a {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![T::zero(); d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let cnt = T::from_usize_lossy(counts[c]);
                model.centroids[c] = sums[c].iter().map(|&s| s / cnt).collect();
            } else {
                // re-seed an empty cluster at the worst-served point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), &model.centroids[assignment[a]]);
                        let db = sq_dist(x.row(b), &model.centroids[assignment[b]]);
                        da.partial_cmp(&db).expect("finite distances")
                    })
                    .expect("non-empty data");
                model.centroids[c] = x.row(far).to_vec();
            }
        }
    }
    model.inertia = (0..n)
        .map(|i| sq_dist(x.row(i), &model.centroids[model.assign(x.row(i))]))
        .sum();
    model
}

/// Nearest-centroid classifier whose clusters carry majority-vote labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeler {
    pub kmeans: KMeans<f32>,
    pub cluster_labels: Vec<u8>,
    pub global_majority: u8,
    /// Labeled votes per cluster as (negatives, positives).
    pub votes: Vec<(usize, usize)>,
}

impl ClusterLabeler {
    pub fn predict(&self, x: &[f32]) -> u8 {
        self.cluster_labels[self.kmeans.assign(x)]
    }

    pub fn score_batch(&self, x: &Tensor<f32>) -> Vec<f32> {
        (0..x.batch())
            .map(|i| self.predict(x.row(i)) as f32)
            .collect()
    }
}

/// Fit k-means on `unlabeled`, then label each cluster by majority vote of the
/// `labeled` samples assigned to it. Ties and clusters without labeled votes
/// take the global majority (1 when the classes are even). `k` is clamped to
/// the number of distinct unlabeled points.
pub fn cluster_majority(
    unlabeled: &Tensor<f32>,
    k: usize,
    labeled: &LabeledDataset,
    seed: u64,
) -> Result<ClusterLabeler> {
    if k < 2 {
        return Err(Error::Clustering("cluster_majority needs k >= 2".into()));
    }
    if labeled.is_empty() {
        return Err(Error::Clustering("no labeled samples to vote with".into()));
    }
    let k_eff = k.min(distinct_rows(unlabeled));
    let kmeans = fit_kmeans(unlabeled, k_eff, RESTARTS, seed)?;
    let (neg, pos) = labeled.class_counts();
    let global_majority = u8::from(pos >= neg);
    let mut votes = vec![(0usize, 0usize); k_eff];
    for i in 0..labeled.len() {
        let c = kmeans.assign(labeled.row(i));
        if labeled.labels()[i] == 1 {
            votes[c].1 += 1;
        } else {
            votes[c].0 += 1;
        }
    }
    let cluster_labels = votes
        .iter()
        .map(|&(n0, n1)| match n1.cmp(&n0) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => global_majority,
        })
        .collect();
    Ok(ClusterLabeler {
        kmeans,
        cluster_labels,
        global_majority,
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::auc::auc;
    use crate::probe::dataset::{InputSource, SourceTag, Variant};

    fn blobs(n: usize, seed: u64) -> (Tensor<f32>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i % 2) as u8;
            let c = if l == 1 { 5.0 } else { -5.0 };
            data.push(c + rng.gen_range(-1.0..1.0));
            data.push(c + rng.gen_range(-1.0..1.0));
            labels.push(l);
        }
        (Tensor::new(vec![n, 2], data).unwrap(), labels)
    }

    fn tag() -> SourceTag {
        SourceTag {
            input: InputSource::Activations,
            variant: Variant::Penalized,
        }
    }

    #[test]
    fn separated_blobs_give_perfect_held_out_auc() {
        let (unl, _) = blobs(200, 1);
        let (lx, ly) = blobs(20, 2);
        let labeled = LabeledDataset::new(tag(), lx, ly).unwrap();
        let m = cluster_majority(&unl, 2, &labeled, 0).unwrap();
        let (tx, ty) = blobs(50, 3);
        assert_eq!(auc(&m.score_batch(&tx), &ty).unwrap(), 1.0);
    }

    #[test]
    fn identical_points_fall_back_to_global_majority() {
        let unl = Tensor::new(vec![10, 2], vec![1.0; 20]).unwrap();
        let labeled = LabeledDataset::new(
            tag(),
            Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap(),
            vec![0, 0, 1],
        )
        .unwrap();
        let m = cluster_majority(&unl, 4, &labeled, 0).unwrap();
        assert_eq!(m.kmeans.centroids.len(), 1);
        assert_eq!(m.predict(&[7.0, -2.0]), 0);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let x = Tensor::new(vec![3, 1], vec![0.0f64, 1.0, 1.0]).unwrap();
        assert!(matches!(fit_kmeans(&x, 3, 1, 0), Err(Error::Clustering(_))));
    }

    #[test]
    fn restarts_never_increase_inertia() {
        let (x, _) = blobs(100, 5);
        let one = fit_kmeans(&x, 4, 1, 7).unwrap();
        let ten = fit_kmeans(&x, 4, 10, 7).unwrap();
        assert!(ten.inertia <= one.inertia);
    }
}
