use crate::error::{LealError, Result};
use crate::tensor::{RngStream, Tensor};

const MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Tensor,
    /// Within-cluster sum of squared distances after Lloyd's iterations.
    pub sse: f64,
    /// The same quantity for the k-means++ seeds.
    pub initial_sse: f64,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &Tensor, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = points.shape()[0];
    let mut labels = Vec::with_capacity(n);
    let mut sse = 0.0;
    for i in 0..n {
        let row = points.row(i);
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, cen)| (c, dist2(row, cen)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        labels.push(best);
        sse += d;
    }
    (labels, sse)
}

/// k-means++ seeding followed by Lloyd's algorithm until the assignment is
/// stable or 100 iterations have run. An emptied cluster keeps its centroid.
pub fn kmeans(points: &Tensor, clusters: usize, rng: &mut RngStream) -> Result<KMeans> {
    let (n, d) = points.dims2()?;
    if clusters == 0 || n < clusters {
        return Err(LealError::Data(format!(
            "cannot form {clusters} clusters from {n} points"
        )));
    }
    let mut centroids: Vec<Vec<f64>> = vec![points.row(rng.below(n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // all remaining points coincide with a seed
            rng.below(n)
        };
        let c = points.row(pick).to_vec();
        for (i, v) in nearest.iter_mut().enumerate() {
            *v = v.min(dist2(points.row(i), &c));
        }
        centroids.push(c);
    }
    let (mut labels, initial_sse) = assign(points, &centroids);
    let mut sse = initial_sse;
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; clusters];
        let mut counts = vec![0usize; clusters];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..clusters {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let (next, next_sse) = assign(points, &centroids);
        sse = next_sse;
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KMeans {
        centroids: Tensor::new(vec![clusters, d], centroids.concat())?,
        sse,
        initial_sse,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::StreamLabel;

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamLabel::Init)
    }

    #[test]
    fn two_obvious_clusters() {
        let pts = Tensor::from_rows(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]).unwrap();
        for seed in 0..20 {
            let km = kmeans(&pts, 2, &mut rng(seed)).unwrap();
            let mut cs: Vec<Vec<f64>> = (0..2).map(|c| km.centroids.row(c).to_vec()).collect();
            cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(cs, vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
            assert!(km.sse <= km.initial_sse);
        }
    }

    #[test]
    fn one_cluster_is_the_mean_and_n_clusters_is_exact() {
        let pts = Tensor::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]).unwrap();
        let km = kmeans(&pts, 1, &mut rng(0)).unwrap();
        assert_eq!(km.centroids.data(), &[3.0, 3.0]);
        let km = kmeans(&pts, 3, &mut rng(0)).unwrap();
        assert_eq!(km.sse, 0.0);
        assert!(kmeans(&pts, 4, &mut rng(0)).is_err());
    }
}
