use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares, in standardized coordinates.
    pub inertia: f64,
    /// Inertia of every restart, in run order.
    pub restarts: Vec<f64>,
}

const MAX_ITER: usize = 300;

/// Z-scores every column; zero-variance columns become 0.
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points.first().map_or(0, Vec::len);
    let mut out = points.to_vec();
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
        let sd = (points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for p in out.iter_mut() {
            p[j] = if sd > 0.0 { (p[j] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(k, c)| (k, dist2(p, c)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let pick = d
            .iter()
            .position(|&v| {
                target -= v;
                target < 0.0 && v > 0.0
            })
            .unwrap_or_else(|| d.iter().position(|&v| v > 0.0).unwrap_or(0));
        centers.push(points[pick].clone());
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let k = centers.len();
    let d = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Reseed an empty cluster at the worst-fit point.
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, nearest(p, &centers).1))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                centers[c] = points[far].clone();
            }
        }
    }
    let inertia = points.iter().map(|p| nearest(p, &centers).1).sum();
    let labels = points.iter().map(|p| nearest(p, &centers).0).collect();
    (labels, inertia)
}

/// Lloyd's k-means on z-scored columns with k-means++ seeding; keeps the
/// lowest-inertia of `n_init` restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, n_init: usize, seed: u64) -> Result<KMeansResult> {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(Error::DegenerateInput(format!("{} distinct points for k={k}", distinct.len())));
    }
    if points.iter().any(|p| p.len() != points[0].len() || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::DegenerateInput("ragged or non-finite embedding".into()));
    }
    let z = standardize(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut restarts = Vec::with_capacity(n_init);
    for _ in 0..n_init.max(1) {
        let centers = plus_plus(&z, k, &mut rng);
        let (labels, inertia) = lloyd(&z, centers);
        restarts.push(inertia);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    let (labels, inertia) = best.expect("one restart");
    Ok(KMeansResult {
        labels,
        inertia,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_blobs() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![if i % 2 == 0 { 0.0 } else { 10.0 } + 0.01 * i as f64])
            .collect();
        let r = kmeans(&pts, 2, 10, 1).unwrap();
        for i in 0..10 {
            assert_eq!(r.labels[i], r.labels[i % 2]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![2.0, 5.0]];
        assert!(kmeans(&pts, 3, 5, 2).unwrap().inertia < 1e-18);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 2, 3, 0), Err(Error::DegenerateInput(_))));
    }

    proptest! {
        #[test]
        fn best_of_restarts(pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..25), seed in 0u64..50) {
            let r = kmeans(&pts, 2, 10, seed).unwrap();
            prop_assert!(r.restarts.iter().all(|&i| r.inertia <= i));
            prop_assert_eq!(r.restarts.len(), 10);
        }
    }
}
