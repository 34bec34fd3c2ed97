//! Dynamic time warping and DTW k-means with barycenter averaging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Optimal cumulative squared-difference cost and the warping path.
pub fn dtw_path(a: &[f64], b: &[f64]) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (a.len(), b.len());
    assert!(n > 0 && m > 0, "DTW needs non-empty sequences");
    let mut cost = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = (a[i] - b[j]).powi(2);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { cost[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { cost[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { cost[(i - 1) * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            cost[i * m + j] = d + prev;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = cost[(i - 1) * m + j - 1];
            let up = cost[(i - 1) * m + j];
            let left = cost[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    (cost[n * m - 1], path)
}

pub fn dtw_distance(a: &[f64], b: &[f64]) -> f64 {
    dtw_path(a, b).0
}

/// DBA: repeatedly replace each centre point by the mean of the member
/// points aligned to it.
pub fn dba(center: &[f64], members: &[&[f64]], iterations: usize) -> Vec<f64> {
    let mut c = center.to_vec();
    if members.is_empty() {
        return c;
    }
    for _ in 0..iterations {
        let mut sum = vec![0.0; c.len()];
        let mut count = vec![0usize; c.len()];
        for m in members {
            for (i, j) in dtw_path(&c, m).1 {
                sum[i] += m[j];
                count[i] += 1;
            }
        }
        c = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwKMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub centers: Vec<Vec<f64>>,
}

const DBA_ITERATIONS: usize = 10;
const MAX_ROUNDS: usize = 20;

fn assign(series: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = series
        .iter()
        .map(|s| {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(k, c)| (k, dtw_distance(s, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

fn seed_centers(series: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![series[rng.random_range(0..series.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = series
            .iter()
            .map(|s| centers.iter().map(|c| dtw_distance(s, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            d.iter()
                .position(|&v| {
                    target -= v;
                    target < 0.0
                })
                .unwrap_or(series.len() - 1)
        } else {
            rng.random_range(0..series.len())
        };
        centers.push(series[pick].clone());
    }
    centers
}

/// k-means under DTW with DBA centre updates, best of `n_init` restarts.
pub fn dtw_kmeans(series: &[Vec<f64>], k: usize, n_init: usize, seed: u64) -> Result<DtwKMeansResult> {
    if k == 0 || series.len() < k {
        return Err(Error::DegenerateInput(format!("{} series for k={k}", series.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<DtwKMeansResult> = None;
    for _ in 0..n_init.max(1) {
        let mut centers = seed_centers(series, k, &mut rng);
        let (mut labels, mut inertia) = assign(series, &centers);
        for _ in 0..MAX_ROUNDS {
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&[f64]> = series
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(s, _)| s.as_slice())
                    .collect();
                *center = dba(center, &members, DBA_ITERATIONS);
            }
            let (next, next_inertia) = assign(series, &centers);
            let stable = next == labels;
            labels = next;
            inertia = next_inertia;
            if stable {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(DtwKMeansResult {
                labels,
                inertia,
                centers,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]), 0.0);
        // Cost table for [0,1] vs [2,3]: d = [[4,9],[1,4]], cumulative
        // [[4,13],[5,8]]; the diagonal alignment wins.
        assert_eq!(dtw_distance(&[0.0, 1.0], &[2.0, 3.0]), 8.0);
        assert_eq!(dtw_path(&[0.0, 1.0], &[2.0, 3.0]).1, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn separates_shapes() {
        let mut series = Vec::new();
        for i in 0..5 {
            let s = i as f64;
            series.push((0..30).map(|t| 100.0 + s + if (10..15).contains(&t) { 60.0 } else { 0.0 }).collect());
            series.push((0..30).map(|t| 100.0 + s - if (18..24).contains(&t) { 40.0 } else { 0.0 }).collect::<Vec<f64>>());
        }
        let r = dtw_kmeans(&series, 2, 3, 1).unwrap();
        for i in 0..5 {
            assert_eq!(r.labels[2 * i], r.labels[0]);
            assert_eq!(r.labels[2 * i + 1], r.labels[1]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    proptest! {
        #[test]
        fn metric_properties(a in prop::collection::vec(-50.0f64..50.0, 1..12), b in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let ab = dtw_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - dtw_distance(&b, &a)).abs() < 1e-9);
            prop_assert_eq!(dtw_distance(&a, &a), 0.0);
            if a.len() == b.len() {
                let euclid: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                prop_assert!(ab <= euclid + 1e-9);
            }
        }
    }
}
