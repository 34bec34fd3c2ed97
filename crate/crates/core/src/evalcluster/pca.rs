use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub projected: Vec<Vec<f64>>,
    /// Variance along each kept component (sample covariance eigenvalues).
    pub explained_variance: Vec<f64>,
    /// Unit loading vectors, one per kept component.
    pub components: Vec<Vec<f64>>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

/// Principal-component projection onto the top `dims` eigenvectors of the
/// sample covariance; each component's largest-magnitude loading is positive.
pub fn pca_project(points: &[Vec<f64>], dims: usize) -> Result<PcaResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("PCA needs 2 points, got {n}")));
    }
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let keep = dims.min(d);
    let mut components = Vec::with_capacity(keep);
    let mut explained_variance = Vec::with_capacity(keep);
    for &k in order.iter().take(keep) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    let projected = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| (0..d).map(|j| x[(i, j)] * c[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        projected,
        explained_variance,
        components,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_has_one_component() {
        let pts: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, -(i as f64)]).collect();
        let r = pca_project(&pts, 2).unwrap();
        assert!((r.explained_variance[0] - r.total_variance).abs() < 1e-9);
        assert!(r.explained_variance[1].abs() < 1e-9);
        assert!(r.components[0].iter().any(|&v| v > 0.0));
    }

    #[test]
    fn full_rank_projection_is_exact_rotation() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![0.3, 0.2]];
        let r = pca_project(&pts, 2).unwrap();
        let mean: Vec<f64> = (0..2).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / 5.0).collect();
        for (p, q) in pts.iter().zip(&r.projected) {
            for j in 0..2 {
                let back = mean[j] + r.components[0][j] * q[0] + r.components[1][j] * q[1];
                assert!((back - p[j]).abs() < 1e-9);
            }
        }
        let sum: f64 = r.explained_variance.iter().sum();
        assert!((sum - r.total_variance).abs() < 1e-9);
    }

    #[test]
    fn explained_variance_sums_to_trace() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64;
                vec![t.sin() * 3.0, (t * 0.7).cos(), t * 0.1, (t * 1.3).sin() * t]
            })
            .collect();
        let r = pca_project(&pts, 4).unwrap();
        let direct: f64 = (0..4)
            .map(|j| {
                let m = pts.iter().map(|p| p[j]).sum::<f64>() / 20.0;
                pts.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / 19.0
            })
            .sum();
        assert!((r.explained_variance.iter().sum::<f64>() - direct).abs() < 1e-9);
    }
}
