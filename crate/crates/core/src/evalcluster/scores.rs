//! Information-theoretic agreement between two partitions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterScores {
    pub nmi: f64,
    /// Clamped to [0, 1].
    pub ami: f64,
    /// Unclamped adjusted mutual information.
    pub ami_raw: f64,
    pub homogeneity: f64,
    pub completeness: f64,
}

/// Relabels to 0..n in order of first appearance.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Counts `n[i][j]` of points with true class `i` and predicted cluster `j`.
pub fn contingency(truth: &[usize], pred: &[usize]) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch(truth.len(), pred.len()));
    }
    let (t, nt) = canonical(truth);
    let (p, np) = canonical(pred);
    let mut table = vec![vec![0usize; np]; nt];
    for (&i, &j) in t.iter().zip(&p) {
        table[i][j] += 1;
    }
    Ok(table)
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_info(table: &[Vec<usize>], a: &[usize], b: &[usize], n: f64) -> f64 {
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Expected mutual information under random permutation with fixed marginals.
fn expected_mutual_info(a: &[usize], b: &[usize], n: usize) -> f64 {
    let mut lf = vec![0.0f64; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &ai in a {
        for &bj in b {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let term = nij as f64 / nf * (nf * nij as f64 / (ai as f64 * bj as f64)).ln();
                let log_p = lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj]
                    - lf[n]
                    - lf[nij]
                    - lf[ai - nij]
                    - lf[bj - nij]
                    - lf[n + nij - ai - bj];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// How the mutual information is normalized by the two entropies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Arithmetic,
    Geometric,
}

impl Normalization {
    fn mean(self, a: f64, b: f64) -> f64 {
        match self {
            Normalization::Arithmetic => 0.5 * (a + b),
            Normalization::Geometric => (a * b).sqrt(),
        }
    }
}

/// NMI (arithmetic normalization), AMI, homogeneity and completeness.
pub fn cluster_scores(truth: &[usize], pred: &[usize]) -> Result<ClusterScores> {
    cluster_scores_with(truth, pred, Normalization::Arithmetic)
}

pub fn cluster_scores_with(truth: &[usize], pred: &[usize], norm: Normalization) -> Result<ClusterScores> {
    let table = contingency(truth, pred)?;
    let n = truth.len();
    if n == 0 {
        return Err(Error::DegenerateInput("empty labelings".into()));
    }
    let nf = n as f64;
    let a: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let b: Vec<usize> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let hc = entropy(&a, nf);
    let hk = entropy(&b, nf);
    let mi = mutual_info(&table, &a, &b, nf);

    let homogeneity = if hc == 0.0 { 1.0 } else { (mi / hc).clamp(0.0, 1.0) };
    let completeness = if hk == 0.0 { 1.0 } else { (mi / hk).clamp(0.0, 1.0) };

    let identical = canonical(truth).0 == canonical(pred).0;
    let (nmi, ami_raw) = if identical {
        (1.0, 1.0)
    } else if hc == 0.0 || hk == 0.0 {
        (0.0, 0.0)
    } else {
        let norm = norm.mean(hc, hk);
        let emi = expected_mutual_info(&a, &b, n);
        let denom = norm - emi;
        let denom = if denom.abs() < f64::EPSILON {
            f64::EPSILON.copysign(denom)
        } else {
            denom
        };
        ((mi / norm).clamp(0.0, 1.0), (mi - emi) / denom)
    };
    Ok(ClusterScores {
        nmi,
        ami: ami_raw.clamp(0.0, 1.0),
        ami_raw,
        homogeneity,
        completeness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    // Independent oracle: conditional entropies from per-point sums and E[MI]
    // by averaging MI over every permutation of the predicted labels.

    fn h(labels: &[usize]) -> f64 {
        let n = labels.len() as f64;
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for &l in labels {
            *counts.entry(l).or_default() += 1.0;
        }
        counts.values().map(|c| -(c / n) * (c / n).ln()).sum()
    }

    fn h_cond(x: &[usize], y: &[usize]) -> f64 {
        // H(X | Y) = sum over y of p(y) H(X | Y = y)
        let n = x.len() as f64;
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (&xi, &yi) in x.iter().zip(y) {
            groups.entry(yi).or_default().push(xi);
        }
        groups.values().map(|g| g.len() as f64 / n * h(g)).sum()
    }

    fn mi(x: &[usize], y: &[usize]) -> f64 {
        h(x) - h_cond(x, y)
    }

    fn permutations(v: &[usize]) -> Vec<Vec<usize>> {
        if v.len() <= 1 {
            return vec![v.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let mut rest = v.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    fn oracle(t: &[usize], p: &[usize], cache: &mut HashMap<(Vec<usize>, Vec<usize>), f64>) -> [f64; 5] {
        let (ht, hp) = (h(t), h(p));
        let m = mi(t, p);
        let hom = if ht == 0.0 { 1.0 } else { 1.0 - h_cond(t, p) / ht };
        let com = if hp == 0.0 { 1.0 } else { 1.0 - h_cond(p, t) / hp };
        let same = canonical(t).0 == canonical(p).0;
        if same {
            return [1.0, 1.0, 1.0, hom, com];
        }
        if ht == 0.0 || hp == 0.0 {
            return [0.0, 0.0, 0.0, hom, com];
        }
        let key = (canonical(t).0, canonical(p).0);
        let emi = *cache.entry(key).or_insert_with(|| {
            let perms = permutations(p);
            perms.iter().map(|q| mi(t, q)).sum::<f64>() / perms.len() as f64
        });
        let norm = 0.5 * (ht + hp);
        let ami = (m - emi) / (norm - emi);
        [m / norm, ami.clamp(0.0, 1.0), ami, hom, com]
    }

    /// Restricted-growth strings: every partition of n points exactly once.
    fn partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for p in &out {
                let max = p.iter().copied().max().map_or(0, |m| m + 1);
                for l in 0..=max {
                    let mut q = p.clone();
                    q.push(l);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn matches_oracle_on_every_small_labeling() {
        let mut checked = 0;
        for n in 1..=6 {
            let parts = partitions(n);
            let mut cache = HashMap::new();
            for t in &parts {
                for p in &parts {
                    let s = cluster_scores(t, p).unwrap();
                    let o = oracle(t, p, &mut cache);
                    let got = [s.nmi, s.ami, s.ami_raw, s.homogeneity, s.completeness];
                    for k in 0..5 {
                        assert!((got[k] - o[k]).abs() < 1e-9, "t={t:?} p={p:?} k={k}: {} vs {}", got[k], o[k]);
                    }
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 1 + 4 + 25 + 225 + 52 * 52 + 203 * 203);
    }

    #[test]
    fn conventions() {
        let s = cluster_scores(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap();
        assert_eq!([s.nmi, s.ami, s.homogeneity, s.completeness], [1.0; 4]);
        let s = cluster_scores(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!([s.nmi, s.ami, s.homogeneity, s.completeness], [0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(cluster_scores(&[0, 1], &[0]), Err(Error::LengthMismatch(2, 1))));
    }

    #[test]
    fn four_point_example() {
        let mut cache = HashMap::new();
        let s = cluster_scores(&[0, 0, 1, 1], &[0, 0, 1, 0]).unwrap();
        let o = oracle(&[0, 0, 1, 1], &[0, 0, 1, 0], &mut cache);
        assert!((s.nmi - o[0]).abs() < 1e-12 && (s.ami_raw - o[2]).abs() < 1e-12);
        assert!(s.homogeneity > 0.0 && s.homogeneity < 1.0);
    }

    #[test]
    fn label_names_do_not_matter() {
        let t = [0, 0, 1, 1, 1, 2, 2];
        let p = [0, 1, 1, 1, 0, 2, 2];
        let q: Vec<usize> = p.iter().map(|&l| [5, 9, 3][l]).collect();
        assert_eq!(cluster_scores(&t, &p).unwrap(), cluster_scores(&t, &q).unwrap());
    }

    #[test]
    fn geometric_normalization() {
        let t = [0, 0, 0, 1, 1, 2];
        let p = [0, 0, 1, 1, 1, 1];
        let s = cluster_scores_with(&t, &p, Normalization::Geometric).unwrap();
        let m = mi(&t, &p);
        assert!((s.nmi - m / (h(&t) * h(&p)).sqrt()).abs() < 1e-12);
    }
}
