//! Person-level clustering of embeddings and agreement with diagnosis labels.

mod kmeans;
mod pca;
mod scores;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

pub use kmeans::{kmeans, standardize, KMeansResult};
pub use pca::{pca_project, PcaResult};
pub use scores::{cluster_scores, cluster_scores_with, contingency, ClusterScores, Normalization};

use crate::baselines::dtw_kmeans;
use crate::datamodel::{Dataset, Diagnosis};
use crate::error::{Error, Result};

/// Default number of k-means restarts.
pub const N_INIT: usize = 10;

/// Per-PPGR embeddings of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub names: Vec<String>,
    pub rows: Vec<EmbeddingRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub ppgr_id: String,
    pub person_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    /// Pairs dataset records with their embeddings, naming columns `e_0..`
    /// unless `names` is given.
    pub fn from_dataset(dataset: &Dataset, vectors: Vec<Vec<f64>>, names: Option<Vec<String>>) -> Result<Self> {
        if dataset.len() != vectors.len() {
            return Err(Error::LengthMismatch(dataset.len(), vectors.len()));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let names = names.unwrap_or_else(|| (0..dim).map(|i| format!("e_{i}")).collect());
        let rows = dataset
            .records
            .iter()
            .zip(vectors)
            .map(|(r, values)| EmbeddingRow {
                ppgr_id: r.ppgr_id.clone(),
                person_id: r.person_id.clone(),
                values,
            })
            .collect();
        let table = EmbeddingTable { names, rows };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        for r in &self.rows {
            if r.values.len() != self.names.len() {
                return Err(Error::LengthMismatch(self.names.len(), r.values.len()));
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateInput(format!("non-finite embedding for {}", r.ppgr_id)));
            }
        }
        Ok(())
    }

    /// Parses `ppgr_id,person_id,<dims...>`; lines starting with `#` are skipped.
    pub fn read(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Malformed(e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "ppgr_id" || &header[1] != "person_id" {
            return Err(Error::MissingColumn("ppgr_id,person_id".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let values = rec
                .iter()
                .skip(2)
                .zip(&names)
                .map(|(c, name)| {
                    c.trim().parse::<f64>().map_err(|_| Error::NonNumericCell {
                        column: name.clone(),
                        line,
                        value: c.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(EmbeddingRow {
                ppgr_id: rec[0].to_string(),
                person_id: rec[1].to_string(),
                values,
            });
        }
        let table = EmbeddingTable { names, rows };
        table.check()?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn write(&self, mut out: impl Write, meta: Option<&str>) -> std::io::Result<()> {
        if let Some(m) = meta {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "ppgr_id,person_id,{}", self.names.join(","))?;
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{},{},{}", r.ppgr_id, r.person_id, vals.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w, meta)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Mean embedding per person, ordered by person id.
    pub fn aggregate(&self) -> Vec<PersonEmbedding> {
        let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc
                .entry(r.person_id.as_str())
                .or_insert_with(|| (vec![0.0; r.values.len()], 0));
            e.0.iter_mut().zip(&r.values).for_each(|(s, v)| *s += v);
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(p, (sum, n))| PersonEmbedding {
                person_id: p.to_string(),
                vector: sum.into_iter().map(|s| s / n as f64).collect(),
                n_records: n,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonEmbedding {
    pub person_id: String,
    pub vector: Vec<f64>,
    pub n_records: usize,
}

/// Best single-line split of 2-D points (optional diagnostic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separability {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub method: String,
    pub k: usize,
    pub persons: Vec<String>,
    pub labels: Vec<usize>,
    pub truth: Vec<usize>,
    /// Rows are ground-truth classes, columns predicted clusters.
    pub contingency: Vec<Vec<usize>>,
    #[serde(flatten)]
    pub scores: ClusterScores,
    pub inertia: f64,
    pub separability: Option<Separability>,
}

impl ClusterReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn truth_for(persons: &[String], labels: &BTreeMap<String, Diagnosis>) -> Result<Vec<usize>> {
    persons
        .iter()
        .map(|p| labels.get(p).map(|d| d.index()).ok_or_else(|| Error::MissingLabel(p.clone())))
        .collect()
}

fn report(
    method: &str,
    k: usize,
    persons: Vec<String>,
    truth: Vec<usize>,
    labels: Vec<usize>,
    inertia: f64,
    norm: Normalization,
) -> Result<ClusterReport> {
    let scores = cluster_scores_with(&truth, &labels, norm)?;
    Ok(ClusterReport {
        method: method.to_string(),
        k,
        contingency: contingency(&truth, &labels)?,
        persons,
        labels,
        truth,
        scores,
        inertia,
        separability: None,
    })
}

/// Aggregates per person, clusters with k-means and scores against labels.
pub fn evaluate_method(
    method: &str,
    table: &EmbeddingTable,
    labels: &BTreeMap<String, Diagnosis>,
    k: usize,
    seed: u64,
) -> Result<ClusterReport> {
    evaluate_method_with(method, table, labels, k, seed, Normalization::Arithmetic)
}

pub fn evaluate_method_with(
    method: &str,
    table: &EmbeddingTable,
    labels: &BTreeMap<String, Diagnosis>,
    k: usize,
    seed: u64,
    norm: Normalization,
) -> Result<ClusterReport> {
    let people = table.aggregate();
    let persons: Vec<String> = people.iter().map(|p| p.person_id.clone()).collect();
    let truth = truth_for(&persons, labels)?;
    let points: Vec<Vec<f64>> = people.into_iter().map(|p| p.vector).collect();
    let km = kmeans(&points, k, N_INIT, seed)?;
    let mut rep = report(method, k, persons, truth, km.labels, km.inertia, norm)?;
    if points.len() >= 2 {
        let plane = pca_project(&standardize(&points), 2)?;
        if plane.components.len() == 2 {
            rep.separability = Some(linear_separability(&plane.projected, &rep.truth));
        }
    }
    Ok(rep)
}

/// Per-person pointwise mean of the interpolated glucose traces.
pub fn person_mean_traces(dataset: &Dataset) -> Result<Vec<(String, Vec<f64>)>> {
    dataset
        .by_person()
        .into_iter()
        .map(|(p, idx)| {
            let mut sum = vec![0.0; crate::SEQ_LEN];
            for &i in &idx {
                let g = dataset.records[i].interpolated_glucose()?;
                sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
            }
            let n = idx.len() as f64;
            Ok((p.to_string(), sum.into_iter().map(|s| s / n).collect()))
        })
        .collect()
}

/// DTW k-means on per-person averaged raw traces.
pub fn evaluate_dtw(
    dataset: &Dataset,
    labels: &BTreeMap<String, Diagnosis>,
    k: usize,
    seed: u64,
    norm: Normalization,
) -> Result<ClusterReport> {
    let traces = person_mean_traces(dataset)?;
    let persons: Vec<String> = traces.iter().map(|t| t.0.clone()).collect();
    let truth = truth_for(&persons, labels)?;
    let series: Vec<Vec<f64>> = traces.into_iter().map(|t| t.1).collect();
    let res = dtw_kmeans(&series, k, N_INIT, seed)?;
    report("dtw", k, persons, truth, res.labels, res.inertia, norm)
}

/// Highest accuracy of any straight line splitting 2-D points into the two
/// classes, scanning 720 directions and every threshold between points.
pub fn linear_separability(points: &[Vec<f64>], truth: &[usize]) -> Separability {
    let total = points.len();
    let mut best = 0usize;
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    for a in 0..720 {
        let th = a as f64 * std::f64::consts::PI / 720.0;
        let (c, s) = (th.cos(), th.sin());
        let mut proj: Vec<(f64, usize)> = points
            .iter()
            .zip(truth)
            .map(|(p, &t)| (p[0] * c + p[1] * s, t))
            .collect();
        proj.sort_by(|x, y| x.0.total_cmp(&y.0));
        // Everything left of the cut is class 0; flip covers the other side.
        let mut left_pos = 0usize;
        let mut i = 0;
        loop {
            let correct = (i - left_pos) + (n_pos - left_pos);
            best = best.max(correct).max(total - correct);
            if i == total {
                break;
            }
            let v = proj[i].0;
            while i < total && proj[i].0 == v {
                left_pos += usize::from(proj[i].1 == 1);
                i += 1;
            }
        }
    }
    Separability {
        correct: best,
        total,
        accuracy: if total == 0 { 0.0 } else { best as f64 / total as f64 },
    }
}

pub const SCORE_TABLE_HEADER: &str = "method,nmi,ami,homogeneity,completeness";

/// Summary table across methods, one row per report.
pub fn write_score_table(reports: &[ClusterReport], mut out: impl Write, meta: Option<&str>) -> std::io::Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "{SCORE_TABLE_HEADER}")?;
    for r in reports {
        let s = &r.scores;
        writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4}",
            r.method, s.nmi, s.ami, s.homogeneity, s.completeness
        )?;
    }
    Ok(())
}
