//! Report artifacts: scatter/PCA CSVs of person-level embeddings and
//! reconstruction-vs-observed CSV readers and SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::datamodel::Diagnosis;
use crate::error::{Error, Result};
use crate::evalcluster::{pca_project, standardize, PcaResult, PersonEmbedding};
use crate::{DT_OBS, MEAL_INDEX, SEQ_LEN};

/// One record's observed trace with a model's reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTrace {
    pub ppgr_id: String,
    pub person_id: String,
    pub observed: Vec<Option<f64>>,
    pub predicted: Vec<f64>,
    pub u: Vec<f64>,
}

/// Reads the `ppgr_id,person_id,t,observed,predicted,u` layout, keeping file order.
pub fn read_reconstructions(reader: impl Read) -> Result<Vec<RecordTrace>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out: Vec<RecordTrace> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 6 {
            return Err(Error::Malformed(format!("expected 6 columns at line {line}")));
        }
        let parse = |i: usize, col: &str| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::NonNumericCell {
                column: col.into(),
                line,
                value: rec[i].to_string(),
            })
        };
        let t = parse(2, "t")? as usize;
        let observed = if rec[3].is_empty() { None } else { Some(parse(3, "observed")?) };
        let (pred, u) = (parse(4, "predicted")?, parse(5, "u")?);
        if out.last().is_none_or(|r| r.ppgr_id != rec[0]) {
            out.push(RecordTrace {
                ppgr_id: rec[0].to_string(),
                person_id: rec[1].to_string(),
                observed: Vec::with_capacity(SEQ_LEN),
                predicted: Vec::with_capacity(SEQ_LEN),
                u: Vec::with_capacity(SEQ_LEN),
            });
        }
        let r = out.last_mut().expect("pushed above");
        if t != r.predicted.len() {
            return Err(Error::Malformed(format!("record {} out of order at line {line}", r.ppgr_id)));
        }
        r.observed.push(observed);
        r.predicted.push(pred);
        r.u.push(u);
    }
    Ok(out)
}

pub fn load_reconstructions(path: impl AsRef<Path>) -> Result<Vec<RecordTrace>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reconstructions(std::io::BufReader::new(f))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Line plot of observed glucose (dots) against one or more reconstructions.
/// Opens with an XML comment carrying `meta`.
pub fn reconstruction_svg(title: &str, observed: &[Option<f64>], series: &[(&str, &[f64])], meta: &str) -> String {
    let values = observed.iter().flatten().chain(series.iter().flat_map(|s| s.1.iter()));
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = (lo / 20.0).floor() * 20.0;
    hi = ((hi / 20.0).ceil() * 20.0).max(lo + 20.0);
    let n = observed.len().max(2);
    let x = |t: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * t as f64 / (n - 1) as f64;
    let y = |g: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (g - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, "<!-- {} -->", escape(meta).replace("--", "- -"));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-size="14">{}</text>"#, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<g class="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#);
    for k in 0..=4 {
        let g = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="4" y="{:.1}" font-size="10">{g:.0}</text>"#, y(g) + 3.0);
    }
    for t in (0..n).step_by(12) {
        let minutes = (t as f64 - MEAL_INDEX as f64) * DT_OBS;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10">{minutes:.0}</text>"#, x(t) - 6.0, y0 + 14.0);
    }
    let _ = writeln!(
        s,
        r#"<line class="meal" x1="{0:.1}" y1="{y0}" x2="{0:.1}" y2="{y1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x(MEAL_INDEX)
    );
    for (i, (name, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = vals.iter().enumerate().map(|(t, &g)| format!("{:.1},{:.1}", x(t), y(g))).collect();
        let color = COLORS[(i + 1) % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"#,
            x1 - 110.0,
            y1 + 14.0 * (i + 1) as f64,
            escape(name)
        );
    }
    for (t, g) in observed.iter().enumerate() {
        if let Some(g) = g {
            let _ = writeln!(s, r#"<circle class="obs" cx="{:.1}" cy="{:.1}" r="2.5" fill="{}"/>"#, x(t), y(*g), COLORS[0]);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn label_name(labels: &BTreeMap<String, Diagnosis>, person: &str) -> &'static str {
    labels.get(person).map_or("", |d| d.as_str())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// One `person_id,label,x,y` CSV per pair of the selected dimensions.
pub fn write_scatter_pairs(
    dir: &Path,
    prefix: &str,
    people: &[PersonEmbedding],
    names: &[String],
    dims: &[usize],
    labels: &BTreeMap<String, Diagnosis>,
    meta: &str,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (a, &i) in dims.iter().enumerate() {
        for &j in &dims[a + 1..] {
            let path = dir.join(format!("{prefix}_{}_{}.csv", names[i], names[j]));
            let mut w = create(&path)?;
            let io = (|| -> std::io::Result<()> {
                writeln!(w, "# {meta}")?;
                writeln!(w, "person_id,label,{},{}", names[i], names[j])?;
                for p in people {
                    writeln!(w, "{},{},{},{}", p.person_id, label_name(labels, &p.person_id), p.vector[i], p.vector[j])?;
                }
                w.flush()
            })();
            io.map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// PCA of z-scored person means, written as `person_id,label,pc1,pc2`.
pub fn write_pca(
    path: &Path,
    people: &[PersonEmbedding],
    labels: &BTreeMap<String, Diagnosis>,
    meta: &str,
) -> Result<PcaResult> {
    let points: Vec<Vec<f64>> = people.iter().map(|p| p.vector.clone()).collect();
    let pca = pca_project(&standardize(&points), 2)?;
    let mut w = create(path)?;
    let io = (|| -> std::io::Result<()> {
        writeln!(w, "# {meta}")?;
        let share: Vec<String> = pca
            .explained_variance
            .iter()
            .map(|v| format!("{:.4}", if pca.total_variance > 0.0 { v / pca.total_variance } else { 0.0 }))
            .collect();
        writeln!(w, "# explained_variance_ratio={}", share.join(","))?;
        writeln!(w, "person_id,label,pc1,pc2")?;
        for (p, q) in people.iter().zip(&pca.projected) {
            let pc2 = q.get(1).copied().unwrap_or(0.0);
            writeln!(w, "{},{},{},{}", p.person_id, label_name(labels, &p.person_id), q[0], pc2)?;
        }
        w.flush()
    })();
    io.map_err(|e| Error::io(path, e))?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_structure() {
        let mut obs: Vec<Option<f64>> = (0..SEQ_LEN).map(|t| Some(100.0 + t as f64)).collect();
        obs[5] = None;
        let pred: Vec<f64> = (0..SEQ_LEN).map(|t| 101.0 + t as f64).collect();
        let svg = reconstruction_svg("a<b", &obs, &[("hybrid", &pred), ("mech", &pred)], "config_hash=x seed=1");
        assert!(svg.starts_with("<!-- config_hash=x seed=1 -->\n<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), SEQ_LEN - 1);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        let first = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(first.split(' ').count(), SEQ_LEN);
    }

    #[test]
    fn reconstruction_csv_round_trip() {
        use crate::datamodel::{tests::flat_record, Dataset};
        use crate::hybridvae::{write_reconstructions, Reconstruction};
        let mut rec = flat_record("p1", "r1", 110.0);
        rec.glucose[7] = None;
        let ds = Dataset::new(vec![rec.clone(), flat_record("p1", "r2", 90.0)]).unwrap();
        let recons: Vec<Reconstruction> = (0..2)
            .map(|k| Reconstruction {
                glucose: (0..SEQ_LEN).map(|t| t as f64 + k as f64 / 3.0).collect(),
                u: vec![0.5; SEQ_LEN],
            })
            .collect();
        let mut buf = Vec::new();
        write_reconstructions(&ds, &recons, &mut buf, Some("m")).unwrap();
        let back = read_reconstructions(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].observed, rec.glucose);
        assert_eq!(back[1].predicted, recons[1].glucose);
    }

    #[test]
    fn scatter_and_pca_files() {
        let dir = tempfile::tempdir().unwrap();
        let people: Vec<PersonEmbedding> = (0..4)
            .map(|i| PersonEmbedding {
                person_id: format!("p{i}"),
                vector: vec![i as f64, (i * i) as f64, 1.0],
                n_records: 1,
            })
            .collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let labels = BTreeMap::from([("p0".to_string(), Diagnosis::T2d)]);
        let files = write_scatter_pairs(dir.path(), "scatter", &people, &names, &[0, 1, 2], &labels, "m").unwrap();
        assert_eq!(files.len(), 3);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().nth(1), Some("person_id,label,a,b"));
        assert_eq!(text.lines().nth(2), Some("p0,t2d,0,0"));
        let pca = write_pca(&dir.path().join("pca.csv"), &people, &labels, "m").unwrap();
        assert_eq!(pca.projected.len(), 4);
    }
}
