//! PPGR records, dataset container and the long-format CSV schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{MEAL_INDEX, SEQ_LEN};

pub const SCHEMA_VERSION: u32 = 1;

/// Exact header of the long-format record CSV.
pub const CSV_HEADER: [&str; 14] = [
    "person_id",
    "ppgr_id",
    "t",
    "glucose",
    "total_amount",
    "carbs",
    "sugar",
    "fiber",
    "fat",
    "protein",
    "age",
    "weight",
    "sex",
    "diagnosis",
];

pub const MEAL_CHANNELS: [&str; 6] = ["total_amount", "carbs", "sugar", "fiber", "fat", "protein"];
pub const N_MEAL: usize = 6;
/// Column of the carbohydrate channel inside a meal row.
pub const CARBS: usize = 1;

pub const GLUCOSE_MIN: f64 = 20.0;
pub const GLUCOSE_MAX: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    Prediabetes,
    T2d,
}

impl Diagnosis {
    pub fn parse(s: &str) -> Option<Option<Self>> {
        match s {
            "" => Some(None),
            "prediabetes" => Some(Some(Diagnosis::Prediabetes)),
            "t2d" => Some(Some(Diagnosis::T2d)),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Diagnosis::Prediabetes => "prediabetes",
            Diagnosis::T2d => "t2d",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Diagnosis::Prediabetes => 0,
            Diagnosis::T2d => 1,
        }
    }
}

impl fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    /// Years.
    pub age: f64,
    /// Kilograms.
    pub weight: f64,
    pub sex: Sex,
}

/// One 60-step person-meal window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgrRecord {
    pub person_id: String,
    pub ppgr_id: String,
    /// mg/dL, `None` where the sensor reported nothing.
    pub glucose: Vec<Option<f64>>,
    /// Per-timestep meal covariates in [`MEAL_CHANNELS`] order, grams.
    pub meals: Vec<[Option<f64>; N_MEAL]>,
    pub demographics: Demographics,
    pub diagnosis: Option<Diagnosis>,
}

impl PpgrRecord {
    pub fn n_observed(&self) -> usize {
        self.glucose.iter().filter(|g| g.is_some()).count()
    }

    /// Logged carbohydrate grams per timestep, missing treated as zero.
    pub fn logged_carbs(&self) -> Vec<f64> {
        self.meals.iter().map(|m| m[CARBS].unwrap_or(0.0)).collect()
    }

    /// Glucose with gaps filled by linear interpolation; leading and trailing
    /// gaps take the nearest observed value.
    pub fn interpolated_glucose(&self) -> Result<Vec<f64>> {
        interpolate(&self.glucose).ok_or_else(|| Error::AllMissing(self.ppgr_id.clone()))
    }
}

pub fn interpolate(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (observed.first()?, observed.last()?);
    let mut out = vec![0.0; values.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = if i <= first_i {
            first_v
        } else if i >= last_i {
            last_v
        } else {
            let k = observed.partition_point(|&(j, _)| j <= i);
            let (i0, v0) = observed[k - 1];
            if i0 == i {
                v0
            } else {
                let (i1, v1) = observed[k];
                v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
            }
        };
    }
    Some(out)
}

/// One broken record invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub index: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.field, i, self.rule),
            None => write!(f, "{}: {}", self.field, self.rule),
        }
    }
}

pub fn validate(record: &PpgrRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, index: Option<usize>, rule: &str| {
        out.push(Violation {
            field: field.to_string(),
            index,
            rule: rule.to_string(),
        })
    };
    if record.glucose.len() != SEQ_LEN {
        push("glucose", None, "sequence length is not 60");
    }
    if record.meals.len() != SEQ_LEN {
        push("meal_covariates", None, "sequence length is not 60");
    }
    for (i, g) in record.glucose.iter().enumerate() {
        if let Some(g) = *g {
            if !(GLUCOSE_MIN..=GLUCOSE_MAX).contains(&g) {
                push("glucose", Some(i), "glucose out of [20,500]");
            }
        }
    }
    for (i, row) in record.meals.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if let Some(v) = *v {
                if !(v >= 0.0) || !v.is_finite() {
                    push(MEAL_CHANNELS[c], Some(i), "covariate must be >= 0");
                }
            }
        }
    }
    if record
        .meals
        .get(MEAL_INDEX)
        .map_or(true, |row| row[CARBS].is_none())
    {
        push("carbs", Some(MEAL_INDEX), "no meal at t=12");
    }
    out
}

/// Records sorted by `(person_id, ppgr_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<PpgrRecord>,
    pub schema_version: u32,
}

impl Dataset {
    pub fn new(mut records: Vec<PpgrRecord>) -> Result<Self> {
        records.sort_by(|a, b| (&a.person_id, &a.ppgr_id).cmp(&(&b.person_id, &b.ppgr_id)));
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.ppgr_id.as_str()) {
                return Err(Error::Malformed(format!("duplicate ppgr_id {}", r.ppgr_id)));
            }
        }
        Ok(Dataset {
            records,
            schema_version: SCHEMA_VERSION,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices grouped by person, in person order.
    pub fn by_person(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.person_id.as_str()).or_default().push(i);
        }
        map
    }

    /// Person-level diagnosis labels (first labelled record wins).
    pub fn person_labels(&self) -> BTreeMap<String, Diagnosis> {
        let mut map = BTreeMap::new();
        for r in &self.records {
            if let Some(d) = r.diagnosis {
                map.entry(r.person_id.clone()).or_insert(d);
            }
        }
        map
    }

    pub fn violations(&self) -> Vec<(String, Violation)> {
        self.records
            .iter()
            .flat_map(|r| validate(r).into_iter().map(move |v| (r.ppgr_id.clone(), v)))
            .collect()
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

fn cell_f64(value: &str, column: &str, line: usize) -> Result<Option<f64>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(None);
    }
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::NonNumericCell {
            column: column.to_string(),
            line,
            value: value.to_string(),
        }),
    }
}

struct PartialRecord {
    rows: Vec<(usize, Option<f64>, [Option<f64>; N_MEAL])>,
    demographics: Demographics,
    diagnosis: Option<Diagnosis>,
    first_line: usize,
}

/// Parses the long-format CSV. Lines starting with `#` are metadata and skipped.
pub fn read_csv(reader: impl Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Malformed(e.to_string()))?
        .clone();
    let mut col = [0usize; 14];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut partial: BTreeMap<(String, String), PartialRecord> = BTreeMap::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        let line = rec.position().map_or(row_idx + 2, |p| p.line() as usize);
        let get = |k: usize| rec.get(col[k]).unwrap_or("");
        let person_id = get(0).to_string();
        let ppgr_id = get(1).to_string();
        if person_id.is_empty() || ppgr_id.is_empty() {
            return Err(Error::Malformed(format!("empty id at line {line}")));
        }
        let t = get(2)
            .parse::<usize>()
            .map_err(|_| Error::NonNumericCell {
                column: "t".into(),
                line,
                value: get(2).to_string(),
            })?;
        if t >= SEQ_LEN {
            return Err(Error::Malformed(format!("t={t} out of 0..59 at line {line}")));
        }
        let glucose = cell_f64(get(3), "glucose", line)?;
        let mut meal = [None; N_MEAL];
        for c in 0..N_MEAL {
            let v = cell_f64(get(4 + c), MEAL_CHANNELS[c], line)?;
            if let Some(v) = v {
                if v < 0.0 {
                    return Err(Error::NegativeCovariate {
                        column: MEAL_CHANNELS[c].to_string(),
                        line,
                        value: v,
                    });
                }
            }
            meal[c] = v;
        }
        let age = cell_f64(get(10), "age", line)?.ok_or_else(|| Error::NonNumericCell {
            column: "age".into(),
            line,
            value: String::new(),
        })?;
        let weight = cell_f64(get(11), "weight", line)?.ok_or_else(|| Error::NonNumericCell {
            column: "weight".into(),
            line,
            value: String::new(),
        })?;
        let sex = match get(12) {
            "F" => Sex::F,
            "M" => Sex::M,
            other => return Err(Error::Malformed(format!("sex `{other}` at line {line}"))),
        };
        let diagnosis = Diagnosis::parse(get(13))
            .ok_or_else(|| Error::Malformed(format!("diagnosis `{}` at line {line}", get(13))))?;
        let demographics = Demographics { age, weight, sex };
        let entry = partial
            .entry((person_id, ppgr_id))
            .or_insert_with(|| PartialRecord {
                rows: Vec::with_capacity(SEQ_LEN),
                demographics,
                diagnosis,
                first_line: line,
            });
        if entry.demographics != demographics || entry.diagnosis != diagnosis {
            return Err(Error::Malformed(format!(
                "static columns differ within a record at line {line} (first row at line {})",
                entry.first_line
            )));
        }
        entry.rows.push((t, glucose, meal));
    }
    let mut records = Vec::with_capacity(partial.len());
    for ((person_id, ppgr_id), p) in partial {
        if p.rows.len() != SEQ_LEN {
            return Err(Error::BadRowCount {
                ppgr_id,
                rows: p.rows.len(),
            });
        }
        let mut glucose = vec![None; SEQ_LEN];
        let mut meals = vec![[None; N_MEAL]; SEQ_LEN];
        let mut seen = [false; SEQ_LEN];
        for (t, g, m) in p.rows {
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::Malformed(format!("duplicate t={t} in record {ppgr_id}")));
            }
            glucose[t] = g;
            meals[t] = m;
        }
        records.push(PpgrRecord {
            person_id,
            ppgr_id,
            glucose,
            meals,
            demographics: p.demographics,
            diagnosis: p.diagnosis,
        });
    }
    Dataset::new(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the long-format CSV. Floats use the shortest representation that
/// parses back to the identical bits.
pub fn write_csv(dataset: &Dataset, mut out: impl Write, meta: Option<&str>) -> std::io::Result<()> {
    if let Some(meta) = meta {
        writeln!(out, "# {meta}")?;
    }
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in &dataset.records {
        let sex = match r.demographics.sex {
            Sex::F => "F",
            Sex::M => "M",
        };
        let diag = r.diagnosis.map(Diagnosis::as_str).unwrap_or("");
        for t in 0..SEQ_LEN {
            let meal: Vec<String> = r.meals[t].iter().map(|v| fmt_opt(*v)).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.person_id,
                r.ppgr_id,
                t,
                fmt_opt(r.glucose[t]),
                meal.join(","),
                r.demographics.age,
                r.demographics.weight,
                sex,
                diag
            )?;
        }
    }
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>, meta: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(dataset, &mut w, meta).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn flat_record(person: &str, id: &str, level: f64) -> PpgrRecord {
        let mut meals = vec![[Some(0.0); N_MEAL]; SEQ_LEN];
        meals[MEAL_INDEX] = [Some(40.0), Some(12.0), Some(3.0), Some(1.0), Some(5.0), Some(6.0)];
        PpgrRecord {
            person_id: person.into(),
            ppgr_id: id.into(),
            glucose: vec![Some(level); SEQ_LEN],
            meals,
            demographics: Demographics {
                age: 55.0,
                weight: 82.5,
                sex: Sex::F,
            },
            diagnosis: Some(Diagnosis::T2d),
        }
    }

    fn to_text(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        write_csv(ds, &mut buf, Some("test")).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn minimal_file_loads_one_record() {
        let ds = Dataset::new(vec![flat_record("p1", "r1", 110.0)]).unwrap();
        let back = read_csv(to_text(&ds).as_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.records[0].n_observed(), 60);
        assert_eq!(back, ds);
    }

    #[test]
    fn blank_glucose_cell_is_missing() {
        let mut r = flat_record("p1", "r1", 110.0);
        r.glucose[3] = None;
        let ds = Dataset::new(vec![r]).unwrap();
        let back = read_csv(to_text(&ds).as_bytes()).unwrap();
        assert_eq!(back.records[0].glucose[3], None);
        assert_eq!(back.records[0].n_observed(), 59);
    }

    #[test]
    fn short_record_is_rejected() {
        let ds = Dataset::new(vec![flat_record("p1", "r1", 110.0)]).unwrap();
        let text = to_text(&ds);
        let truncated: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
        let err = read_csv(truncated.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::BadRowCount { rows: 59, .. }), "{err}");
    }

    #[test]
    fn header_and_cell_errors() {
        let err = read_csv("person_id,ppgr_id,t\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "glucose"));

        let ds = Dataset::new(vec![flat_record("p1", "r1", 110.0)]).unwrap();
        let bad = to_text(&ds).replacen("p1,r1,0,110,", "p1,r1,0,abc,", 1);
        assert!(matches!(read_csv(bad.as_bytes()).unwrap_err(), Error::NonNumericCell { .. }));
        let neg = to_text(&ds).replacen("p1,r1,0,110,0,", "p1,r1,0,110,-1,", 1);
        assert!(matches!(read_csv(neg.as_bytes()).unwrap_err(), Error::NegativeCovariate { .. }));
    }

    #[test]
    fn validation_rules() {
        let r = flat_record("p1", "r1", 110.0);
        assert!(validate(&r).is_empty());

        let mut high = r.clone();
        high.glucose[0] = Some(700.0);
        let v = validate(&high);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "glucose out of [20,500]");
        assert_eq!(v[0].index, Some(0));

        let mut no_meal = r.clone();
        no_meal.meals[MEAL_INDEX][CARBS] = None;
        let v = validate(&no_meal);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "no meal at t=12");
    }

    #[test]
    fn records_are_sorted_and_ids_unique() {
        let ds = Dataset::new(vec![
            flat_record("p2", "a", 100.0),
            flat_record("p1", "c", 100.0),
            flat_record("p1", "b", 100.0),
        ])
        .unwrap();
        let ids: Vec<&str> = ds.records.iter().map(|r| r.ppgr_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
        assert!(Dataset::new(vec![flat_record("p1", "a", 1.0), flat_record("p2", "a", 1.0)]).is_err());
    }

    #[test]
    fn interpolation_fills_gaps_and_ends() {
        let v = interpolate(&[None, Some(1.0), None, None, Some(4.0), None]).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
        assert!(interpolate(&[None, None]).is_none());
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            values in proptest::collection::vec(proptest::option::of(20.0f64..500.0), SEQ_LEN),
            carbs in 0.0f64..200.0,
        ) {
            let mut r = flat_record("p", "r", 100.0);
            r.glucose = values;
            r.meals[MEAL_INDEX][CARBS] = Some(carbs);
            let ds = Dataset::new(vec![r]).unwrap();
            let back = read_csv(to_text(&ds).as_bytes()).unwrap();
            for (a, b) in back.records[0].glucose.iter().zip(&ds.records[0].glucose) {
                proptest::prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            }
            proptest::prop_assert_eq!(back.records[0].meals[MEAL_INDEX][CARBS].unwrap().to_bits(), carbs.to_bits());
        }
    }
}
