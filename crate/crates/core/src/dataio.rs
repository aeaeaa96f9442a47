//! CSV ingestion, snapshots and a small transform vocabulary for user data.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::util::mean;

/// Feature matrix, target and row labels of a loaded table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub index_name: Option<String>,
    /// Row labels; original 1-based data row numbers when no index column.
    pub index: Vec<String>,
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub log: Vec<TransformRecord>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        target_name: String,
        index_name: Option<String>,
        index: Vec<String>,
        x: DenseMatrix,
        y: Vec<f64>,
    ) -> Result<Self> {
        let d = Dataset {
            feature_names,
            target_name,
            index_name,
            index,
            x,
            y,
            log: Vec::new(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.cols() != self.feature_names.len() {
            return Err(Error::invalid("feature names do not match the matrix width"));
        }
        if self.x.rows() != self.y.len() || self.index.len() != self.y.len() {
            return Err(Error::invalid("rows of X, Y and the index differ"));
        }
        let mut seen = HashSet::new();
        for name in self.feature_names.iter().chain(std::iter::once(&self.target_name)) {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name '{name}'")));
            }
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("target has non-finite entries"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    /// Copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            index_name: self.index_name.clone(),
            index: idx.iter().map(|&i| self.index[i].clone()).collect(),
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            log: self.log.clone(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na")
}

/// Reads a headed CSV. Columns other than `target` and `index` are features.
/// Rows with a missing target or feature are dropped and counted in the log.
pub fn load_csv(path: impl AsRef<Path>, target: &str, index: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::data(format!("{}: duplicate header '{h}'", path.display())));
        }
    }
    let target_col = headers
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::data(format!("{}: no target column '{target}'", path.display())))?;
    let index_col = match index {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::data(format!("{}: no index column '{name}'", path.display())))?,
        ),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != target_col && Some(c) != index_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::data(format!("{}: no feature columns", path.display())));
    }

    let parse = |cell: &str, row: usize, col: usize| -> Result<Option<f64>> {
        if is_missing(cell) {
            return Ok(None);
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(Error::data(format!(
                "{}: row {row}, column '{}': cannot parse '{cell}' as a finite decimal number",
                path.display(),
                headers[col]
            ))),
        }
    };

    let mut labels = Vec::new();
    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let (mut missing_target, mut missing_feature) = (0usize, 0usize);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        let target_val = parse(&rec[target_col], row_no, target_col)?;
        let mut feats = Vec::with_capacity(feature_cols.len());
        let mut complete = true;
        for &c in &feature_cols {
            match parse(&rec[c], row_no, c)? {
                Some(v) => feats.push(v),
                None => complete = false,
            }
        }
        let Some(t) = target_val else {
            missing_target += 1;
            continue;
        };
        if !complete {
            missing_feature += 1;
            continue;
        }
        labels.push(match index_col {
            Some(c) => rec[c].to_string(),
            None => row_no.to_string(),
        });
        y.push(t);
        rows.push(feats);
    }
    if y.is_empty() {
        return Err(Error::data(format!("{}: no complete rows", path.display())));
    }
    let n = y.len();
    let mut values = Vec::with_capacity(n * feature_cols.len());
    for j in 0..feature_cols.len() {
        values.extend(rows.iter().map(|r| r[j]));
    }
    let x = DenseMatrix::from_column_major(n, feature_cols.len(), values)?;
    let mut d = Dataset::new(
        feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        target.to_string(),
        index.map(str::to_string),
        labels,
        x,
        y,
    )?;
    if missing_target + missing_feature > 0 {
        log::info!(
            "{}: dropped {missing_target} rows with a missing target and {missing_feature} with missing features",
            path.display()
        );
    }
    d.log.push(TransformRecord {
        step: Transform::DropNa,
        rows_before: n + missing_target + missing_feature,
        rows_after: n,
        note: format!("load: {missing_target} missing target, {missing_feature} missing features"),
    });
    Ok(d)
}

/// Writes the dataset as CSV (index, target, features) plus a JSON sidecar
/// at `<path>.json`. Returns the sidecar path.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let index_header = d.index_name.clone().unwrap_or_else(|| "row".to_string());
    let mut header = vec![index_header.as_str(), d.target_name.as_str()];
    header.extend(d.feature_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for i in 0..d.rows() {
        let mut rec = vec![d.index[i].clone(), d.y[i].to_string()];
        rec.extend((0..d.x.cols()).map(|j| d.x.get(i, j).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = PathBuf::from(format!("{}.json", path.display()));
    let meta = Sidecar {
        target: d.target_name.clone(),
        index: index_header,
        features: d.feature_names.clone(),
        transform_log: d.log.clone(),
    };
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    target: String,
    index: String,
    features: Vec<String>,
    transform_log: Vec<TransformRecord>,
}

/// One transform step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Pairs target row `t` with feature row `t - k`; the first `k` rows go.
    Lag { k: usize },
    /// `(v_t - v_{t-1}) / v_{t-1}` on the listed columns (all features when
    /// absent); the first row goes.
    PctChange {
        #[serde(default)]
        columns: Option<Vec<String>>,
    },
    /// Features to mean 0 and unit (1/n) variance.
    Standardize,
    /// Features to mean 0.
    Demean,
    /// Keeps the listed features in the listed order.
    Select { columns: Vec<String> },
    /// Drops rows with a non-finite entry.
    DropNa,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub steps: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub step: Transform,
    pub rows_before: usize,
    pub rows_after: usize,
    pub note: String,
}

fn columns_of(d: &Dataset) -> Vec<Vec<f64>> {
    (0..d.x.cols()).map(|j| d.x.column(j).to_vec()).collect()
}

fn rebuild(d: &Dataset, names: Vec<String>, cols: Vec<Vec<f64>>, y: Vec<f64>, index: Vec<String>) -> Result<Dataset> {
    let n = y.len();
    let values: Vec<f64> = cols.into_iter().flatten().collect();
    let x = DenseMatrix::from_column_major(n, names.len(), values)?;
    let mut out = Dataset::new(names, d.target_name.clone(), d.index_name.clone(), index, x, y)?;
    out.log = d.log.clone();
    Ok(out)
}

fn apply_one(d: &Dataset, step: &Transform) -> Result<(Dataset, String)> {
    let n = d.rows();
    match step {
        Transform::Lag { k } => {
            if *k >= n {
                return Err(Error::invalid(format!("lag {k} needs more than {n} rows")));
            }
            let cols = columns_of(d).into_iter().map(|c| c[..n - k].to_vec()).collect();
            let out = rebuild(d, d.feature_names.clone(), cols, d.y[*k..].to_vec(), d.index[*k..].to_vec())?;
            Ok((out, format!("target led by {k} rows")))
        }
        Transform::PctChange { columns } => {
            if n < 2 {
                return Err(Error::invalid("pct_change needs at least two rows"));
            }
            let targets: Vec<String> = columns.clone().unwrap_or_else(|| d.feature_names.clone());
            for c in &targets {
                if c != &d.target_name && !d.feature_names.contains(c) {
                    return Err(Error::invalid(format!("pct_change: unknown column '{c}'")));
                }
            }
            let pct = |v: &[f64], name: &str| -> Result<Vec<f64>> {
                v.windows(2)
                    .map(|w| {
                        let r = (w[1] - w[0]) / w[0];
                        if r.is_finite() {
                            Ok(r)
                        } else {
                            Err(Error::data(format!("pct_change: column '{name}' has a zero base value")))
                        }
                    })
                    .collect()
            };
            let mut cols = Vec::with_capacity(d.x.cols());
            for (j, name) in d.feature_names.iter().enumerate() {
                let c = d.x.column(j);
                cols.push(if targets.contains(name) { pct(c, name)? } else { c[1..].to_vec() });
            }
            let y = if targets.contains(&d.target_name) {
                pct(&d.y, &d.target_name)?
            } else {
                d.y[1..].to_vec()
            };
            let out = rebuild(d, d.feature_names.clone(), cols, y, d.index[1..].to_vec())?;
            Ok((out, format!("{} columns", targets.len())))
        }
        Transform::Standardize | Transform::Demean => {
            let scale = matches!(step, Transform::Standardize);
            let mut cols = columns_of(d);
            for (j, c) in cols.iter_mut().enumerate() {
                let m = mean(c);
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
                if scale && !(sd > 0.0) {
                    return Err(Error::data(format!(
                        "standardize: column '{}' is constant",
                        d.feature_names[j]
                    )));
                }
                for v in c.iter_mut() {
                    *v = if scale { (*v - m) / sd } else { *v - m };
                }
            }
            let out = rebuild(d, d.feature_names.clone(), cols, d.y.clone(), d.index.clone())?;
            Ok((out, format!("{} columns", d.x.cols())))
        }
        Transform::Select { columns } => {
            if columns.is_empty() {
                return Err(Error::invalid("select needs at least one column"));
            }
            let mut idx = Vec::with_capacity(columns.len());
            for c in columns {
                let j = d
                    .feature_names
                    .iter()
                    .position(|f| f == c)
                    .ok_or_else(|| Error::invalid(format!("select: unknown column '{c}'")))?;
                idx.push(j);
            }
            let out = rebuild(
                d,
                columns.clone(),
                idx.iter().map(|&j| d.x.column(j).to_vec()).collect(),
                d.y.clone(),
                d.index.clone(),
            )?;
            Ok((out, format!("kept {} of {} columns", columns.len(), d.x.cols())))
        }
        Transform::DropNa => {
            let keep: Vec<usize> = (0..n)
                .filter(|&i| d.y[i].is_finite() && (0..d.x.cols()).all(|j| d.x.get(i, j).is_finite()))
                .collect();
            let mut out = d.select_rows(&keep);
            out.log = d.log.clone();
            Ok((out, format!("dropped {} rows", n - keep.len())))
        }
    }
}

/// Applies the steps in order and appends one log record per step.
pub fn apply_transforms(d: &Dataset, spec: &TransformSpec) -> Result<Dataset> {
    let mut cur = d.clone();
    for step in &spec.steps {
        let before = cur.rows();
        let (mut next, note) = apply_one(&cur, step)?;
        log::debug!("transform {step:?}: {note}");
        next.log.push(TransformRecord {
            step: step.clone(),
            rows_before: before,
            rows_after: next.rows(),
            note,
        });
        cur = next;
    }
    Ok(cur)
}

/// Re-applies the transform steps recorded in `log` to `raw`.
pub fn replay_log(raw: &Dataset, log: &[TransformRecord]) -> Result<Dataset> {
    let steps = log
        .iter()
        .skip(raw.log.len())
        .map(|r| r.step.clone())
        .collect();
    apply_transforms(raw, &TransformSpec { steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn toy() -> Dataset {
        let x = DenseMatrix::from_rows(&[
            vec![100.0, 1.0],
            vec![110.0, 2.0],
            vec![99.0, 4.0],
            vec![120.0, 3.0],
            vec![90.0, 5.0],
        ])
        .unwrap();
        Dataset::new(
            vec!["a".into(), "b".into()],
            "y".into(),
            Some("date".into()),
            (1..=5).map(|i| format!("t{i}")).collect(),
            x,
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
        )
        .unwrap()
    }

    #[test]
    fn loads_toy_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "date,y,x1,x2\n2000,1.5,2,3\n2001,2.5,4,5\n2002,-1,6e-1,7\n");
        let d = load_csv(&p, "y", Some("date")).unwrap();
        assert_eq!(d.rows(), 3);
        assert_eq!(d.feature_names, vec!["x1", "x2"]);
        assert_eq!(d.x.get(2, 0), 0.6);
        assert_eq!(d.index, vec!["2000", "2001", "2002"]);
    }

    #[test]
    fn drops_missing_target_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "date,y,x1\n1,1,2\n2,,4\n3,3,NaN\n4,4,8\n");
        let d = load_csv(&p, "y", Some("date")).unwrap();
        assert_eq!(d.rows(), 2);
        assert_eq!(d.index, vec!["1", "4"]);
        assert_eq!(d.log[0].rows_before, 4);
        assert!(d.log[0].note.contains("1 missing target"));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "y,x,x\n1,2,3\n");
        assert!(matches!(load_csv(&p, "y", None), Err(Error::Data(m)) if m.contains("duplicate")));
        let p = write(&dir, "b.csv", "a,x\n1,2\n");
        assert!(matches!(load_csv(&p, "y", None), Err(Error::Data(m)) if m.contains("target")));
        let p = write(&dir, "c.csv", "y,x\n1,2\n2,\"1,5\"\n");
        match load_csv(&p, "y", None) {
            Err(Error::Data(m)) => assert!(m.contains("row 2") && m.contains("'x'"), "{m}"),
            other => panic!("{other:?}"),
        }
        let p = write(&dir, "d.csv", "y,x\n1,inf\n");
        assert!(load_csv(&p, "y", None).is_err());
        assert!(matches!(load_csv(dir.path().join("none.csv"), "y", None), Err(Error::Io { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = toy();
        d.y[0] = 0.1 + 0.2;
        d.x = DenseMatrix::from_column_major(5, 2, d.x.values().iter().map(|v| v / 7.0).collect()).unwrap();
        let p = dir.path().join("snap.csv");
        let side = write_csv(&d, &p).unwrap();
        assert!(side.exists());
        let back = load_csv(&p, "y", Some("date")).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.y, d.y);
        assert_eq!(back.index, d.index);
    }

    #[test]
    fn lag_shifts_target() {
        let d = apply_transforms(&toy(), &TransformSpec { steps: vec![Transform::Lag { k: 1 }] }).unwrap();
        assert_eq!(d.rows(), 4);
        assert_eq!(d.y, vec![2.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.x.get(0, 0), 100.0);
        assert!(apply_transforms(&toy(), &TransformSpec { steps: vec![Transform::Lag { k: 5 }] }).is_err());
    }

    #[test]
    fn pct_change_arithmetic() {
        let d = apply_transforms(
            &toy(),
            &TransformSpec {
                steps: vec![Transform::PctChange {
                    columns: Some(vec!["a".into()]),
                }],
            },
        )
        .unwrap();
        assert!((d.x.get(0, 0) - 0.10).abs() < 1e-12);
        assert!((d.x.get(1, 0) + 0.10).abs() < 1e-12);
        assert_eq!(d.x.get(0, 1), 2.0);
        assert_eq!(d.y[0], 2.0);
    }

    #[test]
    fn standardize_and_errors() {
        let d = apply_transforms(&toy(), &TransformSpec { steps: vec![Transform::Standardize] }).unwrap();
        for j in 0..2 {
            let c = d.x.column(j);
            let m = c.iter().sum::<f64>() / 5.0;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
        }
        let mut c = toy();
        c.x = DenseMatrix::from_column_major(5, 2, [vec![1.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]].concat()).unwrap();
        match apply_transforms(&c, &TransformSpec { steps: vec![Transform::Standardize] }) {
            Err(Error::Data(m)) => assert!(m.contains("'a'")),
            other => panic!("{other:?}"),
        }
        let s = apply_transforms(
            &toy(),
            &TransformSpec {
                steps: vec![Transform::Select { columns: vec!["b".into()] }],
            },
        )
        .unwrap();
        assert_eq!(s.feature_names, vec!["b"]);
        assert!(apply_transforms(
            &toy(),
            &TransformSpec {
                steps: vec![Transform::Select { columns: vec!["zz".into()] }],
            },
        )
        .is_err());
    }

    #[test]
    fn replay_reproduces_bitwise() {
        let spec = TransformSpec {
            steps: vec![
                Transform::PctChange { columns: None },
                Transform::Lag { k: 1 },
                Transform::Demean,
                Transform::DropNa,
                Transform::Standardize,
            ],
        };
        let raw = toy();
        let out = apply_transforms(&raw, &spec).unwrap();
        assert_eq!(out.log.len(), 5);
        assert_eq!(replay_log(&raw, &out.log).unwrap(), out);
        let json = serde_json::to_string(&spec).unwrap();
        let back: TransformSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
