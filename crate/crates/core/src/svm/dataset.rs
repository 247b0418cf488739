use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::SvmError;

/// Labelled feature matrix for binary classification (labels −1 / +1).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub case_ids: Vec<String>,
    pub labels: Vec<i8>,
    /// Row-major, one row per case.
    pub features: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        case_ids: Vec<String>,
        labels: Vec<i8>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self, SvmError> {
        let n = case_ids.len();
        let bad = |m: String| Err(SvmError::InvalidDataset(m));
        if labels.len() != n || features.len() != n {
            return bad(format!("{n} case ids, {} labels, {} rows", labels.len(), features.len()));
        }
        if let Some(l) = labels.iter().find(|&&l| l != 1 && l != -1) {
            return bad(format!("label {l} not in {{-1, 1}}"));
        }
        if !(labels.contains(&1) && labels.contains(&-1)) {
            return bad("both classes must be present".into());
        }
        let d = feature_names.len();
        if let Some(r) = features.iter().position(|r| r.len() != d) {
            return bad(format!("row {r} has {} values, expected {d}", features[r].len()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite feature value".into());
        }
        let mut seen = HashSet::new();
        if let Some(dup) = case_ids.iter().find(|c| !seen.insert(c.as_str())) {
            return bad(format!("duplicate case id {dup}"));
        }
        Ok(Self { feature_names, case_ids, labels, features })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Rows `idx` in the given order (no validation of class balance).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            case_ids: idx.iter().map(|&i| self.case_ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
        }
    }

    /// CSV with header `case_id,label,<feature names>`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SvmError> {
        let csv_err = |e: csv::Error| SvmError::Csv(e.to_string());
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 3 || &header[0] != "case_id" || &header[1] != "label" {
            return Err(SvmError::Csv("header must start with case_id,label".into()));
        }
        let names = header.iter().skip(2).map(str::to_string).collect();
        let (mut ids, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| SvmError::Csv(format!("row {line}: {e}")));
            ids.push(rec[0].to_string());
            let label = parse(&rec[1])?;
            labels.push(if label == 1.0 {
                1
            } else if label == -1.0 {
                -1
            } else {
                0
            });
            rows.push(rec.iter().skip(2).map(parse).collect::<Result<Vec<_>, _>>()?);
        }
        Self::new(names, ids, labels, rows)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, SvmError> {
        let f = std::fs::File::open(path).map_err(|e| SvmError::Csv(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SvmError> {
        let csv_err = |e: csv::Error| SvmError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["case_id".to_string(), "label".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec = vec![self.case_ids[i].clone(), self.labels[i].to_string()];
            rec.extend(self.features[i].iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| SvmError::Csv(e.to_string()))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), SvmError> {
        let f = std::fs::File::create(path).map_err(|e| SvmError::Csv(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec!["c1".into(), "c2".into()],
            vec![-1, 1],
            vec![vec![0.1, -2.5], vec![1e-17, 3.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("case_id,label,a,b\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn validation() {
        let names = vec!["a".to_string()];
        assert!(
            Dataset::new(names.clone(), vec!["x".into(), "y".into()], vec![1, 1], vec![vec![0.0], vec![1.0]]).is_err()
        );
        assert!(
            Dataset::new(names.clone(), vec!["x".into(), "x".into()], vec![1, -1], vec![vec![0.0], vec![1.0]]).is_err()
        );
        assert!(
            Dataset::new(names.clone(), vec!["x".into(), "y".into()], vec![1, 2], vec![vec![0.0], vec![1.0]]).is_err()
        );
        assert!(
            Dataset::new(names, vec!["x".into(), "y".into()], vec![1, -1], vec![vec![f64::NAN], vec![1.0]]).is_err()
        );
        assert!(Dataset::read_csv("id,label,a\nx,1,0\n".as_bytes()).is_err());
    }
}
