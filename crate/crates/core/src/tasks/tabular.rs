//! Tabular data from CSV with a sidecar column manifest.
//!
//! The manifest is itself a CSV with header `column,kind`, where `kind` is
//! `categorical`, `continuous` or `unit` (a `[0, 1]` quantity passed through
//! the clipped logit). Categorical columns become tokens; all continuous
//! columns are packed into one vector and standardized with train-split
//! statistics.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::{IgdError, Result};
use crate::rng::{domain, keyed_rng};
use crate::state::{ElementLayout, Sequence, Token};

use super::transform::{logit_inverse, logit_transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ColumnSpec {
    pub column: String,
    pub kind: ColumnKind,
}

/// Everything needed to encode and decode rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSchema {
    pub columns: Vec<ColumnSpec>,
    /// Category names per categorical column, in token order.
    pub categories: Vec<Vec<String>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TabularDataset {
    pub schema: TabularSchema,
    pub layout: Arc<ElementLayout>,
    pub train: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ColumnSpec>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| IgdError::Io(e.to_string()))?;
    rd.deserialize()
        .map(|r| r.map_err(|e| IgdError::Parse(format!("manifest: {e}"))))
        .collect()
}

fn parse_float(s: &str, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| IgdError::Parse(format!("column {col}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(IgdError::Parse(format!("column {col}: non-finite value")));
    }
    Ok(v)
}

impl TabularSchema {
    pub fn discrete_len(&self) -> usize {
        self.categories.len()
    }

    pub fn continuous_len(&self) -> usize {
        self.means.len()
    }

    pub fn layout(&self) -> Result<ElementLayout> {
        let vocab = self.categories.iter().map(Vec::len).max().unwrap_or(2).max(2);
        let dims = if self.continuous_len() > 0 {
            vec![self.continuous_len()]
        } else {
            vec![]
        };
        ElementLayout::new(self.discrete_len(), dims, vocab as u32)
    }

    /// Raw (transformed, unstandardized) values of one record.
    fn raw(&self, record: &csv::StringRecord, index: &[usize]) -> Result<(Vec<String>, Vec<f64>)> {
        let mut cats = Vec::new();
        let mut conts = Vec::new();
        for (column, &i) in self.columns.iter().zip(index) {
            let field = record
                .get(i)
                .ok_or_else(|| IgdError::Parse(format!("row missing column {}", column.column)))?;
            match column.kind {
                ColumnKind::Categorical => cats.push(field.trim().to_string()),
                ColumnKind::Continuous => conts.push(parse_float(field, &column.column)?),
                ColumnKind::Unit => conts.push(logit_transform(parse_float(field, &column.column)?)),
            }
        }
        Ok((cats, conts))
    }

    fn encode_raw(&self, layout: &Arc<ElementLayout>, cats: &[String], conts: &[f64]) -> Result<Sequence> {
        let cat_cols: Vec<&ColumnSpec> = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .collect();
        let tokens =
            cats.iter()
                .zip(&self.categories)
                .zip(&cat_cols)
                .map(|((c, names), column)| {
                    names.iter().position(|n| n == c).map(|p| p as Token).ok_or_else(|| {
                        IgdError::InvalidValue(format!("unseen category {c:?} in column {}", column.column))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
        let vectors = if conts.is_empty() {
            vec![]
        } else {
            vec![conts
                .iter()
                .zip(self.means.iter().zip(&self.stds))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()]
        };
        Sequence::new(layout.clone(), tokens, vectors)
    }

    /// Back to column strings in manifest order. Out-of-range tokens decode
    /// to an error.
    pub fn decode(&self, seq: &Sequence) -> Result<Vec<String>> {
        let mut tok = seq.tokens().iter();
        let mut cat_i = 0;
        let mut cont_i = 0;
        let mut out = Vec::with_capacity(self.columns.len());
        for column in &self.columns {
            match column.kind {
                ColumnKind::Categorical => {
                    let t = *tok.next().expect("token per categorical column") as usize;
                    let name = self.categories[cat_i]
                        .get(t)
                        .ok_or_else(|| IgdError::InvalidValue(format!("token {t} outside column {}", column.column)))?;
                    out.push(name.clone());
                    cat_i += 1;
                }
                kind => {
                    let z = seq.vectors()[0][cont_i];
                    let x = z * self.stds[cont_i] + self.means[cont_i];
                    let v = if kind == ColumnKind::Unit { logit_inverse(x) } else { x };
                    out.push(format!("{v}"));
                    cont_i += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Loads a CSV, shuffles rows with `seed`, holds out `test_fraction`, builds
/// category maps and standardization from the train split and encodes both
/// splits. Test rows with categories unseen in training are an error.
pub fn load_tabular(csv_path: &Path, manifest_path: &Path, test_fraction: f64, seed: u64) -> Result<TabularDataset> {
    let columns = read_manifest(manifest_path)?;
    let mut rd = csv::Reader::from_path(csv_path).map_err(|e| IgdError::Io(e.to_string()))?;
    let headers = rd.headers().map_err(|e| IgdError::Parse(e.to_string()))?.clone();
    let index = columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c.column)
                .ok_or_else(|| IgdError::Parse(format!("column {} not in CSV", c.column)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = rd
        .records()
        .map(|r| r.map_err(|e| IgdError::Parse(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if records.is_empty() {
        return Err(IgdError::InvalidValue("CSV has no rows".into()));
    }
    records.shuffle(&mut keyed_rng(seed, &[domain::DATA]));
    let n_test = ((records.len() as f64) * test_fraction).round() as usize;
    let test_rec = records.split_off(records.len() - n_test.min(records.len() - 1));

    let mut schema = TabularSchema {
        columns,
        categories: vec![],
        means: vec![],
        stds: vec![],
    };
    let train_raw = records
        .iter()
        .map(|r| schema.raw(r, &index))
        .collect::<Result<Vec<_>>>()?;
    let n_cat = schema
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Categorical)
        .count();
    schema.categories = (0..n_cat)
        .map(|j| {
            let set: BTreeSet<&String> = train_raw.iter().map(|(c, _)| &c[j]).collect();
            set.into_iter().cloned().collect()
        })
        .collect();
    let n_cont = schema.columns.len() - n_cat;
    let n = train_raw.len() as f64;
    for j in 0..n_cont {
        let m = train_raw.iter().map(|(_, v)| v[j]).sum::<f64>() / n;
        let var = train_raw.iter().map(|(_, v)| (v[j] - m).powi(2)).sum::<f64>() / n;
        schema.means.push(m);
        schema.stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
    }
    let layout = Arc::new(schema.layout()?);
    let train = train_raw
        .iter()
        .map(|(c, v)| schema.encode_raw(&layout, c, v))
        .collect::<Result<Vec<_>>>()?;
    let test = test_rec
        .iter()
        .map(|r| {
            let (c, v) = schema.raw(r, &index)?;
            schema.encode_raw(&layout, &c, &v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TabularDataset {
        schema,
        layout,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = String::from("color,size,frac\n");
        for i in 0..40 {
            let color = ["red", "green", "blue"][i % 3];
            rows.push_str(&format!("{color},{},{}\n", i as f64 * 0.5, (i as f64 + 0.5) / 41.0));
        }
        let csv = write(dir.path(), "d.csv", &rows);
        let man = write(
            dir.path(),
            "m.csv",
            "column,kind\ncolor,categorical\nsize,continuous\nfrac,unit\n",
        );
        let ds = load_tabular(&csv, &man, 0.25, 7).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 40);
        assert_eq!(ds.layout.discrete_len(), 1);
        assert_eq!(ds.layout.dims(), &[2]);
        assert_eq!(ds.schema.categories[0], vec!["blue", "green", "red"]);
        let row = ds.schema.decode(&ds.train[0]).unwrap();
        assert!(["red", "green", "blue"].contains(&row[0].as_str()));
        let size: f64 = row[1].parse().unwrap();
        assert!((size * 2.0 - (size * 2.0).round()).abs() < 1e-9);
    }

    #[test]
    fn unseen_category_is_an_error() {
        let schema = TabularSchema {
            columns: vec![ColumnSpec {
                column: "c".into(),
                kind: ColumnKind::Categorical,
            }],
            categories: vec![vec!["a".into(), "b".into()]],
            means: vec![],
            stds: vec![],
        };
        let layout = Arc::new(schema.layout().unwrap());
        assert!(schema.encode_raw(&layout, &["b".into()], &[]).is_ok());
        let err = schema.encode_raw(&layout, &["z".into()], &[]).unwrap_err();
        assert!(err.to_string().contains("unseen"));
    }
}
