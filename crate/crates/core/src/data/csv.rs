//! CSV ingestion driven by a JSON column-role schema.
//!
//! Numeric features are standardized over the (filtered) file, categorical
//! features are one-hot encoded with categories in lexicographic order, and the
//! sensitive and label columns are mapped through explicit value tables. Rows
//! with a missing value in any used column are dropped. When a header names
//! the same column twice, the first occurrence wins.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, VARIANCE_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnRole {
    FeatureNumeric,
    FeatureCategorical,
    Sensitive,
    Label,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Row filter applied before encoding. Comparison is numeric when both sides
/// parse as numbers, otherwise string comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    pub value: serde_json::Value,
}

impl Filter {
    fn keeps(&self, cell: &str) -> bool {
        let rhs = match &self.value {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let ord = match (cell.trim().parse::<f64>(), rhs.parse::<f64>()) {
            (Ok(a), Ok(b)) => a.partial_cmp(&b),
            _ => Some(cell.cmp(rhs.as_str())),
        };
        let Some(ord) = ord else { return false };
        use std::cmp::Ordering::*;
        match self.op {
            FilterOp::Eq => ord == Equal,
            FilterOp::Ne => ord != Equal,
            FilterOp::Lt => ord == Less,
            FilterOp::Le => ord != Greater,
            FilterOp::Gt => ord == Greater,
            FilterOp::Ge => ord != Less,
        }
    }
}

/// Column roles and value maps for one CSV source.
///
/// `sensitive_map` and `label_map` translate raw cell values; the key `"*"`
/// matches any value not listed explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnRole>,
    pub sensitive_map: BTreeMap<String, u8>,
    pub label_map: BTreeMap<String, usize>,
    /// Column names for files without a header row.
    #[serde(default)]
    pub header: Option<Vec<String>>,
    #[serde(default = "default_na_values")]
    pub na_values: Vec<String>,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

fn default_na_values() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into(), "N/A".into()]
}

impl Schema {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    fn single(&self, role: ColumnRole) -> Result<&str> {
        let mut named = self.columns.iter().filter(|(_, r)| **r == role).map(|(c, _)| c.as_str());
        let first = named
            .next()
            .ok_or_else(|| Error::Schema(format!("no column has role {role:?}")))?;
        if named.next().is_some() {
            return Err(Error::Schema(format!("more than one column has role {role:?}")));
        }
        Ok(first)
    }

    pub fn sensitive_column(&self) -> Result<&str> {
        self.single(ColumnRole::Sensitive)
    }

    pub fn label_column(&self) -> Result<&str> {
        self.single(ColumnRole::Label)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensitive_column()?;
        self.label_column()?;
        if let Some(v) = self.sensitive_map.values().find(|&&v| v > 1) {
            return Err(Error::Schema(format!("sensitive_map value {v} is not in {{0,1}}")));
        }
        if self.label_map.is_empty() {
            return Err(Error::Schema("label_map is empty".into()));
        }
        Ok(())
    }

    /// Number of classes implied by the label map (at least 2).
    pub fn num_classes(&self) -> usize {
        self.label_map.values().max().map_or(2, |&m| (m + 1).max(2))
    }
}

fn lookup<T: Copy>(map: &BTreeMap<String, T>, key: &str) -> Option<T> {
    map.get(key).or_else(|| map.get("*")).copied()
}

/// Loads and encodes a CSV file according to `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header.is_none())
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let header: Vec<String> = match &schema.header {
        Some(h) => h.clone(),
        None => rdr.headers()?.iter().map(str::to_owned).collect(),
    };
    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        position.entry(name.as_str()).or_insert(i);
    }
    let col = |name: &str| -> Result<usize> {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };

    let sens_idx = col(schema.sensitive_column()?)?;
    let label_idx = col(schema.label_column()?)?;
    // Features follow header order, first occurrence of each name.
    let mut features: Vec<(usize, ColumnRole)> = Vec::new();
    for (name, role) in &schema.columns {
        col(name)?;
        if matches!(role, ColumnRole::FeatureNumeric | ColumnRole::FeatureCategorical) {
            features.push((col(name)?, *role));
        }
    }
    features.sort_by_key(|(i, _)| *i);
    let filters: Vec<(usize, &Filter)> = schema
        .filters
        .iter()
        .map(|f| Ok((col(&f.column)?, f)))
        .collect::<Result<_>>()?;

    let used: BTreeSet<usize> = features
        .iter()
        .map(|(i, _)| *i)
        .chain([sens_idx, label_idx])
        .chain(filters.iter().map(|(i, _)| *i))
        .collect();

    // First pass: keep raw cells of surviving rows.
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        if used.iter().any(|&i| schema.na_values.iter().any(|na| na == cell(i))) {
            continue;
        }
        if !filters.iter().all(|(i, f)| f.keeps(cell(*i))) {
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::Data(format!("row {line} has {} fields, header has {}", record.len(), header.len())));
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }

    let num_classes = schema.num_classes();
    let mut ts = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let raw_t = &row[sens_idx];
        let t = lookup(&schema.sensitive_map, raw_t)
            .ok_or_else(|| Error::Data(format!("row {r}: sensitive value '{raw_t}' has no binary mapping")))?;
        let raw_y = &row[label_idx];
        let y = lookup(&schema.label_map, raw_y)
            .ok_or_else(|| Error::Data(format!("row {r}: label value '{raw_y}' has no mapping")))?;
        ts.push(t);
        ys.push(y);
    }

    // Encode each feature column into one or more output columns.
    let mut encoded: Vec<Vec<f64>> = Vec::new();
    for &(i, role) in &features {
        match role {
            ColumnRole::FeatureNumeric => {
                let mut values = Vec::with_capacity(rows.len());
                for (r, row) in rows.iter().enumerate() {
                    let v: f64 = row[i].parse().map_err(|_| {
                        Error::Data(format!("row {r}: column '{}' value '{}' is not numeric", header[i], row[i]))
                    })?;
                    values.push(v);
                }
                standardize(&mut values);
                encoded.push(values);
            }
            ColumnRole::FeatureCategorical => {
                let categories: BTreeSet<&str> = rows.iter().map(|row| row[i].as_str()).collect();
                for cat in categories {
                    encoded.push(rows.iter().map(|row| f64::from(u8::from(row[i] == cat))).collect());
                }
            }
            _ => unreachable!(),
        }
    }

    let feature_dim = encoded.len();
    let samples = (0..rows.len())
        .map(|r| Sample::new(encoded.iter().map(|c| c[r]).collect(), ts[r], ys[r]))
        .collect();
    Dataset::new(samples, feature_dim, num_classes)
}

/// Zero mean, unit (population) variance; columns with variance under
/// [`VARIANCE_FLOOR`] become all zeros.
fn standardize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var < VARIANCE_FLOOR {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let sd = var.sqrt();
        values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(extra: &str) -> Schema {
        Schema::from_json_str(&format!(
            r#"{{
                "columns": {{"a": "feature-numeric", "b": "feature-numeric", "g": "sensitive", "y": "label"{extra}}},
                "sensitive_map": {{"F": 0, "M": 1}},
                "label_map": {{"0": 0, "1": 1}}
            }}"#
        ))
        .unwrap()
    }

    const CSV: &str = "a,b,g,y\n1,10,F,0\n2,10,M,1\n3,10,M,0\n4,10,F,1\n";

    #[test]
    fn standardizes_numeric_columns() {
        let d = load_csv_reader(CSV.as_bytes(), &schema("")).unwrap();
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.len(), 4);
        let col: Vec<f64> = d.iter().map(|s| s.x[0]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        // constant column b
        assert!(d.iter().all(|s| s.x[1] == 0.0));
        assert_eq!(d.sensitive(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn one_hot_is_lexicographic() {
        let csv = "c,g,y\nz,F,0\na,M,1\nm,M,0\n";
        let s = Schema::from_json_str(
            r#"{"columns": {"c": "feature-categorical", "g": "sensitive", "y": "label"},
                "sensitive_map": {"F": 0, "M": 1}, "label_map": {"0": 0, "1": 1}}"#,
        )
        .unwrap();
        let d = load_csv_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.feature_dim(), 3);
        assert_eq!(d.samples()[0].x, vec![0.0, 0.0, 1.0]);
        assert_eq!(d.samples()[1].x, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let s = schema(r#", "nope": "drop""#);
        assert!(matches!(load_csv_reader(CSV.as_bytes(), &s), Err(Error::Schema(_))));
    }

    #[test]
    fn unmapped_sensitive_value_is_data_error() {
        let csv = "a,b,g,y\n1,1,F,0\n2,2,X,1\n";
        assert!(matches!(load_csv_reader(csv.as_bytes(), &schema("")), Err(Error::Data(_))));
    }

    #[test]
    fn schema_requires_single_sensitive_and_label() {
        let bad = r#"{"columns": {"a": "sensitive", "b": "sensitive", "y": "label"},
                      "sensitive_map": {}, "label_map": {"0": 0}}"#;
        assert!(matches!(Schema::from_json_str(bad), Err(Error::Schema(_))));
        let bad = r#"{"columns": {"a": "sensitive"}, "sensitive_map": {}, "label_map": {"0": 0}}"#;
        assert!(matches!(Schema::from_json_str(bad), Err(Error::Schema(_))));
    }

    #[test]
    fn filters_wildcards_and_na_rows() {
        let csv = "a,b,g,y\n1,5,F,0\n2,?,M,1\n3,50,Q,0\n4,7,F,1\n";
        let s = Schema::from_json_str(
            r#"{"columns": {"a": "feature-numeric", "b": "feature-numeric", "g": "sensitive", "y": "label"},
                "sensitive_map": {"F": 0, "*": 1}, "label_map": {"0": 0, "1": 1},
                "filters": [{"column": "b", "op": "le", "value": 30}]}"#,
        )
        .unwrap();
        let d = load_csv_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn headerless_file_with_duplicate_names() {
        let csv = "1,9,F,0\n2,8,M,1\n";
        let s = Schema::from_json_str(
            r#"{"columns": {"a": "feature-numeric", "g": "sensitive", "y": "label"},
                "header": ["a", "a", "g", "y"],
                "sensitive_map": {"F": 0, "M": 1}, "label_map": {"0": 0, "1": 1}}"#,
        )
        .unwrap();
        let d = load_csv_reader(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.feature_dim(), 1);
        assert!(d.samples()[0].x[0] < d.samples()[1].x[0]);
    }
}
