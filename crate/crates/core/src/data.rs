//! Datasets: the seven-feature synthetic generator, CSV ingestion and the
//! categorical/log/center/scale preprocessing pipeline.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Numeric `n × p` dataset with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub matrix: Matrix,
    pub feature_names: Vec<String>,
    /// `true` marks an anomaly.
    pub labels: Option<Vec<bool>>,
    pub category: Option<Vec<String>>,
}

impl DataTable {
    pub fn new(
        matrix: Matrix,
        feature_names: Vec<String>,
        labels: Option<Vec<bool>>,
        category: Option<Vec<String>>,
    ) -> Result<Self> {
        if feature_names.len() != matrix.cols() {
            return Err(Error::Schema(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                matrix.cols()
            )));
        }
        for (what, len) in [
            ("labels", labels.as_ref().map(Vec::len)),
            ("categories", category.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != matrix.rows() {
                    return Err(Error::Schema(format!(
                        "{len} {what} for {} rows",
                        matrix.rows()
                    )));
                }
            }
        }
        Ok(Self {
            matrix,
            feature_names,
            labels,
            category,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn p(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Rows whose label is `false`; all rows when unlabeled.
    pub fn normal_rows(&self) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..self.n()).filter(|&i| !l[i]).collect(),
            None => (0..self.n()).collect(),
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows),
            feature_names: self.feature_names.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            category: self
                .category
                .as_ref()
                .map(|c| rows.iter().map(|&i| c[i].clone()).collect()),
        }
    }
}

pub const NORMAL_CATEGORY: &str = "normal";

/// Knobs of the synthetic generator. The defaults produce 500 normal rows
/// and three categories of five anomalies each.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_normal: usize,
    pub per_category: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sd: f64,
    /// Anomaly offsets are drawn uniformly from `[offset_min, offset_max]`.
    pub offset_min: f64,
    pub offset_max: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_normal: 500,
            per_category: 5,
            noise_sd: 0.01,
            offset_min: 1.5,
            offset_max: 2.0,
        }
    }
}

pub const SYNTHETIC_FEATURES: [&str; 7] = ["A", "B", "C", "D", "E", "F", "G"];

/// Which relation each anomaly category breaks, and the column it offsets.
pub const SYNTHETIC_CATEGORIES: [(&str, usize); 3] = [
    ("break_a_eq_b", 0),
    ("break_d_eq_c_plus_a", 3),
    ("break_f_eq_0", 5),
];

pub fn gen_synthetic(seed: u64) -> DataTable {
    gen_synthetic_with(seed, &SyntheticParams::default())
}

/// Normal rows follow `A≈B`, `D≈C+A`, `F≈0`, `G≈0` with `E` independent;
/// each anomaly category adds a positive offset to one column to break one relation.
pub fn gen_synthetic_with(seed: u64, params: &SyntheticParams) -> DataTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sd).expect("noise_sd must be finite and >= 0");
    let normal_row = |rng: &mut ChaCha8Rng| -> [f64; 7] {
        let t: f64 = rng.random_range(-1.0..1.0);
        let u: f64 = rng.random_range(-1.0..1.0);
        let a = t + noise.sample(rng);
        let b = t + noise.sample(rng);
        let c = u + noise.sample(rng);
        let d = c + a + noise.sample(rng);
        let e: f64 = rng.random_range(-1.0..1.0);
        let f = noise.sample(rng);
        let g = noise.sample(rng);
        [a, b, c, d, e, f, g]
    };

    let n = params.n_normal + params.per_category * SYNTHETIC_CATEGORIES.len();
    let mut data = Vec::with_capacity(n * 7);
    let mut labels = Vec::with_capacity(n);
    let mut category = Vec::with_capacity(n);
    for _ in 0..params.n_normal {
        data.extend(normal_row(&mut rng));
        labels.push(false);
        category.push(NORMAL_CATEGORY.to_string());
    }
    for (name, col) in SYNTHETIC_CATEGORIES {
        for _ in 0..params.per_category {
            let mut row = normal_row(&mut rng);
            row[col] += rng.random_range(params.offset_min..=params.offset_max);
            data.extend(row);
            labels.push(true);
            category.push(name.to_string());
        }
    }
    DataTable::new(
        Matrix::from_vec(n, 7, data).expect("generator emits finite values"),
        SYNTHETIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        Some(labels),
        Some(category),
    )
    .expect("shapes are consistent")
}

/// Declarative description of how to read a CSV into features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnConfig {
    pub categorical: Vec<String>,
    pub log: Vec<String>,
    pub label_column: Option<String>,
    pub category_column: Option<String>,
    /// Columns ignored entirely (ids and the like).
    pub drop: Vec<String>,
    /// Label values that mean "normal"; anything else is an anomaly.
    pub normal_values: Option<Vec<String>>,
    /// Scale each centered column to max-abs one (`true` unless set).
    pub scale: Option<bool>,
}

const DEFAULT_NORMAL_VALUES: [&str; 5] = ["0", "false", "normal", "normal.", "b"];

impl ColumnConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| json_error(s, &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn scale_enabled(&self) -> bool {
        self.scale.unwrap_or(true)
    }

    fn is_normal_value(&self, v: &str) -> bool {
        let v = v.trim();
        match &self.normal_values {
            Some(vals) => vals.iter().any(|n| n == v),
            None => DEFAULT_NORMAL_VALUES
                .iter()
                .any(|n| n.eq_ignore_ascii_case(v)),
        }
    }

    /// Column config matching the CSV written by [`write_table_csv`] for synthetic data.
    pub fn synthetic() -> Self {
        Self {
            label_column: Some("label".into()),
            category_column: Some("category".into()),
            scale: Some(false),
            ..Self::default()
        }
    }
}

/// Byte offset of a `serde_json` error position.
pub(crate) fn json_error(text: &str, e: &serde_json::Error) -> Error {
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == e.line() {
            offset += e.column().saturating_sub(1).min(line.len());
            break;
        }
        offset += line.len();
    }
    Error::Parse {
        offset: offset.min(text.len()),
        message: e.to_string(),
    }
}

/// String cells straight from a CSV file, header included.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found")))
    }

    /// Header names that become features under `cfg`.
    pub fn feature_columns(&self, cfg: &ColumnConfig) -> Vec<String> {
        let skip: BTreeSet<&str> = cfg
            .drop
            .iter()
            .map(String::as_str)
            .chain(cfg.label_column.as_deref())
            .chain(cfg.category_column.as_deref())
            .collect();
        self.headers
            .iter()
            .filter(|h| !skip.contains(h.as_str()))
            .cloned()
            .collect()
    }

    pub fn labels(&self, cfg: &ColumnConfig) -> Result<Option<Vec<bool>>> {
        let Some(col) = &cfg.label_column else {
            return Ok(None);
        };
        let idx = self.column_index(col)?;
        Ok(Some(
            self.rows
                .iter()
                .map(|r| !cfg.is_normal_value(&r[idx]))
                .collect(),
        ))
    }

    pub fn categories(&self, cfg: &ColumnConfig) -> Result<Option<Vec<String>>> {
        let Some(col) = &cfg.category_column else {
            return Ok(None);
        };
        let idx = self.column_index(col)?;
        Ok(Some(self.rows.iter().map(|r| r[idx].clone()).collect()))
    }
}

/// Category → code mapping for one column; codes follow first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub column: String,
    pub values: Vec<String>,
}

impl CategoricalColumn {
    pub fn code(&self, v: &str) -> Option<usize> {
        self.values.iter().position(|x| x == v)
    }

    /// Code assigned to values unseen at fit time.
    pub fn unknown_code(&self) -> usize {
        self.values.len()
    }
}

/// Fitted preprocessing: categorical codes, `log(1+x)` columns, centering and max-abs scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub feature_names: Vec<String>,
    pub categorical_columns: Vec<CategoricalColumn>,
    pub log_columns: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub scale_enabled: bool,
    /// Columns that were constant at fit time (scale forced to 1).
    pub zero_variance: Vec<String>,
    pub fitted: bool,
}

/// Anything noteworthy found while applying a spec.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyFlags {
    /// `(row, column)` cells that held a category unseen at fit time.
    pub unknown_categories: Vec<(usize, String)>,
}

impl PreprocessSpec {
    /// Identity transform over the given feature names.
    pub fn identity(feature_names: Vec<String>) -> Self {
        let p = feature_names.len();
        Self {
            feature_names,
            categorical_columns: Vec::new(),
            log_columns: Vec::new(),
            means: vec![0.0; p],
            scales: vec![1.0; p],
            scale_enabled: false,
            zero_variance: Vec::new(),
            fitted: true,
        }
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    /// Centers and scales one already-numeric row.
    pub fn transform_numeric(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} values, model expects {}",
                row.len(),
                self.p()
            )));
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect())
    }
}

struct NumericView {
    values: Vec<f64>,
    n: usize,
}

fn encode(
    raw: &RawTable,
    names: &[String],
    cats: &[CategoricalColumn],
    logs: &[String],
    flags: &mut ApplyFlags,
) -> Result<NumericView> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| raw.column_index(n))
        .collect::<Result<_>>()?;
    let cat_of: HashMap<&str, &CategoricalColumn> =
        cats.iter().map(|c| (c.column.as_str(), c)).collect();
    let log_set: BTreeSet<&str> = logs.iter().map(String::as_str).collect();
    let p = names.len();
    let mut values = Vec::with_capacity(raw.rows.len() * p);
    for (r, row) in raw.rows.iter().enumerate() {
        if row.len() != raw.headers.len() {
            return Err(Error::Schema(format!("row {r} has {} cells", row.len())));
        }
        for (j, &c) in idx.iter().enumerate() {
            let cell = &row[c];
            let name = names[j].as_str();
            let v = if let Some(cat) = cat_of.get(name) {
                match cat.code(cell) {
                    Some(code) => code as f64,
                    None => {
                        flags.unknown_categories.push((r, name.to_string()));
                        cat.unknown_code() as f64
                    }
                }
            } else {
                if cell.is_empty() {
                    return Err(Error::Preprocess(format!(
                        "missing value in row {r}, column '{name}'"
                    )));
                }
                let x: f64 = cell.parse().map_err(|_| {
                    Error::Preprocess(format!("row {r}, column '{name}': '{cell}' is not numeric"))
                })?;
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("row {r}, column '{name}'")));
                }
                x
            };
            let v = if log_set.contains(name) {
                if v < 0.0 {
                    return Err(Error::Preprocess(format!(
                        "negative value {v} in log column '{name}' (row {r})"
                    )));
                }
                v.ln_1p()
            } else {
                v
            };
            values.push(v);
        }
    }
    Ok(NumericView {
        values,
        n: raw.rows.len(),
    })
}

pub fn fit_preprocess(raw: &RawTable, cfg: &ColumnConfig) -> Result<PreprocessSpec> {
    fit_preprocess_rows(raw, cfg, None)
}

/// Fits on a subset of rows (e.g. the normal ones); categorical codes still
/// come from every row so the code table is complete.
pub fn fit_preprocess_rows(
    raw: &RawTable,
    cfg: &ColumnConfig,
    rows: Option<&[usize]>,
) -> Result<PreprocessSpec> {
    let names = raw.feature_columns(cfg);
    if names.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    for c in cfg.categorical.iter().chain(&cfg.log) {
        if !names.contains(c) {
            return Err(Error::Schema(format!(
                "declared column '{c}' is not a feature column"
            )));
        }
    }
    let mut cats = Vec::new();
    for col in &cfg.categorical {
        let idx = raw.column_index(col)?;
        let mut values: Vec<String> = Vec::new();
        for row in &raw.rows {
            if !values.contains(&row[idx]) {
                values.push(row[idx].clone());
            }
        }
        cats.push(CategoricalColumn {
            column: col.clone(),
            values,
        });
    }
    let mut flags = ApplyFlags::default();
    let view = encode(raw, &names, &cats, &cfg.log, &mut flags)?;
    let selected: Vec<usize> = match rows {
        Some(r) => r.to_vec(),
        None => (0..view.n).collect(),
    };
    let mut spec = center_scale(&view.values, &names, &selected, cfg.scale_enabled())?;
    spec.categorical_columns = cats;
    spec.log_columns = cfg.log.clone();
    Ok(spec)
}

/// Means and max-abs scales over `rows` of a row-major `n × names.len()` buffer.
fn center_scale(
    values: &[f64],
    names: &[String],
    rows: &[usize],
    scale: bool,
) -> Result<PreprocessSpec> {
    if rows.is_empty() {
        return Err(Error::Preprocess("no rows to fit preprocessing on".into()));
    }
    let p = names.len();
    let mut means = vec![0.0; p];
    for &i in rows {
        for (m, x) in means.iter_mut().zip(&values[i * p..(i + 1) * p]) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let mut scales = vec![1.0; p];
    let mut zero_variance = Vec::new();
    for j in 0..p {
        let max_abs = rows
            .iter()
            .map(|&i| (values[i * p + j] - means[j]).abs())
            .fold(0.0, f64::max);
        if max_abs <= 1e-12 * means[j].abs().max(1.0) {
            zero_variance.push(names[j].clone());
        } else if scale {
            scales[j] = max_abs;
        }
    }
    Ok(PreprocessSpec {
        feature_names: names.to_vec(),
        categorical_columns: Vec::new(),
        log_columns: Vec::new(),
        means,
        scales,
        scale_enabled: scale,
        zero_variance,
        fitted: true,
    })
}

/// Applies a fitted spec once. Labels and categories come from `cfg` when given.
pub fn apply_preprocess(
    spec: &PreprocessSpec,
    raw: &RawTable,
    cfg: Option<&ColumnConfig>,
) -> Result<(DataTable, ApplyFlags)> {
    if !spec.fitted {
        return Err(Error::Preprocess("preprocessing spec is not fitted".into()));
    }
    let mut flags = ApplyFlags::default();
    let view = encode(
        raw,
        &spec.feature_names,
        &spec.categorical_columns,
        &spec.log_columns,
        &mut flags,
    )?;
    let p = spec.p();
    let mut values = view.values;
    for (k, v) in values.iter_mut().enumerate() {
        let j = k % p;
        *v = (*v - spec.means[j]) / spec.scales[j];
    }
    let (labels, category) = match cfg {
        Some(c) => (raw.labels(c)?, raw.categories(c)?),
        None => (None, None),
    };
    let table = DataTable::new(
        Matrix::from_vec(view.n, p, values)?,
        spec.feature_names.clone(),
        labels,
        category,
    )?;
    Ok((table, flags))
}

/// Centering (and optional max-abs scaling) fitted on `rows` of a numeric table.
pub fn fit_numeric(table: &DataTable, rows: &[usize], scale: bool) -> Result<PreprocessSpec> {
    center_scale(table.matrix.as_slice(), &table.feature_names, rows, scale)
}

/// Applies a spec to an already-numeric table with matching feature names.
pub fn apply_numeric(spec: &PreprocessSpec, table: &DataTable) -> Result<DataTable> {
    if table.feature_names != spec.feature_names {
        return Err(Error::Schema(format!(
            "feature names {:?} do not match the model's {:?}",
            table.feature_names, spec.feature_names
        )));
    }
    let mut rows = Vec::with_capacity(table.n() * table.p());
    for i in 0..table.n() {
        rows.extend(spec.transform_numeric(table.row(i))?);
    }
    DataTable::new(
        Matrix::from_vec(table.n(), table.p(), rows)?,
        table.feature_names.clone(),
        table.labels.clone(),
        table.category.clone(),
    )
}

/// Writes features plus `label`/`category` columns when present.
pub fn write_table_csv<W: Write>(table: &DataTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = table.feature_names.clone();
    if table.labels.is_some() {
        header.push("label".into());
    }
    if table.category.is_some() {
        header.push("category".into());
    }
    w.write_record(&header)?;
    for i in 0..table.n() {
        let mut rec: Vec<String> = table.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &table.labels {
            rec.push(if l[i] { "1" } else { "0" }.into());
        }
        if let Some(c) = &table.category {
            rec.push(c[i].clone());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
