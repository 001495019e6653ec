//! Dataset ingestion, group-structure management, response centering,
//! per-group whitening, and seeded synthetic data generation.
//!
//! Conventions: the feature matrix is n x D (samples by dimensions), the
//! response matrix is n x P with P = 1 for plain regression, and whitening
//! enforces the sample-covariance identity `(1/n) X_g^T X_g = I` per group.

use crate::linalg::{self, LinalgError};
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("parse error at row {row}, column {col}: {message}")]
    ParseError {
        row: usize,
        col: usize,
        message: String,
    },
    #[error("group spec error: {0}")]
    SpecError(String),
    #[error("group '{0}' is rank deficient with ridge = 0; retry with ridge > 0")]
    RankDeficientGroup(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One named group of feature columns with an acquisition cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub columns: Vec<usize>,
    pub cost: f64,
}

/// A partition of the feature dimensions into costed groups.
#[derive(Debug, Clone)]
pub struct GroupStructure {
    groups: Vec<Group>,
    dim: usize,
}

impl GroupStructure {
    /// Validates that the column lists partition `0..D-1`, costs are
    /// positive, and names are unique.
    pub fn new(groups: Vec<Group>) -> Result<Self, DataError> {
        if groups.is_empty() {
            return Err(DataError::SpecError("no groups declared".to_string()));
        }
        let dim: usize = groups.iter().map(|g| g.columns.len()).sum();
        let mut seen = vec![false; dim];
        let mut names = std::collections::HashSet::new();
        for g in &groups {
            if !names.insert(g.name.clone()) {
                return Err(DataError::SpecError(format!(
                    "duplicate group name '{}'",
                    g.name
                )));
            }
            if !(g.cost > 0.0) {
                return Err(DataError::SpecError(format!(
                    "nonpositive cost {} for group '{}'",
                    g.cost, g.name
                )));
            }
            if g.columns.is_empty() {
                return Err(DataError::SpecError(format!("group '{}' is empty", g.name)));
            }
            for &c in &g.columns {
                if c >= dim {
                    return Err(DataError::SpecError(format!(
                        "column index {} out of range (D = {})",
                        c, dim
                    )));
                }
                if seen[c] {
                    return Err(DataError::SpecError(format!(
                        "column {} assigned to more than one group",
                        c
                    )));
                }
                seen[c] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(DataError::SpecError(format!(
                "column {} is not assigned to any group",
                missing
            )));
        }
        Ok(Self { groups, dim })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, j: usize) -> &Group {
        &self.groups[j]
    }

    pub fn total_cost(&self) -> f64 {
        self.groups.iter().map(|g| g.cost).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }
}

/// An immutable dataset: features, responses, group structure, and the
/// preprocessing state needed to interpret them.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array2<f64>,
    structure: GroupStructure,
    whitened: bool,
    response_mean: Array1<f64>,
    feature_names: Vec<String>,
    response_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Array2<f64>,
        structure: GroupStructure,
    ) -> Result<Self, DataError> {
        let feature_names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
        let response_names = (0..y.ncols()).map(|p| format!("y{p}")).collect();
        Self::with_names(x, y, structure, feature_names, response_names)
    }

    pub fn with_names(
        x: Array2<f64>,
        y: Array2<f64>,
        structure: GroupStructure,
        feature_names: Vec<String>,
        response_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if structure.dim() != x.ncols() {
            return Err(DataError::SpecError(format!(
                "group structure covers {} columns but the data has {}",
                structure.dim(),
                x.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(DataError::InvalidConfig(format!(
                "feature matrix has {} rows, responses have {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 {
            return Err(DataError::InvalidConfig("dataset has no rows".to_string()));
        }
        if y.ncols() == 0 {
            return Err(DataError::InvalidConfig(
                "dataset has no response columns".to_string(),
            ));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::InvalidConfig(format!(
                "non-finite feature value at ({i},{j})"
            )));
        }
        if let Some(((i, j), _)) = y.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::InvalidConfig(format!(
                "non-finite response value at ({i},{j})"
            )));
        }
        let p = y.ncols();
        Ok(Self {
            x,
            y,
            structure,
            whitened: false,
            response_mean: Array1::zeros(p),
            feature_names,
            response_names,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn response_dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn responses(&self) -> &Array2<f64> {
        &self.y
    }

    /// The single response column as a vector; panics if P != 1.
    pub fn response_vector(&self) -> Array1<f64> {
        assert_eq!(self.y.ncols(), 1, "dataset has multiple response columns");
        self.y.column(0).to_owned()
    }

    pub fn structure(&self) -> &GroupStructure {
        &self.structure
    }

    pub fn is_whitened(&self) -> bool {
        self.whitened
    }

    pub fn response_mean(&self) -> &Array1<f64> {
        &self.response_mean
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_names(&self) -> &[String] {
        &self.response_names
    }

    /// Whether every response column has (numerically) zero mean.
    pub fn responses_centered(&self) -> bool {
        let n = self.num_samples() as f64;
        for col in self.y.columns() {
            let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mean = col.sum() / n;
            if mean.abs() > 1e-6 * scale {
                return false;
            }
        }
        true
    }

    /// The sample-normalized Gram matrix `(1/n) X^T X`.
    pub fn gram(&self) -> Array2<f64> {
        let n = self.num_samples() as f64;
        self.x.t().dot(&self.x) / n
    }

    /// Split row-wise into a prefix of `n_first` rows and the remainder.
    /// Preprocessing state (whitened flag, recorded means) is carried over.
    pub fn split_at(&self, n_first: usize) -> Result<(Dataset, Dataset), DataError> {
        if n_first == 0 || n_first >= self.num_samples() {
            return Err(DataError::InvalidConfig(format!(
                "cannot split {} rows at {}",
                self.num_samples(),
                n_first
            )));
        }
        let mut head = self.clone();
        head.x = self.x.slice(s![..n_first, ..]).to_owned();
        head.y = self.y.slice(s![..n_first, ..]).to_owned();
        let mut tail = self.clone();
        tail.x = self.x.slice(s![n_first.., ..]).to_owned();
        tail.y = self.y.slice(s![n_first.., ..]).to_owned();
        Ok((head, tail))
    }
}

/// Per-group invertible transforms that whiten a dataset; kept so held-out
/// data can be mapped into the same coordinates.
#[derive(Debug, Clone)]
pub struct WhiteningTransform {
    transforms: Vec<Array2<f64>>,
}

impl WhiteningTransform {
    pub fn transforms(&self) -> &[Array2<f64>] {
        &self.transforms
    }

    pub fn from_matrices(transforms: Vec<Array2<f64>>) -> Self {
        Self { transforms }
    }

    /// Apply the stored per-group transforms to a compatible dataset.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset, DataError> {
        if self.transforms.len() != d.structure().num_groups() {
            return Err(DataError::InvalidConfig(format!(
                "transform covers {} groups, dataset has {}",
                self.transforms.len(),
                d.structure().num_groups()
            )));
        }
        let mut out = d.clone();
        for (j, t) in self.transforms.iter().enumerate() {
            let cols = &d.structure().group(j).columns;
            if t.nrows() != cols.len() {
                return Err(DataError::InvalidConfig(format!(
                    "transform for group {} is {}x{}, group has {} columns",
                    j,
                    t.nrows(),
                    t.ncols(),
                    cols.len()
                )));
            }
            let xg = gather_columns(&d.x, cols);
            let wg = xg.dot(t);
            scatter_columns(&mut out.x, cols, &wg);
        }
        out.whitened = true;
        Ok(out)
    }
}

/// Per-column z-score transform (the "common normalization" alternative to
/// group whitening). Does not mark the dataset as whitened.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStandardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ColumnStandardizer {
    pub fn apply(&self, d: &Dataset) -> Result<Dataset, DataError> {
        if self.means.len() != d.dim() {
            return Err(DataError::InvalidConfig(format!(
                "standardizer covers {} columns, dataset has {}",
                self.means.len(),
                d.dim()
            )));
        }
        let mut out = d.clone();
        for j in 0..d.dim() {
            let m = self.means[j];
            let s = self.scales[j];
            for i in 0..d.num_samples() {
                out.x[[i, j]] = (d.x[[i, j]] - m) * s;
            }
        }
        Ok(out)
    }
}

pub(crate) fn gather_columns(x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, cols.len()));
    for (k, &c) in cols.iter().enumerate() {
        out.column_mut(k).assign(&x.column(c));
    }
    out
}

fn scatter_columns(x: &mut Array2<f64>, cols: &[usize], values: &Array2<f64>) {
    for (k, &c) in cols.iter().enumerate() {
        x.column_mut(c).assign(&values.column(k));
    }
}

/// Shift each response column to zero mean, recording the subtracted means.
pub fn center_responses(d: &Dataset) -> Dataset {
    let n = d.num_samples() as f64;
    let mut out = d.clone();
    let p = d.response_dim();
    let mut means = Array1::zeros(p);
    for c in 0..p {
        let mean = d.y.column(c).sum() / n;
        means[c] = mean;
        if mean != 0.0 {
            for i in 0..d.num_samples() {
                out.y[[i, c]] -= mean;
            }
        }
    }
    out.response_mean = means;
    out
}

/// Subtract a fixed per-column mean from the responses (used to carry a
/// training-set centering over to held-out data). Records the shift.
pub fn shift_responses(d: &Dataset, mean: &Array1<f64>) -> Result<Dataset, DataError> {
    if mean.len() != d.response_dim() {
        return Err(DataError::InvalidConfig(format!(
            "shift has {} components, responses have {}",
            mean.len(),
            d.response_dim()
        )));
    }
    let mut out = d.clone();
    for c in 0..d.response_dim() {
        if mean[c] != 0.0 {
            for i in 0..d.num_samples() {
                out.y[[i, c]] -= mean[c];
            }
        }
    }
    out.response_mean = mean.clone();
    Ok(out)
}

/// Shift each feature column to zero mean; returns the subtracted means.
pub fn center_features(d: &Dataset) -> (Dataset, Array1<f64>) {
    let n = d.num_samples() as f64;
    let mut out = d.clone();
    let mut means = Array1::zeros(d.dim());
    for j in 0..d.dim() {
        let mean = d.x.column(j).sum() / n;
        means[j] = mean;
        if mean != 0.0 {
            for i in 0..d.num_samples() {
                out.x[[i, j]] -= mean;
            }
        }
    }
    (out, means)
}

/// Z-score each feature column individually (zero mean, unit n-normalized
/// variance). Columns with negligible variance are left unscaled.
pub fn standardize_columns(d: &Dataset) -> (Dataset, ColumnStandardizer) {
    let n = d.num_samples() as f64;
    let mut means = Vec::with_capacity(d.dim());
    let mut scales = Vec::with_capacity(d.dim());
    for j in 0..d.dim() {
        let col = d.x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        means.push(mean);
        scales.push(if sd > 1e-12 { 1.0 / sd } else { 1.0 });
    }
    let t = ColumnStandardizer { means, scales };
    let out = t
        .apply(d)
        .expect("standardizer built from the same dataset");
    (out, t)
}

/// Whiten each group so `(1/n) X_g^T X_g = I`, using the inverse transposed
/// Cholesky factor of the (optionally ridged) group Gram matrix.
///
/// With `ridge = 0` the identity holds exactly (up to rounding); a positive
/// ridge trades exactness for robustness on rank-deficient groups.
pub fn whiten_groups(d: &Dataset, ridge: f64) -> Result<(Dataset, WhiteningTransform), DataError> {
    if d.whitened {
        return Err(DataError::InvalidConfig(
            "dataset is already whitened".to_string(),
        ));
    }
    if ridge < 0.0 {
        return Err(DataError::InvalidConfig("ridge must be >= 0".to_string()));
    }
    let n = d.num_samples() as f64;
    let mut transforms = Vec::with_capacity(d.structure().num_groups());
    for g in d.structure().groups() {
        let xg = gather_columns(&d.x, &g.columns);
        let mut gram = xg.t().dot(&xg) / n;
        if ridge > 0.0 {
            for i in 0..gram.nrows() {
                gram[[i, i]] += ridge;
            }
        }
        let factor = match linalg::spd_factorize(&gram) {
            Ok(f) => f,
            Err(LinalgError::NotPositiveDefinite { .. }) if ridge == 0.0 => {
                return Err(DataError::RankDeficientGroup(g.name.clone()))
            }
            Err(e) => return Err(e.into()),
        };
        transforms.push(factor.inverse_transpose_factor());
    }
    let transform = WhiteningTransform { transforms };
    let out = transform.apply(d)?;
    Ok((out, transform))
}

/// Configuration for [`generate_synthetic`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub costs: Vec<f64>,
    /// Number of groups carrying true signal.
    pub sparsity: usize,
    pub noise_sd: f64,
    /// Within-group feature correlation, in [0, 1).
    pub correlation: f64,
}

/// Generate a seeded regression dataset: features with a within-group
/// correlation factor, responses `X w* + noise` with `w*` supported on
/// `sparsity` randomly chosen groups. Identical seeds give bit-identical
/// datasets.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset, DataError> {
    if cfg.group_sizes.len() != cfg.costs.len() {
        return Err(DataError::InvalidConfig(format!(
            "{} group sizes but {} costs",
            cfg.group_sizes.len(),
            cfg.costs.len()
        )));
    }
    if cfg.group_sizes.is_empty() {
        return Err(DataError::InvalidConfig("no groups requested".to_string()));
    }
    if cfg.sparsity > cfg.group_sizes.len() {
        return Err(DataError::InvalidConfig(format!(
            "sparsity {} exceeds the number of groups {}",
            cfg.sparsity,
            cfg.group_sizes.len()
        )));
    }
    if cfg.group_sizes.contains(&0) {
        return Err(DataError::InvalidConfig(
            "empty group requested".to_string(),
        ));
    }
    if cfg.costs.iter().any(|&c| !(c > 0.0)) {
        return Err(DataError::InvalidConfig(
            "nonpositive group cost".to_string(),
        ));
    }
    if cfg.n == 0 {
        return Err(DataError::InvalidConfig("n must be positive".to_string()));
    }
    if !(0.0..1.0).contains(&cfg.correlation) {
        return Err(DataError::InvalidConfig(format!(
            "correlation {} outside [0, 1)",
            cfg.correlation
        )));
    }
    if cfg.noise_sd < 0.0 {
        return Err(DataError::InvalidConfig(
            "noise_sd must be >= 0".to_string(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let j = cfg.group_sizes.len();
    let d: usize = cfg.group_sizes.iter().sum();
    let n = cfg.n;

    let mut groups = Vec::with_capacity(j);
    let mut next_col = 0;
    for (gi, (&size, &cost)) in cfg.group_sizes.iter().zip(cfg.costs.iter()).enumerate() {
        groups.push(Group {
            name: format!("g{gi}"),
            columns: (next_col..next_col + size).collect(),
            cost,
        });
        next_col += size;
    }
    let structure = GroupStructure::new(groups)?;

    let rho = cfg.correlation;
    let shared_w = rho.sqrt();
    let own_w = (1.0 - rho).sqrt();
    let mut x = Array2::zeros((n, d));
    let mut col = 0;
    for &size in &cfg.group_sizes {
        let shared: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..size {
            for (i, &z) in shared.iter().enumerate() {
                let eps: f64 = rng.sample(StandardNormal);
                x[[i, col]] = shared_w * z + own_w * eps;
            }
            col += 1;
        }
    }

    let support = rand::seq::index::sample(&mut rng, j, cfg.sparsity).into_vec();
    let mut w_true = Array1::zeros(d);
    let mut support_sorted = support;
    support_sorted.sort_unstable();
    for &gi in &support_sorted {
        for &c in &structure.group(gi).columns {
            w_true[c] = rng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut y = Array2::zeros((n, 1));
    let signal = x.dot(&w_true);
    for i in 0..n {
        let eps: f64 = if cfg.noise_sd > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * cfg.noise_sd
        } else {
            0.0
        };
        y[[i, 0]] = signal[i] + eps;
    }

    Dataset::new(x, y, structure)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Group spec file: maps named feature columns to groups and declares which
/// trailing columns of the data CSV are responses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpecFile {
    pub response_columns: Vec<String>,
    pub groups: Vec<GroupSpecEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupSpecEntry {
    pub name: String,
    pub columns: Vec<String>,
    pub cost: f64,
}

/// Load a dataset from a headered CSV plus a group-spec JSON file.
///
/// The spec's `response_columns` must name the trailing P columns of the
/// CSV; every remaining column must be assigned to exactly one group.
pub fn load_csv<P1: AsRef<Path>, P2: AsRef<Path>>(
    path: P1,
    group_spec: P2,
) -> Result<Dataset, DataError> {
    let spec_text = std::fs::read_to_string(group_spec.as_ref())?;
    let spec: GroupSpecFile = serde_json::from_str(&spec_text)
        .map_err(|e| DataError::SpecError(format!("invalid group spec JSON: {e}")))?;
    if spec.response_columns.is_empty() {
        return Err(DataError::SpecError(
            "group spec declares no response columns".to_string(),
        ));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::SpecError(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let total_cols = headers.len();
    let p = spec.response_columns.len();
    if p >= total_cols {
        return Err(DataError::SpecError(format!(
            "{} response columns declared but the CSV has only {} columns",
            p, total_cols
        )));
    }
    // Responses must be the trailing P columns, in the declared order.
    for (k, name) in spec.response_columns.iter().enumerate() {
        let expect_idx = total_cols - p + k;
        if headers[expect_idx] != *name {
            return Err(DataError::SpecError(format!(
                "response column '{}' must be CSV column {} (found '{}')",
                name, expect_idx, headers[expect_idx]
            )));
        }
    }
    let feature_names: Vec<String> = headers[..total_cols - p].to_vec();
    let name_to_idx: std::collections::HashMap<&str, usize> = feature_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    if name_to_idx.len() != feature_names.len() {
        return Err(DataError::SpecError(
            "duplicate feature column names in CSV header".to_string(),
        ));
    }

    let mut groups = Vec::with_capacity(spec.groups.len());
    for entry in &spec.groups {
        if !(entry.cost > 0.0) {
            return Err(DataError::SpecError(format!(
                "nonpositive cost {} for group '{}'",
                entry.cost, entry.name
            )));
        }
        let mut cols = Vec::with_capacity(entry.columns.len());
        for cname in &entry.columns {
            let idx = name_to_idx.get(cname.as_str()).ok_or_else(|| {
                DataError::SpecError(format!(
                    "group '{}' references unknown column '{}'",
                    entry.name, cname
                ))
            })?;
            cols.push(*idx);
        }
        groups.push(Group {
            name: entry.name.clone(),
            columns: cols,
            cost: entry.cost,
        });
    }
    // GroupStructure::new reports unassigned/doubly-assigned columns by
    // index; translate the common "unassigned" case back to a column name.
    let structure = GroupStructure::new(groups).map_err(|e| match e {
        DataError::SpecError(msg) => {
            if let Some(idx) = msg
                .strip_prefix("column ")
                .and_then(|rest| rest.strip_suffix(" is not assigned to any group"))
                .and_then(|num| num.parse::<usize>().ok())
            {
                DataError::SpecError(format!(
                    "column '{}' (index {}) is not assigned to any group",
                    feature_names[idx], idx
                ))
            } else {
                DataError::SpecError(msg)
            }
        }
        other => other,
    })?;
    if structure.dim() != feature_names.len() {
        return Err(DataError::SpecError(format!(
            "groups cover {} columns but the CSV has {} feature columns",
            structure.dim(),
            feature_names.len()
        )));
    }

    let mut x_rows: Vec<f64> = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (ri, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::ParseError {
            row: ri + 1,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() != total_cols {
            return Err(DataError::ParseError {
                row: ri + 1,
                col: record.len(),
                message: format!("expected {} cells, found {}", total_cols, record.len()),
            });
        }
        for (ci, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::ParseError {
                row: ri + 1,
                col: ci + 1,
                message: format!("malformed numeric cell '{}'", cell),
            })?;
            if !v.is_finite() {
                return Err(DataError::ParseError {
                    row: ri + 1,
                    col: ci + 1,
                    message: format!("non-finite value '{}'", cell),
                });
            }
            if ci < total_cols - p {
                x_rows.push(v);
            } else {
                y_rows.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::InvalidConfig("CSV has no data rows".to_string()));
    }
    let x = Array2::from_shape_vec((n, total_cols - p), x_rows)
        .expect("row-major feature buffer matches dimensions");
    let y = Array2::from_shape_vec((n, p), y_rows)
        .expect("row-major response buffer matches dimensions");
    Dataset::with_names(
        x,
        y,
        structure,
        feature_names,
        spec.response_columns.clone(),
    )
}

fn format_value(v: f64) -> String {
    // 17 significant digits: round-trips any f64 exactly.
    format!("{v:.16e}")
}

/// Write a dataset as CSV plus its group-spec JSON. Values are written with
/// 17 significant digits so a reload reproduces them exactly.
pub fn save_csv<P1: AsRef<Path>, P2: AsRef<Path>>(
    d: &Dataset,
    csv_path: P1,
    spec_path: P2,
) -> Result<(), DataError> {
    let mut out = String::new();
    let mut header: Vec<&str> = d.feature_names.iter().map(|s| s.as_str()).collect();
    header.extend(d.response_names.iter().map(|s| s.as_str()));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..d.num_samples() {
        let mut first = true;
        for j in 0..d.dim() {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{}", format_value(d.x[[i, j]]));
            first = false;
        }
        for c in 0..d.response_dim() {
            out.push(',');
            let _ = write!(out, "{}", format_value(d.y[[i, c]]));
        }
        out.push('\n');
    }
    std::fs::write(csv_path.as_ref(), out)?;

    let spec = GroupSpecFile {
        response_columns: d.response_names.clone(),
        groups: d
            .structure
            .groups()
            .iter()
            .map(|g| GroupSpecEntry {
                name: g.name.clone(),
                columns: g
                    .columns
                    .iter()
                    .map(|&c| d.feature_names[c].clone())
                    .collect(),
                cost: g.cost,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&spec)
        .map_err(|e| DataError::SpecError(format!("cannot serialize group spec: {e}")))?;
    std::fs::write(spec_path.as_ref(), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_structure() -> GroupStructure {
        GroupStructure::new(vec![
            Group {
                name: "g1".to_string(),
                columns: vec![0],
                cost: 1.0,
            },
            Group {
                name: "g2".to_string(),
                columns: vec![1],
                cost: 2.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn structure_rejects_bad_partitions() {
        let err = GroupStructure::new(vec![Group {
            name: "g".to_string(),
            columns: vec![0, 0],
            cost: 1.0,
        }]);
        assert!(matches!(err, Err(DataError::SpecError(_))));

        let err = GroupStructure::new(vec![
            Group {
                name: "a".to_string(),
                columns: vec![0],
                cost: 1.0,
            },
            Group {
                name: "a".to_string(),
                columns: vec![1],
                cost: 1.0,
            },
        ]);
        assert!(matches!(err, Err(DataError::SpecError(_))));

        let err = GroupStructure::new(vec![Group {
            name: "g".to_string(),
            columns: vec![0],
            cost: 0.0,
        }]);
        match err {
            Err(DataError::SpecError(msg)) => assert!(msg.contains("nonpositive cost")),
            other => panic!("expected SpecError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn center_responses_basic() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let y = array![[1.0], [2.0], [3.0]];
        let d = Dataset::new(x, y, small_structure()).unwrap();
        let c = center_responses(&d);
        assert_abs_diff_eq!(c.responses().column(0).to_owned(), array![-1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(c.response_mean()[0], 2.0);
        // Idempotent: centering again changes nothing and records zero mean.
        let c2 = center_responses(&c);
        assert_abs_diff_eq!(
            c2.responses().column(0).to_owned(),
            c.responses().column(0).to_owned()
        );
        assert_abs_diff_eq!(c2.response_mean()[0], 0.0);
    }

    #[test]
    fn center_responses_multi_column() {
        let structure = small_structure();
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let y = array![[1.0, 0.0], [3.0, 0.0]];
        let d = Dataset::new(x, y, structure).unwrap();
        let c = center_responses(&d);
        assert_abs_diff_eq!(c.responses().column(0).to_owned(), array![-1.0, 1.0]);
        assert_abs_diff_eq!(c.responses().column(1).to_owned(), array![0.0, 0.0]);
        assert_abs_diff_eq!(c.response_mean().to_owned(), array![2.0, 0.0]);
    }

    #[test]
    fn whiten_identity_group_stays_identity() {
        // Columns already satisfying (1/n) X^T X = I.
        let n = 4usize;
        let scale = (n as f64).sqrt();
        let mut x = Array2::zeros((n, 2));
        x[[0, 0]] = scale;
        x[[1, 1]] = scale;
        let y = Array2::zeros((n, 1)) + 1.0;
        let d = Dataset::new(x, y, small_structure()).unwrap();
        let (w, t) = whiten_groups(&d, 0.0).unwrap();
        for tg in t.transforms() {
            assert_abs_diff_eq!(tg, &Array2::<f64>::eye(1), epsilon = 1e-10);
        }
        assert!(w.is_whitened());
    }

    #[test]
    fn whiten_single_column_variance_four() {
        // Column with n-normalized second moment 4 -> transform 0.5.
        let x = array![[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]];
        let y = array![[0.0], [0.0], [0.0], [0.0]];
        let d = Dataset::new(x, y, small_structure()).unwrap();
        let (_, t) = whiten_groups(&d, 0.0).unwrap();
        assert_abs_diff_eq!(t.transforms()[0][[0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn whiten_rejects_collinear_group_without_ridge() {
        let structure = GroupStructure::new(vec![Group {
            name: "dup".to_string(),
            columns: vec![0, 1],
            cost: 1.0,
        }])
        .unwrap();
        let x = array![[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]];
        let y = array![[0.0], [0.0], [0.0]];
        let d = Dataset::new(x, y, structure).unwrap();
        match whiten_groups(&d, 0.0) {
            Err(DataError::RankDeficientGroup(name)) => assert_eq!(name, "dup"),
            other => panic!("expected RankDeficientGroup, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig {
            seed: 7,
            n: 50,
            group_sizes: vec![2, 3, 1],
            costs: vec![1.0, 2.0, 0.5],
            sparsity: 2,
            noise_sd: 0.3,
            correlation: 0.4,
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.responses(), b.responses());
    }

    #[test]
    fn synthetic_noiseless_lies_in_span() {
        let cfg = SyntheticConfig {
            seed: 3,
            n: 40,
            group_sizes: vec![2, 2],
            costs: vec![1.0, 1.0],
            sparsity: 2,
            noise_sd: 0.0,
            correlation: 0.0,
        };
        let d = generate_synthetic(&cfg).unwrap();
        // Full-feature least squares must fit exactly.
        let x = d.features();
        let y = d.response_vector();
        let g = x.t().dot(x);
        let rhs = x.t().dot(&y);
        let f = crate::linalg::spd_factorize(&g).unwrap();
        let w = f.solve_vec(&rhs).unwrap();
        let resid = &x.dot(&w) - &y;
        assert!(resid.dot(&resid).sqrt() < 1e-8);
    }

    #[test]
    fn synthetic_uncorrelated_gram_is_near_identity() {
        let cfg = SyntheticConfig {
            seed: 12,
            n: 10_000,
            group_sizes: vec![2, 2, 2],
            costs: vec![1.0, 1.0, 1.0],
            sparsity: 1,
            noise_sd: 0.1,
            correlation: 0.0,
        };
        let d = generate_synthetic(&cfg).unwrap();
        let gram = d.gram();
        for i in 0..d.dim() {
            for j in 0..d.dim() {
                if i != j {
                    assert!(
                        gram[[i, j]].abs() < 0.05,
                        "off-diagonal ({i},{j}) = {}",
                        gram[[i, j]]
                    );
                }
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let cfg = SyntheticConfig {
            seed: 1,
            n: 10,
            group_sizes: vec![1, 1],
            costs: vec![1.0, 1.0],
            sparsity: 3,
            noise_sd: 0.0,
            correlation: 0.0,
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(DataError::InvalidConfig(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = SyntheticConfig {
            seed: 21,
            n: 15,
            group_sizes: vec![2, 1],
            costs: vec![1.5, 0.75],
            sparsity: 1,
            noise_sd: 0.2,
            correlation: 0.3,
        };
        let d = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        let spec_path = dir.path().join("groups.json");
        save_csv(&d, &csv_path, &spec_path).unwrap();
        let loaded = load_csv(&csv_path, &spec_path).unwrap();
        assert_eq!(loaded.num_samples(), d.num_samples());
        assert_eq!(loaded.dim(), d.dim());
        assert_eq!(loaded.features(), d.features());
        assert_eq!(loaded.responses(), d.responses());
        assert_eq!(
            loaded.structure().group(1).cost,
            d.structure().group(1).cost
        );
    }

    #[test]
    fn load_csv_reports_spec_errors() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        std::fs::write(&csv_path, "a,b,y\n1.0,2.0,3.0\n").unwrap();

        // Omitting column b.
        let spec_path = dir.path().join("missing.json");
        std::fs::write(
            &spec_path,
            r#"{"response_columns":["y"],"groups":[{"name":"g1","columns":["a"],"cost":1.0}]}"#,
        )
        .unwrap();
        match load_csv(&csv_path, &spec_path) {
            Err(DataError::SpecError(msg)) => assert!(msg.contains('b'), "message: {msg}"),
            other => panic!("expected SpecError, got {:?}", other.map(|_| ())),
        }

        // Nonpositive cost.
        let spec_path = dir.path().join("zerocost.json");
        std::fs::write(
            &spec_path,
            r#"{"response_columns":["y"],"groups":[{"name":"g1","columns":["a"],"cost":0.0},{"name":"g2","columns":["b"],"cost":1.0}]}"#,
        )
        .unwrap();
        match load_csv(&csv_path, &spec_path) {
            Err(DataError::SpecError(msg)) => assert!(msg.contains("nonpositive cost")),
            other => panic!("expected SpecError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn load_csv_requires_trailing_response_columns() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        std::fs::write(&csv_path, "y,a\n1.0,2.0\n").unwrap();
        let spec_path = dir.path().join("spec.json");
        std::fs::write(
            &spec_path,
            r#"{"response_columns":["y"],"groups":[{"name":"g1","columns":["a"],"cost":1.0}]}"#,
        )
        .unwrap();
        match load_csv(&csv_path, &spec_path) {
            Err(DataError::SpecError(msg)) => assert!(msg.contains("must be CSV column")),
            other => panic!("expected SpecError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn load_csv_reports_parse_location() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        std::fs::write(&csv_path, "a,y\n1.0,2.0\nnope,3.0\n").unwrap();
        let spec_path = dir.path().join("spec.json");
        std::fs::write(
            &spec_path,
            r#"{"response_columns":["y"],"groups":[{"name":"g1","columns":["a"],"cost":1.0}]}"#,
        )
        .unwrap();
        match load_csv(&csv_path, &spec_path) {
            Err(DataError::ParseError { row, col, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(col, 1);
            }
            other => panic!("expected ParseError, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn load_csv_basic_shape() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("data.csv");
        std::fs::write(&csv_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n").unwrap();
        let spec_path = dir.path().join("spec.json");
        std::fs::write(
            &spec_path,
            r#"{"response_columns":["y"],"groups":[{"name":"g1","columns":["a"],"cost":1.0},{"name":"g2","columns":["b"],"cost":2.0}]}"#,
        )
        .unwrap();
        let d = load_csv(&csv_path, &spec_path).unwrap();
        assert_eq!(d.num_samples(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.structure().num_groups(), 2);
        assert_eq!(d.response_dim(), 1);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn whitened_groups_have_identity_gram(
                seed in 0u64..1000,
                n in 20usize..60,
                corr in 0.0f64..0.9,
            ) {
                let cfg = SyntheticConfig {
                    seed,
                    n,
                    group_sizes: vec![2, 3, 1],
                    costs: vec![1.0, 2.0, 0.5],
                    sparsity: 2,
                    noise_sd: 0.1,
                    correlation: corr,
                };
                let d = generate_synthetic(&cfg).unwrap();
                let (w, _) = whiten_groups(&d, 0.0).unwrap();
                let nn = w.num_samples() as f64;
                for g in w.structure().groups() {
                    let xg = gather_columns(w.features(), &g.columns);
                    let gram = xg.t().dot(&xg) / nn;
                    for i in 0..gram.nrows() {
                        for j in 0..gram.ncols() {
                            let target = if i == j { 1.0 } else { 0.0 };
                            prop_assert!((gram[[i, j]] - target).abs() <= 1e-6);
                        }
                    }
                }
            }

            #[test]
            fn whitening_preserves_group_spans(
                seed in 0u64..1000,
                n in 25usize..50,
            ) {
                let cfg = SyntheticConfig {
                    seed,
                    n,
                    group_sizes: vec![2, 2],
                    costs: vec![1.0, 1.0],
                    sparsity: 2,
                    noise_sd: 0.2,
                    correlation: 0.5,
                };
                let d = generate_synthetic(&cfg).unwrap();
                let (w, _) = whiten_groups(&d, 0.0).unwrap();
                let y = d.response_vector();
                for (graw, gwhite) in d.structure().groups().iter().zip(w.structure().groups()) {
                    let proj_raw = project(&gather_columns(d.features(), &graw.columns), &y);
                    let proj_white = project(&gather_columns(w.features(), &gwhite.columns), &y);
                    let diff = (&proj_raw - &proj_white).iter().map(|v| v*v).sum::<f64>().sqrt();
                    prop_assert!(diff <= 1e-8, "span projection moved by {diff}");
                }
            }
        }

        fn project(xg: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
            let g = xg.t().dot(xg);
            let f = crate::linalg::spd_factorize(&g).unwrap();
            let coef = f.solve_vec(&xg.t().dot(y)).unwrap();
            xg.dot(&coef)
        }
    }
}
