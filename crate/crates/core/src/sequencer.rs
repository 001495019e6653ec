//! Greedy feature-group sequencers for linear regression: gradient-scored
//! matching pursuit (cost-sensitive and not, L2 / L-infinity / Mahalanobis
//! scores) and exact forward regression, sharing a ridge solver that grows
//! its Gram inverse one block at a time.

use crate::dataset::{gather_columns, Dataset};
use crate::linalg::{self, LinalgError, SpdFactor};
use crate::parallel;
use ndarray::{Array1, Array2};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("singular system; a positive lambda is required: {0}")]
    SingularSystem(String),
    #[error("nonpositive group cost: {0}")]
    NonpositiveCost(f64),
    #[error("responses are not centered; run center_responses first")]
    NotCentered,
    #[error("dataset must be group whitened for this selection rule")]
    NotWhitened,
    #[error("expected a single response column, found {0}")]
    MultiResponse(usize),
    #[error("column index {0} out of range (dimension {1})")]
    ColumnOutOfRange(usize, usize),
    #[error("a group Gram matrix is required for the Mahalanobis rule")]
    MissingGram,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How candidate groups are scored at each selection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Squared gradient L2 norm per unit cost (the default).
    CostSensitiveL2,
    /// Squared gradient L-infinity norm per unit cost ("single best feature").
    CostSensitiveLInf,
    /// Squared gradient L2 norm, ignoring costs.
    CostInsensitiveL2,
    /// Gram-weighted quadratic form per unit cost; equivalent to the L2 rule
    /// on whitened data but usable on raw features.
    CostSensitiveMahalanobis,
}

impl SelectionRule {
    fn requires_whitened(self) -> bool {
        !matches!(self, SelectionRule::CostSensitiveMahalanobis)
    }
}

/// Knobs for [`sequence_omp_with`]; the defaults match [`sequence_omp`].
#[derive(Debug, Clone, Copy, Default)]
pub struct OmpOptions {
    /// Skip the group-whitening requirement of the L2 / L-infinity rules
    /// (used to study how much whitening matters).
    pub allow_unwhitened: bool,
    /// Pick the worst-scoring group instead of the best. Negative control
    /// for bound verification; never useful otherwise.
    pub invert_selection: bool,
}

/// A fitted ridge model over an ordered subset of feature columns.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub selected_columns: Vec<usize>,
    pub weights: Array1<f64>,
    pub lambda: f64,
    /// Inverse of `(1/n) X_S^T X_S + lambda I`, maintained incrementally by
    /// the sequencers; `None` for models built directly from weights.
    pub inv_gram: Option<Array2<f64>>,
}

impl RidgeModel {
    pub fn empty(lambda: f64) -> Self {
        Self {
            selected_columns: Vec::new(),
            weights: Array1::zeros(0),
            lambda,
            inv_gram: Some(Array2::zeros((0, 0))),
        }
    }

    pub fn from_weights(selected_columns: Vec<usize>, weights: Array1<f64>, lambda: f64) -> Self {
        Self {
            selected_columns,
            weights,
            lambda,
            inv_gram: None,
        }
    }

    /// Predicted responses for a feature matrix over the full dimension.
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.nrows());
        for (k, &c) in self.selected_columns.iter().enumerate() {
            let w = self.weights[k];
            if w != 0.0 {
                out.scaled_add(w, &x.column(c));
            }
        }
        out
    }
}

/// One full greedy sequencing run: group order, per-prefix costs, objectives,
/// models, and the score table that drove each selection.
#[derive(Debug, Clone)]
pub struct SequencingResult {
    /// Selected group names, in order.
    pub order: Vec<String>,
    /// Selected group indices into the dataset's structure, in order.
    pub order_indices: Vec<usize>,
    /// Cumulative cost after each selection; strictly increasing.
    pub prefix_costs: Vec<f64>,
    /// Explained variance after each selection; nondecreasing.
    pub prefix_objectives: Vec<f64>,
    /// Fitted model after each selection.
    pub prefix_models: Vec<RidgeModel>,
    /// Per-step candidate scores, indexed `[step][group]`; `None` marks
    /// groups already selected before the step.
    pub selection_scores: Vec<Vec<Option<f64>>>,
    /// Wall-clock seconds spent on each selection step.
    pub step_seconds: Vec<f64>,
}

impl SequencingResult {
    pub fn num_steps(&self) -> usize {
        self.order.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.prefix_objectives.last().copied().unwrap_or(0.0)
    }

    pub fn total_cost(&self) -> f64 {
        self.prefix_costs.last().copied().unwrap_or(0.0)
    }
}

fn check_single_response(d: &Dataset) -> Result<(), SequenceError> {
    if d.response_dim() != 1 {
        return Err(SequenceError::MultiResponse(d.response_dim()));
    }
    Ok(())
}

fn check_columns(d: &Dataset, columns: &[usize]) -> Result<(), SequenceError> {
    for &c in columns {
        if c >= d.dim() {
            return Err(SequenceError::ColumnOutOfRange(c, d.dim()));
        }
    }
    Ok(())
}

/// Risk of the empty feature set, `(1/2n) sum y_i^2`.
fn empty_risk(y: &Array1<f64>) -> f64 {
    y.dot(y) / (2.0 * y.len() as f64)
}

/// Minimum regularized risk over a column subset, with the minimizing
/// weights. This is the from-scratch path: it factorizes the restricted
/// Gram matrix directly and never touches the incremental updates.
pub fn ridge_risk(
    d: &Dataset,
    columns: &[usize],
    lambda: f64,
) -> Result<(f64, Array1<f64>), SequenceError> {
    check_single_response(d)?;
    check_columns(d, columns)?;
    let y = d.response_vector();
    let n = d.num_samples() as f64;
    if columns.is_empty() {
        return Ok((empty_risk(&y), Array1::zeros(0)));
    }
    let xs = gather_columns(d.features(), columns);
    let mut c = xs.t().dot(&xs) / n;
    for i in 0..c.nrows() {
        c[[i, i]] += lambda;
    }
    let factor = linalg::spd_factorize(&c).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { index, value } => SequenceError::SingularSystem(
            format!("restricted Gram matrix has pivot {value:.3e} at index {index}"),
        ),
        other => SequenceError::Linalg(other),
    })?;
    let v = xs.t().dot(&y) / n;
    let w = factor.solve_vec(&v)?;
    let resid = &y - &xs.dot(&w);
    let risk = resid.dot(&resid) / (2.0 * n) + 0.5 * lambda * w.dot(&w);
    Ok((risk, w))
}

/// Explained variance `F(S) = R(empty) - R(S)`; zero for the empty set and
/// nonnegative everywhere.
pub fn explained_variance(
    d: &Dataset,
    columns: &[usize],
    lambda: f64,
) -> Result<f64, SequenceError> {
    let y = d.response_vector();
    let (risk, _) = ridge_risk(d, columns, lambda)?;
    Ok(empty_risk(&y) - risk)
}

/// Gradient of the explained variance with respect to the coefficients of
/// group `g` at the model's weights: `(1/n) X_g^T (y - X_S w) - lambda w_g`,
/// where `w_g = 0` for groups outside the model.
pub fn group_gradient(d: &Dataset, model: &RidgeModel, group: usize) -> Array1<f64> {
    let y = d.response_vector();
    let n = d.num_samples() as f64;
    let resid = &y - &model.predict(d.features());
    let cols = &d.structure().group(group).columns;
    let mut b = Array1::zeros(cols.len());
    for (k, &c) in cols.iter().enumerate() {
        b[k] = d.features().column(c).dot(&resid) / n;
        if let Some(pos) = model.selected_columns.iter().position(|&sc| sc == c) {
            b[k] -= model.lambda * model.weights[pos];
        }
    }
    b
}

/// Score a candidate group from its gradient block.
///
/// `gram_g` is the group's sample Gram matrix `(1/n) X_g^T X_g`, needed only
/// by the Mahalanobis rule (the ridge `lambda` is added internally so the
/// rule stays defined on rank-deficient groups).
pub fn score_group(
    rule: SelectionRule,
    b: &Array1<f64>,
    gram_g: Option<&Array2<f64>>,
    lambda: f64,
    cost: f64,
) -> Result<f64, SequenceError> {
    if !(cost > 0.0) {
        return Err(SequenceError::NonpositiveCost(cost));
    }
    match rule {
        SelectionRule::CostSensitiveL2 => Ok(b.dot(b) / cost),
        SelectionRule::CostInsensitiveL2 => Ok(b.dot(b)),
        SelectionRule::CostSensitiveLInf => {
            let m = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            Ok(m * m / cost)
        }
        SelectionRule::CostSensitiveMahalanobis => {
            let gram = gram_g.ok_or(SequenceError::MissingGram)?;
            let mut c = gram.clone();
            for i in 0..c.nrows() {
                c[[i, i]] += lambda;
            }
            let factor = linalg::spd_factorize(&c)?;
            let z = factor.solve_vec(b)?;
            Ok(b.dot(&z) / cost)
        }
    }
}

/// Ridge state shared by both sequencers: cached `(1/n) X^T X` and
/// `(1/n) X^T y`, plus the inverse of the selected block grown by the
/// matrix inversion lemma.
struct RidgeState {
    gram: Array2<f64>,
    v: Array1<f64>,
    lambda: f64,
    selected_cols: Vec<usize>,
    inv: Array2<f64>,
    weights: Array1<f64>,
    objective: f64,
}

impl RidgeState {
    fn new(d: &Dataset, lambda: f64) -> Self {
        let n = d.num_samples() as f64;
        let gram = d.gram();
        let y = d.response_vector();
        let v = d.features().t().dot(&y) / n;
        Self {
            gram,
            v,
            lambda,
            selected_cols: Vec::new(),
            inv: Array2::zeros((0, 0)),
            weights: Array1::zeros(0),
            objective: 0.0,
        }
    }

    fn cross_and_corner(&self, cols: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let k = self.selected_cols.len();
        let m = cols.len();
        let mut cross = Array2::zeros((k, m));
        for (i, &s) in self.selected_cols.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                cross[[i, j]] = self.gram[[s, c]];
            }
        }
        let mut corner = Array2::zeros((m, m));
        for (i, &a) in cols.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                corner[[i, j]] = self.gram[[a, b]];
            }
            corner[[i, i]] += self.lambda;
        }
        (cross, corner)
    }

    fn solve_extended(
        &self,
        cols: &[usize],
    ) -> Result<(Array2<f64>, Array1<f64>, f64), SequenceError> {
        let (cross, corner) = self.cross_and_corner(cols);
        let inv = linalg::block_inverse_update(&self.inv, &cross, &corner)?;
        let total = self.selected_cols.len() + cols.len();
        let mut v_s = Array1::zeros(total);
        for (i, &c) in self.selected_cols.iter().chain(cols.iter()).enumerate() {
            v_s[i] = self.v[c];
        }
        let weights = inv.dot(&v_s);
        // At the ridge optimum, F(S) = (1/2) v_S . w(S).
        let objective = 0.5 * v_s.dot(&weights);
        Ok((inv, weights, objective))
    }

    /// Explained variance if `cols` were appended, without mutating.
    fn candidate_objective(&self, cols: &[usize]) -> Result<f64, SequenceError> {
        let (_, _, obj) = self.solve_extended(cols)?;
        Ok(obj)
    }

    fn extend(&mut self, cols: &[usize]) -> Result<(), SequenceError> {
        let (inv, weights, objective) = self.solve_extended(cols)?;
        self.inv = inv;
        self.weights = weights;
        self.objective = objective;
        self.selected_cols.extend_from_slice(cols);
        Ok(())
    }

    /// Gradient block for a group at the current weights, from the cached
    /// Gram matrix: `v_g - G[g,S] w - lambda w_g`.
    fn gradient_block(&self, cols: &[usize]) -> Array1<f64> {
        let mut b = Array1::zeros(cols.len());
        for (k, &c) in cols.iter().enumerate() {
            let mut val = self.v[c];
            for (i, &s) in self.selected_cols.iter().enumerate() {
                val -= self.gram[[c, s]] * self.weights[i];
            }
            if let Some(pos) = self.selected_cols.iter().position(|&sc| sc == c) {
                val -= self.lambda * self.weights[pos];
            }
            b[k] = val;
        }
        b
    }

    fn model(&self) -> RidgeModel {
        RidgeModel {
            selected_columns: self.selected_cols.clone(),
            weights: self.weights.clone(),
            lambda: self.lambda,
            inv_gram: Some(self.inv.clone()),
        }
    }
}

/// Deterministic argmax with lowest-index tie-break; flips to argmin when
/// `invert` is set.
fn select_from_scores(scores: &[Option<f64>], invert: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, s) in scores.iter().enumerate() {
        if let Some(score) = s {
            let better = match best {
                None => true,
                Some((_, b)) => {
                    if invert {
                        *score < b
                    } else {
                        *score > b
                    }
                }
            };
            if better {
                best = Some((idx, *score));
            }
        }
    }
    best.map(|(idx, _)| idx)
}

/// Sequence all feature groups by gradient-normed greedy selection.
///
/// Runs to exhaustion: the result orders every group, and truncation at a
/// budget is an evaluation-time concern. The L2 and L-infinity rules demand
/// a whitened dataset; the Mahalanobis rule accepts raw features.
pub fn sequence_omp(
    d: &Dataset,
    lambda: f64,
    rule: SelectionRule,
) -> Result<SequencingResult, SequenceError> {
    sequence_omp_with(d, lambda, rule, &OmpOptions::default())
}

/// [`sequence_omp`] with explicit options.
pub fn sequence_omp_with(
    d: &Dataset,
    lambda: f64,
    rule: SelectionRule,
    opts: &OmpOptions,
) -> Result<SequencingResult, SequenceError> {
    check_single_response(d)?;
    if !d.responses_centered() {
        return Err(SequenceError::NotCentered);
    }
    if rule.requires_whitened() && !d.is_whitened() && !opts.allow_unwhitened {
        return Err(SequenceError::NotWhitened);
    }

    let structure = d.structure().clone();
    let j = structure.num_groups();
    for g in structure.groups() {
        if !(g.cost > 0.0) {
            return Err(SequenceError::NonpositiveCost(g.cost));
        }
    }

    // Per-group factors of (1/n) X_g^T X_g + lambda I for the Mahalanobis rule.
    let mahalanobis_factors: Option<Vec<SpdFactor>> =
        if rule == SelectionRule::CostSensitiveMahalanobis {
            let n = d.num_samples() as f64;
            let mut factors = Vec::with_capacity(j);
            for g in structure.groups() {
                let xg = gather_columns(d.features(), &g.columns);
                let mut gram = xg.t().dot(&xg) / n;
                for i in 0..gram.nrows() {
                    gram[[i, i]] += lambda;
                }
                factors.push(linalg::spd_factorize(&gram)?);
            }
            Some(factors)
        } else {
            None
        };

    let mut state = RidgeState::new(d, lambda);
    let mut selected = vec![false; j];
    let mut result = SequencingResult {
        order: Vec::with_capacity(j),
        order_indices: Vec::with_capacity(j),
        prefix_costs: Vec::with_capacity(j),
        prefix_objectives: Vec::with_capacity(j),
        prefix_models: Vec::with_capacity(j),
        selection_scores: Vec::with_capacity(j),
        step_seconds: Vec::with_capacity(j),
    };
    let mut cumulative_cost = 0.0;

    for _step in 0..j {
        let started = Instant::now();
        let state_ref = &state;
        let factors_ref = &mahalanobis_factors;
        let selected_ref = &selected;
        let structure_ref = &structure;
        let scored: Vec<Option<Result<f64, SequenceError>>> = parallel::map_range(j, move |g| {
            if selected_ref[g] {
                return None;
            }
            let group = structure_ref.group(g);
            let b = state_ref.gradient_block(&group.columns);
            let score = match rule {
                SelectionRule::CostSensitiveL2 => Ok(b.dot(&b) / group.cost),
                SelectionRule::CostInsensitiveL2 => Ok(b.dot(&b)),
                SelectionRule::CostSensitiveLInf => {
                    let m = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                    Ok(m * m / group.cost)
                }
                SelectionRule::CostSensitiveMahalanobis => {
                    let factor = &factors_ref.as_ref().expect("factors precomputed")[g];
                    factor
                        .solve_vec(&b)
                        .map(|z| b.dot(&z) / group.cost)
                        .map_err(SequenceError::from)
                }
            };
            Some(score)
        });
        let mut scores: Vec<Option<f64>> = Vec::with_capacity(j);
        for s in scored {
            match s {
                None => scores.push(None),
                Some(Ok(v)) => scores.push(Some(v)),
                Some(Err(e)) => return Err(e),
            }
        }
        let pick = select_from_scores(&scores, opts.invert_selection)
            .expect("at least one unselected group remains");
        let group = structure.group(pick);
        state.extend(&group.columns)?;
        selected[pick] = true;
        cumulative_cost += group.cost;

        result.selection_scores.push(scores);
        result.order.push(group.name.clone());
        result.order_indices.push(pick);
        result.prefix_costs.push(cumulative_cost);
        result.prefix_objectives.push(state.objective);
        result.prefix_models.push(state.model());
        result.step_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(result)
}

/// Sequence all feature groups by exact greedy forward regression: each step
/// evaluates the true objective gain of every candidate via a block inverse
/// update and selects the best gain (per unit cost when `cost_sensitive`).
///
/// Whitening is not required; the objective gain is evaluated directly.
pub fn sequence_fr(
    d: &Dataset,
    lambda: f64,
    cost_sensitive: bool,
) -> Result<SequencingResult, SequenceError> {
    check_single_response(d)?;
    if !d.responses_centered() {
        return Err(SequenceError::NotCentered);
    }
    let structure = d.structure().clone();
    let j = structure.num_groups();
    for g in structure.groups() {
        if !(g.cost > 0.0) {
            return Err(SequenceError::NonpositiveCost(g.cost));
        }
    }

    let mut state = RidgeState::new(d, lambda);
    let mut selected = vec![false; j];
    let mut result = SequencingResult {
        order: Vec::with_capacity(j),
        order_indices: Vec::with_capacity(j),
        prefix_costs: Vec::with_capacity(j),
        prefix_objectives: Vec::with_capacity(j),
        prefix_models: Vec::with_capacity(j),
        selection_scores: Vec::with_capacity(j),
        step_seconds: Vec::with_capacity(j),
    };
    let mut cumulative_cost = 0.0;

    for _step in 0..j {
        let started = Instant::now();
        let state_ref = &state;
        let selected_ref = &selected;
        let structure_ref = &structure;
        let current = state.objective;
        let scored: Vec<Option<Result<f64, SequenceError>>> = parallel::map_range(j, move |g| {
            if selected_ref[g] {
                return None;
            }
            let group = structure_ref.group(g);
            let score = state_ref.candidate_objective(&group.columns).map(|obj| {
                let gain = obj - current;
                if cost_sensitive {
                    gain / group.cost
                } else {
                    gain
                }
            });
            Some(score)
        });
        let mut scores: Vec<Option<f64>> = Vec::with_capacity(j);
        for s in scored {
            match s {
                None => scores.push(None),
                Some(Ok(v)) => scores.push(Some(v)),
                Some(Err(e)) => return Err(e),
            }
        }
        let pick =
            select_from_scores(&scores, false).expect("at least one unselected group remains");
        let group = structure.group(pick);
        state.extend(&group.columns)?;
        selected[pick] = true;
        cumulative_cost += group.cost;

        result.selection_scores.push(scores);
        result.order.push(group.name.clone());
        result.order_indices.push(pick);
        result.prefix_costs.push(cumulative_cost);
        result.prefix_objectives.push(state.objective);
        result.prefix_models.push(state.model());
        result.step_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(result)
}
