//! Anytime-performance evaluation: explained-variance curves, stopping
//! costs, timeliness, marginal-gain reordering, accuracy, and NDCG@k.

use crate::dataset::{gather_columns, Dataset};
use crate::parallel;
use crate::sequencer::{SequenceError, SequencingResult};
use ndarray::{Array1, Array2};
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("curve has too few points")]
    EmptyCurve,
    #[error("invalid stop cost: {0}")]
    InvalidStopCost(f64),
    #[error("invalid normalizer: {0}")]
    InvalidNormalizer(f64),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("query {0} has no documents")]
    EmptyQuery(usize),
    #[error("invalid alpha {0}; must lie in [0, 1]")]
    InvalidAlpha(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A piecewise-linear objective-versus-cost curve starting at (0, 0) with
/// strictly increasing costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceCurve {
    points: Vec<(f64, f64)>,
}

impl PerformanceCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::EmptyCurve);
        }
        if points[0] != (0.0, 0.0) {
            return Err(MetricsError::InvalidCurve(format!(
                "first point must be (0, 0), got ({}, {})",
                points[0].0, points[0].1
            )));
        }
        for pair in points.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(MetricsError::InvalidCurve(format!(
                    "costs must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        if points.iter().any(|(c, v)| !c.is_finite() || !v.is_finite()) {
            return Err(MetricsError::InvalidCurve("non-finite point".to_string()));
        }
        Ok(Self { points })
    }

    /// Build from (cost, value) pairs, prepending the (0, 0) origin.
    pub fn from_cost_values(pairs: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        let mut points = Vec::with_capacity(pairs.len() + 1);
        points.push((0.0, 0.0));
        points.extend(pairs);
        Self::new(points)
    }

    /// Build from unsorted (cost, value) pairs: sorts by cost, merges
    /// duplicate costs by keeping the best value, and drops nonpositive
    /// costs (the origin covers them). Used for regularization-path curves
    /// whose active costs are not naturally monotone.
    pub fn from_unsorted_pairs(pairs: Vec<(f64, f64)>) -> Result<Self, MetricsError> {
        let mut sorted: Vec<(f64, f64)> = pairs.into_iter().filter(|&(c, _)| c > 0.0).collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        for (c, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 = last.1.max(v),
                _ => merged.push((c, v)),
            }
        }
        Self::from_cost_values(merged)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn final_cost(&self) -> f64 {
        self.points.last().map(|p| p.0).unwrap_or(0.0)
    }

    pub fn final_value(&self) -> f64 {
        self.points.last().map(|p| p.1).unwrap_or(0.0)
    }

    /// Linearly interpolated value; constant extension beyond the last point.
    pub fn value_at(&self, cost: f64) -> f64 {
        if cost <= 0.0 {
            return self.points[0].1;
        }
        for pair in self.points.windows(2) {
            let (c0, v0) = pair[0];
            let (c1, v1) = pair[1];
            if cost <= c1 {
                return v0 + (v1 - v0) * (cost - c0) / (c1 - c0);
            }
        }
        self.final_value()
    }

    /// Trapezoidal area under the curve over `[0, stop]`, extending the last
    /// value as a constant beyond the final point.
    pub fn area_under(&self, stop: f64) -> f64 {
        if stop <= 0.0 {
            return 0.0;
        }
        let mut area = 0.0;
        let mut prev = self.points[0];
        for &(c1, v1) in &self.points[1..] {
            if stop <= c1 {
                let v_stop = self.value_at(stop);
                area += (stop - prev.0) * (prev.1 + v_stop) / 2.0;
                return area;
            }
            area += (c1 - prev.0) * (prev.1 + v1) / 2.0;
            prev = (c1, v1);
        }
        area + (stop - prev.0) * prev.1
    }
}

/// Explained variance of a fixed model (columns + weights, not refit) on a
/// dataset: `R_eval(empty) - [(1/2n)||y - X_S w||^2 + (lambda/2)||w||^2]`.
pub fn model_explained_variance(
    d_eval: &Dataset,
    columns: &[usize],
    weights: &Array1<f64>,
    lambda: f64,
) -> Result<f64, MetricsError> {
    if d_eval.response_dim() != 1 {
        return Err(MetricsError::ColumnMismatch(format!(
            "evaluation dataset has {} response columns, expected 1",
            d_eval.response_dim()
        )));
    }
    if columns.len() != weights.len() {
        return Err(MetricsError::LengthMismatch(columns.len(), weights.len()));
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= d_eval.dim()) {
        return Err(MetricsError::ColumnMismatch(format!(
            "model column {} out of range for dimension {}",
            c,
            d_eval.dim()
        )));
    }
    let n = d_eval.num_samples() as f64;
    let y = d_eval.response_vector();
    let r_empty = y.dot(&y) / (2.0 * n);
    let xs = gather_columns(d_eval.features(), columns);
    let resid = &y - &xs.dot(weights);
    let risk = resid.dot(&resid) / (2.0 * n) + 0.5 * lambda * weights.dot(weights);
    Ok(r_empty - risk)
}

/// Evaluate every prefix model of a sequencing run on `d_eval`, pairing each
/// with its cumulative cost. Evaluating on the training set reproduces the
/// recorded prefix objectives.
pub fn curve_from_result(
    r: &SequencingResult,
    d_eval: &Dataset,
    lambda: f64,
) -> Result<PerformanceCurve, MetricsError> {
    let values: Vec<Result<f64, MetricsError>> = parallel::map_slice(&r.prefix_models, |model| {
        model_explained_variance(d_eval, &model.selected_columns, &model.weights, lambda)
    });
    let mut pairs = Vec::with_capacity(values.len());
    for (k, v) in values.into_iter().enumerate() {
        pairs.push((r.prefix_costs[k], v?));
    }
    PerformanceCurve::from_cost_values(pairs)
}

/// Smallest cost at which the interpolated curve reaches `alpha` times its
/// final value. Zero for `alpha = 0`; the first cost attaining the final
/// value for `alpha = 1`.
pub fn alpha_stopping_cost(curve: &PerformanceCurve, alpha: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MetricsError::InvalidAlpha(alpha));
    }
    if curve.points.len() < 2 {
        return Err(MetricsError::EmptyCurve);
    }
    let target = alpha * curve.final_value();
    let mut prev = curve.points[0];
    if prev.1 >= target {
        return Ok(prev.0);
    }
    for &(c1, v1) in &curve.points[1..] {
        if v1 >= target && v1 > prev.1 {
            let c = prev.0 + (target - prev.1) * (c1 - prev.0) / (v1 - prev.1);
            return Ok(c);
        }
        prev = (c1, v1);
    }
    // alpha <= 1 always terminates inside the loop; keep the endpoint as a
    // float-noise fallback.
    Ok(curve.final_cost())
}

/// Normalized area under the curve on `[0, stop_cost]`: trapezoidal area
/// divided by `stop_cost * normalizer`, where the normalizer is the final
/// training objective of the reference run.
pub fn timeliness(
    curve: &PerformanceCurve,
    stop_cost: f64,
    normalizer: f64,
) -> Result<f64, MetricsError> {
    if !(stop_cost > 0.0) {
        return Err(MetricsError::InvalidStopCost(stop_cost));
    }
    if !(normalizer > 0.0) {
        return Err(MetricsError::InvalidNormalizer(normalizer));
    }
    Ok(curve.area_under(stop_cost) / (stop_cost * normalizer))
}

/// Reorder a sequencing result by marginal objective gain per unit cost
/// (descending, original position on ties), rebuilding prefix costs and
/// objectives from the fixed marginals without refitting any model.
pub fn oracle_reorder(r: &SequencingResult) -> SequencingResult {
    let steps = r.num_steps();
    let mut entries: Vec<(usize, f64, f64)> = Vec::with_capacity(steps); // (pos, marginal, cost)
    let mut prev_obj = 0.0;
    let mut prev_cost = 0.0;
    for k in 0..steps {
        let marginal = r.prefix_objectives[k] - prev_obj;
        let cost = r.prefix_costs[k] - prev_cost;
        entries.push((k, marginal, cost));
        prev_obj = r.prefix_objectives[k];
        prev_cost = r.prefix_costs[k];
    }
    // Stable sort keeps the original position on tied ratios.
    entries.sort_by(|a, b| {
        let ra = a.1 / a.2;
        let rb = b.1 / b.2;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut out = SequencingResult {
        order: Vec::with_capacity(steps),
        order_indices: Vec::with_capacity(steps),
        prefix_costs: Vec::with_capacity(steps),
        prefix_objectives: Vec::with_capacity(steps),
        prefix_models: Vec::new(),
        selection_scores: Vec::new(),
        step_seconds: Vec::new(),
    };
    let mut cum_cost = 0.0;
    let mut cum_obj = 0.0;
    for (pos, marginal, cost) in entries {
        cum_cost += cost;
        cum_obj += marginal;
        out.order.push(r.order[pos].clone());
        out.order_indices.push(r.order_indices[pos]);
        out.prefix_costs.push(cum_cost);
        out.prefix_objectives.push(cum_obj);
    }
    out
}

/// Fraction of rows whose argmax matches the labeled class index.
pub fn accuracy_argmax(scores: &Array2<f64>, labels: &[usize]) -> Result<f64, MetricsError> {
    if scores.nrows() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.nrows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let p = scores.ncols();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if label >= p {
            return Err(MetricsError::ColumnMismatch(format!(
                "label {label} out of range for {p} classes"
            )));
        }
        let mut best = 0usize;
        for c in 1..p {
            if scores[[i, c]] > scores[[i, best]] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Fraction of scalar predictions whose nearest declared label matches the
/// true label's nearest declared label.
pub fn accuracy_nearest(
    scores: &Array1<f64>,
    labels: &[f64],
    label_set: &[f64],
) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if labels.is_empty() || label_set.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let nearest = |v: f64| -> usize {
        let mut best = 0usize;
        for (k, &l) in label_set.iter().enumerate() {
            if (v - l).abs() < (v - label_set[best]).abs() {
                best = k;
            }
        }
        best
    };
    let correct = scores
        .iter()
        .zip(labels.iter())
        .filter(|(s, l)| nearest(**s) == nearest(**l))
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One ranked query: predicted scores and graded relevances (0..=4),
/// index-aligned.
#[derive(Debug, Clone)]
pub struct RankedQuery {
    pub scores: Vec<f64>,
    pub relevances: Vec<u32>,
}

/// Mean NDCG@k over queries, with gain `2^rel - 1` and discount
/// `1/log2(rank + 1)`. Queries whose relevances are all zero contribute 1.0.
pub fn ndcg_at_k(queries: &[RankedQuery], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if queries.is_empty() {
        return Err(MetricsError::EmptyQuery(0));
    }
    for (qi, q) in queries.iter().enumerate() {
        if q.scores.is_empty() || q.scores.len() != q.relevances.len() {
            return Err(MetricsError::EmptyQuery(qi));
        }
    }
    let per_query: Vec<f64> = parallel::map_slice(queries, |q| {
        let mut order: Vec<usize> = (0..q.scores.len()).collect();
        // Stable sort: ties keep the original document order.
        order.sort_by(|&a, &b| {
            q.scores[b]
                .partial_cmp(&q.scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let gain = |rel: u32| (2f64).powi(rel as i32) - 1.0;
        let depth = k.min(q.scores.len());
        let mut dcg = 0.0;
        for (rank, &doc) in order.iter().take(depth).enumerate() {
            dcg += gain(q.relevances[doc]) / ((rank as f64 + 2.0).log2());
        }
        let mut ideal: Vec<u32> = q.relevances.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let mut idcg = 0.0;
        for (rank, &rel) in ideal.iter().take(depth).enumerate() {
            idcg += gain(rel) / ((rank as f64 + 2.0).log2());
        }
        if idcg == 0.0 {
            1.0
        } else {
            dcg / idcg
        }
    });
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Plateau-rule suggestion for alpha: the smallest alpha in
/// {0.95, ..., 0.99} past which the next percent of objective costs more
/// than 20% of the total feature cost; 1.0 when no such plateau exists.
pub fn suggest_alpha(curve: &PerformanceCurve) -> f64 {
    let total = curve.final_cost();
    if total <= 0.0 || curve.points.len() < 2 {
        return 1.0;
    }
    for step in 0..5 {
        let alpha = 0.95 + 0.01 * step as f64;
        let c1 = match alpha_stopping_cost(curve, alpha) {
            Ok(c) => c,
            Err(_) => return 1.0,
        };
        let c2 = match alpha_stopping_cost(curve, alpha + 0.01) {
            Ok(c) => c,
            Err(_) => return 1.0,
        };
        if c2 - c1 > 0.2 * total {
            return alpha;
        }
    }
    1.0
}

/// Write a curve as `cost,value` CSV with 17 significant digits (exact
/// round-trip).
pub fn write_curve_csv<W: Write>(curve: &PerformanceCurve, mut out: W) -> Result<(), MetricsError> {
    writeln!(out, "cost,value")?;
    for &(c, v) in curve.points() {
        writeln!(out, "{c:.16e},{v:.16e}")?;
    }
    Ok(())
}

/// Read a curve written by [`write_curve_csv`].
pub fn read_curve_csv<R: BufRead>(input: R) -> Result<PerformanceCurve, MetricsError> {
    let mut points = Vec::new();
    for (ln, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || (ln == 0 && trimmed.starts_with("cost")) {
            continue;
        }
        let mut parts = trimmed.split(',');
        let cost: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| MetricsError::InvalidCurve(format!("line {}: bad cost", ln + 1)))?;
        let value: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| MetricsError::InvalidCurve(format!("line {}: bad value", ln + 1)))?;
        points.push((cost, value));
    }
    PerformanceCurve::new(points)
}
