//! Generalized-linear sequencing: multi-dimensional responses, convex mean
//! functions (identity and softmax), Frobenius-norm group selection, and a
//! damped-Newton fitter with gradient fallback.

use crate::dataset::{gather_columns, Dataset};
use crate::linalg::{self, LinalgError};
use crate::parallel;
use ndarray::{Array1, Array2};
use std::time::Instant;

/// Logit clamp applied before exponentiation in the softmax path.
const LOGIT_CLAMP: f64 = 500.0;
const ARMIJO_C: f64 = 1e-4;
const MIN_LINE_STEP: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum GlmError {
    #[error("fitter did not converge in {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("dataset must be group whitened for GLM sequencing")]
    NotWhitened,
    #[error("invalid responses: {0}")]
    InvalidResponses(String),
    #[error("spec declares {expected} response dimensions, dataset has {found}")]
    ResponseDimMismatch { expected: usize, found: usize },
    #[error("nonpositive group cost: {0}")]
    NonpositiveCost(f64),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFunction {
    Identity,
    Softmax,
}

/// Configuration of a generalized-linear fit.
#[derive(Debug, Clone)]
pub struct GlmSpec {
    /// Response dimension P.
    pub p: usize,
    pub mean_fn: MeanFunction,
    pub lambda: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl GlmSpec {
    pub fn new(p: usize, mean_fn: MeanFunction, lambda: f64) -> Self {
        Self {
            p,
            mean_fn,
            lambda,
            newton_tol: 1e-8,
            newton_max_iter: 200,
        }
    }

    fn validate(&self) -> Result<(), GlmError> {
        if self.p == 0 {
            return Err(GlmError::InvalidSpec("p must be >= 1".to_string()));
        }
        if self.lambda < 0.0 {
            return Err(GlmError::InvalidSpec("lambda must be >= 0".to_string()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(GlmError::InvalidSpec("newton_tol must be > 0".to_string()));
        }
        Ok(())
    }
}

/// A fitted GLM over a column subset; `w` is P x |S| with columns aligned to
/// `selected_columns`.
#[derive(Debug, Clone)]
pub struct GlmModel {
    pub selected_columns: Vec<usize>,
    pub w: Array2<f64>,
    pub spec: GlmSpec,
}

impl GlmModel {
    pub fn zero(spec: GlmSpec) -> Self {
        let p = spec.p;
        Self {
            selected_columns: Vec::new(),
            w: Array2::zeros((p, 0)),
            spec,
        }
    }

    /// Linear predictors `W x_i` for every sample, as an n x P matrix.
    pub fn linear_predictor(&self, x: &Array2<f64>) -> Array2<f64> {
        let xs = gather_columns(x, &self.selected_columns);
        xs.dot(&self.w.t())
    }
}

/// Convex potential whose gradient is the mean function: `z^2/2` summed for
/// the identity, log-sum-exp for the softmax (so `phi(0) = ln P`).
fn potential(mean_fn: MeanFunction, z: &Array1<f64>) -> f64 {
    match mean_fn {
        MeanFunction::Identity => 0.5 * z.dot(z),
        MeanFunction::Softmax => {
            let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let s: f64 = z
                .iter()
                .map(|&v| ((v - m).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
                .sum();
            m + s.ln()
        }
    }
}

/// Evaluate the mean function at a linear predictor.
pub fn mean_fn_eval(spec: &GlmSpec, z: &Array1<f64>) -> Array1<f64> {
    match spec.mean_fn {
        MeanFunction::Identity => z.clone(),
        MeanFunction::Softmax => {
            let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut out = z.mapv(|v| ((v - m).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp());
            let s = out.sum();
            out.mapv_inplace(|v| v / s);
            out
        }
    }
}

/// Regularized calibrated loss `(1/n) sum_i (phi(W x_i) - y_i . W x_i)
/// + (lambda/2) ||W||_F^2`.
pub fn glm_loss(d: &Dataset, model: &GlmModel) -> f64 {
    let n = d.num_samples() as f64;
    let z = model.linear_predictor(d.features());
    let y = d.responses();
    let mut acc = 0.0;
    for i in 0..d.num_samples() {
        let zi = z.row(i).to_owned();
        acc += potential(model.spec.mean_fn, &zi);
        acc -= y.row(i).dot(&z.row(i));
    }
    let frob2: f64 = model.w.iter().map(|v| v * v).sum();
    acc / n + 0.5 * model.spec.lambda * frob2
}

/// Full P x D loss gradient at the model's coefficients, with unselected
/// columns treated as zero-weight.
pub fn glm_gradient(d: &Dataset, model: &GlmModel) -> Array2<f64> {
    let n = d.num_samples() as f64;
    let z = model.linear_predictor(d.features());
    let y = d.responses();
    let p = model.spec.p;
    // Rows of (mu - y).
    let mut err = Array2::zeros((d.num_samples(), p));
    for i in 0..d.num_samples() {
        let zi = z.row(i).to_owned();
        let mu = mean_fn_eval(&model.spec, &zi);
        for c in 0..p {
            err[[i, c]] = mu[c] - y[[i, c]];
        }
    }
    let mut grad = err.t().dot(d.features()) / n;
    for (k, &c) in model.selected_columns.iter().enumerate() {
        for r in 0..p {
            grad[[r, c]] += model.spec.lambda * model.w[[r, k]];
        }
    }
    grad
}

/// Hessian of the potential at a mean vector: identity for the identity
/// link, `diag(mu) - mu mu^T` for the softmax.
fn potential_hessian(mean_fn: MeanFunction, mu: &Array1<f64>) -> Array2<f64> {
    let p = mu.len();
    match mean_fn {
        MeanFunction::Identity => Array2::eye(p),
        MeanFunction::Softmax => {
            let mut h = Array2::zeros((p, p));
            for a in 0..p {
                for b in 0..p {
                    h[[a, b]] = if a == b {
                        mu[a] * (1.0 - mu[a])
                    } else {
                        -mu[a] * mu[b]
                    };
                }
            }
            h
        }
    }
}

struct FitProblem<'a> {
    xs: Array2<f64>,
    y: &'a Array2<f64>,
    n: f64,
    spec: &'a GlmSpec,
}

impl FitProblem<'_> {
    fn loss(&self, w: &Array2<f64>) -> f64 {
        let z = self.xs.dot(&w.t());
        let mut acc = 0.0;
        for i in 0..z.nrows() {
            let zi = z.row(i).to_owned();
            acc += potential(self.spec.mean_fn, &zi);
            acc -= self.y.row(i).dot(&z.row(i));
        }
        let frob2: f64 = w.iter().map(|v| v * v).sum();
        acc / self.n + 0.5 * self.spec.lambda * frob2
    }

    /// Restricted gradient (P x K) at `w`.
    fn gradient(&self, w: &Array2<f64>) -> Array2<f64> {
        let p = self.spec.p;
        let z = self.xs.dot(&w.t());
        let mut err = Array2::zeros((z.nrows(), p));
        for i in 0..z.nrows() {
            let zi = z.row(i).to_owned();
            let mu = mean_fn_eval(self.spec, &zi);
            for c in 0..p {
                err[[i, c]] = mu[c] - self.y[[i, c]];
            }
        }
        let mut g = err.t().dot(&self.xs) / self.n;
        g.scaled_add(self.spec.lambda, w);
        g
    }

    /// Dense restricted Hessian over vec(W) with index `(k, p) -> k*P + p`.
    fn hessian(&self, w: &Array2<f64>) -> Array2<f64> {
        let p = self.spec.p;
        let k = self.xs.ncols();
        let dim = p * k;
        let mut h = Array2::zeros((dim, dim));
        match self.spec.mean_fn {
            MeanFunction::Identity => {
                let gram = self.xs.t().dot(&self.xs) / self.n;
                for a in 0..k {
                    for b in 0..k {
                        let g = gram[[a, b]];
                        for r in 0..p {
                            h[[a * p + r, b * p + r]] = g;
                        }
                    }
                }
            }
            MeanFunction::Softmax => {
                let z = self.xs.dot(&w.t());
                for i in 0..z.nrows() {
                    let zi = z.row(i).to_owned();
                    let mu = mean_fn_eval(self.spec, &zi);
                    let hp = potential_hessian(self.spec.mean_fn, &mu);
                    let xi = self.xs.row(i);
                    for a in 0..k {
                        let xa = xi[a];
                        if xa == 0.0 {
                            continue;
                        }
                        for b in 0..k {
                            let f = xa * xi[b] / self.n;
                            if f == 0.0 {
                                continue;
                            }
                            for r in 0..p {
                                for c in 0..p {
                                    h[[a * p + r, b * p + c]] += f * hp[[r, c]];
                                }
                            }
                        }
                    }
                }
            }
        }
        for idx in 0..dim {
            h[[idx, idx]] += self.spec.lambda;
        }
        h
    }
}

fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn frobenius_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Fit a GLM restricted to `columns` by damped Newton with Armijo
/// backtracking, falling back to gradient steps when the Hessian solve
/// fails. Converges when the restricted gradient Frobenius norm drops to
/// `spec.newton_tol`.
pub fn glm_fit(
    d: &Dataset,
    columns: &[usize],
    spec: &GlmSpec,
    warm_start: Option<&GlmModel>,
) -> Result<GlmModel, GlmError> {
    spec.validate()?;
    if d.response_dim() != spec.p {
        return Err(GlmError::ResponseDimMismatch {
            expected: spec.p,
            found: d.response_dim(),
        });
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= d.dim()) {
        return Err(GlmError::InvalidSpec(format!(
            "column {} out of range for dimension {}",
            c,
            d.dim()
        )));
    }
    let p = spec.p;
    let k = columns.len();
    let mut w = Array2::zeros((p, k));
    if let Some(prev) = warm_start {
        for (k_new, &c) in columns.iter().enumerate() {
            if let Some(k_old) = prev.selected_columns.iter().position(|&pc| pc == c) {
                for r in 0..p.min(prev.w.nrows()) {
                    w[[r, k_new]] = prev.w[[r, k_old]];
                }
            }
        }
    }
    if k == 0 {
        return Ok(GlmModel {
            selected_columns: Vec::new(),
            w,
            spec: spec.clone(),
        });
    }

    let problem = FitProblem {
        xs: gather_columns(d.features(), columns),
        y: d.responses(),
        n: d.num_samples() as f64,
        spec,
    };

    let mut loss = problem.loss(&w);
    let mut grad_norm = f64::INFINITY;
    for _iter in 0..spec.newton_max_iter {
        let grad = problem.gradient(&w);
        grad_norm = frobenius_norm(&grad);
        if grad_norm <= spec.newton_tol {
            return Ok(GlmModel {
                selected_columns: columns.to_vec(),
                w,
                spec: spec.clone(),
            });
        }

        // Newton direction, or steepest descent if the Hessian is singular.
        let newton_dir = {
            let h = problem.hessian(&w);
            match linalg::spd_factorize(&h) {
                Ok(f) => {
                    let mut gvec = Array1::zeros(p * k);
                    for kk in 0..k {
                        for r in 0..p {
                            gvec[kk * p + r] = grad[[r, kk]];
                        }
                    }
                    f.solve_vec(&gvec).ok().map(|delta| {
                        let mut dir = Array2::zeros((p, k));
                        for kk in 0..k {
                            for r in 0..p {
                                dir[[r, kk]] = -delta[kk * p + r];
                            }
                        }
                        dir
                    })
                }
                Err(_) => None,
            }
        };

        let mut advanced = false;
        for dir in [newton_dir, Some(-&grad)].into_iter().flatten() {
            let slope = frobenius_inner(&grad, &dir);
            if slope >= 0.0 {
                continue;
            }
            let mut t = 1.0;
            while t >= MIN_LINE_STEP {
                let cand = &w + &(&dir * t);
                let cand_loss = problem.loss(&cand);
                if cand_loss <= loss + ARMIJO_C * t * slope {
                    w = cand;
                    loss = cand_loss;
                    advanced = true;
                    break;
                }
                t *= 0.5;
            }
            if advanced {
                break;
            }
        }
        if !advanced {
            return Err(GlmError::NoConvergence {
                iterations: spec.newton_max_iter,
                grad_norm,
            });
        }
    }
    // Final gradient check after the last step.
    let grad = problem.gradient(&w);
    let gn = frobenius_norm(&grad);
    if gn <= spec.newton_tol {
        return Ok(GlmModel {
            selected_columns: columns.to_vec(),
            w,
            spec: spec.clone(),
        });
    }
    Err(GlmError::NoConvergence {
        iterations: spec.newton_max_iter,
        grad_norm: gn.min(grad_norm),
    })
}

/// GLM objective value of a model: loss reduction relative to the zero
/// model on the same data.
pub fn glm_objective(d: &Dataset, model: &GlmModel) -> f64 {
    let zero = GlmModel::zero(model.spec.clone());
    glm_loss(d, &zero) - glm_loss(d, model)
}

/// One full GLM sequencing run (same shape as the linear result, with GLM
/// models per prefix).
#[derive(Debug, Clone)]
pub struct GlmSequencingResult {
    pub order: Vec<String>,
    pub order_indices: Vec<usize>,
    pub prefix_costs: Vec<f64>,
    pub prefix_objectives: Vec<f64>,
    pub prefix_models: Vec<GlmModel>,
    pub selection_scores: Vec<Vec<Option<f64>>>,
    pub step_seconds: Vec<f64>,
}

impl GlmSequencingResult {
    pub fn final_objective(&self) -> f64 {
        self.prefix_objectives.last().copied().unwrap_or(0.0)
    }
}

fn check_one_hot(d: &Dataset) -> Result<(), GlmError> {
    for (i, row) in d.responses().rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for &v in row.iter() {
            if (v - 0.0).abs() > 1e-12 && (v - 1.0).abs() > 1e-12 {
                return Err(GlmError::InvalidResponses(format!(
                    "row {i} is not one-hot: entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GlmError::InvalidResponses(format!(
                "row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Sequence all feature groups for a GLM: at each step, score unselected
/// groups by squared gradient Frobenius norm per unit cost at the current
/// model, select the best, and refit (warm-started) on the grown support.
pub fn sequence_omp_glm(d: &Dataset, spec: &GlmSpec) -> Result<GlmSequencingResult, GlmError> {
    spec.validate()?;
    if !d.is_whitened() {
        return Err(GlmError::NotWhitened);
    }
    if d.response_dim() != spec.p {
        return Err(GlmError::ResponseDimMismatch {
            expected: spec.p,
            found: d.response_dim(),
        });
    }
    if spec.mean_fn == MeanFunction::Softmax {
        check_one_hot(d)?;
    }
    let structure = d.structure().clone();
    let j = structure.num_groups();
    for g in structure.groups() {
        if !(g.cost > 0.0) {
            return Err(GlmError::NonpositiveCost(g.cost));
        }
    }

    let zero_loss = glm_loss(d, &GlmModel::zero(spec.clone()));
    let mut model = GlmModel::zero(spec.clone());
    let mut selected = vec![false; j];
    let mut columns: Vec<usize> = Vec::new();
    let mut cumulative_cost = 0.0;
    let mut result = GlmSequencingResult {
        order: Vec::with_capacity(j),
        order_indices: Vec::with_capacity(j),
        prefix_costs: Vec::with_capacity(j),
        prefix_objectives: Vec::with_capacity(j),
        prefix_models: Vec::with_capacity(j),
        selection_scores: Vec::with_capacity(j),
        step_seconds: Vec::with_capacity(j),
    };

    for _step in 0..j {
        let started = Instant::now();
        let grad = glm_gradient(d, &model);
        let grad_ref = &grad;
        let selected_ref = &selected;
        let structure_ref = &structure;
        let scores: Vec<Option<f64>> = parallel::map_range(j, move |g| {
            if selected_ref[g] {
                return None;
            }
            let group = structure_ref.group(g);
            let mut sq = 0.0;
            for &c in &group.columns {
                for r in 0..grad_ref.nrows() {
                    sq += grad_ref[[r, c]] * grad_ref[[r, c]];
                }
            }
            Some(sq / group.cost)
        });
        let mut pick: Option<(usize, f64)> = None;
        for (idx, s) in scores.iter().enumerate() {
            if let Some(score) = s {
                match pick {
                    None => pick = Some((idx, *score)),
                    Some((_, best)) if *score > best => pick = Some((idx, *score)),
                    _ => {}
                }
            }
        }
        let (g, _) = pick.expect("at least one unselected group remains");
        let group = structure.group(g);
        columns.extend(&group.columns);
        model = glm_fit(d, &columns, spec, Some(&model))?;
        selected[g] = true;
        cumulative_cost += group.cost;

        result.selection_scores.push(scores);
        result.order.push(group.name.clone());
        result.order_indices.push(g);
        result.prefix_costs.push(cumulative_cost);
        result
            .prefix_objectives
            .push(zero_loss - glm_loss(d, &model));
        result.prefix_models.push(model.clone());
        result.step_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(result)
}
