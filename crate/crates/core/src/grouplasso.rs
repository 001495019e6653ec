//! Weighted group-lasso baseline: block soft-thresholding, an accelerated
//! proximal-gradient solver with monotone restarts, and regularization
//! paths with ridge-refit objectives.
//!
//! The problem solved is `min_w (1/2) ||Y - X w||^2 + lambda sum_g c(g)
//! ||w_g||_2`; costs scale each group's regularizer so expensive groups
//! must earn their way into the active set.

use crate::dataset::Dataset;
use crate::linalg::LinalgError;
use crate::sequencer::{self, SequenceError};
use ndarray::{Array1, Array2};

const DEFAULT_MAX_ITER: usize = 500_000;
const POWER_ITER_CAP: usize = 500;

#[derive(Debug, thiserror::Error)]
pub enum LassoError {
    #[error("solver did not converge in {iterations} iterations (KKT residual {kkt:.3e})")]
    NoConvergence { iterations: usize, kkt: f64 },
    #[error("responses are not centered; run center_responses first")]
    NotCentered,
    #[error("expected a single response column, found {0}")]
    MultiResponse(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Block soft-threshold: the proximal operator of `threshold * ||.||_2`.
/// Shrinks the block radially, to exactly zero when its norm is at or
/// below the threshold.
pub fn group_prox(w_g: &Array1<f64>, threshold: f64) -> Array1<f64> {
    let norm = w_g.dot(w_g).sqrt();
    if norm <= threshold {
        Array1::zeros(w_g.len())
    } else {
        w_g * (1.0 - threshold / norm)
    }
}

/// The smallest regularization constant at which the all-zero solution is
/// optimal: `max_g ||X_g^T Y||_2 / c(g)`, padded by a few ulps so that the
/// zero solution survives the boundary case in floating point.
pub fn lambda_max(d: &Dataset) -> Result<f64, LassoError> {
    check_inputs(d)?;
    let y = d.response_vector();
    let xty = d.features().t().dot(&y);
    let mut best = 0.0f64;
    for g in d.structure().groups() {
        let norm: f64 = g
            .columns
            .iter()
            .map(|&c| xty[c] * xty[c])
            .sum::<f64>()
            .sqrt();
        best = best.max(norm / g.cost);
    }
    Ok(best * (1.0 + 4.0 * f64::EPSILON))
}

fn check_inputs(d: &Dataset) -> Result<(), LassoError> {
    if d.response_dim() != 1 {
        return Err(LassoError::MultiResponse(d.response_dim()));
    }
    if !d.responses_centered() {
        return Err(LassoError::NotCentered);
    }
    Ok(())
}

#[derive(Clone)]
struct Problem {
    g0: Array2<f64>,  // X^T X
    xty: Array1<f64>, // X^T Y
    yty: f64,
    lambda: f64,
    costs: Vec<f64>,
    blocks: Vec<Vec<usize>>,
    step: f64,
}

impl Problem {
    fn new(d: &Dataset, lambda: f64) -> Self {
        let y = d.response_vector();
        let g0 = d.features().t().dot(d.features());
        let xty = d.features().t().dot(&y);
        let yty = y.dot(&y);
        let lip = power_iteration_max_eig(&g0);
        Self {
            g0,
            xty,
            yty,
            lambda,
            costs: d.structure().groups().iter().map(|g| g.cost).collect(),
            blocks: d
                .structure()
                .groups()
                .iter()
                .map(|g| g.columns.clone())
                .collect(),
            step: 1.0 / (lip * 1.02 + 1e-12),
        }
    }

    fn smooth_gradient(&self, w: &Array1<f64>) -> Array1<f64> {
        &self.g0.dot(w) - &self.xty
    }

    fn objective(&self, w: &Array1<f64>) -> f64 {
        let quad = 0.5 * (w.dot(&self.g0.dot(w)) - 2.0 * w.dot(&self.xty) + self.yty);
        let mut penalty = 0.0;
        for (block, cost) in self.blocks.iter().zip(&self.costs) {
            let norm: f64 = block.iter().map(|&c| w[c] * w[c]).sum::<f64>().sqrt();
            penalty += cost * norm;
        }
        quad + self.lambda * penalty
    }

    fn prox_step(&self, point: &Array1<f64>) -> Array1<f64> {
        let grad = self.smooth_gradient(point);
        let moved = point - &(&grad * self.step);
        let mut out = moved.clone();
        for (block, cost) in self.blocks.iter().zip(&self.costs) {
            let wg = Array1::from_iter(block.iter().map(|&c| moved[c]));
            let shrunk = group_prox(&wg, self.step * self.lambda * cost);
            for (k, &c) in block.iter().enumerate() {
                out[c] = shrunk[k];
            }
        }
        out
    }

    /// Maximum blockwise KKT violation at `w`: zero blocks must have
    /// subgradient slack, nonzero blocks must be stationary.
    fn kkt_residual(&self, w: &Array1<f64>) -> f64 {
        let grad = self.smooth_gradient(w);
        let mut worst = 0.0f64;
        for (block, cost) in self.blocks.iter().zip(&self.costs) {
            let wg = Array1::from_iter(block.iter().map(|&c| w[c]));
            let gg = Array1::from_iter(block.iter().map(|&c| grad[c]));
            let wnorm = wg.dot(&wg).sqrt();
            let viol = if wnorm == 0.0 {
                (gg.dot(&gg).sqrt() - self.lambda * cost).max(0.0)
            } else {
                let stat = &gg + &(&wg * (self.lambda * cost / wnorm));
                stat.dot(&stat).sqrt()
            };
            worst = worst.max(viol);
        }
        worst
    }
}

fn power_iteration_max_eig(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut v: Array1<f64> = Array1::from_iter((0..n).map(|i| 1.0 + (i as f64 * 0.7).cos() * 0.1));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITER_CAP {
        let mut w = a.dot(&v);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / wn);
        let next = w.dot(&a.dot(&w));
        if (next - lambda).abs() <= 1e-10 * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
        v = w;
    }
    lambda
}

/// Solve the weighted group lasso by FISTA with adaptive restart. Stops once
/// the objective decrease per iteration falls below `tol` and the blockwise
/// KKT residual is within `10 * tol`.
pub fn solve_weighted_group_lasso(
    d: &Dataset,
    lambda: f64,
    tol: f64,
) -> Result<Array1<f64>, LassoError> {
    let w0 = Array1::zeros(d.dim());
    solve_weighted_group_lasso_warm(d, lambda, tol, &w0)
}

/// [`solve_weighted_group_lasso`] starting from `w0` (used by path solvers).
pub fn solve_weighted_group_lasso_warm(
    d: &Dataset,
    lambda: f64,
    tol: f64,
    w0: &Array1<f64>,
) -> Result<Array1<f64>, LassoError> {
    check_inputs(d)?;
    if !(lambda > 0.0) {
        return Err(LassoError::InvalidConfig(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(tol > 0.0) {
        return Err(LassoError::InvalidConfig(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let problem = Problem::new(d, lambda);
    let (w, _) = fista(&problem, w0, tol, DEFAULT_MAX_ITER)?;
    Ok(w)
}

/// Blockwise KKT residual of a candidate solution (the solver's own stopping
/// surface, exposed for verification).
pub fn kkt_residual(d: &Dataset, w: &Array1<f64>, lambda: f64) -> Result<f64, LassoError> {
    check_inputs(d)?;
    Ok(Problem::new(d, lambda).kkt_residual(w))
}

fn fista(
    problem: &Problem,
    w0: &Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Array1<f64>, Vec<f64>), LassoError> {
    let mut w = w0.clone();
    let mut momentum = w.clone();
    let mut theta = 1.0f64;
    let mut obj = problem.objective(&w);
    let mut trace = vec![obj];
    for _ in 0..max_iter {
        let mut w_next = problem.prox_step(&momentum);
        let mut obj_next = problem.objective(&w_next);
        if obj_next > obj {
            // Momentum overshot; restart from the last iterate. A plain
            // proximal step never increases the objective at step <= 1/L.
            theta = 1.0;
            w_next = problem.prox_step(&w);
            obj_next = problem.objective(&w_next);
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        momentum = &w_next + &((&w_next - &w) * beta);
        let decrease = obj - obj_next;
        w = w_next;
        obj = obj_next;
        theta = theta_next;
        trace.push(obj);

        if decrease.abs() < tol && problem.kkt_residual(&w) <= 10.0 * tol {
            return Ok((w, trace));
        }
    }
    Err(LassoError::NoConvergence {
        iterations: max_iter,
        kkt: problem.kkt_residual(&w),
    })
}

/// A regularization path: solutions and diagnostics for a decreasing
/// geometric grid of lambdas starting at [`lambda_max`].
#[derive(Debug, Clone)]
pub struct LassoPath {
    /// Strictly decreasing regularization constants.
    pub lambdas: Vec<f64>,
    pub solutions: Vec<Array1<f64>>,
    /// Summed cost of groups with nonzero blocks, per solution.
    pub active_costs: Vec<f64>,
    /// Explained variance of a ridge refit on each active set.
    pub objectives: Vec<f64>,
    /// Penalized lasso objective of each raw solution.
    pub raw_objectives: Vec<f64>,
    /// Ridge-refit weights per active set, aligned with `active_columns`.
    pub refit_weights: Vec<Array1<f64>>,
    /// Active column sets per solution.
    pub active_columns: Vec<Vec<usize>>,
}

/// Trace a warm-started path over `n_points` lambdas from `lambda_max` down
/// to `lambda_max * 1e-4`, refitting each active set by ridge regression
/// (`refit_lambda`) so objectives are comparable with the sequencers.
pub fn lasso_path(
    d: &Dataset,
    n_points: usize,
    refit_lambda: f64,
) -> Result<LassoPath, LassoError> {
    lasso_path_with_tol(d, n_points, refit_lambda, 1e-8)
}

/// [`lasso_path`] with an explicit solver tolerance.
pub fn lasso_path_with_tol(
    d: &Dataset,
    n_points: usize,
    refit_lambda: f64,
    tol: f64,
) -> Result<LassoPath, LassoError> {
    check_inputs(d)?;
    if n_points < 2 {
        return Err(LassoError::InvalidConfig(format!(
            "path needs at least 2 points, got {n_points}"
        )));
    }
    let lam_max = lambda_max(d)?;
    if !(lam_max > 0.0) {
        return Err(LassoError::InvalidConfig(
            "responses are orthogonal to every feature group".to_string(),
        ));
    }
    let decay: f64 = 1e-4;
    let mut path = LassoPath {
        lambdas: Vec::with_capacity(n_points),
        solutions: Vec::with_capacity(n_points),
        active_costs: Vec::with_capacity(n_points),
        objectives: Vec::with_capacity(n_points),
        raw_objectives: Vec::with_capacity(n_points),
        refit_weights: Vec::with_capacity(n_points),
        active_columns: Vec::with_capacity(n_points),
    };
    let problem_scale = Problem::new(d, lam_max);
    let mut w = Array1::zeros(d.dim());
    for i in 0..n_points {
        let frac = i as f64 / (n_points - 1) as f64;
        let lambda = lam_max * decay.powf(frac);
        w = solve_weighted_group_lasso_warm(d, lambda, tol, &w)?;

        let mut active_cost = 0.0;
        let mut active_cols: Vec<usize> = Vec::new();
        for g in d.structure().groups() {
            let norm: f64 = g.columns.iter().map(|&c| w[c] * w[c]).sum::<f64>().sqrt();
            if norm > 0.0 {
                active_cost += g.cost;
                active_cols.extend(&g.columns);
            }
        }
        let refit = if active_cols.is_empty() {
            (0.0, Array1::zeros(0))
        } else {
            let (_, weights) = sequencer::ridge_risk(d, &active_cols, refit_lambda)?;
            let ev = sequencer::explained_variance(d, &active_cols, refit_lambda)?;
            (ev, weights)
        };
        let raw = Problem {
            lambda,
            ..problem_scale.clone()
        }
        .objective(&w);

        path.lambdas.push(lambda);
        path.solutions.push(w.clone());
        path.active_costs.push(active_cost);
        path.objectives.push(refit.0);
        path.raw_objectives.push(raw);
        path.refit_weights.push(refit.1);
        path.active_columns.push(active_cols);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        center_responses, generate_synthetic, Dataset, Group, GroupStructure, SyntheticConfig,
    };
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn prepared(seed: u64, n: usize) -> Dataset {
        let cfg = SyntheticConfig {
            seed,
            n,
            group_sizes: vec![2, 1, 2],
            costs: vec![1.0, 0.5, 2.0],
            sparsity: 2,
            noise_sd: 0.2,
            correlation: 0.3,
        };
        center_responses(&generate_synthetic(&cfg).unwrap())
    }

    /// Orthonormal design (X^T X = I) with two single-column groups.
    fn orthonormal_two_group(y0: f64, y1: f64) -> Dataset {
        let h = 0.5f64;
        let x = array![[h, h], [h, -h], [-h, h], [-h, -h]];
        // X^T X = I exactly. Choose y = y0 * col0 + y1 * col1 so X^T y = (y0, y1).
        let y_vals: Vec<f64> = (0..4).map(|i| y0 * x[[i, 0]] + y1 * x[[i, 1]]).collect();
        let y = ndarray::Array2::from_shape_vec((4, 1), y_vals).unwrap();
        let structure = GroupStructure::new(vec![
            Group {
                name: "a".to_string(),
                columns: vec![0],
                cost: 1.0,
            },
            Group {
                name: "b".to_string(),
                columns: vec![1],
                cost: 1.0,
            },
        ])
        .unwrap();
        Dataset::new(x, y, structure).unwrap()
    }

    #[test]
    fn prox_full_shrinkage() {
        let w = array![3.0, 4.0];
        let out = group_prox(&w, 10.0);
        assert_abs_diff_eq!(out, Array1::zeros(2), epsilon = 1e-15);
    }

    #[test]
    fn prox_partial_shrinkage() {
        let w = array![3.0, 4.0];
        let out = group_prox(&w, 2.5);
        assert_abs_diff_eq!(out[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn prox_vanishing_threshold_is_identity() {
        let w = array![3.0, 4.0];
        let out = group_prox(&w, 1e-15);
        assert!((&out - &w).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lambda_above_max_gives_exact_zero() {
        let d = prepared(3, 50);
        let lm = lambda_max(&d).unwrap();
        let w = solve_weighted_group_lasso(&d, lm * 1.0001, 1e-10).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        let w = solve_weighted_group_lasso(&d, lm, 1e-10).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_lambda_approaches_ols() {
        let d = prepared(5, 80);
        let w = solve_weighted_group_lasso(&d, 1e-8 * lambda_max(&d).unwrap(), 1e-12).unwrap();
        // OLS via the normal equations.
        let x = d.features();
        let y = d.response_vector();
        let g = x.t().dot(x);
        let f = crate::linalg::spd_factorize(&g).unwrap();
        let ols = f.solve_vec(&x.t().dot(&y)).unwrap();
        for (a, b) in w.iter().zip(ols.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn orthonormal_design_matches_closed_form() {
        let d = orthonormal_two_group(2.0, 0.6);
        for lambda in [0.4, 1.0, 1.5] {
            let w = solve_weighted_group_lasso(&d, lambda, 1e-12).unwrap();
            // Closed form: blockwise soft-threshold of X^T Y.
            let expect0 = (2.0f64 - lambda).max(0.0) * (2.0f64 / 2.0f64.abs()) / 2.0 * 2.0;
            // For a single-coordinate block: w = sign(v) * max(0, |v| - lambda).
            let soft = |v: f64| v.signum() * (v.abs() - lambda).max(0.0);
            assert_abs_diff_eq!(w[0], soft(2.0), epsilon = 1e-8);
            assert_abs_diff_eq!(w[1], soft(0.6), epsilon = 1e-8);
            let _ = expect0;
        }
    }

    #[test]
    fn solutions_satisfy_kkt() {
        for seed in [1u64, 7, 13] {
            let d = prepared(seed, 60);
            let lm = lambda_max(&d).unwrap();
            let tol = 1e-9;
            for frac in [0.5, 0.1, 0.01] {
                let lambda = lm * frac;
                let w = solve_weighted_group_lasso(&d, lambda, tol).unwrap();
                let kkt = kkt_residual(&d, &w, lambda).unwrap();
                assert!(kkt <= 10.0 * tol, "seed {seed} frac {frac}: kkt {kkt}");
            }
        }
    }

    #[test]
    fn objective_is_monotone_with_restarts() {
        let d = prepared(11, 60);
        let lambda = 0.3 * lambda_max(&d).unwrap();
        let problem = Problem::new(&d, lambda);
        let w0 = Array1::zeros(d.dim());
        let (_, trace) = fista(&problem, &w0, 1e-10, DEFAULT_MAX_ITER).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn path_endpoints() {
        let d = prepared(17, 70);
        let path = lasso_path(&d, 2, 1e-6).unwrap();
        assert_eq!(path.lambdas.len(), 2);
        assert!(path.solutions[0].iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(path.active_costs[0], 0.0);
        // Near-OLS endpoint activates everything on a full-rank design.
        assert!(path.active_costs[1] > 0.0);
        assert!(path.objectives[1] > 0.0);
        for pair in path.lambdas.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn path_monotone_on_orthogonal_design() {
        let d = orthonormal_two_group(2.0, 0.6);
        let path = lasso_path(&d, 12, 1e-8).unwrap();
        for pair in path.active_costs.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "active costs decreased");
        }
        for pair in path.objectives.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10, "refit objectives decreased");
        }
        // Closed-form activation thresholds: group enters when lambda drops
        // below |X_g^T Y| / c(g).
        for (i, &lam) in path.lambdas.iter().enumerate() {
            let active_a = path.solutions[i][0] != 0.0;
            assert_eq!(active_a, lam < 2.0, "lambda {lam}");
            let active_b = path.solutions[i][1] != 0.0;
            assert_eq!(active_b, lam < 0.6, "lambda {lam}");
        }
    }

    #[test]
    fn path_rejects_single_point() {
        let d = prepared(19, 40);
        assert!(matches!(
            lasso_path(&d, 1, 1e-6),
            Err(LassoError::InvalidConfig(_))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn prox_is_nonexpansive(
                a in proptest::collection::vec(-10.0f64..10.0, 4),
                b in proptest::collection::vec(-10.0f64..10.0, 4),
                threshold in 0.01f64..5.0,
            ) {
                let av = Array1::from(a);
                let bv = Array1::from(b);
                let pa = group_prox(&av, threshold);
                let pb = group_prox(&bv, threshold);
                let d_out = (&pa - &pb).dot(&(&pa - &pb)).sqrt();
                let d_in = (&av - &bv).dot(&(&av - &bv)).sqrt();
                prop_assert!(d_out <= d_in + 1e-12);
            }
        }
    }
}
