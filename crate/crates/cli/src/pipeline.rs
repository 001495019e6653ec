//! Command implementations: dataset preparation, sequencing runs, bound
//! verification, and evaluation of stored results.

use crate::config::RunConfig;
use crate::CliError;
use groupseq::dataset::{
    self, center_features, center_responses, shift_responses, standardize_columns, whiten_groups,
    ColumnStandardizer, Dataset, SyntheticConfig, WhiteningTransform,
};
use groupseq::glm::{self, GlmModel, GlmSequencingResult, GlmSpec, MeanFunction};
use groupseq::grouplasso;
use groupseq::metrics::{self, PerformanceCurve};
use groupseq::sequencer::{self, OmpOptions, RidgeModel, SelectionRule};
use groupseq::theory;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Output file schemas
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct OrderFile {
    pub method: String,
    pub lambda: f64,
    pub order: Vec<String>,
    pub order_indices: Vec<usize>,
    pub prefix_costs: Vec<f64>,
    pub prefix_objectives: Vec<f64>,
    pub selection_scores: Vec<Vec<Option<f64>>>,
    pub models: Vec<ModelInfo>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub glm: Option<GlmInfo>,
    pub preprocess: PreprocessInfo,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sparse_path: Option<SparsePathInfo>,
}

/// One stored model: weight rows (P of them) over the listed columns.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub columns: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GlmInfo {
    pub p: usize,
    pub mean_fn: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreprocessInfo {
    pub response_mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_means: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub standardize: Option<StandardizeInfo>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub whitening: Option<Vec<GroupTransformInfo>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StandardizeInfo {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupTransformInfo {
    pub group: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SparsePathInfo {
    pub lambdas: Vec<f64>,
    pub active_costs: Vec<f64>,
    pub refit_objectives: Vec<f64>,
    pub raw_objectives: Vec<f64>,
    pub active_groups: Vec<Vec<String>>,
    pub solutions: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: String,
    pub alpha: f64,
    pub stop_cost: f64,
    pub timeliness: f64,
    pub final_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lasso_path: Option<String>,
}

#[derive(Debug, Serialize)]
struct TimingFile {
    step_seconds: Vec<f64>,
    total_seconds: f64,
}

#[derive(Debug, Serialize)]
struct BoundFile<'a> {
    gamma: f64,
    satisfied: bool,
    theorem: &'a theory::BoundReport,
    per_step: &'a theory::StepReport,
}

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Option<Dataset>), CliError> {
    match (&cfg.train_csv, &cfg.synth) {
        (Some(train), _) => {
            let spec = cfg.group_spec.as_ref().ok_or_else(|| {
                CliError::Config("train_csv given without group_spec".to_string())
            })?;
            let train_d = dataset::load_csv(train, spec)
                .map_err(|e| data_err(e, &format!("loading {}", train.display())))?;
            let test_d = match &cfg.test_csv {
                Some(t) => Some(
                    dataset::load_csv(t, spec)
                        .map_err(|e| data_err(e, &format!("loading {}", t.display())))?,
                ),
                None => None,
            };
            Ok((train_d, test_d))
        }
        (None, Some(synth)) => {
            let n_total = synth.n + synth.n_test;
            let d = dataset::generate_synthetic(&SyntheticConfig {
                seed: cfg.seed(),
                n: n_total,
                group_sizes: synth.group_sizes.clone(),
                costs: synth.costs.clone(),
                sparsity: synth.sparsity,
                noise_sd: synth.noise_sd,
                correlation: synth.correlation,
            })
            .map_err(|e| data_err(e, "generating synthetic data"))?;
            if synth.n_test > 0 {
                let (train, test) = d
                    .split_at(synth.n)
                    .map_err(|e| data_err(e, "splitting synthetic data"))?;
                Ok((train, Some(test)))
            } else {
                Ok((d, None))
            }
        }
        (None, None) => Err(CliError::Config(
            "config needs either train_csv/group_spec or a synth block".to_string(),
        )),
    }
}

fn data_err(e: dataset::DataError, context: &str) -> CliError {
    use dataset::DataError::*;
    match e {
        SpecError(_) | InvalidConfig(_) => CliError::Config(format!("{context}: {e}")),
        other => CliError::Runtime(format!("{context}: {other}")),
    }
}

struct Prepared {
    train: Dataset,
    test: Option<Dataset>,
    preprocess: PreprocessInfo,
}

/// Center responses, optionally center features, then whiten or standardize
/// according to the method. Held-out data gets the training transforms.
fn prepare(cfg: &RunConfig, method: &str, center_y: bool) -> Result<Prepared, CliError> {
    let (train_raw, test_raw) = load_datasets(cfg)?;
    let p = train_raw.response_dim();

    let (mut train, response_mean) = if center_y {
        let t = center_responses(&train_raw);
        let m = t.response_mean().clone();
        (t, m)
    } else {
        (train_raw, Array1::zeros(p))
    };
    let mut test = match test_raw {
        Some(t) => Some(
            shift_responses(&t, &response_mean).map_err(|e| data_err(e, "centering test data"))?,
        ),
        None => None,
    };

    let mut preprocess = PreprocessInfo {
        response_mean: response_mean.to_vec(),
        feature_means: None,
        standardize: None,
        whitening: None,
    };

    if cfg.center_features {
        let (centered, means) = center_features(&train);
        train = centered;
        let centerer = ColumnStandardizer {
            means: means.to_vec(),
            scales: vec![1.0; means.len()],
        };
        if let Some(t) = test.take() {
            test = Some(
                centerer
                    .apply(&t)
                    .map_err(|e| data_err(e, "centering test features"))?,
            );
        }
        preprocess.feature_means = Some(means.to_vec());
    }

    match method {
        "cs-g-omp-nowhiten" => {
            let (standardized, t) = standardize_columns(&train);
            train = standardized;
            if let Some(te) = test.take() {
                test = Some(
                    t.apply(&te)
                        .map_err(|e| data_err(e, "standardizing test features"))?,
                );
            }
            preprocess.standardize = Some(StandardizeInfo {
                means: t.means,
                scales: t.scales,
            });
        }
        _ => {
            let ridge = cfg.whiten_ridge()?;
            let (whitened, transform) =
                whiten_groups(&train, ridge).map_err(|e| data_err(e, "whitening"))?;
            train = whitened;
            if let Some(te) = test.take() {
                test = Some(
                    transform
                        .apply(&te)
                        .map_err(|e| data_err(e, "whitening test features"))?,
                );
            }
            preprocess.whitening = Some(
                train
                    .structure()
                    .groups()
                    .iter()
                    .zip(transform.transforms())
                    .map(|(g, m)| GroupTransformInfo {
                        group: g.name.clone(),
                        matrix: matrix_rows(m),
                    })
                    .collect(),
            );
        }
    }

    Ok(Prepared {
        train,
        test,
        preprocess,
    })
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(nrows * ncols);
    for r in rows {
        if r.len() != ncols {
            return Err(CliError::Runtime("ragged matrix in JSON".to_string()));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| CliError::Runtime(format!("bad matrix shape: {e}")))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(
    cfg: &RunConfig,
    data_out: Option<&Path>,
    spec_out: Option<&Path>,
) -> Result<(), CliError> {
    let synth = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("synth command needs a synth block".to_string()))?;
    let d = dataset::generate_synthetic(&SyntheticConfig {
        seed: cfg.seed(),
        n: synth.n,
        group_sizes: synth.group_sizes.clone(),
        costs: synth.costs.clone(),
        sparsity: synth.sparsity,
        noise_sd: synth.noise_sd,
        correlation: synth.correlation,
    })
    .map_err(|e| data_err(e, "generating synthetic data"))?;

    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let data_path = data_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("data.csv"));
    let spec_path = spec_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("groups.json"));
    dataset::save_csv(&d, &data_path, &spec_path).map_err(|e| data_err(e, "writing dataset"))?;
    eprintln!(
        "wrote {} ({} rows, {} features, {} groups) and {}",
        data_path.display(),
        d.num_samples(),
        d.dim(),
        d.structure().num_groups(),
        spec_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sequence
// ---------------------------------------------------------------------------

fn linear_rule(method: &str) -> Option<(SelectionRule, OmpOptions)> {
    let opts = OmpOptions::default();
    match method {
        "cs-g-omp" => Some((SelectionRule::CostSensitiveL2, opts)),
        "g-omp" => Some((SelectionRule::CostInsensitiveL2, opts)),
        "cs-g-omp-single" => Some((SelectionRule::CostSensitiveLInf, opts)),
        "cs-g-omp-nowhiten" => Some((
            SelectionRule::CostSensitiveL2,
            OmpOptions {
                allow_unwhitened: true,
                ..Default::default()
            },
        )),
        _ => None,
    }
}

pub fn cmd_sequence(cfg: &RunConfig) -> Result<(), CliError> {
    let method = cfg.method()?.to_string();
    let lambda = cfg.lambda()?;
    let alpha = cfg.alpha()?;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    match method.as_str() {
        "glm-omp" => sequence_glm(cfg, &method, &out_dir),
        "sparse" => sequence_sparse(cfg, &method, lambda, alpha, &out_dir),
        _ => sequence_linear(cfg, &method, lambda, alpha, &out_dir),
    }
}

fn sequence_linear(
    cfg: &RunConfig,
    method: &str,
    lambda: f64,
    alpha: f64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let prepared = prepare(cfg, method, true)?;
    let result = match method {
        "cs-g-fr" => sequencer::sequence_fr(&prepared.train, lambda, true)?,
        "g-fr" => sequencer::sequence_fr(&prepared.train, lambda, false)?,
        _ => {
            let (rule, opts) = linear_rule(method)
                .ok_or_else(|| CliError::Config(format!("unhandled method {method}")))?;
            sequencer::sequence_omp_with(&prepared.train, lambda, rule, &opts)?
        }
    };

    let train_curve = metrics::curve_from_result(&result, &prepared.train, lambda)?;
    let test_curve = match &prepared.test {
        Some(t) => metrics::curve_from_result(&result, t, lambda)?,
        None => train_curve.clone(),
    };

    let order = OrderFile {
        method: method.to_string(),
        lambda,
        order: result.order.clone(),
        order_indices: result.order_indices.clone(),
        prefix_costs: result.prefix_costs.clone(),
        prefix_objectives: result.prefix_objectives.clone(),
        selection_scores: result.selection_scores.clone(),
        models: result
            .prefix_models
            .iter()
            .map(|m| ModelInfo {
                columns: m.selected_columns.clone(),
                weights: vec![m.weights.to_vec()],
            })
            .collect(),
        glm: None,
        preprocess: prepared.preprocess,
        sparse_path: None,
    };
    write_run_outputs(
        out_dir,
        &order,
        &train_curve,
        &test_curve,
        alpha,
        &result.step_seconds,
        None,
    )
}

fn sequence_glm(cfg: &RunConfig, method: &str, out_dir: &Path) -> Result<(), CliError> {
    let glm_cfg = cfg.glm.clone().unwrap_or(crate::config::GlmConfig {
        p: 1,
        mean_fn: "identity".to_string(),
        lambda: None,
        newton_tol: None,
        newton_max_iter: None,
    });
    let mean_fn = match glm_cfg.mean_fn.as_str() {
        "identity" => MeanFunction::Identity,
        "softmax" => MeanFunction::Softmax,
        other => {
            return Err(CliError::Config(format!(
                "unknown mean function '{other}'; expected identity or softmax"
            )))
        }
    };
    let spec = GlmSpec {
        p: glm_cfg.p,
        mean_fn,
        lambda: glm_cfg.lambda.unwrap_or(cfg.lambda()?),
        newton_tol: glm_cfg.newton_tol.unwrap_or(1e-8),
        newton_max_iter: glm_cfg.newton_max_iter.unwrap_or(200),
    };
    let alpha = cfg.alpha()?;
    // One-hot softmax responses stay as they are; identity responses are
    // centered like the linear pipeline.
    let prepared = prepare(cfg, method, mean_fn == MeanFunction::Identity)?;
    let result = glm::sequence_omp_glm(&prepared.train, &spec)?;

    let train_curve = glm_curve(&result, &prepared.train)?;
    let test_curve = match &prepared.test {
        Some(t) => glm_curve(&result, t)?,
        None => train_curve.clone(),
    };

    let order = OrderFile {
        method: method.to_string(),
        lambda: spec.lambda,
        order: result.order.clone(),
        order_indices: result.order_indices.clone(),
        prefix_costs: result.prefix_costs.clone(),
        prefix_objectives: result.prefix_objectives.clone(),
        selection_scores: result.selection_scores.clone(),
        models: result
            .prefix_models
            .iter()
            .map(|m| ModelInfo {
                columns: m.selected_columns.clone(),
                weights: matrix_rows(&m.w),
            })
            .collect(),
        glm: Some(GlmInfo {
            p: spec.p,
            mean_fn: glm_cfg.mean_fn.clone(),
        }),
        preprocess: prepared.preprocess,
        sparse_path: None,
    };
    write_run_outputs(
        out_dir,
        &order,
        &train_curve,
        &test_curve,
        alpha,
        &result.step_seconds,
        None,
    )
}

fn glm_curve(result: &GlmSequencingResult, d: &Dataset) -> Result<PerformanceCurve, CliError> {
    let mut pairs = Vec::with_capacity(result.prefix_models.len());
    for (k, model) in result.prefix_models.iter().enumerate() {
        pairs.push((result.prefix_costs[k], glm::glm_objective(d, model)));
    }
    Ok(PerformanceCurve::from_cost_values(pairs)?)
}

fn sequence_sparse(
    cfg: &RunConfig,
    method: &str,
    lambda: f64,
    alpha: f64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let sparse_cfg = cfg.sparse.clone().unwrap_or(crate::config::SparseConfig {
        n_points: None,
        tol: None,
        refit_lambda: None,
    });
    let n_points = sparse_cfg.n_points.unwrap_or(50);
    let tol = sparse_cfg.tol.unwrap_or(1e-8);
    let refit_lambda = sparse_cfg.refit_lambda.unwrap_or(lambda);

    let started = std::time::Instant::now();
    let prepared = prepare(cfg, method, true)?;
    let path = grouplasso::lasso_path_with_tol(&prepared.train, n_points, refit_lambda, tol)?;
    let elapsed = started.elapsed().as_secs_f64();

    let train_pairs: Vec<(f64, f64)> = path
        .active_costs
        .iter()
        .cloned()
        .zip(path.objectives.iter().cloned())
        .collect();
    let train_curve = PerformanceCurve::from_unsorted_pairs(train_pairs)?;
    let test_curve = match &prepared.test {
        Some(t) => {
            let mut pairs = Vec::with_capacity(path.active_costs.len());
            for i in 0..path.active_costs.len() {
                let value = metrics::model_explained_variance(
                    t,
                    &path.active_columns[i],
                    &path.refit_weights[i],
                    refit_lambda,
                )?;
                pairs.push((path.active_costs[i], value));
            }
            PerformanceCurve::from_unsorted_pairs(pairs)?
        }
        None => train_curve.clone(),
    };

    let structure = prepared.train.structure();
    let sparse_path = SparsePathInfo {
        lambdas: path.lambdas.clone(),
        active_costs: path.active_costs.clone(),
        refit_objectives: path.objectives.clone(),
        raw_objectives: path.raw_objectives.clone(),
        active_groups: path
            .solutions
            .iter()
            .map(|w| {
                structure
                    .groups()
                    .iter()
                    .filter(|g| g.columns.iter().any(|&c| w[c] != 0.0))
                    .map(|g| g.name.clone())
                    .collect()
            })
            .collect(),
        solutions: path.solutions.iter().map(|w| w.to_vec()).collect(),
    };
    let lasso_path_file = out_dir.join("lasso_path.json");
    write_json(&lasso_path_file, &sparse_path)?;

    let order = OrderFile {
        method: method.to_string(),
        lambda: refit_lambda,
        order: Vec::new(),
        order_indices: Vec::new(),
        prefix_costs: path.active_costs.clone(),
        prefix_objectives: path.objectives.clone(),
        selection_scores: Vec::new(),
        models: path
            .active_columns
            .iter()
            .zip(path.refit_weights.iter())
            .map(|(cols, w)| ModelInfo {
                columns: cols.clone(),
                weights: vec![w.to_vec()],
            })
            .collect(),
        glm: None,
        preprocess: prepared.preprocess,
        sparse_path: Some(sparse_path_clone(&sparse_path)),
    };
    write_run_outputs(
        out_dir,
        &order,
        &train_curve,
        &test_curve,
        alpha,
        &[elapsed],
        Some("lasso_path.json"),
    )
}

fn sparse_path_clone(p: &SparsePathInfo) -> SparsePathInfo {
    SparsePathInfo {
        lambdas: p.lambdas.clone(),
        active_costs: p.active_costs.clone(),
        refit_objectives: p.refit_objectives.clone(),
        raw_objectives: p.raw_objectives.clone(),
        active_groups: p.active_groups.clone(),
        solutions: p.solutions.clone(),
    }
}

fn write_run_outputs(
    out_dir: &Path,
    order: &OrderFile,
    train_curve: &PerformanceCurve,
    test_curve: &PerformanceCurve,
    alpha: f64,
    step_seconds: &[f64],
    lasso_path: Option<&str>,
) -> Result<(), CliError> {
    write_json(&out_dir.join("order.json"), order)?;
    write_curve(&out_dir.join("curve_train.csv"), train_curve)?;
    write_curve(&out_dir.join("curve_test.csv"), test_curve)?;

    let stop_cost = metrics::alpha_stopping_cost(train_curve, alpha)?;
    let normalizer = train_curve.final_value();
    let timeliness = if stop_cost > 0.0 && normalizer > 0.0 {
        metrics::timeliness(test_curve, stop_cost, normalizer)?
    } else {
        0.0
    };
    let report = ReportFile {
        method: order.method.clone(),
        alpha,
        stop_cost,
        timeliness,
        final_objective: normalizer,
        lasso_path: lasso_path.map(str::to_string),
    };
    write_json(&out_dir.join("report.json"), &report)?;

    let timing = TimingFile {
        step_seconds: step_seconds.to_vec(),
        total_seconds: step_seconds.iter().sum(),
    };
    write_json(&out_dir.join("timing.json"), &timing)?;
    eprintln!(
        "{}: {} steps, final objective {:.6}, {:.2}-stop cost {:.4}, timeliness {:.4}",
        order.method,
        order.prefix_costs.len(),
        report.final_objective,
        alpha,
        report.stop_cost,
        report.timeliness
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-bound
// ---------------------------------------------------------------------------

pub fn cmd_verify_bound(cfg: &RunConfig, corrupt_selection: bool) -> Result<(), CliError> {
    let lambda = cfg.lambda()?;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let prepared = prepare(cfg, "cs-g-omp", true)?;
    let opts = OmpOptions {
        invert_selection: corrupt_selection,
        ..Default::default()
    };
    let (theorem, per_step) = theory::check_bounds_with(
        &prepared.train,
        lambda,
        SelectionRule::CostSensitiveL2,
        &opts,
    )?;
    let satisfied = theorem.all_satisfied() && per_step.all_satisfied();
    let file = BoundFile {
        gamma: theorem.gamma,
        satisfied,
        theorem: &theorem,
        per_step: &per_step,
    };
    write_json(&out_dir.join("bound_report.json"), &file)?;
    eprintln!(
        "gamma = {:.6}; {} bound records ({} violations), {} per-step records ({} violations)",
        theorem.gamma,
        theorem.records.len(),
        theorem.violations,
        per_step.records.len(),
        per_step.violations
    );
    if satisfied {
        Ok(())
    } else {
        Err(CliError::BoundViolation)
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub struct EvaluateInputs {
    pub order: PathBuf,
    pub data: PathBuf,
    pub spec: PathBuf,
    pub output_dir: PathBuf,
    pub alpha: f64,
    pub reference_curve: Option<PathBuf>,
}

pub fn cmd_evaluate(inputs: &EvaluateInputs) -> Result<(), CliError> {
    let text = fs::read_to_string(&inputs.order)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", inputs.order.display())))?;
    let order: OrderFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid order file: {e}")))?;

    let raw = dataset::load_csv(&inputs.data, &inputs.spec)
        .map_err(|e| data_err(e, &format!("loading {}", inputs.data.display())))?;
    let d = apply_preprocess(&raw, &order.preprocess)?;

    let curve = match (&order.glm, order.sparse_path.is_some()) {
        (Some(info), _) => {
            let mean_fn = match info.mean_fn.as_str() {
                "identity" => MeanFunction::Identity,
                "softmax" => MeanFunction::Softmax,
                other => return Err(CliError::Config(format!("unknown mean function '{other}'"))),
            };
            let spec = GlmSpec {
                p: info.p,
                mean_fn,
                lambda: order.lambda,
                newton_tol: 1e-8,
                newton_max_iter: 200,
            };
            let mut pairs = Vec::with_capacity(order.models.len());
            for (k, m) in order.models.iter().enumerate() {
                let model = GlmModel {
                    selected_columns: m.columns.clone(),
                    w: rows_to_matrix(&m.weights)?,
                    spec: spec.clone(),
                };
                pairs.push((order.prefix_costs[k], glm::glm_objective(&d, &model)));
            }
            PerformanceCurve::from_cost_values(pairs)?
        }
        (None, sparse) => {
            let mut pairs = Vec::with_capacity(order.models.len());
            for (k, m) in order.models.iter().enumerate() {
                let weights = m
                    .weights
                    .first()
                    .cloned()
                    .ok_or_else(|| CliError::Config("model without weights".to_string()))?;
                let model = RidgeModel::from_weights(
                    m.columns.clone(),
                    Array1::from(weights),
                    order.lambda,
                );
                let value = metrics::model_explained_variance(
                    &d,
                    &model.selected_columns,
                    &model.weights,
                    order.lambda,
                )?;
                pairs.push((order.prefix_costs[k], value));
            }
            if sparse {
                PerformanceCurve::from_unsorted_pairs(pairs)?
            } else {
                PerformanceCurve::from_cost_values(pairs)?
            }
        }
    };

    fs::create_dir_all(&inputs.output_dir).map_err(|e| {
        CliError::Runtime(format!(
            "cannot create {}: {e}",
            inputs.output_dir.display()
        ))
    })?;
    write_curve(&inputs.output_dir.join("curve_eval.csv"), &curve)?;

    let (reference, normalizer) = match &inputs.reference_curve {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            let r = metrics::read_curve_csv(std::io::BufReader::new(file))?;
            let v = r.final_value();
            (r, v)
        }
        None => {
            let v = curve.final_value();
            (curve.clone(), v)
        }
    };
    let stop_cost = metrics::alpha_stopping_cost(&reference, inputs.alpha)?;
    let timeliness = if stop_cost > 0.0 && normalizer > 0.0 {
        metrics::timeliness(&curve, stop_cost, normalizer)?
    } else {
        0.0
    };
    let report = ReportFile {
        method: order.method.clone(),
        alpha: inputs.alpha,
        stop_cost,
        timeliness,
        final_objective: normalizer,
        lasso_path: None,
    };
    write_json(&inputs.output_dir.join("report.json"), &report)?;
    eprintln!(
        "{}: eval final objective {:.6}, stop cost {:.4}, timeliness {:.4}",
        order.method,
        curve.final_value(),
        stop_cost,
        timeliness
    );
    Ok(())
}

fn apply_preprocess(d: &Dataset, pre: &PreprocessInfo) -> Result<Dataset, CliError> {
    let mut out = shift_responses(d, &Array1::from(pre.response_mean.clone()))
        .map_err(|e| data_err(e, "applying response centering"))?;
    if let Some(means) = &pre.feature_means {
        let centerer = ColumnStandardizer {
            means: means.clone(),
            scales: vec![1.0; means.len()],
        };
        out = centerer
            .apply(&out)
            .map_err(|e| data_err(e, "applying feature centering"))?;
    }
    if let Some(st) = &pre.standardize {
        let t = ColumnStandardizer {
            means: st.means.clone(),
            scales: st.scales.clone(),
        };
        out = t
            .apply(&out)
            .map_err(|e| data_err(e, "applying standardization"))?;
    }
    if let Some(groups) = &pre.whitening {
        let mut matrices = Vec::with_capacity(groups.len());
        for g in out.structure().groups() {
            let info = groups.iter().find(|t| t.group == g.name).ok_or_else(|| {
                CliError::Config(format!(
                    "no whitening transform stored for group {}",
                    g.name
                ))
            })?;
            matrices.push(rows_to_matrix(&info.matrix)?);
        }
        let transform = WhiteningTransform::from_matrices(matrices);
        out = transform
            .apply(&out)
            .map_err(|e| data_err(e, "applying whitening"))?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shared writers
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_curve(path: &Path, curve: &PerformanceCurve) -> Result<(), CliError> {
    let mut buf = Vec::new();
    metrics::write_curve_csv(curve, &mut buf)?;
    fs::write(path, buf)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
