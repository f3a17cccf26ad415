//! Hybrid parameter estimation.
//!
//! Each epoch takes adaptive-moment gradient steps on the attention
//! projections and membership parameters (and, for classification, on the
//! consequents too), then re-solves the regression consequents in closed
//! form by ridge least squares with the premises frozen. Wavelet filters
//! are never trained: the basis is picked by validation loss from a list
//! of candidates, each trained from the same seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::AttentionParams;
use crate::fuzzy::{self, FuzzyError};
use crate::linalg::{self, LinalgError};
use crate::matrix::Matrix;
use crate::metrics;
use crate::model::{self, Fingerprint, Gradients, ModelConfig, ModelError, ModelState, StandardizationPolicy, SCHEMA_VERSION};
use crate::optim::{Adam, AdamConfig};
use crate::series::{check_window, RegressionTarget, SupervisedWindow, Task, WindowGroup};
use crate::wavelet::{check_depth, WaveletBasis, WaveletError, WaveletKind};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the
/// cross-entropy.
pub const P_CLAMP: f64 = 1e-12;

/// Decorrelates the split shuffle from the other seeded streams.
const SPLIT_SALT: u64 = 0x5eed_0000_5417;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("{predictions} predictions but {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("no valid windows to train on")]
    NoValidWindows,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("consequent solve: {0}")]
    Solve(#[from] LinalgError),
    #[error("consequent least squares only applies to regression")]
    NotRegression,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub basis_candidates: Vec<WaveletKind>,
    pub validation_fraction: f64,
    pub early_stop_patience: usize,
    pub model: ModelConfig,
    /// Channel the regression target was derived from (recorded in the model).
    pub target_channel: usize,
    pub regression_target: RegressionTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Regression,
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 64,
            ridge_lambda: 1e-3,
            seed: 0,
            basis_candidates: vec![WaveletKind::Haar],
            validation_fraction: 0.2,
            early_stop_patience: 10,
            model: ModelConfig::default(),
            target_channel: 0,
            regression_target: RegressionTarget::Volatility,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must be in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be >= 0");
        }
        if self.basis_candidates.is_empty() {
            return bad("basis_candidates is empty");
        }
        let m = &self.model;
        if m.rules == 0 || m.d_k == 0 || m.d_v == 0 || m.depth == 0 || m.horizon == 0 {
            return bad("rules, d_k, d_v, depth and horizon must be >= 1");
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the config's debug rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisScore {
    pub basis: WaveletKind,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_rmse: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss after each epoch for the chosen basis, epoch 1 first.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub chosen_basis: WaveletKind,
    pub basis_scores: Vec<BasisScore>,
    pub final_metrics: FinalMetrics,
    pub n_train_windows: usize,
    pub n_val_windows: usize,
    /// Filled in by callers that can read a clock.
    pub wall_clock_seconds: Option<f64>,
    pub warnings: Vec<String>,
    pub config: TrainConfig,
}

/// Mean squared error (regression) or mean clamped binary cross-entropy.
pub fn loss(predictions: &[f64], targets: &[f64], task: Task) -> Result<f64, TrainError> {
    if predictions.len() != targets.len() {
        return Err(TrainError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| sample_loss(p, y, task))
        .sum();
    Ok(total / predictions.len() as f64)
}

fn sample_loss(p: f64, y: f64, task: Task) -> f64 {
    match task {
        Task::Regression => (p - y) * (p - y),
        Task::Classification => {
            let q = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            -(y * libm::log(q) + (1.0 - y) * libm::log(1.0 - q))
        }
    }
}

/// ∂(sample loss)/∂(raw model output) given the linked prediction.
fn sample_loss_grad(p: f64, y: f64, task: Task) -> f64 {
    match task {
        Task::Regression => 2.0 * (p - y),
        Task::Classification => {
            if (P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
                p - y
            } else {
                0.0
            }
        }
    }
}

/// Prediction for one window; see [`ModelState::forward`] for the trace.
pub fn forward(window: &SupervisedWindow, model: &ModelState) -> Result<(f64, model::Forward), TrainError> {
    let fwd = model.forward(window.input.values())?;
    Ok((fwd.prediction, fwd))
}

fn encode_all(windows: &[&SupervisedWindow], model: &ModelState) -> Result<Vec<Matrix>, TrainError> {
    windows
        .iter()
        .map(|w| Ok(model.encode(w.input.values())?.values))
        .collect()
}

/// Mean loss gradient over `batch`. Premise and attention gradients are
/// exact; consequent gradients are included as well.
pub fn grad_premise_attention(batch: &[SupervisedWindow], model: &ModelState) -> Result<Gradients, TrainError> {
    let refs: Vec<&SupervisedWindow> = batch.iter().collect();
    let encoded = encode_all(&refs, model)?;
    let targets: Vec<f64> = batch.iter().map(|w| w.target).collect();
    let idx: Vec<usize> = (0..batch.len()).collect();
    mean_gradient(model, &encoded, &targets, &idx).map(|(g, _)| g)
}

fn mean_gradient(
    model: &ModelState,
    encoded: &[Matrix],
    targets: &[f64],
    batch: &[usize],
) -> Result<(Gradients, f64), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);
    let mut total = 0.0;
    for &i in batch {
        let y = targets[i];
        let p = model::backprop(model, &encoded[i], &mut grads, |p| sample_loss_grad(p, y, model.task) * scale);
        total += sample_loss(p, y, model.task);
    }
    let flat_ok = grads.to_flat(true).iter().all(|g| g.is_finite());
    if !flat_ok {
        return Err(TrainError::NonFiniteGradient);
    }
    Ok((grads, total * scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsequentSolution {
    /// R×m consequent weights.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    /// True when there were fewer samples than unknowns.
    pub underdetermined: bool,
}

/// Ridge least squares for every consequent jointly with premises and
/// attention frozen. Row `n` of the design is `[ᾱ_1 x_n, ᾱ_1, …, ᾱ_R x_n, ᾱ_R]`.
pub fn solve_consequents(
    batch: &[SupervisedWindow],
    model: &ModelState,
    ridge_lambda: f64,
) -> Result<ConsequentSolution, TrainError> {
    if model.task != Task::Regression {
        return Err(TrainError::NotRegression);
    }
    let refs: Vec<&SupervisedWindow> = batch.iter().collect();
    let encoded = encode_all(&refs, model)?;
    let targets: Vec<f64> = batch.iter().map(|w| w.target).collect();
    solve_encoded(model, &encoded, &targets, ridge_lambda)
}

fn solve_encoded(
    model: &ModelState,
    encoded: &[Matrix],
    targets: &[f64],
    ridge_lambda: f64,
) -> Result<ConsequentSolution, TrainError> {
    if encoded.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let rules = model.rules.rules();
    let m = model.rules.input_dim();
    let width = rules * (m + 1);
    let mut design = Matrix::zeros(encoded.len(), width);
    for (n, z) in encoded.iter().enumerate() {
        let (weights, h) = model::rule_weights_encoded(model, z);
        let row = design.row_mut(n);
        for i in 0..rules {
            let block = &mut row[i * (m + 1)..(i + 1) * (m + 1)];
            for j in 0..m {
                block[j] = weights[i] * h[j];
            }
            block[m] = weights[i];
        }
    }
    let theta = linalg::ridge_lstsq(&design, targets, ridge_lambda)?;
    let mut weights = Matrix::zeros(rules, m);
    let mut biases = vec![0.0; rules];
    for i in 0..rules {
        let block = &theta[i * (m + 1)..(i + 1) * (m + 1)];
        weights.row_mut(i).copy_from_slice(&block[..m]);
        biases[i] = block[m];
    }
    Ok(ConsequentSolution {
        weights,
        biases,
        underdetermined: encoded.len() < width,
    })
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Seeded initial model for one basis: attention entries uniform in
/// `[-1/√d′, 1/√d′]`, rules placed on the pooled training representations.
fn initial_model(
    config: &TrainConfig,
    basis: WaveletKind,
    channels: &[String],
    train_windows: &[&SupervisedWindow],
) -> Result<ModelState, TrainError> {
    let mc = &config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input_dim = 2 * mc.depth * channels.len();
    let attention = AttentionParams::init(input_dim, mc.d_k, mc.d_v, &mut rng);
    let placeholder = fuzzy::FuzzyRuleBase::new(
        Matrix::zeros(mc.rules, mc.d_v),
        Matrix::from_fn(mc.rules, mc.d_v, |_, _| 1.0),
        Matrix::zeros(mc.rules, mc.d_v),
        vec![0.0; mc.rules],
    )?;
    let mut model = ModelState {
        schema_version: SCHEMA_VERSION,
        task: config.task,
        basis,
        depth: mc.depth,
        window: mc.window,
        horizon: mc.horizon,
        target_channel: config.target_channel,
        regression_target: config.regression_target,
        channels: channels.to_vec(),
        standardization: StandardizationPolicy::PerSeries,
        attention,
        rules: placeholder,
        fingerprint: Fingerprint {
            seed: config.seed,
            config_hash: config.hash(),
        },
    };
    let mut pooled = Matrix::zeros(train_windows.len(), mc.d_v);
    let mut targets = Vec::with_capacity(train_windows.len());
    for (n, w) in train_windows.iter().enumerate() {
        let fwd = model.forward(w.input.values())?;
        pooled.row_mut(n).copy_from_slice(&fwd.attended.h_pooled);
        targets.push(w.target);
    }
    let mut rules = fuzzy::init_rules(&pooled, &targets, mc.rules, config.seed)?;
    if config.task == Task::Classification {
        for b in &mut rules.biases {
            *b = logit(b.clamp(0.01, 0.99));
        }
    }
    model.rules = rules;
    model.validate()?;
    Ok(model)
}

/// Deterministic split by group (households). With a single group the
/// last `fraction` of its windows (in time order) is held out.
pub fn split_groups<'a>(
    groups: &'a [WindowGroup],
    fraction: f64,
    seed: u64,
) -> (Vec<&'a SupervisedWindow>, Vec<&'a SupervisedWindow>) {
    let non_empty: Vec<&WindowGroup> = groups.iter().filter(|g| !g.windows.is_empty()).collect();
    if non_empty.len() == 1 {
        let windows = &non_empty[0].windows;
        let n_val = (libm::round(windows.len() as f64 * fraction) as usize).clamp(1, windows.len().saturating_sub(1).max(1));
        let cut = windows.len() - n_val;
        return (windows[..cut].iter().collect(), windows[cut..].iter().collect());
    }
    let mut order: Vec<usize> = (0..non_empty.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = (libm::round(non_empty.len() as f64 * fraction) as usize).clamp(1, non_empty.len().saturating_sub(1).max(1));
    let mut is_val = vec![false; non_empty.len()];
    for &g in &order[..n_val] {
        is_val[g] = true;
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (g, group) in non_empty.iter().enumerate() {
        let dst = if is_val[g] { &mut val } else { &mut train };
        dst.extend(group.windows.iter());
    }
    (train, val)
}


struct BasisRun {
    model: ModelState,
    score: BasisScore,
    train_curve: Vec<f64>,
    val_curve: Vec<f64>,
    warnings: Vec<String>,
}

fn evaluate(model: &ModelState, encoded: &[Matrix], targets: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
    let preds: Vec<f64> = encoded.iter().map(|z| model::predict_encoded(model, z)).collect();
    let l = loss(&preds, targets, model.task)?;
    if !l.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok((l, preds))
}

fn apply_solution(model: &mut ModelState, sol: ConsequentSolution) {
    model.rules.weights = sol.weights;
    model.rules.biases = sol.biases;
}

fn train_basis(
    config: &TrainConfig,
    basis: WaveletKind,
    channels: &[String],
    train: &[&SupervisedWindow],
    val: &[&SupervisedWindow],
) -> Result<BasisRun, TrainError> {
    let mut warnings = Vec::new();
    let mut model = initial_model(config, basis, channels, train)?;
    let train_z = encode_all(train, &model)?;
    let val_z = encode_all(val, &model)?;
    let train_y: Vec<f64> = train.iter().map(|w| w.target).collect();
    let val_y: Vec<f64> = val.iter().map(|w| w.target).collect();

    let regression = config.task == Task::Regression;
    let width = model.rules.rules() * (model.rules.input_dim() + 1);
    if regression && train.len() < width {
        warnings.push(format!(
            "{basis}: {} training windows for {width} consequent unknowns",
            train.len()
        ));
    }
    if regression {
        let sol = solve_encoded(&model, &train_z, &train_y, config.ridge_lambda)?;
        apply_solution(&mut model, sol);
    }

    let with_consequents = !regression;
    let mut optimizer = Adam::new(
        model.param_count(with_consequents),
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut stale = 0usize;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (grads, _) = mean_gradient(&model, &train_z, &train_y, batch)?;
            let mut params = model.params_flat(with_consequents);
            optimizer.step(&mut params, &grads.to_flat(with_consequents));
            model.set_params_flat(&params, with_consequents);
            model.rules.clamp_spreads();
        }
        if regression {
            let sol = solve_encoded(&model, &train_z, &train_y, config.ridge_lambda)?;
            apply_solution(&mut model, sol);
        }
        let (train_loss, _) = evaluate(&model, &train_z, &train_y)?;
        let (val_loss, _) = evaluate(&model, &val_z, &val_y)?;
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                break;
            }
        }
    }
    let epochs_run = train_curve.len();
    Ok(BasisRun {
        model: best.2,
        score: BasisScore {
            basis,
            best_val_loss: best.0,
            best_epoch: best.1,
            epochs_run,
        },
        train_curve,
        val_curve,
        warnings,
    })
}

/// Trains one model per candidate basis and keeps the one with the lowest
/// validation loss. Candidates whose filters are too long for the window
/// are skipped with a warning. Fully deterministic for a given config.
pub fn train(groups: &[WindowGroup], config: &TrainConfig) -> Result<(ModelState, TrainReport), TrainError> {
    config.validate()?;
    let first = groups
        .iter()
        .flat_map(|g| g.windows.first())
        .next()
        .ok_or(TrainError::NoValidWindows)?;
    let channels: Vec<String> = first.input.channels().to_vec();
    let mc = &config.model;
    check_window(usize::MAX, mc.window, 0, mc.depth).map_err(|e| TrainError::InvalidConfig(format!("{e}")))?;
    for w in groups.iter().flat_map(|g| &g.windows) {
        if w.input.len() != mc.window || w.input.channels() != channels.as_slice() {
            return Err(TrainError::InvalidConfig("windows disagree with the model window or channels".into()));
        }
        if config.task == Task::Classification && w.target != 0.0 && w.target != 1.0 {
            return Err(TrainError::InvalidConfig("classification targets must be 0 or 1".into()));
        }
    }
    let (train, val) = split_groups(groups, config.validation_fraction, config.seed);
    if train.is_empty() || val.is_empty() || train.len() < mc.rules {
        return Err(TrainError::NoValidWindows);
    }

    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    let mut last_error = None;
    for &basis in &config.basis_candidates {
        if let Err(e) = check_depth(mc.window, mc.depth, &WaveletBasis::new(basis)) {
            skipped.push(format!("{basis} skipped: {e}"));
            last_error = Some(e);
            continue;
        }
        runs.push(train_basis(config, basis, &channels, &train, &val)?);
    }
    if runs.is_empty() {
        return Err(last_error.expect("candidates are non-empty").into());
    }
    let chosen = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.score.best_val_loss.total_cmp(&b.1.score.best_val_loss).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one candidate");
    let basis_scores = runs.iter().map(|r| r.score.clone()).collect();
    let warnings = skipped
        .into_iter()
        .chain(runs.iter().flat_map(|r| r.warnings.iter().cloned()))
        .collect();
    let run = runs.swap_remove(chosen);
    let model = run.model;

    let train_y: Vec<f64> = train.iter().map(|w| w.target).collect();
    let val_y: Vec<f64> = val.iter().map(|w| w.target).collect();
    let (train_loss, _) = evaluate(&model, &encode_all(&train, &model)?, &train_y)?;
    let (val_loss, val_pred) = evaluate(&model, &encode_all(&val, &model)?, &val_y)?;
    let final_metrics = FinalMetrics {
        train_loss,
        val_loss,
        val_rmse: (config.task == Task::Regression)
            .then(|| metrics::rmse(&val_pred, &val_y).ok())
            .flatten(),
        val_auc: (config.task == Task::Classification)
            .then(|| metrics::roc_auc(&val_pred, &val_y).ok().map(|c| c.auc))
            .flatten(),
    };
    let report = TrainReport {
        train_loss: run.train_curve,
        val_loss: run.val_curve,
        chosen_basis: model.basis,
        basis_scores,
        final_metrics,
        n_train_windows: train.len(),
        n_val_windows: val.len(),
        wall_clock_seconds: None,
        warnings,
        config: config.clone(),
    };
    Ok((model, report))
}
