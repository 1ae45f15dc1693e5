//! Maximum-likelihood training of coupling flows with Adam, mini-batches and
//! validation-based early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::ScenarioSet;
use crate::error::{check_dim, Error, Result};
use crate::flow::{FlowArch, FlowModel, Standardizer};
use crate::pca::{self, Truncation};

/// Rows per gradient work unit. Fixed so the reduction order, and therefore
/// every bit of the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    /// Gradients are rescaled to at most this global L2 norm.
    pub clip_norm: f64,
    /// Train NLL below this value (nats per scenario) marks a runaway.
    pub runaway_nll: f64,
    /// Number of trailing epochs judged by the stability check.
    pub stability_window: usize,
    /// Relative slack of the stability check.
    pub stability_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            early_stop_patience: 50,
            validation_fraction: 0.2,
            clip_norm: 100.0,
            runaway_nll: -50.0,
            stability_window: 10,
            stability_tolerance: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Argument(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Seed of the parameter initialization stream.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the epoch shuffling stream.
    pub fn shuffle_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// Seed of the sampling stream.
    pub fn sample_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Seed of the train/validation split.
    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    /// Seed for generating synthetic data sets.
    pub fn data_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    /// The loss or a gradient became non-finite; training stopped.
    NonFinite,
    /// Train NLL fell below the runaway bound (near-singular Jacobians).
    Runaway,
    /// Validation NLL at the end sits clearly above its best value.
    ValidationBlowup,
}

impl DivergenceKind {
    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::NonFinite => "non_finite",
            DivergenceKind::Runaway => "runaway",
            DivergenceKind::ValidationBlowup => "validation_blowup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub epoch: usize,
}

/// Per-epoch mean negative log-likelihoods (nats per scenario).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub train_nll: Vec<f64>,
    pub val_nll: Vec<f64>,
    pub best_epoch: usize,
    pub divergence: Option<Divergence>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn epochs(&self) -> usize {
        self.train_nll.len()
    }

    pub fn best_val(&self) -> f64 {
        self.val_nll.get(self.best_epoch).copied().unwrap_or(f64::NAN)
    }

    /// Mean validation NLL over the last `window` epochs.
    pub fn final_window_val(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.val_nll.len().max(1));
        let tail = &self.val_nll[self.val_nll.len().saturating_sub(w)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Final-window validation NLL stays within `tolerance * |best|` of the
    /// best. A run whose best epoch lies inside the final window is still
    /// improving and counts as stable.
    pub fn is_stable(&self, window: usize, tolerance: f64) -> bool {
        let best = self.best_val();
        self.best_epoch + window.max(1) >= self.epochs()
            || self.final_window_val(window) <= best + tolerance * best.abs()
    }

    pub fn min_train(&self) -> f64 {
        self.train_nll.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `epoch,train_nll,val_nll` with `#` status lines on top.
    pub fn to_csv(&self, header_comment: Option<&str>) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        if let Some(c) = header_comment {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# best_epoch={}", self.best_epoch);
        match self.divergence {
            Some(d) => {
                let _ = writeln!(out, "# diverged={} epoch={}", d.kind.name(), d.epoch);
            }
            None => out.push_str("# diverged=none\n"),
        }
        out.push_str("epoch,train_nll,val_nll\n");
        for (e, (t, v)) in self.train_nll.iter().zip(&self.val_nll).enumerate() {
            let _ = writeln!(out, "{e},{t},{v}");
        }
        out
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.m.len())?;
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
    Ok(())
}

/// Mean NLL over flow-space rows and its exact parameter gradient.
fn latent_nll_and_grads(model: &FlowModel, rows: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::Argument("batch is empty".into()));
    }
    let n_params = model.n_params();
    let partials: Vec<Result<(f64, Vec<f64>)>> = rows
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut ws = model.row_workspace();
            let mut grads = vec![0.0; n_params];
            let mut nll = 0.0;
            for (i, row) in chunk.iter().enumerate() {
                nll += model
                    .row_nll_and_grad(row, &mut ws, &mut grads)
                    .map_err(|_| Error::Diverged {
                        row: c * GRAD_CHUNK + i,
                    })?;
            }
            Ok((nll, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = vec![0.0; n_params];
    for part in partials {
        let (nll, g) = part?;
        total += nll;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    let nll = total * inv;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Ok((nll, grads))
}

/// Mean negative log-likelihood of data-space rows and its gradient with
/// respect to every conditioner parameter (layout of [`FlowModel::params_flat`]).
pub fn nll_and_grads(model: &FlowModel, batch: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    let latent: Vec<Vec<f64>> = batch
        .iter()
        .map(|r| model.to_flow_space(r))
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = latent.iter().map(Vec::as_slice).collect();
    let (nll, grads) = latent_nll_and_grads(model, &refs)?;
    Ok((nll - model.standardizer().log_det(), grads))
}

fn latent_mean_nll(model: &FlowModel, rows: &[Vec<f64>]) -> f64 {
    let parts: Vec<f64> = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|u| model.flow_space_log_prob(u).map_or(f64::NAN, |lp| -lp))
                .sum::<f64>()
        })
        .collect();
    parts.iter().sum::<f64>() / rows.len() as f64 - model.standardizer().log_det()
}

fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= f);
    }
}

/// Trains `model` on flow-space rows. Returns the best-validation checkpoint.
fn train_latent(
    mut model: FlowModel,
    train: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    config: &TrainConfig,
) -> (FlowModel, TrainLog) {
    let mut log = TrainLog::default();
    if model.n_params() == 0 {
        log.train_nll.push(latent_mean_nll(&model, &train));
        log.val_nll.push(latent_mean_nll(&model, &val));
        return (model, log);
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed());
    let mut adam = AdamState::new(model.n_params());
    let mut params = model.params_flat();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_nll = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| train[i].as_slice()).collect();
            let (nll, mut grads) = match latent_nll_and_grads(&model, &rows) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("epoch {epoch}: {e}; stopping");
                    log.divergence = Some(Divergence {
                        kind: DivergenceKind::NonFinite,
                        epoch,
                    });
                    break 'epochs;
                }
            };
            epoch_nll += nll * rows.len() as f64;
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut params, &grads, &mut adam, config).expect("shapes match");
            model.set_params_flat(&params).expect("shapes match");
        }
        let train_nll = epoch_nll / train.len() as f64 - model.standardizer().log_det();
        let val_nll = latent_mean_nll(&model, &val);
        log.train_nll.push(train_nll);
        log.val_nll.push(val_nll);
        log::debug!("epoch {epoch}: train {train_nll:.5} val {val_nll:.5}");

        if !val_nll.is_finite() || !train_nll.is_finite() {
            log.divergence = Some(Divergence {
                kind: DivergenceKind::NonFinite,
                epoch,
            });
            break;
        }
        if train_nll < config.runaway_nll && log.divergence.is_none() {
            log.divergence = Some(Divergence {
                kind: DivergenceKind::Runaway,
                epoch,
            });
        }
        if val_nll < best_val {
            best_val = val_nll;
            best_params.copy_from_slice(&params);
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= config.early_stop_patience {
            log.stopped_early = true;
            break;
        }
    }
    if log.val_nll.is_empty() {
        // Diverged in the very first epoch.
        log.train_nll.push(f64::NAN);
        log.val_nll.push(f64::NAN);
    }
    if log.divergence.is_none()
        && best_val.is_finite()
        && !log.is_stable(config.stability_window, config.stability_tolerance)
    {
        log.divergence = Some(Divergence {
            kind: DivergenceKind::ValidationBlowup,
            epoch: log.epochs() - 1,
        });
    }
    model.set_params_flat(&best_params).expect("shapes match");
    (model, log)
}

fn check_compatible(train: &ScenarioSet, val: &ScenarioSet) -> Result<()> {
    if train.period_length() != val.period_length() {
        return Err(Error::Argument(format!(
            "train rows have {} steps, validation rows {}",
            train.period_length(),
            val.period_length()
        )));
    }
    if train.n_rows() < 2 {
        return Err(Error::Argument("training needs at least 2 rows".into()));
    }
    Ok(())
}

/// Principal component flow: PCA fitted on the training rows, then a
/// coupling flow trained on the standardized latent coordinates.
pub fn fit_pcf(
    train: &ScenarioSet,
    val: &ScenarioSet,
    truncation: Truncation,
    arch: &FlowArch,
    config: &TrainConfig,
) -> Result<(FlowModel, TrainLog)> {
    config.validate()?;
    check_compatible(train, val)?;
    let map = pca::fit(train)?.truncate(truncation)?;
    let m = map.latent_dim();
    log::info!(
        "PCA keeps {m} of {} components (CEV {:.6})",
        map.dim(),
        map.cev()
    );
    let project = |set: &ScenarioSet| -> Vec<Vec<f64>> {
        set.rows().map(|r| map.project(r).expect("dimension checked")).collect()
    };
    let train_latent = project(train);
    let val_latent = project(val);
    let standardizer = Standardizer::fit(&train_latent.concat(), m)?;
    let model = build_model(Some(map), standardizer, arch, config)?;
    Ok(finish(model, train_latent, val_latent, config))
}

/// Full-space flow trained directly on the data coordinates.
pub fn fit_fsnf(
    train: &ScenarioSet,
    val: &ScenarioSet,
    arch: &FlowArch,
    config: &TrainConfig,
) -> Result<(FlowModel, TrainLog)> {
    config.validate()?;
    check_compatible(train, val)?;
    let d = train.period_length();
    let standardizer = Standardizer::fit(train.data(), d)?;
    let to_rows = |set: &ScenarioSet| set.rows().map(<[f64]>::to_vec).collect::<Vec<_>>();
    let model = build_model(None, standardizer, arch, config)?;
    Ok(finish(model, to_rows(train), to_rows(val), config))
}

fn build_model(
    pca: Option<crate::pca::PcaMap>,
    standardizer: Standardizer,
    arch: &FlowArch,
    config: &TrainConfig,
) -> Result<FlowModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed());
    FlowModel::new(pca, standardizer, arch, &mut rng)
}

fn finish(
    model: FlowModel,
    train: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    config: &TrainConfig,
) -> (FlowModel, TrainLog) {
    let standardized = |rows: Vec<Vec<f64>>| {
        rows.into_iter()
            .map(|mut r| {
                model.standardizer().apply(&mut r);
                r
            })
            .collect::<Vec<_>>()
    };
    let train = standardized(train);
    let val = standardized(val);
    train_latent(model, train, val, config)
}
