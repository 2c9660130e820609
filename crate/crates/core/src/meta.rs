//! Meta-training of the best-response model (first-order inner/outer
//! updates), fast adaptation, and the two comparison trainers that average
//! over the output space and the parameter space.

use crate::dynamics::DynamicsConfig;
use crate::env::Workspace;
use crate::error::CoreError;
use crate::follower::{FollowerFamily, FollowerType};
use crate::net::{BrSample, MlpParams};
use crate::parallel::map_ordered;
use crate::rng::{self, tags};
use crate::sampler::{sample_dataset, SamplePlan};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Budgets for the two averaging baselines, scaled so a desk run finishes
/// in minutes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    /// Output-Ave pools this many samples across types; Param-Ave draws
    /// this many per type.
    pub pool_size: usize,
    pub learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            iters_per_epoch: 150,
            batch_size: 100,
            pool_size: 15_000,
            learning_rate: 1e-2,
        }
    }
}

/// Hyperparameters of the meta-training and adaptation loops.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Inner gradient step size.
    pub alpha: f64,
    /// Outer (meta) step size.
    pub beta: f64,
    pub max_iter: usize,
    pub batch_tasks: usize,
    /// Samples per task dataset (train and test each draw this many).
    pub k_total: usize,
    /// Flat-to-banded sampling ratio `K1 / K2`.
    pub kappa: f64,
    /// Adaptation steps C.
    pub adapt_steps: usize,
    /// Adaptation dataset size K'.
    pub adapt_samples: usize,
    /// The outer step ramps linearly over this many initial iterations.
    pub warmup_iters: usize,
    pub sample_leader_radius: f64,
    /// Held-out set size used by the adaptation comparison.
    pub eval_samples: usize,
    pub baseline: BaselineConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta: 1e-3,
            max_iter: 20_000,
            batch_tasks: 5,
            k_total: 100,
            kappa: 2.0,
            adapt_steps: 50,
            adapt_samples: 1000,
            warmup_iters: 1000,
            sample_leader_radius: 3.0,
            eval_samples: 1000,
            baseline: BaselineConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(CoreError::InvalidConfig("alpha and beta must be > 0".into()));
        }
        if self.batch_tasks == 0 {
            return Err(CoreError::InvalidConfig("batch_tasks must be >= 1".into()));
        }
        if self.kappa < 0.0 {
            return Err(CoreError::InvalidConfig("kappa must be >= 0".into()));
        }
        Ok(())
    }
}

/// One inner gradient step: `w - alpha * grad L(w; train)`.
pub fn inner_update(
    w: &MlpParams,
    train: &[BrSample],
    alpha: f64,
    u_max: f64,
) -> Result<MlpParams, CoreError> {
    Ok(w.sgd_step(&w.loss_grad(train, u_max)?, alpha))
}

/// One first-order outer update over a batch of `(train, test)` task
/// datasets. For each task the gradient is evaluated at the adapted point
/// `w'`; the inner update map itself is never differentiated. Returns the
/// updated parameters and the mean test loss at the adapted points.
pub fn meta_step(
    w: &MlpParams,
    batch: &[(Vec<BrSample>, Vec<BrSample>)],
    alpha: f64,
    beta: f64,
    u_max: f64,
) -> Result<(MlpParams, f64), CoreError> {
    if batch.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let per_task = map_ordered(batch, |(train, test)| -> Result<(f64, MlpParams), CoreError> {
        let adapted = inner_update(w, train, alpha, u_max)?;
        adapted.loss_and_grad(test, u_max)
    });
    let mut grad_sum = MlpParams::zeros();
    let mut loss_sum = 0.0;
    for r in per_task {
        let (loss, grad) = r?;
        loss_sum += loss;
        grad_sum.add_scaled(&grad, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    grad_sum.scale(inv);
    Ok((w.sgd_step(&grad_sum, beta), loss_sum * inv))
}

/// Runs the full meta-training loop: per iteration, sample a batch of
/// tasks from the type distribution, draw fresh train/test datasets for
/// each, and apply one outer update. Returns the meta parameters and the
/// per-iteration mean outer loss trace.
pub fn train_meta(
    cfg: &MetaConfig,
    family: &FollowerFamily,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    seed: u64,
    mut on_iter: impl FnMut(usize, f64),
) -> Result<(MlpParams, Vec<(usize, f64)>), CoreError> {
    cfg.validate()?;
    family.validate()?;
    let mut w = MlpParams::init(&mut rng::stream(seed, &[tags::INIT]));
    let mut trace = Vec::with_capacity(cfg.max_iter);
    for k in 0..cfg.max_iter {
        let mut task_rng = rng::stream(seed, &[tags::META_ITER, k as u64]);
        let slot_types: Vec<FollowerType> =
            (0..cfg.batch_tasks).map(|_| family.sample_type(&mut task_rng).clone()).collect();
        let slots: Vec<(u64, FollowerType)> =
            slot_types.into_iter().enumerate().map(|(j, t)| (j as u64, t)).collect();
        let sampled = map_ordered(&slots, |(j, t)| {
            let plan = SamplePlan::for_type(cfg.k_total, cfg.kappa, t, cfg.sample_leader_radius);
            let mut train_rng = rng::stream(seed, &[tags::META_ITER, k as u64, *j, tags::TRAIN_SET]);
            let train = sample_dataset(t, &plan, ws, dyn_cfg, &mut train_rng)?;
            let mut test_rng = rng::stream(seed, &[tags::META_ITER, k as u64, *j, tags::TEST_SET]);
            let test = sample_dataset(t, &plan, ws, dyn_cfg, &mut test_rng)?;
            Ok::<_, CoreError>((train, test))
        });
        let batch: Vec<(Vec<BrSample>, Vec<BrSample>)> =
            sampled.into_iter().collect::<Result<_, _>>()?;
        let beta_k = cfg.beta * (((k + 1) as f64 / cfg.warmup_iters.max(1) as f64).min(1.0));
        let (next, outer_loss) = meta_step(&w, &batch, cfg.alpha, beta_k, dyn_cfg.u_max)?;
        w = next;
        trace.push((k, outer_loss));
        on_iter(k, outer_loss);
    }
    Ok((w, trace))
}

/// Adapted parameters plus the loss curve recorded along the way
/// (`adapt_steps + 1` entries: initial loss, then after each step).
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub params: MlpParams,
    pub loss_curve: Vec<f64>,
}

/// Runs `steps` full-batch gradient steps on `data`, recording the loss
/// before each step and after the last.
pub fn adapt_on(
    w0: &MlpParams,
    data: &[BrSample],
    alpha: f64,
    steps: usize,
    u_max: f64,
) -> Result<AdaptOutcome, CoreError> {
    let mut w = w0.clone();
    let mut curve = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grad) = w.loss_and_grad(data, u_max)?;
        curve.push(loss);
        w = w.sgd_step(&grad, alpha);
    }
    curve.push(w.task_loss(data, u_max)?);
    Ok(AdaptOutcome { params: w, loss_curve: curve })
}

/// Fast adaptation to one follower: draws a fresh dataset of
/// `adapt_samples` with the usual importance sampling and applies
/// `adapt_steps` full-batch steps from the meta initialization.
pub fn adapt(
    w_meta: &MlpParams,
    ftype: &FollowerType,
    cfg: &MetaConfig,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    seed: u64,
) -> Result<AdaptOutcome, CoreError> {
    let plan = SamplePlan::for_type(cfg.adapt_samples, cfg.kappa, ftype, cfg.sample_leader_radius);
    let mut r = rng::stream(seed, &[tags::ADAPT, ftype.id as u64]);
    let data = sample_dataset(ftype, &plan, ws, dyn_cfg, &mut r)?;
    adapt_on(w_meta, &data, cfg.alpha, cfg.adapt_steps, dyn_cfg.u_max)
}

/// Splits `total` into per-type counts proportional to the distribution
/// (largest-remainder rounding, deterministic).
fn proportional_counts(total: usize, probs: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Plain minibatch SGD with a per-epoch reshuffle. Returns the trained
/// parameters and a per-epoch mean batch-loss trace.
fn train_supervised(
    mut w: MlpParams,
    data: &[BrSample],
    bl: &BaselineConfig,
    u_max: f64,
    shuffle_rng: &mut impl Rng,
) -> Result<(MlpParams, Vec<(usize, f64)>), CoreError> {
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(bl.epochs);
    let mut batch = Vec::with_capacity(bl.batch_size);
    for epoch in 0..bl.epochs {
        order.shuffle(shuffle_rng);
        let mut cursor = 0usize;
        let mut epoch_loss = 0.0;
        for _ in 0..bl.iters_per_epoch {
            batch.clear();
            for _ in 0..bl.batch_size.min(data.len()) {
                batch.push(data[order[cursor]]);
                cursor = (cursor + 1) % order.len();
            }
            let (loss, grad) = w.loss_and_grad(&batch, u_max)?;
            epoch_loss += loss;
            w = w.sgd_step(&grad, bl.learning_rate);
        }
        trace.push((epoch, epoch_loss / bl.iters_per_epoch as f64));
    }
    Ok((w, trace))
}

/// Output-space averaging baseline: one model trained on the shuffled pool
/// of per-type datasets sized proportionally to the type distribution.
pub fn train_output_ave(
    cfg: &MetaConfig,
    family: &FollowerFamily,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    seed: u64,
) -> Result<(MlpParams, Vec<(usize, f64)>), CoreError> {
    family.validate()?;
    let counts = proportional_counts(cfg.baseline.pool_size, &family.dist.0);
    let jobs: Vec<(usize, FollowerType)> =
        family.types.iter().cloned().enumerate().collect();
    let pools = map_ordered(&jobs, |(i, t)| {
        if counts[*i] == 0 {
            return Ok(Vec::new());
        }
        let plan = SamplePlan::for_type(counts[*i], cfg.kappa, t, cfg.sample_leader_radius);
        let mut r = rng::stream(seed, &[tags::BASELINE_OUTPUT, t.id as u64]);
        sample_dataset(t, &plan, ws, dyn_cfg, &mut r)
    });
    let mut pool = Vec::with_capacity(cfg.baseline.pool_size);
    for p in pools {
        pool.extend(p?);
    }
    let w0 = MlpParams::init(&mut rng::stream(seed, &[tags::INIT, tags::BASELINE_OUTPUT]));
    let mut shuffle_rng = rng::stream(seed, &[tags::BASELINE_OUTPUT, 0]);
    train_supervised(w0, &pool, &cfg.baseline, dyn_cfg.u_max, &mut shuffle_rng)
}

/// Parameter-space averaging baseline: independent per-type models are
/// trained and their parameters averaged with the type probabilities.
pub struct ParamAveOutcome {
    pub average: MlpParams,
    /// Per-type component models in family order.
    pub components: Vec<(u8, MlpParams)>,
    pub traces: Vec<(u8, Vec<(usize, f64)>)>,
}

pub fn train_param_ave(
    cfg: &MetaConfig,
    family: &FollowerFamily,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    seed: u64,
) -> Result<ParamAveOutcome, CoreError> {
    family.validate()?;
    let jobs: Vec<FollowerType> = family.types.clone();
    let trained = map_ordered(&jobs, |t| -> Result<(MlpParams, Vec<(usize, f64)>), CoreError> {
        let plan =
            SamplePlan::for_type(cfg.baseline.pool_size, cfg.kappa, t, cfg.sample_leader_radius);
        let mut r = rng::stream(seed, &[tags::BASELINE_PARAM, t.id as u64]);
        let data = sample_dataset(t, &plan, ws, dyn_cfg, &mut r)?;
        let w0 = MlpParams::init(&mut rng::stream(seed, &[tags::INIT, tags::BASELINE_PARAM, t.id as u64]));
        let mut shuffle_rng = rng::stream(seed, &[tags::BASELINE_PARAM, t.id as u64, 0]);
        train_supervised(w0, &data, &cfg.baseline, dyn_cfg.u_max, &mut shuffle_rng)
    });
    let mut components = Vec::with_capacity(jobs.len());
    let mut traces = Vec::with_capacity(jobs.len());
    let mut average = MlpParams::zeros();
    for (t, r) in jobs.iter().zip(trained) {
        let (w, trace) = r?;
        average.add_scaled(&w, family.dist.0[family.types.iter().position(|x| x.id == t.id).unwrap()]);
        components.push((t.id, w));
        traces.push((t.id, trace));
    }
    Ok(ParamAveOutcome { average, components, traces })
}

/// Per-type adaptation comparison across the three trained models on a
/// common seeded dataset, with a final MSE on a held-out evaluation set.
#[derive(Debug, Clone)]
pub struct TypeAdaptReport {
    pub type_id: u8,
    /// Loss curves on the common adaptation set: meta, output-ave,
    /// param-ave. Each has `adapt_steps + 1` entries.
    pub curves: [Vec<f64>; 3],
    /// Held-out MSE after the full adaptation, same order.
    pub final_holdout: [f64; 3],
}

pub fn adaptation_report(
    models: [&MlpParams; 3],
    cfg: &MetaConfig,
    family: &FollowerFamily,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    seed: u64,
) -> Result<Vec<TypeAdaptReport>, CoreError> {
    let mut out = Vec::with_capacity(family.types.len());
    for t in &family.types {
        let plan = SamplePlan::for_type(cfg.adapt_samples, cfg.kappa, t, cfg.sample_leader_radius);
        let mut adapt_rng = rng::stream(seed, &[tags::EVAL, t.id as u64, 0]);
        let adapt_set = sample_dataset(t, &plan, ws, dyn_cfg, &mut adapt_rng)?;
        let eval_plan =
            SamplePlan::for_type(cfg.eval_samples, cfg.kappa, t, cfg.sample_leader_radius);
        let mut eval_rng = rng::stream(seed, &[tags::EVAL, t.id as u64, 1]);
        let eval_set = sample_dataset(t, &eval_plan, ws, dyn_cfg, &mut eval_rng)?;

        let runs = map_ordered(&models.to_vec(), |w| {
            let outcome = adapt_on(w, &adapt_set, cfg.alpha, cfg.adapt_steps, dyn_cfg.u_max)?;
            let holdout = outcome.params.task_loss(&eval_set, dyn_cfg.u_max)?;
            Ok::<_, CoreError>((outcome.loss_curve, holdout))
        });
        let mut curves: Vec<Vec<f64>> = Vec::with_capacity(3);
        let mut finals = [0.0; 3];
        for (i, r) in runs.into_iter().enumerate() {
            let (curve, holdout) = r?;
            curves.push(curve);
            finals[i] = holdout;
        }
        out.push(TypeAdaptReport {
            type_id: t.id,
            curves: [curves[0].clone(), curves[1].clone(), curves[2].clone()],
            final_holdout: finals,
        });
    }
    Ok(out)
}
