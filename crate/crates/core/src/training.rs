//! Losses, Adam, and the three-stage training schedule.

use std::fmt;

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cvae::{kl_closed_form, kl_to_standard_normal, CvaeForward};
use crate::dynamics::{net_acceleration, Diagnostics, ForceSwitches, GoalMemory, StepContext};
use crate::error::{NspError, Result};
use crate::model::ModelParams;
use crate::neural::{grad_check_subset, Graph, ParamCheck, ParamGrads, ParamGroup, ParamId, ParamStore, Var};
use crate::rollout::{rollout_on_graph, semi_implicit_step, Cohort, GraphRollout, RolloutResult};
use crate::types::{AgentState, NspConfig, SceneGrid, TrajectoryWindow, OBS_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GoalOnly,
    AddRepulsion,
    CvaeOnly,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::GoalOnly, Stage::AddRepulsion, Stage::CvaeOnly];

    pub fn number(self) -> u8 {
        match self {
            Stage::GoalOnly => 1,
            Stage::AddRepulsion => 2,
            Stage::CvaeOnly => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Stage::ALL.into_iter().find(|s| s.number() == n)
    }

    /// Parameter groups updated during this stage.
    pub fn trainable(self) -> &'static [ParamGroup] {
        match self {
            Stage::GoalOnly => &[ParamGroup::Goal],
            Stage::AddRepulsion => &[ParamGroup::Collision, ParamGroup::Env],
            Stage::CvaeOnly => &[ParamGroup::Cvae],
        }
    }

    pub fn switches(self) -> ForceSwitches {
        match self {
            Stage::GoalOnly => ForceSwitches::GOAL_ONLY,
            _ => ForceSwitches::ALL,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Mean squared position error over agents and predicted frames.
pub fn loss_traj(pred: &RolloutResult, truth: &[TrajectoryWindow]) -> Result<f64> {
    if pred.agents.len() != truth.len() {
        return Err(NspError::ShapeMismatch(format!("{} predictions for {} windows", pred.agents.len(), truth.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, w) in pred.agents.iter().zip(truth) {
        let future = w.future_positions();
        if a.positions.len() != future.len() {
            return Err(NspError::ShapeMismatch(format!("{} predicted frames, {} true", a.positions.len(), future.len())));
        }
        for (p, q) in a.positions.iter().zip(&future) {
            sum += (*p - *q).length_squared();
            count += 1;
        }
    }
    if count == 0 {
        return Err(NspError::ShapeMismatch("empty prediction".into()));
    }
    Ok(sum / count as f64)
}

/// Graph version of [`loss_traj`] over a differentiable rollout.
pub fn loss_traj_graph(g: &mut Graph, pred: &GraphRollout, truth: &[Vec<DVec2>]) -> Result<Var> {
    if pred.positions.len() != truth.len() {
        return Err(NspError::ShapeMismatch(format!("{} predictions for {} truths", pred.positions.len(), truth.len())));
    }
    let mut total = g.scalar(0.0);
    let mut count = 0usize;
    for (row, future) in pred.positions.iter().zip(truth) {
        if row.len() != future.len() {
            return Err(NspError::ShapeMismatch(format!("{} predicted frames, {} true", row.len(), future.len())));
        }
        for (p, q) in row.iter().zip(future) {
            let target = g.vec2(*q);
            let d = g.sub(*p, target);
            let sq = g.dot(d, d);
            total = g.add(total, sq);
            count += 1;
        }
    }
    if count == 0 {
        return Err(NspError::ShapeMismatch("empty prediction".into()));
    }
    Ok(g.scale(total, 1.0 / count as f64))
}

/// Mean squared reconstruction error plus `lambda_kl` times the mean KL.
/// Residuals are in the scaled units the CVAE works in.
pub fn loss_cvae(alpha_true: &[DVec2], alpha_hat: &[DVec2], mu: &[Vec<f64>], logvar: &[Vec<f64>], lambda_kl: f64) -> Result<f64> {
    let n = alpha_true.len();
    if alpha_hat.len() != n || mu.len() != n || logvar.len() != n || n == 0 {
        return Err(NspError::ShapeMismatch("cvae loss inputs disagree in length".into()));
    }
    let recon: f64 = alpha_true.iter().zip(alpha_hat).map(|(a, b)| (*a - *b).length_squared()).sum::<f64>() / n as f64;
    let mut kl = 0.0;
    for (m, lv) in mu.iter().zip(logvar) {
        if m.len() != lv.len() {
            return Err(NspError::ShapeMismatch("mu and logvar widths differ".into()));
        }
        kl += kl_closed_form(m, lv);
    }
    Ok(recon + lambda_kl * kl / n as f64)
}

/// Graph version of [`loss_cvae`]; `alpha_true` already scaled.
pub fn loss_cvae_graph(g: &mut Graph, alpha_true: &[DVec2], fwd: &[CvaeForward], lambda_kl: f64) -> Result<Var> {
    if alpha_true.len() != fwd.len() || fwd.is_empty() {
        return Err(NspError::ShapeMismatch("cvae loss inputs disagree in length".into()));
    }
    let mut recon = g.scalar(0.0);
    let mut kl = g.scalar(0.0);
    for (a, f) in alpha_true.iter().zip(fwd) {
        let target = g.vec2(*a);
        let d = g.sub(f.alpha_hat, target);
        let sq = g.dot(d, d);
        recon = g.add(recon, sq);
        let k = kl_to_standard_normal(g, f.mu, f.logvar);
        kl = g.add(kl, k);
    }
    let kl = g.scale(kl, lambda_kl);
    let total = g.add(recon, kl);
    Ok(g.scale(total, 1.0 / fwd.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self { m: ParamGrads::zeros(store), v: ParamGrads::zeros(store), step: 0 }
    }
}

/// One bias-corrected Adam step on `active`; tensors in `non_negative` are
/// clamped at zero afterwards.
pub fn adam_update(
    store: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    active: &[ParamId],
    hp: &AdamConfig,
    non_negative: &[ParamId],
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for &id in active {
        let g = grads.get(id);
        let m = state.m.get_mut(id);
        let v = state.v.get_mut(id);
        let w = &mut store.tensor_mut(id).data;
        for k in 0..g.len() {
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            w[k] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
        if non_negative.contains(&id) {
            w.iter_mut().for_each(|x| *x = x.max(0.0));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub goal: StageConfig,
    pub repulsion: StageConfig,
    pub cvae: StageConfig,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Cohorts (stages 1-2) or residual samples (stage 3) per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub k_env_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            goal: StageConfig { lr: 1e-4, epochs: 50 },
            repulsion: StageConfig { lr: 1e-4, epochs: 50 },
            cvae: StageConfig { lr: 1e-5, epochs: 50 },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            seed: 0,
            k_env_init: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn stage(&self, stage: Stage) -> StageConfig {
        match stage {
            Stage::GoalOnly => self.goal,
            Stage::AddRepulsion => self.repulsion,
            Stage::CvaeOnly => self.cvae,
        }
    }

    pub fn adam(&self, stage: Stage) -> AdamConfig {
        AdamConfig { lr: self.stage(stage).lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, s) in [("goal_lr", self.goal), ("repulsion_lr", self.repulsion), ("cvae_lr", self.cvae)] {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(NspError::Config { key: key.into(), reason: "must be positive".into() });
            }
        }
        if self.batch_size == 0 {
            return Err(NspError::Config { key: "batch_size".into(), reason: "must be at least 1".into() });
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NspError::Config { key: "beta".into(), reason: "must lie in [0, 1)".into() });
        }
        if !(self.k_env_init >= 0.0) {
            return Err(NspError::Config { key: "k_env_init".into(), reason: "must be non-negative".into() });
        }
        Ok(())
    }

    /// Applies a `key = value` override; unknown keys are reported.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |reason: &str| NspError::Config { key: key.into(), reason: reason.into() };
        let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        let int = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        match key {
            "goal_lr" => self.goal.lr = float()?,
            "goal_epochs" => self.goal.epochs = int()?,
            "repulsion_lr" => self.repulsion.lr = float()?,
            "repulsion_epochs" => self.repulsion.epochs = int()?,
            "cvae_lr" => self.cvae.lr = float()?,
            "cvae_epochs" => self.cvae.epochs = int()?,
            "beta1" => self.beta1 = float()?,
            "beta2" => self.beta2 = float()?,
            "adam_eps" => self.eps = float()?,
            "batch_size" => self.batch_size = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected a non-negative integer"))?,
            "k_env_init" => self.k_env_init = float()?,
            _ => return Err(bad("unknown key")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("goal_lr", self.goal.lr.to_string()),
            ("goal_epochs", self.goal.epochs.to_string()),
            ("repulsion_lr", self.repulsion.lr.to_string()),
            ("repulsion_epochs", self.repulsion.epochs.to_string()),
            ("cvae_lr", self.cvae.lr.to_string()),
            ("cvae_epochs", self.cvae.epochs.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("k_env_init", self.k_env_init.to_string()),
        ]
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub degenerate_forces: usize,
}

impl MetricRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{{\"stage\":{},\"epoch\":{},\"loss\":{:e},\"degenerate_forces\":{}}}",
            self.stage, self.epoch, self.loss, self.degenerate_forces
        )
    }
}

/// Loss and parameter gradients of one cohort's deterministic rollout.
pub fn cohort_gradients(
    cohort: &Cohort,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    switches: ForceSwitches,
) -> Result<(f64, ParamGrads, Diagnostics)> {
    let mut g = Graph::new();
    let roll = rollout_on_graph(&mut g, cohort, grid, model, cfg, switches)?;
    let loss = loss_traj_graph(&mut g, &roll, &cohort.futures())?;
    let grads = g.backward(loss)?;
    Ok((g.scalar_value(loss), grads.into_param_grads(&model.store), roll.diagnostics))
}

/// l_traj of one cohort without building gradients.
pub fn cohort_loss(cohort: &Cohort, grid: &SceneGrid, model: &ModelParams, cfg: &NspConfig, switches: ForceSwitches) -> Result<f64> {
    let mut g = Graph::new();
    let roll = rollout_on_graph(&mut g, cohort, grid, model, cfg, switches)?;
    let loss = loss_traj_graph(&mut g, &roll, &cohort.futures())?;
    Ok(g.scalar_value(loss))
}

/// Mean l_traj over cohorts.
pub fn dataset_loss(data: &[Cohort], grid: &SceneGrid, model: &ModelParams, cfg: &NspConfig, switches: ForceSwitches) -> Result<f64> {
    let losses: Vec<f64> = data.par_iter().map(|c| cohort_loss(c, grid, model, cfg, switches)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// A teacher-forced residual: ground truth minus the deterministic step
/// taken from the ground-truth state, with the history that precedes it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub alpha: DVec2,
    pub history: Vec<DVec2>,
}

/// Residuals for every agent and predicted step of a cohort.
pub fn residual_samples(cohort: &Cohort, grid: &SceneGrid, model: &ModelParams, cfg: &NspConfig) -> Result<Vec<ResidualSample>> {
    cohort.validate()?;
    let mut out = Vec::new();
    let n = cohort.windows.len();
    let Some(first) = cohort.windows.first() else { return Ok(out) };
    let (m, horizon) = (first.last_observed(), first.horizon());
    let mut memories: Vec<GoalMemory> = Vec::with_capacity(n);
    for w in &cohort.windows {
        let mut mem = GoalMemory::new(model);
        for s in &w.frames[..m] {
            mem.observe(model, *s)?;
        }
        memories.push(mem);
    }
    for t in m..horizon {
        let ctx = StepContext { model, cfg, grid, switches: ForceSwitches::ALL, t, horizon };
        for i in 0..n {
            let w = &cohort.windows[i];
            let others: Vec<AgentState> = cohort
                .windows
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o.frames[t])
                .chain(cohort.obstacles.iter().filter_map(|o| o.states.get(t).copied().flatten()))
                .collect();
            let mut diag = Diagnostics::default();
            let f = net_acceleration(&ctx, w.frames[t], w.goal, &others, &mut memories[i], &mut diag)?;
            let p_bar = semi_implicit_step(w.frames[t], f.total, DVec2::ZERO, cfg.dt)?.p;
            let history = w.frames[t + 1 - OBS_LEN..=t].iter().map(|s| s.p).collect();
            out.push(ResidualSample { alpha: w.frames[t + 1].p - p_bar, history });
        }
    }
    Ok(out)
}

/// Mean τ the goal network assigns along the ground-truth prediction frames.
pub fn mean_tau(data: &[Cohort], model: &ModelParams, cfg: &NspConfig) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in data {
        for w in &c.windows {
            let mut g = Graph::new();
            let net = &model.nets.goal;
            let mut carry = Some(net.reset(&mut g));
            for s in &w.frames[..w.last_observed()] {
                let b = crate::dynamics::Body::constant(&mut g, *s);
                net.observe(&mut g, &model.store, &mut carry, b.vars, &model.nets.dims)?;
            }
            for s in &w.frames[w.last_observed()..w.horizon()] {
                let b = crate::dynamics::Body::constant(&mut g, *s);
                let goal = g.vec2(w.goal);
                let tau = net.tau(&mut g, &model.store, &mut carry, b.vars, goal, cfg, &model.nets.dims)?;
                sum += g.scalar_value(tau);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(NspError::ShapeMismatch("no windows".into()));
    }
    Ok(sum / count as f64)
}

/// Called with each finished stage and the parameters at that point.
pub type StageHook<'a> = dyn FnMut(Stage, &ModelParams) -> Result<()> + 'a;

/// Runs `stages` in order. Stage 1 fits the goal network with repulsion
/// off; stage 2 freezes it and fits the collision network and k_env; stage 3
/// freezes all forces and fits the CVAE on teacher-forced residuals.
pub fn progressive_train(
    data: &[Cohort],
    grid: &SceneGrid,
    model: &mut ModelParams,
    cfg: &NspConfig,
    train: &TrainConfig,
    stages: &[Stage],
    on_stage_end: &mut StageHook<'_>,
) -> Result<Vec<MetricRecord>> {
    train.validate()?;
    cfg.validate()?;
    for c in data {
        c.validate()?;
    }
    let mut log = Vec::new();
    for &stage in stages {
        let records = match stage {
            Stage::CvaeOnly => train_cvae(data, grid, model, cfg, train)?,
            _ => train_forces(data, grid, model, cfg, train, stage)?,
        };
        for r in &records {
            log::info!("{}", r.to_line());
        }
        log.extend(records);
        on_stage_end(stage, model)?;
    }
    Ok(log)
}

fn train_forces(
    data: &[Cohort],
    grid: &SceneGrid,
    model: &mut ModelParams,
    cfg: &NspConfig,
    train: &TrainConfig,
    stage: Stage,
) -> Result<Vec<MetricRecord>> {
    let active = model.group_params(stage.trainable());
    let hp = train.adam(stage);
    let k_env = [model.nets.k_env];
    let mut adam = AdamState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ u64::from(stage.number()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..train.stage(stage).epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut degenerate) = (0.0, 0usize);
        for batch in order.chunks(train.batch_size) {
            let snapshot = &*model;
            let parts: Vec<(f64, ParamGrads, Diagnostics)> = batch
                .par_iter()
                .map(|&i| cohort_gradients(&data[i], grid, snapshot, cfg, stage.switches()))
                .collect::<Result<_>>()?;
            let mut total = ParamGrads::zeros(&model.store);
            for (loss, grads, diag) in &parts {
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(NspError::NonFiniteLoss { stage: stage.to_string(), epoch });
                }
                sum += loss;
                degenerate += diag.degenerate_forces;
                total.merge(grads);
            }
            total.scale(1.0 / parts.len() as f64);
            adam_update(&mut model.store, &total, &mut adam, &active, &hp, &k_env);
        }
        let loss = sum / data.len().max(1) as f64;
        if !loss.is_finite() {
            return Err(NspError::NonFiniteLoss { stage: stage.to_string(), epoch });
        }
        log.push(MetricRecord { stage, epoch, loss, degenerate_forces: degenerate });
    }
    Ok(log)
}

fn train_cvae(data: &[Cohort], grid: &SceneGrid, model: &mut ModelParams, cfg: &NspConfig, train: &TrainConfig) -> Result<Vec<MetricRecord>> {
    let per_cohort: Vec<Vec<ResidualSample>> =
        data.par_iter().map(|c| residual_samples(c, grid, model, cfg)).collect::<Result<_>>()?;
    let samples: Vec<ResidualSample> = per_cohort.into_iter().flatten().collect();
    fit_cvae(&samples, model, cfg, train)
}

/// Stage-3 optimizer loop over precomputed residual samples.
pub fn fit_cvae(samples: &[ResidualSample], model: &mut ModelParams, cfg: &NspConfig, train: &TrainConfig) -> Result<Vec<MetricRecord>> {
    let stage = Stage::CvaeOnly;
    let active = model.group_params(stage.trainable());
    let hp = train.adam(stage);
    let mut adam = AdamState::new(&model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 3);
    let latent = model.nets.cvae.latent_dim;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..train.cvae.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(train.batch_size) {
            let noise: Vec<Vec<f64>> =
                batch.iter().map(|_| (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let (loss, grads) = cvae_batch_gradients(batch.iter().map(|&i| &samples[i]), &noise, model, cfg)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(NspError::NonFiniteLoss { stage: stage.to_string(), epoch });
            }
            sum += loss * batch.len() as f64;
            adam_update(&mut model.store, &grads, &mut adam, &active, &hp, &[]);
        }
        log.push(MetricRecord { stage, epoch, loss: sum / samples.len().max(1) as f64, degenerate_forces: 0 });
    }
    Ok(log)
}

/// l_cvae and its gradients for a batch with the given reparameterization
/// noise (one row per sample).
pub fn cvae_batch_gradients<'s>(
    batch: impl Iterator<Item = &'s ResidualSample>,
    noise: &[Vec<f64>],
    model: &ModelParams,
    cfg: &NspConfig,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new();
    let mut targets = Vec::new();
    let mut fwd = Vec::new();
    for (s, eps) in batch.zip(noise) {
        fwd.push(model.nets.cvae.train_forward(&mut g, &model.store, s.alpha, &s.history, cfg, eps)?);
        targets.push(s.alpha * cfg.cvae_scale);
    }
    let loss = loss_cvae_graph(&mut g, &targets, &fwd, cfg.lambda_kl)?;
    let grads = g.backward(loss)?;
    Ok((g.scalar_value(loss), grads.into_param_grads(&model.store)))
}

/// l_cvae over all samples with fixed seeded noise, for monitoring.
pub fn cvae_dataset_loss(samples: &[ResidualSample], model: &ModelParams, cfg: &NspConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = model.nets.cvae.latent_dim;
    let noise: Vec<Vec<f64>> = samples.iter().map(|_| (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    Ok(cvae_batch_gradients(samples.iter(), &noise, model, cfg)?.0)
}

/// Backprop against central differences for l_traj through a whole
/// rollout, over the force parameters (goal, collision, k_env).
pub fn trajectory_grad_check(
    cohort: &Cohort,
    grid: &SceneGrid,
    model: &ModelParams,
    cfg: &NspConfig,
    eps: f64,
    per_tensor: usize,
) -> Result<Vec<ParamCheck>> {
    let ids = model.group_params(&[ParamGroup::Goal, ParamGroup::Collision, ParamGroup::Env]);
    let truth = cohort.futures();
    grad_check_subset(&model.store, &ids, eps, per_tensor, |g, store| {
        let m = ModelParams { nets: model.nets.clone(), store: store.clone() };
        let roll = rollout_on_graph(g, cohort, grid, &m, cfg, ForceSwitches::ALL)?;
        loss_traj_graph(g, &roll, &truth)
    })
}

/// The same check for l_cvae over the CVAE parameters, with fixed noise.
pub fn cvae_grad_check(
    samples: &[ResidualSample],
    model: &ModelParams,
    cfg: &NspConfig,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<Vec<ParamCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = model.nets.cvae.latent_dim;
    let noise: Vec<Vec<f64>> = samples.iter().map(|_| (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let ids = model.group_params(&[ParamGroup::Cvae]);
    grad_check_subset(&model.store, &ids, eps, per_tensor, |g, store| {
        let mut fwd = Vec::with_capacity(samples.len());
        for (s, z) in samples.iter().zip(&noise) {
            fwd.push(model.nets.cvae.train_forward(g, store, s.alpha, &s.history, cfg, z)?);
        }
        let targets: Vec<DVec2> = samples.iter().map(|s| s.alpha * cfg.cvae_scale).collect();
        loss_cvae_graph(g, &targets, &fwd, cfg.lambda_kl)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;
    use crate::rollout::AgentPrediction;

    fn prediction(rows: Vec<Vec<DVec2>>) -> RolloutResult {
        RolloutResult {
            agents: rows
                .into_iter()
                .map(|positions| AgentPrediction {
                    agent_id: String::new(),
                    frame_ids: Vec::new(),
                    forces: Vec::new(),
                    observed_consumed: 8,
                    positions,
                })
                .collect(),
            diagnostics: Diagnostics::default(),
        }
    }

    fn windows(n: usize) -> Vec<TrajectoryWindow> {
        (0..n)
            .map(|k| {
                let pos: Vec<DVec2> = (0..20).map(|i| DVec2::new(i as f64 * 3.0, k as f64 * 5.0 - i as f64)).collect();
                TrajectoryWindow::from_positions(format!("{k}"), (0..20).collect(), &pos, 0.4)
            })
            .collect()
    }

    #[test]
    fn loss_traj_examples() {
        let ws = windows(2);
        let exact = prediction(ws.iter().map(|w| w.future_positions()).collect());
        assert_eq!(loss_traj(&exact, &ws).unwrap(), 0.0);
        let shifted = prediction(ws.iter().map(|w| w.future_positions().iter().map(|p| *p + DVec2::X).collect()).collect());
        assert_eq!(loss_traj(&shifted, &ws).unwrap(), 1.0);
    }

    #[test]
    fn loss_traj_small_case_hand_sum() {
        let truth = [[DVec2::new(0.0, 0.0), DVec2::new(1.0, 1.0), DVec2::new(2.0, 0.0)], [DVec2::new(5.0, 5.0), DVec2::new(6.0, 5.0), DVec2::new(7.0, 4.0)]];
        let pred = [[DVec2::new(0.5, 0.0), DVec2::new(1.0, 3.0), DVec2::new(2.0, -1.0)], [DVec2::new(5.0, 5.0), DVec2::new(3.0, 1.0), DVec2::new(7.5, 4.5)]];
        // 0.25 + 4 + 1 + 0 + 25 + 0.5 over 6
        let expected = 30.75 / 6.0;
        let mut g = Graph::new();
        let roll = GraphRollout {
            positions: pred.iter().map(|row| row.iter().map(|p| g.vec2(*p)).collect()).collect(),
            diagnostics: Diagnostics::default(),
        };
        let loss = loss_traj_graph(&mut g, &roll, &truth.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        assert!((g.scalar_value(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_traj_shape_mismatch() {
        let ws = windows(2);
        let one = prediction(vec![ws[0].future_positions()]);
        assert!(matches!(loss_traj(&one, &ws), Err(NspError::ShapeMismatch(_))));
    }

    #[test]
    fn loss_cvae_examples() {
        let a = [DVec2::new(0.3, -0.2)];
        assert_eq!(loss_cvae(&a, &a, &[vec![0.0]], &[vec![0.0]], 1.0).unwrap(), 0.0);
        let b = [DVec2::new(0.3, 0.8)];
        let pure = loss_cvae(&a, &b, &[vec![1.0]], &[vec![0.0]], 0.0).unwrap();
        assert!((pure - 1.0).abs() < 1e-12);
        let with_kl = loss_cvae(&a, &b, &[vec![1.0]], &[vec![0.0]], 1.0).unwrap();
        assert!((with_kl - 1.5).abs() < 1e-12);
    }

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::new(1, 1, vec![x]), ParamGroup::Goal);
        (s, id)
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let (mut store, id) = scalar_store(1.5);
        let mut state = AdamState::new(&store);
        let mut g = ParamGrads::zeros(&store);
        g.add(id, &[2.0]);
        adam_update(&mut store, &g, &mut state, &[id], &AdamConfig::default(), &[]);
        let (m1, v1, w1) = (state.m.get(id)[0], state.v.get(id)[0], store.tensor(id).data[0]);
        let zero = ParamGrads::zeros(&store);
        adam_update(&mut store, &zero, &mut state, &[id], &AdamConfig::default(), &[]);
        assert!(state.m.get(id)[0] < m1 && state.v.get(id)[0] < v1);
        // momentum still moves the weight; the raw zero gradient does not
        let (mut fresh, fid) = scalar_store(1.5);
        let mut fs = AdamState::new(&fresh);
        let zero = ParamGrads::zeros(&fresh);
        adam_update(&mut fresh, &zero, &mut fs, &[fid], &AdamConfig::default(), &[]);
        assert_eq!(fresh.tensor(fid).data[0], 1.5);
        assert_eq!(fs.m.get(fid)[0], 0.0);
        assert!(w1 < 1.5);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        for g0 in [3.0, -0.02, 1e-3] {
            let (mut store, id) = scalar_store(0.0);
            let mut state = AdamState::new(&store);
            let mut g = ParamGrads::zeros(&store);
            g.add(id, &[g0]);
            let hp = AdamConfig { lr: 0.01, ..Default::default() };
            adam_update(&mut store, &g, &mut state, &[id], &hp, &[]);
            let expected = -hp.lr * g0.signum() * g0.abs() / (g0.abs() + hp.eps);
            assert!((store.tensor(id).data[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_clamps_and_respects_frozen() {
        let mut store = ParamStore::new();
        let k = store.insert("k", Tensor::new(1, 1, vec![0.001]), ParamGroup::Env);
        let f = store.insert("f", Tensor::new(1, 1, vec![7.0]), ParamGroup::Goal);
        let mut state = AdamState::new(&store);
        let mut g = ParamGrads::zeros(&store);
        g.add(k, &[5.0]);
        g.add(f, &[5.0]);
        adam_update(&mut store, &g, &mut state, &[k], &AdamConfig { lr: 0.1, ..Default::default() }, &[k]);
        assert_eq!(store.tensor(k).data[0], 0.0);
        assert_eq!(store.tensor(f).data[0], 7.0);
    }

    #[test]
    fn train_config_overrides() {
        let mut t = TrainConfig::default();
        t.set("goal_lr", "0.003").unwrap();
        t.set("batch_size", "4").unwrap();
        assert_eq!(t.goal.lr, 0.003);
        assert_eq!(t.batch_size, 4);
        assert!(t.set("nope", "1").is_err());
        t.goal.lr = 0.0;
        assert!(t.validate().is_err());
    }

    #[test]
    fn stages_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_number(s.number()), Some(s));
        }
        assert_eq!(Stage::from_number(4), None);
    }
}
