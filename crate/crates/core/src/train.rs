//! Adam optimizer, the training loop and dataset evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::checkpoint;
use crate::data::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{binarize, confusion, Aggregation, ConfusionCounts, MetricReport};
use crate::model::SlpNet;
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DecayMode {
    /// `g ← g + wd·θ` before the moment updates.
    #[default]
    Coupled,
    /// `θ ← θ − lr·wd·θ` applied separately from the Adam step.
    Decoupled,
}

impl DecayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecayMode::Coupled => "coupled",
            DecayMode::Decoupled => "decoupled",
        }
    }
}

impl FromStr for DecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(DecayMode::Coupled),
            "decoupled" => Ok(DecayMode::Decoupled),
            _ => Err(Error::InvalidConfig(format!(
                "decay mode must be coupled or decoupled, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decay_mode: DecayMode::Coupled,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> OptimState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect()
        };
        OptimState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over every entry. Entries with
    /// `decay = false` skip weight decay.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some(e) = params.entries().iter().find(|e| e.grad.is_none()) {
            return Err(Error::MissingGradient(e.name.clone()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let f = T::from_f64_lossy;
        let (b1, b2) = (f(c.beta1), f(c.beta2));
        let (one_b1, one_b2) = (f(1.0 - c.beta1), f(1.0 - c.beta2));
        let corr1 = f(1.0 - c.beta1.powi(t));
        let corr2 = f(1.0 - c.beta2.powi(t));
        let (lr, eps, wd) = (f(c.lr), f(c.eps), f(c.weight_decay));
        for (i, e) in params.entries_mut().iter_mut().enumerate() {
            let grad = e.grad.as_ref().expect("checked above");
            let decay = e.decay && c.weight_decay != 0.0;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, theta) in e.value.data_mut().iter_mut().enumerate() {
                let mut g = grad.data()[j];
                if decay && c.decay_mode == DecayMode::Coupled {
                    g += wd * *theta;
                }
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let mhat = m[j] / corr1;
                let vhat = v[j] / corr2;
                if decay && c.decay_mode == DecayMode::Decoupled {
                    *theta -= lr * wd * *theta;
                }
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    Bce,
    /// BCE plus soft Dice.
    BceDice,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::BceDice => "bce+dice",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "bce+dice" | "bce-dice" => Ok(LossKind::BceDice),
            _ => Err(Error::InvalidConfig(format!("loss must be bce or bce+dice, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossKind,
    pub augment: bool,
    /// Save a checkpoint every this many epochs (0 disables periodic saves).
    pub checkpoint_every: usize,
    /// Where checkpoints go; `None` keeps training in memory only.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 20,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossKind::Bce,
            augment: true,
            checkpoint_every: 10,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    pub checkpoints: Vec<PathBuf>,
    pub eval: Option<MetricReport>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }

    /// Key-value summary. Wall time is left out so identical runs produce
    /// identical files.
    pub fn to_kv(&self, cfg: &TrainConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs={}", self.epochs.len());
        let _ = writeln!(s, "batch_size={}", cfg.batch_size);
        let _ = writeln!(s, "lr={}", cfg.adam.lr);
        let _ = writeln!(s, "weight_decay={}", cfg.adam.weight_decay);
        let _ = writeln!(s, "decay_mode={}", cfg.adam.decay_mode.as_str());
        let _ = writeln!(s, "loss={}", cfg.loss.as_str());
        let _ = writeln!(s, "augment={}", cfg.augment);
        let _ = writeln!(s, "seed={}", cfg.seed);
        let _ = writeln!(s, "checkpoint_every={}", cfg.checkpoint_every);
        let _ = writeln!(s, "nonfinite_loss=abort");
        let _ = writeln!(s, "steps={}", self.steps);
        for e in &self.epochs {
            let _ = writeln!(s, "loss_epoch_{:03}={:.6}", e.epoch, e.mean_loss);
        }
        for c in &self.checkpoints {
            let name = c.file_name().map_or(c.as_os_str(), |n| n);
            let _ = writeln!(s, "checkpoint={}", name.to_string_lossy());
        }
        if let Some(r) = &self.eval {
            for line in r.to_kv().lines() {
                let _ = writeln!(s, "eval_{line}");
            }
        }
        s
    }
}

fn batch_loss<T: Element>(
    tape: &mut Tape<T>,
    pred: crate::tape::Var,
    masks: &Tensor<T>,
    kind: LossKind,
) -> Result<crate::tape::Var> {
    let bce = tape.bce_loss(pred, masks)?;
    match kind {
        LossKind::Bce => Ok(bce),
        LossKind::BceDice => {
            let dice = tape.dice_loss(pred, masks)?;
            tape.add(bce, dice)
        }
    }
}

/// Runs one optimisation step on a batch and returns the loss.
pub fn train_step<T: Element>(
    model: &mut SlpNet<T>,
    opt: &mut OptimState<T>,
    images: &Tensor<T>,
    masks: &Tensor<T>,
    loss: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let x = tape.constant(images.clone());
    let pred = model.forward(&mut tape, &p, x)?;
    let l = batch_loss(&mut tape, pred, masks, loss)?;
    let value = tape.value(l).item().to_f64_lossy();
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(l)?;
    model.params_mut().collect_grads(&tape, &p);
    opt.step(model.params_mut())?;
    Ok(value)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trains `model` on `data`. `on_epoch` sees every finished epoch (for logging).
pub fn train(
    model: &mut SlpNet<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptySplit(data.name().to_string()));
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut opt = OptimState::new(model.params(), cfg.adam);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
        checkpoints: Vec::new(),
        eval: None,
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = batch_indices(data.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut total = 0.0;
        for (step, idx) in batches.iter().enumerate() {
            let b = data.batch(idx, cfg.augment.then_some((cfg.seed, epoch)))?;
            let loss = train_step(model, &mut opt, &b.images, &b.masks, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                    loss,
                });
            }
            total += loss;
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: total / batches.len() as f64,
            steps: batches.len(),
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        report.epochs.push(rec);
        if let Some(dir) = &cfg.out_dir {
            let periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if periodic && epoch != cfg.epochs {
                let path = dir.join(checkpoint_name(epoch));
                checkpoint::save(model, &path)?;
                report.checkpoints.push(path);
            }
        }
    }
    report.steps = opt.steps();
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        checkpoint::save(model, &path)?;
        report.checkpoints.push(path);
    }
    Ok(report)
}

/// Per-image confusion counts of the binarized predictions over `data`.
pub fn predict_counts<T: Element>(
    model: &SlpNet<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<ConfusionCounts>> {
    if data.is_empty() {
        return Err(Error::EmptySplit(data.name().to_string()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut counts = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch(chunk, None)?;
        let probs = model.predict(&b.images.cast::<T>())?;
        let pred = binarize(&probs);
        let gt = b.masks.cast::<T>();
        for n in 0..chunk.len() {
            counts.push(confusion(&pred.select(n), &gt.select(n))?);
        }
    }
    Ok(counts)
}

pub fn evaluate<T: Element>(
    model: &SlpNet<T>,
    data: &Dataset,
    aggregation: Aggregation,
    batch_size: usize,
) -> Result<MetricReport> {
    let counts = predict_counts(model, data, batch_size)?;
    Ok(MetricReport::aggregate(&counts, aggregation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn single_scalar_first_step() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("theta", Tensor::scalar(1.0), false).unwrap();
        let mut opt = OptimState::new(&store, AdamConfig::default());
        store.entries_mut()[0].grad = Some(Tensor::scalar(1.0));
        opt.step(&mut store).unwrap();
        // m̂ = 1, v̂ = 1: θ' = 1 − 1e-3 · 1 / (1 + 1e-8)
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((store.get(id).item() - expect).abs() < 1e-15);
    }

    #[test]
    fn coupled_decay_enters_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::scalar(2.0), true).unwrap();
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut opt = OptimState::new(&store, cfg);
        store.entries_mut()[0].grad = Some(Tensor::scalar(-1.0));
        opt.step(&mut store).unwrap();
        // g = -1 + 0.5·2 = 0: Adam leaves the parameter alone
        assert_eq!(store.entries()[0].value.item(), 2.0);
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::full(Shape::new(2, 1, 1, 1), 0.3), true).unwrap();
        let mut opt = OptimState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        for _ in 0..3 {
            store.entries_mut()[0].grad = Some(Tensor::zeros(Shape::new(2, 1, 1, 1)));
            opt.step(&mut store).unwrap();
        }
        assert_eq!(store.entries()[0].value.data(), &[0.3, 0.3]);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::scalar(1.0), true).unwrap();
        let mut opt = OptimState::new(&store, AdamConfig::default());
        assert!(matches!(opt.step(&mut store), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn decoupled_decay_shrinks_with_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::scalar(1.0), true).unwrap();
        let cfg = AdamConfig {
            weight_decay: 0.1,
            decay_mode: DecayMode::Decoupled,
            ..AdamConfig::default()
        };
        let mut opt = OptimState::new(&store, cfg);
        store.entries_mut()[0].grad = Some(Tensor::scalar(0.0));
        opt.step(&mut store).unwrap();
        assert!((store.entries()[0].value.item() - (1.0 - 1e-4)).abs() < 1e-15);
    }
}
