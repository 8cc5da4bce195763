//! Minibatch training with Adam and validation-AUC model selection.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{ctr_eval, CtrReport};
use crate::kg::{build_adjacency, sample_neighborhood, KnowledgeGraph, NeighborSample};
use crate::model::{ModelConfig, ModelSpec, Predictor};
use crate::numerics::{adam_step, init_params, AdamConfig, AdamState, GradientStore, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// η
    pub learning_rate: f64,
    /// λ
    pub l2_weight: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs between validation passes.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            l2_weight: 1e-4,
            batch_size: 128,
            max_epochs: 20,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::Config(format!("L2 weight must be non-negative, got {}", self.l2_weight)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub val_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned; `None` means the initial ones.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_auc,val_f1,seconds\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{},{},{:.3}",
                e.epoch,
                e.train_loss,
                opt(e.val_auc),
                opt(e.val_f1),
                e.seconds
            );
        }
        out
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_auc.map(f64::to_bits) == b.val_auc.map(f64::to_bits)
                    && a.val_f1.map(f64::to_bits) == b.val_f1.map(f64::to_bits)
            })
    }

    pub fn best_val_auc(&self) -> Option<f64> {
        let best = self.best_epoch?;
        self.epochs.iter().find(|e| e.epoch == best)?.val_auc
    }
}

/// Mean binary cross-entropy over the batch plus `λ‖Θ‖²`.
pub fn batch_loss(predictions: &[f64], labels: &[bool], params: &ParameterStore, l2_weight: f64) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Data(format!("prediction {p} is not in (0, 1)")));
        }
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    let data = if predictions.is_empty() {
        0.0
    } else {
        total / predictions.len() as f64
    };
    Ok(data + l2_weight * params.squared_norm())
}

/// Neighbor sample covering every KG entity and every item index.
pub fn build_sample(kg: &KnowledgeGraph, num_items: usize, k: usize, seed: u64) -> Result<NeighborSample> {
    sample_neighborhood(&build_adjacency(kg, num_items), k, seed)
}

fn check_dims(split: &SplitDataset, sample: &NeighborSample, spec: &ModelSpec) -> Result<()> {
    let parts = [&split.train, &split.validation, &split.test];
    if parts.iter().any(|p| p.num_users != split.train.num_users || p.num_items != split.train.num_items) {
        return Err(Error::Config("split parts disagree on user/item counts".into()));
    }
    if let ModelSpec::Kgcn(cfg) = spec {
        if sample.num_entities() < split.train.num_items {
            return Err(Error::Config(format!(
                "neighbor sample covers {} entities but there are {} items",
                sample.num_entities(),
                split.train.num_items
            )));
        }
        if sample.sample_size() != cfg.sample_size {
            return Err(Error::Config(format!(
                "neighbor sample has K={}, model expects K={}",
                sample.sample_size(),
                cfg.sample_size
            )));
        }
    }
    Ok(())
}

/// Initial parameters for `spec` over the split's users and the sample's
/// entities.
pub fn initial_params(split: &SplitDataset, sample: &NeighborSample, spec: &ModelSpec, seed: u64) -> ParameterStore {
    let entities = sample.num_entities().max(split.train.num_items);
    init_params(spec.param_shape(split.train.num_users, entities, sample.relation_rows()), seed)
}

/// Trains for `max_epochs` epochs and returns the parameters of the epoch
/// with the highest validation AUC.
pub fn train(
    split: &SplitDataset,
    sample: &NeighborSample,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, TrainReport)> {
    spec.validate()?;
    cfg.validate()?;
    check_dims(split, sample, spec)?;

    let mut params = initial_params(split, sample, spec, cfg.seed);
    let mut adam = AdamState::new(&params, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut report = TrainReport::default();
    let mut best: Option<(f64, ParameterStore)> = None;
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let predictor = Predictor::new(spec, &params, sample)?;
            let per_record: Vec<(f64, f64, GradientStore)> = batch
                .par_iter()
                .map(|&i| {
                    let r = split.train.records[i];
                    predictor.loss_and_gradient(r.user, r.item, r.label)
                })
                .collect::<Result<_>>()
                .map_err(|e| locate(e, epoch, batch_no))?;

            let mut grads = GradientStore::zeros_like(&params);
            let mut predictions = Vec::with_capacity(batch.len());
            for (p, _, g) in &per_record {
                grads.merge(g);
                predictions.push(*p);
            }
            grads.scale(1.0 / batch.len() as f64);
            let labels: Vec<bool> = batch.iter().map(|&i| split.train.records[i].label).collect();
            let loss = batch_loss(&predictions, &labels, &params, cfg.l2_weight)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {batch_no}")));
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut adam, cfg.learning_rate, cfg.l2_weight)
                .map_err(|e| locate(e, epoch, batch_no))?;
        }
        let train_loss = if order.is_empty() {
            0.0
        } else {
            loss_sum / order.len() as f64
        };

        let (mut val_auc, mut val_f1) = (None, None);
        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            if let Some(ctr) = validation_metrics(split, sample, spec, &params)? {
                val_auc = Some(ctr.auc);
                val_f1 = Some(ctr.f1);
                if best.as_ref().is_none_or(|(auc, _)| ctr.auc > *auc) {
                    best = Some((ctr.auc, params.clone()));
                    report.best_epoch = Some(epoch);
                }
            }
        }
        let seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} val_auc {} ({seconds:.1}s)",
            val_auc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_auc,
            val_f1,
            seconds,
        });
    }

    match best {
        Some((_, best_params)) => Ok((best_params, report)),
        None => {
            // No usable validation set: keep the final parameters.
            if cfg.max_epochs > 0 {
                report.best_epoch = Some(cfg.max_epochs);
            }
            Ok((params, report))
        }
    }
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}, batch {batch}")),
        other => other,
    }
}

fn validation_metrics(
    split: &SplitDataset,
    sample: &NeighborSample,
    spec: &ModelSpec,
    params: &ParameterStore,
) -> Result<Option<CtrReport>> {
    let val = &split.validation;
    let positives = val.num_positives();
    if positives == 0 || positives == val.len() {
        return Ok(None);
    }
    ctr_eval(&Predictor::new(spec, params, sample)?, val).map(Some)
}

/// A trained model with its test-set metrics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ParameterStore,
    pub report: TrainReport,
    pub test: CtrReport,
}

pub fn train_and_evaluate(
    split: &SplitDataset,
    sample: &NeighborSample,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let (params, report) = train(split, sample, spec, cfg)?;
    let test = ctr_eval(&Predictor::new(spec, &params, sample)?, &split.test)?;
    Ok(TrainedModel { params, report, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    /// Neighbor sample size.
    K,
    /// Receptive-field depth.
    H,
    /// Embedding dimension.
    D,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::K => "K",
            SweepParameter::H => "H",
            SweepParameter::D => "d",
        }
    }

    fn apply(self, base: &ModelConfig, value: usize) -> ModelConfig {
        let mut cfg = *base;
        match self {
            SweepParameter::K => cfg.sample_size = value,
            SweepParameter::H => cfg.depth = value,
            SweepParameter::D => cfg.dim = value,
        }
        cfg
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepParameter::K),
            "H" | "h" => Ok(SweepParameter::H),
            "d" | "D" => Ok(SweepParameter::D),
            other => Err(Error::Config(format!("cannot sweep over `{other}`; use K, H or d"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: usize,
    pub test_auc: f64,
    pub test_f1: f64,
}

/// Trains one KGCN per value of `parameter`, the i-th with seed
/// `cfg.seed + i`. The neighbor sample is redrawn with `sample_seed`
/// whenever K changes.
pub fn sweep(
    split: &SplitDataset,
    kg: &KnowledgeGraph,
    base: &ModelConfig,
    cfg: &TrainConfig,
    sample_seed: u64,
    parameter: SweepParameter,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let model = parameter.apply(base, value);
        model.validate()?;
        let sample = build_sample(kg, split.train.num_items, model.sample_size, sample_seed)?;
        let run_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..*cfg
        };
        let trained = train_and_evaluate(split, &sample, &ModelSpec::Kgcn(model), &run_cfg)?;
        log::info!("{}={value}: test AUC {:.4}", parameter.name(), trained.test.auc);
        rows.push(SweepRow {
            parameter: parameter.name(),
            value,
            test_auc: trained.test.auc,
            test_f1: trained.test.f1,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("parameter,value,test_auc,test_f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.parameter, r.value, r.test_auc, r.test_f1);
    }
    out
}
