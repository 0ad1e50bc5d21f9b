//! Training, evaluation and the PSR/CSR ablation grid.

use std::io::Write;
use std::path::{Path, PathBuf};

use mrsnet_autograd::{resize_bilinear, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data_model::{BinaryMask, DatasetIndex, Language, ReferringSample, SampleRecord};
use crate::error::{Error, Result};
use crate::ifim::AblationFlags;
use crate::metrics::{self, aggregate, sample_iou, EvalRecord, MetricReport, DEFAULT_THRESHOLDS};
use crate::network::{segmentation_loss, LossConfig, Model};
use crate::optim::{apply_buffer_updates, cosine_lr, AdamW};
use crate::params::{Ctx, Mode, ParamGrads};

/// A stacked, resized batch.
pub struct Batch {
    /// (B, 3, H, W)
    pub images: Tensor,
    /// (B, 1, H, W) of 0/1 at network resolution.
    pub masks: Tensor,
    pub texts: Vec<String>,
    pub samples: Vec<ReferringSample>,
    pub ids: Vec<String>,
}

fn resize_image(image: &Tensor, size: Option<usize>) -> Result<Tensor> {
    let s = image.shape();
    let (h, w) = (s[1], s[2]);
    let batched = image.reshape([1, 3, h, w])?;
    Ok(match size {
        Some(n) if (n, n) != (h, w) => resize_bilinear(&batched, n, n),
        _ => batched,
    })
}

/// Loads `records` in parallel and stacks them. With `input_size` every
/// image is resized to that square; otherwise all must share one size.
pub fn prepare_batch(records: &[&SampleRecord], input_size: Option<usize>) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let samples: Vec<ReferringSample> = records.par_iter().map(|r| r.load()).collect::<Result<_>>()?;
    let images: Vec<Tensor> = samples
        .iter()
        .map(|s| resize_image(&s.image, input_size))
        .collect::<Result<_>>()?;
    let (h, w) = (images[0].shape()[2], images[0].shape()[3]);
    if let Some(bad) = images.iter().position(|t| t.shape()[2..] != [h, w]) {
        return Err(Error::Shape(format!(
            "sample {} is {:?} but the batch is {h}x{w}; set input_size to resize",
            records[bad].id,
            &images[bad].shape()[2..]
        )));
    }
    let masks: Vec<Tensor> = samples
        .iter()
        .map(|s| s.mask.resize_nearest(h, w).to_tensor().reshape([1, 1, h, w]))
        .collect::<std::result::Result<_, _>>()?;
    let image_refs: Vec<&Tensor> = images.iter().collect();
    let mask_refs: Vec<&Tensor> = masks.iter().collect();
    Ok(Batch {
        images: Tensor::concat(&image_refs, 0)?,
        masks: Tensor::concat(&mask_refs, 0)?,
        texts: samples.iter().map(|s| s.expression.text.clone()).collect(),
        ids: records.iter().map(|r| r.id.clone()).collect(),
        samples,
    })
}

pub struct StepResult {
    pub loss: f64,
    pub grads: ParamGrads,
}

/// One optimizer step on `batch`. Fails before touching the parameters if
/// the loss or any gradient is non-finite.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &Batch,
    flags: AblationFlags,
    loss_cfg: LossConfig,
    lr: f64,
) -> Result<StepResult> {
    let texts: Vec<&str> = batch.texts.iter().map(String::as_str).collect();
    let language = model.network.encode_text(&texts)?;
    let (loss, grads, updates) = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &model.store, Mode::Train);
        let images = ctx.input(batch.images.clone());
        let out = model.network.forward(&ctx, images, &language, flags)?;
        let loss = segmentation_loss(out.logits, &batch.masks, loss_cfg)?;
        let value = loss.value().item();
        if !value.is_finite() {
            ctx.check_finite()?;
            return Err(Error::NonFinite(format!("loss = {value}")));
        }
        let grads = ctx.param_grads(&tape.backward(loss)?);
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                model.store.name(*id)
            )));
        }
        (value, grads, ctx.take_buffer_updates())
    };
    opt.step(&mut model.store, &grads, lr)?;
    apply_buffer_updates(&mut model.store, updates)?;
    Ok(StepResult { loss, grads })
}

/// Forward pass in eval mode; returns per-sample records.
pub fn predict_records(
    model: &Model,
    records: &[&SampleRecord],
    flags: AblationFlags,
    threshold: f64,
    input_size: Option<usize>,
    batch_size: usize,
) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = prepare_batch(chunk, input_size)?;
        let texts: Vec<&str> = batch.texts.iter().map(String::as_str).collect();
        let language = model.network.encode_text(&texts)?;
        let tape = Tape::no_grad();
        let ctx = Ctx::new(&tape, &model.store, Mode::Eval);
        let fwd = model
            .network
            .forward(&ctx, ctx.input(batch.images.clone()), &language, flags)?;
        let probs = fwd.probabilities()?;
        let (h, w) = (probs.shape()[2], probs.shape()[3]);
        for (i, sample) in batch.samples.iter().enumerate() {
            let p = probs.narrow(0, i, 1)?;
            let (mh, mw) = sample.mask.shape();
            let p = if (mh, mw) == (h, w) {
                p
            } else {
                resize_bilinear(&p, mh, mw)
            };
            let pred = BinaryMask::from_probabilities(&p, threshold)?;
            out.push(sample_iou(
                batch.ids[i].clone(),
                &pred,
                &sample.mask,
                sample.annotation_type,
            )?);
        }
    }
    Ok(out)
}

/// Scores `records` with the default thresholds.
pub fn evaluate_records(
    model: &Model,
    records: &[&SampleRecord],
    flags: AblationFlags,
    threshold: f64,
    input_size: Option<usize>,
    batch_size: usize,
) -> Result<(MetricReport, Vec<EvalRecord>)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let recs = predict_records(model, records, flags, threshold, input_size, batch_size)?;
    Ok((aggregate(&recs, &DEFAULT_THRESHOLDS)?, recs))
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub model: Model,
    pub losses: Vec<f64>,
    pub steps: usize,
    pub best_val: Option<MetricReport>,
}

fn log_line(log: &mut dyn Write, value: serde_json::Value) -> Result<()> {
    writeln!(log, "{value}").map_err(|e| Error::io("<log>", e))
}

/// Trains on the `train` split, validating after each epoch and keeping the
/// checkpoint with the best validation mIoU (the last epoch's when there is
/// no validation data). Step and epoch events go to `log` as JSON lines.
pub fn train(
    config: &TrainConfig,
    dataset: &DatasetIndex,
    data_ref: Option<&Path>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_records: Vec<&SampleRecord> = dataset
        .split_records("train")?
        .into_iter()
        .filter(|r| !config.english_only || r.expression.language == Language::En)
        .collect();
    if train_records.is_empty() {
        return Err(Error::InvalidInput("train split is empty".into()));
    }
    let val_records = match dataset.splits().get("val") {
        Some(_) => dataset.split_records("val")?,
        None => Vec::new(),
    };
    let flags = config.flags();
    let mut model = Model::new(config.model.clone(), config.seed)?;
    let mut opt = AdamW::new(config.optimizer());
    let per_epoch = train_records.len().div_ceil(config.batch_size);
    let mut total = config.epochs * per_epoch;
    if let Some(cap) = config.max_steps {
        total = total.min(cap);
    }
    let checkpoint_path = config.output_dir.join("best.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_da7a);
    let mut order: Vec<usize> = (0..train_records.len()).collect();
    let mut losses = Vec::with_capacity(total);
    let mut best: Option<MetricReport> = None;
    let mut step = 0;
    log_line(
        log,
        json!({"event": "start", "train_samples": train_records.len(), "val_samples": val_records.len(),
               "total_steps": total, "parameters": model.store.num_scalars()}),
    )?;
    for epoch in 0..config.epochs {
        if step == total {
            break;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step == total {
                break;
            }
            let records: Vec<&SampleRecord> = chunk.iter().map(|&i| train_records[i]).collect();
            let batch = prepare_batch(&records, config.input_size)?;
            let lr = cosine_lr(config.lr, step, total);
            let result = train_step(&mut model, &mut opt, &batch, flags, config.loss, lr)?;
            log_line(
                log,
                json!({"event": "step", "epoch": epoch, "step": step, "loss": result.loss, "lr": lr}),
            )?;
            losses.push(result.loss);
            step += 1;
        }
        if val_records.is_empty() {
            checkpoint::save(&checkpoint_path, config, data_ref, &model.store)?;
            continue;
        }
        let (report, _) = evaluate_records(
            &model,
            &val_records,
            flags,
            config.threshold,
            config.input_size,
            config.batch_size,
        )?;
        log_line(log, json!({"event": "epoch", "epoch": epoch, "val": report}))?;
        if best.as_ref().is_none_or(|b| report.mean_iou > b.mean_iou) {
            checkpoint::save(&checkpoint_path, config, data_ref, &model.store)?;
            best = Some(report);
        }
    }
    log_line(
        log,
        json!({"event": "done", "steps": step, "checkpoint": checkpoint_path}),
    )?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_path,
        model,
        losses,
        steps: step,
        best_val: best,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Overrides the checkpoint's threshold.
    pub threshold: Option<f64>,
}

/// Loads a checkpoint and scores one split of `dataset`.
pub fn evaluate(
    checkpoint_path: &Path,
    dataset: &DatasetIndex,
    split: &str,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<EvalRecord>)> {
    let (meta, model) = checkpoint::load(checkpoint_path)?;
    let records = dataset.split_records(split)?;
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("split {split:?} is empty")));
    }
    let cfg = &meta.config;
    evaluate_records(
        &model,
        &records,
        cfg.flags(),
        opts.threshold.unwrap_or(cfg.threshold),
        cfg.input_size,
        cfg.batch_size,
    )
}

/// The three PSR/CSR configurations compared in ablation, in table order.
pub const ABLATION_GRID: [AblationFlags; 3] = [
    AblationFlags {
        use_psr: true,
        use_csr: false,
    },
    AblationFlags {
        use_psr: false,
        use_csr: true,
    },
    AblationFlags {
        use_psr: true,
        use_csr: true,
    },
];

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub use_psr: bool,
    pub use_csr: bool,
    pub checkpoint: PathBuf,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let rows: Vec<(bool, bool, &MetricReport)> = self
            .rows
            .iter()
            .map(|r| (r.use_psr, r.use_csr, &r.metrics))
            .collect();
        metrics::ablation_table(&rows)
    }
}

/// Trains and scores each grid configuration on the `test` split. Runs go
/// to `<output_dir>/psr_<on|off>_csr_<on|off>`.
pub fn ablate(
    base: &TrainConfig,
    dataset: &DatasetIndex,
    data_ref: Option<&Path>,
    log: &mut dyn Write,
) -> Result<AblationReport> {
    let split = "test";
    let records = dataset.split_records(split)?;
    if records.is_empty() {
        return Err(Error::InvalidInput("ablation needs a non-empty test split".into()));
    }
    let on_off = |b: bool| if b { "on" } else { "off" };
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for flags in ABLATION_GRID {
        let cfg = TrainConfig {
            use_psr: flags.use_psr,
            use_csr: flags.use_csr,
            output_dir: base
                .output_dir
                .join(format!("psr_{}_csr_{}", on_off(flags.use_psr), on_off(flags.use_csr))),
            ..base.clone()
        };
        log_line(log, json!({"event": "ablation_run", "use_psr": flags.use_psr, "use_csr": flags.use_csr}))?;
        let outcome = train(&cfg, dataset, data_ref, log)?;
        let (report, _) = evaluate(&outcome.checkpoint, dataset, split, &EvalOptions::default())?;
        rows.push(AblationRow {
            use_psr: flags.use_psr,
            use_csr: flags.use_csr,
            checkpoint: outcome.checkpoint,
            metrics: report,
        });
    }
    Ok(AblationReport {
        split: split.to_string(),
        rows,
    })
}
