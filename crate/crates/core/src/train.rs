//! Mini-batch training with early stopping on dev F1, plus corpus-level
//! prediction and evaluation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::batch::SentenceInput;
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_tags, EvalReport};
use crate::model::Nflat;
use crate::nn::{Ctx, ModelRng};
use crate::optim::{scheduled_lr, Adam};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One line of the metrics log.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// mean per-sentence loss over the epoch
    pub loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    /// learning rate of the epoch's last step
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept
    pub best_epoch: usize,
    pub best_dev: Option<EvalReport>,
    pub stopped_early: bool,
}

pub struct TrainOptions<'a> {
    pub workers: usize,
    /// JSON-lines sink; receives a config echo followed by one line per epoch.
    pub metrics: Option<&'a mut dyn Write>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            workers: 1,
            metrics: None,
        }
    }
}

fn write_json<S: Serialize>(out: &mut dyn Write, value: &S) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("<metrics>", e))
}

fn dump_batch(sentences: &[&Sentence]) -> String {
    sentences
        .iter()
        .map(|s| format!("[{}] {}", s.id, s.text()))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// Trains `model` in place. When `dev` is non-empty the parameters of the
/// best dev-F1 epoch are restored at the end.
pub fn train<T: Scalar>(
    model: &mut Nflat<T>,
    train: &[Sentence],
    dev: &[Sentence],
    mut opts: TrainOptions<'_>,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let cfg = model.config().clone();
    let inputs = train
        .iter()
        .map(|s| {
            if s.labels.is_none() {
                return Err(Error::Config(format!("training sentence {} has no labels", s.id)));
            }
            model.encode(s)
        })
        .collect::<Result<Vec<SentenceInput>>>()?;
    if let Some(out) = opts.metrics.as_deref_mut() {
        write_json(out, &serde_json::json!({ "config": &cfg }))?;
    }
    let mut rng = ModelRng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(&model.store);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<Tensor<T>>)> = None;
    let mut since_best = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&SentenceInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let batch = model.batch(&refs)?;
            let (value, grads) = {
                let mut tape = Tape::new(&model.store);
                let loss = model.loss(&mut tape, &batch, &mut Ctx::train(&mut rng))?;
                let value = tape.value(loss).item().as_f64();
                if !value.is_finite() {
                    let sents: Vec<&Sentence> = chunk.iter().map(|&i| &train[i]).collect();
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        dump: dump_batch(&sents),
                    });
                }
                (value, tape.backward(loss)?.into_param_grads())
            };
            lr = scheduled_lr(cfg.lr, cfg.warmup, step, total);
            adam.step(&mut model.store, &grads, lr);
            loss_sum += value * chunk.len() as f64;
            step += 1;
        }
        let dev_report = if dev.is_empty() {
            None
        } else {
            Some(evaluate(model, dev, opts.workers)?)
        };
        let overall = dev_report.as_ref().map(|r| r.overall.clone()).unwrap_or_default();
        let log = EpochLog {
            epoch,
            loss: loss_sum / train.len() as f64,
            dev_precision: overall.precision,
            dev_recall: overall.recall,
            dev_f1: overall.f1,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(out) = opts.metrics.as_deref_mut() {
            write_json(out, &log)?;
        }
        report.epochs.push(log);
        match dev_report {
            Some(r) if best.as_ref().is_none_or(|(f, _)| r.f1() > *f) => {
                best = Some((r.f1(), model.store.iter().map(|(_, p)| p.value.clone()).collect()));
                report.best_epoch = epoch;
                report.best_dev = Some(r);
                since_best = 0;
            }
            Some(_) => since_best += 1,
            None => report.best_epoch = epoch,
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, values)) = best {
        let ids: Vec<_> = model.store.ids().collect();
        for (id, v) in ids.into_iter().zip(values) {
            *model.store.get_mut(id) = v;
        }
    }
    Ok(report)
}

fn with_workers<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> Result<R> {
    if workers <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Tag sequences in corpus order; sentences are decoded independently.
pub fn predict_corpus<T: Scalar>(model: &Nflat<T>, sentences: &[Sentence], workers: usize) -> Result<Vec<Vec<String>>> {
    let strip = |s: &Sentence| Sentence {
        labels: None,
        ..s.clone()
    };
    with_workers(workers, || {
        if workers <= 1 {
            sentences.iter().map(|s| model.predict(&strip(s))).collect()
        } else {
            sentences.par_iter().map(|s| model.predict(&strip(s))).collect()
        }
    })?
}

/// Entity-level scores of `model` on a labelled corpus. Gold tags outside the
/// model's schema are an error.
pub fn evaluate<T: Scalar>(model: &Nflat<T>, corpus: &[Sentence], workers: usize) -> Result<EvalReport> {
    let mut gold = Vec::with_capacity(corpus.len());
    for s in corpus {
        let tags = s
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("sentence {} has no gold labels", s.id)))?;
        model.schema().encode(tags)?;
        gold.push(tags.clone());
    }
    let pred = predict_corpus(model, corpus, workers)?;
    evaluate_tags(&gold, &pred, model.schema().scheme())
}
