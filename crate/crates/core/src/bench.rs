//! Cost sweep of the non-flat encoder against the flat-lattice baseline over
//! sentence lengths: wall time, attention cells and peak attention memory.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::context::{SelfAttention, SelfAttnConfig};
use crate::error::{Error, Result};
use crate::flat::FlatEncoder;
use crate::infer::{interformer_forward, self_attention_forward, AttnMeter};
use crate::interformer::{InterFormer, InterFormerConfig};
use crate::nn::ModelRng;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CSV_HEADER: &str = "model,length,m,cells,peak_bytes,sec_per_1k,status";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    /// matched words per character
    pub density: f64,
    /// timed sentences per length
    pub reps: usize,
    /// untimed sentences per length
    pub warmup: usize,
    pub d_model: usize,
    pub heads: usize,
    pub seed: u64,
    /// attention-buffer budget in bytes; exceeding it yields a failure row
    pub budget: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![64, 128, 256, 512, 1024],
            density: 0.4,
            reps: 20,
            warmup: 1,
            d_model: 64,
            heads: 8,
            seed: 0,
            budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub model: &'static str,
    pub length: usize,
    /// matched words, excluding `<non_word>`
    pub m: usize,
    /// attention score cells of one sentence
    pub cells: u64,
    pub peak_bytes: usize,
    pub sec_per_1k: Option<f64>,
    pub status: String,
}

/// Score cells of one sentence: `(non-flat, flat)`. The non-flat count
/// includes the `<non_word>` column.
pub fn cell_counts(n: u64, m: u64, heads: u64) -> (u64, u64) {
    (heads * (n * (m + 1) + n * n), heads * (n + m) * (n + m))
}

/// Matched-word count used for a sentence of length `n`.
pub fn matched_words(n: usize, density: f64) -> usize {
    let possible = (2..=4).map(|l| n.saturating_sub(l - 1)).sum::<usize>();
    ((density * n as f64).round() as usize).min(possible)
}

/// `m` distinct spans of length 2 to 4 inside `1..=n`, sorted by `(head, tail)`.
pub fn random_spans<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (1..=n)
        .flat_map(|h| (h + 1..=(h + 3).min(n)).map(move |t| (h, t)))
        .collect();
    let m = m.min(all.len());
    for k in 0..m {
        let pick = rng.random_range(k..all.len());
        all.swap(k, pick);
    }
    all.truncate(m);
    all.sort_unstable();
    all
}

struct Encoders {
    store: ParamStore<f64>,
    inter: InterFormer,
    context: SelfAttention,
    flat: FlatEncoder<f64>,
}

fn encoders(cfg: &BenchConfig, rng: &mut ModelRng) -> Result<Encoders> {
    let d = cfg.d_model;
    let mut store = ParamStore::new();
    let inter = InterFormer::new(
        &mut store,
        "inter",
        InterFormerConfig {
            d_model: d,
            heads: cfg.heads,
            d_ff: 2 * d,
            attn_dropout: 0.0,
            fc_dropout: 0.0,
            relative_positions: true,
            empty_row_fallback: false,
        },
        rng,
    )?;
    let context = SelfAttention::new(
        &mut store,
        "context",
        SelfAttnConfig {
            d_model: d,
            heads: cfg.heads,
            d_ff: 2 * d,
            attn_dropout: 0.0,
            fc_dropout: 0.0,
        },
        rng,
    )?;
    let flat = FlatEncoder::new(d, cfg.heads, 2 * d, rng)?;
    Ok(Encoders {
        store,
        inter,
        context,
        flat,
    })
}

struct Case {
    chars: Tensor<f64>,
    words: Tensor<f64>,
    word_spans: Vec<(usize, usize)>,
    tokens: Tensor<f64>,
    token_spans: Vec<(usize, usize)>,
}

fn case(n: usize, m: usize, d: usize, rng: &mut ModelRng) -> Result<Case> {
    let spans = random_spans(n, m, rng);
    let chars = Tensor::randn(vec![n, d], 1.0, rng);
    let word_rows = Tensor::<f64>::randn(vec![spans.len(), d], 1.0, rng);
    let mut words = word_rows.data().to_vec();
    words.extend(std::iter::repeat_n(0.0, d));
    let mut word_spans = spans.clone();
    word_spans.push((1, n));
    let mut tokens = chars.data().to_vec();
    tokens.extend_from_slice(word_rows.data());
    let mut token_spans: Vec<(usize, usize)> = (1..=n).map(|i| (i, i)).collect();
    token_spans.extend(&spans);
    Ok(Case {
        chars,
        words: Tensor::new(vec![spans.len() + 1, d], words)?,
        word_spans,
        tokens: Tensor::new(vec![n + spans.len(), d], tokens)?,
        token_spans,
    })
}

fn run_nflat(enc: &Encoders, c: &Case, meter: &mut AttnMeter) -> Result<()> {
    let fused = interformer_forward(&enc.inter, &enc.store, &c.chars, &c.words, &c.word_spans, meter)?;
    self_attention_forward(&enc.context, &enc.store, &fused, meter)?;
    Ok(())
}

fn run_flat(enc: &Encoders, c: &Case, meter: &mut AttnMeter) -> Result<()> {
    let n = c.chars.shape()[0];
    crate::infer::flat_layer_forward(&enc.flat.layer, &enc.flat.store, &c.tokens, &c.token_spans, n, meter)?;
    Ok(())
}

type Runner = fn(&Encoders, &Case, &mut AttnMeter) -> Result<()>;

fn measure(
    name: &'static str,
    run: Runner,
    enc: &Encoders,
    cases: &[Case],
    warmup: &[Case],
    budget: Option<usize>,
    n: usize,
    m: usize,
) -> Result<BenchRecord> {
    let meter = || budget.map_or_else(AttnMeter::new, AttnMeter::with_budget);
    let mut record = BenchRecord {
        model: name,
        length: n,
        m,
        cells: 0,
        peak_bytes: 0,
        sec_per_1k: None,
        status: "ok".into(),
    };
    for c in warmup {
        if let Err(e) = run(enc, c, &mut meter()) {
            return failure(record, e);
        }
    }
    let start = Instant::now();
    for c in cases {
        let mut mt = meter();
        if let Err(e) = run(enc, c, &mut mt) {
            return failure(record, e);
        }
        record.cells = mt.cells();
        record.peak_bytes = record.peak_bytes.max(mt.peak_bytes());
    }
    let secs = start.elapsed().as_secs_f64();
    record.sec_per_1k = Some(secs / cases.len().max(1) as f64 * 1000.0);
    Ok(record)
}

fn failure(mut record: BenchRecord, e: Error) -> Result<BenchRecord> {
    match e {
        Error::MemoryBudget { requested, .. } => {
            record.peak_bytes = requested;
            record.status = "oom".into();
            Ok(record)
        }
        other => Err(other),
    }
}

/// Runs both encoders on `reps` random sentences of every length. Rows come
/// in `(length, model)` order, non-flat first.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if !cfg.d_model.is_multiple_of(2) || cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
        return Err(Error::Config(format!(
            "bench needs an even d_model divisible by heads, got {}/{}",
            cfg.d_model, cfg.heads
        )));
    }
    if !(0.0..=4.0).contains(&cfg.density) || cfg.reps == 0 {
        return Err(Error::Config("bench needs reps >= 1 and a density in [0, 4]".into()));
    }
    let mut rng = ModelRng::seed_from_u64(cfg.seed);
    let enc = encoders(cfg, &mut rng)?;
    let mut out = Vec::with_capacity(cfg.lengths.len() * 2);
    for &n in &cfg.lengths {
        if n == 0 {
            return Err(Error::Config("bench lengths must be positive".into()));
        }
        let m = matched_words(n, cfg.density);
        let cases = (0..cfg.reps)
            .map(|_| case(n, m, cfg.d_model, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let warm = (0..cfg.warmup)
            .map(|_| case(n, m, cfg.d_model, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        out.push(measure("NFLAT", run_nflat, &enc, &cases, &warm, cfg.budget, n, m)?);
        out.push(measure("FLAT", run_flat, &enc, &cases, &warm, cfg.budget, n, m)?);
    }
    Ok(out)
}

pub fn write_csv<W: Write>(out: &mut W, records: &[BenchRecord]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        let secs = r.sec_per_1k.map_or(String::new(), |s| format!("{s:.6}"));
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model, r.length, r.m, r.cells, r.peak_bytes, secs, r.status
        )?;
    }
    Ok(())
}

/// Description of what the numbers measure, written next to the CSV.
pub fn metadata(cfg: &BenchConfig) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "precision": "f64",
        "memory": "peak bytes of attention score and weight buffers during one forward pass; forward-only, no optimizer state",
        "cells": "attention score cells per sentence; NFLAT counts the <non_word> column",
        "timing": format!("mean over {} sentences per length scaled to seconds per 1000 sentences; {} warmup sentences excluded; batch size 1, single thread", cfg.reps, cfg.warmup),
        "models": "NFLAT = inter-attention layer + character self-attention layer; FLAT = one self-attention layer over characters and words",
    })
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    format!(
        r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
        pts.join(" ")
    )
}

/// Two panels: time per 1k sentences and peak attention memory, both
/// against sentence length.
pub fn render_svg(records: &[BenchRecord]) -> String {
    let (w, h, pad) = (420.0, 300.0, 50.0);
    let mut lengths: Vec<usize> = records.iter().map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let max_len = *lengths.last().unwrap_or(&1) as f64;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" font-family="sans-serif" font-size="12">"#,
        2.0 * w
    );
    let panels: [(&str, fn(&BenchRecord) -> Option<f64>); 2] = [
        ("seconds per 1k sentences", |r| r.sec_per_1k),
        ("peak attention MB", |r| (r.status == "ok").then(|| r.peak_bytes as f64 / 1e6)),
    ];
    for (p, (title, value)) in panels.iter().enumerate() {
        let x0 = p as f64 * w;
        let max_v = records.iter().filter_map(value).fold(0.0f64, f64::max).max(1e-12);
        let sx = |len: usize| x0 + pad + (len as f64 / max_len) * (w - 2.0 * pad);
        let sy = |v: f64| h - pad - (v / max_v) * (h - 2.0 * pad);
        let _ = write!(
            svg,
            r#"<text x="{}" y="20" text-anchor="middle">{title}</text><line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/><text x="{}" y="{}" text-anchor="end">{max_v:.3}</text><text x="{}" y="{}" text-anchor="middle">sentence length (max {max_len})</text>"#,
            x0 + w / 2.0,
            x0 + pad,
            h - pad,
            x0 + w - pad,
            h - pad,
            x0 + pad,
            pad,
            x0 + pad,
            h - pad,
            x0 + pad - 4.0,
            pad + 4.0,
            x0 + w / 2.0,
            h - pad + 30.0,
        );
        for (k, (model, color)) in [("NFLAT", "#1f77b4"), ("FLAT", "#d62728")].iter().enumerate() {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.model == *model)
                .filter_map(|r| value(r).map(|v| (sx(r.length), sy(v))))
                .collect();
            svg.push_str(&polyline(&pts, color));
            let _ = write!(
                svg,
                r#"<text x="{}" y="{}" fill="{color}">{model}</text>"#,
                x0 + pad + 10.0,
                pad + 15.0 * (k as f64 + 1.0)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
