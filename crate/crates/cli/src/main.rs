//! `nflat`: train, evaluate and run the lattice tagger from the shell.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or model errors.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nflat_core::bench::{metadata, render_svg, run_bench, write_csv, BenchConfig};
use nflat_core::checkpoint::{self, AnyModel};
use nflat_core::config::ModelConfig;
use nflat_core::crf::LabelSchema;
use nflat_core::data::{parse_conll, parse_raw, read_conll, write_conll, write_tagged, Sentence};
use nflat_core::lexicon::{build_trie, load_embeddings, match_stats, match_words, read_lexicon, EmbeddingTable};
use nflat_core::model::{char_vocabulary, Nflat, Pretrained};
use nflat_core::nn::ModelRng;
use nflat_core::synth::{gen_synthetic, SynthConfig};
use nflat_core::train::{evaluate, predict_corpus, train, TrainOptions};
use nflat_core::{DType, Error, Scalar};
use rand::SeedableRng;

#[derive(Parser, Debug)]
#[command(name = "nflat", version, about = "Lexicon-enhanced character sequence labelling")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Seed for initialisation, shuffling, dropout and data generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` model configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for evaluation and prediction.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus a JSON-lines metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Tag a corpus or raw text; writes `char<TAB>tag` lines.
    Predict(PredictArgs),
    /// List lexicon matches of a text as `surface head tail` lines.
    Match(MatchArgs),
    /// Summarise character and matched-word sequence lengths of a corpus.
    Stats(StatsArgs),
    /// Compare attention cost against the flat-lattice baseline.
    Bench(BenchArgs),
    /// Write a synthetic train/dev/test corpus and its lexicon.
    GenData(GenArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    #[arg(long, value_name = "FILE")]
    dev: Option<PathBuf>,
    /// One word per line; defaults to the multi-character tokens of --word-emb.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    char_emb: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    word_emb: Option<PathBuf>,
    #[arg(long, value_name = "FILE", default_value = "nflat.ckpt")]
    out: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "nflat.metrics.jsonl")]
    metrics: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// none, -RPE or -TAG
    #[arg(long, allow_hyphen_values = true)]
    ablation: Option<String>,
    /// Any config key, repeatable: `--set warmup=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Dataset-format file (tags ignored) or raw text; `-` reads stdin.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Treat the input as raw text, one sentence per line.
    #[arg(long, conflicts_with = "conll")]
    raw: bool,
    /// Treat the input as `char [tag]` lines.
    #[arg(long)]
    conll: bool,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    text: Option<String>,
    /// Raw text file, one sentence per line, blank line between outputs.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    #[arg(long, value_name = "FILE", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated sentence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512, 1024])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 0.4)]
    density: f64,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    /// Attention-buffer budget in bytes; larger runs become failure rows.
    #[arg(long)]
    budget_bytes: Option<usize>,
    #[arg(long, value_name = "FILE", default_value = "bench.csv")]
    out: PathBuf,
    /// Optional SVG with time and memory charts.
    #[arg(long, value_name = "FILE")]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    train_size: usize,
    #[arg(long, default_value_t = 100)]
    dev_size: usize,
    #[arg(long, default_value_t = 100)]
    test_size: usize,
    #[arg(long, default_value_t = 40)]
    alphabet: usize,
    #[arg(long, default_value_t = 3)]
    entity_types: usize,
    #[arg(long, default_value_t = 120)]
    vocab: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn base_config(cli: &Cli) -> Result<ModelConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ModelConfig::from_file(path)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let workers = cli.workers as usize;
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a, workers),
        Command::Eval(a) => cmd_eval(a, workers),
        Command::Predict(a) => cmd_predict(a, workers),
        Command::Match(a) => cmd_match(&cli, a),
        Command::Stats(a) => cmd_stats(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::GenData(a) => cmd_gen(&cli, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn cmd_train(cli: &Cli, a: &TrainArgs, workers: usize) -> Result<(), Error> {
    let mut cfg = base_config(cli)?;
    let flags = [
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("d_model", a.d_model.map(|v| v.to_string())),
        ("heads", a.heads.map(|v| v.to_string())),
        ("ablation", a.ablation.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    match cfg.precision {
        DType::F32 => train_typed::<f32>(cfg, a, workers),
        DType::F64 => train_typed::<f64>(cfg, a, workers),
    }
}

fn train_typed<T: Scalar>(cfg: ModelConfig, a: &TrainArgs, workers: usize) -> Result<(), Error> {
    let train_set = read_conll(&a.train)?;
    let dev_set = match &a.dev {
        Some(p) => read_conll(p)?,
        None => Vec::new(),
    };
    let char_emb: Option<EmbeddingTable<T>> = a.char_emb.as_ref().map(load_embeddings).transpose()?;
    let word_emb: Option<EmbeddingTable<T>> = a.word_emb.as_ref().map(load_embeddings).transpose()?;
    let lexicon = match (&a.lexicon, &word_emb) {
        (Some(p), _) => read_lexicon(p)?,
        (None, Some(t)) => t.tokens().iter().filter(|w| w.chars().count() >= 2).cloned().collect(),
        (None, None) => Vec::new(),
    };
    let tags = train_set
        .iter()
        .chain(&dev_set)
        .filter_map(|s| s.labels.as_ref())
        .flatten()
        .map(String::as_str);
    let schema = LabelSchema::from_tags(tags)?;
    let mut chars = char_vocabulary(&[&train_set]);
    if let Some(t) = &char_emb {
        chars.extend(t.tokens().iter().filter(|c| c.chars().count() == 1).cloned());
        chars.sort();
        chars.dedup();
    }
    let mut rng = ModelRng::seed_from_u64(cfg.seed);
    let pretrained = Pretrained {
        chars: char_emb.as_ref(),
        words: word_emb.as_ref(),
    };
    let mut model = Nflat::<T>::new(cfg, schema, chars, &lexicon, pretrained, &mut rng)?;
    let mut metrics = create(&a.metrics)?;
    let report = train(
        &mut model,
        &train_set,
        &dev_set,
        TrainOptions {
            workers,
            metrics: Some(&mut metrics),
        },
    )?;
    metrics.flush().map_err(|e| Error::io(&a.metrics, e))?;
    checkpoint::save(&model, &a.out)?;
    let dev = report.best_dev.as_ref().map_or("n/a".to_string(), |r| format!("{:.4}", r.f1()));
    println!(
        "epochs run: {}  best epoch: {}  dev F1: {dev}  checkpoint: {}",
        report.epochs.len(),
        report.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, workers: usize) -> Result<(), Error> {
    let data = read_conll(&a.data)?;
    let report = match checkpoint::load_any(&a.model)? {
        AnyModel::F32(m) => evaluate(&m, &data, workers)?,
        AnyModel::F64(m) => evaluate(&m, &data, workers)?,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String, Error> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(|e| Error::io("<stdin>", e))?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| Error::io(path, e))
    }
}

fn cmd_predict(a: &PredictArgs, workers: usize) -> Result<(), Error> {
    let text = read_input(&a.input)?;
    let origin = a.input.display().to_string();
    let sentences: Vec<Sentence> = if a.raw {
        parse_raw(&text)
    } else if a.conll {
        parse_conll(&text, &origin)?
    } else {
        parse_conll(&text, &origin).unwrap_or_else(|_| parse_raw(&text))
    };
    let tags = match checkpoint::load_any(&a.model)? {
        AnyModel::F32(m) => predict_corpus(&m, &sentences, workers)?,
        AnyModel::F64(m) => predict_corpus(&m, &sentences, workers)?,
    };
    let write = |out: &mut dyn Write| -> io::Result<()> {
        let mut w = BufWriter::new(out);
        write_tagged(&mut w, &sentences, &tags)?;
        w.flush()
    };
    match &a.out {
        Some(p) => {
            let mut f = File::create(p).map_err(|e| Error::io(p, e))?;
            write(&mut f).map_err(|e| Error::io(p, e))
        }
        None => write(&mut io::stdout().lock()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn max_len(cli: &Cli, flag: Option<usize>) -> Result<usize, Error> {
    let len = flag.unwrap_or(base_config(cli)?.max_match_len);
    if len < 2 {
        return Err(Error::Config("max match length must be at least 2".into()));
    }
    Ok(len)
}

fn cmd_match(cli: &Cli, a: &MatchArgs) -> Result<(), Error> {
    let trie = build_trie(&read_lexicon(&a.lexicon)?)?;
    let max = max_len(cli, a.max_len)?;
    let texts: Vec<Vec<char>> = match (&a.text, &a.input) {
        (Some(t), _) => vec![t.chars().filter(|c| !c.is_whitespace()).collect()],
        (None, Some(p)) => parse_raw(&read_input(p)?).into_iter().map(|s| s.chars).collect(),
        (None, None) => unreachable!("clap requires --text or --input"),
    };
    let mut out = BufWriter::new(io::stdout().lock());
    for (k, chars) in texts.iter().enumerate() {
        if k > 0 {
            writeln!(out).map_err(|e| Error::io("<stdout>", e))?;
        }
        for w in match_words(&trie, chars, max) {
            writeln!(out, "{} {} {}", w.surface, w.head, w.tail).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    out.flush().map_err(|e| Error::io("<stdout>", e))
}

fn cmd_stats(cli: &Cli, a: &StatsArgs) -> Result<(), Error> {
    let trie = build_trie(&read_lexicon(&a.lexicon)?)?;
    let max = max_len(cli, a.max_len)?;
    println!("lexicon words\t{}", trie.word_count());
    for path in &a.data {
        let corpus: Vec<Vec<char>> = read_conll(path)?.into_iter().map(|s| s.chars).collect();
        println!("# {}", path.display());
        println!("{}", match_stats(&corpus, &trie, max));
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<(), Error> {
    let cfg = BenchConfig {
        lengths: a.lengths.clone(),
        density: a.density,
        reps: a.reps,
        d_model: a.d_model,
        heads: a.heads,
        seed: base_config(cli)?.seed,
        budget: a.budget_bytes,
        ..BenchConfig::default()
    };
    let records = run_bench(&cfg)?;
    let mut csv = create(&a.out)?;
    write_csv(&mut csv, &records)
        .and_then(|_| csv.flush())
        .map_err(|e| Error::io(&a.out, e))?;
    let mut meta_path = a.out.clone().into_os_string();
    meta_path.push(".meta.json");
    let meta_path = PathBuf::from(meta_path);
    let meta = serde_json::to_string_pretty(&metadata(&cfg)).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
    if let Some(p) = &a.plot {
        fs::write(p, render_svg(&records)).map_err(|e| Error::io(p, e))?;
    }
    write_csv(&mut io::stdout().lock(), &records).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Result<(), Error> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed: cli.seed.unwrap_or(defaults.seed),
        alphabet: a.alphabet,
        entity_types: a.entity_types,
        vocab: a.vocab,
        train: a.train_size,
        dev: a.dev_size,
        test: a.test_size,
        ..defaults
    };
    let corpus = gen_synthetic(&cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (name, split) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let path = a.out_dir.join(format!("{name}.conll"));
        let mut f = create(&path)?;
        write_conll(&mut f, split)
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    let lex = a.out_dir.join("lexicon.txt");
    fs::write(&lex, corpus.lexicon.join("\n") + "\n").map_err(|e| Error::io(&lex, e))?;
    println!(
        "wrote {} train, {} dev, {} test sentences and {} lexicon words to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.lexicon.len(),
        a.out_dir.display()
    );
    Ok(())
}
