//! `kgcn` command-line tool: preprocess, train, evaluate, sweep, predict.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kgcn::data::{preprocess, split, Delimiter, InteractionDataset, PreprocessInputs, RatingsFormat, SplitDataset, KG_FILE, RATINGS_FILE};
use kgcn::eval::{ctr_eval, rank_candidates, topk_eval, DEFAULT_K_LIST};
use kgcn::kg::{load_kg, KnowledgeGraph, NeighborSample};
use kgcn::numerics::{load_checkpoint, save_checkpoint, ParameterStore};
use kgcn::synthetic::{generate, SyntheticConfig};
use kgcn::train::{build_sample, sweep, sweep_csv, train_and_evaluate, SweepParameter};
use kgcn::{Aggregator, Error, ModelConfig, ModelSpec, Predictor, TrainConfig};

#[derive(Parser)]
#[command(name = "kgcn", version, about = "Knowledge-graph convolutional recommender")]
struct Cli {
    /// Worker threads for batch-parallel work; 1 is bit-exact reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw ratings, an item-to-entity map and a raw KG into indexed files.
    Preprocess(PreprocessArgs),
    /// Train and test one or more seeded runs.
    Train(TrainArgs),
    /// Score a checkpoint on its held-out data.
    Evaluate(EvaluateArgs),
    /// Train one model per value of K, H or d.
    Sweep(SweepArgs),
    /// Rank items for one user.
    Predict(PredictArgs),
    /// Write a generated dataset whose labels follow KG attributes.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    ratings: PathBuf,
    /// tab, comma, semicolon, whitespace or "::".
    #[arg(long, default_value = "tab")]
    delimiter: String,
    #[arg(long)]
    skip_header: bool,
    #[arg(long)]
    item2entity: PathBuf,
    #[arg(long)]
    kg: PathBuf,
    /// Keep ratings at or above this value; all ratings when unset.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Kgcn,
    Mf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Indexed ratings (`user item label`).
    #[arg(long)]
    ratings: PathBuf,
    /// Indexed KG (`head relation tail`).
    #[arg(long)]
    kg: PathBuf,
    #[arg(long = "K", default_value_t = 8)]
    k: usize,
    #[arg(long = "d", default_value_t = 16)]
    d: usize,
    #[arg(long = "H", default_value_t = 1)]
    h: usize,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 5e-4)]
    eta: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "sum")]
    aggregator: AggregatorArg,
    /// Uniform neighbor weights (KGCN-avg).
    #[arg(long)]
    uniform_weights: bool,
    #[arg(long, value_enum, default_value = "kgcn")]
    model: ModelKind,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train/validation/test proportions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [6.0, 2.0, 2.0])]
    split: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregatorArg {
    Sum,
    Concat,
    Neighbor,
}

impl From<AggregatorArg> for Aggregator {
    fn from(a: AggregatorArg) -> Self {
        match a {
            AggregatorArg::Sum => Aggregator::Sum,
            AggregatorArg::Concat => Aggregator::Concat,
            AggregatorArg::Neighbor => Aggregator::Neighbor,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Seeded runs; run r uses seed + r.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ctr,
    Topk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Validation,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "ctr")]
    mode: Mode,
    #[arg(long = "set", value_enum, default_value = "test")]
    part: Part,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_K_LIST)]
    k_list: Vec<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// K, H or d.
    #[arg(long)]
    parameter: String,
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    /// Also write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    user: usize,
    /// `all` or a comma-separated list of item indices.
    #[arg(long, default_value = "all")]
    items: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 50)]
    genres: usize,
    #[arg(long, default_value_t = 10)]
    eras: usize,
    #[arg(long, default_value_t = 8)]
    positives_per_user: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Written next to every checkpoint; everything needed to rebuild the
/// split and the neighbor sample.
#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    spec: ModelSpec,
    sample_size: usize,
    sample_seed: u64,
    split_seed: u64,
    split_ratios: [f64; 3],
    train: TrainConfig,
    ratings: PathBuf,
    kg: PathBuf,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

impl RunArgs {
    fn ratios(&self) -> Result<[f64; 3]> {
        <[f64; 3]>::try_from(self.split.as_slice()).map_err(|_| config_error("--split takes three proportions"))
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.d,
            depth: self.h,
            sample_size: self.k,
            aggregator: self.aggregator.into(),
            uniform_weights: self.uniform_weights,
        }
    }

    fn spec(&self) -> Result<ModelSpec> {
        let spec = match self.model {
            ModelKind::Kgcn => ModelSpec::Kgcn(self.model_config()),
            ModelKind::Mf if self.uniform_weights => {
                return Err(config_error("--uniform-weights only applies to --model kgcn"))
            }
            ModelKind::Mf => ModelSpec::MatrixFactorization { dim: self.d },
        };
        spec.validate()?;
        if self.k == 0 {
            return Err(config_error("K must be at least 1"));
        }
        Ok(spec)
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.eta,
            l2_weight: self.lambda,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            seed,
            eval_every: self.eval_every,
        }
    }
}

fn load_inputs(ratings: &Path, kg: &Path) -> Result<(InteractionDataset, KnowledgeGraph)> {
    let dataset = InteractionDataset::load(ratings)?;
    let kg = load_kg(kg)?;
    log::info!(
        "loaded {} records ({} users, {} items), {} triples",
        dataset.len(),
        dataset.num_users,
        dataset.num_items,
        kg.triples.len()
    );
    Ok((dataset, kg))
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let delimiter: Delimiter = args.delimiter.parse()?;
    let out = preprocess(&PreprocessInputs {
        ratings: &args.ratings,
        format: RatingsFormat {
            delimiter,
            skip_header: args.skip_header,
        },
        item_mapping: &args.item2entity,
        kg: &args.kg,
        threshold: args.threshold,
        seed: args.seed,
    })?;
    if out.dropped_records > 0 {
        log::warn!("dropped {} ratings of items without an entity", out.dropped_records);
    }
    out.write(&args.out)?;
    println!("{}", out.stats);
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = &args.run;
    if args.repeat == 0 {
        return Err(config_error("--repeat must be at least 1"));
    }
    let spec = run.spec()?;
    let ratios = run.ratios()?;
    run.train_config(run.seed).validate()?;
    let (dataset, kg) = load_inputs(&run.ratings, &run.kg)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ratings = fs::canonicalize(&run.ratings)?;
    let kg_path = fs::canonicalize(&run.kg)?;

    let mut summary = String::from("run,seed,test_auc,test_f1,best_epoch\n");
    let (mut aucs, mut f1s) = (Vec::new(), Vec::new());
    for r in 0..args.repeat {
        let seed = run.seed.wrapping_add(r as u64);
        let cfg = run.train_config(seed);
        let parts = split(&dataset, ratios, seed)?;
        let sample = build_sample(&kg, parts.train.num_items, run.k, seed)?;
        let trained = train_and_evaluate(&parts, &sample, &spec, &cfg)?;

        let ckpt = args.out.join(format!("run{r}.ckpt"));
        save_checkpoint(&ckpt, &trained.params, spec.architecture())?;
        let meta = RunMeta {
            spec,
            sample_size: run.k,
            sample_seed: seed,
            split_seed: seed,
            split_ratios: ratios,
            train: cfg,
            ratings: ratings.clone(),
            kg: kg_path.clone(),
        };
        let meta_path = ckpt.with_extension("json");
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
            .with_context(|| format!("writing {}", meta_path.display()))?;
        let report_path = args.out.join(format!("run{r}_report.csv"));
        fs::write(&report_path, trained.report.to_csv())
            .with_context(|| format!("writing {}", report_path.display()))?;

        let best = trained.report.best_epoch.map_or(String::new(), |e| e.to_string());
        summary.push_str(&format!("{r},{seed},{:.6},{:.6},{best}\n", trained.test.auc, trained.test.f1));
        println!("run {r} (seed {seed}): test AUC {:.4}, F1 {:.4}", trained.test.auc, trained.test.f1);
        aucs.push(trained.test.auc);
        f1s.push(trained.test.f1);
    }
    let (auc_mean, auc_std) = mean_std(&aucs);
    let (f1_mean, f1_std) = mean_std(&f1s);
    summary.push_str(&format!("mean,,{auc_mean:.6},{f1_mean:.6},\nstd,,{auc_std:.6},{f1_std:.6},\n"));
    let summary_path = args.out.join("summary.csv");
    fs::write(&summary_path, summary).with_context(|| format!("writing {}", summary_path.display()))?;
    println!(
        "{} run(s): test AUC {auc_mean:.4} ± {auc_std:.4}, F1 {f1_mean:.4} ± {f1_std:.4}",
        args.repeat
    );
    Ok(())
}

/// A checkpoint with the split and neighbor sample it was trained on.
struct Loaded {
    meta: RunMeta,
    params: ParameterStore,
    parts: SplitDataset,
    sample: NeighborSample,
}

fn load_run(checkpoint: &Path) -> Result<Loaded> {
    let (params, arch) = load_checkpoint(checkpoint)?;
    let meta_path = checkpoint.with_extension("json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::Io {
        path: meta_path.clone(),
        source: e,
    })?;
    let meta: RunMeta =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", meta_path.display())))?;
    if meta.spec.architecture() != arch {
        return Err(Error::Checkpoint(format!("{} does not match its metadata", checkpoint.display())).into());
    }
    let (dataset, kg) = load_inputs(&meta.ratings, &meta.kg)?;
    let parts = split(&dataset, meta.split_ratios, meta.split_seed)?;
    let sample = build_sample(&kg, parts.train.num_items, meta.sample_size, meta.sample_seed)?;
    Ok(Loaded {
        meta,
        params,
        parts,
        sample,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let run = load_run(&args.checkpoint)?;
    let predictor = Predictor::new(&run.meta.spec, &run.params, &run.sample)?;
    let held_out = match args.part {
        Part::Validation => &run.parts.validation,
        Part::Test => &run.parts.test,
    };
    match args.mode {
        Mode::Ctr => {
            let report = ctr_eval(&predictor, held_out)?;
            println!("AUC\t{:.6}\nF1\t{:.6}", report.auc, report.f1);
        }
        Mode::Topk => {
            let report = topk_eval(&predictor, &run.parts.train, held_out, run.parts.train.num_items, &args.k_list)?;
            log::info!("Recall@k over {} users", report.users);
            println!("k,recall");
            for (k, r) in report.k_list.iter().zip(&report.recall) {
                println!("{k},{r:.6}");
            }
        }
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let run = &args.run;
    let parameter: SweepParameter = args.parameter.parse()?;
    if run.model != ModelKind::Kgcn {
        return Err(config_error("sweeps apply to --model kgcn"));
    }
    if args.values.is_empty() {
        return Err(config_error("--values needs at least one value"));
    }
    let base = run.model_config();
    let cfg = run.train_config(run.seed);
    cfg.validate()?;
    let ratios = run.ratios()?;
    let (dataset, kg) = load_inputs(&run.ratings, &run.kg)?;
    let parts = split(&dataset, ratios, run.seed)?;
    let rows = sweep(&parts, &kg, &base, &cfg, run.seed, parameter, &args.values)?;
    let csv = sweep_csv(&rows);
    if let Some(path) = &args.out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let run = load_run(&args.checkpoint)?;
    let predictor = Predictor::new(&run.meta.spec, &run.params, &run.sample)?;
    if args.user >= predictor.num_users() {
        return Err(Error::Data(format!("unknown user {} ({} users)", args.user, predictor.num_users())).into());
    }
    let num_items = run.parts.train.num_items;
    let mut ranked = if args.items == "all" {
        rank_candidates(&predictor, args.user, &Default::default(), num_items)?
    } else {
        let mut scored = Vec::new();
        for token in args.items.split(',') {
            let item: usize = token
                .trim()
                .parse()
                .map_err(|_| config_error(format!("bad item index `{token}`")))?;
            scored.push((item, predictor.predict(args.user, item)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored
    };
    ranked.truncate(args.k);
    println!("item\tscore");
    for (item, score) in ranked {
        println!("{item}\t{score:.6}");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let data = generate(&SyntheticConfig {
        users: args.users,
        items: args.items,
        genres: args.genres,
        eras: args.eras,
        positives_per_user: args.positives_per_user,
        seed: args.seed,
    })?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    data.dataset.write(&args.out.join(RATINGS_FILE))?;
    data.kg.write(&args.out.join(KG_FILE))?;
    println!(
        "{} records, {} users, {} items, {} triples",
        data.dataset.len(),
        data.dataset.num_users,
        data.dataset.num_items,
        data.kg.triples.len()
    );
    Ok(())
}

/// 1 usage/config, 2 data or I/O, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::NonFinite(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
