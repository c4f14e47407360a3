//! Command-line front end: `prep`, `synth`, `train`, `eval`, `prune`,
//! `bench` and `plotdata`.
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 data or I/O, 4 numeric.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::bench::{
    bench_model_step, bench_sparsity_sweep, bench_temporal, parse_results_csv, plot_series, results_csv, StepConfig,
    TemporalGrid, Timing,
};
use crate::data::{ingest, split_leave_one_out, synth_generate, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, DEFAULT_LENGTH_BOUNDARIES, REPORT_CUTOFFS};
use crate::model::load_checkpoint;
use crate::positional::{flops_count, generate_sparse_mask, SparseMask};
use crate::training::{train, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "decayrec", version, about = "Sequential recommender with a decaying temporal kernel and diagonal-sparse positional pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a `user<TAB>item<TAB>timestamp` log into a prepared dataset directory
    Prep(PrepArgs),
    /// Generate the planted-pattern synthetic corpus
    Synth(SynthArgs),
    /// Train a model, writing config, metrics and per-epoch checkpoints
    Train(TrainArgs),
    /// Score a checkpoint on the validation or test split
    Eval(EvalArgs),
    /// Build per-layer diagonal-sparse masks for a checkpoint and report FLOPs
    Prune(PruneArgs),
    /// Run latency benchmarks and write CSV tables
    Bench(BenchArgs),
    /// Reshape benchmark CSVs into per-series plot files
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Raw interaction log
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for dataset.tsv, vocab.tsv and split.txt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON corpus settings; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for dataset.tsv, vocab.tsv, split.txt and synth.json
    #[arg(long)]
    pub out: PathBuf,
    /// Number of users
    #[arg(long)]
    pub users: Option<usize>,
    /// Model vocabulary size including padding
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Generator seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shortest sequence
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Longest sequence
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Longest burst of closely spaced interactions
    #[arg(long)]
    pub max_burst: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prepared dataset directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Maximum sequence length
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Hidden width
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Feed-forward width
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    /// Number of blocks
    #[arg(long)]
    pub layers: Option<usize>,
    /// Dropout rate
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Sampled negatives per position
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Temporal kernel base
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Temporal kernel offset
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Enable the temporal channel
    #[arg(long)]
    pub temporal_channel: Option<bool>,
    /// Enable the positional channel
    #[arg(long)]
    pub positional_channel: Option<bool>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// First-moment decay
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Second-moment decay
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Optimizer epsilon
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Decoupled weight decay
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Sequences per batch
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation NDCG@10 improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Run seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    pub threads: Option<usize>,
    /// Block side used by `prune`
    #[arg(long)]
    pub stride: Option<usize>,
    /// Pruning ratio used by `prune`
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prepared dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Which held-out item to rank
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Mask file; give one for every layer, or one shared by all layers
    #[arg(long)]
    pub mask: Vec<PathBuf>,
    /// Remove already-seen items from the candidates
    #[arg(long)]
    pub exclude_history: bool,
    /// Write the `metric,K,value` table here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-history-length metrics at K=10
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Block side length
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Fraction of leftmost blocks (and their diagonals) to prune
    #[arg(long, default_value_t = 0.6)]
    pub tau: f64,
    /// Mask directory [default: <run>/masks for <run>/checkpoints/epoch_K]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Temporal,
    Model,
    Sparsity,
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output directory for the CSV tables
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
    /// Which benchmarks to run
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    /// Sequence lengths for the encoder sweep
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1000")]
    pub lengths: Vec<usize>,
    /// Batch size for the sequence-length sweep
    #[arg(long, default_value_t = 8)]
    pub length_batch: usize,
    /// Batch sizes for the encoder sweep
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub batches: Vec<usize>,
    /// Sequence length for the batch sweep
    #[arg(long, default_value_t = 256)]
    pub batch_length: usize,
    /// Sequence lengths for model step timing
    #[arg(long, value_delimiter = ',', default_value = "50,200")]
    pub model_lengths: Vec<usize>,
    /// Hidden width for model step timing
    #[arg(long, default_value_t = 50)]
    pub hidden: usize,
    /// Blocks for model step timing
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Sequence length for the sparse mat-vec sweep
    #[arg(long, default_value_t = 1024)]
    pub sparse_n: usize,
    /// Pruning ratios for the sparse mat-vec sweep
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8")]
    pub taus: Vec<f64>,
    /// Block side length
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Pruning ratio for model step timing
    #[arg(long, default_value_t = 0.6)]
    pub tau: f64,
    /// Untimed iterations per case
    #[arg(long, default_value_t = 5)]
    pub warmups: usize,
    /// Timed iterations per case
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Run encoder batches on the thread pool (reported as separate cases)
    #[arg(long)]
    pub parallel: bool,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Seed for the random inputs
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Benchmark CSV files
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory for the series files
    #[arg(long)]
    pub out: PathBuf,
}

/// The full command definition, with configuration defaults appended to
/// the help of every override flag.
pub fn command() -> clap::Command {
    let run = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let synth = serde_json::to_value(SynthConfig::default()).expect("config serializes");
    Cli::command()
        .mut_subcommand("train", |c| annotate_defaults(c, &run))
        .mut_subcommand("synth", |c| annotate_defaults(c, &synth))
}

fn annotate_defaults(mut cmd: clap::Command, defaults: &serde_json::Value) -> clap::Command {
    let ids: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    for id in ids {
        if let Some(v) = defaults.get(&id).filter(|v| !v.is_null()) {
            let v = v.to_string();
            cmd = cmd.mut_arg(&id, |a| {
                let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
                a.help(format!("{help} [default: {v}]"))
            });
        }
    }
    cmd
}

/// Top-level help followed by the help of every subcommand.
pub fn help_text() -> String {
    let mut cmd = command();
    cmd.build();
    let mut out = cmd.render_long_help().to_string();
    for name in ["prep", "synth", "train", "eval", "prune", "bench", "plotdata"] {
        let sub = cmd.find_subcommand_mut(name).expect("declared subcommand");
        out.push_str(&format!("\n==> decayrec {name} --help\n"));
        out.push_str(&sub.render_long_help().to_string());
    }
    out
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prep(a) => prep(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train_command(&a),
        Command::Eval(a) => eval_command(&a),
        Command::Prune(a) => prune(&a),
        Command::Bench(a) => bench(&a),
        Command::Plotdata(a) => plotdata(&a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Error::Config("threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn describe(ds: &Dataset) -> String {
    let split = split_leave_one_out(&ds.sequences);
    format!(
        "{} users, {} items, {} interactions, {} evaluation users",
        ds.sequences.len(),
        ds.vocab.len(),
        ds.interaction_count(),
        split.test.len()
    )
}

fn prep(a: &PrepArgs) -> Result<()> {
    let ds = ingest(&a.input)?;
    ds.save_dir(&a.out)?;
    println!("{}: {}", a.out.display(), describe(&ds));
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    macro_rules! overrides {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    overrides!(users, vocab, seed, min_len, max_len, max_burst);
    let corpus = synth_generate(&cfg)?;
    corpus.dataset.save_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    write_file(&a.out.join("synth.json"), &json)?;
    println!("{}: {}", a.out.display(), describe(&corpus.dataset));
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn effective_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! overrides {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    overrides!(
        max_len,
        hidden,
        ffn_hidden,
        layers,
        dropout,
        negatives,
        gamma,
        epsilon,
        temporal_channel,
        positional_channel,
        lr,
        beta1,
        beta2,
        adam_eps,
        weight_decay,
        batch_size,
        epochs,
        patience,
        seed,
        threads,
        stride,
        tau
    );
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(r) = &a.run_dir {
        cfg.run_dir = Some(r.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_command(a: &TrainArgs) -> Result<()> {
    let cfg = effective_run_config(a)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set `data` in the config".into()))?;
    let run_dir = cfg
        .run_dir
        .clone()
        .ok_or_else(|| Error::Config("no run directory: pass --run-dir or set `run_dir` in the config".into()))?;
    let ds = Dataset::load_dir(&data)?;
    let split = split_leave_one_out(&ds.sequences);
    write_file(&run_dir.join("config.json"), &cfg.to_json())?;
    let outcome = train(&split, ds.vocab.model_size(), &cfg, Some(&run_dir), |row| {
        println!(
            "epoch {:>3}  loss {:.4}  valid hr@10 {:.4}  ndcg@10 {:.4}  mrr {:.4}",
            row.epoch, row.loss, row.hr10, row.ndcg10, row.mrr
        );
        let _ = std::io::stdout().flush();
    })?;
    println!(
        "best epoch {}{}; checkpoints in {}",
        outcome.best_epoch,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        run_dir.join("checkpoints").display()
    );
    Ok(())
}

/// Loads mask files for a model with `layers` blocks and length `n`.
pub fn load_masks(paths: &[PathBuf], layers: usize, n: usize) -> Result<Option<Vec<SparseMask>>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let loaded: Vec<SparseMask> = paths.iter().map(|p| SparseMask::load(p)).collect::<Result<_>>()?;
    let masks = match loaded.len() {
        1 => vec![loaded[0].clone(); layers],
        k if k == layers => loaded,
        k => {
            return Err(Error::Config(format!(
                "{k} mask files for a {layers}-layer model; give 1 or {layers}"
            )))
        }
    };
    if let Some(m) = masks.iter().find(|m| m.grid.n != n) {
        return Err(Error::Config(format!("mask built for n={} but the model uses n={n}", m.grid.n)));
    }
    Ok(Some(masks))
}

fn eval_command(a: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = ckpt.model;
    let ds = Dataset::load_dir(&a.data)?;
    if ds.vocab.model_size() != model.config.vocab {
        return Err(Error::Data(format!(
            "dataset has {} items but the checkpoint expects {}",
            ds.vocab.len(),
            model.config.vocab - 1
        )));
    }
    let masks = load_masks(&a.mask, model.config.layers, model.config.max_len)?;
    let split = split_leave_one_out(&ds.sequences);
    let cases = match a.split {
        SplitName::Valid => &split.valid,
        SplitName::Test => &split.test,
    };
    let options = EvalOptions {
        exclude_history: a.exclude_history,
        parallel: a.threads > 1,
    };
    let evaluation = thread_pool(a.threads)?.install(|| evaluate(&model, cases, masks.as_deref(), options))?;
    let csv = evaluation.to_csv(&REPORT_CUTOFFS)?;
    match &a.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &a.groups {
        write_file(path, &evaluation.groups_to_csv(&DEFAULT_LENGTH_BOUNDARIES, 10)?)?;
    }
    Ok(())
}

fn default_mask_dir(checkpoint: &Path) -> PathBuf {
    match checkpoint.parent() {
        Some(parent) if parent.file_name().is_some_and(|n| n == "checkpoints") => {
            parent.parent().unwrap_or(Path::new(".")).join("masks")
        }
        _ => checkpoint.join("masks"),
    }
}

fn prune(a: &PruneArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?.model;
    let out = a.out.clone().unwrap_or_else(|| default_mask_dir(&a.checkpoint));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let n = model.config.max_len;
    let mut report = String::from("layer,kept_blocks,dense_blocks,reduction_percent\n");
    for (l, w) in model.positional_maps()?.iter().enumerate() {
        let mask = generate_sparse_mask(w, a.stride, a.tau)?;
        mask.save(&out.join(format!("layer_{l}.mask")))?;
        let f = flops_count(n, a.stride, &mask)?;
        report.push_str(&format!("{l},{},{},{:.4}\n", f.kept_blocks, f.dense_blocks, f.reduction_percent));
    }
    write_file(&out.join("flops.csv"), &report)?;
    print!("{report}");
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let timing = Timing {
        warmups: a.warmups,
        repetitions: a.reps,
    };
    timing.validate()?;
    let pool = thread_pool(a.threads)?;
    let run_temporal = matches!(a.suite, Suite::Temporal | Suite::All);
    let run_model = matches!(a.suite, Suite::Model | Suite::All);
    let run_sparsity = matches!(a.suite, Suite::Sparsity | Suite::All);
    let emit = |name: &str, rows: &[crate::bench::BenchResult]| -> Result<()> {
        let csv = results_csv(rows);
        write_file(&a.out.join(name), &csv)?;
        print!("{csv}");
        Ok(())
    };
    if run_temporal {
        let grid = TemporalGrid {
            lengths: a.lengths.clone(),
            length_batch: a.length_batch,
            batches: a.batches.clone(),
            batch_length: a.batch_length,
        };
        let mut rows = bench_temporal(&grid, timing, false, a.seed)?;
        if a.parallel {
            rows.extend(pool.install(|| bench_temporal(&grid, timing, true, a.seed))?);
        }
        emit("temporal.csv", &rows)?;
    }
    if run_model {
        let configs: Vec<StepConfig> = a
            .model_lengths
            .iter()
            .map(|&n| StepConfig {
                n,
                hidden: a.hidden,
                layers: a.layers,
            })
            .collect();
        emit("model.csv", &bench_model_step(&configs, a.stride, a.tau, timing, a.seed)?)?;
    }
    if run_sparsity {
        emit(
            "sparsity.csv",
            &bench_sparsity_sweep(a.sparse_n, a.stride, &a.taus, timing, a.seed)?,
        )?;
    }
    Ok(())
}

fn plotdata(a: &PlotArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.input {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        rows.extend(parse_results_csv(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?);
    }
    let files = plot_series(&rows);
    for (name, text) in &files {
        write_file(&a.out.join(name), text)?;
    }
    println!("{} series files in {}", files.len(), a.out.display());
    Ok(())
}
