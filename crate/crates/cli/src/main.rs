//! `mlpbank` — train, verify and benchmark fused banks of independent
//! single-hidden-layer MLPs on CPU.
//!
//! Subcommands:
//! - `bench`: run the (samples × features × batch size) timing grid with
//!   the parallel (fused) and/or sequential strategies and emit the
//!   blocked result tables.
//! - `verify`: run the correctness suites (scatter-add oracle, finite
//!   difference gradchecks, fusion/trajectory equivalence, independence).
//! - `train`: train a bank described by a spec file or grid expression on
//!   a synthetic dataset and print the per-model loss ranking.
//!
//! Exit codes: 0 success, 1 usage error, 2 verification failure,
//! 3 runtime error.

mod spec_file;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use mlpbank_core::bench::{run_bench_grid, BenchConfig, Strategy};
use mlpbank_core::datagen::{synth_dataset, Task};
use mlpbank_core::scalar::{DType, Scalar};
use mlpbank_core::trainer::{train_fused, LossKind, TrainConfig};
use mlpbank_core::verify;
use mlpbank_core::{report, Error, FusedBank, InitConfig, Result, SequentialMlp};
use spec_file::{model_coordinates, resolve_models_arg, BankPopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Md,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Md),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv, md or json)")),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mlpbank", version, about = "Fused training of many independent MLPs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the benchmark grid and emit blocked result tables.
    Bench(BenchArgs),
    /// Run the verification suites.
    Verify(VerifyArgs),
    /// Train a bank and rank its models by final loss.
    Train(TrainArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,1000")]
    samples: Vec<usize>,
    /// Feature counts, comma separated (each becomes the bank's input width).
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    features: Vec<usize>,
    /// Batch sizes, comma separated.
    #[arg(long = "batch-sizes", value_delimiter = ',', default_value = "32,256")]
    batch_sizes: Vec<usize>,
    /// Spec file path or WIDTHS:ACTS:REPEATS grid expression.
    #[arg(long, default_value = "1-100:all:1")]
    models: String,
    /// Output width of every model (overridden by a spec file's out_dim).
    #[arg(long, default_value_t = 2)]
    outputs: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    /// Leading epochs timed but excluded from the reported means.
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// mse or xent.
    #[arg(long, default_value = "mse")]
    loss: LossKind,
    #[arg(long)]
    seed: Option<u64>,
    /// Kernel thread count (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// f32 or f64.
    #[arg(long, default_value = "f32")]
    dtype: DType,
    /// parallel, sequential or both.
    #[arg(long, default_value = "both")]
    strategy: Strategy,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, md or json.
    #[arg(long, default_value = "md")]
    format: Format,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Run only suites whose name contains this substring (repeatable).
    #[arg(long)]
    suite: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Spec file path or WIDTHS:ACTS:REPEATS grid expression.
    #[arg(long)]
    models: String,
    /// Input width; required unless the spec file declares in_dim.
    #[arg(long)]
    features: Option<usize>,
    /// Output width; required unless the spec file declares out_dim.
    #[arg(long)]
    outputs: Option<usize>,
    /// Synthetic dataset size.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// mse (regression targets) or xent (classification targets).
    #[arg(long, default_value = "mse")]
    loss: LossKind,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    /// Also write the ranking to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, md or json.
    #[arg(long, default_value = "md")]
    format: Format,
    /// Write the best model's parameters to this JSON file.
    #[arg(long = "dump-best")]
    dump_best: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse(_) | Error::Config(_) | Error::Build(_) => 1,
                _ => 3,
            }
        }
    };
    std::process::exit(code);
}

fn print_rendered(text: &str) {
    if text.ends_with('\n') {
        print!("{text}");
    } else {
        println!("{text}");
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Train(args) => cmd_train(args),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    init_threads(args.threads)?;
    let pop = resolve_models_arg(&args.models)?;
    let cfg = BenchConfig {
        samples: args.samples,
        features: args.features,
        batch_sizes: args.batch_sizes,
        specs: pop.specs.clone(),
        out_dim: pop.out_dim.unwrap_or(args.outputs),
        epochs: args.epochs,
        warmup: args.warmup,
        lr: args.lr,
        loss: args.loss,
        seed: args.seed.or(pop.seed).unwrap_or(42),
        biases: pop.biases,
        strategy: args.strategy,
        mem_limit_bytes: None,
    };
    let bench = match args.dtype {
        DType::F32 => run_bench_grid::<f32>(&cfg)?,
        DType::F64 => run_bench_grid::<f64>(&cfg)?,
    };
    let rendered = match args.format {
        Format::Csv => report::to_csv(&bench),
        Format::Md => report::to_markdown(&bench),
        Format::Json => report::to_json(&bench),
    };
    print_rendered(&rendered);
    if let Some(path) = args.out {
        std::fs::write(&path, &rendered)?;
        eprintln!("report written to {}", path.display());
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    init_threads(args.threads)?;
    let outcomes: Vec<_> = verify::run_all()
        .into_iter()
        .filter(|o| args.suite.is_empty() || args.suite.iter().any(|s| o.name.contains(s)))
        .collect();
    if outcomes.is_empty() {
        return Err(Error::Config(format!(
            "no suite matches {:?} (available: scatter-add oracle, activation gradcheck, \
             bank gradcheck, fusion equivalence, independence perturbation, trajectory equivalence)",
            args.suite
        )));
    }
    let mut all_ok = true;
    println!("{:<28} {:>12} {:>10}  status", "suite", "max dev", "tolerance");
    for o in &outcomes {
        println!(
            "{:<28} {:>12.3e} {:>10.0e}  {}",
            o.name,
            o.max_dev,
            o.tol,
            if o.passed { "pass" } else { "FAIL" }
        );
        if !o.passed {
            eprintln!("  {}: {}", o.name, o.detail);
            all_ok = false;
        }
    }
    Ok(if all_ok { 0 } else { 2 })
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    init_threads(args.threads)?;
    let pop = resolve_models_arg(&args.models)?;
    let in_dim = pop.in_dim.or(args.features).ok_or_else(|| {
        Error::Config("grid expressions need --features for the input width".into())
    })?;
    let out_dim = pop.out_dim.or(args.outputs).unwrap_or(2);
    let seed = args.seed.or(pop.seed).unwrap_or(42);
    match args.dtype {
        DType::F32 => train_and_rank::<f32>(&args, &pop, in_dim, out_dim, seed),
        DType::F64 => train_and_rank::<f64>(&args, &pop, in_dim, out_dim, seed),
    }
}

fn train_and_rank<T: Scalar>(
    args: &TrainArgs,
    pop: &BankPopulation,
    in_dim: usize,
    out_dim: usize,
    seed: u64,
) -> Result<i32> {
    let task = match args.loss {
        LossKind::Mse => Task::Regression,
        LossKind::SoftmaxCrossEntropy => Task::Classification,
    };
    let data = synth_dataset::<T>(args.samples, in_dim, out_dim, seed, task)?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        epochs: args.epochs,
        warmup_epochs: args.warmup,
        lr: args.lr,
        seed,
        loss: args.loss,
        drop_last: false,
    };
    let init = InitConfig {
        seed,
        biases: pop.biases,
    };
    let mut bank = FusedBank::<T>::build(&pop.specs, in_dim, out_dim, &init)?;
    let outcome = train_fused(&mut bank, &data, &cfg)?;

    let losses = outcome.final_losses();
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        losses[a]
            .partial_cmp(&losses[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let rendered = render_ranking(args.format, pop, losses, &order, outcome.timing.mean_secs());
    print_rendered(&rendered);
    if let Some(path) = &args.out {
        std::fs::write(path, &rendered)?;
        eprintln!("ranking written to {}", path.display());
    }

    if let Some(path) = &args.dump_best {
        let best = bank.extract(order[0])?;
        let json = model_to_json(&best, order[0]);
        std::fs::write(path, json)?;
        eprintln!("best model (id {}) written to {}", order[0], path.display());
    }
    Ok(0)
}

fn render_ranking<T: Scalar>(
    format: Format,
    pop: &BankPopulation,
    losses: &[T],
    order: &[usize],
    mean_epoch_secs: f64,
) -> String {
    let coord = |id: usize| model_coordinates(pop, id);
    match format {
        Format::Md => {
            let mut out = format!(
                "trained {} models ({} widths x {} activations x {} repeats) | mean epoch {:.4}s\n\n| rank | model | width | activation | repeat | final loss |\n|---|---|---|---|---|---|\n",
                losses.len(),
                pop.widths.len(),
                pop.activations.len(),
                pop.repeats,
                mean_epoch_secs
            );
            for (rank, &id) in order.iter().enumerate() {
                let (r, a, w) = coord(id);
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {:.6e} |\n",
                    rank + 1,
                    id,
                    w,
                    a,
                    r,
                    losses[id].to_f64()
                ));
            }
            out
        }
        Format::Csv => {
            let mut out = String::from("rank,model,width,activation,repeat,final_loss\n");
            for (rank, &id) in order.iter().enumerate() {
                let (r, a, w) = coord(id);
                out.push_str(&format!(
                    "{},{},{},{},{},{:.6e}\n",
                    rank + 1,
                    id,
                    w,
                    a,
                    r,
                    losses[id].to_f64()
                ));
            }
            out
        }
        Format::Json => {
            let rows: Vec<serde_json::Value> = order
                .iter()
                .enumerate()
                .map(|(rank, &id)| {
                    let (r, a, w) = coord(id);
                    serde_json::json!({
                        "rank": rank + 1,
                        "model": id,
                        "width": w,
                        "activation": a.name(),
                        "repeat": r,
                        "final_loss": losses[id].to_f64(),
                    })
                })
                .collect();
            serde_json::to_string_pretty(&serde_json::json!({
                "n_models": losses.len(),
                "mean_epoch_secs": mean_epoch_secs,
                "ranking": rows,
            }))
            .expect("ranking serialization cannot fail")
        }
    }
}

fn model_to_json<T: Scalar>(model: &SequentialMlp<T>, id: usize) -> String {
    let flat = |t: &mlpbank_core::Tensor<T>| -> Vec<f64> {
        t.data().iter().map(|v| v.to_f64()).collect()
    };
    serde_json::to_string_pretty(&serde_json::json!({
        "model_id": id,
        "in_dim": model.in_dim(),
        "hidden": model.hidden_dim(),
        "out_dim": model.out_dim(),
        "activation": model.activation().name(),
        "w1": flat(model.w1()),
        "w2": flat(model.w2()),
        "b1": model.b1().map(flat),
        "b2": model.b2().map(flat),
    }))
    .expect("model serialization cannot fail")
}
