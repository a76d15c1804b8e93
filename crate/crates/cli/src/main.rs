//! `pbatch`: quantize models to bitlayers, run and evaluate them under
//! per-layer precision assignments, benchmark kernels, and sweep precision
//! grids with Pareto reporting.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pbatch_core::dense::Matrix;
use pbatch_core::harness::{
    bench_kernels, eval_accuracy, sweep_assignments, BackendFamily, BenchConfig, SweepGrids,
    SweepOptions,
};
use pbatch_core::nn::dataset::{load_csv_dataset, load_idx_dataset, Dataset};
use pbatch_core::nn::format::{load_model_path, save_model_path};
use pbatch_core::nn::{LayerKind, Model, ModelInput, PrecisionAssignment};
use pbatch_core::quantizer::{decompose_bitlayers, reconstruct};

#[derive(Parser)]
#[command(name = "pbatch", version, about = "Bit-serial quantized inference toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize every layer of a model and write the dequantized weights
    /// back out as a new PBM1 file, with per-layer error statistics.
    Quantize {
        /// Input model (PBM1)
        model: PathBuf,
        /// Magnitude bitlayer count per weight matrix
        #[arg(long)]
        bits: u32,
        /// Weight fixed-point fractional bits
        #[arg(long, default_value_t = 16)]
        frac_bits: u32,
        /// Output model path
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one input through a model and print logits and the argmax.
    Infer {
        /// Model (PBM1)
        model: PathBuf,
        /// Input CSV: one row of features for feed-forward models, one row
        /// per timestep for recurrent ones
        input: PathBuf,
        /// Per-layer assignment, e.g. "(4,8),(1,8),f"
        #[arg(long)]
        assignment: String,
    },
    /// Evaluate classification accuracy over a dataset.
    Eval {
        /// Model (PBM1)
        model: PathBuf,
        /// Dataset: a `.csv` path, or an IDX prefix expanded to
        /// `<prefix>-images-idx3-ubyte` / `<prefix>-labels-idx1-ubyte`
        dataset: String,
        /// Per-layer assignment, e.g. "(8,32),(8,32),f"
        #[arg(long)]
        assignment: String,
    },
    /// Benchmark matvec kernels across sizes and precisions.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
        sizes: Vec<usize>,
        #[arg(long = "weight-bits", value_delimiter = ',', default_value = "1,2,4,8")]
        weight_bits: Vec<u32>,
        #[arg(long = "act-bits", value_delimiter = ',', default_value = "8,16,32")]
        act_bits: Vec<u32>,
        #[arg(long, default_value_t = 1000)]
        iters: u64,
        /// Skip the Float16/Int comparison rows
        #[arg(long)]
        no_baselines: bool,
        /// Also write the report as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Exhaustive per-layer precision sweep with Pareto frontier reporting.
    Sweep {
        /// Model (PBM1)
        model: PathBuf,
        /// Dataset (same conventions as `eval`)
        dataset: String,
        #[arg(long = "weight-grid", value_delimiter = ',', default_value = "1,2,4,8")]
        weight_grid: Vec<u32>,
        #[arg(long = "act-grid", value_delimiter = ',', default_value = "8,16,32")]
        act_grid: Vec<u32>,
        #[arg(long = "backend-grid", value_delimiter = ',', default_value = "float,baseline,pbatch")]
        backend_grid: Vec<String>,
        /// Evaluate quality on at most this many samples
        #[arg(long)]
        max_samples: Option<usize>,
        /// Evaluate first-layer subtrees in parallel
        #[arg(long)]
        parallel: bool,
        /// Also write every evaluated point as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Quantize { model, bits, frac_bits, out } => quantize(&model, bits, frac_bits, &out),
        Command::Infer { model, input, assignment } => infer(&model, &input, &assignment),
        Command::Eval { model, dataset, assignment } => eval(&model, &dataset, &assignment),
        Command::Bench { sizes, weight_bits, act_bits, iters, no_baselines, csv } => {
            bench(sizes, weight_bits, act_bits, iters, !no_baselines, csv.as_deref())
        }
        Command::Sweep {
            model,
            dataset,
            weight_grid,
            act_grid,
            backend_grid,
            max_samples,
            parallel,
            csv,
        } => sweep(
            &model,
            &dataset,
            weight_grid,
            act_grid,
            &backend_grid,
            max_samples,
            parallel,
            csv.as_deref(),
        ),
    }
}

fn quantize(model_path: &Path, bits: u32, frac_bits: u32, out: &Path) -> Result<()> {
    let mut model = load_model_path(model_path)?;
    println!("quantizing {} layer(s) to {bits} bit(s), frac_bits {frac_bits}", model.layers.len());
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let mats: Vec<&mut Matrix> = match &mut layer.kind {
            LayerKind::Linear(l) => vec![&mut l.weight],
            LayerKind::Rnn(r) | LayerKind::Lstm(r) => vec![&mut r.w_ih, &mut r.w_hh],
        };
        for (t, w) in mats.into_iter().enumerate() {
            let layer_q = decompose_bitlayers(w, bits, frac_bits)
                .with_context(|| format!("layer {i} tensor {t}"))?;
            let recon = reconstruct(&layer_q);
            let err = w
                .data()
                .iter()
                .zip(recon.data())
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum::<f64>()
                / w.data().len().max(1) as f64;
            println!(
                "  layer {i} tensor {t}: {}x{} step {:.3e} clip {:.4} packed {} B ({:.2}x vs f32) mean|err| {:.3e}",
                layer_q.rows(),
                layer_q.cols(),
                layer_q.quant_step(),
                layer_q.clip(),
                layer_q.packed_bytes(),
                w.float_bytes() as f64 / layer_q.packed_bytes() as f64,
                err
            );
            *w = recon;
        }
    }
    save_model_path(&model, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn read_input_rows(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .with_context(|| format!("line {}: bad value `{f}`", lineno + 1))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("input {} has no feature rows", path.display());
    }
    Ok(rows)
}

fn infer(model_path: &Path, input: &Path, assignment: &str) -> Result<()> {
    let model = load_model_path(model_path)?;
    let assignment = PrecisionAssignment::parse(assignment)?;
    let rows = read_input_rows(input)?;
    if model.has_recurrent() {
        let logits = pbatch_core::nn::model_forward(
            &model,
            &ModelInput::Sequence(rows),
            &assignment,
        )?;
        print_logits(&logits);
    } else {
        for row in rows {
            let logits =
                pbatch_core::nn::model_forward(&model, &ModelInput::Vector(row), &assignment)?;
            print_logits(&logits);
        }
    }
    Ok(())
}

fn print_logits(logits: &[f32]) {
    let rendered: Vec<String> = logits.iter().map(|v| format!("{v:.6}")).collect();
    println!(
        "logits: [{}]  argmax: {}",
        rendered.join(", "),
        pbatch_core::harness::argmax(logits)
    );
}

fn load_dataset_arg(arg: &str) -> Result<Dataset> {
    if arg.ends_with(".csv") {
        Ok(load_csv_dataset(arg)?)
    } else {
        let images = format!("{arg}-images-idx3-ubyte");
        let labels = format!("{arg}-labels-idx1-ubyte");
        Ok(load_idx_dataset(&images, &labels)?)
    }
}

fn eval(model_path: &Path, dataset: &str, assignment: &str) -> Result<()> {
    let model = load_model_path(model_path)?;
    let assignment = PrecisionAssignment::parse(assignment)?;
    let dataset = load_dataset_arg(dataset)?;
    let acc = eval_accuracy(&model, &assignment, &dataset)?;
    println!(
        "accuracy: {:.4} ({}/{} correct, assignment {})",
        acc,
        (acc * dataset.len() as f64).round() as usize,
        dataset.len(),
        assignment.spec_string()
    );
    Ok(())
}

fn bench(
    sizes: Vec<usize>,
    weight_bits: Vec<u32>,
    act_bits: Vec<u32>,
    iters: u64,
    baselines: bool,
    csv: Option<&Path>,
) -> Result<()> {
    let cfg = BenchConfig { sizes, weight_bits, act_bits, iters, baselines, ..BenchConfig::default() };
    let report = bench_kernels(&cfg)?;
    print!("{}", report.format_table());
    if let Some(path) = csv {
        std::fs::write(path, report.to_csv())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    model_path: &Path,
    dataset: &str,
    weight_grid: Vec<u32>,
    act_grid: Vec<u32>,
    backend_grid: &[String],
    max_samples: Option<usize>,
    parallel: bool,
    csv: Option<&Path>,
) -> Result<()> {
    let model = load_model_path(model_path)?;
    let mut dataset = load_dataset_arg(dataset)?;
    if let Some(n) = max_samples {
        dataset = dataset.head(n);
    }
    let backends = backend_grid
        .iter()
        .map(|b| match b.as_str() {
            "float" | "f" => Ok(BackendFamily::Float),
            "baseline" => Ok(BackendFamily::Baseline),
            "pbatch" => Ok(BackendFamily::Pbatch),
            other => bail!("unknown backend `{other}` (use float, baseline, pbatch)"),
        })
        .collect::<Result<Vec<_>>>()?;
    let grids = SweepGrids { weight_bits: weight_grid, act_bits: act_grid, backends };
    let opts = SweepOptions { parallel, ..SweepOptions::default() };
    let result = sweep_assignments(&model, &dataset, &grids, &opts)?;
    if result.warned_size {
        eprintln!(
            "warning: {} assignments exceed the advisory limit; this may take a while",
            result.total_assignments
        );
    }
    println!(
        "evaluated {} assignments over {} samples; frontier:",
        result.points.len(),
        dataset.len()
    );
    println!("{:<36} {:>9} {:>14}", "assignment", "accuracy", "cost (s)");
    for p in result.points.iter().filter(|p| !p.dominated) {
        println!("{:<36} {:>9.4} {:>14.3e}", p.assignment.spec_string(), p.quality, p.cost);
    }
    if let Some(path) = csv {
        let mut out = String::from("assignment,accuracy,cost_seconds,on_frontier\n");
        for p in &result.points {
            out.push_str(&format!(
                "\"{}\",{:.6},{:.9e},{}\n",
                p.assignment.spec_string(),
                p.quality,
                p.cost,
                !p.dominated
            ));
        }
        std::fs::write(path, out)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
