//! The `clbgmm` command line.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::dataset::{
    generate_synthetic, load_manifest, load_tables, ExperimentManifest, FusionConfig, ModalitySpec,
    SyntheticConfig, DEFAULT_SEEDS,
};
use crate::error::{Error, Result};
use crate::metrics::{optional, relative_evolution, MetricsReport};
use crate::protocol::{self, load_run, oracle_union_accuracy, AggregateResult, RunResult};

pub const THREADS_ENV: &str = "CLBGMM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "clbgmm", version, about = "Class-incremental learning with per-class Bayesian Gaussian mixtures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-modality dataset and a manifest for it.
    Synth(SynthArgs),
    /// Run every seed of a manifest and write the results files.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metrics of a results file.
    Metrics {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of the "either model is right" union of two runs.
    Oracle {
        #[arg(long)]
        results_a: PathBuf,
        #[arg(long)]
        results_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot-ready CSV series from one or more results files.
    Report {
        #[arg(long, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub basic: usize,
    #[arg(long, default_value_t = 4)]
    pub compound: usize,
    #[arg(long, default_value_t = 3)]
    pub compounds_per_task: usize,
    #[arg(long, default_value_t = 4)]
    pub dim_a: usize,
    #[arg(long, default_value_t = 4)]
    pub dim_b: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class_train: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class_test: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub bias: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parse arguments, run, and return the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A pool that is already built (e.g. in tests) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(&args).map(|_| ()),
        Command::Run { manifest, out } => {
            let (written, agg) = cmd_run(&manifest, out.as_deref())?;
            let t = agg.task_names.len();
            let aa = agg.average_accuracy[t - 1];
            eprintln!(
                "{}: AA_{t} = {:.4} +/- {:.4} over {} seed(s); wrote {} files to {}",
                agg.label,
                aa.mean,
                aa.std,
                agg.seeds.len(),
                written.len(),
                written[0].parent().unwrap_or(Path::new(".")).display()
            );
            Ok(())
        }
        Command::Metrics { results, format, out } => {
            let text = cmd_metrics(&results, format)?;
            emit(out.as_deref(), &text)
        }
        Command::Oracle { results_a, results_b, out } => {
            let text = cmd_oracle(&results_a, &results_b)?;
            emit(out.as_deref(), &text)
        }
        Command::Report { results, out } => cmd_report(&results, &out).map(|_| ()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const SYNTH_MANIFEST: &str = "manifest.json";

/// Returns the paths written: modality A table, modality B table, manifest.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let config = SyntheticConfig {
        n_basic_classes: args.basic,
        n_compound_classes: args.compound,
        dim_a: args.dim_a,
        dim_b: args.dim_b,
        samples_per_class_train: args.per_class_train,
        samples_per_class_test: args.per_class_test,
        cluster_spread: args.spread,
        modality_bias: args.bias,
        compounds_per_task: args.compounds_per_task,
    };
    let (a, b, tasks) = generate_synthetic(&config, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut written = Vec::new();
    let mut modalities = Vec::new();
    for table in [&a, &b] {
        let file = format!("{}.csv", table.modality_name());
        let path = args.out.join(&file);
        table.write_csv_file(&path)?;
        written.push(path);
        modalities.push(ModalitySpec {
            name: table.modality_name().to_string(),
            path: file.into(),
            dim: table.dim(),
            normalize: false,
        });
    }
    let manifest = ExperimentManifest {
        name: None,
        tasks,
        modalities,
        fusion: FusionConfig::default(),
        bgmm: Default::default(),
        seeds: DEFAULT_SEEDS.to_vec(),
        output: "results".into(),
        class_priors: false,
        joint_reference: true,
        base_dir: None,
    };
    let path = args.out.join(SYNTH_MANIFEST);
    write_file(&path, &(to_json(&manifest)? + "\n"))?;
    written.push(path);
    Ok(written)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Validation(format!("serializing: {e}")))
}

/// Runs every seed and returns the results files written with the aggregate.
pub fn cmd_run(manifest_path: &Path, out: Option<&Path>) -> Result<(Vec<PathBuf>, AggregateResult)> {
    let manifest = load_manifest(manifest_path)?;
    let tables = load_tables(&manifest)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| manifest.resolve(Path::new(&manifest.output)));
    let (runs, aggregate) = protocol::multi_seed(&manifest, &tables)?;
    let written = protocol::write_results(&out, &runs, &aggregate)?;
    Ok((written, aggregate))
}

/// The metrics of a results file, recomputed from its accuracy matrix.
pub fn cmd_metrics(results: &Path, format: Format) -> Result<String> {
    let run = load_run(results)?;
    let report = MetricsReport::compute(&run.accuracy_matrix, &run.test_sizes, run.joint_reference.as_deref())?;
    match format {
        Format::Json => Ok(to_json(&report)? + "\n"),
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
        }
    }
}

/// Per-task and overall accuracies of two runs and of their union, as CSV.
pub fn cmd_oracle(path_a: &Path, path_b: &Path) -> Result<String> {
    let a = load_run(path_a)?;
    let b = load_run(path_b)?;
    let mismatch = |msg: String| Error::Validation(format!("results do not cover the same test samples: {msg}"));

    let final_b: HashMap<&str, (&str, &str)> = b
        .final_predictions()
        .into_iter()
        .map(|(rec, p)| (rec.sample_id.as_str(), (rec.label.as_str(), p)))
        .collect();
    let final_a = a.final_predictions();
    if final_a.len() != final_b.len() {
        return Err(mismatch(format!("{} vs {} samples", final_a.len(), final_b.len())));
    }

    let mut rows: Vec<(String, Vec<&str>, Vec<&str>, Vec<&str>)> = Vec::new();
    let mut offset = 0;
    for (j, set) in a.test_sets.iter().enumerate() {
        let mut pa = Vec::with_capacity(set.len());
        let mut pb = Vec::with_capacity(set.len());
        let mut truth = Vec::with_capacity(set.len());
        for (rec, pred) in &final_a[offset..offset + set.len()] {
            let (label_b, pred_b) = final_b
                .get(rec.sample_id.as_str())
                .ok_or_else(|| mismatch(format!("{:?} is missing from {}", rec.sample_id, path_b.display())))?;
            if *label_b != rec.label {
                return Err(mismatch(format!("{:?} is labelled differently", rec.sample_id)));
            }
            pa.push(*pred);
            pb.push(*pred_b);
            truth.push(rec.label.as_str());
        }
        offset += set.len();
        rows.push((a.task_names()[j].clone(), pa, pb, truth));
    }
    let all = rows.iter().fold((Vec::new(), Vec::new(), Vec::new()), |mut acc, (_, pa, pb, t)| {
        acc.0.extend(pa);
        acc.1.extend(pb);
        acc.2.extend(t);
        acc
    });
    rows.push(("all".into(), all.0, all.1, all.2));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task", "n", "accuracy_a", "accuracy_b", "union"]).map_err(csv_error)?;
    for (name, pa, pb, truth) in &rows {
        let acc = |p: &[&str]| p.iter().zip(truth).filter(|(x, y)| x == y).count() as f64 / truth.len() as f64;
        w.write_record([
            name.clone(),
            truth.len().to_string(),
            acc(pa).to_string(),
            acc(pb).to_string(),
            oracle_union_accuracy(pa, pb, truth)?.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Validation(format!("writing csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("writing csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Column names for a list of runs: the label, made unique with the seed
/// and then the position if needed.
fn column_names(runs: &[RunResult]) -> Vec<String> {
    let count = |f: &dyn Fn(&RunResult) -> String, name: &str| runs.iter().filter(|r| f(r) == name).count();
    let label = |r: &RunResult| sanitize(&r.label);
    let seeded = |r: &RunResult| format!("{}_seed{}", sanitize(&r.label), r.seed);
    runs.iter()
        .enumerate()
        .map(|(i, r)| {
            if count(&label, &label(r)) == 1 {
                label(r)
            } else if count(&seeded, &seeded(r)) == 1 {
                seeded(r)
            } else {
                format!("{}_{}", seeded(r), i + 1)
            }
        })
        .collect()
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes the report CSVs into `out` and returns their paths.
pub fn cmd_report(results: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Validation("report needs at least one results file".into()));
    }
    let runs = results.iter().map(|p| load_run(p)).collect::<Result<Vec<_>>>()?;
    let names = column_names(&runs);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let mut save = |file: String, text: String| -> Result<()> {
        let path = out.join(file);
        write_file(&path, &text)?;
        written.push(path);
        Ok(())
    };

    type Series = fn(&MetricsReport, usize) -> Option<f64>;
    let series: [(&str, Series); 4] = [
        ("AA", |m, k| Some(m.average_accuracy[k])),
        ("AIA", |m, k| Some(m.average_incremental_accuracy[k])),
        ("FM", |m, k| m.forgetting_measure[k]),
        ("IM", |m, k| m.intransigence[k]),
    ];
    let longest = runs.iter().map(|r| r.metrics.task_count()).max().unwrap_or(0);
    for (metric, value) in series {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("k".to_string()).chain(names.iter().cloned())).map_err(csv_error)?;
        for k in 0..longest {
            let cells = runs.iter().map(|r| {
                if k < r.metrics.task_count() {
                    optional(value(&r.metrics, k))
                } else {
                    String::new()
                }
            });
            w.write_record(std::iter::once((k + 1).to_string()).chain(cells)).map_err(csv_error)?;
        }
        save(format!("series_{metric}.csv"), finish_csv(w)?)?;
    }

    for (run, name) in runs.iter().zip(&names) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("k").chain(run.task_names().iter().map(String::as_str)))
            .map_err(csv_error)?;
        for (k, row) in run.accuracy_matrix.rows().iter().enumerate() {
            let cells = (0..run.task_names().len()).map(|j| row.get(j).map(f64::to_string).unwrap_or_default());
            w.write_record(std::iter::once((k + 1).to_string()).chain(cells)).map_err(csv_error)?;
        }
        save(format!("accuracy_over_time_{name}.csv"), finish_csv(w)?)?;
    }

    save("per_class_correct.csv".into(), per_class_table(&runs, &names)?)?;
    save("relative_evolution.csv".into(), relative_evolution_table(&runs, &names)?)?;
    Ok(written)
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Correct test predictions per class, one column per run, then the
/// difference of every pair of runs in input order.
fn per_class_table(runs: &[RunResult], names: &[String]) -> Result<String> {
    let mut classes: Vec<&str> = Vec::new();
    for run in runs {
        for c in run.per_class_test.keys() {
            if !classes.contains(&c.as_str()) {
                classes.push(c);
            }
        }
    }
    let mut header = vec!["class".to_string(), "n_test".to_string()];
    header.extend(names.iter().cloned());
    header.extend(pairs(runs.len()).map(|(i, j)| format!("{}_minus_{}", names[i], names[j])));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_error)?;
    for class in classes {
        let counts: Vec<Option<usize>> = runs.iter().map(|r| r.per_class_correct.get(class).copied()).collect();
        let n_test = runs.iter().find_map(|r| r.per_class_test.get(class)).copied().unwrap_or(0);
        let mut record = vec![class.to_string(), n_test.to_string()];
        record.extend(counts.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        record.extend(pairs(runs.len()).map(|(i, j)| match (counts[i], counts[j]) {
            (Some(a), Some(b)) => (a as i64 - b as i64).to_string(),
            _ => String::new(),
        }));
        w.write_record(&record).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// Final per-task and pooled accuracy of every later run relative to every
/// earlier run with the same tasks. A zero baseline leaves the cell empty.
fn relative_evolution_table(runs: &[RunResult], names: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["merged", "baseline", "task", "merged_accuracy", "baseline_accuracy", "relative_evolution"])
        .map_err(csv_error)?;
    for (i, j) in pairs(runs.len()) {
        let (base, merged) = (&runs[i], &runs[j]);
        if base.task_names() != merged.task_names() {
            continue;
        }
        let t = base.task_names().len();
        let last = |r: &RunResult| r.accuracy_matrix.rows()[t - 1].clone();
        let mut entries: Vec<(String, f64, f64)> = base
            .task_names()
            .iter()
            .zip(last(merged).into_iter().zip(last(base)))
            .map(|(name, (m, b))| (name.clone(), m, b))
            .collect();
        entries.push(("all".into(), merged.metrics.final_micro_accuracy, base.metrics.final_micro_accuracy));
        for (task, m, b) in entries {
            w.write_record([
                names[j].clone(),
                names[i].clone(),
                task,
                m.to_string(),
                b.to_string(),
                relative_evolution(m, b).map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
    }
    finish_csv(w)
}
