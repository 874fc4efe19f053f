use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use plrefine::config::ExperimentConfig;
use plrefine::io::{read_embedding_file, read_header, write_embedding_file};
use plrefine::sweep::{robin_hood_scenario, run_sweep, write_sweep};
use plrefine::synth::{synth_generate, SyntheticSpec};
use plrefine::Error;

#[derive(Parser)]
#[command(name = "plrefine", version, about = "Top-K pseudolabel refinement over frozen embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Maximum number of runs executed concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replace the configured seeds (or the synthetic spec seed) with this one.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy × paradigm × seed cell of an experiment config.
    Run { config: PathBuf },
    /// Generate a synthetic dataset; the test split goes to `<stem>.test.ple`.
    GenSynth { spec: PathBuf, out: PathBuf },
    /// Print the header, norm summary and label histogram of a PLE1 file.
    Inspect { file: PathBuf },
    /// Top-K vs confidence-threshold pseudolabels, prompt vs linear probe.
    Robinhood { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.trim() });
    eprintln!("{line}");
}

fn dispatch(cli: &Cli) -> plrefine::Result<()> {
    match &cli.command {
        Command::Run { config } => run(cli, config),
        Command::GenSynth { spec, out } => gen_synth(cli, spec, out),
        Command::Inspect { file } => inspect(file),
        Command::Robinhood { config } => robinhood(cli, config),
    }
}

fn load_config(cli: &Cli, path: &Path) -> plrefine::Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        config.seeds = vec![seed];
    }
    for w in config.warnings() {
        log::warn!("{w}");
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    Ok((config, out))
}

fn run(cli: &Cli, path: &Path) -> plrefine::Result<()> {
    let (config, out) = load_config(cli, path)?;
    let task = config.load_task()?;
    let result = run_sweep(&config, &task, cli.jobs)?;
    write_sweep(&out, &result)?;
    for cell in &result.cells {
        let std = cell
            .test_accuracy
            .std
            .map(|s| format!(" ± {s:.4}"))
            .unwrap_or_default();
        println!(
            "{} {}: test accuracy {:.4}{std} (zero-shot {:.4}, {} seeds)",
            cell.strategy,
            cell.paradigm,
            cell.test_accuracy.mean,
            cell.zero_shot_accuracy.mean,
            cell.seeds.len()
        );
    }
    println!("wrote {}", out.join("result.json").display());
    Ok(())
}

fn test_sibling(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.test.ple"))
}

fn gen_synth(cli: &Cli, spec_path: &Path, out: &Path) -> plrefine::Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| io_error(spec_path, e))?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text)?;
    if let Some(seed) = cli.seed_override {
        spec.seed = seed;
    }
    let task = synth_generate(&spec)?;
    let test_path = test_sibling(out);
    write_embedding_file(out, &task.train, &task.space)?;
    write_embedding_file(&test_path, &task.test, &task.space)?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        out.display(),
        task.train.len(),
        test_path.display(),
        task.test.len()
    );
    Ok(())
}

fn inspect(path: &Path) -> plrefine::Result<()> {
    let header = read_header(path)?;
    let (set, space) = read_embedding_file(path)?;
    println!("version: {}", header.version);
    println!("n: {}", header.len);
    println!("d: {}", header.dim);
    println!("C: {}", header.num_classes);
    let norms: Vec<f64> = set
        .features()
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect();
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    println!("norms: min {min:.8} max {max:.8} mean {mean:.8}");
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unlabeled = 0;
    for label in set.labels() {
        match label {
            Some(c) => *histogram.entry(*c).or_default() += 1,
            None => unlabeled += 1,
        }
    }
    println!("labels:");
    for (c, name) in space.names().iter().enumerate() {
        println!("  {c} {name}: {}", histogram.get(&c).copied().unwrap_or(0));
    }
    println!("  unlabeled: {unlabeled}");
    Ok(())
}

fn robinhood(cli: &Cli, path: &Path) -> plrefine::Result<()> {
    let (config, out) = load_config(cli, path)?;
    let task = config.load_task()?;
    let scenario = robin_hood_scenario(&config, &task, config.seeds[0])?;
    std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let file = out.join("robinhood.json");
    let mut json = serde_json::to_string_pretty(&scenario)?;
    json.push('\n');
    std::fs::write(&file, json).map_err(|e| io_error(&file, e))?;
    let fmt = |d: Option<f64>| d.map_or("n/a".to_string(), |v| format!("{v:+.4}"));
    for arm in &scenario.arms {
        println!(
            "{} {}: accuracy {:.4}, poor Δ {}, rich Δ {} ({} pseudolabels)",
            arm.learner,
            arm.selection,
            arm.report.overall_accuracy,
            fmt(arm.robin_hood.mean_delta_poor),
            fmt(arm.robin_hood.mean_delta_rich),
            arm.n_pseudolabels
        );
    }
    println!("wrote {}", file.display());
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
