use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use oodkit::detector::{DetectorParams, FittedDetector};
use oodkit::eval::report::{format_auroc, write_report_dir, ReportFormat};
use oodkit::eval::synth::{generate, write_bundle, SynthParams, SynthVariant};
use oodkit::io::config::KValues;
use oodkit::io::{load_bundle, read_embeddings, read_probabilities, read_scores, write_matrix, write_scores_csv};
use oodkit::{auroc, run_benchmark, Method, OodError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Out-of-distribution scores from embeddings and predicted probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Standard,
    Boundary,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one method on the training files of a run configuration.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        /// Neighbour count for KNN methods; defaults to the smallest K in the config.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a test set with a fitted model; also writes a CSV mirror.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        test_probs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the AUROC of OOD scores against in-distribution scores.
    Eval {
        #[arg(long)]
        in_scores: PathBuf,
        #[arg(long)]
        ood_scores: PathBuf,
        /// Print every digit instead of four decimals.
        #[arg(long)]
        precise: bool,
    },
    /// Run every configured method and write report.{csv,md,json}.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic Gaussian-mixture bundle and a run.json for it.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// OOD distance from every class mean, in pooled standard deviations.
        #[arg(long)]
        displacement: Option<f64>,
        #[arg(long, value_enum, default_value_t = Variant::Standard)]
        variant: Variant,
    },
}

fn csv_mirror(path: &Path) -> PathBuf {
    let mirror = path.with_extension("csv");
    if mirror == path {
        let mut name = path.as_os_str().to_owned();
        name.push(".csv");
        PathBuf::from(name)
    } else {
        mirror
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, method, k, out } => {
            let method = Method::parse(&method)?;
            let mut cfg = RunConfig::from_file(&config)?;
            cfg.methods = vec![method];
            if let Some(k) = k {
                cfg.knn.k = KValues::One(k);
            }
            let bundle = load_bundle(&cfg)?;
            let params = DetectorParams {
                knn: cfg.knn,
                gaussian: cfg.gaussian,
                iforest: cfg.iforest,
                seed: cfg.seed,
            };
            let detector = FittedDetector::fit(method, &bundle, &params)?;
            detector.save(&out)?;
            eprintln!("fitted {method} on {} rows -> {}", bundle.train_embeddings.n_rows(), out.display());
        }
        Command::Score { model, test, test_probs, out } => {
            let detector = FittedDetector::load(&model)?;
            let embeddings = read_embeddings(&test)?;
            let probs = test_probs.map(read_probabilities).transpose()?;
            let scores = detector.score(&embeddings, probs.as_ref())?;
            write_matrix(&out, &scores)?;
            write_scores_csv(csv_mirror(&out), &scores)?;
            eprintln!("scored {} rows with {} -> {}", scores.len(), detector.method(), out.display());
        }
        Command::Eval { in_scores, ood_scores, precise } => {
            let a = read_scores(&in_scores)?;
            let b = read_scores(&ood_scores)?;
            let v = auroc(&a, &b)?;
            if precise {
                println!("{v}");
            } else {
                println!("{}", format_auroc(v));
            }
        }
        Command::Benchmark { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| OodError::Config("no --out given and no output_dir in the config".into()))?;
            let report = run_benchmark(&cfg)?;
            write_report_dir(&report, &out)?;
            print!("{}", report.render(ReportFormat::Markdown)?);
        }
        Command::Synth { seed, out, displacement, variant } => {
            let variant = match variant {
                Variant::Standard => SynthVariant::Standard,
                Variant::Boundary => SynthVariant::Boundary,
            };
            let mut params = SynthParams::for_variant(variant, seed);
            if let Some(d) = displacement {
                params.displacement = d;
            }
            write_bundle(&generate(&params)?, &out)?;
            eprintln!("wrote synthetic bundle to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
