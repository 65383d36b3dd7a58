use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use s3vc::metrics::{self, McdConfig};
use s3vc::simbench::{reports_to_csv, SimPlan};
use s3vc::{
    load_feature_matrix, load_metric_table, load_tokens, save_feature_matrix, save_tokens,
    train_scheme_with, DiscretizationScheme, EmbeddingVector, Error, ErrorClass, Mode,
    SchemeConfig, TrainParams,
};

/// Discrete speech-unit toolkit: codebooks, tokenization and evaluation.
#[derive(Debug, Parser)]
#[command(name = "s3vc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a single, ensemble or product-quantized k-means scheme.
    TrainKmeans(TrainKmeansArgs),
    /// Map feature frames to token indices.
    Quantize(QuantizeArgs),
    /// Map token indices back to feature frames.
    Reconstruct(ReconstructArgs),
    /// Mel cepstral distortion between converted and reference features.
    EvalMcd(EvalMcdArgs),
    /// Speaker-verification accept rate of converted embeddings.
    EvalAsv(EvalAsvArgs),
    /// Pearson correlation matrix between metric columns.
    Correlate(CorrelateArgs),
    /// Run the synthetic recognition-synthesis benchmark.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct TrainKmeansArgs {
    /// Training features (S3FV file).
    #[arg(long)]
    features: PathBuf,
    /// Discretization mode: single, ensemble or pq.
    #[arg(long)]
    mode: String,
    /// Cluster count, or a comma-separated list of counts for ensemble.
    #[arg(long, value_delimiter = ',', required = true)]
    clusters: Vec<usize>,
    /// Number of equal-width column blocks (pq only).
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    /// Base seed; member n is seeded with seed + n.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output scheme file (S3CB).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Trained scheme file (S3CB).
    #[arg(long)]
    scheme: PathBuf,
    /// Features to tokenize (S3FV).
    #[arg(long)]
    features: PathBuf,
    /// Output tokens: binary S3TK when the extension is .s3tk, CSV otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Trained scheme file (S3CB).
    #[arg(long)]
    scheme: PathBuf,
    /// Token file, S3TK or CSV.
    #[arg(long)]
    tokens: PathBuf,
    /// Output features (S3FV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalMcdArgs {
    /// Converted features: an S3FV file or a directory of *.s3fv files.
    #[arg(long)]
    converted: PathBuf,
    /// Reference features: an S3FV file or a directory of *.s3fv files.
    #[arg(long)]
    reference: PathBuf,
    /// Align with dynamic time warping instead of requiring equal lengths.
    #[arg(long)]
    dtw: bool,
    /// Keep the energy coefficient (dimension 0).
    #[arg(long)]
    keep_first_dim: bool,
    /// Explicit pairs, one `converted,reference` per line, relative to the
    /// two directories. Overrides stem matching.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("decision").required(true).args(["threshold", "trials"])))]
struct EvalAsvArgs {
    /// Converted embeddings, one per row (S3FV).
    #[arg(long)]
    converted_embs: PathBuf,
    /// Target reference embeddings (S3FV), one per row; their mean is the
    /// target speaker embedding.
    #[arg(long)]
    target_embs: PathBuf,
    /// Cosine threshold; a trial is accepted when its score exceeds it.
    #[arg(long)]
    threshold: Option<f64>,
    /// Genuine and impostor score lists (one score per line) used to derive
    /// the equal-error-rate threshold.
    #[arg(long, num_args = 2, value_names = ["GENUINE", "IMPOSTOR"])]
    trials: Option<Vec<PathBuf>>,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// Metric table CSV whose first column is `system`.
    #[arg(long)]
    table: PathBuf,
    /// Comma-separated metric columns to correlate.
    #[arg(long, value_delimiter = ',', required = true)]
    columns: Vec<String>,
    /// Output correlation CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Benchmark configuration (`key=value` lines, `#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Output report CSV.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn train_kmeans(args: TrainKmeansArgs) -> Result<()> {
    let mode: Mode = args.mode.parse()?;
    let config = SchemeConfig {
        mode,
        cluster_sizes: args.clusters,
        partitions: args.partitions,
    };
    config.validate()?;
    let features = load_feature_matrix(&args.features)?;
    let (scheme, reports) =
        train_scheme_with(&features, &config, args.seed, TrainParams::default())?;
    scheme.save(&args.out)?;
    for (n, (cb, rep)) in scheme.codebooks().iter().zip(&reports).enumerate() {
        println!(
            "stream {n}: K={} dim={} iterations={} distortion={:.6}",
            cb.size(),
            cb.dim(),
            rep.iterations,
            rep.distortion_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn quantize(args: QuantizeArgs) -> Result<()> {
    let scheme = DiscretizationScheme::load(&args.scheme)?;
    let features = load_feature_matrix(&args.features)?;
    save_tokens(&scheme.tokenize(&features)?, &args.out)?;
    Ok(())
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let scheme = DiscretizationScheme::load(&args.scheme)?;
    let tokens = load_tokens(&args.tokens)?;
    save_feature_matrix(&scheme.reconstruct(&tokens)?, &args.out)?;
    Ok(())
}

/// `*.s3fv` files in `dir`, keyed by stem.
fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "s3fv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn mcd_pairs(args: &EvalMcdArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    if let Some(manifest) = &args.manifest {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let mut pairs = Vec::new();
        let mut missing = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, r) = line.split_once(',').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "manifest line {}: expected converted,reference",
                    i + 1
                ))
            })?;
            let (c, r) = (args.converted.join(c.trim()), args.reference.join(r.trim()));
            for p in [&c, &r] {
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
            }
            pairs.push((c, r));
        }
        if !missing.is_empty() {
            return Err(Error::Unpaired(format!("missing files: {}", missing.join(", "))).into());
        }
        if pairs.is_empty() {
            return Err(Error::Empty("manifest lists no pairs").into());
        }
        return Ok(pairs);
    }

    match (args.converted.is_dir(), args.reference.is_dir()) {
        (false, false) => Ok(vec![(args.converted.clone(), args.reference.clone())]),
        (true, true) => {
            let conv = stems(&args.converted)?;
            let refs = stems(&args.reference)?;
            let only_conv: Vec<&str> = conv
                .keys()
                .filter(|k| !refs.contains_key(*k))
                .map(String::as_str)
                .collect();
            let only_ref: Vec<&str> = refs
                .keys()
                .filter(|k| !conv.contains_key(*k))
                .map(String::as_str)
                .collect();
            if !only_conv.is_empty() || !only_ref.is_empty() {
                return Err(Error::Unpaired(format!(
                    "no reference for [{}]; no converted file for [{}]",
                    only_conv.join(", "),
                    only_ref.join(", ")
                ))
                .into());
            }
            if conv.is_empty() {
                return Err(Error::Empty("no .s3fv files to compare").into());
            }
            Ok(conv
                .into_iter()
                .map(|(stem, c)| (c, refs[&stem].clone()))
                .collect())
        }
        (conv_dir, _) => {
            let (dir, file) = if conv_dir {
                (&args.converted, &args.reference)
            } else {
                (&args.reference, &args.converted)
            };
            let partner = dir.join(format!("{}.s3fv", stem_of(file)));
            if !partner.is_file() {
                return Err(Error::Unpaired(format!(
                    "no file with stem {:?} in {}",
                    stem_of(file),
                    dir.display()
                ))
                .into());
            }
            Ok(if conv_dir {
                vec![(partner, file.clone())]
            } else {
                vec![(file.clone(), partner)]
            })
        }
    }
}

fn eval_mcd(args: EvalMcdArgs) -> Result<()> {
    let cfg = McdConfig {
        use_dtw: args.dtw,
        drop_first_dim: !args.keep_first_dim,
    };
    let mut report = String::from("converted,reference,mcd_db\n");
    let mut total = 0.0;
    let pairs = mcd_pairs(&args)?;
    for (c, r) in &pairs {
        let mcd = metrics::mcd_sequence(&load_feature_matrix(c)?, &load_feature_matrix(r)?, cfg)
            .with_context(|| format!("comparing {} with {}", c.display(), r.display()))?;
        total += mcd;
        report.push_str(&format!("{},{},{mcd:.4}\n", stem_of(c), stem_of(r)));
    }
    let mean = total / pairs.len() as f64;
    report.push_str(&format!("mean,,{mean:.4}\n"));
    write_file(&args.out, report)?;
    println!("{mean:.4}");
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row: i + 1,
                column: path.display().to_string(),
                message: format!("{line:?} is not a finite number"),
            })?;
        scores.push(v);
    }
    Ok(scores)
}

fn eval_asv(args: EvalAsvArgs) -> Result<()> {
    let converted = EmbeddingVector::rows_of(&load_feature_matrix(&args.converted_embs)?);
    let targets = EmbeddingVector::rows_of(&load_feature_matrix(&args.target_embs)?);
    let threshold = match (args.threshold, &args.trials) {
        (Some(t), _) => {
            if !t.is_finite() {
                return Err(
                    Error::InvalidConfig(format!("threshold must be finite, got {t}")).into(),
                );
            }
            t
        }
        (None, Some(files)) => {
            let point = metrics::eer_threshold(&read_scores(&files[0])?, &read_scores(&files[1])?)?;
            println!("threshold={:.6}", point.threshold);
            point.threshold
        }
        (None, None) => unreachable!("clap enforces the decision group"),
    };
    let target = EmbeddingVector::mean(&targets)?;
    let rate = metrics::asv_accept_rate(&converted, &target, threshold)?;
    println!("{rate:.2}");
    Ok(())
}

fn correlate(args: CorrelateArgs) -> Result<()> {
    let table = load_metric_table(&args.table)?;
    let columns: Vec<&str> = args.columns.iter().map(|c| c.trim()).collect();
    let matrix = metrics::correlation_matrix(&table, &columns)?;
    write_file(&args.out, matrix.to_csv())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut plan = SimPlan::load(&args.config)?;
    if let Some(seed) = args.seed {
        plan.base.seed = seed;
    }
    let reports = plan.run()?;
    write_file(&args.out, reports_to_csv(&reports))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::class)
    {
        Some(ErrorClass::Config) => 2,
        Some(ErrorClass::Data) => 3,
        Some(ErrorClass::Pairing) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainKmeans(a) => train_kmeans(a),
        Command::Quantize(a) => quantize(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::EvalMcd(a) => eval_mcd(a),
        Command::EvalAsv(a) => eval_asv(a),
        Command::Correlate(a) => correlate(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
