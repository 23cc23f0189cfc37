use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kgalign::collective::{count_multiplicities, induced_neighbors, CoordinationMode};
use kgalign::eval::EvalReport;
use kgalign::fusion::{adaptive_fuse, FusionConfig};
use kgalign::kg::{load_kg, KnowledgeGraph};
use kgalign::matrix_io::{read_matrix, write_matrix, MatrixFormat};
use kgalign::pipeline::{
    decode_with_neighbors, evaluate_files, ranked_lists, read_axis, run_embedding, run_stages, write_ranked,
    write_result, PipelineConfig, Stage, Strategy,
};
use kgalign::simmat::{DistanceMeasure, FeatureTag, SimilarityMatrix};
use kgalign::synth::{gen_synthetic, DatasetFiles, SynthConfig};

#[derive(Parser)]
#[command(name = "kgalign", version, about = "Entity alignment between two knowledge graphs")]
struct Cli {
    /// Worker threads for the parallel matrix code.
    #[arg(long, global = true, env = "KGALIGN_THREADS")]
    threads: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train structural embeddings and write both graphs' embeddings.
    Embed(RunArgs),
    /// Build the feature similarity matrices of the test pairs.
    Features(RunArgs),
    /// Fuse feature matrices with adaptive weights.
    Fuse(FuseArgs),
    /// Decode one similarity matrix into an alignment.
    Align(AlignArgs),
    /// Score a prediction file against gold pairs.
    Eval(EvalArgs),
    /// Write a planted-alignment dataset.
    Synth(SynthArgs),
    /// Features, fusion, decoding and evaluation in one run.
    Pipeline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory in the default layout.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// bc, bc-pooled, cos, man or euc.
    #[arg(long)]
    measure: Option<DistanceMeasure>,
    /// Comma-separated subset of structural, semantic, string.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<FeatureTag>>,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
    /// greedy, stable, hungarian or rl.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// full, excl or coh.
    #[arg(long)]
    mode: Option<CoordinationMode>,
    #[arg(long)]
    tau: Option<usize>,
    /// Training epochs of the RL decoder.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    prelim_rounds: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    embed_epochs: Option<usize>,
    /// Matrix file format: bin or tsv.
    #[arg(long)]
    format: Option<MatrixFormat>,
    /// Reuse stages whose cached artifacts match the configuration.
    #[arg(long)]
    resume: bool,
}

impl RunArgs {
    fn config(&self, threads: Option<usize>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_toml_file(path).with_context(|| format!("loading {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset.dir = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        macro_rules! set {
            ($($field:expr => $value:expr),* $(,)?) => {
                $(if let Some(v) = $value.clone() { $field = v; })*
            };
        }
        set! {
            cfg.seed => self.seed,
            cfg.measure => self.measure,
            cfg.features => self.features,
            cfg.fusion.theta1 => self.theta1,
            cfg.fusion.theta2 => self.theta2,
            cfg.strategy => self.strategy,
            cfg.rl.mode => self.mode,
            cfg.rl.tau => self.tau,
            cfg.rl.epochs => self.epochs,
            cfg.rl.preliminary_rounds => self.prelim_rounds,
            cfg.embedding.dim => self.embed_dim,
            cfg.embedding.epochs => self.embed_epochs,
            cfg.matrix_format => self.format,
        }
        if threads.is_some() {
            cfg.threads = threads;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct FuseArgs {
    /// Feature matrices as `tag=path`, or a path whose file stem is the tag.
    #[arg(long = "matrix", required = true)]
    matrices: Vec<String>,
    #[arg(long, default_value_t = 0.99)]
    theta1: f64,
    #[arg(long, default_value_t = 0.48)]
    theta2: f64,
    /// Fused matrix; the format follows the extension.
    #[arg(long)]
    out: PathBuf,
    /// Weight report; JSON when the extension is `.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Similarity matrix to decode.
    #[arg(long)]
    matrix: PathBuf,
    /// Row and column id files; default to rows.tsv and cols.tsv beside the matrix.
    #[arg(long)]
    rows: Option<PathBuf>,
    #[arg(long)]
    cols: Option<PathBuf>,
    /// Dataset directory supplying the graphs for the coherence signal.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "rl")]
    strategy: Strategy,
    #[arg(long, default_value = "full")]
    mode: CoordinationMode,
    #[arg(long, default_value_t = 10)]
    tau: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    prelim_rounds: usize,
    /// Alignment output (`source<TAB>target<TAB>provenance`).
    #[arg(long)]
    out: PathBuf,
    /// Also write ranked target lists here.
    #[arg(long)]
    ranked: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    ranked: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    hits: Vec<usize>,
    /// Write the report as JSON here as well.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.03)]
    edge_prob: f64,
    #[arg(long, default_value_t = 0.1)]
    name_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    edge_perturbation: f64,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    #[arg(long, default_value_t = 32)]
    word_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == Some(0) {
        bail!("--threads must be >= 1");
    }
    let threads = cli.threads;
    match cli.command {
        Command::Embed(args) => {
            let cfg = args.config(threads)?;
            let out = with_threads(threads, || run_embedding(&cfg))?;
            println!(
                "embeddings {}x{} and {}x{} written to {}",
                out.z1.as_array().nrows(),
                out.z1.as_array().ncols(),
                out.z2.as_array().nrows(),
                out.z2.as_array().ncols(),
                cfg.output_dir.display()
            );
        }
        Command::Features(args) => {
            let cfg = args.config(threads)?;
            let outcome = run_stages(&cfg, args.resume, Stage::Features)?;
            for m in &outcome.matrices {
                println!("{}\t{}x{}", m.tag(), m.n_src(), m.n_tgt());
            }
        }
        Command::Pipeline(args) => {
            let cfg = args.config(threads)?;
            let outcome = run_stages(&cfg, args.resume, Stage::Eval)?;
            if let Some(fusion) = &outcome.fusion {
                for line in fusion.to_key_value().lines().filter(|l| !l.starts_with("corr.")) {
                    println!("{line}");
                }
            }
            if let Some(report) = &outcome.report {
                print!("{}", report.to_key_value());
            }
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Fuse(args) => with_threads(threads, || fuse(&args))?,
        Command::Align(args) => with_threads(threads, || align(&args))?,
        Command::Eval(args) => {
            let report = evaluate(&args)?;
            print!("{}", report.to_key_value());
        }
        Command::Synth(args) => {
            let cfg = SynthConfig {
                n: args.n,
                edge_prob: args.edge_prob,
                name_noise: args.name_noise,
                edge_perturbation: args.edge_perturbation,
                num_relations: args.relations,
                word_dim: args.word_dim,
                seed: args.seed,
            };
            let data = gen_synthetic(&cfg)?;
            data.write(&args.out)?;
            println!(
                "{} entities, {} + {} triples written to {}",
                cfg.n,
                data.kg1.triples().len(),
                data.kg2.triples().len(),
                args.out.display()
            );
        }
    }
    Ok(())
}

fn with_threads<T: Send, E: Into<anyhow::Error> + Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> std::result::Result<T, E> + Send,
) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(f).map_err(Into::into)
        }
        None => f().map_err(Into::into),
    }
}

fn parse_matrix_arg(arg: &str) -> Result<(FeatureTag, PathBuf)> {
    if let Some((tag, path)) = arg.split_once('=') {
        return Ok((tag.parse()?, PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let tag = stem
        .parse()
        .with_context(|| format!("cannot infer the feature of {arg}; use tag=path"))?;
    Ok((tag, path))
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let mut matrices = Vec::new();
    for arg in &args.matrices {
        let (tag, path) = parse_matrix_arg(arg)?;
        matrices.push(SimilarityMatrix::new(read_matrix(&path)?, tag)?);
    }
    let cfg = FusionConfig {
        theta1: args.theta1,
        theta2: args.theta2,
        ..FusionConfig::default()
    };
    let (fused, report) = adaptive_fuse(&matrices, &cfg)?;
    write_matrix(&args.out, fused.scores(), MatrixFormat::from_path(&args.out))?;
    if let Some(path) = &args.report {
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(&report)?
        } else {
            report.to_key_value()
        };
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.to_key_value());
    Ok(())
}

fn sibling(matrix: &Path, name: &str) -> Option<PathBuf> {
    let p = matrix.parent().unwrap_or(Path::new(".")).join(name);
    p.is_file().then_some(p)
}

fn graph_indices(kg: &KnowledgeGraph, ids: &[String], side: &str) -> kgalign::Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            kg.entities()
                .index_of(id)
                .ok_or_else(|| kgalign::Error::Integrity(format!("{side} entity {id} is not in the graph")))
        })
        .collect()
}

fn align(args: &AlignArgs) -> kgalign::Result<()> {
    let m = SimilarityMatrix::new(read_matrix(&args.matrix)?, FeatureTag::Fused)?;
    let ids = |explicit: &Option<PathBuf>, name: &str, n: usize| -> kgalign::Result<Vec<String>> {
        match explicit.clone().or_else(|| sibling(&args.matrix, name)) {
            Some(path) => {
                let ids = read_axis(&path)?;
                if ids.len() != n {
                    return Err(kgalign::Error::Integrity(format!(
                        "{} lists {} ids for {n} matrix entries",
                        path.display(),
                        ids.len()
                    )));
                }
                Ok(ids)
            }
            None => Ok((0..n).map(|i| i.to_string()).collect()),
        }
    };
    let row_ids = ids(&args.rows, "rows.tsv", m.n_src())?;
    let col_ids = ids(&args.cols, "cols.tsv", m.n_tgt())?;
    let (src_nb, tgt_nb) = match &args.dataset {
        Some(dir) if args.strategy == Strategy::Rl => {
            let files = DatasetFiles::in_dir(dir);
            let kg1 = load_kg(&files.triples1, &files.names1)?;
            let kg2 = load_kg(&files.triples2, &files.names2)?;
            (
                induced_neighbors(&kg1, &graph_indices(&kg1, &row_ids, "source")?)?,
                induced_neighbors(&kg2, &graph_indices(&kg2, &col_ids, "target")?)?,
            )
        }
        _ => (vec![Vec::new(); m.n_src()], vec![Vec::new(); m.n_tgt()]),
    };
    let rl = kgalign::collective::RlConfig {
        mode: args.mode,
        tau: args.tau,
        epochs: args.epochs,
        rng_seed: args.seed,
        preliminary_rounds: args.prelim_rounds,
        ..Default::default()
    };
    let result = decode_with_neighbors(args.strategy, &m, src_nb, tgt_nb, &rl)?;
    write_result(&args.out, &result, &row_ids, &col_ids)?;
    if let Some(path) = &args.ranked {
        write_ranked(path, &ranked_lists(&m, 0..m.n_src(), None), &row_ids, &col_ids)?;
    }
    let (mul_se, mul_te) = count_multiplicities(&result);
    println!("pairs\t{}\nmul_se\t{mul_se}\nmul_te\t{mul_te}", result.len());
    Ok(())
}

fn evaluate(args: &EvalArgs) -> Result<EvalReport> {
    let report = evaluate_files(&args.pred, &args.gold, args.ranked.as_deref(), &args.hits)?;
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}
