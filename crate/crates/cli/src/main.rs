use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use diffgraph::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig};
use diffgraph::data::{
    community_diffusion_demo, generate_sbm_dataset, load_dataset, load_matrix_csv, matrix_to_csv,
    save_dataset, DemoConfig, DemoTopology, LabeledDataset, SbmClass, SbmDatasetConfig,
};
use diffgraph::diffusion::{DiffusionConfig, DiffusionKernel, KernelKind};
use diffgraph::eval::{embed_dataset, probe_seeds, ProbeConfig};
use diffgraph::gcl::{train_gcl, GclConfig, GCL_TELEMETRY_HEADER};
use diffgraph::gmae::{train_gmae, GmaeConfig, GMAE_TELEMETRY_HEADER};
use diffgraph::graph::{Graph, Structure};
use diffgraph::readout::{ReadoutConfig, ReadoutKind};
use diffgraph::sparse::CsrMatrix;
use diffgraph::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const SEED_ENV: &str = "DIFFGRAPH_SEED";

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn from_lib(context: &str, e: Error) -> Self {
        let message = format!("{context}: {e}");
        if e.is_config() {
            Self::config(message)
        } else {
            Self::data(message)
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "diffgraph",
    version,
    about = "Diffusion-guided graph and hypergraph pretraining"
)]
struct Cli {
    /// Threads for per-instance work; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining from a JSON run config.
    PretrainGcl {
        #[arg(long)]
        config: PathBuf,
    },
    /// Masked-autoencoder pretraining from a JSON run config.
    PretrainGmae {
        #[arg(long)]
        config: PathBuf,
    },
    /// Diffusion kernel of an adjacency matrix given as CSV.
    Diffuse(DiffuseArgs),
    /// Linear-probe evaluation of a frozen checkpoint.
    Eval(EvalArgs),
    /// Intra- and cross-community diffusion heatmaps.
    DemoCommunity(DemoArgs),
    /// Writes a labeled block-model dataset.
    GenSbm(GenSbmArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Rw,
    Ppr,
    Heat,
}

impl From<KindArg> for KernelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Rw => KernelKind::RandomWalk,
            KindArg::Ppr => KernelKind::Ppr,
            KindArg::Heat => KernelKind::Heat,
        }
    }
}

#[derive(clap::Args)]
struct DiffuseArgs {
    /// Symmetric nonnegative adjacency CSV; the diagonal is ignored.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = KindArg::Ppr)]
    kind: KindArg,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value_t = 0.15, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    time: f64,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Drop kernel entries below this value, preserving row sums.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    epsilon: f64,
    /// Keep only the largest entries per row, preserving row sums.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    Mean,
    Max,
    Attention,
    Diffusion,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset JSON with labels.
    #[arg(long)]
    dataset: PathBuf,
    /// Results JSON; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Number of probe seeds, starting at the base seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Base seed; DIFFGRAPH_SEED takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReadoutArg::Diffusion)]
    readout: ReadoutArg,
    #[arg(long, default_value_t = 0.7)]
    split_fraction: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Clique,
    Path,
}

#[derive(clap::Args)]
struct DemoArgs {
    #[arg(long, default_value = "community-demo")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = TopologyArg::Clique)]
    topology: TopologyArg,
    #[arg(long, default_value_t = 4)]
    community_size: usize,
    #[arg(long, default_value_t = 4)]
    order: usize,
}

#[derive(clap::Args)]
struct GenSbmArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_graphs: usize,
    #[arg(long, default_value_t = 20)]
    n_nodes: usize,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Classes as `p_in,p_out,communities` separated by `;`.
    #[arg(long)]
    classes: Option<String>,
    /// DIFFGRAPH_SEED takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Where the training instances come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum DatasetSource {
    Path(PathBuf),
    Inline(InlineDataset),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineDataset {
    sbm: SbmDatasetConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GclRun {
    dataset: DatasetSource,
    output_dir: PathBuf,
    seed: Option<u64>,
    #[serde(default)]
    gcl: GclConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmaeRun {
    dataset: DatasetSource,
    output_dir: PathBuf,
    seed: Option<u64>,
    #[serde(default)]
    gmae: GmaeConfig,
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            Failure::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(config_seed: Option<u64>, fallback: u64) -> CliResult<u64> {
    Ok(env_seed()?.or(config_seed).unwrap_or(fallback))
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::config(format!(
            "invalid config {} at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn load_source(source: &DatasetSource, base: &Path) -> CliResult<LabeledDataset> {
    match source {
        DatasetSource::Path(p) => {
            let p = if p.is_relative() {
                base.join(p)
            } else {
                p.clone()
            };
            load_dataset(&p).map_err(|e| Failure::data(format!("dataset {}: {e}", p.display())))
        }
        DatasetSource::Inline(i) => {
            generate_sbm_dataset(&i.sbm).map_err(|e| Failure::from_lib("dataset", e))
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, contents)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn write_telemetry(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> CliResult<()> {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    write_file(path, &out)
}

fn finish_pretraining(
    output_dir: &Path,
    checkpoint: &Checkpoint,
    telemetry: (&str, Vec<String>),
) -> CliResult<()> {
    fs::create_dir_all(output_dir)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", output_dir.display())))?;
    save_checkpoint(&output_dir.join("checkpoint.json"), checkpoint)
        .map_err(|e| Failure::from_lib("checkpoint", e))?;
    write_telemetry(
        &output_dir.join("telemetry.csv"),
        telemetry.0,
        telemetry.1.into_iter(),
    )?;
    println!(
        "wrote {} and {}",
        output_dir.join("checkpoint.json").display(),
        output_dir.join("telemetry.csv").display()
    );
    Ok(())
}

fn cmd_pretrain_gcl(config: &Path, workers: usize) -> CliResult<()> {
    let mut run: GclRun = read_config(config)?;
    run.gcl.seed = resolve_seed(run.seed, run.gcl.seed)?;
    run.gcl
        .validate()
        .map_err(|e| Failure::from_lib("config", e))?;
    let data = load_source(&run.dataset, &config_dir(config))?;
    let outcome = train_gcl(&data.instances, &run.gcl, workers)
        .map_err(|e| Failure::from_lib("pretrain-gcl", e))?;
    let settings = serde_json::to_value(&run).map_err(|e| Failure::data(e.to_string()))?;
    let checkpoint = Checkpoint::capture(
        CheckpointConfig {
            pipeline: "gcl".into(),
            encoder: outcome.encoder,
            input_diffusion: Some(run.gcl.diffusion.clone()),
            settings,
        },
        &outcome.params,
        run.gcl.seed,
        run.gcl.epochs,
    );
    let out = config_dir(config).join(&run.output_dir);
    finish_pretraining(
        &out,
        &checkpoint,
        (
            GCL_TELEMETRY_HEADER,
            outcome.telemetry.iter().map(|r| r.csv_row()).collect(),
        ),
    )
}

fn cmd_pretrain_gmae(config: &Path, workers: usize) -> CliResult<()> {
    let mut run: GmaeRun = read_config(config)?;
    run.gmae.seed = resolve_seed(run.seed, run.gmae.seed)?;
    run.gmae
        .validate()
        .map_err(|e| Failure::from_lib("config", e))?;
    let data = load_source(&run.dataset, &config_dir(config))?;
    let outcome = train_gmae(&data.instances, &run.gmae, workers)
        .map_err(|e| Failure::from_lib("pretrain-gmae", e))?;
    let settings = serde_json::to_value(&run).map_err(|e| Failure::data(e.to_string()))?;
    let checkpoint = Checkpoint::capture(
        CheckpointConfig {
            pipeline: "gmae".into(),
            encoder: outcome.encoder,
            input_diffusion: Some(run.gmae.diffusion.clone()),
            settings,
        },
        &outcome.params,
        run.gmae.seed,
        run.gmae.epochs,
    );
    let out = config_dir(config).join(&run.output_dir);
    finish_pretraining(
        &out,
        &checkpoint,
        (
            GMAE_TELEMETRY_HEADER,
            outcome.telemetry.iter().map(|r| r.csv_row()).collect(),
        ),
    )
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::data(format!("stdout: {e}"))),
    }
}

fn cmd_diffuse(args: &DiffuseArgs) -> CliResult<()> {
    let config = DiffusionConfig {
        kind: args.kind.into(),
        lambda: args.lambda,
        alpha: args.alpha,
        time: args.time,
        order: args.order,
        series_weights: None,
        sparsify_epsilon: args.epsilon,
        sparsify_top_k: args.top_k,
    };
    config
        .validate()
        .map_err(|e| Failure::from_lib("kernel flags", e))?;
    let m = load_matrix_csv(&args.input)
        .map_err(|e| Failure::data(format!("{}: {e}", args.input.display())))?;
    if m.rows() != m.cols() {
        return Err(Failure::data(format!(
            "{}: adjacency must be square",
            args.input.display()
        )));
    }
    let mut stripped = m.clone();
    for i in 0..m.rows() {
        stripped[(i, i)] = 0.0;
    }
    let adjacency = CsrMatrix::from_dense(&stripped, 0.0);
    let features = diffgraph::dense::Matrix::zeros(m.rows(), 1);
    let graph = Graph::new(adjacency, features)
        .map_err(|e| Failure::data(format!("{}: {e}", args.input.display())))?;
    let kernel = DiffusionKernel::build(&Structure::Graph(graph), &config)
        .map_err(|e| Failure::from_lib("diffuse", e))?;
    emit(
        args.output.as_deref(),
        &matrix_to_csv(&kernel.matrix.to_dense()),
    )
}

#[derive(Serialize)]
struct EvalReport<'a> {
    accuracy: &'a diffgraph::eval::MetricSummary,
    macro_f1: &'a diffgraph::eval::MetricSummary,
    auc: &'a diffgraph::eval::MetricSummary,
    undefined_f1_classes: &'a [Vec<usize>],
    conventions: serde_json::Value,
    config: serde_json::Value,
}

fn cmd_eval(args: &EvalArgs, workers: usize) -> CliResult<()> {
    let probe = ProbeConfig {
        split_fraction: args.split_fraction,
        epochs: args.epochs,
        lr: args.lr,
    };
    probe
        .validate()
        .map_err(|e| Failure::from_lib("probe flags", e))?;
    if args.seeds == 0 {
        return Err(Failure::config("--seeds must be at least 1"));
    }
    let base = env_seed()?.unwrap_or(args.seed);
    let checkpoint = load_checkpoint(&args.checkpoint)
        .map_err(|e| Failure::data(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let data = load_dataset(&args.dataset)
        .map_err(|e| Failure::data(format!("dataset {}: {e}", args.dataset.display())))?;
    let labels = data.labels.clone().ok_or_else(|| {
        Failure::data(format!("dataset {} has no labels", args.dataset.display()))
    })?;
    let readout = match args.readout {
        ReadoutArg::Mean => ReadoutConfig::simple(ReadoutKind::Mean),
        ReadoutArg::Max => ReadoutConfig::simple(ReadoutKind::Max),
        ReadoutArg::Attention => ReadoutConfig::simple(ReadoutKind::Attention),
        ReadoutArg::Diffusion => ReadoutConfig::default(),
    };
    let embeddings = embed_dataset(&checkpoint, &data.instances, &readout, workers)
        .map_err(|e| Failure::data(format!("embedding: {e}")))?;
    let seeds: Vec<u64> = (0..args.seeds).map(|k| base + k).collect();
    let result = probe_seeds(&embeddings, &labels, &probe, &seeds)
        .map_err(|e| Failure::from_lib("probe", e))?;
    let report = EvalReport {
        accuracy: &result.accuracy,
        macro_f1: &result.macro_f1,
        auc: &result.auc,
        undefined_f1_classes: &result.undefined_f1_classes,
        conventions: serde_json::json!({
            "auc": "Mann-Whitney statistic, ties count 0.5; macro one-vs-rest for more than two classes",
            "macro_f1": "a class absent from both truth and predictions counts as 0 and is listed in undefined_f1_classes",
            "std": "sample standard deviation over seeds",
        }),
        config: serde_json::json!({
            "checkpoint": args.checkpoint,
            "dataset": args.dataset,
            "readout": readout,
            "probe": probe,
            "seeds": seeds,
        }),
    };
    let mut text =
        serde_json::to_string_pretty(&report).map_err(|e| Failure::data(e.to_string()))?;
    text.push('\n');
    emit(args.output.as_deref(), &text)
}

fn cmd_demo(args: &DemoArgs) -> CliResult<()> {
    let config = DemoConfig {
        topology: match args.topology {
            TopologyArg::Clique => DemoTopology::Clique,
            TopologyArg::Path => DemoTopology::Path,
        },
        community_size: args.community_size,
        diffusion: DiffusionConfig {
            order: args.order,
            ..DiffusionConfig::default()
        },
    };
    let report = community_diffusion_demo(&config, Some(&args.out_dir))
        .map_err(|e| Failure::from_lib("demo", e))?;
    for s in &report.stages {
        println!(
            "{}: disconnected inter-block max = {:e} [{}]; bridged inter-block max = {:e} [{}], min = {:e}",
            s.kind.name(),
            s.intra_inter_max,
            if s.intra_inter_max == 0.0 { "ok" } else { "FAILED" },
            s.bridged_inter_max,
            if s.bridged_inter_max > 0.0 { "ok" } else { "FAILED" },
            s.bridged_inter_min
        );
    }
    if let (Some(h), Some(p)) = (
        report.stage(KernelKind::Heat),
        report.stage(KernelKind::Ppr),
    ) {
        println!(
            "heat vs ppr bridged inter-block min: {:e} vs {:e}",
            h.bridged_inter_min, p.bridged_inter_min
        );
    }
    println!(
        "wrote {} files to {}",
        report.stages.iter().map(|s| s.files.len()).sum::<usize>(),
        args.out_dir.display()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::data("inter-block mass check failed"))
    }
}

fn parse_classes(text: &str) -> CliResult<Vec<SbmClass>> {
    text.split(';')
        .map(|c| {
            let parts: Vec<&str> = c.split(',').map(str::trim).collect();
            let bad =
                || Failure::config(format!("bad class {c:?}; expected p_in,p_out,communities"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(SbmClass {
                p_in: parts[0].parse().map_err(|_| bad())?,
                p_out: parts[1].parse().map_err(|_| bad())?,
                n_communities: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn cmd_gen_sbm(args: &GenSbmArgs) -> CliResult<()> {
    let mut config = SbmDatasetConfig {
        n_graphs: args.n_graphs,
        n_nodes: args.n_nodes,
        feature_dim: args.feature_dim,
        seed: env_seed()?.unwrap_or(args.seed),
        ..SbmDatasetConfig::default()
    };
    if let Some(c) = &args.classes {
        config.classes = parse_classes(c)?;
    }
    let data = generate_sbm_dataset(&config).map_err(|e| Failure::from_lib("gen-sbm", e))?;
    save_dataset(&args.output, &data)
        .map_err(|e| Failure::data(format!("{}: {e}", args.output.display())))?;
    println!("wrote {} graphs to {}", data.len(), args.output.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.workers == 0 {
        return Err(Failure::config("--workers must be at least 1"));
    }
    match &cli.command {
        Command::PretrainGcl { config } => cmd_pretrain_gcl(config, cli.workers),
        Command::PretrainGmae { config } => cmd_pretrain_gmae(config, cli.workers),
        Command::Diffuse(a) => cmd_diffuse(a),
        Command::Eval(a) => cmd_eval(a, cli.workers),
        Command::DemoCommunity(a) => cmd_demo(a),
        Command::GenSbm(a) => cmd_gen_sbm(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
