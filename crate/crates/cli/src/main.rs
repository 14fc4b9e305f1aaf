use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use promptcs::eval::prf1;
use promptcs::experiment::{prepare_workload, render_table, run_experiment, RunConfig};
use promptcs::graph::{load_graph_file, save_graph, AttributedGraph, Community, LoadedGraph};
use promptcs::io::{read_json, write_json, OutputHeader};
use promptcs::partition::{default_shard_count, partition_graph, Partition};
use promptcs::query::{load_workload, save_workload, EvalQuery, LabeledQuery, Query, QueryKind};
use promptcs::scale::{infer_scaled, train_scaled};
use promptcs::trainer::{fine_tune, train, FineTuneMode, ModelState, TrainConfig, TrainReport};
use promptcs::{Error, Result};

const OUT_DIR_ENV: &str = "PROMPTCS_OUT_DIR";
const SHARD_TARGET_NODES: usize = 1000;

#[derive(Parser)]
#[command(
    name = "promptcs",
    version,
    about = "Attributed community search with learnable prompt graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic planted-partition graph with communities.
    GenData(GenData),
    /// Generate a labelled query workload for a graph with communities.
    GenQueries(GenQueries),
    /// Split a graph into balanced shards.
    Partition(PartitionCmd),
    /// Train tokens and encoder on the whole graph.
    Train(TrainCmd),
    /// Train on sampled query-route subgraphs of a partitioned graph.
    TrainScaled(TrainScaledCmd),
    /// Predict the community of one query.
    Infer(InferCmd),
    /// Score a prediction file against a ground-truth community.
    Eval(EvalCmd),
    /// Run a full experiment from a config file.
    RunExp(RunExpCmd),
    /// Continue training a saved model on another graph.
    FineTune(FineTuneCmd),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Afc,
    Afn,
    Eqa,
}

impl From<Kind> for QueryKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Afc => QueryKind::Afc,
            Kind::Afn => QueryKind::Afn,
            Kind::Eqa => QueryKind::Eqa,
        }
    }
}

#[derive(Args)]
struct GenQueries {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Kind::Afc)]
    kind: Kind,
    /// Directory receiving train.json, val.json and test.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    label_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PartitionCmd {
    #[arg(long)]
    graph: PathBuf,
    /// Defaults to about 1000 nodes per shard.
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// Validation queries; their truth comes from the graph's communities.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_theta: Option<f64>,
    #[arg(long)]
    lr_tau: Option<f64>,
    #[arg(long)]
    virtual_tokens: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    no_attr_tokens: bool,
    #[arg(long)]
    no_virtual_tokens: bool,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct TrainScaledCmd {
    #[command(flatten)]
    opts: TrainOpts,
    /// Existing partition file; otherwise one is computed.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    shards_per_query: Option<usize>,
}

#[derive(Args)]
struct InferCmd {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    nodes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    attrs: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Run shard by shard over this partition.
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    pred: PathBuf,
    /// Graph file with communities, a list of communities, or one member list.
    #[arg(long)]
    truth: PathBuf,
    /// Which community to score against when the truth file holds several.
    #[arg(long)]
    community: Option<usize>,
}

#[derive(Args)]
struct RunExpCmd {
    #[arg(long)]
    config: PathBuf,
    /// Report path; the table goes next to it with a .txt extension.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PromptOnly,
    Both,
    None,
}

#[derive(Args)]
struct FineTuneCmd {
    #[command(flatten)]
    opts: TrainOpts,
    /// Warm-start checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
}

/// Resolves relative output paths under `$PROMPTCS_OUT_DIR` when it is set.
fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn load_graph_with_communities(path: &Path) -> Result<(AttributedGraph, Vec<Community>)> {
    let LoadedGraph { graph, communities } = load_graph_file(path)?;
    match communities {
        Some(c) if !c.is_empty() => Ok((graph, c)),
        _ => Err(Error::Config(format!(
            "{} has no communities",
            path.display()
        ))),
    }
}

fn gen_data(cmd: GenData) -> Result<()> {
    let cfg = load_config(cmd.config.as_deref())?;
    let (g, communities) = cfg.load_data(cmd.seed)?;
    let header = OutputHeader::new(&cfg.data, cmd.seed);
    let out = out_path(&cmd.out);
    save_graph(&out, &g, Some(&communities), Some(header))?;
    println!(
        "wrote {} ({} nodes, {} edges, {} attributes, {} communities)",
        out.display(),
        g.node_count(),
        g.edge_count(),
        g.attr_count(),
        communities.len()
    );
    Ok(())
}

fn gen_queries(cmd: GenQueries) -> Result<()> {
    let mut cfg = load_config(cmd.config.as_deref())?;
    let w = &mut cfg.workload;
    w.train = cmd.train.unwrap_or(w.train);
    w.val = cmd.val.unwrap_or(w.val);
    w.test = cmd.test.unwrap_or(w.test);
    w.label_ratio = cmd.label_ratio.unwrap_or(w.label_ratio);
    cfg.validate()?;
    let (g, communities) = load_graph_with_communities(&cmd.graph)?;
    let work = prepare_workload(&cfg, &g, &communities, cmd.kind.into(), cmd.seed)?;
    let header = OutputHeader::new(&cfg.workload, cmd.seed);
    let dir = out_path(&cmd.out_dir);
    let unlabeled = |qs: &[EvalQuery]| -> Vec<LabeledQuery> {
        qs.iter()
            .map(|e| LabeledQuery {
                query: e.query.clone(),
                positives: vec![],
                negatives: vec![],
            })
            .collect()
    };
    save_workload(&dir.join("train.json"), &work.train, Some(header.clone()))?;
    save_workload(
        &dir.join("val.json"),
        &unlabeled(&work.val),
        Some(header.clone()),
    )?;
    save_workload(&dir.join("test.json"), &unlabeled(&work.test), Some(header))?;
    println!(
        "wrote {} train, {} val, {} test queries to {}",
        work.train.len(),
        work.val.len(),
        work.test.len(),
        dir.display()
    );
    Ok(())
}

fn partition(cmd: PartitionCmd) -> Result<()> {
    let LoadedGraph { graph, .. } = load_graph_file(&cmd.graph)?;
    let s = cmd
        .shards
        .unwrap_or_else(|| default_shard_count(graph.node_count(), SHARD_TARGET_NODES));
    let p = partition_graph(&graph, s, cmd.seed)?;
    let out = out_path(&cmd.out);
    p.save(&out, Some(OutputHeader::new(&s, cmd.seed)))?;
    println!(
        "wrote {} (s={s}, cut={}, sizes={:?})",
        out.display(),
        p.cut(),
        p.sizes()
    );
    Ok(())
}

struct TrainInputs {
    run: RunConfig,
    train: TrainConfig,
    graph: AttributedGraph,
    queries: Vec<LabeledQuery>,
    val: Vec<EvalQuery>,
}

fn train_inputs(o: &TrainOpts) -> Result<TrainInputs> {
    let mut run = load_config(o.config.as_deref())?;
    let t = &mut run.train;
    t.epochs = o.epochs.unwrap_or(t.epochs);
    t.lr_theta = o.lr_theta.unwrap_or(t.lr_theta);
    t.lr_tau = o.lr_tau.unwrap_or(t.lr_tau);
    t.virtual_tokens = o.virtual_tokens.unwrap_or(t.virtual_tokens);
    run.prompt.delta = o.delta.unwrap_or(run.prompt.delta);
    run.prompt.use_attr_tokens &= !o.no_attr_tokens;
    run.prompt.use_virtual_tokens &= !o.no_virtual_tokens;
    run.encoder.layers = o.layers.unwrap_or(run.encoder.layers);
    run.encoder.hidden = o.hidden.unwrap_or(run.encoder.hidden);
    run.validate()?;

    let LoadedGraph { graph, communities } = load_graph_file(&o.graph)?;
    let queries = load_workload(&o.workload)?;
    let val = match &o.val {
        None => vec![],
        Some(path) => {
            let communities = communities.as_ref().ok_or_else(|| {
                Error::Config("validation queries need a graph with communities".into())
            })?;
            load_workload(path)?
                .into_iter()
                .map(|lq| {
                    let c = lq
                        .query
                        .community
                        .filter(|&c| c < communities.len())
                        .ok_or_else(|| {
                            Error::Query("validation query has no valid community index".into())
                        })?;
                    Ok(EvalQuery {
                        query: lq.query,
                        truth: communities[c].clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(TrainInputs {
        train: run.train_config(o.seed),
        run,
        graph,
        queries,
        val,
    })
}

fn finish_training(
    o: &TrainOpts,
    run: &RunConfig,
    state: &ModelState,
    report: &TrainReport,
) -> Result<()> {
    let header = OutputHeader::new(run, o.seed);
    let out = out_path(&o.out);
    state.save(&out, Some(header.clone()))?;
    let report_path = out_path(
        &o.report
            .clone()
            .unwrap_or_else(|| o.out.with_extension("report.json")),
    );
    #[derive(Serialize)]
    struct ReportFile<'a> {
        header: OutputHeader,
        #[serde(flatten)]
        report: &'a TrainReport,
    }
    write_json(&report_path, &ReportFile { header, report })?;
    let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "wrote {} and {} (epochs={}, final loss={last:.4}, selected epoch={:?})",
        out.display(),
        report_path.display(),
        report.epoch_loss.len(),
        report.selected_epoch
    );
    Ok(())
}

fn train_cmd(cmd: TrainCmd) -> Result<()> {
    let inp = train_inputs(&cmd.opts)?;
    let (state, report) = train(&inp.graph, &inp.queries, &inp.val, &inp.train)?;
    finish_training(&cmd.opts, &inp.run, &state, &report)
}

fn train_scaled_cmd(cmd: TrainScaledCmd) -> Result<()> {
    let mut inp = train_inputs(&cmd.opts)?;
    let scale = &mut inp.run.scale;
    scale.shards = cmd.shards.or(scale.shards);
    scale.shards_per_query = cmd.shards_per_query.unwrap_or(scale.shards_per_query);
    inp.run.validate()?;
    let p = match &cmd.partition {
        Some(path) => Partition::load(path, &inp.graph)?,
        None => {
            let s =
                inp.run.scale.shards.unwrap_or_else(|| {
                    default_shard_count(inp.graph.node_count(), SHARD_TARGET_NODES)
                });
            partition_graph(&inp.graph, s, cmd.opts.seed)?
        }
    };
    let (state, report) = train_scaled(
        &inp.graph,
        &p,
        &inp.queries,
        &inp.val,
        &inp.train,
        &inp.run.scale,
    )?;
    finish_training(&cmd.opts, &inp.run, &state, &report)
}

#[derive(Serialize, Deserialize)]
struct PredictionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    header: Option<OutputHeader>,
    query: Query,
    members: Vec<usize>,
    probs: Vec<f64>,
    threshold: f64,
}

fn infer(cmd: InferCmd) -> Result<()> {
    let LoadedGraph { graph, .. } = load_graph_file(&cmd.graph)?;
    let state = ModelState::load(&cmd.ckpt)?;
    let q = Query::new(&graph, cmd.nodes, cmd.attrs, None)?;
    let pred = match &cmd.partition {
        Some(path) => infer_scaled(
            &Partition::load(path, &graph)?,
            &graph,
            &state,
            &q,
            cmd.threshold,
            cmd.parallel,
        )?,
        None => state.predict(&graph, &q, cmd.threshold)?,
    };
    let members = pred.members();
    println!("members: {}", join(&members));
    println!("node\tprobability");
    for (v, p) in pred.probs.iter().enumerate() {
        println!("{v}\t{p:.6}");
    }
    if let Some(out) = &cmd.out {
        let out = out_path(out);
        let file = PredictionFile {
            header: Some(OutputHeader::new(&q, 0)),
            query: q,
            members,
            probs: pred.probs,
            threshold: pred.threshold,
        };
        write_json(&out, &file)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TruthFile {
    Graph { communities: Vec<Vec<usize>> },
    Many(Vec<Vec<usize>>),
    One(Vec<usize>),
}

fn eval_cmd(cmd: EvalCmd) -> Result<()> {
    let pred: PredictionFile = read_json(&cmd.pred, "prediction file")?;
    let truth: TruthFile = read_json(&cmd.truth, "truth file")?;
    let members = match truth {
        TruthFile::One(m) => m,
        TruthFile::Graph { communities } | TruthFile::Many(communities) => {
            let i = cmd.community.or(pred.query.community).ok_or_else(|| {
                Error::Config("truth file holds several communities; pass --community".into())
            })?;
            communities
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Config(format!("community {i} not in truth file")))?
        }
    };
    let m = prf1(&pred.members, &members)?;
    println!(
        "precision\t{:.6}\nrecall\t{:.6}\nf1\t{:.6}",
        m.precision, m.recall, m.f1
    );
    Ok(())
}

fn run_exp(cmd: RunExpCmd) -> Result<()> {
    let mut cfg = RunConfig::load(&cmd.config)?;
    if let Some(s) = cmd.seed {
        cfg.eval.seeds = vec![s];
    }
    cfg.train.epochs = cmd.epochs.unwrap_or(cfg.train.epochs);
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    let out = out_path(&cmd.out);
    write_json(&out, &report)?;
    let table = render_table(&report);
    let table_path = out.with_extension("txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    print!("{table}");
    eprintln!("wrote {} and {}", out.display(), table_path.display());
    Ok(())
}

fn fine_tune_cmd(cmd: FineTuneCmd) -> Result<()> {
    let inp = train_inputs(&cmd.opts)?;
    let warm = ModelState::load(&cmd.ckpt)?;
    let mode = match cmd.mode {
        Mode::PromptOnly => FineTuneMode::PromptOnly,
        Mode::Both => FineTuneMode::Both,
        Mode::None => FineTuneMode::None,
    };
    let (state, report) = fine_tune(&inp.graph, &inp.queries, &inp.val, &warm, &inp.train, mode)?;
    finish_training(&cmd.opts, &inp.run, &state, &report)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Config(_) => 4,
        Error::Parse { .. } => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(c) => gen_data(c),
        Command::GenQueries(c) => gen_queries(c),
        Command::Partition(c) => partition(c),
        Command::Train(c) => train_cmd(c),
        Command::TrainScaled(c) => train_scaled_cmd(c),
        Command::Infer(c) => infer(c),
        Command::Eval(c) => eval_cmd(c),
        Command::RunExp(c) => run_exp(c),
        Command::FineTune(c) => fine_tune_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
