use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhse::dataset::{ingest_ogbn_arxiv, DatasetPaths};
use dhse::model::{ModelKind, Transition};
use dhse::pipeline::{self, RunConfig};
use dhse::synth::SynthConfig;
use dhse::{Error, Result};

#[derive(Parser)]
#[command(name = "dhse", version, about = "Hop-wise structure and distance encodings for node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache the structure and distance feature blocks
    Extract(RunArgs),
    /// Train one model per seed and write checkpoints and metrics
    Train(RunArgs),
    /// Post-process a checkpoint's predictions with correct-and-smooth
    Cs(RunArgs),
    /// Train and post-process over all seeds, reporting mean ± std
    Eval(RunArgs),
    /// Generate a planted-partition dataset
    Synth(SynthArgs),
    /// Convert raw ogbn-arxiv CSV files into the toolkit's formats
    Ingest {
        /// Directory holding the OGB `raw/` and `split/time/` folders
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON run configuration; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the standard dataset file names
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    train_ids: Option<PathBuf>,
    #[arg(long)]
    valid_ids: Option<PathBuf>,
    #[arg(long)]
    test_ids: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Largest ego-net radius
    #[arg(short, long)]
    k: Option<usize>,
    /// gat | agdn
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    diffusion_depth: Option<usize>,
    /// attention | sym_norm
    #[arg(long)]
    transition: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    alpha_correct: Option<f64>,
    #[arg(long)]
    alpha_smooth: Option<f64>,
    #[arg(long)]
    cs_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds for multi-run commands
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    drop_degree: bool,
    #[arg(long)]
    drop_node_level: bool,
    #[arg(long)]
    drop_graph_level: bool,
    #[arg(long)]
    drop_distance: bool,
    /// Feed raw concatenated features instead of encoding them
    #[arg(long)]
    no_encoding: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} {s:?}")))
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.data_dir {
            cfg.data = DatasetPaths::in_dir(dir);
        }
        set(&mut cfg.data.edges, self.edges);
        set(&mut cfg.data.intrinsic, self.features);
        set(&mut cfg.data.labels, self.labels);
        set(&mut cfg.data.train, self.train_ids);
        set(&mut cfg.data.valid, self.valid_ids);
        set(&mut cfg.data.test, self.test_ids);
        set(&mut cfg.cache_dir, self.cache_dir);
        set(&mut cfg.out_dir, self.out_dir);
        set(&mut cfg.k, self.k);
        if let Some(m) = &self.model {
            cfg.arch.kind = m.parse::<ModelKind>()?;
        }
        if let Some(t) = &self.transition {
            cfg.arch.transition = parse_enum::<Transition>("transition", t)?;
        }
        set(&mut cfg.arch.hidden, self.hidden);
        set(&mut cfg.arch.heads, self.heads);
        set(&mut cfg.arch.layers, self.layers);
        set(&mut cfg.arch.diffusion_depth, self.diffusion_depth);
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.lr, self.lr);
        set(&mut cfg.train.weight_decay, self.weight_decay);
        set(&mut cfg.cs.alpha_correct, self.alpha_correct);
        set(&mut cfg.cs.alpha_smooth, self.alpha_smooth);
        set(&mut cfg.cs.scale, self.cs_scale);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.seeds, self.seeds);
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint;
        }
        let a = &mut cfg.ablation;
        a.drop_degree |= self.drop_degree;
        a.drop_node_level |= self.drop_node_level;
        a.drop_graph_level |= self.drop_graph_level;
        a.drop_distance |= self.drop_distance;
        a.no_encoding |= self.no_encoding;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON synthesis parameters; flags below override them
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SynthArgs {
    fn to_config(&self) -> Result<SynthConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => SynthConfig::default(),
        };
        set(&mut cfg.nodes, self.nodes);
        set(&mut cfg.classes, self.classes);
        set(&mut cfg.p_in, self.p_in);
        set(&mut cfg.p_out, self.p_out);
        set(&mut cfg.feature_dim, self.feature_dim);
        set(&mut cfg.seed, self.seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Extract(args) => {
            let r = pipeline::cmd_extract(&args.into_config()?)?;
            println!(
                "extracted {} nodes: structure {} cols -> {}, distance {} cols -> {} ({:.2}s)",
                r.num_nodes,
                r.structure_cols,
                r.structure_path.display(),
                r.distance_cols,
                r.distance_path.display(),
                r.seconds
            );
        }
        Command::Train(args) => {
            let cfg = args.into_config()?;
            let r = pipeline::cmd_train(&cfg)?;
            print!("{}", r.table.to_text());
            println!("checkpoints and metrics in {}", cfg.out_dir.display());
        }
        Command::Cs(args) => {
            let cfg = args.into_config()?;
            let r = pipeline::cmd_cs(&cfg)?;
            print!("{}", r.table.to_text());
        }
        Command::Eval(args) => {
            let cfg = args.into_config()?;
            let r = pipeline::cmd_eval(&cfg)?;
            print!("{}", r.table.to_text());
        }
        Command::Synth(args) => {
            let cfg = args.to_config()?;
            let paths = pipeline::cmd_synth(&cfg, &args.out)?;
            println!("wrote dataset with {} nodes to {}", cfg.nodes, paths.edges.parent().unwrap_or(&args.out).display());
        }
        Command::Ingest { src, out } => {
            ingest_ogbn_arxiv(&src, &out)?;
            println!("wrote dataset to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
