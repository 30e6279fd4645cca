//! End-to-end commands: feature extraction with caching, training,
//! correct-and-smooth, multi-seed evaluation and synthetic data generation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cs::{correct_and_smooth, CsConfig, LabelState, NormalizedAdjacency};
use crate::dataset::{read_labels, Dataset, DatasetPaths};
use crate::encoder::{BranchKind, BranchWidths, RawFeatures, DEFAULT_LN_EPS};
use crate::error::{Error, Result};
use crate::features::{extract_hop_features, FeatureMatrix, HopFeatures};
use crate::graph::Graph;
use crate::model::checkpoint::{Checkpoint, CheckpointConfig};
use crate::model::train::{accuracy, train, EpochMetrics, TrainConfig};
use crate::model::{argmax_rows, Activation, Model, ModelConfig, ModelKind, Transition};
use crate::params::Params;
use crate::report::{fmt_mean_std, Table};
use crate::structure::{structure_width, HOP_WIDTH};
use crate::synth::{planted_partition, SynthConfig};

/// Architecture knobs; class count and input widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub diffusion_depth: usize,
    pub transition: Transition,
    pub activation: Activation,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchConfig {
            kind: m.kind,
            hidden: m.hidden,
            heads: m.heads,
            layers: m.layers,
            diffusion_depth: m.diffusion_depth,
            transition: m.transition,
            activation: m.activation,
            dropout: m.dropout,
            layer_norm_eps: DEFAULT_LN_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub drop_degree: bool,
    pub drop_node_level: bool,
    pub drop_graph_level: bool,
    pub drop_distance: bool,
    /// Concatenate raw blocks instead of encoding them.
    pub no_encoding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DatasetPaths,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Largest ego-net hop radius.
    pub k: usize,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub cs: CsConfig,
    pub ablation: Ablation,
    pub seed: u64,
    /// Seeds for multi-run commands; empty means `[seed]`.
    pub seeds: Vec<u64>,
    /// Caps extraction parallelism; `None` uses every core.
    pub threads: Option<usize>,
    /// Checkpoint for `cs`; defaults to the one `train` wrote for `seed`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DatasetPaths::default(),
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("out"),
            k: 2,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            cs: CsConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
            seeds: Vec::new(),
            threads: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.cs.validate()
    }

    pub fn structure_cache(&self) -> PathBuf {
        self.cache_dir.join(format!("structure_k{}.dhse", self.k))
    }

    pub fn distance_cache(&self) -> PathBuf {
        self.cache_dir.join(format!("distance_k{}.dhse", self.k))
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("model_seed{seed}.dhsm"))
    }
}

/// Which raw columns feed the model; stored in checkpoints so `cs` can
/// rebuild exactly the same inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub k: usize,
    pub structure_columns: Vec<usize>,
    pub distance: bool,
}

impl FeatureSelection {
    pub fn new(k: usize, ablation: &Ablation) -> Self {
        let mut structure_columns = Vec::new();
        if !ablation.drop_degree {
            structure_columns.extend([0, 1]);
        }
        for r in 0..k {
            let base = 2 + HOP_WIDTH * r;
            if !ablation.drop_node_level {
                structure_columns.extend(base..base + 3);
            }
            if !ablation.drop_graph_level {
                structure_columns.extend(base + 3..base + 6);
            }
        }
        FeatureSelection {
            k,
            structure_columns,
            distance: !ablation.drop_distance,
        }
    }

    pub fn widths(&self, intrinsic: usize) -> BranchWidths {
        BranchWidths {
            intrinsic: Some(intrinsic),
            structure: (!self.structure_columns.is_empty()).then_some(self.structure_columns.len()),
            distance: self.distance.then_some(crate::distance::DISTANCE_WIDTH),
        }
    }

    pub fn build(&self, intrinsic: &FeatureMatrix, hop: &HopFeatures) -> Result<RawFeatures> {
        let mut raw = RawFeatures::new().with(BranchKind::Intrinsic, intrinsic.to_array());
        if !self.structure_columns.is_empty() {
            let s = hop.structure.select_columns("structure", &self.structure_columns)?;
            raw = raw.with(BranchKind::Structure, s.to_array());
        }
        if self.distance {
            raw = raw.with(BranchKind::Distance, hop.distance.to_array());
        }
        raw.check_rows()?;
        Ok(raw)
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct ExtractReport {
    pub num_nodes: usize,
    pub structure_cols: usize,
    pub distance_cols: usize,
    pub seconds: f64,
    pub structure_path: PathBuf,
    pub distance_path: PathBuf,
}

fn load_graph(cfg: &RunConfig) -> Result<Graph> {
    let n = read_labels(&cfg.data.labels)?.len();
    Graph::load_edge_list(&cfg.data.edges, Some(n))
}

fn extract_and_save(cfg: &RunConfig, g: &Graph) -> Result<(HopFeatures, ExtractReport)> {
    let start = Instant::now();
    let hop = with_threads(cfg.threads, || extract_hop_features(g, cfg.k))??;
    let seconds = start.elapsed().as_secs_f64();
    ensure_dir(&cfg.cache_dir)?;
    hop.structure.save(cfg.structure_cache())?;
    hop.distance.save(cfg.distance_cache())?;
    let report = ExtractReport {
        num_nodes: g.num_nodes(),
        structure_cols: hop.structure.cols(),
        distance_cols: hop.distance.cols(),
        seconds,
        structure_path: cfg.structure_cache(),
        distance_path: cfg.distance_cache(),
    };
    Ok((hop, report))
}

/// Computes and caches the structure and distance blocks.
pub fn cmd_extract(cfg: &RunConfig) -> Result<ExtractReport> {
    cfg.validate()?;
    let g = load_graph(cfg)?;
    Ok(extract_and_save(cfg, &g)?.1)
}

/// Reads cached blocks, re-extracting when missing or stale.
pub fn load_or_extract(cfg: &RunConfig, g: &Graph) -> Result<HopFeatures> {
    let fits = |m: &FeatureMatrix, cols: usize| m.rows() == g.num_nodes() && m.cols() == cols;
    if let (Ok(s), Ok(d)) = (
        FeatureMatrix::load(cfg.structure_cache()),
        FeatureMatrix::load(cfg.distance_cache()),
    ) {
        if fits(&s, structure_width(cfg.k)) && fits(&d, crate::distance::DISTANCE_WIDTH) {
            return Ok(HopFeatures {
                structure: s,
                distance: d,
            });
        }
    }
    Ok(extract_and_save(cfg, g)?.0)
}

/// A fully prepared training problem.
pub struct Prepared {
    pub dataset: Dataset,
    pub selection: FeatureSelection,
    pub raw: RawFeatures,
    pub model_config: ModelConfig,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.data)?;
    prepare_dataset(cfg, dataset)
}

pub fn prepare_dataset(cfg: &RunConfig, dataset: Dataset) -> Result<Prepared> {
    let hop = load_or_extract(cfg, &dataset.graph)?;
    let selection = FeatureSelection::new(cfg.k, &cfg.ablation);
    let raw = selection.build(&dataset.intrinsic, &hop)?;
    let a = &cfg.arch;
    let model_config = ModelConfig {
        kind: a.kind,
        hidden: a.hidden,
        heads: a.heads,
        layers: a.layers,
        diffusion_depth: a.diffusion_depth,
        transition: a.transition,
        activation: a.activation,
        num_classes: dataset.num_classes().max(2),
        inputs: selection.widths(dataset.intrinsic.cols()),
        encoding: !cfg.ablation.no_encoding,
        layer_norm_eps: a.layer_norm_eps,
        dropout: a.dropout,
    };
    model_config.validate()?;
    Ok(Prepared {
        dataset,
        selection,
        raw,
        model_config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracies {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Accuracies {
    fn of(pred: &[usize], ds: &Dataset) -> Self {
        Accuracies {
            train: accuracy(pred, &ds.labels, &ds.split.train),
            valid: accuracy(pred, &ds.labels, &ds.split.valid),
            test: accuracy(pred, &ds.labels, &ds.split.test),
        }
    }
}

/// One seed's trained model and its base and post-processed accuracies.
pub struct RunOutcome {
    pub seed: u64,
    pub model: Model,
    pub params: Params,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub base: Accuracies,
}

pub fn train_seed(prep: &Prepared, train_cfg: &TrainConfig, seed: u64) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, init) = Model::new(prep.model_config.clone(), &mut rng)?;
    let ds = &prep.dataset;
    let out = train(&model, &init, &prep.raw, &ds.graph, &ds.labels, &ds.split, train_cfg, seed)?;
    let z = model.predict(&out.best, &prep.raw, &ds.graph)?;
    let base = Accuracies::of(&argmax_rows(&z.z), ds);
    Ok(RunOutcome {
        seed,
        model,
        params: out.best,
        history: out.history,
        best_epoch: out.best_epoch,
        base,
    })
}

/// Base and post-C&S accuracies of a set of soft predictions.
pub fn apply_cs(ds: &Dataset, z: ndarray::Array2<f64>, cs: &CsConfig) -> Result<(Accuracies, Accuracies, Vec<usize>)> {
    let base = Accuracies::of(&argmax_rows(&z), ds);
    let state = LabelState::new(z, &ds.labels, &ds.split)?;
    let s = NormalizedAdjacency::from_graph(&ds.graph);
    let out = correct_and_smooth(&state, &s, cs)?;
    Ok((base, Accuracies::of(&out.predictions, ds), out.predictions))
}

fn history_table(history: &[EpochMetrics]) -> Table {
    let mut t = Table::new(["epoch", "loss", "train_acc", "valid_acc", "test_acc"]);
    for m in history {
        t.push([
            m.epoch.to_string(),
            format!("{:.6}", m.loss),
            format!("{:.4}", m.train_acc),
            format!("{:.4}", m.valid_acc),
            format!("{:.4}", m.test_acc),
        ]);
    }
    t
}

#[derive(Debug)]
pub struct TrainReport {
    pub runs: Vec<(u64, Accuracies, Option<usize>)>,
    pub table: Table,
}

/// Trains one model per seed, writing a checkpoint and a per-epoch metrics
/// table for each, plus a summary with mean ± std across seeds.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let prep = prepare(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let mut runs = Vec::new();
    let mut table = Table::new(["run", "train_acc", "valid_acc", "test_acc", "best_epoch"]);
    for seed in cfg.run_seeds() {
        let run = train_seed(&prep, &cfg.train, seed)?;
        let ck = Checkpoint {
            config: CheckpointConfig {
                model: prep.model_config.clone(),
                meta: serde_json::json!({
                    "selection": prep.selection,
                    "seed": seed,
                }),
            },
            params: run.params.clone(),
        };
        ck.save(cfg.checkpoint_path(seed))?;
        history_table(&run.history).save(&cfg.out_dir, &format!("metrics_seed{seed}"))?;
        table.push([
            format!("seed {seed}"),
            format!("{:.4}", run.base.train),
            format!("{:.4}", run.base.valid),
            format!("{:.4}", run.base.test),
            run.best_epoch.map_or("-".into(), |e| e.to_string()),
        ]);
        runs.push((seed, run.base, run.best_epoch));
    }
    let col = |f: fn(&Accuracies) -> f64| runs.iter().map(|r| f(&r.1)).collect::<Vec<_>>();
    table.push([
        "mean ± std".to_string(),
        fmt_mean_std(&col(|a| a.train)),
        fmt_mean_std(&col(|a| a.valid)),
        fmt_mean_std(&col(|a| a.test)),
        "-".to_string(),
    ]);
    table.save(&cfg.out_dir, "train_report")?;
    Ok(TrainReport { runs, table })
}

#[derive(Debug)]
pub struct CsReport {
    pub base: Accuracies,
    pub corrected: Accuracies,
    pub predictions: Vec<usize>,
    pub table: Table,
}

fn accuracy_table(rows: &[(&str, String, String)]) -> Table {
    let mut t = Table::new(["model", "valid_acc", "test_acc"]);
    for (name, v, te) in rows {
        t.push([name.to_string(), v.clone(), te.clone()]);
    }
    t
}

/// Runs correct-and-smooth on a checkpoint's soft predictions.
pub fn cmd_cs(cfg: &RunConfig) -> Result<CsReport> {
    cfg.validate()?;
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path(cfg.seed));
    let ck = Checkpoint::load(&path)?;
    let (model, params) = ck.restore()?;
    let selection: FeatureSelection = serde_json::from_value(ck.config.meta["selection"].clone())
        .map_err(|e| Error::Format(format!("checkpoint feature selection: {e}")))?;
    let ds = Dataset::load(&cfg.data)?;
    let run_cfg = RunConfig {
        k: selection.k,
        ..cfg.clone()
    };
    let hop = load_or_extract(&run_cfg, &ds.graph)?;
    let raw = selection.build(&ds.intrinsic, &hop)?;
    if ds.num_classes() > model.config.num_classes {
        return Err(Error::Config(format!(
            "labels use {} classes, checkpoint predicts {}",
            ds.num_classes(),
            model.config.num_classes
        )));
    }
    let z = model.predict(&params, &raw, &ds.graph)?.z;
    let (base, corrected, predictions) = apply_cs(&ds, z, &cfg.cs)?;

    ensure_dir(&cfg.out_dir)?;
    let table = accuracy_table(&[
        ("base", format!("{:.4}", base.valid), format!("{:.4}", base.test)),
        ("+C&S", format!("{:.4}", corrected.valid), format!("{:.4}", corrected.test)),
    ]);
    table.save(&cfg.out_dir, "cs_report")?;
    let pred_path = cfg.out_dir.join("predictions.txt");
    crate::dataset::write_labels(&pred_path, &predictions)?;
    Ok(CsReport {
        base,
        corrected,
        predictions,
        table,
    })
}

#[derive(Debug)]
pub struct EvalReport {
    pub base: Vec<Accuracies>,
    pub corrected: Vec<Accuracies>,
    pub final_train_acc: Vec<f64>,
    pub table: Table,
}

/// Train + C&S for every seed; reports mean ± std of both.
pub fn evaluate(prep: &Prepared, cfg: &RunConfig) -> Result<EvalReport> {
    let mut base = Vec::new();
    let mut corrected = Vec::new();
    let mut final_train_acc = Vec::new();
    for seed in cfg.run_seeds() {
        let run = train_seed(prep, &cfg.train, seed)?;
        let z = run.model.predict(&run.params, &prep.raw, &prep.dataset.graph)?.z;
        let (b, c, _) = apply_cs(&prep.dataset, z, &cfg.cs)?;
        final_train_acc.push(run.history.last().map_or(0.0, |m| m.train_acc));
        base.push(b);
        corrected.push(c);
    }
    let col = |v: &[Accuracies], f: fn(&Accuracies) -> f64| fmt_mean_std(&v.iter().map(f).collect::<Vec<_>>());
    let table = accuracy_table(&[
        ("base", col(&base, |a| a.valid), col(&base, |a| a.test)),
        ("+C&S", col(&corrected, |a| a.valid), col(&corrected, |a| a.test)),
    ]);
    Ok(EvalReport {
        base,
        corrected,
        final_train_acc,
        table,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let prep = prepare(cfg)?;
    let report = evaluate(&prep, cfg)?;
    ensure_dir(&cfg.out_dir)?;
    report.table.save(&cfg.out_dir, "eval_report")?;
    Ok(report)
}

/// Generates a planted-partition dataset in the standard layout.
pub fn cmd_synth(params: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetPaths> {
    planted_partition(params)?.save(out_dir)
}
