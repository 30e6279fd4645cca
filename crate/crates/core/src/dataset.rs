//! On-disk dataset layout: edge list, intrinsic feature matrix, one label
//! per line, and three split files of node ids.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::Graph;

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_FILE: &str = "features.dhse";
pub const LABELS_FILE: &str = "labels.txt";
pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Ids must be in range and the three sets pairwise disjoint.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![0u8; num_nodes];
        for (mark, (name, ids)) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
            .into_iter()
            .enumerate()
        {
            for &i in ids {
                if i >= num_nodes {
                    return Err(Error::Config(format!(
                        "{name} split references node {i}, graph has {num_nodes}"
                    )));
                }
                if seen[i] != 0 {
                    return Err(Error::Config(format!("node {i} appears twice across splits")));
                }
                seen[i] = mark as u8 + 1;
            }
        }
        Ok(())
    }
}

fn read_lines<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("expected a non-negative integer, got {t:?}"),
        })?);
    }
    Ok(out)
}

fn write_lines<T: std::fmt::Display>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for x in items {
        writeln!(w, "{x}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_lines(path.as_ref())
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_lines(path.as_ref(), labels)
}

pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_lines(path.as_ref())
}

pub fn write_ids(path: impl AsRef<Path>, ids: &[usize]) -> Result<()> {
    write_lines(path.as_ref(), ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub intrinsic: PathBuf,
    pub labels: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

impl DatasetPaths {
    /// The standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            edges: dir.join(EDGES_FILE),
            intrinsic: dir.join(FEATURES_FILE),
            labels: dir.join(LABELS_FILE),
            train: dir.join(TRAIN_FILE),
            valid: dir.join(VALID_FILE),
            test: dir.join(TEST_FILE),
        }
    }
}

impl Default for DatasetPaths {
    fn default() -> Self {
        Self::in_dir("data")
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: Graph,
    pub intrinsic: FeatureMatrix,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Loads and cross-checks every file; the node count comes from the
    /// label file.
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let labels = read_labels(&paths.labels)?;
        let n = labels.len();
        let graph = Graph::load_edge_list(&paths.edges, Some(n))?;
        let intrinsic = FeatureMatrix::load(&paths.intrinsic)?;
        if intrinsic.rows() != n {
            return Err(Error::Shape(format!(
                "{} has {} rows, labels describe {n} nodes",
                paths.intrinsic.display(),
                intrinsic.rows()
            )));
        }
        let split = Split {
            train: read_ids(&paths.train)?,
            valid: read_ids(&paths.valid)?,
            test: read_ids(&paths.test)?,
        };
        split.validate(n)?;
        Ok(Dataset {
            graph,
            intrinsic,
            labels,
            split,
        })
    }

    /// Writes the dataset in the standard layout; edges as directed pairs.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<DatasetPaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DatasetPaths::in_dir(dir);
        let file = File::create(&paths.edges).map_err(|e| Error::io(&paths.edges, e))?;
        let mut w = BufWriter::new(file);
        let (offsets, targets) = self.graph.directed_csr();
        for u in 0..self.graph.num_nodes() {
            for &v in &targets[offsets[u]..offsets[u + 1]] {
                writeln!(w, "{u}\t{v}").map_err(|e| Error::io(&paths.edges, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&paths.edges, e))?;
        self.intrinsic.save(&paths.intrinsic)?;
        write_labels(&paths.labels, &self.labels)?;
        write_ids(&paths.train, &self.split.train)?;
        write_ids(&paths.valid, &self.split.valid)?;
        write_ids(&paths.test, &self.split.test)?;
        Ok(paths)
    }
}

fn first_existing(candidates: &[PathBuf]) -> Result<PathBuf> {
    candidates
        .iter()
        .find(|p| p.is_file())
        .cloned()
        .ok_or_else(|| Error::io(&candidates[0], std::io::Error::from(std::io::ErrorKind::NotFound)))
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(line.split(',').map(|s| s.trim().to_string()).collect());
    }
    Ok(rows)
}

/// Converts an extracted ogbn-arxiv download (the OGB `raw/` and
/// `split/time/` CSV files, already gunzipped) into the toolkit layout.
/// Files directly inside `src` are accepted as well.
pub fn ingest_ogbn_arxiv(src: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<DatasetPaths> {
    let src = src.as_ref();
    let find = |sub: &str, name: &str| first_existing(&[src.join(sub).join(name), src.join(name)]);
    let edges_path = find("raw", "edge.csv")?;
    let feat_path = find("raw", "node-feat.csv")?;
    let label_path = find("raw", "node-label.csv")?;

    let parse_err = |path: &Path, line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let labels: Vec<usize> = read_csv_rows(&label_path)?
        .iter()
        .enumerate()
        .map(|(i, r)| r[0].parse().map_err(|_| parse_err(&label_path, i + 1, format!("bad label {:?}", r[0]))))
        .collect::<Result<_>>()?;
    let n = labels.len();

    let mut edges = Vec::new();
    for (i, r) in read_csv_rows(&edges_path)?.iter().enumerate() {
        let parse = |s: &String| {
            s.parse::<u32>()
                .map_err(|_| parse_err(&edges_path, i + 1, format!("bad node id {s:?}")))
        };
        if r.len() != 2 {
            return Err(parse_err(&edges_path, i + 1, "expected two columns".into()));
        }
        edges.push((parse(&r[0])?, parse(&r[1])?));
    }
    let graph = Graph::from_edges(n, &edges)?;

    let rows = read_csv_rows(&feat_path)?;
    if rows.len() != n {
        return Err(Error::Shape(format!("{} feature rows for {n} labels", rows.len())));
    }
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * cols);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(parse_err(&feat_path, i + 1, format!("expected {cols} columns")));
        }
        for s in r {
            data.push(s.parse::<f32>().map_err(|_| parse_err(&feat_path, i + 1, format!("bad value {s:?}")))?);
        }
    }
    let intrinsic = FeatureMatrix::single_block("intrinsic", n, cols, data)?;

    let split_ids = |name: &str| -> Result<Vec<usize>> {
        let p = find("split/time", name)?;
        read_csv_rows(&p)?
            .iter()
            .enumerate()
            .map(|(i, r)| r[0].parse().map_err(|_| parse_err(&p, i + 1, format!("bad id {:?}", r[0]))))
            .collect()
    };
    let split = Split {
        train: split_ids("train.csv")?,
        valid: split_ids("valid.csv")?,
        test: split_ids("test.csv")?,
    };
    split.validate(n)?;

    Dataset {
        graph,
        intrinsic,
        labels,
        split,
    }
    .save(out_dir)
}
