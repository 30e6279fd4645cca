//! Dense per-node feature matrices, their binary cache format, and batch
//! extraction of the structure and distance blocks.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"DHSE" | u32 version = 1 | u64 rows | u64 cols
//! u32 block count, then per block: u32 name length | name bytes | u64 start | u64 end
//! rows * cols f32 values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::distance::{distance_sequence, distribution_stats, DISTANCE_WIDTH};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::structure::{structure_width, StructureVector};

pub const FEATURE_MAGIC: &[u8; 4] = b"DHSE";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl BlockDescriptor {
    pub fn new(name: impl Into<String>, start: usize, end: usize) -> Self {
        BlockDescriptor {
            name: name.into(),
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    blocks: Vec<BlockDescriptor>,
}

impl FeatureMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        blocks: Vec<BlockDescriptor>,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} feature matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite feature at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        let mut expected = 0;
        for b in &blocks {
            if b.start != expected || b.end < b.start {
                return Err(Error::Format(format!(
                    "block {:?} [{}, {}) does not continue at column {expected}",
                    b.name, b.start, b.end
                )));
            }
            expected = b.end;
        }
        if expected != cols {
            return Err(Error::Format(format!(
                "blocks cover {expected} of {cols} columns"
            )));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            blocks,
        })
    }

    /// Matrix with a single block spanning every column.
    pub fn single_block(name: &str, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(rows, cols, data, vec![BlockDescriptor::new(name, 0, cols)])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn blocks(&self) -> &[BlockDescriptor] {
        &self.blocks
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| {
            self.data[r * self.cols + c] as f64
        })
    }

    /// Copy of the given columns, in order, as a single block.
    pub fn select_columns(&self, name: &str, columns: &[usize]) -> Result<FeatureMatrix> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.cols) {
            return Err(Error::Shape(format!("column {c} out of range for width {}", self.cols)));
        }
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(columns.iter().map(|&c| row[c]));
        }
        FeatureMatrix::single_block(name, self.rows, columns.len(), data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&(self.blocks.len() as u32).to_le_bytes())?;
        for b in &self.blocks {
            w.write_all(&(b.name.len() as u32).to_le_bytes())?;
            w.write_all(b.name.as_bytes())?;
            w.write_all(&(b.start as u64).to_le_bytes())?;
            w.write_all(&(b.end as u64).to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(Error::Format(format!("bad feature-file magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!("unsupported feature-file version {version}")));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let nblocks = read_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(nblocks.min(1024));
        for _ in 0..nblocks {
            let name = read_string(&mut r)?;
            let start = read_u64(&mut r)? as usize;
            let end = read_u64(&mut r)? as usize;
            blocks.push(BlockDescriptor { name, start, end });
        }
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("feature matrix dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("reading payload: {e}")))?;
        if bytes.len() != count * 4 {
            return Err(Error::Format(format!(
                "payload holds {} bytes, expected {}",
                bytes.len(),
                count * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureMatrix::new(rows, cols, data, blocks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("implausible name length {len}")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("name is not UTF-8".into()))
}

/// Structure (`6k + 2` columns) and distance (7 columns) blocks for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct HopFeatures {
    pub structure: FeatureMatrix,
    pub distance: FeatureMatrix,
}

/// Row of both blocks for one node: one k-hop BFS feeds every radius.
pub fn node_features(g: &Graph, in_degree: usize, out_degree: usize, v: NodeId, k: usize) -> (Vec<f64>, [f64; DISTANCE_WIDTH]) {
    let net = g.extract_ego_net(v, k);
    let structure = StructureVector::from_ego_net(&net, in_degree, out_degree).to_vec();
    let distance = distribution_stats(&distance_sequence(&net)).to_array();
    (structure, distance)
}

/// Extracts both feature blocks, fanning nodes out over the current rayon pool.
pub fn extract_hop_features(g: &Graph, k: usize) -> Result<HopFeatures> {
    if k == 0 {
        return Err(Error::Config("hop count k must be at least 1".into()));
    }
    let n = g.num_nodes();
    let degrees = g.degrees();
    let rows: Vec<(Vec<f64>, [f64; DISTANCE_WIDTH])> = (0..n)
        .into_par_iter()
        .map(|v| {
            node_features(
                g,
                degrees.in_degree[v],
                degrees.out_degree[v],
                v as NodeId,
                k,
            )
        })
        .collect();

    let sw = structure_width(k);
    let mut structure = Vec::with_capacity(n * sw);
    let mut distance = Vec::with_capacity(n * DISTANCE_WIDTH);
    for (s, d) in rows {
        structure.extend(s.into_iter().map(|x| x as f32));
        distance.extend(d.into_iter().map(|x| x as f32));
    }
    Ok(HopFeatures {
        structure: FeatureMatrix::single_block("structure", n, sw, structure)?,
        distance: FeatureMatrix::single_block("distance", n, DISTANCE_WIDTH, distance)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_widths_follow_hop_count() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let f = extract_hop_features(&g, 2).unwrap();
        assert_eq!(f.structure.cols(), 14);
        assert_eq!(f.distance.cols(), 7);
        assert_eq!(f.structure.rows(), 5);
    }

    #[test]
    fn single_node_graph_is_all_zero() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let f = extract_hop_features(&g, 2).unwrap();
        assert!(f.structure.data().iter().all(|&x| x == 0.0));
        assert!(f.distance.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn binary_round_trip_and_bad_magic() {
        let m = FeatureMatrix::new(
            2,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.5, -6.0],
            vec![BlockDescriptor::new("a", 0, 1), BlockDescriptor::new("b", 1, 3)],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DHSE");
        assert_eq!(FeatureMatrix::read_from(&buf[..]).unwrap(), m);

        buf[0] = b'X';
        assert!(matches!(FeatureMatrix::read_from(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = FeatureMatrix::single_block("x", 2, 2, vec![1.0; 4]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(FeatureMatrix::read_from(&buf[..]).is_err());
    }

    #[test]
    fn descriptors_must_partition_columns() {
        let gap = vec![BlockDescriptor::new("a", 0, 1), BlockDescriptor::new("b", 2, 3)];
        assert!(FeatureMatrix::new(1, 3, vec![0.0; 3], gap).is_err());
        let short = vec![BlockDescriptor::new("a", 0, 2)];
        assert!(FeatureMatrix::new(1, 3, vec![0.0; 3], short).is_err());
        assert!(FeatureMatrix::single_block("a", 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn select_columns_keeps_order() {
        let m = FeatureMatrix::single_block("x", 2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = m.select_columns("y", &[2, 0]).unwrap();
        assert_eq!(s.data(), &[3., 1., 6., 4.]);
        assert!(m.select_columns("y", &[3]).is_err());
    }
}
