//! Immutable CSR graph storage and BFS ego-net extraction.
//!
//! A [`Graph`] keeps two views of the same edge set: the directed out-edge
//! lists as loaded, and a symmetrized simple view used by everything
//! structural (ego-nets, triangles, attention neighborhoods, propagation).
//! Self-loops never appear in the undirected neighbor lists; they are kept as
//! per-node flags instead, so BFS and sorted-merge intersections do not have
//! to filter them.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    out_offsets: Vec<usize>,
    out_targets: Vec<NodeId>,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    self_loops: Vec<bool>,
}

/// Per-node in/out degree counts over the directed view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Degrees {
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
}

fn build_csr(num_nodes: usize, pairs: &mut Vec<(NodeId, NodeId)>) -> (Vec<usize>, Vec<NodeId>) {
    pairs.sort_unstable();
    pairs.dedup();
    let mut offsets = vec![0usize; num_nodes + 1];
    for &(u, _) in pairs.iter() {
        offsets[u as usize + 1] += 1;
    }
    for i in 0..num_nodes {
        offsets[i + 1] += offsets[i];
    }
    let targets = pairs.iter().map(|&(_, v)| v).collect();
    (offsets, targets)
}

impl Graph {
    /// Builds both views from directed `(source, target)` pairs.
    /// Parallel edges collapse to one.
    pub fn from_edges(num_nodes: usize, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        if num_nodes > NodeId::MAX as usize {
            return Err(Error::Config(format!("{num_nodes} nodes exceed the u32 id space")));
        }
        for &(u, v) in edges {
            let id = u.max(v) as usize;
            if id >= num_nodes {
                return Err(Error::NodeOutOfRange { id, num_nodes });
            }
        }

        let mut directed = edges.to_vec();
        let (out_offsets, out_targets) = build_csr(num_nodes, &mut directed);

        let mut self_loops = vec![false; num_nodes];
        let mut symmetric = Vec::with_capacity(2 * edges.len());
        for &(u, v) in &directed {
            if u == v {
                self_loops[u as usize] = true;
            } else {
                symmetric.push((u, v));
                symmetric.push((v, u));
            }
        }
        let (offsets, targets) = build_csr(num_nodes, &mut symmetric);

        Ok(Graph {
            num_nodes,
            out_offsets,
            out_targets,
            offsets,
            targets,
            self_loops,
        })
    }

    /// Reads a whitespace-separated edge list. Blank lines and lines starting
    /// with `#` are skipped. When `num_nodes` is `None` it becomes max id + 1.
    pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_edge_list(BufReader::new(file), path, num_nodes)
    }

    /// Same as [`Graph::load_edge_list`] over any reader; `origin` only labels errors.
    pub fn read_edge_list<R: BufRead>(
        reader: R,
        origin: &Path,
        num_nodes: Option<usize>,
    ) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_id: Option<NodeId> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            };
            let mut fields = trimmed.split_whitespace();
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err(format!("expected two node ids, got {trimmed:?}")));
            };
            let parse_id = |s: &str| {
                s.parse::<NodeId>()
                    .map_err(|_| parse_err(format!("invalid node id {s:?}")))
            };
            let (u, v) = (parse_id(a)?, parse_id(b)?);
            if let Some(n) = num_nodes {
                let id = u.max(v) as usize;
                if id >= n {
                    return Err(parse_err(format!("node id {id} >= declared node count {n}")));
                }
            }
            max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
            edges.push((u, v));
        }
        let n = num_nodes.unwrap_or_else(|| max_id.map_or(0, |m| m as usize + 1));
        Graph::from_edges(n, &edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of distinct directed edges, self-loops included.
    pub fn num_directed_edges(&self) -> usize {
        self.out_targets.len()
    }

    /// Number of undirected non-loop edges.
    pub fn num_undirected_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn out_neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.out_targets[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    /// Sorted undirected neighbors of `v`, excluding `v` itself.
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_self_loop(&self, v: NodeId) -> bool {
        self.self_loops[v as usize]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        if u == v {
            return self.has_self_loop(u);
        }
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn undirected_csr(&self) -> (&[usize], &[NodeId]) {
        (&self.offsets, &self.targets)
    }

    pub fn directed_csr(&self) -> (&[usize], &[NodeId]) {
        (&self.out_offsets, &self.out_targets)
    }

    /// Distinct directed edges, self-loops included, in source order.
    pub fn directed_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes as NodeId).flat_map(move |u| self.out_neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Undirected non-loop edges as `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes as NodeId).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn degrees(&self) -> Degrees {
        let mut in_degree = vec![0usize; self.num_nodes];
        for &t in &self.out_targets {
            in_degree[t as usize] += 1;
        }
        let out_degree = self.out_offsets.windows(2).map(|w| w[1] - w[0]).collect();
        Degrees {
            in_degree,
            out_degree,
        }
    }

    /// Induced subgraph on every node within `radius` hops of `center` in the
    /// undirected view. Cost depends only on the size of the ego-net.
    pub fn extract_ego_net(&self, center: NodeId, radius: usize) -> EgoNet {
        assert!((center as usize) < self.num_nodes, "center {center} out of range");
        let mut dist: HashMap<NodeId, u32> = HashMap::new();
        dist.insert(center, 0);
        let mut frontier = vec![center];
        for depth in 1..=radius as u32 {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in self.neighbors(u) {
                    if let Entry::Vacant(slot) = dist.entry(w) {
                        slot.insert(depth);
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }

        let mut members: Vec<(NodeId, u32)> = dist.into_iter().collect();
        members.sort_unstable();
        let nodes: Vec<NodeId> = members.iter().map(|&(v, _)| v).collect();
        let dist_from_center = members.iter().map(|&(_, d)| d).collect();
        let local_of_global: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();

        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for &v in &nodes {
            // `nodes` is sorted, so local ids preserve the global order and
            // the induced lists come out sorted.
            targets.extend(
                self.neighbors(v)
                    .iter()
                    .filter_map(|w| local_of_global.get(w).map(|&l| l as NodeId)),
            );
            offsets.push(targets.len());
        }
        let self_loops = nodes.iter().map(|&v| self.has_self_loop(v)).collect();
        let center_local = local_of_global[&center];

        EgoNet {
            center,
            center_local,
            radius,
            nodes,
            local_of_global,
            offsets,
            targets,
            self_loops,
            dist_from_center,
        }
    }
}

/// Induced r-hop neighborhood of a center node, relabelled to local ids
/// `0..len()` in ascending global order.
#[derive(Debug, Clone)]
pub struct EgoNet {
    center: NodeId,
    center_local: usize,
    radius: usize,
    nodes: Vec<NodeId>,
    local_of_global: HashMap<NodeId, usize>,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    self_loops: Vec<bool>,
    dist_from_center: Vec<u32>,
}

impl EgoNet {
    pub fn center(&self) -> NodeId {
        self.center
    }

    pub fn center_local(&self) -> usize {
        self.center_local
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Global ids, ascending.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn local_of(&self, global: NodeId) -> Option<usize> {
        self.local_of_global.get(&global).copied()
    }

    pub fn global_of(&self, local: usize) -> NodeId {
        self.nodes[local]
    }

    pub fn neighbors(&self, local: usize) -> &[NodeId] {
        &self.targets[self.offsets[local]..self.offsets[local + 1]]
    }

    pub fn degree(&self, local: usize) -> usize {
        self.offsets[local + 1] - self.offsets[local]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&(b as NodeId)).is_ok()
    }

    /// Undirected non-loop edges of the induced subgraph.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn has_self_loop(&self, local: usize) -> bool {
        self.self_loops[local]
    }

    pub fn num_self_loops(&self) -> usize {
        self.self_loops.iter().filter(|&&b| b).count()
    }

    pub fn dist_from_center(&self) -> &[u32] {
        &self.dist_from_center
    }

    /// The sub-ego-net of nodes within `radius` hops, without another BFS.
    /// Hop distances inside the induced r-hop net equal the global ones, so
    /// filtering by distance gives exactly the smaller ego-net.
    pub fn restrict(&self, radius: usize) -> EgoNet {
        if radius >= self.radius {
            return self.clone();
        }
        let keep: Vec<Option<usize>> = {
            let mut next = 0usize;
            self.dist_from_center
                .iter()
                .map(|&d| {
                    (d as usize <= radius).then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let mut nodes = Vec::new();
        let mut dist_from_center = Vec::new();
        let mut self_loops = Vec::new();
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for (old, slot) in keep.iter().enumerate() {
            if slot.is_none() {
                continue;
            }
            nodes.push(self.nodes[old]);
            dist_from_center.push(self.dist_from_center[old]);
            self_loops.push(self.self_loops[old]);
            targets.extend(
                self.neighbors(old)
                    .iter()
                    .filter_map(|&w| keep[w as usize].map(|l| l as NodeId)),
            );
            offsets.push(targets.len());
        }
        let local_of_global = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let center_local = keep[self.center_local].expect("center is always kept");
        EgoNet {
            center: self.center,
            center_local,
            radius,
            nodes,
            local_of_global,
            offsets,
            targets,
            self_loops,
            dist_from_center,
        }
    }
}
