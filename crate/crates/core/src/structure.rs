//! Node-level and graph-level structural indicators of hop-wise ego-nets.
//!
//! Every indicator is evaluated on the undirected simple view of an
//! [`EgoNet`]; only the in/out degree pair at the front of a
//! [`StructureVector`] looks at edge direction. Degenerate denominators
//! yield 0 so the resulting features are always finite.

use crate::graph::{EgoNet, Graph, NodeId};

/// Indicators per hop radius: triangles, clustering, square clustering,
/// density, self-loops, transitivity.
pub const HOP_WIDTH: usize = 6;

/// Width of the structure block for hop radii `1..=k`.
pub fn structure_width(k: usize) -> usize {
    2 + HOP_WIDTH * k
}

fn intersection_size(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Number of triangles through local node `v`.
pub fn count_triangles(net: &EgoNet, v: usize) -> usize {
    let nv = net.neighbors(v);
    let twice: usize = nv
        .iter()
        .map(|&u| intersection_size(nv, net.neighbors(u as usize)))
        .sum();
    twice / 2
}

/// Local clustering coefficient `2 T(v) / (deg(v) (deg(v) - 1))`.
pub fn clustering(net: &EgoNet, v: usize) -> f64 {
    let deg = net.degree(v);
    if deg < 2 {
        return 0.0;
    }
    2.0 * count_triangles(net, v) as f64 / (deg * (deg - 1)) as f64
}

/// Square clustering of local node `v`: realized squares over potential
/// squares, summed over unordered neighbor pairs `{u, w}`.
///
/// For a pair, `q` is the number of common neighbors of `u` and `w` other
/// than `v`, `theta` is 1 when `u` and `w` are adjacent, and
/// `a = (k_u - (1 + q + theta)) + (k_w - (1 + q + theta))`.
pub fn square_clustering(net: &EgoNet, v: usize) -> f64 {
    let nv = net.neighbors(v);
    if nv.len() < 2 {
        return 0.0;
    }
    let mut squares = 0usize;
    let mut potential = 0usize;
    for (i, &u) in nv.iter().enumerate() {
        let nu = net.neighbors(u as usize);
        for &w in &nv[i + 1..] {
            let nw = net.neighbors(w as usize);
            // v is a common neighbor of every pair of its own neighbors
            let q = intersection_size(nu, nw) - 1;
            let theta = usize::from(nu.binary_search(&w).is_ok());
            let base = 1 + q + theta;
            squares += q;
            potential += (nu.len() - base) + (nw.len() - base) + q;
        }
    }
    if potential == 0 {
        0.0
    } else {
        squares as f64 / potential as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphLevel {
    pub density: f64,
    pub self_loops: usize,
    pub transitivity: f64,
}

/// Density, self-loop count and transitivity of the whole ego-net.
/// Self-loops are excluded from `m` and from triangle/triad counts.
pub fn graph_level(net: &EgoNet) -> GraphLevel {
    let n = net.len();
    let m = net.num_edges();
    let density = if n < 2 {
        0.0
    } else {
        2.0 * m as f64 / (n * (n - 1)) as f64
    };

    let mut triangle_corners = 0usize;
    let mut triads = 0usize;
    for v in 0..n {
        let d = net.degree(v);
        triads += d * d.saturating_sub(1) / 2;
        if d >= 2 {
            triangle_corners += count_triangles(net, v);
        }
    }
    // each triangle is seen once from each of its corners
    let transitivity = if triads == 0 {
        0.0
    } else {
        triangle_corners as f64 / triads as f64
    };

    GraphLevel {
        density,
        self_loops: net.num_self_loops(),
        transitivity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HopIndicators {
    pub triangles: f64,
    pub clustering: f64,
    pub square_clustering: f64,
    pub density: f64,
    pub self_loops: f64,
    pub transitivity: f64,
}

impl HopIndicators {
    /// Indicators of `net` with node-level values taken at its center.
    pub fn of(net: &EgoNet) -> Self {
        let c = net.center_local();
        let gl = graph_level(net);
        HopIndicators {
            triangles: count_triangles(net, c) as f64,
            clustering: clustering(net, c),
            square_clustering: square_clustering(net, c),
            density: gl.density,
            self_loops: gl.self_loops as f64,
            transitivity: gl.transitivity,
        }
    }

    pub fn to_array(&self) -> [f64; HOP_WIDTH] {
        [
            self.triangles,
            self.clustering,
            self.square_clustering,
            self.density,
            self.self_loops,
            self.transitivity,
        ]
    }
}

/// Layout: `[in_deg, out_deg, (tri, clust, sq_clust, dens, loops, trans) for r = 1..=k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureVector {
    pub in_degree: f64,
    pub out_degree: f64,
    pub hops: Vec<HopIndicators>,
}

impl StructureVector {
    /// Builds the vector from a k-hop ego-net, deriving the smaller radii
    /// by restriction.
    pub fn from_ego_net(net: &EgoNet, in_degree: usize, out_degree: usize) -> Self {
        let hops = (1..=net.radius())
            .map(|r| HopIndicators::of(&net.restrict(r)))
            .collect();
        StructureVector {
            in_degree: in_degree as f64,
            out_degree: out_degree as f64,
            hops,
        }
    }

    pub fn len(&self) -> usize {
        structure_width(self.hops.len())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.in_degree);
        out.push(self.out_degree);
        for h in &self.hops {
            out.extend_from_slice(&h.to_array());
        }
        out
    }
}

/// Structure vector of a single node. Computing the in-degree scans the
/// whole edge set; batch extraction precomputes degrees instead.
pub fn structure_vector(g: &Graph, v: NodeId, k: usize) -> StructureVector {
    assert!(k >= 1, "hop count must be at least 1");
    let (_, targets) = g.directed_csr();
    let in_degree = targets.iter().filter(|&&t| t == v).count();
    let out_degree = g.out_neighbors(v).len();
    StructureVector::from_ego_net(&g.extract_ego_net(v, k), in_degree, out_degree)
}
