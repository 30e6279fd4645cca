//! Distribution statistics of hop distances inside an ego-net.

use crate::graph::EgoNet;

pub const DISTANCE_WIDTH: usize = 7;

/// Seven summary statistics of a hop-distance sequence, in feature order.
/// Moments are population moments; kurtosis is excess (Fisher) kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistanceVector {
    pub maximum: f64,
    pub minimum: f64,
    pub median: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub kurtosis: f64,
    pub skewness: f64,
}

impl DistanceVector {
    pub fn to_array(&self) -> [f64; DISTANCE_WIDTH] {
        [
            self.maximum,
            self.minimum,
            self.median,
            self.mean,
            self.std_dev,
            self.kurtosis,
            self.skewness,
        ]
    }
}

/// Hop distance of every ego-net node other than the center.
pub fn distance_sequence(net: &EgoNet) -> Vec<u32> {
    let c = net.center_local();
    net.dist_from_center()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != c)
        .map(|(_, &d)| d)
        .collect()
}

pub fn distribution_stats(seq: &[u32]) -> DistanceVector {
    if seq.is_empty() {
        return DistanceVector::default();
    }
    let mut sorted = seq.to_vec();
    sorted.sort_unstable();
    let len = sorted.len();
    let n = len as f64;

    let median = if len % 2 == 1 {
        sorted[len / 2] as f64
    } else {
        (sorted[len / 2 - 1] as f64 + sorted[len / 2] as f64) / 2.0
    };

    // Hop sequences are dominated by a handful of distinct values, so the
    // moments are accumulated over runs of equal values.
    let mut runs: Vec<(f64, f64)> = Vec::new();
    for &v in &sorted {
        match runs.last_mut() {
            Some((value, count)) if *value == v as f64 => *count += 1.0,
            _ => runs.push((v as f64, 1.0)),
        }
    }
    let mean = runs.iter().map(|(v, c)| v * c).sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &(v, c) in &runs {
        let d = v - mean;
        let d2 = d * d;
        m2 += c * d2;
        m3 += c * d2 * d;
        m4 += c * d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;

    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    DistanceVector {
        maximum: sorted[len - 1] as f64,
        minimum: sorted[0] as f64,
        median,
        mean,
        std_dev: m2.sqrt(),
        kurtosis,
        skewness,
    }
}
