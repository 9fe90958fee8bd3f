//! δ-bisimulation baseline: neurons whose incoming weights and bias agree
//! within δ are clustered and folded into one representative.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};
use crate::numerics::Matrix;

/// `max(max_k |w_ik − w_jk|, |b_i − b_j|)` over the rows of `weights`.
pub fn bisim_distance(weights: &Matrix, bias: &[f64], i: usize, j: usize) -> f64 {
    let w = weights
        .row(i)
        .iter()
        .zip(weights.row(j))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    w.max((bias[i] - bias[j]).abs())
}

pub fn distance_matrix(weights: &Matrix, bias: &[f64]) -> Matrix {
    let n = weights.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = bisim_distance(weights, bias, i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Lowest member of each merged cluster.
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

/// Complete-linkage merge sequence of one layer. Heights never decrease,
/// so cutting at δ keeps a prefix of the merges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub size: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Naive O(n³) agglomeration; the lowest pair of clusters wins ties.
    pub fn build(distances: &Matrix) -> Self {
        let n = distances.rows();
        let mut d = distances.clone();
        let mut active: Vec<bool> = vec![true; n];
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for _ in 1..n {
            let mut best: Option<(usize, usize, f64)> = None;
            for a in (0..n).filter(|&a| active[a]) {
                for b in (a + 1..n).filter(|&b| active[b]) {
                    if best.is_none_or(|(_, _, h)| d[(a, b)] < h) {
                        best = Some((a, b, d[(a, b)]));
                    }
                }
            }
            let (a, b, height) = best.unwrap();
            for k in 0..n {
                let v = d[(a, k)].max(d[(b, k)]);
                d[(a, k)] = v;
                d[(k, a)] = v;
            }
            active[b] = false;
            merges.push(Merge { left: a, right: b, height });
        }
        Self { size: n, merges }
    }

    pub fn merges_within(&self, delta: f64) -> usize {
        self.merges.iter().take_while(|m| m.height <= delta).count()
    }

    /// Clusters after every merge of height at most `delta`, each sorted,
    /// ordered by lowest member.
    pub fn cut(&self, delta: f64) -> Vec<Vec<usize>> {
        let mut clusters: Vec<Option<Vec<usize>>> = (0..self.size).map(|i| Some(vec![i])).collect();
        for m in self.merges.iter().take_while(|m| m.height <= delta) {
            let right = clusters[m.right].take().unwrap();
            clusters[m.left].as_mut().unwrap().extend(right);
        }
        clusters
            .into_iter()
            .flatten()
            .map(|mut c| {
                c.sort_unstable();
                c
            })
            .collect()
    }
}

/// Clusters of every hidden layer; entry `h` covers activation layer `h + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub layers: Vec<Vec<Vec<usize>>>,
}

impl Partition {
    pub fn singletons(net: &Network) -> Self {
        Self {
            layers: net.hidden_widths().into_iter().map(|w| (0..w).map(|i| vec![i]).collect()).collect(),
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let widths = net.hidden_widths();
        if self.layers.len() != widths.len() {
            return Err(Error::InvalidArgument(format!(
                "partition has {} layers, network has {} hidden layers",
                self.layers.len(),
                widths.len()
            )));
        }
        for (h, (clusters, &w)) in self.layers.iter().zip(&widths).enumerate() {
            let mut seen = vec![false; w];
            for c in clusters {
                if c.is_empty() {
                    return Err(Error::InvalidArgument(format!("empty cluster in layer {}", h + 1)));
                }
                for &i in c {
                    if i >= w || std::mem::replace(&mut seen[i], true) {
                        return Err(Error::InvalidArgument(format!(
                            "neuron {i} out of range or repeated in layer {}",
                            h + 1
                        )));
                    }
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidArgument(format!("neuron {i} of layer {} not covered", h + 1)));
            }
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn reduction_rate(&self) -> f64 {
        let total: usize = self.layers.iter().flatten().map(Vec::len).sum();
        if total == 0 {
            0.0
        } else {
            1.0 - self.remaining() as f64 / total as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representative {
    #[default]
    Lowest,
    /// Uniformly random member, seeded.
    Random(u64),
}

/// One dendrogram per hidden layer, built on the original weights.
pub fn dendrograms(net: &Network) -> Vec<Dendrogram> {
    (1..=net.hidden_layers())
        .map(|l| {
            let layer = &net.layers()[l - 1];
            Dendrogram::build(&distance_matrix(&layer.weights, &layer.bias))
        })
        .collect()
}

pub fn delta_partition(net: &Network, delta: f64) -> Result<Partition> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} must be non-negative")));
    }
    Ok(Partition {
        layers: dendrograms(net).iter().map(|d| d.cut(delta)).collect(),
    })
}

/// Keeps one representative per cluster. The representative keeps its
/// incoming weights and bias; its outgoing column becomes the sum of the
/// outgoing columns of the whole cluster.
pub fn merge_partition(net: &Network, partition: &Partition, representative: Representative) -> Result<Network> {
    partition.validate(net)?;
    let mut rng = match representative {
        Representative::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Representative::Lowest => None,
    };
    let mut layers: Vec<Layer> = net.layers().to_vec();
    for (h, clusters) in partition.layers.iter().enumerate() {
        let reps: Vec<usize> = clusters
            .iter()
            .map(|c| match rng.as_mut() {
                Some(rng) => *c.choose(rng).unwrap(),
                None => *c.iter().min().unwrap(),
            })
            .collect();
        let incoming = &layers[h];
        let rows: Vec<&[f64]> = reps.iter().map(|&r| incoming.weights.row(r)).collect();
        let weights = Matrix::from_rows(&rows)?;
        let bias = reps.iter().map(|&r| incoming.bias[r]).collect();
        layers[h] = Layer::new(weights, bias, incoming.activation)?;

        let outgoing = &layers[h + 1];
        let columns: Vec<Vec<f64>> = clusters
            .iter()
            .map(|c| {
                let mut col = vec![0.0; outgoing.weights.rows()];
                for &i in c {
                    for (r, v) in col.iter_mut().enumerate() {
                        *v += outgoing.weights[(r, i)];
                    }
                }
                col
            })
            .collect();
        let weights = Matrix::from_columns(&columns)?;
        layers[h + 1] = Layer::new(weights, outgoing.bias.clone(), outgoing.activation)?;
    }
    Network::new(net.input_dim(), layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisimResult {
    pub network: Network,
    pub partition: Partition,
    pub reduction_rate: f64,
    pub delta: f64,
    pub steps: usize,
}

/// Smallest δ whose partition removes at least `target` of the hidden
/// neurons, found by bisection over the merge heights in `[0, δ_max]`.
/// When even `δ_max` falls short, the coarsest partition is returned.
pub fn bisim_abstract(net: &Network, target: f64, representative: Representative) -> Result<BisimResult> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("target reduction rate {target} not in [0, 1)")));
    }
    let trees = dendrograms(net);
    let total = net.hidden_neurons() as f64;
    let rate = |delta: f64| trees.iter().map(|t| t.merges_within(delta)).sum::<usize>() as f64 / total;
    let mut heights: Vec<f64> = trees.iter().flat_map(|t| t.merges.iter().map(|m| m.height)).collect();
    heights.push(0.0);
    heights.sort_by(f64::total_cmp);
    heights.dedup();

    let (mut lo, mut hi) = (0, heights.len() - 1);
    let mut steps = 0;
    if rate(heights[hi]) < target {
        log::warn!(
            "no delta reaches reduction rate {target}; best is {:.4} at delta {}",
            rate(heights[hi]),
            heights[hi]
        );
        lo = hi;
    }
    while lo < hi {
        steps += 1;
        let mid = (lo + hi) / 2;
        if rate(heights[mid]) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let delta = heights[lo];
    let partition = Partition {
        layers: trees.iter().map(|t| t.cut(delta)).collect(),
    };
    Ok(BisimResult {
        network: merge_partition(net, &partition, representative)?,
        reduction_rate: partition.reduction_rate(),
        partition,
        delta,
        steps,
    })
}
