//! Diffusion-guided scoring, drop-probability mapping, view generation and
//! node-mask selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::diffusion::EnhancedAdjacency;
use crate::error::{Error, Result};
use crate::graph::{Graph, Hypergraph, Structure};
use crate::rng;
use crate::scalar::Scalar;

/// How drop and mask probabilities are assigned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationMode {
    /// Scores from diffused features and enhanced connectivity.
    #[default]
    DiffusionGuided,
    /// Every component gets the same probability; the random-drop baseline.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentScores<T> {
    pub node_scores: Vec<T>,
    /// Aligned with [`Graph::edges`]; empty for hypergraphs.
    pub edge_scores: Vec<T>,
    /// One per hyperedge; empty for graphs.
    pub hyperedge_scores: Vec<T>,
}

impl<T: Scalar> ComponentScores<T> {
    pub fn compute(
        x_diff: &Matrix<T>,
        enhanced: &EnhancedAdjacency<T>,
        structure: &Structure<T>,
    ) -> Self {
        let node_scores = node_scores(x_diff);
        match structure {
            Structure::Graph(g) => Self {
                node_scores,
                edge_scores: edge_scores(enhanced, g),
                hyperedge_scores: Vec::new(),
            },
            Structure::Hypergraph(h) => Self {
                node_scores,
                edge_scores: Vec::new(),
                hyperedge_scores: hyperedge_scores(enhanced, h),
            },
        }
    }

    /// Edge scores for graphs, hyperedge scores for hypergraphs.
    pub fn structure_scores(&self) -> &[T] {
        if self.hyperedge_scores.is_empty() {
            &self.edge_scores
        } else {
            &self.hyperedge_scores
        }
    }
}

/// Diffusion energy: the ℓ2 norm of each diffused feature row.
pub fn node_scores<T: Scalar>(x_diff: &Matrix<T>) -> Vec<T> {
    (0..x_diff.rows())
        .map(|i| x_diff.row(i).iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect()
}

/// `s_ij = Ã_ij` for every stored edge, in [`Graph::edges`] order.
pub fn edge_scores<T: Scalar>(enhanced: &EnhancedAdjacency<T>, graph: &Graph<T>) -> Vec<T> {
    graph
        .edges()
        .into_iter()
        .map(|(i, j, _)| enhanced.get(i, j))
        .collect()
}

/// `s_m = u_mᵀ Ã u_m`: the block sum of `Ã` over the hyperedge, diagonal included.
pub fn hyperedge_scores<T: Scalar>(enhanced: &EnhancedAdjacency<T>, hg: &Hypergraph<T>) -> Vec<T> {
    hg.hyperedges()
        .iter()
        .map(|members| block_sum(enhanced, members))
        .collect()
}

pub(crate) fn block_sum<T: Scalar>(enhanced: &EnhancedAdjacency<T>, members: &[usize]) -> T {
    let mut s = T::zero();
    for &i in members {
        for (j, v) in enhanced.matrix.row_iter(i) {
            if members.binary_search(&j).is_ok() {
                s += v;
            }
        }
    }
    s
}

/// Min-max normalization to `[0, 1]`; a constant vector maps to 0.5.
pub fn normalize_scores<T: Scalar>(scores: &[T]) -> Vec<f64> {
    let vals: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || hi <= lo {
        return vec![0.5; vals.len()];
    }
    vals.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Affine, order-reversing map from scores to drop probabilities in
/// `[p_min, p_max]`: the weakest component gets `p_max`.
pub fn drop_probabilities<T: Scalar>(scores: &[T], p_min: f64, p_max: f64) -> Vec<f64> {
    normalize_scores(scores)
        .into_iter()
        .map(|s| p_min + (p_max - p_min) * (1.0 - s))
        .collect()
}

pub fn check_drop_range(p_min: f64, p_max: f64) -> Result<()> {
    if (0.0..1.0).contains(&p_min) && (p_min..1.0).contains(&p_max) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "drop probabilities need 0 <= p_min <= p_max < 1, got [{p_min}, {p_max}]"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropPlan {
    pub node_drop_prob: Vec<f64>,
    pub struct_drop_prob: Vec<f64>,
    /// Node scores, used to pick the node the empty-view guard keeps.
    pub node_scores: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
}

impl DropPlan {
    pub fn new<T: Scalar>(
        scores: &ComponentScores<T>,
        p_min: f64,
        p_max: f64,
        mode: AugmentationMode,
    ) -> Result<Self> {
        check_drop_range(p_min, p_max)?;
        let structure = scores.structure_scores();
        let (node_drop_prob, struct_drop_prob) = match mode {
            AugmentationMode::DiffusionGuided => (
                drop_probabilities(&scores.node_scores, p_min, p_max),
                drop_probabilities(structure, p_min, p_max),
            ),
            AugmentationMode::Uniform => {
                let mid = 0.5 * (p_min + p_max);
                (
                    vec![mid; scores.node_scores.len()],
                    vec![mid; structure.len()],
                )
            }
        };
        Ok(Self {
            node_drop_prob,
            struct_drop_prob,
            node_scores: scores.node_scores.iter().map(|s| s.as_f64()).collect(),
            p_min,
            p_max,
        })
    }
}

/// Keep flags for one view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewMask {
    pub keep_nodes: Vec<bool>,
    pub keep_struct: Vec<bool>,
}

impl ViewMask {
    pub fn keep_all(n_nodes: usize, n_struct: usize) -> Self {
        Self {
            keep_nodes: vec![true; n_nodes],
            keep_struct: vec![true; n_struct],
        }
    }
}

/// Independent Bernoulli keep draws with probability `1 - p`. If no node
/// survives, the highest-scoring node is kept.
pub fn sample_view_mask<R: Rng>(plan: &DropPlan, rng: &mut R) -> ViewMask {
    let mut keep_nodes: Vec<bool> = plan
        .node_drop_prob
        .iter()
        .map(|&p| rng.gen::<f64>() >= p)
        .collect();
    let keep_struct = plan
        .struct_drop_prob
        .iter()
        .map(|&p| rng.gen::<f64>() >= p)
        .collect();
    if !keep_nodes.iter().any(|&k| k) {
        if let Some(best) = argmax(&plan.node_scores) {
            keep_nodes[best] = true;
        }
    }
    ViewMask {
        keep_nodes,
        keep_struct,
    }
}

/// Two masks from the streams `(seed, "drop", instance, 1)` and `(.., 2)`.
pub fn sample_drop_masks(plan: &DropPlan, seed: u64, instance: u64) -> (ViewMask, ViewMask) {
    let m1 = sample_view_mask(plan, &mut rng::stream(seed, "drop", instance, 1));
    let m2 = sample_view_mask(plan, &mut rng::stream(seed, "drop", instance, 2));
    (m1, m2)
}

fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

/// A dropped, re-indexed copy of an instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView<T> {
    /// Carries the kept rows of the diffused features.
    pub structure: Structure<T>,
    /// Original indices of the kept nodes, strictly increasing.
    pub kept_nodes: Vec<usize>,
}

impl<T: Scalar> AugmentedView<T> {
    pub fn features(&self) -> &Matrix<T> {
        self.structure.features()
    }
}

/// Removes dropped nodes (and edges touching them) and dropped structure
/// components, then re-indexes the survivors densely. Hyperedges that lose
/// members and end up with fewer than two are pruned.
pub fn apply_drop<T: Scalar>(
    x_diff: &Matrix<T>,
    structure: &Structure<T>,
    mask: &ViewMask,
) -> Result<AugmentedView<T>> {
    let n = structure.node_count();
    if mask.keep_nodes.len() != n || x_diff.rows() != n {
        return Err(Error::Shape(format!(
            "node mask of {} / features of {} rows for {n} nodes",
            mask.keep_nodes.len(),
            x_diff.rows()
        )));
    }
    let kept_nodes: Vec<usize> = (0..n).filter(|&i| mask.keep_nodes[i]).collect();
    if kept_nodes.is_empty() {
        return Err(Error::Structure("view keeps no nodes".into()));
    }
    let mut new_index = vec![usize::MAX; n];
    for (new, &old) in kept_nodes.iter().enumerate() {
        new_index[old] = new;
    }
    let features = x_diff.select_rows(&kept_nodes);
    let view = match structure {
        Structure::Graph(g) => {
            let edges = g.edges();
            if mask.keep_struct.len() != edges.len() {
                return Err(Error::Shape(format!(
                    "edge mask of {} for {} edges",
                    mask.keep_struct.len(),
                    edges.len()
                )));
            }
            let kept: Vec<_> = edges
                .into_iter()
                .zip(&mask.keep_struct)
                .filter(|&((i, j, _), &k)| k && mask.keep_nodes[i] && mask.keep_nodes[j])
                .map(|((i, j, w), _)| (new_index[i], new_index[j], w))
                .collect();
            Structure::Graph(Graph::from_edges(kept_nodes.len(), &kept, features)?)
        }
        Structure::Hypergraph(h) => {
            if mask.keep_struct.len() != h.hyperedge_count() {
                return Err(Error::Shape(format!(
                    "hyperedge mask of {} for {} hyperedges",
                    mask.keep_struct.len(),
                    h.hyperedge_count()
                )));
            }
            let mut edges = Vec::new();
            let mut weights = Vec::new();
            for (m, members) in h.hyperedges().iter().enumerate() {
                if !mask.keep_struct[m] {
                    continue;
                }
                let remaining: Vec<usize> = members
                    .iter()
                    .filter(|&&i| mask.keep_nodes[i])
                    .map(|&i| new_index[i])
                    .collect();
                let shrank = remaining.len() < members.len();
                if remaining.is_empty() || (shrank && remaining.len() < 2) {
                    continue;
                }
                edges.push(remaining);
                weights.push(h.hyperedge_weights()[m]);
            }
            Structure::Hypergraph(Hypergraph::from_hyperedges(
                kept_nodes.len(),
                &edges,
                Some(weights),
                features,
            )?)
        }
    };
    Ok(AugmentedView {
        structure: view,
        kept_nodes,
    })
}

/// Floor added to every masking weight so zero-weight nodes stay eligible.
pub const MASK_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSelection {
    /// Sorted node indices.
    pub masked_nodes: Vec<usize>,
    pub ratio: f64,
}

impl MaskSelection {
    pub fn empty() -> Self {
        Self {
            masked_nodes: Vec::new(),
            ratio: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.masked_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked_nodes.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.masked_nodes.binary_search(&i).is_ok()
    }
}

/// `⌈ρN⌉`, treating `ρN` within 1e-9 of an integer as that integer so that
/// decimal ratios such as 0.3 do not round up spuriously.
pub fn mask_count(rho: f64, n: usize) -> usize {
    let x = rho * n as f64;
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 { r } else { x.ceil() };
    (c.max(0.0) as usize).min(n)
}

/// Picks exactly `⌈ρN⌉` nodes by weighted sampling without replacement
/// (exponential-key method). Guided weights are `(1 - ŝ_i) + floor`, so
/// weakly supported nodes are masked more often.
pub fn sample_node_mask<T: Scalar, R: Rng>(
    scores: &[T],
    rho: f64,
    mode: AugmentationMode,
    rng: &mut R,
) -> Result<MaskSelection> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!(
            "mask ratio must lie in [0, 1], got {rho}"
        )));
    }
    let n = scores.len();
    let count = mask_count(rho, n);
    let weights = mask_weights(scores, mode);
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let mut masked_nodes: Vec<usize> = keyed.into_iter().take(count).map(|(_, i)| i).collect();
    masked_nodes.sort_unstable();
    Ok(MaskSelection {
        masked_nodes,
        ratio: rho,
    })
}

/// Sampling weights used by [`sample_node_mask`].
pub fn mask_weights<T: Scalar>(scores: &[T], mode: AugmentationMode) -> Vec<f64> {
    match mode {
        AugmentationMode::DiffusionGuided => normalize_scores(scores)
            .into_iter()
            .map(|s| (1.0 - s) + MASK_WEIGHT_FLOOR)
            .collect(),
        AugmentationMode::Uniform => vec![1.0; scores.len()],
    }
}

/// Replaces masked rows with `token`.
pub fn apply_feature_mask<T: Scalar>(
    x: &Matrix<T>,
    selection: &MaskSelection,
    token: &[T],
) -> Result<Matrix<T>> {
    if token.len() != x.cols() {
        return Err(Error::Shape(format!(
            "mask token of length {} for {} features",
            token.len(),
            x.cols()
        )));
    }
    let mut out = x.clone();
    for &i in &selection.masked_nodes {
        if i >= x.rows() {
            return Err(Error::Shape(format!("masked node {i} out of range")));
        }
        out.row_mut(i).copy_from_slice(token);
    }
    Ok(out)
}
