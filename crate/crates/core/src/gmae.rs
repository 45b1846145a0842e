//! Diffusion-enhanced masked-autoencoder pretraining.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mask_count, sample_node_mask, AugmentationMode, MaskSelection};
use crate::autograd::{sigmoid, soft_bce, Tape, Var};
use crate::dense::Matrix;
use crate::diffusion::{
    diffuse_features, enhanced_adjacency, DiffusionConfig, DiffusionKernel, EnhancedAdjacency,
};
use crate::encoder::{
    decode_on_tape, encode_on_tape, init_encoder, EncoderConfig, HYPEREDGE_BIAS, HYPEREDGE_WEIGHT,
    MASK_TOKEN,
};
use crate::error::{Error, Result};
use crate::gcl::encoder_for;
use crate::graph::{Graph, Hypergraph, Structure};
use crate::params::{optimizer_step, AdamConfig, BoundParams, GradientBundle, ParameterStore};
use crate::rng;
use crate::sparse::CsrMatrix;
use crate::training::{epoch_batches, par_map, worker_pool};

type M = Matrix<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmaeConfig {
    pub mask_ratio: f64,
    pub structure_loss_weight: f64,
    pub structure_reconstruction: bool,
    pub negative_ratio: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub diffusion: DiffusionConfig,
    pub augmentation: AugmentationMode,
    /// `in_dim` and `structure_kind` are taken from the dataset.
    pub encoder: EncoderConfig,
}

impl Default for GmaeConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.3,
            structure_loss_weight: 1.0,
            structure_reconstruction: true,
            negative_ratio: 1.0,
            epochs: 50,
            lr: 1e-3,
            seed: 0,
            diffusion: DiffusionConfig::default(),
            augmentation: AugmentationMode::DiffusionGuided,
            encoder: EncoderConfig::default(),
        }
    }
}

impl GmaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio must lie in [0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(self.structure_loss_weight >= 0.0 && self.structure_loss_weight.is_finite()) {
            return Err(Error::Config(
                "structure_loss_weight must be finite and nonnegative".into(),
            ));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::Config(
                "negative_ratio must be finite and nonnegative".into(),
            ));
        }
        AdamConfig::with_lr(self.lr).validate()?;
        self.diffusion.validate()
    }
}

/// Supervision for the structure branch.
#[derive(Clone, Debug, PartialEq)]
pub enum StructureTargets {
    /// Node pairs with soft targets taken from the enhanced adjacency.
    Edges {
        pairs: Vec<(usize, usize)>,
        targets: Vec<f64>,
    },
    /// One target per hyperedge.
    Hyperedges(Vec<f64>),
}

/// Stored edges touching the masked set, followed by `⌈ratio·|pos|⌉`
/// non-adjacent pairs touching it, drawn uniformly without replacement.
pub fn select_masked_edges<R: Rng>(
    graph: &Graph<f64>,
    selection: &MaskSelection,
    negative_ratio: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if selection.is_empty() {
        return Vec::new();
    }
    let adj = graph.adjacency();
    let mut pairs: Vec<(usize, usize)> = graph
        .edges()
        .into_iter()
        .filter(|&(i, j, _)| selection.contains(i) || selection.contains(j))
        .map(|(i, j, _)| (i, j))
        .collect();
    let wanted = (negative_ratio * pairs.len() as f64).ceil() as usize;
    if wanted == 0 {
        return pairs;
    }
    let n = graph.node_count();
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if (selection.contains(i) || selection.contains(j)) && adj.get(i, j) == 0.0 {
                candidates.push((i, j));
            }
        }
    }
    if wanted >= candidates.len() {
        pairs.extend(candidates);
    } else {
        let mut picked = index::sample(rng, candidates.len(), wanted).into_vec();
        picked.sort_unstable();
        pairs.extend(picked.into_iter().map(|k| candidates[k]));
    }
    pairs
}

/// Mean off-diagonal enhanced connectivity inside each hyperedge; a
/// single-member hyperedge takes its diagonal entry.
pub fn hyperedge_targets(enhanced: &EnhancedAdjacency<f64>, hg: &Hypergraph<f64>) -> Vec<f64> {
    hg.hyperedges()
        .iter()
        .map(|e| {
            if e.len() == 1 {
                return enhanced.get(e[0], e[0]);
            }
            let mut s = 0.0;
            for &i in e {
                for &j in e {
                    if i != j {
                        s += enhanced.get(i, j);
                    }
                }
            }
            (s / (e.len() * (e.len() - 1)) as f64).clamp(0.0, 1.0)
        })
        .collect()
}

pub fn edge_logits(z: &M, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(i, j)| sigmoid(z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum()))
        .collect()
}

pub fn edge_loss(probs: &[f64], targets: &[f64]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} probabilities, {} targets",
            probs.len(),
            targets.len()
        )));
    }
    if let Some(y) = targets.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::Data(format!("soft target {y} outside [0, 1]")));
    }
    Ok(soft_bce(probs, targets))
}

fn mean_pool_matrix(hg: &Hypergraph<f64>) -> Result<CsrMatrix<f64>> {
    let mut t = Vec::new();
    for (m, e) in hg.hyperedges().iter().enumerate() {
        let w = 1.0 / e.len() as f64;
        t.extend(e.iter().map(|&i| (m, i, w)));
    }
    CsrMatrix::from_triplets(hg.hyperedge_count(), hg.node_count(), &t)
}

/// `σ(w_hᵀ mean(z_e) + b_h)` per hyperedge.
pub fn hyperedge_pred(z: &M, hg: &Hypergraph<f64>, params: &ParameterStore) -> Result<Vec<f64>> {
    let pooled = mean_pool_matrix(hg)?.mul_dense(z)?;
    let w = params.get(HYPEREDGE_WEIGHT)?;
    let b = params.get(HYPEREDGE_BIAS)?[(0, 0)];
    Ok(pooled
        .matmul(w)?
        .as_slice()
        .iter()
        .map(|&v| sigmoid(v + b))
        .collect())
}

pub fn hyper_loss(pred: &[f64], targets: &[f64]) -> Result<f64> {
    if pred.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} targets",
            pred.len(),
            targets.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean squared row error over the masked rows; 0 when nothing is masked.
pub fn node_loss(x: &M, recon: &M, selection: &MaskSelection) -> Result<f64> {
    if recon.rows() != selection.len() || recon.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "{:?} reconstructions for {} masked rows",
            recon.shape(),
            selection.len()
        )));
    }
    if selection.is_empty() {
        return Ok(0.0);
    }
    Ok(x.select_rows(&selection.masked_nodes)
        .sub(recon)?
        .frobenius_sq()
        / selection.len() as f64)
}

pub fn total_gmae_loss(node: f64, structure: f64, eta: f64) -> f64 {
    node + eta * structure
}

/// Fixed per-instance quantities: kernel, propagation operator, node scores
/// and enhanced adjacency.
#[derive(Clone, Debug)]
pub struct InstanceCache {
    pub kernel: Arc<CsrMatrix<f64>>,
    pub propagation: Arc<CsrMatrix<f64>>,
    pub scores: Vec<f64>,
    pub enhanced: EnhancedAdjacency<f64>,
}

impl InstanceCache {
    pub fn new(instance: &Structure<f64>, diffusion: &DiffusionConfig) -> Result<Self> {
        let kernel = DiffusionKernel::build(instance, diffusion)?;
        let x_diff = diffuse_features(&kernel, instance.features())?;
        let enhanced = enhanced_adjacency(&kernel, &instance.pairwise_adjacency())?;
        Ok(Self {
            scores: crate::augment::node_scores(&x_diff),
            propagation: Arc::new(instance.propagation_operator()),
            kernel: Arc::new(kernel.matrix),
            enhanced,
        })
    }
}

/// Everything a loss evaluation needs for one instance at one step.
#[derive(Clone, Debug)]
pub struct GmaeBatchItem {
    pub features: M,
    pub kernel: Arc<CsrMatrix<f64>>,
    pub propagation: Arc<CsrMatrix<f64>>,
    pub selection: MaskSelection,
    pub targets: Option<StructureTargets>,
    pub pool: Option<Arc<CsrMatrix<f64>>>,
}

/// Builds the structure targets for a given mask.
pub fn structure_targets<R: Rng>(
    instance: &Structure<f64>,
    enhanced: &EnhancedAdjacency<f64>,
    selection: &MaskSelection,
    negative_ratio: f64,
    rng: &mut R,
) -> StructureTargets {
    match instance {
        Structure::Graph(g) => {
            let pairs = select_masked_edges(g, selection, negative_ratio, rng);
            let targets = pairs.iter().map(|&(i, j)| enhanced.get(i, j)).collect();
            StructureTargets::Edges { pairs, targets }
        }
        Structure::Hypergraph(h) => StructureTargets::Hyperedges(hyperedge_targets(enhanced, h)),
    }
}

/// Samples the mask and structure targets of instance `index` for `epoch`.
pub fn prepare_item(
    instance: &Structure<f64>,
    cache: &InstanceCache,
    config: &GmaeConfig,
    epoch: usize,
    index: usize,
) -> Result<GmaeBatchItem> {
    let mut r = rng::stream(config.seed, "gmae.mask", epoch as u64, index as u64);
    let selection = sample_node_mask(
        &cache.scores,
        config.mask_ratio,
        config.augmentation,
        &mut r,
    )?;
    debug_assert_eq!(
        selection.len(),
        mask_count(config.mask_ratio, instance.node_count())
    );
    let (targets, pool) = if config.structure_reconstruction {
        let mut r = rng::stream(config.seed, "gmae.negatives", epoch as u64, index as u64);
        let t = structure_targets(
            instance,
            &cache.enhanced,
            &selection,
            config.negative_ratio,
            &mut r,
        );
        let pool = match instance {
            Structure::Hypergraph(h) => Some(Arc::new(mean_pool_matrix(h)?)),
            Structure::Graph(_) => None,
        };
        (Some(t), pool)
    } else {
        (None, None)
    };
    Ok(GmaeBatchItem {
        features: instance.features().clone(),
        kernel: cache.kernel.clone(),
        propagation: cache.propagation.clone(),
        selection,
        targets,
        pool,
    })
}

/// Tape nodes of one forward pass.
pub struct ForwardVars {
    pub z: Var,
    pub z_hat: Var,
    pub recon: Option<Var>,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    encoder: &EncoderConfig,
    features: &M,
    kernel: &Arc<CsrMatrix<f64>>,
    propagation: &Arc<CsrMatrix<f64>>,
    selection: &MaskSelection,
) -> Result<ForwardVars> {
    let x = tape.leaf(features.clone());
    let corrupted = if selection.is_empty() {
        x
    } else {
        tape.replace_rows(x, &selection.masked_nodes, bound.var(MASK_TOKEN)?)?
    };
    let x_diff = tape.spmm(kernel.clone(), corrupted)?;
    let z = encode_on_tape(tape, bound, encoder, x_diff, propagation)?;
    let z_hat = tape.spmm(kernel.clone(), z)?;
    let recon = if selection.is_empty() {
        None
    } else {
        let picked = tape.gather_rows(z_hat, &selection.masked_nodes)?;
        Some(decode_on_tape(tape, bound, picked)?)
    };
    Ok(ForwardVars { z, z_hat, recon })
}

/// `(X̂_𝓜, Z, Ẑ)` without gradient bookkeeping.
pub fn gmae_forward(
    params: &ParameterStore,
    encoder: &EncoderConfig,
    x: &M,
    structure: &Structure<f64>,
    selection: &MaskSelection,
    kernel: &CsrMatrix<f64>,
) -> Result<(M, M, M)> {
    crate::encoder::check_kind(encoder, structure)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let fw = forward_on_tape(
        &mut tape,
        &bound,
        encoder,
        x,
        &Arc::new(kernel.clone()),
        &Arc::new(structure.propagation_operator()),
        selection,
    )?;
    let recon = match fw.recon {
        Some(v) => tape.value(v).clone(),
        None => M::zeros(0, x.cols()),
    };
    Ok((
        recon,
        tape.value(fw.z).clone(),
        tape.value(fw.z_hat).clone(),
    ))
}

/// Loss components of one item.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GmaeLosses {
    pub total: f64,
    pub node: f64,
    pub structure: f64,
}

fn item_loss_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    encoder: &EncoderConfig,
    item: &GmaeBatchItem,
    eta: f64,
) -> Result<(Var, GmaeLosses)> {
    let fw = forward_on_tape(
        tape,
        bound,
        encoder,
        &item.features,
        &item.kernel,
        &item.propagation,
        &item.selection,
    )?;
    let node = match fw.recon {
        Some(r) => {
            tape.mean_row_sq_error(r, item.features.select_rows(&item.selection.masked_nodes))?
        }
        None => tape.constant_scalar(0.0),
    };
    let structure = match &item.targets {
        None => tape.constant_scalar(0.0),
        Some(StructureTargets::Edges { pairs, .. }) if pairs.is_empty() => {
            tape.constant_scalar(0.0)
        }
        Some(StructureTargets::Edges { pairs, targets }) => {
            let dots = tape.pair_dots(fw.z, pairs)?;
            let p = tape.sigmoid(dots);
            tape.soft_bce(p, targets)?
        }
        Some(StructureTargets::Hyperedges(t)) if t.is_empty() => tape.constant_scalar(0.0),
        Some(StructureTargets::Hyperedges(t)) => {
            let pool = item
                .pool
                .clone()
                .ok_or_else(|| Error::Structure("missing pooling matrix".into()))?;
            let pooled = tape.spmm(pool, fw.z)?;
            let logits = tape.matmul(pooled, bound.var(HYPEREDGE_WEIGHT)?)?;
            let logits = tape.add_row(logits, bound.var(HYPEREDGE_BIAS)?)?;
            let s = tape.sigmoid(logits);
            tape.mean_row_sq_error(s, M::from_vec(t.len(), 1, t.clone())?)?
        }
    };
    let weighted = tape.scale(structure, eta);
    let total = tape.add(node, weighted)?;
    let losses = GmaeLosses {
        total: tape.scalar(total),
        node: tape.scalar(node),
        structure: tape.scalar(structure),
    };
    Ok((total, losses))
}

/// Mean loss over `items` and its parameter gradients.
pub fn batch_loss(
    params: &ParameterStore,
    encoder: &EncoderConfig,
    items: &[GmaeBatchItem],
    eta: f64,
) -> Result<(GradientBundle, GmaeLosses)> {
    if items.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut totals = Vec::with_capacity(items.len());
    let mut sum = GmaeLosses::default();
    for item in items {
        let (t, l) = item_loss_on_tape(&mut tape, &bound, encoder, item, eta)?;
        totals.push(t);
        sum.total += l.total;
        sum.node += l.node;
        sum.structure += l.structure;
    }
    let stacked = tape.concat_rows(&totals)?;
    let loss = tape.mean_rows(stacked)?;
    let k = items.len() as f64;
    let mean = GmaeLosses {
        total: tape.scalar(loss),
        node: sum.node / k,
        structure: sum.structure / k,
    };
    let grads = tape.backward(loss)?;
    Ok((params.collect_gradients(&bound, &grads, mean.total), mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmaeEpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub node_loss: f64,
    pub struct_loss: f64,
}

pub const GMAE_TELEMETRY_HEADER: &str = "epoch,total_loss,node_loss,struct_loss";

impl GmaeEpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e}",
            self.epoch, self.total_loss, self.node_loss, self.struct_loss
        )
    }
}

pub struct GmaeOutcome {
    pub encoder: EncoderConfig,
    pub params: ParameterStore,
    pub telemetry: Vec<GmaeEpochRecord>,
}

/// One optimizer step on a single prepared instance.
pub fn gmae_step(
    params: &mut ParameterStore,
    encoder: &EncoderConfig,
    item: &GmaeBatchItem,
    config: &GmaeConfig,
) -> Result<GmaeLosses> {
    let (grads, losses) = batch_loss(
        params,
        encoder,
        std::slice::from_ref(item),
        config.structure_loss_weight,
    )?;
    optimizer_step(params, &grads, &AdamConfig::with_lr(config.lr))?;
    Ok(losses)
}

/// Masks and targets for a whole epoch are drawn in parallel; parameter
/// updates then run one instance at a time in shuffled order.
pub fn train_gmae(
    dataset: &[Structure<f64>],
    config: &GmaeConfig,
    workers: usize,
) -> Result<GmaeOutcome> {
    config.validate()?;
    let encoder = encoder_for(dataset, &config.encoder)?;
    let mut params = init_encoder(&encoder, config.seed)?;
    let pool = worker_pool(workers)?;
    let caches = par_map(&pool, dataset, |s| InstanceCache::new(s, &config.diffusion))?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut telemetry = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let items = par_map(&pool, &indices, |&i| {
            prepare_item(&dataset[i], &caches[i], config, epoch, i)
        })?;
        let order = epoch_batches(dataset.len(), 1, 1, config.seed, "gmae.shuffle", epoch);
        let mut sum = GmaeLosses::default();
        for i in order.into_iter().flatten() {
            let l = gmae_step(&mut params, &encoder, &items[i], config)?;
            sum.total += l.total;
            sum.node += l.node;
            sum.structure += l.structure;
        }
        let k = dataset.len() as f64;
        telemetry.push(GmaeEpochRecord {
            epoch: epoch + 1,
            total_loss: sum.total / k,
            node_loss: sum.node / k,
            struct_loss: sum.structure / k,
        });
    }
    Ok(GmaeOutcome {
        encoder,
        params,
        telemetry,
    })
}
