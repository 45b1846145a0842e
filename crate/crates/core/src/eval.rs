//! Frozen-encoder embeddings, linear probing and classification metrics.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dense::Matrix;
use crate::diffusion::{diffuse_features, DiffusionConfig, DiffusionKernel};
use crate::encoder::{encode, EncoderConfig, ATTENTION_VECTOR};
use crate::error::{Error, Result};
use crate::graph::Structure;
use crate::params::ParameterStore;
use crate::readout::{graph_readout, ReadoutConfig};
use crate::rng;
use crate::training::{par_map, worker_pool};

type M = Matrix<f64>;

/// Graph embedding of one instance. With `input_diffusion`, the encoder sees
/// `K·X` as during pretraining.
pub fn embed_instance(
    params: &ParameterStore,
    encoder: &EncoderConfig,
    input_diffusion: Option<&DiffusionConfig>,
    instance: &Structure<f64>,
    readout: &ReadoutConfig,
) -> Result<Vec<f64>> {
    if instance.feature_dim() != encoder.in_dim {
        return Err(Error::Data(format!(
            "instance has {} features, encoder expects {}",
            instance.feature_dim(),
            encoder.in_dim
        )));
    }
    let x = match input_diffusion {
        Some(dc) => diffuse_features(&DiffusionKernel::build(instance, dc)?, instance.features())?,
        None => instance.features().clone(),
    };
    let z = encode(params, encoder, &x, instance)?;
    let w = params.get(ATTENTION_VECTOR)?;
    graph_readout(&z, readout, instance, Some(w.as_slice()))
}

/// One embedding row per instance, computed in parallel, in dataset order.
pub fn embed_dataset(
    checkpoint: &Checkpoint,
    dataset: &[Structure<f64>],
    readout: &ReadoutConfig,
    workers: usize,
) -> Result<M> {
    readout.validate()?;
    let params = checkpoint.restore()?;
    let encoder = &checkpoint.config.encoder;
    let diffusion = checkpoint.config.input_diffusion.as_ref();
    let pool = worker_pool(workers)?;
    let rows = par_map(&pool, dataset, |s| {
        embed_instance(&params, encoder, diffusion, s, readout)
    })?;
    if rows.is_empty() {
        return Ok(M::zeros(0, encoder.out_dim));
    }
    M::from_rows(&rows)
}

/// Mann–Whitney AUC with half credit for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let avg = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += order[k..=end].iter().filter(|&&i| labels[i]).count() as f64 * avg;
        k = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Macro F1 over `n_classes`. A class that is neither present nor predicted
/// has undefined F1; it counts as 0 and is returned in the second slot.
pub fn macro_f1(predicted: &[usize], labels: &[usize], n_classes: usize) -> (f64, Vec<usize>) {
    let mut undefined = Vec::new();
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = predicted
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == c && l == c)
            .count();
        let fp = predicted
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == c && l != c)
            .count();
        let fneg = predicted
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p != c && l == c)
            .count();
        if tp + fp + fneg == 0 {
            undefined.push(c);
        } else {
            total += 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64;
        }
    }
    if n_classes == 0 {
        return (0.0, undefined);
    }
    (total / n_classes as f64, undefined)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Fraction of each class used for training.
    pub split_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            split_fraction: 0.7,
            epochs: 300,
            lr: 0.5,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "probe lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auc: f64,
    pub undefined_f1_classes: Vec<usize>,
}

/// Per-class shuffled split; every class with at least two members lands
/// on both sides.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng::stream(seed, "probe.split", c as u64, 0));
        let k = if members.len() >= 2 {
            ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1)
        } else {
            members.len()
        };
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn softmax_rows(logits: &mut M) {
    for i in 0..logits.rows() {
        let row = logits.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardized features; returns class probabilities for `test`.
fn fit_predict(
    x: &M,
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
) -> Result<M> {
    let d = x.cols();
    let xt = x.select_rows(train);
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        mean[j] = (0..xt.rows()).map(|i| xt[(i, j)]).sum::<f64>() / xt.rows() as f64;
        let var = (0..xt.rows())
            .map(|i| (xt[(i, j)] - mean[j]).powi(2))
            .sum::<f64>()
            / xt.rows() as f64;
        std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let standardize = |m: &M| {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - mean[j]) / std[j];
            }
        }
        out
    };
    let xs = standardize(&xt);
    let mut w = M::zeros(d, n_classes);
    let mut b = vec![0.0; n_classes];
    let n = xs.rows() as f64;
    for _ in 0..cfg.epochs {
        let mut p = xs.matmul(&w)?;
        for i in 0..p.rows() {
            for (c, v) in p.row_mut(i).iter_mut().enumerate() {
                *v += b[c];
            }
        }
        softmax_rows(&mut p);
        for (i, &t) in train.iter().enumerate() {
            p[(i, labels[t])] -= 1.0;
        }
        let gw = xs.transpose().matmul(&p)?;
        for (wv, gv) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *wv -= cfg.lr * gv / n;
        }
        for (c, bv) in b.iter_mut().enumerate() {
            *bv -= cfg.lr * (0..p.rows()).map(|i| p[(i, c)]).sum::<f64>() / n;
        }
    }
    let mut out = standardize(&x.select_rows(test)).matmul(&w)?;
    for i in 0..out.rows() {
        for (c, v) in out.row_mut(i).iter_mut().enumerate() {
            *v += b[c];
        }
    }
    softmax_rows(&mut out);
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Trains a probe on a stratified split and scores the held-out part. AUC is
/// macro one-vs-rest over classes with both outcomes in the test split.
pub fn linear_probe(
    embeddings: &M,
    labels: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeMetrics> {
    cfg.validate()?;
    if embeddings.rows() != labels.len() {
        return Err(Error::Data(format!(
            "{} embeddings for {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("embeddings".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (train, test) = stratified_split(labels, cfg.split_fraction, seed);
    let mut seen: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::Data("training split holds a single class".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("empty test split".into()));
    }
    let probs = fit_predict(embeddings, labels, n_classes, &train, &test, cfg)?;
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let predicted: Vec<usize> = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
    let (macro_f1, undefined_f1_classes) = macro_f1(&predicted, &truth, n_classes);
    let mut aucs = Vec::new();
    let classes: Vec<usize> = if n_classes == 2 {
        vec![1]
    } else {
        (0..n_classes).collect()
    };
    for c in classes {
        let is_c: Vec<bool> = truth.iter().map(|&l| l == c).collect();
        if is_c.iter().any(|&v| v) && is_c.iter().any(|&v| !v) {
            let scores: Vec<f64> = (0..probs.rows()).map(|i| probs[(i, c)]).collect();
            aucs.push(auc(&scores, &is_c)?);
        }
    }
    if aucs.is_empty() {
        return Err(Error::Data("test split holds a single class".into()));
    }
    Ok(ProbeMetrics {
        accuracy: accuracy(&predicted, &truth),
        macro_f1,
        auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        undefined_f1_classes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl MetricSummary {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / n
        };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            per_seed: values,
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub seeds: Vec<u64>,
    pub accuracy: MetricSummary,
    pub macro_f1: MetricSummary,
    pub auc: MetricSummary,
    /// Per seed, classes whose F1 was undefined and counted as 0.
    pub undefined_f1_classes: Vec<Vec<usize>>,
}

pub fn probe_seeds(
    embeddings: &M,
    labels: &[usize],
    cfg: &ProbeConfig,
    seeds: &[u64],
) -> Result<ProbeResult> {
    let runs = seeds
        .iter()
        .map(|&s| linear_probe(embeddings, labels, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult {
        seeds: seeds.to_vec(),
        accuracy: MetricSummary::new(runs.iter().map(|r| r.accuracy).collect()),
        macro_f1: MetricSummary::new(runs.iter().map(|r| r.macro_f1).collect()),
        auc: MetricSummary::new(runs.iter().map(|r| r.auc).collect()),
        undefined_f1_classes: runs.into_iter().map(|r| r.undefined_f1_classes).collect(),
    })
}
