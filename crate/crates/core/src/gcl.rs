//! Diffusion-guided contrastive pretraining and the NT-Xent objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{
    apply_drop, check_drop_range, sample_view_mask, AugmentationMode, ComponentScores, DropPlan,
};
use crate::autograd::Tape;
use crate::dense::Matrix;
use crate::diffusion::{diffuse_features, enhanced_adjacency, DiffusionConfig, DiffusionKernel};
use crate::encoder::{check_kind, encode_on_tape, init_encoder, EncoderConfig, StructureKind};
use crate::error::{Error, Result};
use crate::graph::Structure;
use crate::params::{optimizer_step, AdamConfig, GradientBundle, ParameterStore};
use crate::readout::{readout_on_tape, ReadoutConfig};
use crate::rng;
use crate::sparse::CsrMatrix;
use crate::training::{epoch_batches, par_map, worker_pool};

type M = Matrix<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GclConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub diffusion: DiffusionConfig,
    pub p_min: f64,
    pub p_max: f64,
    pub readout: ReadoutConfig,
    pub augmentation: AugmentationMode,
    /// `in_dim` and `structure_kind` are taken from the dataset.
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for GclConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            batch_size: 4,
            epochs: 20,
            lr: 1e-3,
            diffusion: DiffusionConfig::default(),
            p_min: 0.05,
            p_max: 0.4,
            readout: ReadoutConfig::default(),
            augmentation: AugmentationMode::DiffusionGuided,
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

impl GclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        AdamConfig::with_lr(self.lr).validate()?;
        self.diffusion.validate()?;
        self.readout.validate()?;
        check_drop_range(self.p_min, self.p_max)
    }
}

/// Loss value, gradients with respect to both embedding blocks, and alignment telemetry.
#[derive(Clone, Debug, PartialEq)]
pub struct NtXent {
    pub loss: f64,
    pub grad1: M,
    pub grad2: M,
    /// Mean cosine similarity of positive pairs.
    pub pos_align: f64,
    /// Mean cosine similarity over all negative pairs.
    pub neg_align: f64,
}

/// Symmetric NT-Xent over the `2B` stacked embeddings: each anchor's positive
/// is its counterpart view, and every other embedding is a negative.
pub fn ntxent_loss(g1: &M, g2: &M, tau: f64) -> Result<NtXent> {
    let b = g1.rows();
    if g2.shape() != g1.shape() {
        return Err(Error::Shape(format!(
            "views {:?} and {:?}",
            g1.shape(),
            g2.shape()
        )));
    }
    if b < 2 {
        return Err(Error::Shape("NT-Xent needs at least two pairs".into()));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let n = 2 * b;
    let d = g1.cols();
    let row = |i: usize| if i < b { g1.row(i) } else { g2.row(i - b) };
    let norms: Vec<f64> = (0..n)
        .map(|i| row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Data(format!("embedding {i} has zero norm")));
    }
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| row(i).iter().map(|v| v / norms[i]).collect())
        .collect();
    let mut sim = vec![vec![0.0; n]; n];
    for a in 0..n {
        for x in a..n {
            let s: f64 = unit[a].iter().zip(&unit[x]).map(|(p, q)| p * q).sum();
            sim[a][x] = s;
            sim[x][a] = s;
        }
    }
    let partner = |a: usize| (a + b) % n;
    // dL/dS[a][x], already divided by τ
    let mut dsim = vec![vec![0.0; n]; n];
    let mut loss = 0.0;
    for a in 0..n {
        let p = partner(a);
        let max = (0..n)
            .filter(|&x| x != a)
            .map(|x| sim[a][x] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n)
            .filter(|&x| x != a)
            .map(|x| (sim[a][x] / tau - max).exp())
            .sum();
        let lse = max + z.ln();
        loss += lse - sim[a][p] / tau;
        for x in (0..n).filter(|&x| x != a) {
            let soft = (sim[a][x] / tau - lse).exp();
            let target = if x == p { 1.0 } else { 0.0 };
            dsim[a][x] = (soft - target) / (n as f64 * tau);
        }
    }
    loss /= n as f64;
    let mut grad = M::zeros(n, d);
    for a in 0..n {
        let mut dh = vec![0.0; d];
        for x in 0..n {
            let w = dsim[a][x] + dsim[x][a];
            if w != 0.0 {
                for (o, &u) in dh.iter_mut().zip(&unit[x]) {
                    *o += w * u;
                }
            }
        }
        let radial: f64 = dh.iter().zip(&unit[a]).map(|(p, q)| p * q).sum();
        for (c, o) in grad.row_mut(a).iter_mut().enumerate() {
            *o = (dh[c] - radial * unit[a][c]) / norms[a];
        }
    }
    let pos_align = (0..b).map(|i| sim[i][i + b]).sum::<f64>() / b as f64;
    let mut neg = 0.0;
    for (a, row) in sim.iter().enumerate() {
        for (x, &s) in row.iter().enumerate() {
            if x != a && x != partner(a) {
                neg += s;
            }
        }
    }
    let neg_align = neg / (n * (n - 2)) as f64;
    let grad1 = grad.select_rows(&(0..b).collect::<Vec<_>>());
    let grad2 = grad.select_rows(&(b..n).collect::<Vec<_>>());
    Ok(NtXent {
        loss,
        grad1,
        grad2,
        pos_align,
        neg_align,
    })
}

/// Loss of a batch whose positives are perfectly aligned and negatives
/// perfectly opposed; no batch can score lower.
pub fn ntxent_floor(batch: usize, tau: f64) -> f64 {
    let pos = (1.0 / tau).exp();
    let neg = (-1.0 / tau).exp();
    -(pos / (pos + (2 * batch - 2) as f64 * neg)).ln()
}

/// Diffused features and drop plan of one instance; fixed across epochs.
#[derive(Clone, Debug)]
pub struct InstancePlan {
    pub x_diff: M,
    pub plan: DropPlan,
}

impl InstancePlan {
    pub fn new(instance: &Structure<f64>, config: &GclConfig) -> Result<Self> {
        let kernel = DiffusionKernel::build(instance, &config.diffusion)?;
        let x_diff = diffuse_features(&kernel, instance.features())?;
        let enhanced = enhanced_adjacency(&kernel, &instance.pairwise_adjacency())?;
        let scores = ComponentScores::compute(&x_diff, &enhanced, instance);
        let plan = DropPlan::new(&scores, config.p_min, config.p_max, config.augmentation)?;
        Ok(Self { x_diff, plan })
    }
}

/// Encoder inputs for one augmented view.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub features: M,
    pub propagation: Arc<CsrMatrix<f64>>,
    pub readout_kernel: Option<Arc<CsrMatrix<f64>>>,
}

impl ViewInput {
    pub fn new(view: &Structure<f64>, readout: &ReadoutConfig) -> Result<Self> {
        Ok(Self {
            features: view.features().clone(),
            propagation: Arc::new(view.propagation_operator()),
            readout_kernel: readout.kernel_for(view)?.map(|k| Arc::new(k.matrix)),
        })
    }
}

pub type ViewPair = (ViewInput, ViewInput);

/// Samples the two views of instance `index` for `epoch` from its own streams.
pub fn make_views(
    instance: &Structure<f64>,
    plan: &InstancePlan,
    config: &GclConfig,
    epoch: usize,
    index: usize,
) -> Result<ViewPair> {
    let mut views = Vec::with_capacity(2);
    for view in 1..=2u64 {
        let mut r = rng::stream(
            config.seed,
            "gcl.view",
            epoch as u64,
            ((index as u64) << 2) | view,
        );
        let mask = sample_view_mask(&plan.plan, &mut r);
        let dropped = apply_drop(&plan.x_diff, instance, &mask)?;
        views.push(ViewInput::new(&dropped.structure, &config.readout)?);
    }
    let second = views.pop().expect("two views");
    let first = views.pop().expect("two views");
    Ok((first, second))
}

/// NT-Xent loss and parameter gradients for fixed views.
pub fn batch_loss(
    params: &ParameterStore,
    encoder: &EncoderConfig,
    pairs: &[ViewPair],
    config: &GclConfig,
) -> Result<(GradientBundle, NtXent)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let embed = |tape: &mut Tape, v: &ViewInput| -> Result<_> {
        let x = tape.leaf(v.features.clone());
        let z = encode_on_tape(tape, &bound, encoder, x, &v.propagation)?;
        readout_on_tape(
            tape,
            &bound,
            config.readout.kind,
            z,
            v.readout_kernel.as_ref(),
        )
    };
    let mut first = Vec::with_capacity(pairs.len());
    let mut second = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        first.push(embed(&mut tape, a)?);
        second.push(embed(&mut tape, b)?);
    }
    let g1 = tape.concat_rows(&first)?;
    let g2 = tape.concat_rows(&second)?;
    let nt = ntxent_loss(tape.value(g1), tape.value(g2), config.temperature)?;
    let loss = tape.custom_scalar(
        nt.loss,
        vec![(g1, nt.grad1.clone()), (g2, nt.grad2.clone())],
    )?;
    let grads = tape.backward(loss)?;
    Ok((params.collect_gradients(&bound, &grads, nt.loss), nt))
}

/// Per-epoch training telemetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GclEpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pos_align: f64,
    pub neg_align: f64,
}

pub const GCL_TELEMETRY_HEADER: &str = "epoch,loss,pos_align,neg_align";

impl GclEpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e}",
            self.epoch, self.loss, self.pos_align, self.neg_align
        )
    }
}

pub struct GclOutcome {
    pub encoder: EncoderConfig,
    pub params: ParameterStore,
    pub telemetry: Vec<GclEpochRecord>,
}

/// Encoder config with input width and structure kind taken from the data.
pub fn encoder_for(dataset: &[Structure<f64>], template: &EncoderConfig) -> Result<EncoderConfig> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let encoder = EncoderConfig {
        in_dim: first.feature_dim(),
        structure_kind: if first.is_hypergraph() {
            StructureKind::Hypergraph
        } else {
            StructureKind::Graph
        },
        ..template.clone()
    };
    for s in dataset {
        check_kind(&encoder, s)?;
        if s.feature_dim() != encoder.in_dim {
            return Err(Error::Data(
                "instances have different feature widths".into(),
            ));
        }
    }
    encoder.validate()?;
    Ok(encoder)
}

/// One optimizer step on the instances `batch` of `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn gcl_step(
    dataset: &[Structure<f64>],
    plans: &[InstancePlan],
    batch: &[usize],
    params: &mut ParameterStore,
    encoder: &EncoderConfig,
    config: &GclConfig,
    epoch: usize,
    pool: &rayon::ThreadPool,
) -> Result<NtXent> {
    let pairs = par_map(pool, batch, |&i| {
        make_views(&dataset[i], &plans[i], config, epoch, i)
    })?;
    let (grads, nt) = batch_loss(params, encoder, &pairs, config)?;
    optimizer_step(params, &grads, &AdamConfig::with_lr(config.lr))?;
    Ok(nt)
}

pub fn train_gcl(
    dataset: &[Structure<f64>],
    config: &GclConfig,
    workers: usize,
) -> Result<GclOutcome> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::Data(
            "contrastive pretraining needs at least two instances".into(),
        ));
    }
    let encoder = encoder_for(dataset, &config.encoder)?;
    let mut params = init_encoder(&encoder, config.seed)?;
    let pool = worker_pool(workers)?;
    let plans = par_map(&pool, dataset, |s| InstancePlan::new(s, config))?;
    let mut telemetry = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batches = epoch_batches(
            dataset.len(),
            config.batch_size,
            2,
            config.seed,
            "gcl.shuffle",
            epoch,
        );
        let (mut loss, mut pos, mut neg) = (0.0, 0.0, 0.0);
        for batch in &batches {
            let nt = gcl_step(
                dataset,
                &plans,
                batch,
                &mut params,
                &encoder,
                config,
                epoch,
                &pool,
            )?;
            loss += nt.loss;
            pos += nt.pos_align;
            neg += nt.neg_align;
        }
        let k = batches.len() as f64;
        telemetry.push(GclEpochRecord {
            epoch: epoch + 1,
            loss: loss / k,
            pos_align: pos / k,
            neg_align: neg / k,
        });
    }
    Ok(GclOutcome {
        encoder,
        params,
        telemetry,
    })
}
