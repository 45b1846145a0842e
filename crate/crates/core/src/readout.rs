//! Graph-level readouts: mean, max, attention and diffusion pooling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::dense::Matrix;
use crate::diffusion::{DiffusionConfig, DiffusionKernel};
use crate::encoder::ATTENTION_VECTOR;
use crate::error::{Error, Result};
use crate::graph::Structure;
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutKind {
    Mean,
    Max,
    Attention,
    Diffusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub kind: ReadoutKind,
    /// Required exactly when `kind` is `diffusion`.
    #[serde(default)]
    pub diffusion: Option<DiffusionConfig>,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self::diffusion(DiffusionConfig::default())
    }
}

impl ReadoutConfig {
    pub fn simple(kind: ReadoutKind) -> Self {
        Self {
            kind,
            diffusion: None,
        }
    }

    pub fn diffusion(config: DiffusionConfig) -> Self {
        Self {
            kind: ReadoutKind::Diffusion,
            diffusion: Some(config),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.diffusion) {
            (ReadoutKind::Diffusion, Some(d)) => d.validate(),
            (ReadoutKind::Diffusion, None) => Err(Error::Config(
                "diffusion readout needs a diffusion config".into(),
            )),
            (_, Some(_)) => Err(Error::Config(
                "diffusion config given for a non-diffusion readout".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Kernel for the structure handed to the readout, when the readout needs one.
    pub fn kernel_for<T: Scalar>(
        &self,
        structure: &Structure<T>,
    ) -> Result<Option<DiffusionKernel<T>>> {
        match (&self.kind, &self.diffusion) {
            (ReadoutKind::Diffusion, Some(cfg)) => {
                Ok(Some(DiffusionKernel::build(structure, cfg)?))
            }
            _ => Ok(None),
        }
    }
}

fn check_nonempty<T: Scalar>(z: &Matrix<T>) -> Result<()> {
    if z.rows() == 0 {
        Err(Error::Shape("readout over zero nodes".into()))
    } else {
        Ok(())
    }
}

pub fn mean_readout<T: Scalar>(z: &Matrix<T>) -> Result<Vec<T>> {
    check_nonempty(z)?;
    let n = T::from_usize(z.rows()).expect("row count");
    let mut out = vec![T::zero(); z.cols()];
    for i in 0..z.rows() {
        for (o, &v) in out.iter_mut().zip(z.row(i)) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / n).collect())
}

pub fn max_readout<T: Scalar>(z: &Matrix<T>) -> Result<Vec<T>> {
    check_nonempty(z)?;
    let mut out = z.row(0).to_vec();
    for i in 1..z.rows() {
        for (o, &v) in out.iter_mut().zip(z.row(i)) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// `Σ_i softmax_i(wᵀ z_i) z_i`.
pub fn attention_readout<T: Scalar>(z: &Matrix<T>, w: &[T]) -> Result<Vec<T>> {
    check_nonempty(z)?;
    if w.len() != z.cols() {
        return Err(Error::Shape(format!(
            "attention vector of length {} for embeddings of width {}",
            w.len(),
            z.cols()
        )));
    }
    let logits: Vec<T> = (0..z.rows())
        .map(|i| z.row(i).iter().zip(w).map(|(&a, &b)| a * b).sum())
        .collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let mut out = vec![T::zero(); z.cols()];
    for (i, &e) in exps.iter().enumerate() {
        let a = e / total;
        for (o, &v) in out.iter_mut().zip(z.row(i)) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// `(1/N) 1ᵀ K Z`: diffuse the embeddings, then mean-pool.
pub fn diffusion_readout<T: Scalar>(z: &Matrix<T>, kernel: &DiffusionKernel<T>) -> Result<Vec<T>> {
    mean_readout(&kernel.matrix.mul_dense(z)?)
}

/// Plain (non-tape) readout of `z` over `structure`; `attention` is only
/// read for attention pooling.
pub fn graph_readout<T: Scalar>(
    z: &Matrix<T>,
    config: &ReadoutConfig,
    structure: &Structure<T>,
    attention: Option<&[T]>,
) -> Result<Vec<T>> {
    match config.kind {
        ReadoutKind::Mean => mean_readout(z),
        ReadoutKind::Max => max_readout(z),
        ReadoutKind::Attention => {
            let w = attention
                .ok_or_else(|| Error::Config("attention readout needs a vector".into()))?;
            attention_readout(z, w)
        }
        ReadoutKind::Diffusion => {
            let k = config.kernel_for(structure)?.expect("diffusion kind");
            diffusion_readout(z, &k)
        }
    }
}

/// Readout recorded on the tape. `kernel` must be present for diffusion pooling.
pub fn readout_on_tape(
    tape: &mut Tape,
    params: &BoundParams,
    kind: ReadoutKind,
    z: Var,
    kernel: Option<&Arc<CsrMatrix<f64>>>,
) -> Result<Var> {
    match kind {
        ReadoutKind::Mean => tape.mean_rows(z),
        ReadoutKind::Max => tape.max_rows(z),
        ReadoutKind::Attention => {
            let scores = tape.matmul(z, params.var(ATTENTION_VECTOR)?)?;
            let alpha = tape.softmax_col(scores)?;
            let alpha_t = tape.transpose(alpha);
            tape.matmul(alpha_t, z)
        }
        ReadoutKind::Diffusion => {
            let k =
                kernel.ok_or_else(|| Error::Config("diffusion readout without a kernel".into()))?;
            let diffused = tape.spmm(k.clone(), z)?;
            tape.mean_rows(diffused)
        }
    }
}
