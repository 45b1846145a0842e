//! Truncated diffusion kernels over transition matrices and Laplacians.
//!
//! All three kernels share one accumulation path: a Horner evaluation of
//! `Σ β_k Opᵏ` with sparse products. The heat kernel runs that path on a
//! scaled-down Laplacian and squares the result back up.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Structure;
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[serde(alias = "rw")]
    RandomWalk,
    Ppr,
    Heat,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::RandomWalk, KernelKind::Ppr, KernelKind::Heat];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::RandomWalk => "rw",
            KernelKind::Ppr => "ppr",
            KernelKind::Heat => "heat",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rw" | "random_walk" => Ok(KernelKind::RandomWalk),
            "ppr" => Ok(KernelKind::Ppr),
            "heat" => Ok(KernelKind::Heat),
            other => Err(Error::Config(format!("unknown kernel kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub kind: KernelKind,
    /// Random-walk decay.
    pub lambda: f64,
    /// PPR restart probability.
    pub alpha: f64,
    /// Heat diffusion time.
    pub time: f64,
    /// Truncation order `T`.
    pub order: usize,
    /// Explicit coefficients `β_0..β_T`; replaces the preset weights and the order.
    pub series_weights: Option<Vec<f64>>,
    pub sparsify_epsilon: f64,
    pub sparsify_top_k: Option<usize>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Ppr,
            lambda: 0.5,
            alpha: 0.15,
            time: 1.0,
            order: 4,
            series_weights: None,
            sparsify_epsilon: 0.0,
            sparsify_top_k: None,
        }
    }
}

impl DiffusionConfig {
    pub fn random_walk(lambda: f64, order: usize) -> Self {
        Self {
            kind: KernelKind::RandomWalk,
            lambda,
            order,
            ..Self::default()
        }
    }

    pub fn ppr(alpha: f64, order: usize) -> Self {
        Self {
            kind: KernelKind::Ppr,
            alpha,
            order,
            ..Self::default()
        }
    }

    pub fn heat(time: f64, order: usize) -> Self {
        Self {
            kind: KernelKind::Heat,
            time,
            order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.series_weights {
            if w.is_empty() || w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(
                    "series_weights must be nonempty and finite".into(),
                ));
            }
        } else {
            match self.kind {
                KernelKind::RandomWalk => check_open_unit("lambda", self.lambda)?,
                KernelKind::Ppr => {
                    if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                        return Err(Error::Config(format!(
                            "alpha must lie in (0, 1], got {}",
                            self.alpha
                        )));
                    }
                }
                KernelKind::Heat => {
                    if !(self.time > 0.0 && self.time.is_finite()) {
                        return Err(Error::Config(format!(
                            "time must be positive, got {}",
                            self.time
                        )));
                    }
                }
            }
        }
        if !(self.sparsify_epsilon >= 0.0 && self.sparsify_epsilon.is_finite()) {
            return Err(Error::Config("sparsify_epsilon must be nonnegative".into()));
        }
        if self.sparsify_epsilon > 0.0 && self.sparsify_top_k.is_some() {
            return Err(Error::Config(
                "set at most one of sparsify_epsilon and sparsify_top_k".into(),
            ));
        }
        Ok(())
    }

    /// Preset series coefficients for the random-walk and PPR kernels.
    fn preset_weights(&self) -> Vec<f64> {
        let t = self.order as i32;
        match self.kind {
            KernelKind::RandomWalk => (0..=t).map(|k| self.lambda.powi(k)).collect(),
            KernelKind::Ppr => (0..=t)
                .map(|k| self.alpha * (1.0 - self.alpha).powi(k))
                .collect(),
            KernelKind::Heat => {
                let mut w = Vec::with_capacity(self.order + 1);
                let mut term = 1.0;
                for k in 0..=self.order {
                    if k > 0 {
                        term *= -self.time / k as f64;
                    }
                    w.push(term);
                }
                w
            }
        }
    }
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// A materialized kernel together with how it was built.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionKernel<T> {
    pub matrix: CsrMatrix<T>,
    pub config: DiffusionConfig,
    /// Hex digest of the operator the kernel was expanded from.
    pub source_hash: String,
}

impl<T: Scalar> DiffusionKernel<T> {
    pub fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Builds the configured kernel for a graph or hypergraph, then sparsifies
    /// it if requested.
    pub fn build(structure: &Structure<T>, config: &DiffusionConfig) -> Result<Self> {
        config.validate()?;
        let op = match config.kind {
            KernelKind::RandomWalk | KernelKind::Ppr => structure.transition(),
            KernelKind::Heat => structure.laplacian(),
        };
        let kernel = match (&config.series_weights, config.kind) {
            (Some(w), _) => {
                let w: Vec<T> = w.iter().map(|&v| T::lit(v)).collect();
                Self {
                    matrix: series_kernel(&op, &w),
                    config: config.clone(),
                    source_hash: digest(&op),
                }
            }
            (None, KernelKind::RandomWalk) => rw_kernel(&op, config.lambda, config.order)?,
            (None, KernelKind::Ppr) => ppr_kernel(&op, config.alpha, config.order)?,
            (None, KernelKind::Heat) => heat_kernel(&op, config.time, config.order)?,
        };
        let kernel = Self {
            config: config.clone(),
            ..kernel
        };
        if config.sparsify_epsilon > 0.0 {
            sparsify_kernel(&kernel, Some(config.sparsify_epsilon), None)
        } else if let Some(k) = config.sparsify_top_k {
            sparsify_kernel(&kernel, None, Some(k))
        } else {
            Ok(kernel)
        }
    }
}

/// `Σ_k weights[k] · opᵏ` by Horner's rule.
pub fn series_kernel<T: Scalar>(op: &CsrMatrix<T>, weights: &[T]) -> CsrMatrix<T> {
    let n = op.n_rows();
    let id = CsrMatrix::identity(n);
    let Some((&last, rest)) = weights.split_last() else {
        return CsrMatrix::zeros(n, n);
    };
    let mut acc = id.scale(last);
    for &w in rest.iter().rev() {
        acc = op
            .matmul(&acc)
            .and_then(|m| m.add_scaled(&id, w))
            .expect("square operator");
    }
    acc
}

/// `Σ_{k=0}^{T} λᵏ Pᵏ`.
pub fn rw_kernel<T: Scalar>(
    transition: &CsrMatrix<T>,
    lambda: f64,
    order: usize,
) -> Result<DiffusionKernel<T>> {
    let config = DiffusionConfig::random_walk(lambda, order);
    config.validate()?;
    Ok(from_preset(transition, config))
}

/// `α Σ_{k=0}^{T} (1-α)ᵏ Pᵏ`; `α = 1` degenerates to the identity.
pub fn ppr_kernel<T: Scalar>(
    transition: &CsrMatrix<T>,
    alpha: f64,
    order: usize,
) -> Result<DiffusionKernel<T>> {
    let config = DiffusionConfig::ppr(alpha, order);
    config.validate()?;
    Ok(from_preset(transition, config))
}

fn from_preset<T: Scalar>(op: &CsrMatrix<T>, config: DiffusionConfig) -> DiffusionKernel<T> {
    let w: Vec<T> = config.preset_weights().into_iter().map(T::lit).collect();
    DiffusionKernel {
        matrix: series_kernel(op, &w),
        source_hash: digest(op),
        config,
    }
}

/// Largest scaled norm the truncated Taylor block is evaluated at.
const HEAT_MAX_SCALED_NORM: f64 = 0.5;
const HEAT_MAX_SQUARINGS: u32 = 64;

/// Number of squarings for `exp(-t L)` with a Taylor block of order `order`.
///
/// The scaled norm `θ = t‖L‖₁/2ˢ` must be at most 0.5, and the block's
/// truncation bound `θ^{T+1}/(T+1)!` must not exceed the unit roundoff, so a
/// short series is compensated by extra squarings.
fn heat_squarings(scaled_norm: f64, order: usize, unit_roundoff: f64) -> u32 {
    if scaled_norm == 0.0 {
        return 0;
    }
    let fact: f64 = (1..=order + 1).map(|k| k as f64).product();
    let mut s = 0;
    while s < HEAT_MAX_SQUARINGS {
        let theta = scaled_norm / 2f64.powi(s as i32);
        let remainder = theta.powi(order as i32 + 1) / fact;
        if theta <= HEAT_MAX_SCALED_NORM && (order == 0 || remainder <= unit_roundoff) {
            break;
        }
        s += 1;
    }
    s
}

/// `exp(-t L)` by scaling and squaring around an order-`T` Taylor block.
pub fn heat_kernel<T: Scalar>(
    laplacian: &CsrMatrix<T>,
    time: f64,
    order: usize,
) -> Result<DiffusionKernel<T>> {
    let config = DiffusionConfig::heat(time, order);
    config.validate()?;
    let norm = laplacian.norm_one().as_f64();
    let unit_roundoff = T::epsilon().as_f64() / 2.0;
    let s = heat_squarings(time * norm, order, unit_roundoff);
    let step = time / 2f64.powi(s as i32);
    let scaled = DiffusionConfig::heat(step, order);
    let mut w: Vec<T> = scaled.preset_weights().into_iter().map(T::lit).collect();
    // Square the offset E = K - I as E <- 2E + E^2 so the small scaled
    // generator is never rounded against the identity.
    w[0] = T::zero();
    let mut e = series_kernel(laplacian, &w);
    for _ in 0..s {
        e = e.matmul(&e)?.add_scaled(&e, T::lit(2.0))?;
    }
    let k = CsrMatrix::identity(laplacian.n_rows()).add_scaled(&e, T::one())?;
    Ok(DiffusionKernel {
        matrix: k,
        source_hash: digest(laplacian),
        config,
    })
}

/// `X_diff = K X`.
pub fn diffuse_features<T: Scalar>(
    kernel: &DiffusionKernel<T>,
    x: &Matrix<T>,
) -> Result<Matrix<T>> {
    kernel.matrix.mul_dense(x)
}

/// Symmetric connectivity with entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancedAdjacency<T> {
    pub matrix: CsrMatrix<T>,
}

impl<T: Scalar> EnhancedAdjacency<T> {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    pub fn dim(&self) -> usize {
        self.matrix.n_rows()
    }
}

/// `K A Kᵀ`, symmetrized, divided by its largest entry and clipped to `[0, 1]`.
pub fn enhanced_adjacency<T: Scalar>(
    kernel: &DiffusionKernel<T>,
    adjacency: &CsrMatrix<T>,
) -> Result<EnhancedAdjacency<T>> {
    let k = &kernel.matrix;
    let raw = k.matmul(adjacency)?.matmul(&k.transpose())?;
    let half = T::lit(0.5);
    let sym = raw.add_scaled(&raw.transpose(), T::one())?.scale(half);
    let matrix = match sym.max_value() {
        Some(max) if max > T::zero() => {
            sym.map_values(|_, _, v| (v / max).max(T::zero()).min(T::one()))
        }
        _ => CsrMatrix::zeros(sym.n_rows(), sym.n_cols()),
    };
    Ok(EnhancedAdjacency { matrix })
}

/// Drops small entries (below `epsilon` in magnitude, or outside each row's
/// `top_k` by magnitude) and rescales every row back to its original sum.
pub fn sparsify_kernel<T: Scalar>(
    kernel: &DiffusionKernel<T>,
    epsilon: Option<f64>,
    top_k: Option<usize>,
) -> Result<DiffusionKernel<T>> {
    let m = &kernel.matrix;
    let keep: Vec<Vec<bool>> = match (epsilon, top_k) {
        (Some(eps), None) => {
            if eps.is_nan() || eps < 0.0 {
                return Err(Error::Config("epsilon must be nonnegative".into()));
            }
            let eps = T::lit(eps);
            (0..m.n_rows())
                .map(|i| m.row(i).1.iter().map(|v| v.abs() >= eps).collect())
                .collect()
        }
        (None, Some(k)) => (0..m.n_rows())
            .map(|i| {
                let vals = m.row(i).1;
                let mut order: Vec<usize> = (0..vals.len()).collect();
                order.sort_by(|&a, &b| {
                    vals[b]
                        .abs()
                        .partial_cmp(&vals[a].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let mut keep = vec![false; vals.len()];
                for &p in order.iter().take(k) {
                    keep[p] = true;
                }
                keep
            })
            .collect(),
        _ => {
            return Err(Error::Config(
                "exactly one of epsilon and top_k must be set".into(),
            ))
        }
    };
    let mut trip = Vec::new();
    for (i, row_keep) in keep.iter().enumerate() {
        let (cols, vals) = m.row(i);
        let total: T = vals.iter().copied().sum();
        let mut kept_sum = T::zero();
        for (&v, &k) in vals.iter().zip(row_keep) {
            if k {
                kept_sum += v;
            }
        }
        let dropped_any = row_keep.iter().any(|&k| !k);
        if !dropped_any {
            trip.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
            continue;
        }
        if kept_sum == T::zero() {
            // nothing to rescale: fall back to the single largest entry
            if let Some(p) = (0..vals.len()).max_by(|&a, &b| {
                vals[a]
                    .abs()
                    .partial_cmp(&vals[b].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            }) {
                trip.push((i, cols[p], total));
            }
            continue;
        }
        let factor = total / kept_sum;
        for ((&j, &v), &k) in cols.iter().zip(vals).zip(row_keep) {
            if k {
                trip.push((i, j, v * factor));
            }
        }
    }
    let mut config = kernel.config.clone();
    config.sparsify_epsilon = epsilon.unwrap_or(0.0);
    config.sparsify_top_k = top_k;
    Ok(DiffusionKernel {
        matrix: CsrMatrix::from_triplets(m.n_rows(), m.n_cols(), &trip)?,
        config,
        source_hash: kernel.source_hash.clone(),
    })
}

fn digest<T: Scalar>(m: &CsrMatrix<T>) -> String {
    let mut h = Sha256::new();
    h.update((m.n_rows() as u64).to_le_bytes());
    h.update((m.n_cols() as u64).to_le_bytes());
    for &o in m.row_offsets() {
        h.update((o as u64).to_le_bytes());
    }
    for &c in m.col_indices() {
        h.update((c as u64).to_le_bytes());
    }
    for &v in m.values() {
        h.update(v.as_f64().to_bits().to_le_bytes());
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_laplacian, Graph};

    fn half_matrix() -> CsrMatrix<f64> {
        CsrMatrix::from_dense(&Matrix::filled(2, 2, 0.5), 0.0)
    }

    fn assert_close(a: &Matrix<f64>, rows: &[&[f64]], tol: f64) {
        let b = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let d = a.max_abs_diff(&b);
        assert!(d <= tol, "max diff {d} > {tol}: {a:?}");
    }

    #[test]
    fn rw_examples() {
        let p = half_matrix();
        let k0 = rw_kernel(&p, 0.5, 0).unwrap();
        assert_eq!(k0.matrix.to_dense(), Matrix::identity(2));
        let ki = rw_kernel(&CsrMatrix::<f64>::identity(3), 0.5, 3).unwrap();
        assert!(
            ki.matrix
                .to_dense()
                .max_abs_diff(&Matrix::identity(3).scale(1.875))
                < 1e-15
        );
        let k = rw_kernel(&p, 0.5, 2).unwrap();
        assert_close(
            &k.matrix.to_dense(),
            &[&[1.375, 0.375], &[0.375, 1.375]],
            1e-15,
        );
        assert!(rw_kernel(&p, 1.0, 2).unwrap_err().is_config());
        assert!(rw_kernel(&p, 0.0, 2).unwrap_err().is_config());
    }

    #[test]
    fn ppr_examples() {
        let p = half_matrix();
        let k1 = ppr_kernel(&p, 1.0, 5).unwrap();
        assert_eq!(k1.matrix.to_dense(), Matrix::identity(2));
        let k = ppr_kernel(&p, 0.5, 20).unwrap();
        assert_close(&k.matrix.to_dense(), &[&[0.75, 0.25], &[0.25, 0.75]], 1e-6);
        assert!(ppr_kernel(&p, 0.0, 2).is_err());
        assert!(ppr_kernel(&p, 1.5, 2).is_err());
    }

    #[test]
    fn heat_examples() {
        let zero = CsrMatrix::<f64>::zeros(3, 3);
        assert_eq!(
            heat_kernel(&zero, 1.0, 4).unwrap().matrix.to_dense(),
            Matrix::identity(3)
        );
        let g = Graph::from_edges(2, &[(0, 1, 1.0)], Matrix::zeros(2, 1)).unwrap();
        let l = normalized_laplacian(&g);
        let k = heat_kernel(&l, 1.0, 4).unwrap();
        let e = (-1.0f64).exp();
        let (a, b) = ((1.0 + e) / 2.0, (1.0 - e) / 2.0);
        assert_close(&k.matrix.to_dense(), &[&[a, b], &[b, a]], 1e-12);
        assert!((a - 0.6839).abs() < 1e-4);
        assert!(heat_kernel(&l, 0.0, 4).is_err());
        assert!(heat_kernel(&l, -1.0, 4).is_err());
    }

    #[test]
    fn squaring_count_respects_both_bounds() {
        assert_eq!(heat_squarings(0.0, 4, 1e-16), 0);
        assert_eq!(heat_squarings(0.4, 0, 1e-16), 0);
        assert_eq!(heat_squarings(4.0, 0, 1e-16), 3);
        let s = heat_squarings(4.0, 8, 1.1e-16);
        let theta = 4.0 / 2f64.powi(s as i32);
        assert!(theta <= 0.5 && theta.powi(9) / 362880.0 <= 1.1e-16);
    }

    #[test]
    fn diffuse_identity_and_zero() {
        let k = rw_kernel(&half_matrix(), 0.5, 0).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(diffuse_features(&k, &x).unwrap(), x);
        assert_eq!(
            diffuse_features(&k, &Matrix::zeros(2, 2)).unwrap(),
            Matrix::zeros(2, 2)
        );
        assert!(diffuse_features(&k, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn uniform_kernel_averages_rows() {
        let k: DiffusionKernel<f64> = DiffusionKernel {
            matrix: CsrMatrix::from_dense(&Matrix::filled(3, 3, 1.0 / 3.0), 0.0),
            config: DiffusionConfig::default(),
            source_hash: String::new(),
        };
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0], vec![3.0, 6.0]]).unwrap();
        let d = diffuse_features(&k, &x).unwrap();
        for i in 0..3 {
            assert!((d[(i, 0)] - 2.0).abs() < 1e-15 && (d[(i, 1)] - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn enhanced_adjacency_examples() {
        let id = rw_kernel(&CsrMatrix::<f64>::identity(3), 0.5, 0).unwrap();
        let zero = enhanced_adjacency(&id, &CsrMatrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.matrix.nnz(), 0);
        let a =
            CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)])
                .unwrap();
        assert_eq!(enhanced_adjacency(&id, &a).unwrap().matrix, a);
    }

    #[test]
    fn sparsify_contract() {
        let g =
            Graph::<f64>::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], Matrix::zeros(3, 1)).unwrap();
        let p = crate::graph::graph_transition(&g);
        let k = ppr_kernel(&p, 0.15, 4).unwrap();
        assert_eq!(
            sparsify_kernel(&k, Some(0.0), None).unwrap().matrix,
            k.matrix
        );
        assert_eq!(sparsify_kernel(&k, None, Some(3)).unwrap().matrix, k.matrix);
        assert!(sparsify_kernel(&k, Some(0.1), Some(2))
            .unwrap_err()
            .is_config());
        assert!(sparsify_kernel(&k, None, None).unwrap_err().is_config());
        let top1 = sparsify_kernel(&k, None, Some(1)).unwrap();
        for (a, b) in top1.matrix.row_sums().iter().zip(k.matrix.row_sums()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(top1.matrix.nnz(), 3);
    }

    #[test]
    fn config_validation() {
        let mut c = DiffusionConfig::default();
        assert!(c.validate().is_ok());
        c.sparsify_epsilon = 0.1;
        c.sparsify_top_k = Some(2);
        assert!(c.validate().is_err());
        let c = DiffusionConfig {
            series_weights: Some(vec![]),
            ..DiffusionConfig::default()
        };
        assert!(c.validate().is_err());
        let parsed: DiffusionConfig =
            serde_json::from_str(r#"{"kind": "rw", "lambda": 0.3}"#).unwrap();
        assert_eq!(parsed.kind, KernelKind::RandomWalk);
        assert!(serde_json::from_str::<DiffusionConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
