//! Named parameter tensors, their gradients, and the Adam optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
use crate::dense::Matrix;
use crate::error::{Error, Result};

type M = Matrix<f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: BTreeMap<String, M>,
    pub second_moment: BTreeMap<String, M>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, M>,
    pub optimizer: AdamState,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: M) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&M> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    /// Mutable access for tests and tooling; shapes must not change.
    pub fn get_mut(&mut self, name: &str) -> Result<&mut M> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &M)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.tensors.values().map(|t| t.as_slice().len()).sum()
    }

    /// Puts every tensor on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Collects per-parameter gradients; parameters the loss does not reach get zeros.
    pub fn collect_gradients(
        &self,
        bound: &BoundParams,
        grads: &Gradients,
        loss: f64,
    ) -> GradientBundle {
        let grads = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let g = bound
                    .vars
                    .get(name)
                    .and_then(|&v| grads.get(v))
                    .cloned()
                    .unwrap_or_else(|| M::zeros(t.rows(), t.cols()));
                (name.clone(), g)
            })
            .collect();
        GradientBundle { loss, grads }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(M::is_finite)
    }
}

/// Tape handles for a [`ParameterStore`].
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grads: BTreeMap<String, M>,
}

impl GradientBundle {
    pub fn zeros_like(params: &ParameterStore) -> Self {
        Self {
            loss: 0.0,
            grads: params
                .iter()
                .map(|(k, t)| (k.clone(), M::zeros(t.rows(), t.cols())))
                .collect(),
        }
    }

    /// `self += other * weight`, loss included.
    pub fn accumulate(&mut self, other: &GradientBundle, weight: f64) -> Result<()> {
        self.loss += weight * other.loss;
        for (name, g) in &other.grads {
            let acc = self
                .grads
                .get_mut(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += weight * b;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

/// One bias-corrected Adam update for every parameter in `grads`.
pub fn optimizer_step(
    params: &mut ParameterStore,
    grads: &GradientBundle,
    cfg: &AdamConfig,
) -> Result<()> {
    let state = &mut params.optimizer;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in &grads.grads {
        let p = params
            .tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter '{name}' of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| M::zeros(p.rows(), p.cols()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| M::zeros(p.rows(), p.cols()));
        for (((pv, mv), vv), &gv) in p
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameter '{name}' after optimizer step {}",
                state.step
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParameterStore {
        let mut p = ParameterStore::new();
        p.insert("w", M::filled(1, 1, v)).unwrap();
        p
    }

    fn grad(g: f64) -> GradientBundle {
        GradientBundle {
            loss: 0.0,
            grads: [("w".to_string(), M::filled(1, 1, g))]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(0.7);
        optimizer_step(&mut p, &grad(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap()[(0, 0)], 0.7);
        assert_eq!(p.optimizer.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::with_lr(0.01);
        for g in [3.0, -0.5] {
            let mut p = store(1.0);
            optimizer_step(&mut p, &grad(g), &cfg).unwrap();
            let delta = p.get("w").unwrap()[(0, 0)] - 1.0;
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta + 0.01 * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_names_and_bad_shapes_rejected() {
        let mut p = store(1.0);
        assert!(p.insert("w", M::zeros(1, 1)).is_err());
        let bad = GradientBundle {
            loss: 0.0,
            grads: [("w".to_string(), M::zeros(2, 1))].into_iter().collect(),
        };
        assert!(optimizer_step(&mut p, &bad, &AdamConfig::default()).is_err());
    }

    #[test]
    fn non_finite_update_aborts() {
        let mut p = store(1.0);
        assert!(matches!(
            optimizer_step(&mut p, &grad(f64::NAN), &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
