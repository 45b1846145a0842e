//! Message-passing encoder `f_θ`, linear decoder `g_φ` and parameter initialization.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::graph::Structure;
use crate::params::{BoundParams, ParameterStore};
use crate::rng;
use crate::sparse::CsrMatrix;

type M = Matrix<f64>;

pub const DECODER_WEIGHT: &str = "decoder.weight";
pub const DECODER_BIAS: &str = "decoder.bias";
pub const ATTENTION_VECTOR: &str = "readout.attention";
pub const HYPEREDGE_WEIGHT: &str = "hyperedge_head.weight";
pub const HYPEREDGE_BIAS: &str = "hyperedge_head.bias";
pub const MASK_TOKEN: &str = "mask_token";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    #[default]
    Graph,
    Hypergraph,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Input feature dimension.
    pub in_dim: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub structure_kind: StructureKind,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_dim: 1,
            layers: 2,
            hidden_dim: 64,
            out_dim: 64,
            activation: Activation::Relu,
            structure_kind: StructureKind::Graph,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.layers == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!(
                "encoder dimensions must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let fan_in = if l == 0 { self.in_dim } else { self.hidden_dim };
                let fan_out = if l + 1 == self.layers {
                    self.out_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

pub fn layer_weight(l: usize) -> String {
    format!("encoder.layer{l}.weight")
}

pub fn layer_bias(l: usize) -> String {
    format!("encoder.layer{l}.bias")
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> M {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    M::from_vec(rows, cols, data).expect("sized")
}

/// Xavier-uniform weights, zero biases and a zero mask token. Encoder,
/// decoder, attention-readout and hyperedge-head tensors are all created so
/// one store serves every pipeline.
pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut rng = rng::stream(seed, "init", 0, 0);
    let mut p = ParameterStore::new();
    for (l, (fan_in, fan_out)) in config.layer_dims().into_iter().enumerate() {
        p.insert(layer_weight(l), xavier(fan_in, fan_out, &mut rng))?;
        p.insert(layer_bias(l), M::zeros(1, fan_out))?;
    }
    p.insert(
        DECODER_WEIGHT,
        xavier(config.out_dim, config.in_dim, &mut rng),
    )?;
    p.insert(DECODER_BIAS, M::zeros(1, config.in_dim))?;
    p.insert(ATTENTION_VECTOR, xavier(config.out_dim, 1, &mut rng))?;
    p.insert(HYPEREDGE_WEIGHT, xavier(config.out_dim, 1, &mut rng))?;
    p.insert(HYPEREDGE_BIAS, M::zeros(1, 1))?;
    p.insert(MASK_TOKEN, M::zeros(1, config.in_dim))?;
    Ok(p)
}

/// `H_{l+1} = relu(Op H_l W_l + b_l)`, last layer linear.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &BoundParams,
    config: &EncoderConfig,
    x: Var,
    propagation: &Arc<CsrMatrix<f64>>,
) -> Result<Var> {
    if tape.value(x).cols() != config.in_dim {
        return Err(Error::Shape(format!(
            "features of width {} for encoder with in_dim {}",
            tape.value(x).cols(),
            config.in_dim
        )));
    }
    if propagation.n_rows() != tape.value(x).rows() {
        return Err(Error::Shape(format!(
            "propagation operator of size {} for {} nodes",
            propagation.n_rows(),
            tape.value(x).rows()
        )));
    }
    let mut h = x;
    for l in 0..config.layers {
        let mixed = tape.spmm(propagation.clone(), h)?;
        let lin = tape.matmul(mixed, params.var(&layer_weight(l))?)?;
        h = tape.add_row(lin, params.var(&layer_bias(l))?)?;
        if l + 1 < config.layers {
            h = match config.activation {
                Activation::Relu => tape.relu(h),
            };
        }
    }
    Ok(h)
}

/// Forward-only encoding of an instance with its own features.
pub fn encode(
    params: &ParameterStore,
    config: &EncoderConfig,
    x: &M,
    structure: &Structure<f64>,
) -> Result<M> {
    check_kind(config, structure)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let op = Arc::new(structure.propagation_operator());
    let z = encode_on_tape(&mut tape, &bound, config, xv, &op)?;
    Ok(tape.value(z).clone())
}

pub fn check_kind(config: &EncoderConfig, structure: &Structure<f64>) -> Result<()> {
    let kind = if structure.is_hypergraph() {
        StructureKind::Hypergraph
    } else {
        StructureKind::Graph
    };
    if kind != config.structure_kind {
        return Err(Error::Data(format!(
            "encoder configured for {:?} but got a {kind:?}",
            config.structure_kind
        )));
    }
    Ok(())
}

/// `X̂ = Z W_dec + b_dec`.
pub fn decode_on_tape(tape: &mut Tape, params: &BoundParams, z: Var) -> Result<Var> {
    let lin = tape.matmul(z, params.var(DECODER_WEIGHT)?)?;
    tape.add_row(lin, params.var(DECODER_BIAS)?)
}

pub fn decode_features(params: &ParameterStore, z: &M) -> Result<M> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let zv = tape.leaf(z.clone());
    let out = decode_on_tape(&mut tape, &bound, zv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn cfg(in_dim: usize, hidden: usize, out: usize) -> EncoderConfig {
        EncoderConfig {
            in_dim,
            hidden_dim: hidden,
            out_dim: out,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let c = cfg(3, 8, 4);
        let a = init_encoder(&c, 11).unwrap();
        assert_eq!(a, init_encoder(&c, 11).unwrap());
        assert_ne!(a, init_encoder(&c, 12).unwrap());
        for (name, t) in a.iter() {
            if name.ends_with("bias") || name == MASK_TOKEN {
                assert!(t.as_slice().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn xavier_bound_for_unit_dims() {
        let p = init_encoder(&cfg(1, 1, 1), 0).unwrap();
        let w = p.get(&layer_weight(0)).unwrap()[(0, 0)];
        assert!(w.abs() <= 3f64.sqrt());
    }

    #[test]
    fn zero_weights_give_bias_broadcast() {
        let c = cfg(2, 3, 2);
        let mut p = init_encoder(&c, 0).unwrap();
        for l in 0..2 {
            let w = p.get_mut(&layer_weight(l)).unwrap();
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let g: Structure<f64> = Graph::from_edges(3, &[(0, 1, 1.0)], M::filled(3, 2, 1.0))
            .unwrap()
            .into();
        let z = encode(&p, &c, g.features(), &g).unwrap();
        assert_eq!(z, M::zeros(3, 2));
        p.get_mut(&layer_bias(1))
            .unwrap()
            .as_mut_slice()
            .copy_from_slice(&[0.5, -1.0]);
        let z = encode(&p, &c, g.features(), &g).unwrap();
        for i in 0..3 {
            assert_eq!(z.row(i), &[0.5, -1.0]);
        }
    }

    #[test]
    fn single_node_matches_hand_evaluation() {
        let c = cfg(2, 3, 2);
        let mut p = init_encoder(&c, 5).unwrap();
        p.get_mut(&layer_bias(0))
            .unwrap()
            .as_mut_slice()
            .copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = M::from_rows(&[vec![0.7, -1.3]]).unwrap();
        let g: Structure<f64> = Graph::new(CsrMatrix::zeros(1, 1), x.clone())
            .unwrap()
            .into();
        let z = encode(&p, &c, &x, &g).unwrap();
        let h = x
            .matmul(p.get(&layer_weight(0)).unwrap())
            .unwrap()
            .add(p.get(&layer_bias(0)).unwrap())
            .unwrap()
            .map(|v| v.max(0.0));
        let expected = h
            .matmul(p.get(&layer_weight(1)).unwrap())
            .unwrap()
            .add(p.get(&layer_bias(1)).unwrap())
            .unwrap();
        assert!(z.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn wrong_feature_width_rejected() {
        let c = cfg(2, 3, 2);
        let p = init_encoder(&c, 0).unwrap();
        let g: Structure<f64> = Graph::new(CsrMatrix::zeros(2, 2), M::zeros(2, 3))
            .unwrap()
            .into();
        assert!(encode(&p, &c, g.features(), &g).is_err());
    }

    #[test]
    fn decoder_examples() {
        let c = cfg(2, 3, 2);
        let mut p = init_encoder(&c, 0).unwrap();
        let z = M::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        p.get_mut(DECODER_WEIGHT)
            .unwrap()
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        assert_eq!(decode_features(&p, &z).unwrap(), M::zeros(2, 2));
        *p.get_mut(DECODER_WEIGHT).unwrap() = M::identity(2);
        assert_eq!(decode_features(&p, &z).unwrap(), z);
    }
}
