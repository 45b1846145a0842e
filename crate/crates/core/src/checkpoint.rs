//! Versioned JSON checkpoints of encoder parameters and optimizer state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::diffusion::DiffusionConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::params::{AdamState, ParameterStore};

type M = Matrix<f64>;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl TensorRecord {
    fn from_matrix(m: &M) -> Self {
        Self {
            shape: [m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self, name: &str) -> Result<M> {
        M::from_vec(self.shape[0], self.shape[1], self.values.clone())
            .map_err(|e| Error::Data(format!("tensor '{name}': {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub step: u64,
    pub first_moment: BTreeMap<String, TensorRecord>,
    pub second_moment: BTreeMap<String, TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngRecord {
    pub seed: u64,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub pipeline: String,
    pub encoder: EncoderConfig,
    /// Diffusion applied to node features before encoding, as during pretraining.
    pub input_diffusion: Option<DiffusionConfig>,
    /// Echo of the run settings.
    pub settings: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
    pub optimizer_state: OptimizerRecord,
    pub rng_state: RngRecord,
}

fn records(map: &BTreeMap<String, M>) -> BTreeMap<String, TensorRecord> {
    map.iter()
        .map(|(k, v)| (k.clone(), TensorRecord::from_matrix(v)))
        .collect()
}

fn matrices(map: &BTreeMap<String, TensorRecord>) -> Result<BTreeMap<String, M>> {
    map.iter()
        .map(|(k, v)| Ok((k.clone(), v.to_matrix(k)?)))
        .collect()
}

impl Checkpoint {
    pub fn capture(
        config: CheckpointConfig,
        params: &ParameterStore,
        seed: u64,
        epochs_completed: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config,
            tensors: params
                .iter()
                .map(|(k, v)| (k.clone(), TensorRecord::from_matrix(v)))
                .collect(),
            optimizer_state: OptimizerRecord {
                step: params.optimizer.step,
                first_moment: records(&params.optimizer.first_moment),
                second_moment: records(&params.optimizer.second_moment),
            },
            rng_state: RngRecord {
                seed,
                epochs_completed,
            },
        }
    }

    /// Rebuilds the parameter store, checking it against the encoder config.
    pub fn restore(&self) -> Result<ParameterStore> {
        let mut p = ParameterStore::new();
        for (name, t) in &self.tensors {
            p.insert(name.clone(), t.to_matrix(name)?)?;
        }
        let expected = crate::encoder::init_encoder(&self.config.encoder, 0)?;
        for (name, t) in expected.iter() {
            let got = p
                .get(name)
                .map_err(|_| Error::Data(format!("checkpoint lacks tensor '{name}'")))?;
            if got.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "tensor '{name}' has shape {:?}, encoder expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        p.optimizer = AdamState {
            step: self.optimizer_state.step,
            first_moment: matrices(&self.optimizer_state.first_moment)?,
            second_moment: matrices(&self.optimizer_state.second_moment)?,
        };
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("column {}: {e}", e.column()),
        })?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format_version {}",
                c.format_version
            )));
        }
        c.config
            .encoder
            .validate()
            .map_err(|e| Error::Data(e.to_string()))?;
        Ok(c)
    }
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    fs::write(path, c.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}
