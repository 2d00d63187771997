//! Versioned JSON checkpoints. Parameter arrays are base64 of little-endian
//! f64 bytes so that saving, loading and saving again is byte-identical.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::cli::config::RunConfig;
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::network::{LossBreakdown, RbfNetwork, ShapeMode};
use crate::problems::BsProblem;
use crate::trainer::{RunHistory, StopReason, StreamPositions};

pub const CHECKPOINT_FORMAT: &str = "pirbf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub problem: BsProblem,
    pub network: NetworkRecord,
    pub history: HistorySummary,
    pub streams: StreamPositions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub d: usize,
    pub kernel: KernelKind,
    pub shape_mode: ShapeMode,
    pub neurons: usize,
    pub centres: String,
    pub shapes: String,
    pub weights: String,
    pub bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySummary {
    pub iterations: usize,
    pub iterations_to_converge: usize,
    pub stop_reason: StopReason,
    pub final_loss: LossBreakdown,
    pub final_test_rmse: Option<f64>,
    pub neurons: usize,
    pub insertion_iterations: Vec<usize>,
}

impl HistorySummary {
    pub fn from_history(h: &RunHistory) -> Self {
        HistorySummary {
            iterations: h.iterations(),
            iterations_to_converge: h.iterations_to_converge(),
            stop_reason: h.stop_reason,
            final_loss: h.last().loss,
            final_test_rmse: h.last().test_rmse,
            neurons: h.last().neurons,
            insertion_iterations: h.insertions.iter().map(|e| e.iteration).collect(),
        }
    }
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Checkpoint(format!("bad base64 array: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("array byte length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl NetworkRecord {
    pub fn from_network(net: &RbfNetwork) -> Self {
        NetworkRecord {
            d: net.d(),
            kernel: net.kind(),
            shape_mode: net.shape_mode(),
            neurons: net.n_neurons(),
            centres: encode_f64s(net.centres()),
            shapes: encode_f64s(net.shapes()),
            weights: encode_f64s(net.weights()),
            bias: encode_f64s(&[net.bias()]),
        }
    }

    pub fn to_network(&self) -> Result<RbfNetwork> {
        let bias = decode_f64s(&self.bias)?;
        if bias.len() != 1 {
            return Err(Error::Checkpoint("bias must hold exactly one value".into()));
        }
        let weights = decode_f64s(&self.weights)?;
        if weights.len() != self.neurons {
            return Err(Error::Checkpoint(format!(
                "network.neurons = {} but {} weights stored",
                self.neurons,
                weights.len()
            )));
        }
        RbfNetwork::new(
            self.d,
            self.kernel,
            self.shape_mode,
            decode_f64s(&self.centres)?,
            decode_f64s(&self.shapes)?,
            weights,
            bias[0],
        )
        .map_err(|e| Error::Checkpoint(format!("network: {e}")))
    }
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        problem: &BsProblem,
        net: &RbfNetwork,
        history: &RunHistory,
        streams: StreamPositions,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            problem: problem.clone(),
            network: NetworkRecord::from_network(net),
            history: HistorySummary::from_history(history),
            streams,
        }
    }

    pub fn network(&self) -> Result<RbfNetwork> {
        self.network.to_network()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("format").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(Error::Checkpoint(format!("not a checkpoint (format = {other:?})"))),
        }
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {other:?}, expected {CHECKPOINT_VERSION}"
                )))
            }
        }
        let ck: Checkpoint = serde_json::from_value(raw).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.problem.validate()?;
        ck.network()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
