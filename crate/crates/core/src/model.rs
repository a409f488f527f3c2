//! Feed-forward cost model: context features → positive per-edge costs.
//!
//! The network output `raw` is a residual on the prior:
//!
//! ```text
//! cost_e = floor + softplus(raw_e + softplus⁻¹(prior_e − floor))
//! ```
//!
//! so `raw = 0` reproduces the prior and every cost stays above `floor`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::PriorCosts;

const MAGIC: &[u8; 8] = b"DSPMODL1";

/// Smallest gap above the floor used for priors at or below it.
const MIN_PRIOR_GAP: f64 = 1e-12;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub edge_count: usize,
}

impl Architecture {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_dim];
        w.extend(&self.hidden);
        w.push(self.edge_count);
        w
    }

    /// `(weights offset, bias offset, fan_in, fan_out)` of each layer.
    fn layers(&self) -> Vec<(usize, usize, usize, usize)> {
        let w = self.widths();
        let mut off = 0;
        w.windows(2)
            .map(|p| {
                let (fin, fout) = (p[0], p[1]);
                let l = (off, off + fin * fout, fin, fout);
                off += fin * fout + fout;
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Weights of the multilayer perceptron, flattened layer by layer
/// (row-major `fan_out × fan_in` weights, then biases).
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub arch: Architecture,
    pub cost_floor: f64,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input of every layer; later entries are post-activation.
    inputs: Vec<Vec<f64>>,
    /// `raw + softplus⁻¹(prior − floor)`.
    shifted: Vec<f64>,
}

impl CostModel {
    /// Uniform `±1/√fan_in` weights and zero biases; the last layer is all
    /// zeros so the initial prediction is the prior.
    pub fn init(arch: Architecture, cost_floor: f64, seed: u64) -> Result<Self> {
        if arch.feature_dim == 0 || arch.edge_count == 0 || arch.hidden.contains(&0) {
            return invalid("layer sizes must be positive");
        }
        if !(cost_floor > 0.0 && cost_floor.is_finite()) {
            return invalid("cost floor must be positive");
        }
        let mut rng = crate::seeded_rng(seed);
        let mut params = vec![0.0; arch.param_count()];
        let layers = arch.layers();
        for &(w, _, fin, fout) in &layers[..layers.len() - 1] {
            let s = 1.0 / (fin as f64).sqrt();
            for x in &mut params[w..w + fin * fout] {
                *x = rng.random_range(-s..s);
            }
        }
        Ok(Self { arch, cost_floor, params })
    }

    /// Per-edge costs for context `x`.
    pub fn predict_costs(&self, x: &[f64], prior: &PriorCosts) -> Result<(Vec<f64>, Cache)> {
        if x.len() != self.arch.feature_dim {
            return invalid(format!("context has {} features, model expects {}", x.len(), self.arch.feature_dim));
        }
        if prior.len() != self.arch.edge_count {
            return invalid(format!("prior has {} edges, model expects {}", prior.len(), self.arch.edge_count));
        }
        let layers = self.arch.layers();
        let mut inputs = vec![x.to_vec()];
        let mut h = x.to_vec();
        for (l, &(w, b, fin, fout)) in layers.iter().enumerate() {
            let mut out = self.params[b..b + fout].to_vec();
            for (o, acc) in out.iter_mut().enumerate() {
                let row = &self.params[w + o * fin..w + (o + 1) * fin];
                *acc += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                inputs.push(out.clone());
            }
            h = out;
        }
        let shifted: Vec<f64> = h
            .iter()
            .zip(prior.as_slice())
            .map(|(raw, &p)| raw + inverse_softplus((p - self.cost_floor).max(MIN_PRIOR_GAP)))
            .collect();
        let costs: Vec<f64> = shifted.iter().map(|&s| self.cost_floor + softplus(s)).collect();
        if let Some(e) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!("model produced cost {} for edge {e}", costs[e])));
        }
        Ok((costs, Cache { inputs, shifted }))
    }

    /// Gradient of the loss with respect to `params`, given `∂L/∂cost`.
    pub fn backward_params(&self, cache: &Cache, grad_costs: &[f64]) -> Result<Vec<f64>> {
        if grad_costs.len() != self.arch.edge_count || cache.shifted.len() != self.arch.edge_count {
            return invalid("gradient length differs from edge count");
        }
        let layers = self.arch.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut g: Vec<f64> = grad_costs.iter().zip(&cache.shifted).map(|(g, &s)| g * sigmoid(s)).collect();
        for (l, &(w, b, fin, fout)) in layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let mut g_in = vec![0.0; fin];
            for o in 0..fout {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                grad[b + o] += go;
                let row = w + o * fin;
                for i in 0..fin {
                    grad[row + i] += go * input[i];
                    g_in[i] += go * self.params[row + i];
                }
            }
            if l > 0 {
                // ReLU mask of the previous layer's output.
                for (gi, &a) in g_in.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        Ok(grad)
    }

    /// Writes magic, a length-prefixed JSON header and the raw parameters.
    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f, step)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write, step: u64) -> Result<()> {
        let header = CheckpointHeader {
            architecture: self.arch.clone(),
            cost_floor: self.cost_floor,
            step,
            param_count: self.params.len(),
            parameterization: PARAMETERIZATION.to_string(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`CostModel::save`]; returns the model and its step.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn read_from(r: &mut impl Read) -> Result<(Self, u64)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(Error::Format("checkpoint header too large".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        if header.parameterization != PARAMETERIZATION {
            return Err(Error::Format(format!("unknown parameterization {:?}", header.parameterization)));
        }
        if header.param_count != header.architecture.param_count() {
            return Err(Error::Format("parameter count does not match architecture".into()));
        }
        let mut buf = vec![0u8; header.param_count * 8];
        r.read_exact(&mut buf)?;
        let params = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok((Self { arch: header.architecture, cost_floor: header.cost_floor, params }, header.step))
    }
}

const PARAMETERIZATION: &str = "softplus-residual";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    cost_floor: f64,
    step: u64,
    param_count: usize,
    parameterization: String,
}
