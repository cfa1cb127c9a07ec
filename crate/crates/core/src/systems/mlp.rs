//! Feed-forward ReLU controllers loaded from JSON weight files.
//!
//! ```json
//! {
//!   "activation": "relu",
//!   "layers": [
//!     {"rows": 2, "cols": 4, "weights": [..8 values, row-major..], "bias": [0.0, 0.0]},
//!     {"rows": 1, "cols": 2, "weights": [1.0, -1.0], "bias": [0.0]}
//!   ],
//!   "output_map": {"kind": "sign_scale", "magnitude": 10.0}
//! }
//! ```
//!
//! Layer `i` maps `cols` inputs to `rows` outputs. Every layer but the last is
//! followed by the rectifier; the output map is applied to the last layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn apply(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(r, b)| {
            let w = &self.weights[r * self.cols..(r + 1) * self.cols];
            b + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMap {
    #[default]
    Identity,
    /// `+magnitude` when the raw output is `≥ 0`, else `−magnitude`.
    SignScale { magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpController {
    #[serde(default)]
    pub activation: Activation,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub output_map: OutputMap,
}

impl MlpController {
    pub fn new(layers: Vec<Layer>, output_map: OutputMap) -> Result<Self> {
        let c = Self {
            activation: Activation::Relu,
            layers,
            output_map,
        };
        c.validate()?;
        Ok(c)
    }

    /// Checks shapes, chaining and finiteness.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::Parse {
            what: "mlp weights".into(),
            message: msg,
        };
        if self.layers.is_empty() {
            return Err(bad("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(bad(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.rows * l.cols {
                return Err(bad(format!(
                    "layer {i}: {} weights for a {}x{} matrix",
                    l.weights.len(),
                    l.rows,
                    l.cols
                )));
            }
            if l.bias.len() != l.rows {
                return Err(bad(format!("layer {i}: bias length {} != rows {}", l.bias.len(), l.rows)));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(bad(format!("layer {i} has non-finite parameters")));
            }
            if i > 0 && self.layers[i - 1].rows != l.cols {
                return Err(bad(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.cols,
                    i - 1,
                    self.layers[i - 1].rows
                )));
            }
        }
        if let OutputMap::SignScale { magnitude } = self.output_map {
            if !(magnitude.is_finite() && magnitude >= 0.0) {
                return Err(bad(format!("sign_scale magnitude must be finite and >= 0, got {magnitude}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: MlpController = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "mlp weights".into(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller serializes")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    /// Forward pass.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut z = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&z, &mut next);
            if i < last {
                match self.activation {
                    Activation::Relu => next.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            }
            std::mem::swap(&mut z, &mut next);
        }
        if let OutputMap::SignScale { magnitude } = self.output_map {
            z.iter_mut()
                .for_each(|v| *v = if *v >= 0.0 { magnitude } else { -magnitude });
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> Layer {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Layer {
            rows: n,
            cols: n,
            weights: w,
            bias: vec![0.0; n],
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let l = Layer {
            rows: 1,
            cols: 3,
            weights: vec![0.0; 3],
            bias: vec![0.0],
        };
        let c = MlpController::new(vec![l], OutputMap::Identity).unwrap();
        assert_eq!(c.eval(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn output_layer_has_no_rectifier() {
        let c = MlpController::new(vec![identity_layer(2)], OutputMap::Identity).unwrap();
        assert_eq!(c.eval(&[-1.0, 2.0]).unwrap(), vec![-1.0, 2.0]);
        let c = MlpController::new(vec![identity_layer(2), identity_layer(2)], OutputMap::Identity).unwrap();
        assert_eq!(c.eval(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn sign_scale() {
        let l = Layer {
            rows: 1,
            cols: 1,
            weights: vec![1.0],
            bias: vec![0.0],
        };
        let c = MlpController::new(vec![l], OutputMap::SignScale { magnitude: 10.0 }).unwrap();
        assert_eq!(c.eval(&[-0.3]).unwrap(), vec![-10.0]);
        assert_eq!(c.eval(&[0.0]).unwrap(), vec![10.0]);
    }

    #[test]
    fn chain_mismatch_rejected() {
        let a = identity_layer(2);
        let b = identity_layer(3);
        assert!(MlpController::new(vec![a, b], OutputMap::Identity).is_err());
        assert!(MlpController::new(vec![], OutputMap::Identity).is_err());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{
            "activation": "relu",
            "layers": [
                {"rows": 2, "cols": 1, "weights": [1.0, -1.0], "bias": [0.0, 0.0]},
                {"rows": 1, "cols": 2, "weights": [1.0, -1.0], "bias": [0.5]}
            ],
            "output_map": {"kind": "sign_scale", "magnitude": 10.0}
        }"#;
        let c = MlpController::from_json(text).unwrap();
        assert_eq!(c.input_dim(), 1);
        assert_eq!(c.eval(&[-3.0]).unwrap(), vec![-10.0]);
        assert_eq!(MlpController::from_json(&c.to_json()).unwrap(), c);
        assert!(MlpController::from_json(r#"{"layers": [{"rows": 1, "cols": 2, "weights": [1.0], "bias": [0.0]}]}"#).is_err());
    }
}
