//! Hand-written fallback controllers that keep the benchmark pipelines
//! runnable when no trained network weights are supplied.

use serde::{Deserialize, Serialize};

/// LQR gain for the linearized cart-pole with `Q = diag(1, 1, 10, 1)`, `R = 1`;
/// the control is `u = -K x`.
pub const CARTPOLE_LQR_GAIN: [f64; 4] = [-1.0, -11.690_041_85, -36.895_259_84, -7.517_845_09];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScriptedController {
    /// `u = -K x` on `(x, ẋ, θ, θ̇)`.
    CartpoleLqr,
    /// `u = ±magnitude` by the sign of `θ + damping·ω`.
    CartpoleBangBang { magnitude: f64, damping: f64 },
    /// Tracks `x₃ → −coupling·x₂` with a PD law on `(x₃, x₄)`, which drains
    /// the energy of the `(x₁, x₂)` oscillator through the `sin x₃` coupling.
    PendulumDamping { coupling: f64, kp: f64, kd: f64 },
}

impl ScriptedController {
    pub fn cartpole_bang_bang() -> Self {
        ScriptedController::CartpoleBangBang {
            magnitude: 10.0,
            damping: 0.3,
        }
    }

    pub fn pendulum_damping() -> Self {
        ScriptedController::PendulumDamping {
            coupling: 1.0,
            kp: 4.0,
            kd: 4.0,
        }
    }

    pub fn state_dim(&self) -> usize {
        4
    }

    pub fn input_dim(&self) -> usize {
        1
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let u = match *self {
            ScriptedController::CartpoleLqr => {
                -CARTPOLE_LQR_GAIN.iter().zip(x).map(|(k, v)| k * v).sum::<f64>()
            }
            ScriptedController::CartpoleBangBang { magnitude, damping } => {
                if x[2] + damping * x[3] >= 0.0 {
                    magnitude
                } else {
                    -magnitude
                }
            }
            ScriptedController::PendulumDamping { coupling, kp, kd } => {
                let reference = -coupling * x[1];
                -kp * (x[2] - reference) - kd * x[3]
            }
        };
        vec![u]
    }
}
