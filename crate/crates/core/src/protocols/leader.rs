use serde::{Deserialize, Serialize};

/// One channel of an exponential-plus-sinusoid profile:
/// `offset + exp_amp·e^{−exp_rate·t} + sin_amp·sin(sin_freq·t)`, the last
/// term taken in absolute value when `rectified`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpSinChannel {
    pub offset: f64,
    pub exp_amp: f64,
    pub exp_rate: f64,
    pub sin_amp: f64,
    pub sin_freq: f64,
    pub rectified: bool,
}

impl ExpSinChannel {
    pub fn eval(&self, t: f64) -> f64 {
        let s = self.sin_amp * (self.sin_freq * t).sin();
        self.offset
            + self.exp_amp * (-self.exp_rate * t).exp()
            + if self.rectified { s.abs() } else { s }
    }

    /// Sup over `t ≥ 0` of the absolute value, by the triangle inequality.
    fn bound(&self) -> f64 {
        if self.exp_rate < 0.0 && self.exp_amp != 0.0 {
            return f64::INFINITY;
        }
        self.offset.abs() + self.exp_amp.abs() + self.sin_amp.abs()
    }
}

/// The leader's input `u₀(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderInput {
    Zero,
    Constant { value: Vec<f64> },
    ExpSin { channels: Vec<ExpSinChannel> },
}

impl Default for LeaderInput {
    fn default() -> Self {
        LeaderInput::Zero
    }
}

impl LeaderInput {
    /// Channel count, `None` for the zero input (fits any `p`).
    pub fn dim(&self) -> Option<usize> {
        match self {
            LeaderInput::Zero => None,
            LeaderInput::Constant { value } => Some(value.len()),
            LeaderInput::ExpSin { channels } => Some(channels.len()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LeaderInput::Zero => true,
            LeaderInput::Constant { value } => value.iter().all(|&v| v == 0.0),
            LeaderInput::ExpSin { channels } => channels.iter().all(|c| c.bound() == 0.0),
        }
    }

    /// Writes `u₀(t)` into `out` (length `p`).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            LeaderInput::Zero => out.fill(0.0),
            LeaderInput::Constant { value } => out.copy_from_slice(value),
            LeaderInput::ExpSin { channels } => {
                for (o, c) in out.iter_mut().zip(channels) {
                    *o = c.eval(t);
                }
            }
        }
    }

    pub fn eval(&self, t: f64, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        self.eval_into(t, &mut out);
        out
    }

    /// Certified `ε ≥ sup_t ‖u₀(t)‖`.
    pub fn certified_bound(&self) -> f64 {
        match self {
            LeaderInput::Zero => 0.0,
            LeaderInput::Constant { value } => value.iter().map(|v| v * v).sum::<f64>().sqrt(),
            LeaderInput::ExpSin { channels } => channels.iter().map(|c| c.bound().powi(2)).sum::<f64>().sqrt(),
        }
    }

    /// Largest `‖u₀(t)‖` on a uniform grid over `[0, t_final]`.
    pub fn sampled_sup(&self, t_final: f64, samples: usize, p: usize) -> f64 {
        let mut out = vec![0.0; p];
        (0..=samples)
            .map(|k| {
                self.eval_into(t_final * k as f64 / samples as f64, &mut out);
                out.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }
}
