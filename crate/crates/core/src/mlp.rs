//! Dense layers and multi-layer perceptrons with a JSON weight format:
//!
//! ```json
//! {"layers": [{"rows": 4, "cols": 3, "weight": [...], "bias": [...], "act": "relu"}]}
//! ```
//!
//! `rows` is the output width, `cols` the input width, and `weight` is
//! row-major `rows x cols`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, NnError};

/// Range of the default seeded uniform initialisation.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub act: Activation,
}

impl DenseLayer {
    pub fn new(
        rows: usize,
        cols: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        act: Activation,
    ) -> Result<Self, NnError> {
        let layer = Self {
            rows,
            cols,
            weight,
            bias,
            act,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Uniform `(-INIT_RANGE, INIT_RANGE)` weights and biases.
    pub fn seeded(rows: usize, cols: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut sample = |n: usize| {
            (0..n)
                .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
                .collect::<Vec<_>>()
        };
        let weight = sample(rows * cols);
        let bias = sample(rows);
        Self {
            rows,
            cols,
            weight,
            bias,
            act,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(NnError::InvalidWeights("layer with zero width".into()));
        }
        if self.weight.len() != self.rows * self.cols {
            return Err(NnError::InvalidWeights(format!(
                "weight has {} values for {}x{}",
                self.weight.len(),
                self.rows,
                self.cols
            )));
        }
        if self.bias.len() != self.rows {
            return Err(NnError::InvalidWeights(format!(
                "bias has {} values for {} outputs",
                self.bias.len(),
                self.rows
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(NnError::InvalidWeights("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols() != self.cols {
            return Err(NnError::WidthMismatch {
                expected: self.cols,
                got: x.cols(),
            });
        }
        let mut y = x.affine(&self.weight, &self.bias);
        if self.act == Activation::Relu {
            y.map_inplace(|v| v.max(0.0));
        }
        Ok(y)
    }

    /// Applies the layer to one vector.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.data().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRecord")]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

#[derive(Deserialize)]
struct MlpRecord {
    layers: Vec<DenseLayer>,
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = NnError;

    fn try_from(r: MlpRecord) -> Result<Self, NnError> {
        Mlp::new(r.layers)
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidWeights(
                "an MLP needs at least one layer".into(),
            ));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(NnError::InvalidWeights(format!(
                    "layer widths do not chain: {} outputs into {} inputs",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `widths = [in, h1, ..., out]`; ReLU after every layer but the last.
    pub fn seeded(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 < n {
                    Activation::Relu
                } else {
                    Activation::None
                };
                DenseLayer::seeded(widths[i + 1], widths[i], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn seeded_from(widths: &[usize], seed: u64) -> Self {
        Self::seeded(widths, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// A single linear layer without activation.
    pub fn linear(layer: DenseLayer) -> Result<Self, NnError> {
        Self::new(vec![layer])
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NnError> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.data().to_vec())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }
}
