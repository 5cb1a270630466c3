use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Standardizer;
use crate::error::{ensure, Error, Result};

/// One affine layer `z = a W + b` over a batch of row vectors.
///
/// `w` is `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: DMatrix::zeros(fan_in, fan_out),
            b: DVector::zeros(fan_out),
        }
    }

    fn affine(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = a * &self.w;
        for mut row in z.row_iter_mut() {
            row += self.b.transpose();
        }
        z
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Fully connected network with ReLU hidden layers and a linear output,
/// wrapped in input and output standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub input_std: Standardizer,
    pub output_std: Standardizer,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input to every layer; `inputs[0]` is the standardized batch.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    /// Smallest `|z|` over every hidden pre-activation.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

/// Gradients laid out like [`MlpModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl MlpModel {
    /// He-uniform initialization: weights drawn from `U(−√(6/fan_in), √(6/fan_in))`,
    /// biases zero.
    pub fn init(layer_dims: &[usize], input_std: Standardizer, output_std: Standardizer, seed: u64) -> Result<Self> {
        ensure!(
            layer_dims.len() >= 2 && layer_dims.iter().all(|&d| d > 0),
            Error::Config(format!("layer sizes {layer_dims:?} need at least two positive entries"))
        );
        ensure!(
            input_std.dim() == layer_dims[0] && output_std.dim() == *layer_dims.last().unwrap(),
            Error::Contract("standardizer widths do not match the layer sizes".into())
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                // row-major draw order so the stream does not depend on storage
                for i in 0..fan_in {
                    for o in 0..fan_out {
                        layer.w[(i, o)] = rng.random_range(-limit..limit);
                    }
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            layers,
            input_std,
            output_std,
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.nrows()];
        dims.extend(self.layers.iter().map(|l| l.w.ncols()));
        dims
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    fn check_width(&self, batch: &DMatrix<f64>) -> Result<()> {
        ensure!(
            batch.ncols() == self.d_in(),
            Error::Contract(format!("network expects {} inputs, got {}", self.d_in(), batch.ncols()))
        );
        Ok(())
    }

    /// Physical inputs to physical outputs.
    pub fn forward(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(batch)?;
        let z = self.input_std.apply(batch)?;
        self.output_std.invert(&self.forward_standardized(&z))
    }

    /// Standardized inputs to standardized outputs.
    pub fn forward_standardized(&self, batch: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut a = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            a = layer.affine(&a);
            if k < last {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// Forward pass that keeps what [`MlpModel::backward`] needs.
    pub fn forward_cached(&self, batch: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        };
        let mut a = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            cache.inputs.push(a);
            if k < last {
                a = z.map(|v| v.max(0.0));
                cache.pre.push(z);
            } else {
                a = z;
            }
        }
        (a, cache)
    }

    /// Parameter gradients given `∂L/∂output` in standardized units.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> Gradients {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for k in (0..self.layers.len()).rev() {
            let a = &cache.inputs[k];
            let w = a.transpose() * &delta;
            let b = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { w, b });
            if k > 0 {
                let mut prev = &delta * self.layers[k].w.transpose();
                // ReLU'(z) = 1 for z > 0, 0 otherwise
                prev.zip_apply(&cache.pre[k - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Every parameter, layer by layer, weights (column-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    /// Mutable views of the parameter blocks in [`MlpModel::params`] order.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(l.b.as_slice());
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    /// Per layer, `fan_out × fan_in` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    input_standardizer: Standardizer,
    output_standardizer: Standardizer,
    fingerprint: String,
}

const MLP_FORMAT: &str = "ppf-lab-mlp";

impl MlpModel {
    pub fn to_json(&self, fingerprint: &str) -> String {
        let file = MlpFile {
            format: MLP_FORMAT.into(),
            version: 1,
            layer_dims: self.layer_dims(),
            // W is fan_in × fan_out column-major, i.e. fan_out × fan_in row-major
            weights: self.layers.iter().map(|l| l.w.as_slice().to_vec()).collect(),
            biases: self.layers.iter().map(|l| l.b.as_slice().to_vec()).collect(),
            input_standardizer: self.input_std.clone(),
            output_standardizer: self.output_std.clone(),
            fingerprint: fingerprint.into(),
        };
        serde_json::to_string(&file).expect("plain data serializes")
    }

    /// Parse a model written by [`MlpModel::to_json`]; returns the model and
    /// the stored fingerprint.
    pub fn from_json(text: &str) -> std::result::Result<(Self, String), String> {
        let file: MlpFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != MLP_FORMAT || file.version != 1 {
            return Err(format!("unsupported model container {} v{}", file.format, file.version));
        }
        let dims = &file.layer_dims;
        if dims.len() < 2 || file.weights.len() != dims.len() - 1 || file.biases.len() != dims.len() - 1 {
            return Err("layer count does not match the stated sizes".into());
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if file.weights[k].len() != fan_in * fan_out || file.biases[k].len() != fan_out {
                return Err(format!("layer {k} has the wrong number of parameters"));
            }
            layers.push(Dense {
                w: DMatrix::from_column_slice(fan_in, fan_out, &file.weights[k]),
                b: DVector::from_column_slice(&file.biases[k]),
            });
        }
        if file.input_standardizer.dim() != dims[0] || file.output_standardizer.dim() != dims[dims.len() - 1] {
            return Err("standardizer widths do not match the layer sizes".into());
        }
        Ok((
            MlpModel {
                layers,
                input_std: file.input_standardizer,
                output_std: file.output_standardizer,
            },
            file.fingerprint,
        ))
    }
}
