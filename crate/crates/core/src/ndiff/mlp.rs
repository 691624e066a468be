use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::init::GaussianInit;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

/// Feed-forward network: ReLU on hidden layers, `output` on the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub output: OutputActivation,
}

impl MlpParams {
    /// Register the weights of an `input → hidden… → out_dim` network.
    /// Weights are Gaussian, biases start at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        out_dim: usize,
        output: OutputActivation,
        init: &mut GaussianInit,
    ) -> Result<Self> {
        if input == 0 || out_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!("{name}: layer widths must be positive")));
        }
        let mut layers = Vec::new();
        let mut prev = input;
        for (i, &width) in hidden.iter().chain(std::iter::once(&out_dim)).enumerate() {
            let weight = store.insert(format!("{name}.{i}.weight"), init.tensor(&[width, prev]))?;
            let bias = store.insert(format!("{name}.{i}.bias"), Tensor::zeros(&[width]))?;
            layers.push(DenseLayer {
                weight,
                bias,
                input: prev,
                output: width,
            });
            prev = width;
        }
        Ok(Self { layers, output })
    }

    /// Resolve an existing network's parameters by name.
    pub fn bind(store: &ParamStore, name: &str, depth: usize, output: OutputActivation) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 0..depth {
            let find = |suffix: &str| {
                store
                    .id(&format!("{name}.{i}.{suffix}"))
                    .ok_or_else(|| Error::Config(format!("missing parameter {name}.{i}.{suffix}")))
            };
            let (weight, bias) = (find("weight")?, find("bias")?);
            let w = store.get(weight);
            layers.push(DenseLayer {
                weight,
                bias,
                input: w.cols(),
                output: w.rows(),
            });
        }
        let mlp = Self { layers, output };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].output != pair[1].input {
                return Err(Error::shape(
                    "mlp",
                    format!("layer widths {} and {} do not chain", pair[0].output, pair[1].input),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    /// Apply the network to every row of `x`.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            h = g.affine(h, w, Some(b))?;
            if i < last {
                h = g.relu(h);
            } else if self.output == OutputActivation::Sigmoid {
                h = g.sigmoid(h);
            }
        }
        Ok(h)
    }
}

/// Evaluate `params` on the rows of `x` outside of any training graph.
pub fn mlp_forward(store: &ParamStore, params: &MlpParams, x: &Tensor) -> Result<Tensor> {
    if x.cols() != params.input_dim() {
        return Err(Error::shape(
            "mlp_forward",
            format!("input width {} vs {}", x.cols(), params.input_dim()),
        ));
    }
    let mut g = Graph::new(store);
    let xin = g.constant(x.clone().reshape(&[x.rows(), x.cols()])?);
    let out = params.forward(&mut g, xin)?;
    Ok(g.value(out).clone())
}
