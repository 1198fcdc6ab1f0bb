use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::layers::LayerSpec;
use super::tensor::{Shape3, Tensor4};
use crate::error::{Error, Result};
use crate::rng::Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// A feed-forward chain of layers with all parameters in one flat buffer.
#[derive(Debug)]
pub struct Network {
    name: String,
    input_shape: Shape3,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape3>,
    offsets: Vec<usize>,
    params: Vec<f32>,
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

/// Activations recorded by [`Network::forward`]: the input of every layer
/// followed by the network output.
#[derive(Debug, Clone)]
pub struct Cache {
    network_id: u64,
    version: u64,
    activations: Vec<Tensor4>,
}

impl Cache {
    pub fn output(&self) -> &Tensor4 {
        self.activations
            .last()
            .expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Tensor4 {
        &self.activations[0]
    }
}

impl Network {
    /// Validates the layer chain and allocates zeroed parameters.
    pub fn new(
        name: impl Into<String>,
        input_shape: Shape3,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let mut shapes = vec![input_shape];
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes[i])
                .map_err(|message| Error::Layer { layer: i, message })?;
            shapes.push(next);
            offsets.push(total);
            total += layer.param_count();
        }
        offsets.push(total);
        Ok(Network {
            name: name.into(),
            input_shape,
            layers,
            shapes,
            offsets,
            params: vec![0.0; total],
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(&mut self, rng: &mut Rng) {
        for (i, layer) in self.layers.iter().enumerate() {
            let start = self.offsets[i];
            let weights = layer.weight_count();
            if weights == 0 {
                continue;
            }
            let scale = 1.0 / (layer.fan_in() as f64).sqrt();
            for w in &mut self.params[start..start + weights] {
                let z: f64 = rng.sample(StandardNormal);
                *w = (z * scale) as f32;
            }
            self.params[start + weights..self.offsets[i + 1]].fill(0.0);
        }
        self.version += 1;
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape3 {
        *self.shapes.last().expect("nonempty")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    /// Parameters of layer `i` (weights then biases).
    pub fn layer_params(&self, i: usize) -> &[f32] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f32] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{}: expected {} parameters, got {}",
                self.name,
                self.params.len(),
                values.len()
            )));
        }
        self.params_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::Layer {
                layer: 0,
                message: format!(
                    "{}: expected input {}, got {}",
                    self.name,
                    self.input_shape,
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    /// Runs the network and keeps every activation for [`Network::backward`].
    pub fn forward(&self, x: &Tensor4) -> Result<Cache> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(self.layer_params(i), &activations[i], self.shapes[i + 1]);
            activations.push(y);
        }
        Ok(Cache {
            network_id: self.id,
            version: self.version,
            activations,
        })
    }

    /// Forward pass without retaining intermediate activations.
    pub fn predict(&self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(self.layer_params(i), &cur, self.shapes[i + 1]);
        }
        Ok(cur)
    }

    /// Gradients of a scalar loss with respect to the parameters (flat, in
    /// parameter order) and the network input, given `dy = ∂loss/∂output`.
    pub fn backward(&self, cache: &Cache, dy: &Tensor4) -> Result<(Vec<f32>, Tensor4)> {
        if cache.network_id != self.id || cache.version != self.version {
            return Err(Error::StaleCache(format!(
                "{}: cache from network {} v{}, current is {} v{}",
                self.name, cache.network_id, cache.version, self.id, self.version
            )));
        }
        let out = cache.output();
        if dy.shape() != out.shape() || dy.batch() != out.batch() {
            return Err(Error::Shape(format!(
                "{}: output gradient {}x{} does not match output {}x{}",
                self.name,
                dy.batch(),
                dy.shape(),
                out.batch(),
                out.shape()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let range = self.offsets[i]..self.offsets[i + 1];
            g = layer.backward(
                &self.params[range.clone()],
                &cache.activations[i],
                &cache.activations[i + 1],
                &g,
                &mut grads[range],
            );
        }
        Ok((grads, g))
    }
}
