//! Multi-layer LSTM with per-layer recurrent projection (LSTMP), plus a
//! per-frame linear map on top of the last layer.
//!
//! Gate order in the stacked gate matrix is input, forget, cell, output.
//! The recurrent input of each cell is the previous frame's projected
//! output, and the projected output is also what the layer emits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Value};
use crate::error::ConfigError;
use crate::features::FeatureMatrix;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub cell_dim: usize,
    pub projection_dim: usize,
    /// Projection dim of the final layer; doubled for divided-layer attention.
    pub last_projection_dim: usize,
    /// Output dim of the per-frame linear map applied after the last layer.
    pub final_linear_dim: usize,
}

impl NetworkConfig {
    /// The 3x(128,64) stack with 40-dim input and a 64-dim linear layer.
    pub fn standard(divided: bool) -> Self {
        let last = if divided { 128 } else { 64 };
        NetworkConfig {
            input_dim: 40,
            num_layers: 3,
            cell_dim: 128,
            projection_dim: 64,
            last_projection_dim: last,
            final_linear_dim: last,
        }
    }

    /// Small geometry for gradient checking (T=8, m=4 scale). The last dim
    /// is even, so the same geometry serves divided-layer checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            input_dim: 3,
            num_layers: 2,
            cell_dim: 6,
            projection_dim: 4,
            last_projection_dim: 4,
            final_linear_dim: 4,
        }
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.projection_dim
        }
    }

    pub fn layer_projection_dim(&self, layer: usize) -> usize {
        if layer + 1 == self.num_layers {
            self.last_projection_dim
        } else {
            self.projection_dim
        }
    }

    /// Per-frame output dimension seen by the attention layer.
    pub fn output_dim(&self) -> usize {
        self.final_linear_dim
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_layers == 0 {
            return Err(ConfigError::Invalid("num-layers must be >= 1".into()));
        }
        if self.projection_dim > self.cell_dim || self.last_projection_dim > self.cell_dim {
            return Err(ConfigError::Invalid("projection dim must be <= cell dim".into()));
        }
        if self.input_dim == 0 || self.cell_dim == 0 || self.final_linear_dim == 0 {
            return Err(ConfigError::Invalid("dims must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in 0..self.num_layers {
            let input = self.layer_input_dim(l);
            let proj = self.layer_projection_dim(l);
            n += 4 * self.cell_dim * (input + proj); // stacked gates
            n += 4 * self.cell_dim; // gate biases
            n += proj * self.cell_dim; // projection
        }
        n += self.final_linear_dim * self.last_projection_dim + self.final_linear_dim;
        n
    }
}

#[derive(Clone, Debug)]
pub struct LstmpLayerParams {
    /// Stacked gate matrix, 4*cell x (input + projection).
    pub gates: ParamId,
    /// Stacked gate bias, 4*cell.
    pub bias: ParamId,
    /// Projection matrix, projection x cell.
    pub projection: ParamId,
}

#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub layers: Vec<LstmpLayerParams>,
    pub final_weight: ParamId,
    pub final_bias: ParamId,
}

fn uniform_value(rng: &mut ChaCha8Rng, shape: crate::autodiff::Shape) -> Value {
    let data = (0..shape.len()).map(|_| rng.gen_range(-0.2..0.2)).collect();
    Value { shape, data }
}

/// Initialize all network parameters: uniform in [-0.2, 0.2), forget-gate
/// bias 1.0. Deterministic per seed.
pub fn init_params(config: &NetworkConfig, store: &mut ParamStore, seed: u64) -> NetworkParams {
    use crate::autodiff::Shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let input = config.layer_input_dim(l);
        let proj = config.layer_projection_dim(l);
        let gates = store.add(
            format!("lstm{l}.gates"),
            uniform_value(&mut rng, Shape::Matrix(4 * config.cell_dim, input + proj)),
        );
        let mut bias_val = uniform_value(&mut rng, Shape::Vector(4 * config.cell_dim));
        for i in config.cell_dim..2 * config.cell_dim {
            bias_val.data[i] = 1.0;
        }
        let bias = store.add(format!("lstm{l}.bias"), bias_val);
        let projection = store.add(
            format!("lstm{l}.projection"),
            uniform_value(&mut rng, Shape::Matrix(proj, config.cell_dim)),
        );
        layers.push(LstmpLayerParams { gates, bias, projection });
    }
    let final_weight = store.add(
        "final.weight",
        uniform_value(
            &mut rng,
            Shape::Matrix(config.final_linear_dim, config.last_projection_dim),
        ),
    );
    let final_bias =
        store.add("final.bias", uniform_value(&mut rng, Shape::Vector(config.final_linear_dim)));
    NetworkParams { layers, final_weight, final_bias }
}

/// Per-layer, per-frame encoder outputs on the tape.
pub struct SequenceOutputs {
    /// Projected output of every LSTM layer, per frame.
    pub layer_outputs: Vec<Vec<NodeId>>,
    /// Last-layer outputs after the per-frame linear map.
    pub frame_outputs: Vec<NodeId>,
}

impl SequenceOutputs {
    pub fn num_frames(&self) -> usize {
        self.frame_outputs.len()
    }

    /// Second-to-last layer outputs (cross-layer attention input).
    pub fn intermediate(&self) -> &[NodeId] {
        assert!(self.layer_outputs.len() >= 2, "cross-layer needs >= 2 layers");
        &self.layer_outputs[self.layer_outputs.len() - 2]
    }
}

/// Run the LSTMP stack over one utterance, building the graph on `tape`.
/// `bound` maps ParamIds to this tape's nodes (`ParamStore::bind`).
pub fn lstmp_forward(
    tape: &mut Tape,
    bound: &[NodeId],
    config: &NetworkConfig,
    net: &NetworkParams,
    features: &FeatureMatrix,
) -> SequenceOutputs {
    assert_eq!(
        features.dim, config.input_dim,
        "feature dim {} does not match network input dim {}",
        features.dim, config.input_dim
    );
    let t_frames = features.num_frames;
    let cell = config.cell_dim;

    // Frame inputs for layer 0.
    let mut inputs: Vec<NodeId> = (0..t_frames)
        .map(|t| tape.constant(Value::vector(features.frame(t).to_vec())))
        .collect();

    let mut layer_outputs = Vec::with_capacity(config.num_layers);
    for (l, layer) in net.layers.iter().enumerate() {
        let proj_dim = config.layer_projection_dim(l);
        let w = bound[layer.gates.0];
        let b = bound[layer.bias.0];
        let p = bound[layer.projection.0];
        let mut c = tape.constant(Value::vector(vec![0.0; cell]));
        let mut r = tape.constant(Value::vector(vec![0.0; proj_dim]));
        let mut outputs = Vec::with_capacity(t_frames);
        for &x in &inputs {
            let xr = tape.concat(&[x, r]);
            let pre = tape.matvec(w, xr);
            let z = tape.add(pre, b);
            let zi = tape.slice(z, 0, cell);
            let zf = tape.slice(z, cell, cell);
            let zg = tape.slice(z, 2 * cell, cell);
            let zo = tape.slice(z, 3 * cell, cell);
            let i = tape.sigmoid(zi);
            let f = tape.sigmoid(zf);
            let g = tape.tanh(zg);
            let o = tape.sigmoid(zo);
            let fc = tape.mul(f, c);
            let ig = tape.mul(i, g);
            c = tape.add(fc, ig);
            let ct = tape.tanh(c);
            let m = tape.mul(o, ct);
            r = tape.matvec(p, m);
            outputs.push(r);
        }
        inputs = outputs.clone();
        layer_outputs.push(outputs);
    }

    let fw = bound[net.final_weight.0];
    let fb = bound[net.final_bias.0];
    let frame_outputs = layer_outputs
        .last()
        .unwrap()
        .iter()
        .map(|&h| {
            let y = tape.matvec(fw, h);
            tape.add(y, fb)
        })
        .collect();

    SequenceOutputs { layer_outputs, frame_outputs }
}
