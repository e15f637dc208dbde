//! Parameterized execution of a [`ModelGraph`] on a [`Tape`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Activation, GraphPlan, LayerSpec, ModelGraph};
use crate::error::{shape_err, Error, Result};
use crate::nn::layers::{BatchNorm, Conv3x3, Linear, TConv2x2, TransformerDecoderLayer, TransformerEncoderLayer};
use crate::nn::{ParamStore, Scalar, Tape, Var};

#[derive(Debug, Clone)]
enum Bound {
    Plain,
    Conv(Conv3x3),
    TConv(TConv2x2),
    BatchNorm(BatchNorm),
    Linear(Linear),
    Encoder(TransformerEncoderLayer),
    Decoder(TransformerDecoderLayer),
}

/// A model graph with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    graph: ModelGraph,
    plan: GraphPlan,
    params: ParamStore<T>,
    layers: Vec<Bound>,
    adapters: Vec<Option<Linear>>,
    seed: u64,
}

impl<T: Scalar> Model<T> {
    /// Allocates parameters in node order, then skip adapters in edge order.
    pub fn new(graph: ModelGraph, seed: u64) -> Result<Self> {
        let plan = graph.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(graph.nodes.len());
        for node in &graph.nodes {
            let name = node.name.as_str();
            let bound = match &node.layer {
                LayerSpec::Input
                | LayerSpec::MaxPool2x2
                | LayerSpec::BilinearResize { .. }
                | LayerSpec::Reshape { .. } => Bound::Plain,
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    ..
                } => Bound::Conv(Conv3x3::init(&mut params, name, *in_channels, *out_channels, &mut rng)),
                LayerSpec::BatchNorm { channels, .. } => {
                    Bound::BatchNorm(BatchNorm::init(&mut params, name, *channels))
                }
                LayerSpec::TransposedConv2x2 {
                    in_channels,
                    out_channels,
                    target,
                    ..
                } => Bound::TConv(TConv2x2::init(
                    &mut params,
                    name,
                    *in_channels,
                    *out_channels,
                    target.map(|[h, w]| (h, w)),
                    &mut rng,
                )),
                LayerSpec::Linear {
                    in_features,
                    out_features,
                    ..
                } => Bound::Linear(Linear::init(
                    &mut params,
                    name,
                    *in_features,
                    *out_features,
                    true,
                    &mut rng,
                )),
                LayerSpec::TransformerEncoder(s) => Bound::Encoder(TransformerEncoderLayer::init(
                    &mut params,
                    name,
                    s.d_model,
                    s.heads,
                    s.ff_dim,
                    s.dropout,
                    &mut rng,
                )?),
                LayerSpec::TransformerDecoder { spec: s, .. } => Bound::Decoder(TransformerDecoderLayer::init(
                    &mut params,
                    name,
                    s.d_model,
                    s.heads,
                    s.ff_dim,
                    s.dropout,
                    &mut rng,
                )?),
            };
            layers.push(bound);
        }
        let adapters = graph
            .skips
            .iter()
            .map(|s| {
                s.adapter.map(|[a, b]| {
                    let name = format!("skip.{}.{}", s.source, s.target);
                    Linear::init(&mut params, &name, a, b, true, &mut rng)
                })
            })
            .collect();
        Ok(Self {
            graph,
            plan,
            params,
            layers,
            adapters,
            seed,
        })
    }

    /// Rebinds `graph` to existing parameters, checking names, kinds and shapes.
    pub fn with_params(graph: ModelGraph, params: ParamStore<T>, seed: u64) -> Result<Self> {
        let mut model = Self::new(graph, seed)?;
        let expected = model.params.entries();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "graph has {} tensors, parameters have {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(params.entries()) {
            if e.name != p.name || e.kind != p.kind || e.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match graph tensor `{}` {:?}",
                    p.name,
                    p.value.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_hw(&self) -> [usize; 2] {
        self.graph.input_hw
    }

    /// Per-example output shape of every node.
    pub fn node_shapes(&self) -> &[Vec<usize>] {
        &self.plan.shapes
    }

    pub fn node_shape(&self, name: &str) -> Option<&[usize]> {
        self.graph.index_of(name).map(|i| self.plan.shapes[i].as_slice())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            graph: self.graph.clone(),
            plan: self.plan.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
            adapters: self.adapters.clone(),
            seed: self.seed,
        }
    }

    /// Runs the graph on `x` (`[N, 1, H, W]`) and returns every node's output.
    pub fn forward(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Vec<Var>> {
        self.forward_with_skip_gain(tape, x, None)
    }

    /// As [`Model::forward`], with every skip contribution multiplied by `gain`.
    pub fn forward_with_skip_gain(&self, tape: &mut Tape<'_, T>, x: Var, gain: Option<T>) -> Result<Vec<Var>> {
        let [h, w] = self.graph.input_hw;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [1, h, w] {
            return Err(shape_err!("model expects [N, 1, {h}, {w}] input, got {xs:?}"));
        }
        let n = xs[0];
        let mut outs: Vec<Var> = Vec::with_capacity(self.graph.nodes.len());
        for (i, node) in self.graph.nodes.iter().enumerate() {
            let mut v = match self.plan.inputs[i] {
                Some(j) => outs[j],
                None => x,
            };
            for &(k, src) in &self.plan.skips_into[i] {
                let mut s = outs[src];
                if let Some(adapter) = &self.adapters[k] {
                    let ss = tape.shape(s).to_vec();
                    let flat = tape.reshape(s, vec![n, ss[1], ss[2..].iter().product()])?;
                    s = adapter.forward(tape, flat)?;
                }
                if let Some(g) = gain {
                    s = tape.scale(s, g);
                }
                v = tape.add_min_channels(v, s)?;
            }
            let out = match (&node.layer, &self.layers[i]) {
                (LayerSpec::Input, _) => v,
                (LayerSpec::Conv3x3 { activation, .. }, Bound::Conv(c)) => {
                    let y = c.forward(tape, v)?;
                    activate(tape, y, *activation)
                }
                (LayerSpec::BatchNorm { activation, .. }, Bound::BatchNorm(bn)) => {
                    let y = bn.forward(tape, v)?;
                    activate(tape, y, *activation)
                }
                (LayerSpec::MaxPool2x2, _) => tape.max_pool2x2(v)?,
                (LayerSpec::TransposedConv2x2 { resize_to, .. }, Bound::TConv(t)) => {
                    let y = t.forward(tape, v)?;
                    match resize_to {
                        Some([rh, rw]) => tape.resize_bilinear(y, (*rh, *rw))?,
                        None => y,
                    }
                }
                (LayerSpec::BilinearResize { target }, _) => tape.resize_bilinear(v, (target[0], target[1]))?,
                (LayerSpec::Linear { activation, .. }, Bound::Linear(l)) => {
                    let y = l.forward(tape, v)?;
                    activate(tape, y, *activation)
                }
                (LayerSpec::Reshape { shape }, _) => {
                    let mut full = vec![n];
                    full.extend_from_slice(shape);
                    tape.reshape(v, full)?
                }
                (LayerSpec::TransformerEncoder(_), Bound::Encoder(e)) => e.forward(tape, v)?,
                (LayerSpec::TransformerDecoder { .. }, Bound::Decoder(d)) => {
                    let m = outs[self.plan.memory[i].expect("memory resolved")];
                    d.forward(tape, v, m)?
                }
                _ => unreachable!("layer `{}` bound to the wrong parameters", node.name),
            };
            outs.push(out);
        }
        Ok(outs)
    }

    /// Reconstruction of `x`: the output of the last node.
    pub fn output(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        Ok(*self.forward(tape, x)?.last().expect("graph has nodes"))
    }
}

fn activate<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu(a) => tape.leaky_relu(x, T::from_f64_lossy(a)),
    }
}
