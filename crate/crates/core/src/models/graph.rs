//! Serializable network topology: named nodes in execution order plus
//! additive skip edges.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    DcaseAe,
    DumanCae,
    SkipCae,
    SkipCaeTransformer,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::DcaseAe,
        Architecture::DumanCae,
        Architecture::SkipCae,
        Architecture::SkipCaeTransformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::DcaseAe => "dcase_ae",
            Architecture::DumanCae => "duman_cae",
            Architecture::SkipCae => "skip_cae",
            Architecture::SkipCaeTransformer => "skip_cae_transformer",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

/// Shapes below are per example; the batch axis is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// The model input, `[1, H, W]`.
    Input,
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        #[serde(default)]
        activation: Activation,
    },
    BatchNorm {
        channels: usize,
        #[serde(default)]
        activation: Activation,
    },
    MaxPool2x2,
    /// Stride-2 transposed convolution to `target` (default 2H×2W), then an
    /// optional corner-aligned bilinear resize.
    TransposedConv2x2 {
        in_channels: usize,
        out_channels: usize,
        target: Option<[usize; 2]>,
        resize_to: Option<[usize; 2]>,
    },
    BilinearResize {
        target: [usize; 2],
    },
    /// Affine map on the last axis.
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        activation: Activation,
    },
    Reshape {
        shape: Vec<usize>,
    },
    TransformerEncoder(TransformerSpec),
    TransformerDecoder {
        #[serde(flatten)]
        spec: TransformerSpec,
        /// Node whose output is the cross-attention memory.
        memory: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub layer: LayerSpec,
    /// Primary input node; `None` means the preceding node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

/// Adds the output of `source` onto the input of `target` over the leading
/// `min(C_source, C_target)` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipEdge {
    pub source: String,
    pub target: String,
    /// Fully connected adapter `[in_features, out_features]` applied to each
    /// flattened source channel before the addition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub architecture: Architecture,
    /// `[H, W]` of the spectrogram input.
    pub input_hw: [usize; 2],
    pub nodes: Vec<NodeSpec>,
    pub skips: Vec<SkipEdge>,
}

/// Resolved connectivity and per-node shapes of a validated graph.
#[derive(Debug, Clone)]
pub struct GraphPlan {
    /// Primary input index per node (`None` for the model input).
    pub inputs: Vec<Option<usize>>,
    /// Skip edges grouped by target node: `(skip index, source node)`.
    pub skips_into: Vec<Vec<(usize, usize)>>,
    /// Decoder memory node for transformer decoders.
    pub memory: Vec<Option<usize>>,
    /// Per-example output shape of every node.
    pub shapes: Vec<Vec<usize>>,
}

fn per_channel(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

impl ModelGraph {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Checks names, ordering and shapes; returns the resolved plan.
    pub fn plan(&self) -> Result<GraphPlan> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if index.insert(n.name.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate node name `{}`", n.name)));
            }
        }
        let lookup = |name: &str, before: usize, what: &str| -> Result<usize> {
            match index.get(name) {
                Some(&i) if i < before => Ok(i),
                Some(_) => Err(Error::Config(format!("{what} `{name}` does not precede its consumer"))),
                None => Err(Error::Config(format!("unknown {what} `{name}`"))),
            }
        };

        let n = self.nodes.len();
        let mut inputs = vec![None; n];
        let mut memory = vec![None; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.layer, LayerSpec::Input) {
                continue;
            }
            inputs[i] = Some(match &node.input {
                Some(name) => lookup(name, i, "input node")?,
                None if i > 0 => i - 1,
                None => return Err(Error::Config("the first node must be the input".into())),
            });
            if let LayerSpec::TransformerDecoder { memory: m, .. } = &node.layer {
                memory[i] = Some(lookup(m, i, "memory node")?);
            }
        }
        let mut skips_into = vec![Vec::new(); n];
        for (k, s) in self.skips.iter().enumerate() {
            let t = index
                .get(s.target.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown skip target `{}`", s.target)))?;
            let src = lookup(&s.source, t, "skip source")?;
            if matches!(self.nodes[t].layer, LayerSpec::Input) {
                return Err(Error::Config("skip edges cannot target the input".into()));
            }
            skips_into[t].push((k, src));
        }

        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            let in_shape = match inputs[i] {
                Some(j) => shapes[j].clone(),
                None => vec![1, self.input_hw[0], self.input_hw[1]],
            };
            for &(k, src) in &skips_into[i] {
                let edge = &self.skips[k];
                let mut s = shapes[src].clone();
                if let Some([a, b]) = edge.adapter {
                    if per_channel(&s) != a {
                        return Err(shape_err!(
                            "skip {} -> {}: adapter expects {a} features per channel, source is {s:?}",
                            edge.source,
                            edge.target
                        ));
                    }
                    s = vec![s[0], b];
                }
                if in_shape.len() < 2 || per_channel(&s) != per_channel(&in_shape) {
                    return Err(shape_err!(
                        "skip {} -> {}: source {s:?} does not match target input {in_shape:?}",
                        edge.source,
                        edge.target
                    ));
                }
                if s.len() == 3 && in_shape.len() == 3 && s[1..] != in_shape[1..] {
                    return Err(shape_err!(
                        "skip {} -> {}: spatial sizes {:?} and {:?} differ",
                        edge.source,
                        edge.target,
                        &s[1..],
                        &in_shape[1..]
                    ));
                }
            }
            let out = infer(&node.layer, &in_shape, memory[i].map(|m| shapes[m].as_slice())).map_err(|e| match e {
                Error::Shape(m) => Error::Shape(format!("node `{}`: {m}", node.name)),
                e => e,
            })?;
            shapes.push(out);
        }
        Ok(GraphPlan {
            inputs,
            skips_into,
            memory,
            shapes,
        })
    }
}

fn image(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(shape_err!("expected [C, H, W], got {shape:?}")),
    }
}

fn infer(layer: &LayerSpec, x: &[usize], memory: Option<&[usize]>) -> Result<Vec<usize>> {
    Ok(match layer {
        LayerSpec::Input => x.to_vec(),
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            ..
        } => {
            let (c, h, w) = image(x)?;
            if c != *in_channels {
                return Err(shape_err!("conv expects {in_channels} channels, got {c}"));
            }
            vec![*out_channels, h, w]
        }
        LayerSpec::BatchNorm { channels, .. } => {
            if x.is_empty() || x[0] != *channels {
                return Err(shape_err!("batch norm over {channels} channels, got {x:?}"));
            }
            x.to_vec()
        }
        LayerSpec::MaxPool2x2 => {
            let (c, h, w) = image(x)?;
            if h < 2 || w < 2 {
                return Err(shape_err!("cannot pool {h}x{w}"));
            }
            vec![c, h / 2, w / 2]
        }
        LayerSpec::TransposedConv2x2 {
            in_channels,
            out_channels,
            target,
            resize_to,
        } => {
            let (c, h, w) = image(x)?;
            if c != *in_channels {
                return Err(shape_err!("transposed conv expects {in_channels} channels, got {c}"));
            }
            let [th, tw] = target.unwrap_or([2 * h, 2 * w]);
            if th < 2 * h || tw < 2 * w {
                return Err(shape_err!("target {th}x{tw} below {}x{}", 2 * h, 2 * w));
            }
            let [rh, rw] = resize_to.unwrap_or([th, tw]);
            vec![*out_channels, rh, rw]
        }
        LayerSpec::BilinearResize { target } => {
            let (c, _, _) = image(x)?;
            vec![c, target[0], target[1]]
        }
        LayerSpec::Linear {
            in_features,
            out_features,
            ..
        } => {
            if x.last() != Some(in_features) {
                return Err(shape_err!("linear expects {in_features} features, got {x:?}"));
            }
            let mut s = x.to_vec();
            *s.last_mut().unwrap() = *out_features;
            s
        }
        LayerSpec::Reshape { shape } => {
            if shape.iter().product::<usize>() != x.iter().product::<usize>() {
                return Err(shape_err!("cannot reshape {x:?} into {shape:?}"));
            }
            shape.clone()
        }
        LayerSpec::TransformerEncoder(spec) => tokens(x, spec)?,
        LayerSpec::TransformerDecoder { spec, .. } => {
            let m = memory.expect("decoder memory resolved");
            tokens(m, spec)?;
            tokens(x, spec)?
        }
    })
}

fn tokens(x: &[usize], spec: &TransformerSpec) -> Result<Vec<usize>> {
    if x.len() != 2 || x[1] != spec.d_model {
        return Err(shape_err!(
            "transformer expects [S, {}] tokens, got {x:?}",
            spec.d_model
        ));
    }
    if spec.heads == 0 || spec.d_model % spec.heads != 0 {
        return Err(shape_err!(
            "d_model {} not divisible by {} heads",
            spec.d_model,
            spec.heads
        ));
    }
    Ok(x.to_vec())
}
