//! Builders for the four detector topologies.

use serde::{Deserialize, Serialize};

use super::graph::{Activation, Architecture, LayerSpec, ModelGraph, NodeSpec, SkipEdge, TransformerSpec};
use crate::error::{Error, Result};
use crate::nn::layers::LEAKY_SLOPE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Spatial grid of the projected token features ahead of the last pool.
    /// `None` uses `[max(2, h/5), max(2, w/2)]` of the token stage.
    pub token_grid: Option<[usize; 2]>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            heads: 10,
            ff_dim: 2048,
            dropout: 0.1,
            token_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseConfig {
    pub hidden: usize,
    pub bottleneck: usize,
    pub layers: usize,
}

impl Default for DenseConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            bottleneck: 8,
            layers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub input_hw: [usize; 2],
    /// Number of pooling stages of the convolutional models.
    pub depth: usize,
    pub leaky_slope: f64,
    pub transformer: TransformerConfig,
    pub dense: DenseConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_hw: [401, 80],
            depth: 4,
            leaky_slope: LEAKY_SLOPE,
            transformer: TransformerConfig::default(),
            dense: DenseConfig::default(),
        }
    }
}

pub fn build(arch: Architecture, cfg: &ArchConfig) -> Result<ModelGraph> {
    let graph = match arch {
        Architecture::DcaseAe => dcase_ae(cfg),
        Architecture::DumanCae => conv_ae(cfg, Variant::Duman)?,
        Architecture::SkipCae => conv_ae(cfg, Variant::Skip)?,
        Architecture::SkipCaeTransformer => skip_cae_transformer(cfg)?,
    };
    graph.plan()?;
    Ok(graph)
}

pub fn build_dcase_ae() -> ModelGraph {
    build(Architecture::DcaseAe, &ArchConfig::default()).expect("default geometry is valid")
}

pub fn build_duman_cae() -> ModelGraph {
    build(Architecture::DumanCae, &ArchConfig::default()).expect("default geometry is valid")
}

pub fn build_skip_cae() -> ModelGraph {
    build(Architecture::SkipCae, &ArchConfig::default()).expect("default geometry is valid")
}

pub fn build_skip_cae_transformer() -> ModelGraph {
    build(Architecture::SkipCaeTransformer, &ArchConfig::default()).expect("default geometry is valid")
}

struct Builder {
    nodes: Vec<NodeSpec>,
    skips: Vec<SkipEdge>,
}

impl Builder {
    fn new() -> Self {
        Self {
            nodes: vec![NodeSpec {
                name: "input".into(),
                layer: LayerSpec::Input,
                input: None,
            }],
            skips: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, layer: LayerSpec) -> String {
        let name = name.into();
        self.nodes.push(NodeSpec {
            name: name.clone(),
            layer,
            input: None,
        });
        name
    }

    fn conv(&mut self, name: impl Into<String>, c_in: usize, c_out: usize, act: Activation) -> String {
        self.push(
            name,
            LayerSpec::Conv3x3 {
                in_channels: c_in,
                out_channels: c_out,
                activation: act,
            },
        )
    }

    fn bn(&mut self, name: impl Into<String>, channels: usize) -> String {
        self.push(
            name,
            LayerSpec::BatchNorm {
                channels,
                activation: Activation::Identity,
            },
        )
    }

    fn skip(&mut self, source: &str, target: &str) {
        self.skips.push(SkipEdge {
            source: source.into(),
            target: target.into(),
            adapter: None,
        });
    }

    fn skip_adapted(&mut self, source: &str, target: &str, in_f: usize, out_f: usize) {
        self.skips.push(SkipEdge {
            source: source.into(),
            target: target.into(),
            adapter: Some([in_f, out_f]),
        });
    }

    fn finish(self, architecture: Architecture, input_hw: [usize; 2]) -> ModelGraph {
        ModelGraph {
            architecture,
            input_hw,
            nodes: self.nodes,
            skips: self.skips,
        }
    }
}

fn dcase_ae(cfg: &ArchConfig) -> ModelGraph {
    let [h, w] = cfg.input_hw;
    let d = cfg.dense.clone();
    let mut b = Builder::new();
    b.push("flatten", LayerSpec::Reshape { shape: vec![h * w] });
    let mut widths: Vec<usize> = vec![d.hidden; d.layers];
    widths.push(d.bottleneck);
    widths.extend(std::iter::repeat(d.hidden).take(d.layers));
    let mut prev = h * w;
    for (i, &width) in widths.iter().enumerate() {
        let name = if i == d.layers {
            "bottleneck".to_string()
        } else {
            format!("dense{}", i + 1)
        };
        b.push(
            name.clone(),
            LayerSpec::Linear {
                in_features: prev,
                out_features: width,
                activation: Activation::Identity,
            },
        );
        b.push(
            format!("{name}_bn"),
            LayerSpec::BatchNorm {
                channels: width,
                activation: Activation::Relu,
            },
        );
        prev = width;
    }
    b.push(
        "output",
        LayerSpec::Linear {
            in_features: prev,
            out_features: h * w,
            activation: Activation::Identity,
        },
    );
    b.push("unflatten", LayerSpec::Reshape { shape: vec![1, h, w] });
    b.finish(Architecture::DcaseAe, cfg.input_hw)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Duman,
    Skip,
}

/// Spatial sizes after each pool: `sizes[0]` is the input.
fn stage_sizes(hw: [usize; 2], pools: usize) -> Result<Vec<[usize; 2]>> {
    let mut sizes = vec![hw];
    for _ in 0..pools {
        let [h, w] = *sizes.last().unwrap();
        if h < 2 || w < 2 {
            return Err(Error::Config(format!(
                "input {}x{} is too small for {pools} pooling stages",
                hw[0], hw[1]
            )));
        }
        sizes.push([h / 2, w / 2]);
    }
    Ok(sizes)
}

/// Output channels of encoder stage `k` (the conv pair ahead of pool `k + 1`).
fn encoder_channels(k: usize) -> usize {
    if k == 0 {
        4
    } else {
        1 << (k + 2)
    }
}

struct Encoder {
    /// Output of the last pool.
    last_pool: String,
    next_conv: usize,
}

/// Conv stages ahead of pools `1..=pools`, with batch norm before each pool
/// for the skip variant. Stage 0 holds two conv pairs (2 then 4 channels).
fn encoder(b: &mut Builder, pools: usize, act: Activation, variant: Variant) -> Encoder {
    let skip = variant == Variant::Skip;
    let mut c_in = 1;
    let mut conv = 1;
    let mut stage_input = "input".to_string();
    for k in 0..pools {
        let pairs: &[usize] = if k == 0 { &[2, 4] } else { &[0] };
        let mut first = String::new();
        for &ch in pairs {
            let ch = if ch == 0 { encoder_channels(k) } else { ch };
            let f = b.conv(format!("conv{conv}_1"), c_in, ch, act);
            if skip && !first.is_empty() {
                b.skip(&first, &f);
            }
            b.conv(format!("conv{conv}_2"), ch, ch, act);
            first = f;
            c_in = ch;
            conv += 1;
        }
        if skip {
            let bn = b.bn(format!("bn{}", k + 1), c_in);
            b.skip(&stage_input, &bn);
            b.skip(&first, &bn);
        }
        stage_input = b.push(format!("pool{}", k + 1), LayerSpec::MaxPool2x2);
    }
    Encoder {
        last_pool: stage_input,
        next_conv: conv,
    }
}

fn conv_ae(cfg: &ArchConfig, variant: Variant) -> Result<ModelGraph> {
    let depth = cfg.depth;
    if depth < 1 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    let sizes = stage_sizes(cfg.input_hw, depth)?;
    let act = match variant {
        Variant::Duman => Activation::Relu,
        Variant::Skip => Activation::LeakyRelu(cfg.leaky_slope),
    };
    let mut b = Builder::new();
    let enc = encoder(&mut b, depth, act, variant);
    let mut conv = enc.next_conv;
    let top = encoder_channels(depth - 1);
    let latent = enc.last_pool.clone();

    // Latent conv block: (2·top, 2·top) then (top, top).
    let l1 = b.conv(format!("conv{conv}_1"), top, 2 * top, act);
    b.conv(format!("conv{conv}_2"), 2 * top, 2 * top, act);
    conv += 1;
    let l2 = b.conv(format!("conv{conv}_1"), 2 * top, top, act);
    b.conv(format!("conv{conv}_2"), top, top, act);
    conv += 1;
    if variant == Variant::Skip {
        b.skip(&l1, &l2);
    }

    let mut block_input = latent;
    let mut block_first = l2;
    let mut c = top;
    for j in 1..=depth {
        let c_next = if j == depth { 2 } else { encoder_channels(depth - 1 - j) };
        let last = j == depth;
        let target = sizes[depth - j];
        let up = match variant {
            Variant::Skip => {
                let bn = b.bn(format!("bn_up{j}"), c);
                b.skip(&block_input, &bn);
                b.skip(&block_first, &bn);
                let [h, w] = sizes[depth - j + 1];
                b.push(
                    format!("up{j}"),
                    LayerSpec::TransposedConv2x2 {
                        in_channels: c,
                        out_channels: c_next,
                        target: (!last).then_some(target),
                        resize_to: (last && [2 * h, 2 * w] != target).then_some(target),
                    },
                )
            }
            Variant::Duman => b.push(format!("up{j}"), LayerSpec::BilinearResize { target }),
        };
        let c_in = if variant == Variant::Duman { c } else { c_next };
        let f = b.conv(format!("conv{conv}_1"), c_in, c_next, act);
        b.conv(format!("conv{conv}_2"), c_next, c_next, act);
        conv += 1;
        block_input = up;
        block_first = f;
        c = c_next;
    }
    let out = b.conv("output", c, 1, Activation::Identity);
    if variant == Variant::Skip {
        b.skip(&block_input, &out);
        b.skip(&block_first, &out);
    }
    let arch = match variant {
        Variant::Duman => Architecture::DumanCae,
        Variant::Skip => Architecture::SkipCae,
    };
    Ok(b.finish(arch, cfg.input_hw))
}

fn skip_cae_transformer(cfg: &ArchConfig) -> Result<ModelGraph> {
    let depth = cfg.depth;
    if depth < 2 {
        return Err(Error::Config("the transformer model needs depth >= 2".into()));
    }
    let act = Activation::LeakyRelu(cfg.leaky_slope);
    let sizes = stage_sizes(cfg.input_hw, depth - 1)?;
    let [th, tw] = sizes[depth - 1];
    let d_model = th * tw;
    let [gh, gw] = cfg.transformer.token_grid.unwrap_or([(th / 5).max(2), (tw / 2).max(2)]);
    let grid = gh * gw;
    let t = &cfg.transformer;
    let spec = TransformerSpec {
        d_model,
        heads: t.heads,
        ff_dim: t.ff_dim,
        dropout: t.dropout,
    };

    let mut b = Builder::new();
    let enc = encoder(&mut b, depth - 1, act, Variant::Skip);
    let mut conv = enc.next_conv;
    let last_pool = enc.last_pool.clone();
    let c_prev = encoder_channels(depth - 2);
    let top = encoder_channels(depth - 1);

    // Last encoder stage: convs, then the transformer on channel tokens.
    let c5 = b.conv(format!("conv{conv}_1"), c_prev, top, act);
    b.conv(format!("conv{conv}_2"), top, top, act);
    conv += 1;
    b.push(
        "tokens",
        LayerSpec::Reshape {
            shape: vec![top, d_model],
        },
    );
    let te = b.push("transformer_encoder", LayerSpec::TransformerEncoder(spec.clone()));
    let lin_enc = b.push(
        "fc_encode",
        LayerSpec::Linear {
            in_features: d_model,
            out_features: grid,
            activation: act,
        },
    );
    b.skip(&last_pool, &lin_enc);
    b.skip(&c5, &lin_enc);
    b.push(
        "encode_grid",
        LayerSpec::Reshape {
            shape: vec![top, gh, gw],
        },
    );
    let bn_latent = b.bn(format!("bn{depth}"), top);
    b.skip_adapted(&te, &bn_latent, d_model, grid);
    let latent = b.push(format!("pool{depth}"), LayerSpec::MaxPool2x2);

    let l1 = b.conv(format!("conv{conv}_1"), top, 2 * top, act);
    b.conv(format!("conv{conv}_2"), 2 * top, 2 * top, act);
    conv += 1;
    let l2 = b.conv(format!("conv{conv}_1"), 2 * top, top, act);
    b.conv(format!("conv{conv}_2"), top, top, act);
    conv += 1;
    b.skip(&l1, &l2);

    let bn_up1 = b.bn("bn_up1", top);
    b.skip(&latent, &bn_up1);
    b.skip(&l2, &bn_up1);
    let up1 = b.push(
        "up1",
        LayerSpec::TransposedConv2x2 {
            in_channels: top,
            out_channels: top,
            target: Some([gh, gw]),
            resize_to: None,
        },
    );
    b.push("decode_tokens", LayerSpec::Reshape { shape: vec![top, grid] });
    b.push(
        "fc_decode",
        LayerSpec::Linear {
            in_features: grid,
            out_features: d_model,
            activation: act,
        },
    );
    b.push(
        "transformer_decoder",
        LayerSpec::TransformerDecoder {
            spec,
            memory: te.clone(),
        },
    );
    b.push(
        "decode_grid",
        LayerSpec::Reshape {
            shape: vec![top, th, tw],
        },
    );

    let mut block_input = up1;
    let mut c = 0;
    for j in 1..depth {
        let p = top >> j;
        let c_in = if j == 1 { top } else { p };
        let f = b.conv(format!("conv{conv}_1"), c_in, p, act);
        b.conv(format!("conv{conv}_2"), p, p, act);
        conv += 1;
        let bn = b.bn(format!("bn_up{}", j + 1), p);
        if j == 1 {
            b.skip_adapted(&block_input, &bn, grid, d_model);
        } else {
            b.skip(&block_input, &bn);
        }
        b.skip(&f, &bn);
        let last = j == depth - 1;
        let target = sizes[depth - 1 - j];
        let [h, w] = sizes[depth - j];
        c = p / 2;
        block_input = b.push(
            format!("up{}", j + 1),
            LayerSpec::TransposedConv2x2 {
                in_channels: p,
                out_channels: c,
                target: (!last).then_some(target),
                resize_to: (last && [2 * h, 2 * w] != target).then_some(target),
            },
        );
    }
    let f = b.conv(format!("conv{conv}_1"), c, c, act);
    b.conv(format!("conv{conv}_2"), c, c, act);
    let out = b.conv("output", c, 1, Activation::Identity);
    b.skip(&block_input, &out);
    b.skip(&f, &out);
    Ok(b.finish(Architecture::SkipCaeTransformer, cfg.input_hw))
}
