//! Composable layers and blocks that run on an autograd [`Graph`].

use std::collections::BTreeMap;

use super::spec::{BranchStep, ConvDesc, DenseBlockSpec, InceptionModuleSpec};
use super::ModelError;
use crate::autograd::{Graph, Var};
use crate::tensor::TensorError;

/// A parameter a block needs, with the fan-in used for initialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ParamDecl {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Graph handles of a model's parameters, by name.
pub type ParamVars = BTreeMap<String, Var>;

fn lookup(params: &ParamVars, name: &str) -> Var {
    *params.get(name).unwrap_or_else(|| panic!("parameter {name} was not registered"))
}

pub trait Block {
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    /// Declarations in construction order.
    fn parameters(&self) -> Vec<ParamDecl>;
    fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(ParamDecl::numel).sum()
    }
}

/// Stride-1 same-padded convolution, optionally followed by relu.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub relu: bool,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, in_channels: usize, desc: ConvDesc, relu: bool) -> Result<Self, ModelError> {
        let name = name.into();
        if in_channels == 0 || desc.out_channels == 0 {
            return Err(ModelError::Invalid {
                layer: name,
                reason: "channel counts must be positive".into(),
            });
        }
        if desc.kernel_h.is_multiple_of(2) || desc.kernel_w.is_multiple_of(2) {
            return Err(ModelError::Invalid {
                layer: name,
                reason: format!(
                    "kernel {}x{} cannot be same-padded; it would change the spatial size",
                    desc.kernel_h, desc.kernel_w
                ),
            });
        }
        Ok(Self {
            name,
            in_channels,
            out_channels: desc.out_channels,
            kernel_h: desc.kernel_h,
            kernel_w: desc.kernel_w,
            relu,
        })
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

impl Block for ConvLayer {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn parameters(&self) -> Vec<ParamDecl> {
        let fan_in = self.in_channels * self.kernel_h * self.kernel_w;
        vec![
            ParamDecl {
                name: self.weight_name(),
                shape: vec![self.out_channels, self.in_channels, self.kernel_h, self.kernel_w],
                fan_in,
                is_bias: false,
            },
            ParamDecl {
                name: self.bias_name(),
                shape: vec![self.out_channels],
                fan_in,
                is_bias: true,
            },
        ]
    }

    fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError> {
        let w = lookup(params, &self.weight_name());
        let b = lookup(params, &self.bias_name());
        let y = g.conv2d_asym(x, w, b, 1, self.kernel_h / 2, self.kernel_w / 2)?;
        if self.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone)]
struct Branch {
    pool: Option<usize>,
    convs: Vec<ConvLayer>,
}

#[derive(Debug, Clone)]
pub struct InceptionModule {
    in_channels: usize,
    branches: Vec<Branch>,
}

/// Builds an inception module whose parameters live under `prefix`.
pub fn build_inception_module(spec: &InceptionModuleSpec, in_channels: usize, prefix: &str) -> Result<InceptionModule, ModelError> {
    let invalid = |reason: String| ModelError::Invalid {
        layer: prefix.to_string(),
        reason,
    };
    if in_channels == 0 {
        return Err(invalid("in_channels must be positive".into()));
    }
    if spec.branches.len() < 2 {
        return Err(invalid(format!(
            "an inception module needs at least 2 branches, got {}",
            spec.branches.len()
        )));
    }
    let mut branches = Vec::with_capacity(spec.branches.len());
    for (bi, steps) in spec.branches.iter().enumerate() {
        let mut pool = None;
        let mut convs = Vec::new();
        let mut channels = in_channels;
        for (si, step) in steps.iter().enumerate() {
            match *step {
                BranchStep::Pool { window } => {
                    if si != 0 {
                        return Err(invalid(format!("branch {bi}: pooling is only allowed as the first step")));
                    }
                    if window % 2 == 0 {
                        return Err(invalid(format!(
                            "branch {bi}: pool window {window} cannot be same-padded; it would change the spatial size"
                        )));
                    }
                    pool = Some(window);
                }
                BranchStep::Conv(desc) => {
                    let factor = spec.factorized && desc.kernel_h == desc.kernel_w && desc.kernel_h > 1;
                    let parts = if factor {
                        let k = desc.kernel_h;
                        vec![
                            ConvDesc {
                                out_channels: desc.out_channels,
                                kernel_h: 1,
                                kernel_w: k,
                            },
                            ConvDesc {
                                out_channels: desc.out_channels,
                                kernel_h: k,
                                kernel_w: 1,
                            },
                        ]
                    } else {
                        vec![desc]
                    };
                    for d in parts {
                        let name = format!("{prefix}.b{bi}.conv{}", convs.len());
                        let layer = ConvLayer::new(name, channels, d, true)?;
                        channels = layer.out_channels;
                        convs.push(layer);
                    }
                }
            }
        }
        if convs.is_empty() {
            return Err(invalid(format!("branch {bi} has no convolution")));
        }
        branches.push(Branch { pool, convs });
    }
    Ok(InceptionModule { in_channels, branches })
}

impl Block for InceptionModule {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.convs.last().expect("non-empty").out_channels).sum()
    }

    fn parameters(&self) -> Vec<ParamDecl> {
        self.branches.iter().flat_map(|b| b.convs.iter().flat_map(Block::parameters)).collect()
    }

    fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut y = match branch.pool {
                Some(w) => g.maxpool2d_padded(x, w, 1, w / 2)?,
                None => x,
            };
            for conv in &branch.convs {
                y = conv.forward(g, params, y)?;
            }
            outs.push(y);
        }
        g.concat_channels(&outs)
    }
}

/// Layer `i` sees the block input plus the outputs of layers `0..i`.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    in_channels: usize,
    layers: Vec<ConvLayer>,
}

/// Builds a dense block under `prefix`. `layers == 0` yields the identity.
pub fn build_dense_block(spec: &DenseBlockSpec, in_channels: usize, prefix: &str) -> Result<DenseBlock, ModelError> {
    if in_channels == 0 || (spec.layers > 0 && (spec.growth == 0 || spec.kernel == 0)) {
        return Err(ModelError::Invalid {
            layer: prefix.to_string(),
            reason: "in_channels, growth rate and kernel size must be positive".into(),
        });
    }
    let layers = (0..spec.layers)
        .map(|i| {
            ConvLayer::new(
                format!("{prefix}.layer{i}"),
                in_channels + i * spec.growth,
                ConvDesc::square(spec.growth, spec.kernel),
                true,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(DenseBlock { in_channels, layers })
}

impl DenseBlock {
    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }
}

impl Block for DenseBlock {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn out_channels(&self) -> usize {
        self.in_channels + self.layers.iter().map(|l| l.out_channels).sum::<usize>()
    }

    fn parameters(&self) -> Vec<ParamDecl> {
        self.layers.iter().flat_map(Block::parameters).collect()
    }

    fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError> {
        let mut features = vec![x];
        let mut current = x;
        for layer in &self.layers {
            let y = layer.forward(g, params, current)?;
            features.push(y);
            current = g.concat_channels(&features)?;
        }
        Ok(current)
    }
}

/// Fully connected layer on `[N, D]` features.
#[derive(Debug, Clone)]
pub struct FcLayer {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
}

impl FcLayer {
    pub fn parameters(&self) -> Vec<ParamDecl> {
        vec![
            ParamDecl {
                name: format!("{}.weight", self.name),
                shape: vec![self.inputs, self.outputs],
                fan_in: self.inputs,
                is_bias: false,
            },
            ParamDecl {
                name: format!("{}.bias", self.name),
                shape: vec![self.outputs],
                fan_in: self.inputs,
                is_bias: true,
            },
        ]
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError> {
        let w = lookup(params, &format!("{}.weight", self.name));
        let b = lookup(params, &format!("{}.bias", self.name));
        let y = g.dense(x, w, b)?;
        if self.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }
}
