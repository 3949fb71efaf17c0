//! Toy inception-style and dense-block backbones with their classification heads.

mod blocks;
mod spec;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use blocks::{build_dense_block, build_inception_module, Block, ConvLayer, DenseBlock, FcLayer, InceptionModule, ParamDecl, ParamVars};
pub use spec::{parse_widths, ArchKind, Backbone, BranchStep, ConvDesc, DenseBlockSpec, InceptionModuleSpec, InputShape, ModelSpec, OutputKind};

use crate::autograd::{Activation, Graph, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid layer {layer}: {reason}")]
    Invalid { layer: String, reason: String },
    #[error("model spec parse error: {0}")]
    Parse(String),
    #[error("parameter set mismatch: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
enum Body {
    Inception { modules: Vec<InceptionModule>, pool: usize },
    Dense { block: DenseBlock, transition: ConvLayer },
}

/// Layer graph compiled from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Network {
    stem: ConvLayer,
    body: Body,
    head: Vec<FcLayer>,
    output: FcLayer,
    output_kind: OutputKind,
}

impl Network {
    pub fn compile(spec: &ModelSpec) -> Result<Self, ModelError> {
        let arch = spec.arch();
        if spec.head.len() != arch.head_layers() {
            return Err(ModelError::Invalid {
                layer: "head".into(),
                reason: format!(
                    "{arch} requires exactly {} fully connected layers before the output, got {}",
                    arch.head_layers(),
                    spec.head.len()
                ),
            });
        }
        if spec.head.contains(&0) {
            return Err(ModelError::Invalid {
                layer: "head".into(),
                reason: "fully connected widths must be positive".into(),
            });
        }
        let InputShape { channels, height, width } = spec.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(ModelError::Invalid {
                layer: "input".into(),
                reason: format!("input shape {} has a zero dimension", spec.input),
            });
        }
        let stem = ConvLayer::new("stem", channels, spec.stem, true)?;
        let (body, features) = match &spec.backbone {
            Backbone::Inception { modules, pool } => {
                let mut c = stem.out_channels;
                let mut built = Vec::with_capacity(modules.len());
                for (i, m) in modules.iter().enumerate() {
                    let block = build_inception_module(m, c, &format!("inception{i}"))?;
                    c = block.out_channels();
                    built.push(block);
                }
                if *pool == 0 || *pool > height || *pool > width {
                    return Err(ModelError::Invalid {
                        layer: "pool".into(),
                        reason: format!("pool window {pool} does not fit input {height}x{width}"),
                    });
                }
                let features = c * (height / pool) * (width / pool);
                (Body::Inception { modules: built, pool: *pool }, features)
            }
            Backbone::Dense { block, transition } => {
                let dense = build_dense_block(block, stem.out_channels, "dense")?;
                let transition = ConvLayer::new("transition", dense.out_channels(), ConvDesc::square(*transition, 1), true)?;
                let features = transition.out_channels;
                (Body::Dense { block: dense, transition }, features)
            }
        };
        let mut head = Vec::with_capacity(spec.head.len());
        let mut inputs = features;
        for (i, &w) in spec.head.iter().enumerate() {
            head.push(FcLayer {
                name: format!("fc{i}"),
                inputs,
                outputs: w,
                relu: true,
            });
            inputs = w;
        }
        let output = FcLayer {
            name: "out".into(),
            inputs,
            outputs: spec.output.units(),
            relu: false,
        };
        Ok(Self {
            stem,
            body,
            head,
            output,
            output_kind: spec.output,
        })
    }

    /// Every parameter in construction order.
    pub fn parameters(&self) -> Vec<ParamDecl> {
        let mut out = self.stem.parameters();
        match &self.body {
            Body::Inception { modules, .. } => out.extend(modules.iter().flat_map(Block::parameters)),
            Body::Dense { block, transition } => {
                out.extend(block.parameters());
                out.extend(transition.parameters());
            }
        }
        out.extend(self.head.iter().flat_map(FcLayer::parameters));
        out.extend(self.output.parameters());
        out
    }

    /// Number of hidden FC layers in the head.
    pub fn head_depth(&self) -> usize {
        self.head.len()
    }

    pub fn head_widths(&self) -> Vec<usize> {
        self.head.iter().map(|l| l.outputs).collect()
    }

    /// Channel count entering the head's first FC layer, before flattening.
    pub fn backbone_channels(&self) -> usize {
        match &self.body {
            Body::Inception { modules, .. } => modules.last().map_or(self.stem.out_channels, Block::out_channels),
            Body::Dense { transition, .. } => transition.out_channels,
        }
    }

    /// Runs the network, returning the output activations: `[N, 1]` sigmoid
    /// or `[N, 2]` softmax.
    pub fn forward(&self, g: &mut Graph, params: &ParamVars, x: Var) -> Result<Var, TensorError> {
        let mut y = self.stem.forward(g, params, x)?;
        match &self.body {
            Body::Inception { modules, pool } => {
                for m in modules {
                    y = m.forward(g, params, y)?;
                }
                y = g.maxpool2d(y, *pool, *pool)?;
                y = g.flatten(y)?;
            }
            Body::Dense { block, transition } => {
                y = block.forward(g, params, y)?;
                y = transition.forward(g, params, y)?;
                y = g.global_maxpool(y)?;
            }
        }
        for fc in &self.head {
            y = fc.forward(g, params, y)?;
        }
        y = self.output.forward(g, params, y)?;
        let act = match self.output_kind {
            OutputKind::Sigmoid => Activation::Sigmoid,
            OutputKind::Softmax => Activation::Softmax,
        };
        g.activate(y, act)
    }
}

/// Class-1 probability per sample from the output activations.
pub fn scores_from_output(output: &Tensor, kind: OutputKind) -> Vec<f32> {
    match kind {
        OutputKind::Sigmoid => output.data().to_vec(),
        OutputKind::Softmax => output.data().chunks_exact(2).map(|r| r[1]).collect(),
    }
}

/// A compiled architecture plus its named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    network: Network,
    params: BTreeMap<String, Tensor>,
    seed: u64,
}

/// Builds a model with seeded Kaiming-uniform weights (`±sqrt(6 / fan_in)`)
/// and zero biases.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model, ModelError> {
    let network = Network::compile(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for decl in network.parameters() {
        let t = if decl.is_bias {
            Tensor::zeros(&decl.shape)
        } else {
            let bound = (6.0 / decl.fan_in as f64).sqrt() as f32;
            Tensor::from_fn(&decl.shape, |_| rng.gen_range(-bound..bound))
        };
        params.insert(decl.name, t);
    }
    Ok(Model {
        spec: spec.clone(),
        network,
        params,
        seed,
    })
}

impl Model {
    /// Reassembles a model from stored parameters; the name set and every
    /// shape must match the model spec exactly.
    pub fn from_parts(spec: ModelSpec, params: BTreeMap<String, Tensor>, seed: u64) -> Result<Self, ModelError> {
        let network = Network::compile(&spec)?;
        let decls = network.parameters();
        if decls.len() != params.len() {
            return Err(ModelError::Params(format!(
                "spec declares {} parameters, got {}",
                decls.len(),
                params.len()
            )));
        }
        for d in &decls {
            match params.get(&d.name) {
                None => return Err(ModelError::Params(format!("missing parameter {}", d.name))),
                Some(t) if t.shape() != d.shape.as_slice() => {
                    return Err(ModelError::Params(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        d.name,
                        t.shape(),
                        d.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self { spec, network, params, seed })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Digest over every parameter, in name order.
    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |acc, (name, t)| {
            let mut h = acc ^ t.checksum();
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            h.rotate_left(7)
        })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), TensorError> {
        let InputShape { channels, height, width } = self.spec.input;
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != [channels, height, width] {
            return Err(TensorError::Dimension {
                op: "forward",
                detail: format!("batch shape {shape:?} does not match model input [N, {channels}, {height}, {width}]"),
            });
        }
        Ok(())
    }

    /// Registers every parameter on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        self.params
            .iter()
            .map(|(name, t)| {
                let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect()
    }

    /// Records a forward pass on `g`; returns the output activations.
    pub fn forward_on(&self, g: &mut Graph, params: &ParamVars, batch: &Tensor) -> Result<Var, TensorError> {
        self.check_batch(batch)?;
        let x = g.constant(batch.clone());
        self.network.forward(g, params, x)
    }

    /// Class-1 scores in `(0, 1)` for an `[N, C, H, W]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Vec<f32>, TensorError> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let out = self.forward_on(&mut g, &params, batch)?;
        Ok(scores_from_output(g.value(out), self.spec.output))
    }
}
