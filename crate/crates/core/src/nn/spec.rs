//! Architecture descriptions and their canonical `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// A stride-1, same-padded convolution: `out_channels@kernel_hxkernel_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDesc {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvDesc {
    pub fn square(out_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
        }
    }
}

impl fmt::Display for ConvDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}x{}", self.out_channels, self.kernel_h, self.kernel_w)
    }
}

impl FromStr for ConvDesc {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Parse(format!("bad conv descriptor {s:?}, expected like 16@3x3"));
        let (ch, kernel) = s.split_once('@').ok_or_else(bad)?;
        let (kh, kw) = kernel.split_once('x').ok_or_else(bad)?;
        Ok(Self {
            out_channels: ch.trim().parse().map_err(|_| bad())?,
            kernel_h: kh.trim().parse().map_err(|_| bad())?,
            kernel_w: kw.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchStep {
    Conv(ConvDesc),
    /// Stride-1 same-padded max pool; only valid as the first step.
    Pool {
        window: usize,
    },
}

impl fmt::Display for BranchStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchStep::Conv(c) => c.fmt(f),
            BranchStep::Pool { window } => write!(f, "pool{window}"),
        }
    }
}

impl FromStr for BranchStep {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("pool") {
            Some(w) => w
                .parse()
                .map(|window| BranchStep::Pool { window })
                .map_err(|_| ModelError::Parse(format!("bad pool step {s:?}"))),
            None => s.parse().map(BranchStep::Conv),
        }
    }
}

/// Parallel branches over one input, channel-concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InceptionModuleSpec {
    pub branches: Vec<Vec<BranchStep>>,
    /// Replace every square k×k conv (k > 1) with 1×k followed by k×1.
    pub factorized: bool,
}

impl InceptionModuleSpec {
    /// Four-branch template: 1×1 | 1×1→3×3 | 1×1→5×5 | pool→1×1.
    pub fn toy(factorized: bool) -> Self {
        let c = |o, k| BranchStep::Conv(ConvDesc::square(o, k));
        Self {
            branches: vec![
                vec![c(8, 1)],
                vec![c(8, 1), c(16, 3)],
                vec![c(4, 1), c(8, 5)],
                vec![BranchStep::Pool { window: 3 }, c(8, 1)],
            ],
            factorized,
        }
    }

    pub fn format_branches(&self) -> String {
        self.branches
            .iter()
            .map(|b| b.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn parse_branches(s: &str) -> Result<Vec<Vec<BranchStep>>, ModelError> {
        s.split('|')
            .map(|b| b.split_whitespace().map(str::parse).collect::<Result<Vec<_>, _>>())
            .collect()
    }

    /// Sum of the final conv width of every branch.
    pub fn out_channels(&self) -> usize {
        self.branches
            .iter()
            .filter_map(|b| {
                b.iter().rev().find_map(|s| match s {
                    BranchStep::Conv(c) => Some(c.out_channels),
                    BranchStep::Pool { .. } => None,
                })
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseBlockSpec {
    pub layers: usize,
    pub growth: usize,
    pub kernel: usize,
}

impl DenseBlockSpec {
    pub fn out_channels(&self, in_channels: usize) -> usize {
        in_channels + self.layers * self.growth
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backbone {
    /// Inception modules, then a `pool × pool` max pool with matching stride.
    Inception { modules: Vec<InceptionModuleSpec>, pool: usize },
    /// Dense block, then a 1×1 conv to `transition` channels and a global max pool.
    Dense { block: DenseBlockSpec, transition: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    MiniInception,
    MiniDensenet,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::MiniInception => "mini-inception",
            ArchKind::MiniDensenet => "mini-densenet",
        }
    }

    /// Number of hidden FC layers the head must have.
    pub fn head_layers(self) -> usize {
        match self {
            ArchKind::MiniInception => 2,
            ArchKind::MiniDensenet => 3,
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mini-inception" | "inception" => Ok(ArchKind::MiniInception),
            "mini-densenet" | "densenet" => Ok(ArchKind::MiniDensenet),
            other => Err(ModelError::Parse(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// One sigmoid unit: probability of class 1.
    Sigmoid,
    /// Two softmax units; the class-1 probability is the score.
    Softmax,
}

impl OutputKind {
    pub fn units(self) -> usize {
        match self {
            OutputKind::Sigmoid => 1,
            OutputKind::Softmax => 2,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            OutputKind::Sigmoid => "sigmoid",
            OutputKind::Softmax => "softmax",
        }
    }
}

impl FromStr for OutputKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sigmoid" => Ok(OutputKind::Sigmoid),
            "softmax" => Ok(OutputKind::Softmax),
            other => Err(ModelError::Parse(format!("unknown output kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl FromStr for InputShape {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| ModelError::Parse(format!("bad input shape {s:?}, expected CxHxW")))?;
        match parts[..] {
            [channels, height, width] => Ok(Self { channels, height, width }),
            _ => Err(ModelError::Parse(format!("bad input shape {s:?}, expected CxHxW"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: InputShape,
    pub stem: ConvDesc,
    pub backbone: Backbone,
    /// Hidden FC widths, each followed by relu.
    pub head: Vec<usize>,
    pub output: OutputKind,
}

impl ModelSpec {
    pub fn mini_inception(input: InputShape) -> Self {
        Self {
            input,
            stem: ConvDesc::square(8, 3),
            backbone: Backbone::Inception {
                modules: vec![InceptionModuleSpec::toy(false), InceptionModuleSpec::toy(true)],
                pool: 2,
            },
            head: vec![64, 16],
            output: OutputKind::Sigmoid,
        }
    }

    pub fn mini_densenet(input: InputShape) -> Self {
        Self {
            input,
            stem: ConvDesc::square(8, 3),
            backbone: Backbone::Dense {
                block: DenseBlockSpec {
                    layers: 4,
                    growth: 8,
                    kernel: 3,
                },
                transition: 16,
            },
            head: vec![32, 16, 8],
            output: OutputKind::Sigmoid,
        }
    }

    pub fn arch(&self) -> ArchKind {
        match self.backbone {
            Backbone::Inception { .. } => ArchKind::MiniInception,
            Backbone::Dense { .. } => ArchKind::MiniDensenet,
        }
    }

    /// Canonical text block; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("arch", self.arch().to_string());
        line("input", self.input.to_string());
        line("stem", self.stem.to_string());
        match &self.backbone {
            Backbone::Inception { modules, pool } => {
                line("inception.modules", modules.len().to_string());
                for (i, m) in modules.iter().enumerate() {
                    line(&format!("inception.{i}.factorized"), m.factorized.to_string());
                    line(&format!("inception.{i}.branches"), m.format_branches());
                }
                line("inception.pool", pool.to_string());
            }
            Backbone::Dense { block, transition } => {
                line("dense.layers", block.layers.to_string());
                line("dense.growth", block.growth.to_string());
                line("dense.kernel", block.kernel.to_string());
                line("dense.transition", transition.to_string());
            }
        }
        line("head", self.head.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        line("output", self.output.as_str().to_string());
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| ModelError::Parse(format!("line {}: expected key = value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| ModelError::Parse(format!("missing key {k:?}")));
        let num = |k: &str| -> Result<usize, ModelError> { get(k)?.parse().map_err(|_| ModelError::Parse(format!("key {k:?} is not an integer"))) };
        let arch: ArchKind = get("arch")?.parse()?;
        let backbone = match arch {
            ArchKind::MiniInception => {
                let count = num("inception.modules")?;
                let modules = (0..count)
                    .map(|i| {
                        let factorized = match get(&format!("inception.{i}.factorized"))?.as_str() {
                            "true" => true,
                            "false" => false,
                            other => return Err(ModelError::Parse(format!("bad boolean {other:?}"))),
                        };
                        let branches = InceptionModuleSpec::parse_branches(get(&format!("inception.{i}.branches"))?)?;
                        Ok(InceptionModuleSpec { branches, factorized })
                    })
                    .collect::<Result<_, _>>()?;
                Backbone::Inception {
                    modules,
                    pool: num("inception.pool")?,
                }
            }
            ArchKind::MiniDensenet => Backbone::Dense {
                block: DenseBlockSpec {
                    layers: num("dense.layers")?,
                    growth: num("dense.growth")?,
                    kernel: num("dense.kernel")?,
                },
                transition: num("dense.transition")?,
            },
        };
        Ok(Self {
            input: get("input")?.parse()?,
            stem: get("stem")?.parse()?,
            backbone,
            head: parse_widths(get("head")?)?,
            output: get("output")?.parse()?,
        })
    }
}

pub fn parse_widths(s: &str) -> Result<Vec<usize>, ModelError> {
    s.split(',')
        .map(|w| w.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::Parse(format!("bad width list {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_for_both_defaults() {
        let input = InputShape {
            channels: 3,
            height: 8,
            width: 8,
        };
        for spec in [ModelSpec::mini_inception(input), ModelSpec::mini_densenet(input)] {
            let text = spec.to_text();
            assert_eq!(ModelSpec::from_text(&text).unwrap(), spec, "{text}");
        }
    }

    #[test]
    fn branch_syntax() {
        let b = InceptionModuleSpec::parse_branches("8@1x1 | pool3 4@1x1").unwrap();
        assert_eq!(b[1][0], BranchStep::Pool { window: 3 });
        assert_eq!(b[1][1], BranchStep::Conv(ConvDesc::square(4, 1)));
        assert!(InceptionModuleSpec::parse_branches("8@1").is_err());
    }

    #[test]
    fn toy_module_width() {
        assert_eq!(InceptionModuleSpec::toy(false).out_channels(), 40);
    }
}
