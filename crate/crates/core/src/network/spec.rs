//! Declarative architectures and shape inference.

use std::fmt;

use crate::tensor::ConvGeometry;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

impl LayerSpec {
    /// Stride-1 "same" convolution.
    pub fn conv_same(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    pub fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => Some(ConvGeometry::square(kernel, stride, padding)),
            LayerSpec::MaxPool { window, stride } => Some(ConvGeometry::square(window, stride, 0)),
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                write!(f, "conv({filters},{kernel},{stride},{padding})")
            }
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool({window},{stride})"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
        }
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Format(format!("bad layer descriptor `{s}`"));
        let (name, args) = match s.split_once('(') {
            Some((n, rest)) => {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (n, args)
            }
            None => (s, Vec::new()),
        };
        Ok(match (name, &args[..]) {
            ("conv", &[filters, kernel, stride, padding]) => LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            },
            ("relu", []) => LayerSpec::Relu,
            ("maxpool", &[window, stride]) => LayerSpec::MaxPool { window, stride },
            ("flatten", []) => LayerSpec::Flatten,
            ("dense", &[units]) => LayerSpec::Dense { units },
            _ => return Err(bad()),
        })
    }
}

/// Activation shape between layers (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Spatial { c, h, w } => c * h * w,
            ActShape::Flat(d) => d,
        }
    }

    /// Tensor shape with a leading batch axis.
    pub fn with_batch(&self, n: usize) -> Vec<usize> {
        match *self {
            ActShape::Spatial { c, h, w } => vec![n, c, h, w],
            ActShape::Flat(d) => vec![n, d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// `(C, H, W)`.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        num_classes: usize,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.num_classes => {}
            other => {
                return Err(Error::Shape(format!(
                    "final layer must be dense({}), got {other:?}",
                    self.num_classes
                )))
            }
        }
        self.infer_shapes().map(|_| ())
    }

    /// Activation shapes: entry 0 is the input, entry `i + 1` the output of
    /// layer `i`.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input shape {:?} has a zero axis",
                self.input_shape
            )));
        }
        let mut shapes = vec![ActShape::Spatial { c, h, w }];
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let wrap = |e: Error| match e {
                Error::Geometry(m) => Error::Geometry(format!("layer {i} ({layer}): {m}")),
                other => other,
            };
            let next = match (layer, cur) {
                (LayerSpec::Conv { filters, .. }, ActShape::Spatial { h, w, .. }) => {
                    if *filters == 0 {
                        return Err(Error::Shape(format!("layer {i}: conv with 0 filters")));
                    }
                    let (oh, ow) = layer.geometry().unwrap().output_dims(h, w).map_err(wrap)?;
                    ActShape::Spatial {
                        c: *filters,
                        h: oh,
                        w: ow,
                    }
                }
                (LayerSpec::MaxPool { .. }, ActShape::Spatial { c, h, w }) => {
                    let (oh, ow) = layer.geometry().unwrap().output_dims(h, w).map_err(wrap)?;
                    ActShape::Spatial { c, h: oh, w: ow }
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => ActShape::Flat(s.numel()),
                (LayerSpec::Dense { units }, ActShape::Flat(_)) if *units > 0 => {
                    ActShape::Flat(*units)
                }
                (l, s) => {
                    return Err(Error::Shape(format!(
                        "layer {i} ({l}) cannot follow activation {s:?}"
                    )))
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    pub fn dense_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count()
    }

    /// Total learnable scalars (weights and biases).
    pub fn parameter_count(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        Ok(self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| match (l, s) {
                (
                    LayerSpec::Conv {
                        filters, kernel, ..
                    },
                    ActShape::Spatial { c, .. },
                ) => filters * c * kernel * kernel + filters,
                (LayerSpec::Dense { units }, ActShape::Flat(d)) => d * units + units,
                _ => 0,
            })
            .sum())
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, h, w) = self.input_shape;
        write!(f, "input={c}x{h}x{w};classes={};layers=", self.num_classes)?;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("bad network spec: {m}"));
        let mut input = None;
        let mut classes = None;
        let mut layers = None;
        for part in s.trim().split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad(part))?;
            match k.trim() {
                "input" => {
                    let dims = v
                        .split('x')
                        .map(|d| d.trim().parse::<usize>().map_err(|_| bad(v)))
                        .collect::<Result<Vec<_>>>()?;
                    let [c, h, w] = dims[..] else {
                        return Err(bad(v));
                    };
                    input = Some((c, h, w));
                }
                "classes" => classes = Some(v.trim().parse().map_err(|_| bad(v))?),
                "layers" => {
                    // Split on commas that are not inside parentheses.
                    let mut out = Vec::new();
                    let (mut depth, mut start) = (0, 0);
                    for (i, ch) in v.char_indices() {
                        match ch {
                            '(' => depth += 1,
                            ')' => depth -= 1,
                            ',' if depth == 0 => {
                                out.push(v[start..i].parse()?);
                                start = i + 1;
                            }
                            _ => {}
                        }
                    }
                    if !v[start..].trim().is_empty() {
                        out.push(v[start..].parse()?);
                    }
                    layers = Some(out);
                }
                other => return Err(bad(other)),
            }
        }
        NetworkSpec::new(
            input.ok_or_else(|| bad("missing input"))?,
            layers.ok_or_else(|| bad("missing layers"))?,
            classes.ok_or_else(|| bad("missing classes"))?,
        )
    }
}

/// Number of output classes (NC, MCI, AD).
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Full widths and depth.
    Paper,
    /// Reduced model for CPU-sized experiments.
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!(
                "unknown scale `{other}` (paper | desk)"
            ))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    DeepConvNet,
    AlexNet,
    Vgg16,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "deepconvnet" => Ok(Arch::DeepConvNet),
            "alexnet" => Ok(Arch::AlexNet),
            "vgg16" => Ok(Arch::Vgg16),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::DeepConvNet => "deepconvnet",
            Arch::AlexNet => "alexnet",
            Arch::Vgg16 => "vgg16",
        })
    }
}

/// Which hidden dense stack the Deep ConvNet uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FcVariant {
    /// 512, 256, 128, 64, 32, 16.
    #[default]
    Primary,
    /// 1024, 512, 256, 128, 64, 32.
    Alternate,
}

impl std::str::FromStr for FcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "primary" | "512" => Ok(FcVariant::Primary),
            "alternate" | "1024" => Ok(FcVariant::Alternate),
            other => Err(Error::Config(format!(
                "unknown fc variant `{other}` (primary | alternate)"
            ))),
        }
    }
}

impl fmt::Display for FcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FcVariant::Primary => "primary",
            FcVariant::Alternate => "alternate",
        })
    }
}

/// Block and dense-stack layout of the Deep ConvNet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeepConvNetLayout {
    /// Filters per conv block; one block is conv(3x3, same) → relu → maxpool(2, 2).
    pub block_filters: Vec<usize>,
    /// Hidden dense widths, each followed by relu.
    pub dense_units: Vec<usize>,
    pub kernel: usize,
}

impl DeepConvNetLayout {
    pub fn for_scale(scale: Scale, fc: FcVariant) -> Self {
        match scale {
            Scale::Paper => DeepConvNetLayout {
                block_filters: vec![4, 8, 16, 32, 64, 128],
                dense_units: match fc {
                    FcVariant::Primary => vec![512, 256, 128, 64, 32, 16],
                    FcVariant::Alternate => vec![1024, 512, 256, 128, 64, 32],
                },
                kernel: 3,
            },
            Scale::Desk => DeepConvNetLayout {
                block_filters: vec![4, 8, 16, 32],
                dense_units: vec![64, 32],
                kernel: 3,
            },
        }
    }
}

fn check_single_channel_square(input_shape: (usize, usize, usize)) -> Result<()> {
    let (c, h, w) = input_shape;
    if c != 1 || h != w {
        return Err(Error::Shape(format!(
            "expected a square single-channel input, got {c}x{h}x{w}"
        )));
    }
    Ok(())
}

pub fn build_deep_convnet(input_shape: (usize, usize, usize), scale: Scale) -> Result<NetworkSpec> {
    build_deep_convnet_with(
        input_shape,
        &DeepConvNetLayout::for_scale(scale, FcVariant::Primary),
    )
}

pub fn build_deep_convnet_with(
    input_shape: (usize, usize, usize),
    layout: &DeepConvNetLayout,
) -> Result<NetworkSpec> {
    check_single_channel_square(input_shape)?;
    let mut layers = Vec::new();
    for &f in &layout.block_filters {
        layers.push(LayerSpec::conv_same(f, layout.kernel));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        });
    }
    layers.push(LayerSpec::Flatten);
    for &u in &layout.dense_units {
        layers.push(LayerSpec::Dense { units: u });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    NetworkSpec::new(input_shape, layers, NUM_CLASSES)
}

fn scaled(width: usize, divisor: usize) -> usize {
    (width / divisor.max(1)).max(1)
}

/// AlexNet topology: five convolutions (11/4, 5, 3, 3, 3) with overlapping
/// 3x3 stride-2 pooling after the first, second and fifth, then three dense
/// layers. Widths are divided by `divisor`.
pub fn build_alexnet_scaled(
    input_shape: (usize, usize, usize),
    divisor: usize,
) -> Result<NetworkSpec> {
    check_single_channel_square(input_shape)?;
    let convs = [
        (96, 11, 4, 2),
        (256, 5, 1, 2),
        (384, 3, 1, 1),
        (384, 3, 1, 1),
        (256, 3, 1, 1),
    ];
    let mut layers = Vec::new();
    for (i, &(f, k, s, p)) in convs.iter().enumerate() {
        layers.push(LayerSpec::Conv {
            filters: scaled(f, divisor),
            kernel: k,
            stride: s,
            padding: p,
        });
        layers.push(LayerSpec::Relu);
        if matches!(i, 0 | 1 | 4) {
            layers.push(LayerSpec::MaxPool {
                window: 3,
                stride: 2,
            });
        }
    }
    layers.push(LayerSpec::Flatten);
    for _ in 0..2 {
        layers.push(LayerSpec::Dense {
            units: scaled(4096, divisor),
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    NetworkSpec::new(input_shape, layers, NUM_CLASSES)
}

/// VGG-16 topology: thirteen 3x3 convolutions grouped 2-2-3-3-3 with 2x2
/// pooling after each group, then three dense layers. Widths are divided by
/// `divisor`.
pub fn build_vgg16_scaled(
    input_shape: (usize, usize, usize),
    divisor: usize,
) -> Result<NetworkSpec> {
    check_single_channel_square(input_shape)?;
    let groups = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut layers = Vec::new();
    for &(f, reps) in &groups {
        for _ in 0..reps {
            layers.push(LayerSpec::conv_same(scaled(f, divisor), 3));
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        });
    }
    layers.push(LayerSpec::Flatten);
    for _ in 0..2 {
        layers.push(LayerSpec::Dense {
            units: scaled(4096, divisor),
        });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    NetworkSpec::new(input_shape, layers, NUM_CLASSES)
}

/// Width divisor used for the baselines at each scale.
pub fn default_divisor(scale: Scale) -> usize {
    match scale {
        Scale::Paper => 1,
        Scale::Desk => 8,
    }
}

/// Dispatches to the builder for `arch`.
pub fn build_arch(
    arch: Arch,
    input_shape: (usize, usize, usize),
    scale: Scale,
    divisor: Option<usize>,
    fc: FcVariant,
) -> Result<NetworkSpec> {
    let div = divisor.unwrap_or_else(|| default_divisor(scale));
    match arch {
        Arch::DeepConvNet => {
            build_deep_convnet_with(input_shape, &DeepConvNetLayout::for_scale(scale, fc))
        }
        Arch::AlexNet => build_alexnet_scaled(input_shape, div),
        Arch::Vgg16 => build_vgg16_scaled(input_shape, div),
    }
}
