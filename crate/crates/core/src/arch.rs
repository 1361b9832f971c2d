//! Declarative architecture descriptions and the five preset networks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvGeometry, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    Cnn2,
    Cnn4,
    Resnet4,
    Densenet4,
    Cldnn,
    /// Any user-defined wiring; only the generic invariants are enforced.
    Custom,
}

impl ArchId {
    pub const PRESETS: [ArchId; 5] = [
        ArchId::Cnn2,
        ArchId::Cnn4,
        ArchId::Resnet4,
        ArchId::Densenet4,
        ArchId::Cldnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchId::Cnn2 => "cnn2",
            ArchId::Cnn4 => "cnn4",
            ArchId::Resnet4 => "resnet4",
            ArchId::Densenet4 => "densenet4",
            ArchId::Cldnn => "cldnn",
            ArchId::Custom => "custom",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn2" => Ok(ArchId::Cnn2),
            "cnn4" => Ok(ArchId::Cnn4),
            "resnet4" | "resnet" => Ok(ArchId::Resnet4),
            "densenet4" | "densenet" => Ok(ArchId::Densenet4),
            "cldnn" => Ok(ArchId::Cldnn),
            "custom" => Ok(ArchId::Custom),
            other => Err(Error::config(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    /// `[height, width]`
    pub kernel: [usize; 2],
    /// `[height, width]`
    pub padding: [Padding; 2],
    pub activation: Activation,
    /// Whether dropout (at the network's rate) follows this layer.
    pub dropout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub dropout: bool,
}

/// Adds the output of conv layer `from` (optionally through a 1x1
/// projection) to the activated output of conv layer `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    pub from: usize,
    pub to: usize,
    pub projection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Each conv layer consumes the previous layer's output.
    #[default]
    Sequential,
    /// Each conv layer consumes the channel concatenation of the raw input
    /// and every earlier conv output.
    DenselyConnected,
}

/// A complete network description. The last dense layer is the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub arch: ArchId,
    /// Input frame `[height, width]`; a single input channel.
    pub input: [usize; 2],
    pub conv: Vec<ConvLayerSpec>,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub shortcuts: Vec<ShortcutSpec>,
    #[serde(default)]
    pub recurrent: Option<RecurrentSpec>,
    pub dense: Vec<DenseLayerSpec>,
    pub num_classes: usize,
    pub dropout_rate: f64,
}

/// Frame geometry of the standard datasets: I and Q rows of 128 samples.
pub const FRAME_HEIGHT: usize = 2;
pub const FRAME_LEN: usize = 128;
pub const DEFAULT_CLASSES: usize = 10;
pub const DEFAULT_DROPOUT: f64 = 0.6;
pub const HIDDEN_DENSE_UNITS: usize = 128;
pub const CLDNN_UNITS: usize = 50;

fn conv(filters: usize, kernel: [usize; 2], padding: [Padding; 2]) -> ConvLayerSpec {
    ConvLayerSpec {
        filters,
        kernel,
        padding,
        activation: Activation::Relu,
        dropout: true,
    }
}

fn head(num_classes: usize) -> Vec<DenseLayerSpec> {
    vec![
        DenseLayerSpec {
            units: HIDDEN_DENSE_UNITS,
            activation: Activation::Relu,
            dropout: true,
        },
        DenseLayerSpec {
            units: num_classes,
            activation: Activation::Softmax,
            dropout: false,
        },
    ]
}

const VALID_SAME: [Padding; 2] = [Padding::Valid, Padding::Same];
const SAME_SAME: [Padding; 2] = [Padding::Same, Padding::Same];

/// Per-conv-layer geometry resolved from a spec.
#[derive(Debug, Clone)]
pub struct Layout {
    pub convs: Vec<ConvGeometry>,
    /// `(channels, height, width)` of the trunk output.
    pub trunk: (usize, usize, usize),
    /// Inputs of the first dense layer.
    pub head_inputs: usize,
}

impl ArchitectureSpec {
    /// Preset for `arch` with the default frame geometry.
    pub fn preset(arch: ArchId, num_classes: usize, dropout_rate: f64) -> Result<Self> {
        let trunk4 = |padding| {
            vec![
                conv(256, [1, 3], padding),
                conv(256, [2, 3], padding),
                conv(80, [1, 3], padding),
                conv(80, [1, 3], padding),
            ]
        };
        let mut spec = ArchitectureSpec {
            arch,
            input: [FRAME_HEIGHT, FRAME_LEN],
            conv: Vec::new(),
            connectivity: Connectivity::Sequential,
            shortcuts: Vec::new(),
            recurrent: None,
            dense: head(num_classes),
            num_classes,
            dropout_rate,
        };
        match arch {
            ArchId::Cnn2 => {
                spec.conv = vec![conv(256, [1, 3], VALID_SAME), conv(80, [2, 3], VALID_SAME)];
            }
            ArchId::Cnn4 => spec.conv = trunk4(VALID_SAME),
            ArchId::Resnet4 => {
                spec.conv = trunk4(SAME_SAME);
                spec.shortcuts = vec![ShortcutSpec {
                    from: 0,
                    to: 2,
                    projection: true,
                }];
            }
            ArchId::Densenet4 => {
                spec.conv = vec![
                    conv(256, [1, 3], SAME_SAME),
                    conv(128, [2, 3], SAME_SAME),
                    conv(80, [1, 3], SAME_SAME),
                    conv(80, [1, 3], SAME_SAME),
                ];
                spec.connectivity = Connectivity::DenselyConnected;
            }
            ArchId::Cldnn => {
                spec.conv = trunk4(VALID_SAME);
                spec.recurrent = Some(RecurrentSpec { units: CLDNN_UNITS });
            }
            ArchId::Custom => {
                return Err(Error::config("custom architectures have no preset"));
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Multiplies every conv filter count and the hidden dense width by
    /// `factor` (at least one unit each), keeping wiring and frame geometry.
    /// Used for cheap structural checks of the presets.
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        for c in &mut self.conv {
            c.filters = s(c.filters);
        }
        let last = self.dense.len().saturating_sub(1);
        for d in &mut self.dense[..last] {
            d.units = s(d.units);
        }
        self
    }

    pub fn with_input(mut self, height: usize, width: usize) -> Self {
        self.input = [height, width];
        self
    }

    pub fn layer_count(&self) -> usize {
        self.conv.len() + self.dense.len() + usize::from(self.recurrent.is_some())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("architecture JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }

    /// Checks every structural invariant and resolves the layer geometry.
    pub fn layout(&self) -> Result<Layout> {
        if self.layer_count() == 0 {
            return Err(Error::config("architecture has no layers"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("class count must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        let [in_h, in_w] = self.input;
        if in_h == 0 || in_w == 0 {
            return Err(Error::config(format!("input extent {:?} must be positive", self.input)));
        }
        let Some(last) = self.dense.last() else {
            return Err(Error::config("architecture needs a final dense classifier"));
        };
        if last.units != self.num_classes || last.activation != Activation::Softmax {
            return Err(Error::config(format!(
                "final dense layer must be a {}-way softmax, got {} units with {:?}",
                self.num_classes, last.units, last.activation
            )));
        }
        if let Some(d) = self.dense[..self.dense.len() - 1]
            .iter()
            .find(|d| d.units == 0 || d.activation == Activation::Softmax)
        {
            return Err(Error::config(format!("invalid hidden dense layer {d:?}")));
        }

        let mut convs = Vec::with_capacity(self.conv.len());
        let mut shape = (1, in_h, in_w);
        let mut concat_channels = 1;
        for (i, c) in self.conv.iter().enumerate() {
            if c.filters == 0 || c.kernel[1] == 0 || !(1..=2).contains(&c.kernel[0]) {
                return Err(Error::config(format!(
                    "conv layer {i}: {} filters of {:?} (height must be 1 or 2)",
                    c.filters, c.kernel
                )));
            }
            if c.activation == Activation::Softmax {
                return Err(Error::config(format!("conv layer {i} cannot use softmax")));
            }
            let input = match self.connectivity {
                Connectivity::Sequential => shape,
                Connectivity::DenselyConnected => (concat_channels, in_h, in_w),
            };
            let g = ConvGeometry::new(
                input,
                (c.filters, c.kernel[0], c.kernel[1]),
                (c.padding[0], c.padding[1]),
            )
            .ok_or_else(|| {
                Error::config(format!("conv layer {i}: filter {:?} exceeds input {input:?}", c.kernel))
            })?;
            if self.connectivity == Connectivity::DenselyConnected && (g.out_h, g.out_w) != (in_h, in_w) {
                return Err(Error::config(format!(
                    "densely connected conv layer {i} must preserve the {in_h}x{in_w} map"
                )));
            }
            shape = (g.out_c, g.out_h, g.out_w);
            concat_channels += g.out_c;
            convs.push(g);
        }

        for s in &self.shortcuts {
            if self.connectivity == Connectivity::DenselyConnected {
                return Err(Error::config("shortcuts cannot be combined with dense connectivity"));
            }
            if s.from >= s.to || s.to >= convs.len() {
                return Err(Error::config(format!("shortcut {s:?} out of range")));
            }
            let (src, dst) = (&convs[s.from], &convs[s.to]);
            if (src.out_h, src.out_w) != (dst.out_h, dst.out_w) {
                return Err(Error::config(format!("shortcut {s:?} joins maps of different size")));
            }
            if !s.projection && src.out_c != dst.out_c {
                return Err(Error::config(format!(
                    "shortcut {s:?} joins {} and {} channels without projection",
                    src.out_c, dst.out_c
                )));
            }
        }
        if let Some(r) = self.recurrent {
            if r.units == 0 {
                return Err(Error::config("recurrent layer needs at least one unit"));
            }
        }

        self.check_preset_invariants(&convs)?;

        let head_inputs = match self.recurrent {
            Some(r) => r.units,
            None => shape.0 * shape.1 * shape.2,
        };
        Ok(Layout {
            convs,
            trunk: shape,
            head_inputs,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.layout().map(|_| ())
    }

    fn check_preset_invariants(&self, convs: &[ConvGeometry]) -> Result<()> {
        let want_convs = match self.arch {
            ArchId::Cnn2 => Some(2),
            ArchId::Cnn4 | ArchId::Resnet4 | ArchId::Densenet4 | ArchId::Cldnn => Some(4),
            ArchId::Custom => None,
        };
        if let Some(n) = want_convs {
            if convs.len() != n {
                return Err(Error::config(format!("{} needs {n} conv layers, got {}", self.arch, convs.len())));
            }
        }
        match self.arch {
            ArchId::Resnet4 => {
                if self.shortcuts.len() != 1 || self.shortcuts[0].to != self.shortcuts[0].from + 2 {
                    return Err(Error::config(
                        "resnet4 needs exactly one shortcut spanning two conv layers",
                    ));
                }
            }
            ArchId::Densenet4 => {
                if self.connectivity != Connectivity::DenselyConnected {
                    return Err(Error::config("densenet4 needs densely connected conv layers"));
                }
            }
            ArchId::Cldnn => {
                if self.recurrent != Some(RecurrentSpec { units: CLDNN_UNITS }) {
                    return Err(Error::config(format!(
                        "cldnn needs one recurrent layer with {CLDNN_UNITS} units"
                    )));
                }
            }
            _ => {}
        }
        if self.arch != ArchId::Custom && self.arch != ArchId::Resnet4 && !self.shortcuts.is_empty() {
            return Err(Error::config(format!("{} has no shortcuts", self.arch)));
        }
        if self.arch != ArchId::Custom && self.arch != ArchId::Cldnn && self.recurrent.is_some() {
            return Err(Error::config(format!("{} has no recurrent layer", self.arch)));
        }
        Ok(())
    }

    /// Named parameter shapes in network order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let layout = self.layout()?;
        let mut shapes = Vec::new();
        for (i, g) in layout.convs.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![g.out_c, g.in_c, g.kh, g.kw]));
            shapes.push((format!("conv{i}.bias"), vec![g.out_c]));
        }
        for (i, s) in self.shortcuts.iter().enumerate() {
            if s.projection {
                let (src, dst) = (&layout.convs[s.from], &layout.convs[s.to]);
                shapes.push((format!("shortcut{i}.weight"), vec![dst.out_c, src.out_c, 1, 1]));
                shapes.push((format!("shortcut{i}.bias"), vec![dst.out_c]));
            }
        }
        if let Some(r) = self.recurrent {
            let features = layout.trunk.0 * layout.trunk.1;
            shapes.push(("lstm.w_ih".into(), vec![4 * r.units, features]));
            shapes.push(("lstm.w_hh".into(), vec![4 * r.units, r.units]));
            shapes.push(("lstm.bias".into(), vec![4 * r.units]));
        }
        let mut inputs = layout.head_inputs;
        for (i, d) in self.dense.iter().enumerate() {
            shapes.push((format!("dense{i}.weight"), vec![inputs, d.units]));
            shapes.push((format!("dense{i}.bias"), vec![d.units]));
            inputs = d.units;
        }
        Ok(shapes)
    }
}

/// Total trainable scalar count of a spec.
pub fn param_count(spec: &ArchitectureSpec) -> Result<usize> {
    Ok(spec
        .param_shapes()?
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for id in ArchId::PRESETS {
            let spec = ArchitectureSpec::preset(id, 10, 0.6).unwrap();
            assert_eq!(spec.arch, id);
        }
        assert!(ArchitectureSpec::preset(ArchId::Custom, 10, 0.6).is_err());
    }

    #[test]
    fn cnn2_param_count_matches_hand_formula() {
        // conv1 256*(1*3*1)+256; conv2 80*(2*3*256)+80; dense 10240*128+128; dense 128*10+10
        let hand = (256 * 3 + 256) + (80 * (2 * 3 * 256) + 80) + (10240 * 128 + 128) + (128 * 10 + 10);
        assert_eq!(hand, 1_436_122);
        let spec = ArchitectureSpec::preset(ArchId::Cnn2, 10, 0.6).unwrap();
        assert_eq!(param_count(&spec).unwrap(), hand);
    }

    #[test]
    fn single_dense_layer_count() {
        let spec = ArchitectureSpec {
            arch: ArchId::Custom,
            input: [1, 2],
            conv: vec![],
            connectivity: Connectivity::Sequential,
            shortcuts: vec![],
            recurrent: None,
            dense: vec![DenseLayerSpec {
                units: 3,
                activation: Activation::Softmax,
                dropout: false,
            }],
            num_classes: 3,
            dropout_rate: 0.0,
        };
        assert_eq!(param_count(&spec).unwrap(), 9);
    }

    #[test]
    fn empty_spec_rejected() {
        let spec = ArchitectureSpec {
            arch: ArchId::Custom,
            input: [2, 128],
            conv: vec![],
            connectivity: Connectivity::Sequential,
            shortcuts: vec![],
            recurrent: None,
            dense: vec![],
            num_classes: 10,
            dropout_rate: 0.0,
        };
        assert!(matches!(param_count(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn resnet_shortcut_spans_two_layers() {
        let spec = ArchitectureSpec::preset(ArchId::Resnet4, 10, 0.6).unwrap();
        assert_eq!(spec.shortcuts.len(), 1);
        assert_eq!(spec.shortcuts[0].to - spec.shortcuts[0].from, 2);
        let mut bad = spec.clone();
        bad.shortcuts[0].to = 1;
        assert!(bad.validate().is_err());
        let mut no_proj = spec;
        no_proj.shortcuts[0].projection = false;
        assert!(no_proj.validate().is_err(), "256 -> 80 channels needs a projection");
    }

    #[test]
    fn densenet_channel_growth() {
        let spec = ArchitectureSpec::preset(ArchId::Densenet4, 10, 0.6).unwrap();
        let layout = spec.layout().unwrap();
        let mut expected = 1;
        for (g, c) in layout.convs.iter().zip(&spec.conv) {
            assert_eq!(g.in_c, expected);
            expected += c.filters;
        }
        assert_eq!(layout.convs.iter().map(|g| g.in_c).collect::<Vec<_>>(), vec![1, 257, 385, 465]);
    }

    #[test]
    fn cldnn_has_one_fifty_unit_lstm() {
        let spec = ArchitectureSpec::preset(ArchId::Cldnn, 10, 0.6).unwrap();
        assert_eq!(spec.recurrent, Some(RecurrentSpec { units: 50 }));
        let mut bad = spec;
        bad.recurrent = Some(RecurrentSpec { units: 10 });
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        for id in ArchId::PRESETS {
            let spec = ArchitectureSpec::preset(id, 11, 0.5).unwrap();
            assert_eq!(ArchitectureSpec::from_json(&spec.to_json()).unwrap(), spec);
        }
    }

    #[test]
    fn arch_names_parse() {
        for id in ArchId::PRESETS {
            assert_eq!(id.name().parse::<ArchId>().unwrap(), id);
        }
        assert!("vgg".parse::<ArchId>().is_err());
    }
}
