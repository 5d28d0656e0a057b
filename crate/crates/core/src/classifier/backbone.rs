//! Backbone registry for the grade classifiers.
//!
//! Backbones are looked up by name and built through a common trait, so the
//! classifier head and training recipe are independent of the feature
//! extractor. The EfficientNet family is constructed from the canonical
//! stage table with compound width/depth scaling; a small custom backbone
//! ("TINY") keeps the test suite fast while exercising the same machinery.

use fundus_nn::{Conv2d, Layer, Sequential, SqueezeExcite, Swish};
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::util::groups_capped;

/// Which normalization to place after each convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Normalization {
    /// Group normalization; `num_groups` is reduced per layer to the
    /// largest divisor of the channel count not exceeding it.
    #[serde(rename = "GROUP")]
    Group {
        #[serde(default = "default_num_groups")]
        num_groups: usize,
    },
    /// Classic batch normalization with running statistics.
    #[serde(rename = "BATCH")]
    Batch,
}

fn default_num_groups() -> usize {
    32
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Group { num_groups: 32 }
    }
}

impl Normalization {
    pub fn validate(&self) -> CoreResult<()> {
        if let Normalization::Group { num_groups } = self {
            if *num_groups == 0 {
                return Err(PipelineError::Config(
                    "normalization num_groups must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Group count actually used for a layer with `channels` channels.
    pub fn effective_groups(&self, channels: usize) -> Option<usize> {
        match self {
            Normalization::Group { num_groups } => Some(groups_capped(channels, *num_groups)),
            Normalization::Batch => None,
        }
    }

    fn build(&self, name: &str, channels: usize) -> Box<dyn Layer> {
        match self {
            Normalization::Group { num_groups } => Box::new(fundus_nn::GroupNorm::new(
                name,
                channels,
                groups_capped(channels, *num_groups),
            )),
            Normalization::Batch => Box::new(fundus_nn::BatchNorm2d::new(name, channels)),
        }
    }
}

/// One stage of the EfficientNet table: expansion factor, output channels,
/// repeats, first-block stride, and depthwise kernel size.
#[derive(Clone, Copy, Debug)]
pub struct StageDef {
    pub expand: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub kernel: usize,
}

/// The EfficientNet-B0 baseline stage table.
pub const B0_STAGES: [StageDef; 7] = [
    StageDef { expand: 1, channels: 16, repeats: 1, stride: 1, kernel: 3 },
    StageDef { expand: 6, channels: 24, repeats: 2, stride: 2, kernel: 3 },
    StageDef { expand: 6, channels: 40, repeats: 2, stride: 2, kernel: 5 },
    StageDef { expand: 6, channels: 80, repeats: 3, stride: 2, kernel: 3 },
    StageDef { expand: 6, channels: 112, repeats: 3, stride: 1, kernel: 5 },
    StageDef { expand: 6, channels: 192, repeats: 4, stride: 2, kernel: 5 },
    StageDef { expand: 6, channels: 320, repeats: 1, stride: 1, kernel: 3 },
];

const B0_STEM_CHANNELS: usize = 32;
const B0_HEAD_CHANNELS: usize = 1280;
const FILTER_DIVISOR: usize = 8;

/// Width-scale a channel count to a multiple of 8, never dropping more than
/// 10% below the scaled target.
pub fn round_filters(channels: usize, width: f64) -> usize {
    let scaled = channels as f64 * width;
    let mut out = (((scaled + FILTER_DIVISOR as f64 / 2.0) as usize) / FILTER_DIVISOR)
        * FILTER_DIVISOR;
    out = out.max(FILTER_DIVISOR);
    if (out as f64) < 0.9 * scaled {
        out += FILTER_DIVISOR;
    }
    out
}

/// Depth-scale a repeat count (ceiling).
pub fn round_repeats(repeats: usize, depth: f64) -> usize {
    (repeats as f64 * depth).ceil() as usize
}

/// A mobile inverted-bottleneck block: 1x1 expansion, depthwise conv,
/// squeeze-excite, 1x1 projection, with a residual shortcut when the shapes
/// allow it.
pub(crate) struct MBConv {
    body: Sequential,
    residual: bool,
}

impl MBConv {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        expand: usize,
        kernel: usize,
        stride: usize,
        norm: Normalization,
        rng: &mut ChaCha8Rng,
    ) -> MBConv {
        let expanded = in_ch * expand;
        let mut body = Sequential::new();
        if expand != 1 {
            body.push(Conv2d::new(
                &format!("{name}.expand"),
                in_ch,
                expanded,
                1,
                1,
                0,
                1,
                false,
                rng,
            ));
            body.push_boxed(norm.build(&format!("{name}.expand_norm"), expanded));
            body.push(Swish::new());
        }
        body.push(Conv2d::new(
            &format!("{name}.dw"),
            expanded,
            expanded,
            kernel,
            stride,
            kernel / 2,
            expanded,
            false,
            rng,
        ));
        body.push_boxed(norm.build(&format!("{name}.dw_norm"), expanded));
        body.push(Swish::new());
        body.push(SqueezeExcite::new(
            &format!("{name}.se"),
            expanded,
            (in_ch / 4).max(1),
            rng,
        ));
        body.push(Conv2d::new(
            &format!("{name}.project"),
            expanded,
            out_ch,
            1,
            1,
            0,
            1,
            false,
            rng,
        ));
        body.push_boxed(norm.build(&format!("{name}.project_norm"), out_ch));
        MBConv {
            body,
            residual: stride == 1 && in_ch == out_ch,
        }
    }
}

impl Layer for MBConv {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        if self.residual {
            let mut y = self.body.forward(x.clone(), train);
            y += &x;
            y
        } else {
            self.body.forward(x, train)
        }
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        if self.residual {
            let mut dx = self.body.backward(grad.clone());
            dx += &grad;
            dx
        } else {
            self.body.backward(grad)
        }
    }

    fn params_mut(&mut self) -> Vec<&mut fundus_nn::Param> {
        Layer::params_mut(&mut self.body)
    }

    fn buffers_mut(&mut self) -> Vec<&mut fundus_nn::Param> {
        Layer::buffers_mut(&mut self.body)
    }
}

/// A feature extractor buildable from a spec: maps `[N,3,H,W]` to
/// `[N,C,H',W']` feature maps with `C = feature_channels()`.
pub trait Backbone {
    /// Registry name, as accepted in configuration files.
    fn id(&self) -> &'static str;
    /// Number of output feature channels.
    fn feature_channels(&self) -> usize;
    /// Number of mobile inverted-bottleneck blocks.
    fn block_count(&self) -> usize;
    /// Construct the feature extractor.
    fn build(&self, norm: Normalization, seed: u64) -> Sequential;
}

/// EfficientNet with compound width/depth scaling applied to the B0 table.
pub struct ScaledEfficientNet {
    name: &'static str,
    width: f64,
    depth: f64,
}

impl ScaledEfficientNet {
    /// Per-stage (output channels, repeats) after scaling.
    pub fn scaled_stages(&self) -> Vec<(usize, usize)> {
        B0_STAGES
            .iter()
            .map(|s| {
                (
                    round_filters(s.channels, self.width),
                    round_repeats(s.repeats, self.depth),
                )
            })
            .collect()
    }

    pub fn stem_channels(&self) -> usize {
        round_filters(B0_STEM_CHANNELS, self.width)
    }
}

impl Backbone for ScaledEfficientNet {
    fn id(&self) -> &'static str {
        self.name
    }

    fn feature_channels(&self) -> usize {
        round_filters(B0_HEAD_CHANNELS, self.width)
    }

    fn block_count(&self) -> usize {
        B0_STAGES
            .iter()
            .map(|s| round_repeats(s.repeats, self.depth))
            .sum()
    }

    fn build(&self, norm: Normalization, seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "clf-backbone"));
        let mut net = Sequential::new();

        let stem = self.stem_channels();
        net.push(Conv2d::new("stem.conv", 3, stem, 3, 2, 1, 1, false, &mut rng));
        net.push_boxed(norm.build("stem.norm", stem));
        net.push(Swish::new());

        let mut in_ch = stem;
        for (si, stage) in B0_STAGES.iter().enumerate() {
            let out_ch = round_filters(stage.channels, self.width);
            let repeats = round_repeats(stage.repeats, self.depth);
            for r in 0..repeats {
                let stride = if r == 0 { stage.stride } else { 1 };
                net.push(MBConv::new(
                    &format!("s{si}b{r}"),
                    in_ch,
                    out_ch,
                    stage.expand,
                    stage.kernel,
                    stride,
                    norm,
                    &mut rng,
                ));
                in_ch = out_ch;
            }
        }

        let head = self.feature_channels();
        net.push(Conv2d::new("top.conv", in_ch, head, 1, 1, 0, 1, false, &mut rng));
        net.push_boxed(norm.build("top.norm", head));
        net.push(Swish::new());
        net
    }
}

/// Three-stage miniature backbone for tests and smoke runs. Same block
/// machinery as the EfficientNet variants, a fraction of the compute.
pub struct TinyBackbone;

const TINY_STAGES: [StageDef; 3] = [
    StageDef { expand: 1, channels: 8, repeats: 1, stride: 1, kernel: 3 },
    StageDef { expand: 6, channels: 16, repeats: 2, stride: 2, kernel: 3 },
    StageDef { expand: 6, channels: 24, repeats: 2, stride: 2, kernel: 5 },
];
const TINY_STEM: usize = 8;
const TINY_HEAD: usize = 64;

impl Backbone for TinyBackbone {
    fn id(&self) -> &'static str {
        "TINY"
    }

    fn feature_channels(&self) -> usize {
        TINY_HEAD
    }

    fn block_count(&self) -> usize {
        TINY_STAGES.iter().map(|s| s.repeats).sum()
    }

    fn build(&self, norm: Normalization, seed: u64) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "clf-backbone"));
        let mut net = Sequential::new();
        net.push(Conv2d::new("stem.conv", 3, TINY_STEM, 3, 2, 1, 1, false, &mut rng));
        net.push_boxed(norm.build("stem.norm", TINY_STEM));
        net.push(Swish::new());
        let mut in_ch = TINY_STEM;
        for (si, stage) in TINY_STAGES.iter().enumerate() {
            for r in 0..stage.repeats {
                let stride = if r == 0 { stage.stride } else { 1 };
                net.push(MBConv::new(
                    &format!("s{si}b{r}"),
                    in_ch,
                    stage.channels,
                    stage.expand,
                    stage.kernel,
                    stride,
                    norm,
                    &mut rng,
                ));
                in_ch = stage.channels;
            }
        }
        net.push(Conv2d::new("top.conv", in_ch, TINY_HEAD, 1, 1, 0, 1, false, &mut rng));
        net.push_boxed(norm.build("top.norm", TINY_HEAD));
        net.push(Swish::new());
        net
    }
}

/// Look a backbone up by its registry name.
pub fn backbone(name: &str) -> CoreResult<Box<dyn Backbone>> {
    match name.trim().to_ascii_uppercase().as_str() {
        "EFFICIENTNET_B5" => Ok(Box::new(ScaledEfficientNet {
            name: "EFFICIENTNET_B5",
            width: 1.6,
            depth: 2.2,
        })),
        "EFFICIENTNET_B0" => Ok(Box::new(ScaledEfficientNet {
            name: "EFFICIENTNET_B0",
            width: 1.0,
            depth: 1.0,
        })),
        "TINY" => Ok(Box::new(TinyBackbone)),
        other => Err(PipelineError::Config(format!(
            "unknown backbone '{other}'; known: EFFICIENTNET_B5, EFFICIENTNET_B0, TINY"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b5_scaling_reproduces_the_published_channel_and_repeat_table() {
        let b5 = ScaledEfficientNet {
            name: "EFFICIENTNET_B5",
            width: 1.6,
            depth: 2.2,
        };
        assert_eq!(b5.stem_channels(), 48);
        assert_eq!(b5.feature_channels(), 2048);
        let stages = b5.scaled_stages();
        let channels: Vec<usize> = stages.iter().map(|&(c, _)| c).collect();
        let repeats: Vec<usize> = stages.iter().map(|&(_, r)| r).collect();
        assert_eq!(channels, vec![24, 40, 64, 128, 176, 304, 512]);
        assert_eq!(repeats, vec![3, 5, 5, 7, 7, 9, 3]);
        assert_eq!(b5.block_count(), 39);
    }

    #[test]
    fn b0_scaling_is_the_identity_on_the_base_table() {
        let b0 = ScaledEfficientNet {
            name: "EFFICIENTNET_B0",
            width: 1.0,
            depth: 1.0,
        };
        assert_eq!(b0.stem_channels(), 32);
        assert_eq!(b0.feature_channels(), 1280);
        let stages = b0.scaled_stages();
        assert_eq!(
            stages.iter().map(|&(c, _)| c).collect::<Vec<_>>(),
            vec![16, 24, 40, 80, 112, 192, 320]
        );
        assert_eq!(
            stages.iter().map(|&(_, r)| r).collect::<Vec<_>>(),
            vec![1, 2, 2, 3, 3, 4, 1]
        );
    }

    #[test]
    fn round_filters_respects_divisor_and_floor_rules() {
        // Multiples of 8 near the scaled value.
        assert_eq!(round_filters(32, 1.6), 48);
        assert_eq!(round_filters(112, 1.6), 176);
        // Never drops below 90% of the scaled target.
        assert_eq!(round_filters(24, 1.6), 40);
        // Lower bound.
        assert_eq!(round_filters(8, 0.1), 8);
    }

    #[test]
    fn unknown_backbone_is_a_config_error_listing_known_names() {
        let err = backbone("RESNET").err().unwrap();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("EFFICIENTNET_B5") && msg.contains("TINY"));
    }

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(backbone("tiny").unwrap().id(), "TINY");
        assert_eq!(
            backbone("efficientnet_b5").unwrap().id(),
            "EFFICIENTNET_B5"
        );
    }

    #[test]
    fn normalization_toml_round_trip() {
        #[derive(Serialize, Deserialize)]
        struct Holder {
            normalization: Normalization,
        }
        let group: Holder =
            toml::from_str("normalization = { kind = \"GROUP\", num_groups = 16 }").unwrap();
        assert_eq!(group.normalization, Normalization::Group { num_groups: 16 });
        let batch: Holder = toml::from_str("normalization = { kind = \"BATCH\" }").unwrap();
        assert_eq!(batch.normalization, Normalization::Batch);
        let default_groups: Holder =
            toml::from_str("normalization = { kind = \"GROUP\" }").unwrap();
        assert_eq!(
            default_groups.normalization,
            Normalization::Group { num_groups: 32 }
        );
    }

    #[test]
    fn effective_groups_reduce_to_a_divisor() {
        let norm = Normalization::Group { num_groups: 32 };
        assert_eq!(norm.effective_groups(64), Some(32));
        assert_eq!(norm.effective_groups(48), Some(24));
        assert_eq!(norm.effective_groups(7), Some(7));
        assert_eq!(Normalization::Batch.effective_groups(64), None);
    }
}
