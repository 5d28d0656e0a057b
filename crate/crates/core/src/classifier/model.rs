//! The grade classifier: backbone features, global-average-pool head with
//! dropout, and a 5-output dense layer read through sigmoids as cumulative
//! ordinal scores.

use fundus_nn::{sigmoid, Dense, Dropout, GlobalAvgPool, Layer, Model, Param, Sequential};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{backbone, Normalization};
use super::ordinal::NUM_GRADES;
use crate::dataio::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::preprocess::resize_rgb;
use crate::types::FundusImage;

/// Minimum input edge so every stride survives with a nonempty feature map.
pub const MIN_INPUT_EDGE: usize = 32;

/// Configuration of one grade classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    /// Backbone registry name: EFFICIENTNET_B5, EFFICIENTNET_B0, or TINY.
    pub backbone: String,
    /// Input resolution (height, width); channels are always 3.
    pub input_size: (usize, usize),
    pub normalization: Normalization,
    /// Dropout probability between pooling and the final dense layer.
    pub dropout_rate: f64,
    /// Loading bundled pretrained weights is not supported; `true` fails at
    /// build time with a pointer to the conversion route.
    pub pretrained: bool,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            backbone: "EFFICIENTNET_B5".into(),
            input_size: (224, 224),
            normalization: Normalization::default(),
            dropout_rate: 0.5,
            pretrained: false,
        }
    }
}

impl ClassifierSpec {
    /// The small test-suite configuration: TINY backbone at a reduced
    /// resolution, no dropout noise.
    pub fn tiny(input_edge: usize) -> Self {
        ClassifierSpec {
            backbone: "TINY".into(),
            input_size: (input_edge, input_edge),
            dropout_rate: 0.0,
            ..ClassifierSpec::default()
        }
    }

    pub fn validate(&self) -> CoreResult<()> {
        backbone(&self.backbone)?;
        self.normalization.validate()?;
        if self.input_size.0 < MIN_INPUT_EDGE || self.input_size.1 < MIN_INPUT_EDGE {
            return Err(PipelineError::Config(format!(
                "classifier input_size must be at least {MIN_INPUT_EDGE}x{MIN_INPUT_EDGE}, got {}x{}",
                self.input_size.0, self.input_size.1
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(PipelineError::Config(format!(
                "classifier dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A built classifier: features -> GAP -> dropout -> dense(5). Sigmoid is
/// applied when reading scores; training consumes the raw logits.
pub struct Classifier {
    spec: ClassifierSpec,
    net: Sequential,
}

/// Build a classifier from its spec. Deterministic given `seed`.
pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> CoreResult<Classifier> {
    spec.validate()?;
    if spec.pretrained {
        return Err(PipelineError::Config(format!(
            "backbone '{}': no pretrained weights are bundled with this tool; set \
             pretrained = false to train from scratch, or convert published ImageNet \
             EfficientNet weights into a native checkpoint (see README, section \
             'Pretrained weights') and pass it via --checkpoint",
            spec.backbone
        )));
    }
    let bb = backbone(&spec.backbone)?;
    let mut net = bb.build(spec.normalization, seed);
    net.push(GlobalAvgPool::new());
    if spec.dropout_rate > 0.0 {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "clf-head-dropout"));
        net.push(Dropout::new(spec.dropout_rate as f32, rng));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "clf-head"));
    net.push(Dense::new_xavier(
        "head.fc",
        bb.feature_channels(),
        NUM_GRADES,
        &mut rng,
    ));
    Ok(Classifier {
        spec: spec.clone(),
        net,
    })
}

impl Classifier {
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    /// Raw head outputs (`[N,5]` logits) for a `[N,3,H,W]` input in `[0,1]`.
    pub fn forward_logits(&mut self, x: ArrayD<f32>, train: bool) -> CoreResult<ArrayD<f32>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(PipelineError::Config(format!(
                "classifier input must be [N,3,H,W], got {shape:?}"
            )));
        }
        if (shape[2], shape[3]) != self.spec.input_size {
            return Err(PipelineError::Config(format!(
                "classifier input is {}x{}, spec expects {}x{}",
                shape[2], shape[3], self.spec.input_size.0, self.spec.input_size.1
            )));
        }
        Ok(self.net.forward(x, train))
    }

    pub fn backward(&mut self, grad: ArrayD<f32>) {
        self.net.backward(grad);
    }

    /// Sigmoid scores (`[N,5]`, each in (0,1)), evaluation mode.
    pub fn forward_scores(&mut self, x: ArrayD<f32>) -> CoreResult<ArrayD<f32>> {
        Ok(sigmoid(&self.forward_logits(x, false)?))
    }

    /// Tensorize an image for this classifier, resizing when needed.
    pub fn image_to_input(&self, image: &FundusImage) -> CoreResult<ArrayD<f32>> {
        let (th, tw) = self.spec.input_size;
        let (h, w, _) = image.pixels.dim();
        let resized;
        let px = if (h, w) == (th, tw) {
            &image.pixels
        } else {
            resized = resize_rgb(&image.pixels, th, tw)?;
            &resized
        };
        Ok(ArrayD::from_shape_fn(IxDyn(&[1, 3, th, tw]), |ix| {
            f32::from(px[[ix[2], ix[3], ix[1]]]) / 255.0
        }))
    }

    /// Score one image: `[5]` sigmoid scores.
    pub fn score_image(&mut self, image: &FundusImage) -> CoreResult<[f32; NUM_GRADES]> {
        let x = self.image_to_input(image)?;
        let scores = self.forward_scores(x)?;
        let mut out = [0.0; NUM_GRADES];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = scores[[0, i]];
        }
        Ok(out)
    }
}

impl Model for Classifier {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Layer::params_mut(&mut self.net)
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Layer::buffers_mut(&mut self.net)
    }
}
