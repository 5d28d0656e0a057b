//! The nested-skip segmentation network itself.

use std::collections::HashMap;

use fundus_nn::{
    Conv2d, ConvTranspose2d, Dropout, GroupNorm, Layer, Model, Param, ReLU, Sequential,
    SigmoidLayer,
};
use ndarray::{concatenate, ArrayD, Axis, Slice};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wiring::{build_wiring, validate_wiring, NodeWiring};
use crate::dataio::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::util::groups_capped;

/// Architecture description of the segmentation network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegNetworkSpec {
    /// Number of downsampling steps; the grid has `depth + 1` rows.
    pub depth: usize,
    /// Channels at row 0; row `i` has `base_channels * 2^i`.
    pub base_channels: usize,
    /// `true` adds the down-fusion edge `Down(X(i-1,j))` to every interior
    /// node; `false` is the standard nested-skip wiring.
    pub modified: bool,
    /// Dropout probability applied at the end of every node body.
    pub dropout_rate: f64,
    /// L2 weight-decay coefficient applied by the optimizer.
    pub l2_coefficient: f64,
    /// Explicit wiring override; `None` derives it from `depth`/`modified`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wiring: Option<Vec<NodeWiring>>,
}

impl Default for SegNetworkSpec {
    fn default() -> Self {
        SegNetworkSpec {
            depth: 4,
            base_channels: 32,
            modified: true,
            dropout_rate: 0.5,
            l2_coefficient: 1e-5,
            wiring: None,
        }
    }
}

impl SegNetworkSpec {
    /// A small spec for tests and smoke runs.
    pub fn tiny(depth: usize, base_channels: usize) -> Self {
        SegNetworkSpec {
            depth,
            base_channels,
            dropout_rate: 0.0,
            ..SegNetworkSpec::default()
        }
    }

    /// Channel count at grid row `i`.
    pub fn channels_at(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// The effective wiring: the explicit override if present, otherwise the
    /// canonical grid derived from `depth` and `modified`.
    pub fn wiring(&self) -> Vec<NodeWiring> {
        self.wiring
            .clone()
            .unwrap_or_else(|| build_wiring(self.depth, self.modified))
    }

    pub fn validate(&self) -> CoreResult<()> {
        if self.depth < 1 {
            return Err(PipelineError::Config("segnet depth must be >= 1".into()));
        }
        if self.base_channels < 1 {
            return Err(PipelineError::Config(
                "segnet base_channels must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(PipelineError::Config(format!(
                "segnet dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if !self.l2_coefficient.is_finite() || self.l2_coefficient < 0.0 {
            return Err(PipelineError::Config(format!(
                "segnet l2_coefficient must be a finite non-negative number, got {}",
                self.l2_coefficient
            )));
        }
        let wiring = self.wiring();
        validate_wiring(self.depth, &wiring)
            .map_err(|e| PipelineError::Config(format!("segnet wiring: {e}")))?;
        Ok(())
    }
}

/// One grid node: optional up/down edge convolutions plus the fusion body
/// (two 3x3 conv + group-norm + ReLU blocks and a dropout).
struct SegNode {
    wiring: NodeWiring,
    /// Stride-2 transposed convolution applied to `X(i+1,j-1)`.
    up: Option<ConvTranspose2d>,
    /// Stride-2 convolution applied to `X(i-1,j)`.
    down: Option<Conv2d>,
    body: Sequential,
    /// Channels of every fused input part (they all live at row `i`, so each
    /// part has `channels_at(i)` channels, except `X(0,0)` which takes the
    /// 3-channel image directly).
    part_channels: usize,
}

/// Nested-skip segmentation model. Input `[N,3,H,W]` in `[0,1]` with `H`, `W`
/// divisible by `2^depth`; output `[N,1,H,W]` of sigmoid probabilities.
pub struct SegNet {
    spec: SegNetworkSpec,
    nodes: Vec<SegNode>,
    index: HashMap<(usize, usize), usize>,
    head: Conv2d,
    head_act: SigmoidLayer,
}

impl SegNet {
    pub fn new(spec: &SegNetworkSpec, seed: u64) -> CoreResult<SegNet> {
        spec.validate()?;
        let wiring = spec.wiring();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "segnet-init"));

        let mut nodes = Vec::with_capacity(wiring.len());
        let mut index = HashMap::new();
        for (idx, w) in wiring.iter().enumerate() {
            let prefix = format!("x{}_{}", w.i, w.j);
            let c_out = spec.channels_at(w.i);

            let up = w.up.map(|(ui, _)| {
                ConvTranspose2d::new(
                    &format!("{prefix}.up"),
                    spec.channels_at(ui),
                    c_out,
                    2,
                    true,
                    &mut rng,
                )
            });
            let down = w.down.map(|(di, _)| {
                Conv2d::new(
                    &format!("{prefix}.down"),
                    spec.channels_at(di),
                    c_out,
                    3,
                    2,
                    1,
                    1,
                    true,
                    &mut rng,
                )
            });

            // X(0,0) fuses nothing: its body consumes the RGB image.
            let c_in = if (w.i, w.j) == (0, 0) {
                3
            } else {
                w.fan_in() * c_out
            };
            let groups = groups_capped(c_out, 8);
            let mut body = Sequential::new();
            body.push(Conv2d::new(
                &format!("{prefix}.conv1"),
                c_in,
                c_out,
                3,
                1,
                1,
                1,
                true,
                &mut rng,
            ));
            body.push(GroupNorm::new(&format!("{prefix}.gn1"), c_out, groups));
            body.push(ReLU::new());
            body.push(Conv2d::new(
                &format!("{prefix}.conv2"),
                c_out,
                c_out,
                3,
                1,
                1,
                1,
                true,
                &mut rng,
            ));
            body.push(GroupNorm::new(&format!("{prefix}.gn2"), c_out, groups));
            body.push(ReLU::new());
            if spec.dropout_rate > 0.0 {
                let drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    &format!("segnet-dropout:{prefix}"),
                ));
                body.push(Dropout::new(spec.dropout_rate as f32, drop_rng));
            }

            index.insert((w.i, w.j), idx);
            nodes.push(SegNode {
                wiring: w.clone(),
                up,
                down,
                body,
                part_channels: c_out,
            });
        }

        let head = Conv2d::new(
            "head",
            spec.channels_at(0),
            1,
            1,
            1,
            0,
            1,
            true,
            &mut rng,
        );

        Ok(SegNet {
            spec: spec.clone(),
            nodes,
            index,
            head,
            head_act: SigmoidLayer::new(),
        })
    }

    pub fn spec(&self) -> &SegNetworkSpec {
        &self.spec
    }

    /// Forward pass. `x` is `[N,3,H,W]` in `[0,1]`; returns `[N,1,H,W]`
    /// sigmoid probabilities.
    pub fn forward_batch(&mut self, x: ArrayD<f32>, train: bool) -> CoreResult<ArrayD<f32>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(PipelineError::Config(format!(
                "segnet input must be [N,3,H,W], got {shape:?}"
            )));
        }
        let stride = 1usize << self.spec.depth;
        if shape[2] % stride != 0 || shape[3] % stride != 0 {
            return Err(PipelineError::Config(format!(
                "segnet input {}x{} must be divisible by 2^depth = {stride}",
                shape[2], shape[3]
            )));
        }

        let n_nodes = self.nodes.len();
        let mut outs: Vec<Option<ArrayD<f32>>> = vec![None; n_nodes];
        for idx in 0..n_nodes {
            let wiring = self.nodes[idx].wiring.clone();
            let fused: ArrayD<f32> = if (wiring.i, wiring.j) == (0, 0) {
                x.clone()
            } else {
                let mut parts: Vec<ArrayD<f32>> = Vec::with_capacity(wiring.fan_in());
                for &(si, sj) in &wiring.skips {
                    parts.push(outs[self.index[&(si, sj)]].clone().expect("skip computed"));
                }
                if let Some((ui, uj)) = wiring.up {
                    let src = outs[self.index[&(ui, uj)]].clone().expect("up computed");
                    let up = self.nodes[idx].up.as_mut().expect("up edge exists");
                    parts.push(up.forward(src, train));
                }
                if let Some((di, dj)) = wiring.down {
                    let src = outs[self.index[&(di, dj)]].clone().expect("down computed");
                    let down = self.nodes[idx].down.as_mut().expect("down edge exists");
                    parts.push(down.forward(src, train));
                }
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                concatenate(Axis(1), &views)
                    .expect("same-row parts share spatial dims")
                    .into_dyn()
            };
            outs[idx] = Some(self.nodes[idx].body.forward(fused, train));
        }

        let top = outs[self.index[&(0, self.spec.depth)]]
            .take()
            .expect("output node computed");
        let logits = self.head.forward(top, train);
        Ok(self.head_act.forward(logits, train))
    }

    /// Backward pass from the gradient w.r.t. the sigmoid probabilities.
    /// Must follow a `forward_batch(..., train=true)` call.
    pub fn backward_batch(&mut self, grad: ArrayD<f32>) {
        let g = self.head_act.backward(grad);
        let g = self.head.backward(g);

        let n_nodes = self.nodes.len();
        let mut douts: Vec<Option<ArrayD<f32>>> = vec![None; n_nodes];
        douts[self.index[&(0, self.spec.depth)]] = Some(g);

        let accumulate = |slot: &mut Option<ArrayD<f32>>, g: ArrayD<f32>| match slot {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        };

        for idx in (0..n_nodes).rev() {
            let g = douts[idx]
                .take()
                .expect("every node output feeds the loss");
            let wiring = self.nodes[idx].wiring.clone();
            let gin = self.nodes[idx].body.backward(g);
            if (wiring.i, wiring.j) == (0, 0) {
                // Gradient w.r.t. the input image is not needed.
                continue;
            }
            let c = self.nodes[idx].part_channels;
            let mut offset = 0usize;
            let take_part = |gin: &ArrayD<f32>, offset: &mut usize| {
                let part = gin
                    .slice_axis(Axis(1), Slice::from(*offset..*offset + c))
                    .to_owned();
                *offset += c;
                part
            };
            for &(si, sj) in &wiring.skips {
                let part = take_part(&gin, &mut offset);
                let dst = self.index[&(si, sj)];
                accumulate(&mut douts[dst], part);
            }
            if let Some((ui, uj)) = wiring.up {
                let part = take_part(&gin, &mut offset);
                let up = self.nodes[idx].up.as_mut().expect("up edge exists");
                let back = up.backward(part);
                let dst = self.index[&(ui, uj)];
                accumulate(&mut douts[dst], back);
            }
            if let Some((di, dj)) = wiring.down {
                let part = take_part(&gin, &mut offset);
                let down = self.nodes[idx].down.as_mut().expect("down edge exists");
                let back = down.backward(part);
                let dst = self.index[&(di, dj)];
                accumulate(&mut douts[dst], back);
            }
            debug_assert_eq!(offset, gin.shape()[1]);
        }
    }
}

impl Model for SegNet {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut params = Vec::new();
        for node in &mut self.nodes {
            if let Some(up) = &mut node.up {
                params.extend(up.params_mut());
            }
            if let Some(down) = &mut node.down {
                params.extend(down.params_mut());
            }
            params.extend(Layer::params_mut(&mut node.body));
        }
        params.extend(self.head.params_mut());
        params
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        let mut buffers = Vec::new();
        for node in &mut self.nodes {
            buffers.extend(Layer::buffers_mut(&mut node.body));
        }
        buffers
    }
}
