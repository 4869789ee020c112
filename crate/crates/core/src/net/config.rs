//! Architecture description and the flat parameter layout derived from it.

use serde::{Deserialize, Serialize};

use super::NetError;
use crate::sim::STACK_FRAMES;

/// Number of logits of the discrete head.
pub const DISCRETE_ACTIONS: usize = 10;
/// Dimensions of the Gaussian head: normalized `(v_lin, v_ang)`.
pub const CONTINUOUS_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete,
    Continuous,
}

impl ActionSpace {
    pub fn policy_outputs(self) -> usize {
        match self {
            ActionSpace::Discrete => DISCRETE_ACTIONS,
            ActionSpace::Continuous => CONTINUOUS_DIMS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Valid (unpadded) convolution output length.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (stride > 0 && kernel > 0 && input >= kernel).then(|| (input - kernel) / stride + 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub beams: usize,
    pub frames: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub fc_lidar: usize,
    pub fc_goal_dir: usize,
    pub fc_goal_dist: usize,
    pub fc_vel: usize,
    pub fc_merge: usize,
    pub action_space: ActionSpace,
}

impl NetConfig {
    /// The full-size network for 1081-beam scans.
    pub fn standard(action_space: ActionSpace) -> Self {
        Self::for_beams(1081, action_space)
    }

    pub fn for_beams(beams: usize, action_space: ActionSpace) -> Self {
        Self {
            beams,
            frames: STACK_FRAMES,
            conv1: ConvSpec {
                filters: 16,
                kernel: 7,
                stride: 3,
            },
            conv2: ConvSpec {
                filters: 32,
                kernel: 5,
                stride: 2,
            },
            fc_lidar: 256,
            fc_goal_dir: 32,
            fc_goal_dist: 16,
            fc_vel: 32,
            fc_merge: 384,
            action_space,
        }
    }

    /// A miniature with every layer type, used for finite-difference checks.
    pub fn tiny(action_space: ActionSpace) -> Self {
        Self {
            beams: 8,
            frames: STACK_FRAMES,
            conv1: ConvSpec {
                filters: 3,
                kernel: 3,
                stride: 2,
            },
            conv2: ConvSpec {
                filters: 4,
                kernel: 2,
                stride: 1,
            },
            fc_lidar: 6,
            fc_goal_dir: 3,
            fc_goal_dist: 2,
            fc_vel: 3,
            fc_merge: 5,
            action_space,
        }
    }

    pub fn conv1_len(&self) -> Option<usize> {
        conv_output_len(self.beams, self.conv1.kernel, self.conv1.stride)
    }

    pub fn conv2_len(&self) -> Option<usize> {
        conv_output_len(self.conv1_len()?, self.conv2.kernel, self.conv2.stride)
    }

    pub fn flatten_len(&self) -> Option<usize> {
        Some(self.conv2_len()? * self.conv2.filters)
    }

    pub fn goal_dir_inputs(&self) -> usize {
        2 * self.frames
    }

    pub fn goal_dist_inputs(&self) -> usize {
        self.frames
    }

    pub fn vel_inputs(&self) -> usize {
        2 * self.frames
    }

    pub fn concat_len(&self) -> usize {
        self.fc_lidar + self.fc_goal_dir + self.fc_goal_dist + self.fc_vel
    }

    pub fn policy_outputs(&self) -> usize {
        self.action_space.policy_outputs()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let sizes = [
            ("beams", self.beams),
            ("frames", self.frames),
            ("conv1 filters", self.conv1.filters),
            ("conv2 filters", self.conv2.filters),
            ("fc_lidar", self.fc_lidar),
            ("fc_goal_dir", self.fc_goal_dir),
            ("fc_goal_dist", self.fc_goal_dist),
            ("fc_vel", self.fc_vel),
            ("fc_merge", self.fc_merge),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(NetError::Shape(format!("{name} must be positive")));
        }
        let l1 = self.conv1_len().ok_or_else(|| {
            NetError::Shape(format!(
                "conv1 (kernel {}, stride {}) does not fit {} beams",
                self.conv1.kernel, self.conv1.stride, self.beams
            ))
        })?;
        self.conv2_len().ok_or_else(|| {
            NetError::Shape(format!(
                "conv2 (kernel {}, stride {}) does not fit conv1 output length {l1}",
                self.conv2.kernel, self.conv2.stride
            ))
        })?;
        Ok(())
    }

    /// Named tensors in storage order. Dense weights are `(inputs, outputs)`;
    /// conv weights are `(kernel * in_channels, filters)` with the tap index
    /// outermost.
    pub fn layout(&self) -> Result<ParamLayout, NetError> {
        self.validate()?;
        let flat = self.flatten_len().expect("validated");
        let a = self.policy_outputs();
        let mut specs: Vec<(&'static str, Vec<usize>)> = vec![
            ("conv1.weight", vec![self.conv1.kernel * self.frames, self.conv1.filters]),
            ("conv1.bias", vec![self.conv1.filters]),
            ("conv2.weight", vec![self.conv2.kernel * self.conv1.filters, self.conv2.filters]),
            ("conv2.bias", vec![self.conv2.filters]),
            ("fc_lidar.weight", vec![flat, self.fc_lidar]),
            ("fc_lidar.bias", vec![self.fc_lidar]),
            ("fc_goal_dir.weight", vec![self.goal_dir_inputs(), self.fc_goal_dir]),
            ("fc_goal_dir.bias", vec![self.fc_goal_dir]),
            ("fc_goal_dist.weight", vec![self.goal_dist_inputs(), self.fc_goal_dist]),
            ("fc_goal_dist.bias", vec![self.fc_goal_dist]),
            ("fc_vel.weight", vec![self.vel_inputs(), self.fc_vel]),
            ("fc_vel.bias", vec![self.fc_vel]),
            ("fc_merge.weight", vec![self.concat_len(), self.fc_merge]),
            ("fc_merge.bias", vec![self.fc_merge]),
            ("policy.weight", vec![self.fc_merge, a]),
            ("policy.bias", vec![a]),
            ("value.weight", vec![self.fc_merge, 1]),
            ("value.bias", vec![1]),
        ];
        if self.action_space == ActionSpace::Continuous {
            specs.push(("policy.log_std", vec![a]));
        }
        let mut offset = 0;
        let tensors = specs
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let t = TensorSpec {
                    name,
                    shape,
                    offset,
                    len,
                };
                offset += len;
                t
            })
            .collect();
        Ok(ParamLayout {
            tensors,
            total: offset,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

impl TensorSpec {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

// Positions in `ParamLayout::tensors`.
pub(crate) const CONV1: usize = 0;
pub(crate) const CONV2: usize = 2;
pub(crate) const FC_LIDAR: usize = 4;
pub(crate) const FC_GOAL_DIR: usize = 6;
pub(crate) const FC_GOAL_DIST: usize = 8;
pub(crate) const FC_VEL: usize = 10;
pub(crate) const FC_MERGE: usize = 12;
pub(crate) const POLICY: usize = 14;
pub(crate) const VALUE: usize = 16;
pub(crate) const LOG_STD: usize = 18;

impl ParamLayout {
    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Weight and bias range of the layer whose weight sits at `index`.
    pub(crate) fn layer(&self, index: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (self.tensors[index].range(), self.tensors[index + 1].range())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_shape_arithmetic() {
        let c = NetConfig::standard(ActionSpace::Discrete);
        assert_eq!(c.conv1_len(), Some((1081 - 7) / 3 + 1));
        assert_eq!(c.conv1_len(), Some(359));
        assert_eq!(c.conv2_len(), Some((359 - 5) / 2 + 1));
        assert_eq!(c.conv2_len(), Some(178));
        assert_eq!(c.flatten_len(), Some(32 * 178));
        assert_eq!(c.concat_len(), 336);
    }

    #[test]
    fn layout_is_contiguous() {
        for space in [ActionSpace::Discrete, ActionSpace::Continuous] {
            let l = NetConfig::standard(space).layout().unwrap();
            let mut next = 0;
            for t in &l.tensors {
                assert_eq!(t.offset, next);
                next += t.len;
            }
            assert_eq!(next, l.total);
            assert_eq!(l.tensors[CONV1].name, "conv1.weight");
            assert_eq!(l.tensors[FC_MERGE].shape, vec![336, 384]);
            assert_eq!(l.tensors[VALUE].name, "value.weight");
        }
        let l = NetConfig::standard(ActionSpace::Continuous).layout().unwrap();
        assert_eq!(l.tensors[LOG_STD].name, "policy.log_std");
    }

    #[test]
    fn too_few_beams_is_rejected() {
        let c = NetConfig::for_beams(6, ActionSpace::Discrete);
        assert!(matches!(c.validate(), Err(NetError::Shape(_))));
        let c = NetConfig::for_beams(12, ActionSpace::Discrete);
        // conv1 gives 2 positions, too short for conv2's kernel of 5
        assert!(c.validate().is_err());
        assert!(NetConfig::tiny(ActionSpace::Continuous).validate().is_ok());
    }
}
