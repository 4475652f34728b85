use serde::{Deserialize, Serialize};

use super::NnError;

/// One layer of a sequential network.
///
/// Sequence activations are stored channels-last (`[batch, length, channels]`),
/// so `Flatten` is a pure reshape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Stride 1, zero "same" padding; `kernel_size` must be odd.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    BatchNorm1d {
        channels: usize,
    },
    Relu,
    Flatten,
    Dense {
        in_units: usize,
        out_units: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Teacher,
    Student,
}

/// Architecture of a teacher or student network over records of `input_len` features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_len: usize,
    pub layers: Vec<Layer>,
    pub role: Role,
}

pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const TEACHER_CONV_CHANNELS: [usize; 4] = [1, 512, 1024, 2048];
pub const TEACHER_HIDDEN: [usize; 1] = [512];
pub const STUDENT_CONV_CHANNELS: [usize; 3] = [1, 64, 128];
pub const STUDENT_HIDDEN: [usize; 1] = [64];

impl NetworkSpec {
    /// Conv1d stack followed by a fully connected head.
    ///
    /// `conv_channels[0]` is the input channel count (1 for raw records); each
    /// subsequent entry adds a Conv1d (+ optional BatchNorm) + ReLU. `hidden`
    /// lists the widths of the Dense+ReLU layers between Flatten and the output.
    pub fn conv_stack(
        input_len: usize,
        conv_channels: &[usize],
        hidden: &[usize],
        n_classes: usize,
        batch_norm: bool,
        role: Role,
    ) -> Result<Self, NnError> {
        if conv_channels.is_empty() {
            return Err(NnError::Spec("conv_channels must name the input channels".into()));
        }
        let mut layers = Vec::new();
        for pair in conv_channels.windows(2) {
            layers.push(Layer::Conv1d {
                in_channels: pair[0],
                out_channels: pair[1],
                kernel_size: DEFAULT_KERNEL_SIZE,
            });
            if batch_norm {
                layers.push(Layer::BatchNorm1d { channels: pair[1] });
            }
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Flatten);
        let mut units = input_len * conv_channels[conv_channels.len() - 1];
        for &h in hidden {
            layers.push(Layer::Dense {
                in_units: units,
                out_units: h,
            });
            layers.push(Layer::Relu);
            units = h;
        }
        layers.push(Layer::Dense {
            in_units: units,
            out_units: n_classes,
        });
        let spec = Self {
            input_len,
            layers,
            role,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Teacher: conv widths with BatchNorm after every convolution.
    pub fn teacher(
        input_len: usize,
        conv_channels: &[usize],
        hidden: &[usize],
        n_classes: usize,
    ) -> Result<Self, NnError> {
        Self::conv_stack(input_len, conv_channels, hidden, n_classes, true, Role::Teacher)
    }

    /// Student: conv widths without normalization.
    pub fn student(
        input_len: usize,
        conv_channels: &[usize],
        hidden: &[usize],
        n_classes: usize,
    ) -> Result<Self, NnError> {
        Self::conv_stack(input_len, conv_channels, hidden, n_classes, false, Role::Student)
    }

    pub fn n_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { out_units, .. }) => *out_units,
            _ => 0,
        }
    }

    /// Width of the representation fed into the final Dense layer.
    pub fn embedding_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { in_units, .. }) => *in_units,
            _ => 0,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.layers.first() {
            Some(Layer::Conv1d { in_channels, .. }) => *in_channels,
            Some(Layer::BatchNorm1d { channels }) => *channels,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        enum State {
            Seq { channels: usize },
            Flat { units: usize },
        }
        if self.input_len == 0 {
            return Err(NnError::Spec("input_len must be positive".into()));
        }
        let mut state = State::Seq {
            channels: self.input_channels(),
        };
        let mut flattens = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            state = match (*layer, state) {
                (
                    Layer::Conv1d {
                        in_channels,
                        out_channels,
                        kernel_size,
                    },
                    State::Seq { channels },
                ) => {
                    if in_channels != channels {
                        return Err(NnError::Spec(format!(
                            "layer {i}: conv expects {in_channels} channels, receives {channels}"
                        )));
                    }
                    if kernel_size % 2 == 0 || out_channels == 0 {
                        return Err(NnError::Spec(format!(
                            "layer {i}: kernel size must be odd and output channels positive"
                        )));
                    }
                    State::Seq {
                        channels: out_channels,
                    }
                }
                (Layer::BatchNorm1d { channels }, State::Seq { channels: c }) => {
                    if channels != c {
                        return Err(NnError::Spec(format!(
                            "layer {i}: batch norm over {channels} channels, receives {c}"
                        )));
                    }
                    State::Seq { channels: c }
                }
                (Layer::Relu, s) => s,
                (Layer::Flatten, State::Seq { channels }) => {
                    flattens += 1;
                    State::Flat {
                        units: channels * self.input_len,
                    }
                }
                (
                    Layer::Dense {
                        in_units,
                        out_units,
                    },
                    State::Flat { units },
                ) => {
                    if in_units != units || out_units == 0 {
                        return Err(NnError::Spec(format!(
                            "layer {i}: dense expects {in_units} inputs, receives {units}"
                        )));
                    }
                    State::Flat { units: out_units }
                }
                (l, _) => {
                    return Err(NnError::Spec(format!("layer {i}: {l:?} is misplaced")));
                }
            };
        }
        if flattens != 1 {
            return Err(NnError::Spec(format!(
                "exactly one Flatten required, found {flattens}"
            )));
        }
        match self.layers.last() {
            Some(Layer::Dense { .. }) => Ok(()),
            _ => Err(NnError::Spec("last layer must be Dense".into())),
        }
    }
}
