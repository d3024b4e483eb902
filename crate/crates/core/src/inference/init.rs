//! Seeded He-initialized networks. Used for untrained defaults, tests and
//! the `init-weights` command; real weights come from the trainer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::weights::{ConvGeometry, Layer, NetworkRole, Shape, WeightBundle};
use super::InferenceError;

/// One step of an architecture description; shapes are inferred by chaining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        outputs: usize,
    },
    /// Reinterprets a flat tensor as (channels, height, width). Emits no layer.
    Unflatten(usize, usize, usize),
}

/// Input shape plus layer steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

const fn down(out_channels: usize) -> LayerSpec {
    LayerSpec::Conv {
        out_channels,
        kernel: 4,
        stride: 2,
        padding: 1,
    }
}

const fn up(out_channels: usize) -> LayerSpec {
    LayerSpec::Deconv {
        out_channels,
        kernel: 4,
        stride: 2,
        padding: 1,
    }
}

/// Four stride-2 convolutions 1→8→16→32→64, then dense 512 and a 64-wide
/// head holding mean and log sigma.
pub fn encoder_spec(side: usize) -> ArchSpec {
    ArchSpec {
        input: Shape::Spatial(1, side, side),
        layers: vec![
            down(8),
            down(16),
            down(32),
            down(64),
            LayerSpec::Dense { outputs: 512 },
            LayerSpec::Dense { outputs: 64 },
        ],
    }
}

pub fn decoder_spec(side: usize) -> ArchSpec {
    let s = side / 16;
    ArchSpec {
        input: Shape::Flat(32),
        layers: vec![
            LayerSpec::Dense { outputs: 512 },
            LayerSpec::Dense {
                outputs: 64 * s * s,
            },
            LayerSpec::Unflatten(64, s, s),
            up(32),
            up(16),
            up(8),
            up(1),
        ],
    }
}

pub fn similarity_spec() -> ArchSpec {
    ArchSpec {
        input: Shape::Flat(64),
        layers: [256, 128, 64, 1]
            .map(|outputs| LayerSpec::Dense { outputs })
            .to_vec(),
    }
}

/// Two-convolution encoder for tests; `side` must be a multiple of 4.
pub fn small_encoder_spec(side: usize) -> ArchSpec {
    ArchSpec {
        input: Shape::Spatial(1, side, side),
        layers: vec![
            down(2),
            down(3),
            LayerSpec::Dense { outputs: 16 },
            LayerSpec::Dense { outputs: 64 },
        ],
    }
}

pub fn small_decoder_spec(side: usize) -> ArchSpec {
    let s = side / 4;
    ArchSpec {
        input: Shape::Flat(32),
        layers: vec![
            LayerSpec::Dense { outputs: 16 },
            LayerSpec::Dense { outputs: 3 * s * s },
            LayerSpec::Unflatten(3, s, s),
            up(2),
            up(1),
        ],
    }
}

pub fn small_similarity_spec() -> ArchSpec {
    ArchSpec {
        input: Shape::Flat(64),
        layers: vec![
            LayerSpec::Dense { outputs: 12 },
            LayerSpec::Dense { outputs: 6 },
            LayerSpec::Dense { outputs: 1 },
        ],
    }
}

/// Builds a network with weights drawn from N(0, 2 / fan_in) and zero bias.
pub fn he_initialized(
    role: NetworkRole,
    spec: &ArchSpec,
    seed: u64,
) -> Result<WeightBundle, InferenceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = spec.input;
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut sample = |n: usize, fan_in: usize| -> Vec<f32> {
        let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive std");
        (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
    };
    for step in &spec.layers {
        let layer = match *step {
            LayerSpec::Unflatten(c, h, w) => {
                if shape.len() != c * h * w {
                    return Err(InferenceError::ShapeChain(format!(
                        "cannot view {shape:?} as ({c}, {h}, {w})"
                    )));
                }
                shape = Shape::Spatial(c, h, w);
                continue;
            }
            LayerSpec::Dense { outputs } => {
                let inputs = shape.len();
                Layer::Dense {
                    inputs,
                    outputs,
                    weights: sample(inputs * outputs, inputs),
                    bias: vec![0.0; outputs],
                }
            }
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            }
            | LayerSpec::Deconv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let Shape::Spatial(c, h, w) = shape else {
                    return Err(InferenceError::ShapeChain(
                        "convolution over a flat tensor; add an Unflatten step".into(),
                    ));
                };
                let geometry = ConvGeometry {
                    in_channels: c,
                    out_channels,
                    in_height: h,
                    in_width: w,
                    kernel,
                    stride,
                    padding,
                };
                let weights = sample(c * out_channels * kernel * kernel, c * kernel * kernel);
                let bias = vec![0.0; out_channels];
                if matches!(step, LayerSpec::Conv { .. }) {
                    Layer::Conv {
                        geometry,
                        weights,
                        bias,
                    }
                } else {
                    Layer::Deconv {
                        geometry,
                        weights,
                        bias,
                    }
                }
            }
        };
        shape = layer.output_shape().ok_or_else(|| {
            InferenceError::ShapeChain(format!("{} layer produces an empty output", layer.kind_name()))
        })?;
        layers.push(layer);
    }
    WeightBundle::new(role, layers)
}

pub fn default_encoder(seed: u64) -> WeightBundle {
    he_initialized(NetworkRole::Encoder, &encoder_spec(256), seed).expect("fixed architecture")
}

pub fn default_decoder(seed: u64) -> WeightBundle {
    he_initialized(NetworkRole::Decoder, &decoder_spec(256), seed).expect("fixed architecture")
}

pub fn default_similarity(seed: u64) -> WeightBundle {
    he_initialized(NetworkRole::Similarity, &similarity_spec(), seed).expect("fixed architecture")
}
