//! Portable weight files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "L2VW"
//! version      u32      1
//! network      u32      0 encoder, 1 decoder, 2 similarity
//! layer_count  u32
//! per layer:
//!   kind       u32      0 conv, 1 deconv, 2 dense
//!   dense:     inputs u32, outputs u32
//!   conv/deconv: in_channels, out_channels, in_height, in_width,
//!              kernel, stride, padding (u32 each)
//!   weights    f32 * n  dense [out][in]; conv [out_c][in_c][k][k];
//!                       deconv [in_c][out_c][k][k]
//!   bias       f32 * outputs (dense) or out_channels (conv/deconv)
//! ```
//!
//! Activations are implied by the network role: ReLU after every hidden
//! layer, then identity (encoder), HardTanh clamped to [0, 1] (decoder) or a
//! sigmoid (similarity).

use super::{InferenceError, LATENT_DIM};

pub const WEIGHT_MAGIC: [u8; 4] = *b"L2VW";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkRole {
    Encoder,
    Decoder,
    Similarity,
}

impl NetworkRole {
    fn code(self) -> u32 {
        match self {
            NetworkRole::Encoder => 0,
            NetworkRole::Decoder => 1,
            NetworkRole::Similarity => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(NetworkRole::Encoder),
            1 => Some(NetworkRole::Decoder),
            2 => Some(NetworkRole::Similarity),
            _ => None,
        }
    }
}

/// Spatial geometry shared by convolution and transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    fn conv_out(&self) -> Option<(usize, usize)> {
        let f = |n: usize| {
            let padded = n + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((f(self.in_height)?, f(self.in_width)?))
    }

    fn deconv_out(&self) -> Option<(usize, usize)> {
        let f = |n: usize| {
            (n.checked_sub(1)? * self.stride + self.kernel)
                .checked_sub(2 * self.padding)
                .filter(|&v| v > 0)
        };
        Some((f(self.in_height)?, f(self.in_width)?))
    }

    fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Conv {
        geometry: ConvGeometry,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    Deconv {
        geometry: ConvGeometry,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
}

/// (channels, height, width) of a spatial tensor, or a flat length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Spatial(usize, usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Spatial(c, h, w) => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv { .. } => "conv",
            Layer::Deconv { .. } => "deconv",
        }
    }

    pub fn input_shape(&self) -> Shape {
        match self {
            Layer::Dense { inputs, .. } => Shape::Flat(*inputs),
            Layer::Conv { geometry: g, .. } | Layer::Deconv { geometry: g, .. } => {
                Shape::Spatial(g.in_channels, g.in_height, g.in_width)
            }
        }
    }

    /// `None` when the geometry produces an empty output.
    pub fn output_shape(&self) -> Option<Shape> {
        match self {
            Layer::Dense { outputs, .. } => Some(Shape::Flat(*outputs)),
            Layer::Conv { geometry: g, .. } => {
                let (h, w) = g.conv_out()?;
                Some(Shape::Spatial(g.out_channels, h, w))
            }
            Layer::Deconv { geometry: g, .. } => {
                let (h, w) = g.deconv_out()?;
                Some(Shape::Spatial(g.out_channels, h, w))
            }
        }
    }

    pub fn weights(&self) -> &[f32] {
        match self {
            Layer::Dense { weights, .. }
            | Layer::Conv { weights, .. }
            | Layer::Deconv { weights, .. } => weights,
        }
    }

    pub fn bias(&self) -> &[f32] {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv { bias, .. } | Layer::Deconv { bias, .. } => {
                bias
            }
        }
    }

    fn expected_lens(&self) -> (usize, usize) {
        match self {
            Layer::Dense {
                inputs, outputs, ..
            } => (inputs * outputs, *outputs),
            Layer::Conv { geometry: g, .. } | Layer::Deconv { geometry: g, .. } => {
                (g.weight_len(), g.out_channels)
            }
        }
    }
}

/// A parsed, shape-checked network.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    role: NetworkRole,
    layers: Vec<Layer>,
}

impl WeightBundle {
    pub fn new(role: NetworkRole, layers: Vec<Layer>) -> Result<Self, InferenceError> {
        let bundle = Self { role, layers };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn role(&self) -> NetworkRole {
        self.role
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> Shape {
        self.layers[0].input_shape()
    }

    pub fn output_shape(&self) -> Shape {
        self.layers
            .last()
            .and_then(Layer::output_shape)
            .expect("validated bundle has a non-empty output")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights().len() + l.bias().len())
            .sum()
    }

    fn validate(&self) -> Result<(), InferenceError> {
        let chain = |msg: String| InferenceError::ShapeChain(msg);
        if self.layers.is_empty() {
            return Err(chain("network has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = layer.expected_lens();
            if layer.weights().len() != w || layer.bias().len() != b {
                return Err(chain(format!(
                    "layer {i} ({}) carries {} weights / {} biases, expected {w} / {b}",
                    layer.kind_name(),
                    layer.weights().len(),
                    layer.bias().len()
                )));
            }
            if let Layer::Conv { geometry: g, .. } | Layer::Deconv { geometry: g, .. } = layer {
                if g.kernel == 0 || g.stride == 0 || g.in_height == 0 || g.in_width == 0 {
                    return Err(chain(format!("layer {i} has a zero-sized geometry")));
                }
            }
            let out = layer
                .output_shape()
                .ok_or_else(|| chain(format!("layer {i} produces an empty output")))?;
            if out.is_empty() || layer.input_shape().is_empty() {
                return Err(chain(format!("layer {i} has an empty tensor")));
            }
            if let Some(next) = self.layers.get(i + 1) {
                let next_in = next.input_shape();
                let ok = match (out, next_in) {
                    (Shape::Spatial(..), Shape::Spatial(..)) => out == next_in,
                    _ => out.len() == next_in.len(),
                };
                if !ok {
                    return Err(chain(format!(
                        "layer {i} outputs {out:?} but layer {} expects {next_in:?}",
                        i + 1
                    )));
                }
            }
            if layer
                .weights()
                .iter()
                .chain(layer.bias())
                .any(|v| !v.is_finite())
            {
                return Err(InferenceError::NonFinite { layer: i });
            }
        }
        let first = &self.layers[0];
        let last_out = self.output_shape();
        match self.role {
            NetworkRole::Encoder => {
                if !matches!(first.input_shape(), Shape::Spatial(1, h, w) if h == w) {
                    return Err(chain(
                        "encoder must start with a single-channel square convolution".into(),
                    ));
                }
                if last_out != Shape::Flat(2 * LATENT_DIM) {
                    return Err(chain(format!(
                        "encoder must end in a dense layer of {} (mean and log sigma)",
                        2 * LATENT_DIM
                    )));
                }
            }
            NetworkRole::Decoder => {
                if first.input_shape() != Shape::Flat(LATENT_DIM) {
                    return Err(chain(format!(
                        "decoder must start with a dense layer over {LATENT_DIM} inputs"
                    )));
                }
                if !matches!(last_out, Shape::Spatial(1, h, w) if h == w) {
                    return Err(chain("decoder must end in a single-channel square map".into()));
                }
            }
            NetworkRole::Similarity => {
                if self.layers.iter().any(|l| !matches!(l, Layer::Dense { .. })) {
                    return Err(chain("similarity network is dense-only".into()));
                }
                if first.input_shape() != Shape::Flat(2 * LATENT_DIM) {
                    return Err(chain(format!(
                        "similarity network takes {} inputs",
                        2 * LATENT_DIM
                    )));
                }
                if last_out != Shape::Flat(1) {
                    return Err(chain("similarity network ends in one output".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InferenceError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != WEIGHT_MAGIC {
            return Err(InferenceError::BadMagic);
        }
        let version = r.u32()?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(InferenceError::UnsupportedVersion(version));
        }
        let role_code = r.u32()?;
        let role = NetworkRole::from_code(role_code).ok_or(InferenceError::UnknownRole(role_code))?;
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let kind = r.u32()?;
            let layer = match kind {
                2 => {
                    let inputs = r.u32()? as usize;
                    let outputs = r.u32()? as usize;
                    let weights = r.f32s(inputs.checked_mul(outputs).ok_or(InferenceError::Truncated)?)?;
                    let bias = r.f32s(outputs)?;
                    Layer::Dense {
                        inputs,
                        outputs,
                        weights,
                        bias,
                    }
                }
                0 | 1 => {
                    let geometry = ConvGeometry {
                        in_channels: r.u32()? as usize,
                        out_channels: r.u32()? as usize,
                        in_height: r.u32()? as usize,
                        in_width: r.u32()? as usize,
                        kernel: r.u32()? as usize,
                        stride: r.u32()? as usize,
                        padding: r.u32()? as usize,
                    };
                    let weights = r.f32s(geometry.weight_len())?;
                    let bias = r.f32s(geometry.out_channels)?;
                    if kind == 0 {
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
                other => return Err(InferenceError::UnknownLayerKind(other)),
            };
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(InferenceError::TrailingBytes(bytes.len() - r.pos));
        }
        Self::new(role, layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.parameter_count() + 32 * self.layers.len());
        out.extend_from_slice(&WEIGHT_MAGIC);
        put_u32(&mut out, WEIGHT_FORMAT_VERSION);
        put_u32(&mut out, self.role.code());
        put_u32(&mut out, self.layers.len() as u32);
        for layer in &self.layers {
            match layer {
                Layer::Dense {
                    inputs, outputs, ..
                } => {
                    put_u32(&mut out, 2);
                    put_u32(&mut out, *inputs as u32);
                    put_u32(&mut out, *outputs as u32);
                }
                Layer::Conv { geometry: g, .. } | Layer::Deconv { geometry: g, .. } => {
                    put_u32(&mut out, if matches!(layer, Layer::Conv { .. }) { 0 } else { 1 });
                    for v in [
                        g.in_channels,
                        g.out_channels,
                        g.in_height,
                        g.in_width,
                        g.kernel,
                        g.stride,
                        g.padding,
                    ] {
                        put_u32(&mut out, v as u32);
                    }
                }
            }
            for v in layer.weights().iter().chain(layer.bias()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, InferenceError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), InferenceError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], InferenceError> {
        let end = self.pos.checked_add(n).ok_or(InferenceError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(InferenceError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, InferenceError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, InferenceError> {
        let b = self.take(n.checked_mul(4).ok_or(InferenceError::Truncated)?)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim_layers() -> Vec<Layer> {
        vec![
            Layer::Dense {
                inputs: 64,
                outputs: 4,
                weights: vec![0.25; 256],
                bias: vec![0.0; 4],
            },
            Layer::Dense {
                inputs: 4,
                outputs: 1,
                weights: vec![1.0; 4],
                bias: vec![-0.5],
            },
        ]
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let b = WeightBundle::new(NetworkRole::Similarity, sim_layers()).unwrap();
        let bytes = b.to_bytes();
        let back = WeightBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn distinct_parse_errors() {
        let good = WeightBundle::new(NetworkRole::Similarity, sim_layers())
            .unwrap()
            .to_bytes();

        let mut bad = good.clone();
        bad[..8].copy_from_slice(b"NOTMAGIC");
        assert!(matches!(WeightBundle::from_bytes(&bad), Err(InferenceError::BadMagic)));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(InferenceError::UnsupportedVersion(9))
        ));

        assert!(matches!(
            WeightBundle::from_bytes(&good[..good.len() - 1]),
            Err(InferenceError::Truncated)
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(InferenceError::TrailingBytes(1))
        ));

        let mut bad = good.clone();
        // first weight of layer 0 sits after the 16-byte header and a 12-byte layer header
        bad[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(InferenceError::NonFinite { layer: 0 })
        ));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut layers = sim_layers();
        layers[1] = Layer::Dense {
            inputs: 5,
            outputs: 1,
            weights: vec![1.0; 5],
            bias: vec![0.0],
        };
        assert!(matches!(
            WeightBundle::new(NetworkRole::Similarity, layers),
            Err(InferenceError::ShapeChain(_))
        ));
    }

    #[test]
    fn geometry_output_sizes() {
        let g = ConvGeometry {
            in_channels: 1,
            out_channels: 8,
            in_height: 256,
            in_width: 256,
            kernel: 4,
            stride: 2,
            padding: 1,
        };
        assert_eq!(g.conv_out(), Some((128, 128)));
        let d = ConvGeometry {
            in_height: 128,
            in_width: 128,
            ..g
        };
        assert_eq!(d.deconv_out(), Some((256, 256)));
    }
}
