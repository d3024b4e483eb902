//! Deterministic forward passes of the scan autoencoder and the learned
//! similarity network, loaded from portable weight files.

mod forward;
mod init;
mod weights;

pub use init::{
    decoder_spec, default_decoder, default_encoder, default_similarity, encoder_spec,
    he_initialized, similarity_spec, small_decoder_spec, small_encoder_spec,
    small_similarity_spec, ArchSpec, LayerSpec,
};
pub use weights::{
    ConvGeometry, Layer, NetworkRole, Shape, WeightBundle, WEIGHT_FORMAT_VERSION, WEIGHT_MAGIC,
};

use crate::scan::{RasterConfig, ScanBitmap};

/// Length of a stored embedding.
pub const LATENT_DIM: usize = 32;

/// The stored representation: 32 f32 components, 128 bytes.
pub type LatentVector = [f32; LATENT_DIM];

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown network role code {0}")]
    UnknownRole(u32),
    #[error("unknown layer kind {0}")]
    UnknownLayerKind(u32),
    #[error("weight file is truncated")]
    Truncated,
    #[error("{0} trailing bytes after the last layer")]
    TrailingBytes(usize),
    #[error("shape chain broken: {0}")]
    ShapeChain(String),
    #[error("non-finite parameter in layer {layer}")]
    NonFinite { layer: usize },
    #[error("expected a {expected:?} network, got {found:?}")]
    RoleMismatch {
        expected: NetworkRole,
        found: NetworkRole,
    },
    #[error("input shape mismatch: {0}")]
    InputShape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encoder output. `sigma` is only used for training-time sampling and is
/// never persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub mu: LatentVector,
    pub sigma: Option<LatentVector>,
}

/// Decoder reconstruction, every value in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct BitmapLogits {
    side: usize,
    values: Vec<f32>,
}

impl BitmapLogits {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Row-major values.
    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

fn expect_role(bundle: &WeightBundle, role: NetworkRole) -> Result<(), InferenceError> {
    if bundle.role() != role {
        return Err(InferenceError::RoleMismatch {
            expected: role,
            found: bundle.role(),
        });
    }
    Ok(())
}

fn latent(slice: &[f32]) -> LatentVector {
    slice.try_into().expect("slice of LATENT_DIM")
}

/// Encodes a bitmap to its mean vector and per-dimension sigma.
pub fn encode(bitmap: &ScanBitmap, w: &WeightBundle) -> Result<Embedding, InferenceError> {
    expect_role(w, NetworkRole::Encoder)?;
    let Shape::Spatial(_, h, wd) = w.input_shape() else {
        unreachable!("validated encoder input is spatial")
    };
    if bitmap.side() != h || bitmap.side() != wd {
        return Err(InferenceError::InputShape(format!(
            "encoder expects {h}x{wd}, bitmap is {0}x{0}",
            bitmap.side()
        )));
    }
    let input: Vec<f32> = bitmap.cells().iter().map(|&c| c as f32).collect();
    let out = forward::run(w.layers(), &input);
    let mu = latent(&out[..LATENT_DIM]);
    let mut sigma = [0f32; LATENT_DIM];
    for (s, &log_sigma) in sigma.iter_mut().zip(&out[LATENT_DIM..]) {
        // keeps sigma strictly positive and finite
        *s = log_sigma.clamp(-30.0, 30.0).exp();
    }
    Ok(Embedding {
        mu,
        sigma: Some(sigma),
    })
}

/// Decodes a latent vector; the output is clamped to [0, 1].
pub fn decode(v: &LatentVector, w: &WeightBundle) -> Result<BitmapLogits, InferenceError> {
    expect_role(w, NetworkRole::Decoder)?;
    let Shape::Spatial(_, side, _) = w.output_shape() else {
        unreachable!("validated decoder output is spatial")
    };
    let mut values = forward::run(w.layers(), v);
    values.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    Ok(BitmapLogits { side, values })
}

/// Similarity of candidate `v` to query `q`, strictly inside (0, 1) up to
/// f32 saturation. Input order is (q, v); the score is not symmetric.
pub fn similarity(q: &LatentVector, v: &LatentVector, w: &WeightBundle) -> Result<f32, InferenceError> {
    expect_role(w, NetworkRole::Similarity)?;
    Ok(similarity_unchecked(q, v, w))
}

fn similarity_unchecked(q: &LatentVector, v: &LatentVector, w: &WeightBundle) -> f32 {
    let mut input = [0f32; 2 * LATENT_DIM];
    input[..LATENT_DIM].copy_from_slice(q);
    input[LATENT_DIM..].copy_from_slice(v);
    let z = forward::run(w.layers(), &input)[0] as f64;
    (1.0 / (1.0 + (-z).exp())) as f32
}

/// A role-checked encoder.
#[derive(Debug, Clone)]
pub struct Encoder(WeightBundle);

impl Encoder {
    pub fn new(bundle: WeightBundle) -> Result<Self, InferenceError> {
        expect_role(&bundle, NetworkRole::Encoder)?;
        Ok(Self(bundle))
    }

    pub fn bundle(&self) -> &WeightBundle {
        &self.0
    }

    /// Side length of the bitmaps this encoder accepts.
    pub fn input_side(&self) -> usize {
        match self.0.input_shape() {
            Shape::Spatial(_, h, _) => h,
            Shape::Flat(_) => unreachable!("validated encoder input is spatial"),
        }
    }

    /// Raster geometry matching this encoder: 8 cm pixels at 256 px, scaled
    /// to keep the same world span at other sizes.
    pub fn raster_config(&self) -> RasterConfig {
        RasterConfig::centered(self.input_side(), RasterConfig::default().world_span)
    }

    pub fn encode(&self, bitmap: &ScanBitmap) -> Result<Embedding, InferenceError> {
        encode(bitmap, &self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder(WeightBundle);

impl Decoder {
    pub fn new(bundle: WeightBundle) -> Result<Self, InferenceError> {
        expect_role(&bundle, NetworkRole::Decoder)?;
        Ok(Self(bundle))
    }

    pub fn bundle(&self) -> &WeightBundle {
        &self.0
    }

    pub fn decode(&self, v: &LatentVector) -> BitmapLogits {
        decode(v, &self.0).expect("role checked at construction")
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityNet(WeightBundle);

impl SimilarityNet {
    pub fn new(bundle: WeightBundle) -> Result<Self, InferenceError> {
        expect_role(&bundle, NetworkRole::Similarity)?;
        Ok(Self(bundle))
    }

    pub fn bundle(&self) -> &WeightBundle {
        &self.0
    }

    pub fn score(&self, q: &LatentVector, v: &LatentVector) -> f32 {
        similarity_unchecked(q, v, &self.0)
    }
}
