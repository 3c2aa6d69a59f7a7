//! The learned rate-distortion CSI codec.
//!
//! A convolutional feature encoder maps the real/imaginary CSI planes to a
//! latent tensor, a uniform quantizer with a straight-through gradient makes
//! it discrete, a per-channel entropy model prices it, and an adaptive binary
//! arithmetic coder turns it into bits. The decoder mirrors the encoder with
//! transposed convolutions and residual blocks. A classical DCT top-k
//! baseline lives in [`dct`].

pub mod cabac;
pub mod dct;
pub mod entropy;
pub mod nn;
pub mod train;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTensor;
use crate::error::{CsiError, Result};
use entropy::EntropyModel;
use ndarray::Array3;
use nn::{forward_stack, Conv2d, ConvTranspose2d, Layer, PRelu, ResidualBlock, Tensor};
use num_complex::Complex64;

pub const BITSTREAM_MAGIC: [u8; 4] = *b"CSIB";
pub const BITSTREAM_VERSION: u8 = 1;
/// Bitstream file header size in bytes (and bits, for rate accounting).
pub const HEADER_BYTES: usize = 16;

/// One convolutional stage of the feature encoder.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvSpec {
    pub features: usize,
    pub kernel: (usize, usize),
    /// Downsampling factor along (subcarriers, BS antennas).
    pub down: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CodecConfig {
    /// Encoder stages; the last stage's feature count is the latent channel
    /// count. The decoder mirrors this list with transposed convolutions.
    pub encoder_layers: Vec<ConvSpec>,
    pub residual_block_count: usize,
    #[serde(default = "default_residual_kernel")]
    pub residual_kernel: (usize, usize),
    /// Uniform quantizer step.
    pub latent_quantizer_step: f64,
    /// Rate-distortion weight: larger values penalize rate more.
    pub rd_lambda: f64,
    /// Input channel count, 2 * N_U (real and imaginary planes).
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
}

fn default_residual_kernel() -> (usize, usize) {
    (3, 3)
}

fn default_input_channels() -> usize {
    2
}

impl CodecConfig {
    /// Small desk-scale architecture for (K, N_B) grids divisible by 4.
    pub fn desk_default(rd_lambda: f64) -> CodecConfig {
        CodecConfig {
            encoder_layers: vec![
                ConvSpec { features: 16, kernel: (5, 5), down: (2, 2) },
                ConvSpec { features: 24, kernel: (3, 3), down: (2, 2) },
                ConvSpec { features: 16, kernel: (3, 3), down: (1, 1) },
            ],
            residual_block_count: 2,
            residual_kernel: (3, 3),
            latent_quantizer_step: 1.0,
            rd_lambda,
            input_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers.is_empty() {
            return Err(CsiError::Config("encoder needs at least one layer".into()));
        }
        if !(self.latent_quantizer_step > 0.0) {
            return Err(CsiError::Config("latent_quantizer_step must be > 0".into()));
        }
        if self.rd_lambda < 0.0 {
            return Err(CsiError::Config("rd_lambda must be >= 0".into()));
        }
        if self.input_channels == 0 || self.input_channels % 2 != 0 {
            return Err(CsiError::Config("input_channels must be even and > 0".into()));
        }
        if self.encoder_layers.last().unwrap().down != (1, 1) {
            return Err(CsiError::Config(
                "the final encoder stage must use stride (1, 1); put downsampling earlier".into(),
            ));
        }
        Ok(())
    }

    /// Total downsampling along (K, N_B).
    pub fn total_downsample(&self) -> (usize, usize) {
        self.encoder_layers
            .iter()
            .fold((1, 1), |(a, b), s| (a * s.down.0, b * s.down.1))
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder_layers.last().map(|s| s.features).unwrap_or(0)
    }
}

/// Encoder output, before or after quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub values: Tensor,
    /// Quantizer step the indices refer to.
    pub step: f64,
    pub quantized: bool,
}

impl LatentTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.values.c, self.values.h, self.values.w)
    }
}

/// Arithmetically coded latent payload.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBitstream {
    pub bytes: Vec<u8>,
    /// Payload length in bits (excludes the 16-byte file header).
    pub bit_length: usize,
    pub symbol_count: usize,
    pub pmf_id: u64,
}

/// Encoder + decoder parameter sets plus the dataset input scale.
#[derive(Debug, Clone)]
pub struct CodecModel {
    pub cfg: CodecConfig,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    /// Per-component RMS of the training dataset; inputs are divided by this
    /// before the encoder and outputs multiplied by it after the decoder.
    pub input_scale: f64,
}

impl CodecModel {
    /// Build a freshly initialized model; deterministic in `seed`.
    pub fn build(cfg: &CodecConfig, input_scale: f64, seed: u64) -> Result<CodecModel> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::new();
        let mut in_c = cfg.input_channels;
        let n_layers = cfg.encoder_layers.len();
        for (i, spec) in cfg.encoder_layers.iter().enumerate() {
            encoder.push(Layer::Conv(Conv2d::new(
                in_c,
                spec.features,
                spec.kernel,
                spec.down,
                &mut rng,
            )?));
            if i + 1 < n_layers {
                encoder.push(Layer::PRelu(PRelu::new(spec.features)));
            }
            in_c = spec.features;
        }

        // Decoder mirror: stride-1 conv out of the latent, residual blocks,
        // then transposed convolutions undoing each downsampling stage.
        let mut decoder = Vec::new();
        let specs = &cfg.encoder_layers;
        let last = specs.len() - 1;
        let first_width = if specs.len() >= 2 {
            specs[last - 1].features
        } else {
            cfg.input_channels
        };
        decoder.push(Layer::Conv(Conv2d::new(
            specs[last].features,
            first_width,
            specs[last].kernel,
            (1, 1),
            &mut rng,
        )?));
        decoder.push(Layer::PRelu(PRelu::new(first_width)));
        for _ in 0..cfg.residual_block_count {
            decoder.push(Layer::Residual(ResidualBlock::new(
                first_width,
                cfg.residual_kernel,
                &mut rng,
            )?));
        }
        let mut cur = first_width;
        for i in (0..last).rev() {
            let out_c = if i == 0 {
                cfg.input_channels
            } else {
                specs[i - 1].features
            };
            let spec = &specs[i];
            if spec.down == (1, 1) {
                decoder.push(Layer::Conv(Conv2d::new(cur, out_c, spec.kernel, (1, 1), &mut rng)?));
            } else {
                decoder.push(Layer::ConvT(ConvTranspose2d::new(
                    cur,
                    out_c,
                    spec.kernel,
                    spec.down,
                    &mut rng,
                )?));
            }
            if i > 0 {
                decoder.push(Layer::PRelu(PRelu::new(out_c)));
            }
            cur = out_c;
        }
        Ok(CodecModel {
            cfg: cfg.clone(),
            encoder,
            decoder,
            input_scale,
        })
    }

    pub fn check_input_shape(&self, t: &ChannelTensor) -> Result<()> {
        let (k, n_b, n_u) = t.shape();
        if 2 * n_u != self.cfg.input_channels {
            return Err(CsiError::InvalidArgument(format!(
                "tensor has N_U={n_u} but codec expects {} input channels",
                self.cfg.input_channels
            )));
        }
        let (dk, db) = self.cfg.total_downsample();
        if k % dk != 0 || n_b % db != 0 {
            return Err(CsiError::InvalidArgument(format!(
                "shape ({k}, {n_b}) not divisible by total downsampling ({dk}, {db})"
            )));
        }
        Ok(())
    }
}

/// Pack a channel tensor into normalized real/imaginary planes:
/// channels [re(u=0).. re(u=N_U-1), im(u=0).. im(u=N_U-1)], y = subcarrier,
/// x = BS antenna.
pub fn tensor_from_channel(t: &ChannelTensor, input_scale: f64) -> Tensor {
    let (k, n_b, n_u) = t.shape();
    let mut out = Tensor::zeros(2 * n_u, k, n_b);
    let inv = 1.0 / input_scale;
    for u in 0..n_u {
        for y in 0..k {
            for x in 0..n_b {
                let v = t.data[(y, x, u)];
                *out.at_mut(u, y, x) = v.re * inv;
                *out.at_mut(n_u + u, y, x) = v.im * inv;
            }
        }
    }
    out
}

/// Inverse of [`tensor_from_channel`].
pub fn channel_from_tensor(t: &Tensor, input_scale: f64, scenario_id: &str) -> ChannelTensor {
    let n_u = t.c / 2;
    let (k, n_b) = (t.h, t.w);
    let mut data = Array3::<Complex64>::zeros((k, n_b, n_u));
    for u in 0..n_u {
        for y in 0..k {
            for x in 0..n_b {
                data[(y, x, u)] = Complex64::new(
                    t.at(u, y, x) * input_scale,
                    t.at(n_u + u, y, x) * input_scale,
                );
            }
        }
    }
    ChannelTensor {
        data,
        scenario_id: scenario_id.to_string(),
    }
}

/// Deterministic encoder forward pass.
pub fn encode_features(model: &mut CodecModel, h: &ChannelTensor) -> Result<LatentTensor> {
    model.check_input_shape(h)?;
    let x = tensor_from_channel(h, model.input_scale);
    let z = forward_stack(&mut model.encoder, &x, false);
    Ok(LatentTensor {
        values: z,
        step: model.cfg.latent_quantizer_step,
        quantized: false,
    })
}

/// Round every latent value to the nearest multiple of the step, ties to
/// even. The training-mode gradient contract is the identity surrogate:
/// gradients pass through a quantizer node unchanged.
pub fn quantize_latent(z: &LatentTensor, step: f64) -> Result<LatentTensor> {
    if z.quantized {
        return Err(CsiError::InvalidArgument("latent already quantized".into()));
    }
    if !(step > 0.0) {
        return Err(CsiError::InvalidArgument("quantizer step must be > 0".into()));
    }
    let mut values = z.values.clone();
    for v in values.data.iter_mut() {
        *v = (*v / step).round_ties_even() * step;
    }
    Ok(LatentTensor {
        values,
        step,
        quantized: true,
    })
}

/// Deterministic decoder forward pass back to a channel tensor estimate.
pub fn decode_features(
    model: &mut CodecModel,
    z: &LatentTensor,
    scenario_id: &str,
) -> Result<ChannelTensor> {
    if z.values.c != model.cfg.latent_channels() {
        return Err(CsiError::InvalidArgument(format!(
            "latent has {} channels, codec expects {}",
            z.values.c,
            model.cfg.latent_channels()
        )));
    }
    let y = forward_stack(&mut model.decoder, &z.values, false);
    if y.data.iter().any(|v| !v.is_finite()) {
        return Err(CsiError::Numeric("decoder produced non-finite values".into()));
    }
    Ok(channel_from_tensor(&y, model.input_scale, scenario_id))
}

/// Weighted rate-distortion objective: per-entry MSE plus
/// rd_lambda * bits per entry. An entry is one complex CSI coefficient.
pub fn rd_loss(h: &ChannelTensor, h_hat: &ChannelTensor, rate_bits: f64, rd_lambda: f64) -> Result<f64> {
    if h.shape() != h_hat.shape() {
        return Err(CsiError::InvalidArgument("shape mismatch in rd_loss".into()));
    }
    let n = h.entry_count() as f64;
    let mse = h
        .data
        .iter()
        .zip(h_hat.data.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / n;
    Ok(mse + rd_lambda * rate_bits / n)
}

// --- checkpoint container -------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ArchFile {
    format_version: u32,
    config: CodecConfig,
    input_scale: f64,
    init_seed: u64,
    pmf_id: u64,
    entropy_model: EntropyModel,
    n_params: usize,
}

/// Persist a model checkpoint: `arch.json` plus `weights.bin` (little-endian
/// float32 in declared layer order, encoder then decoder).
pub fn save_checkpoint(
    dir: &Path,
    model: &CodecModel,
    em: &EntropyModel,
    init_seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = model.clone();
    let mut flat = nn::collect_values(&mut m.encoder);
    flat.extend(nn::collect_values(&mut m.decoder));
    let arch = ArchFile {
        format_version: 1,
        config: model.cfg.clone(),
        input_scale: model.input_scale,
        init_seed,
        pmf_id: em.pmf_id,
        entropy_model: em.clone(),
        n_params: flat.len(),
    };
    fs::write(dir.join("arch.json"), serde_json::to_string_pretty(&arch)?)?;
    let mut bytes = Vec::with_capacity(flat.len() * 4);
    for v in &flat {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(CodecModel, EntropyModel)> {
    let arch: ArchFile = serde_json::from_str(&fs::read_to_string(dir.join("arch.json"))?)?;
    if arch.format_version != 1 {
        return Err(CsiError::Config(format!(
            "unsupported checkpoint version {}",
            arch.format_version
        )));
    }
    arch.entropy_model.validate()?;
    if arch.entropy_model.pmf_id != arch.pmf_id {
        return Err(CsiError::Config("checkpoint pmf_id mismatch".into()));
    }
    let mut model = CodecModel::build(&arch.config, arch.input_scale, arch.init_seed)?;
    let bytes = fs::read(dir.join("weights.bin"))?;
    if bytes.len() != arch.n_params * 4 {
        return Err(CsiError::Decode(format!(
            "weights.bin holds {} bytes, expected {}",
            bytes.len(),
            arch.n_params * 4
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let n_enc = nn::param_count(&mut model.encoder);
    nn::set_values(&mut model.encoder, &flat[..n_enc]);
    nn::set_values(&mut model.decoder, &flat[n_enc..]);
    Ok((model, arch.entropy_model))
}

// --- bitstream file format ------------------------------------------------

/// Serialize with the 16-byte header: magic, version, symbol count (u32 LE),
/// and the low 56 bits of the pmf id.
pub fn write_bitstream(bs: &LatentBitstream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + bs.bytes.len());
    out.extend_from_slice(&BITSTREAM_MAGIC);
    out.push(BITSTREAM_VERSION);
    out.extend_from_slice(&(bs.symbol_count as u32).to_le_bytes());
    out.extend_from_slice(&bs.pmf_id.to_le_bytes()[..7]);
    out.extend_from_slice(&bs.bytes);
    out
}

/// Parse a bitstream file; `pmf_id` restores the full model hash after its
/// truncated form is checked.
pub fn read_bitstream(bytes: &[u8], pmf_id: u64) -> Result<LatentBitstream> {
    if bytes.len() < HEADER_BYTES {
        return Err(CsiError::Decode("bitstream shorter than header".into()));
    }
    if bytes[..4] != BITSTREAM_MAGIC {
        return Err(CsiError::Decode("bad bitstream magic".into()));
    }
    if bytes[4] != BITSTREAM_VERSION {
        return Err(CsiError::Decode(format!("unsupported bitstream version {}", bytes[4])));
    }
    let symbol_count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let mut truncated = [0u8; 8];
    truncated[..7].copy_from_slice(&bytes[9..16]);
    let expect = u64::from_le_bytes(truncated);
    if expect != pmf_id & 0x00FF_FFFF_FFFF_FFFF {
        return Err(CsiError::Decode("bitstream pmf_id does not match entropy model".into()));
    }
    let payload = bytes[HEADER_BYTES..].to_vec();
    Ok(LatentBitstream {
        bit_length: payload.len() * 8,
        bytes: payload,
        symbol_count,
        pmf_id,
    })
}
