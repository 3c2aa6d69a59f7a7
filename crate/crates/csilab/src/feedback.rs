//! Uplink CSI feedback links.
//!
//! Digital path: the coded latent payload is delivered iff it fits under the
//! instantaneous feedback capacity sum; otherwise the BS is left with nothing
//! (outage, all-zero reconstruction, 0 dB NMSE). Analog path: encoder
//! features are paired into complex symbols, power-normalized, sent over the
//! per-subcarrier SIMO channels, and recovered with MRC before the feature
//! decoder; the channel sits inside the autoencoder as a non-trainable layer.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{channel_at_subcarrier, sample_multipath, ChannelTensor, ScenarioConfig};
use crate::codec::entropy::EntropyModel;
use crate::codec::nn::{
    backward_stack, collect_grads, forward_stack, param_count, zero_grads, Adam, Tensor,
};
use crate::codec::train::{EpochStats, TrainLog, TrainSchedule};
use crate::codec::cabac::arith_decode;
use crate::codec::{tensor_from_channel, CodecConfig, CodecModel, ConvSpec, LatentBitstream};
use crate::error::{CsiError, Result};
use crate::parallel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Number of uplink subcarriers K_u.
    pub k_uplink: usize,
    /// Subcarriers dedicated to CSI feedback, N_F.
    pub n_feedback_subcarriers: usize,
    /// Uplink SNR in dB (may be +inf for a noiseless link).
    pub snr_db: f64,
    pub subcarrier_selection_seed: u64,
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_feedback_subcarriers == 0 || self.n_feedback_subcarriers > self.k_uplink {
            return Err(CsiError::Config(
                "need 0 < N_F <= K_u for the feedback overhead".into(),
            ));
        }
        Ok(())
    }

    /// Feedback overhead rho = N_F / K_u.
    pub fn rho(&self) -> f64 {
        self.n_feedback_subcarriers as f64 / self.k_uplink as f64
    }

    pub fn snr_linear(&self) -> f64 {
        if self.snr_db.is_infinite() && self.snr_db > 0.0 {
            f64::INFINITY
        } else {
            10f64.powf(self.snr_db / 10.0)
        }
    }

    /// Noise variance for unit-power symbols.
    pub fn noise_variance(&self) -> f64 {
        let snr = self.snr_linear();
        if snr.is_infinite() {
            0.0
        } else {
            1.0 / snr
        }
    }
}

/// One draw of the uplink feedback subchannels.
#[derive(Debug, Clone)]
pub struct FeedbackRealization {
    /// N_F per-subcarrier SIMO vectors of length N_B.
    pub channels: Vec<Vec<Complex64>>,
    pub noise_variance: f64,
    pub selected_indices: Vec<usize>,
}

/// Draw an uplink channel from the scenario generator and pick N_F distinct
/// feedback subcarriers uniformly at random.
pub fn sample_feedback_realization<R: Rng>(
    uplink: &ScenarioConfig,
    fb: &FeedbackConfig,
    rng: &mut R,
) -> Result<FeedbackRealization> {
    fb.validate()?;
    if uplink.ofdm.n_subcarriers != fb.k_uplink {
        return Err(CsiError::Config(format!(
            "uplink scenario has {} subcarriers but feedback config says K_u = {}",
            uplink.ofdm.n_subcarriers, fb.k_uplink
        )));
    }
    let mut scenario = uplink.clone();
    scenario.array.n_ue_antennas = 1;
    let mp = sample_multipath(&scenario, rng)?;
    let mut indices: Vec<usize> = (0..fb.k_uplink).collect();
    indices.shuffle(rng);
    indices.truncate(fb.n_feedback_subcarriers);
    let channels = indices
        .iter()
        .map(|&k| {
            let h = channel_at_subcarrier(&mp, &scenario.array, &scenario.ofdm, k)?;
            Ok(h.row(0).iter().copied().collect())
        })
        .collect::<Result<Vec<Vec<Complex64>>>>()?;
    Ok(FeedbackRealization {
        channels,
        noise_variance: fb.noise_variance(),
        selected_indices: indices,
    })
}

/// Instantaneous feedback capacity: sum over subcarriers of
/// log2(1 + snr * ||h_j||^2) bits.
pub fn feedback_capacity(fr: &FeedbackRealization, snr: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(CsiError::InvalidArgument("snr must be >= 0".into()));
    }
    Ok(fr
        .channels
        .iter()
        .map(|h| {
            let gain: f64 = h.iter().map(|c| c.norm_sqr()).sum();
            (1.0 + snr * gain).log2()
        })
        .sum())
}

#[derive(Debug, Clone)]
pub struct DigitalFeedbackOutcome {
    pub delivered: bool,
    pub capacity_bits: f64,
    pub payload_bits: usize,
    pub reconstruction: ChannelTensor,
}

/// Capacity-bound digital feedback: error-free delivery when the payload
/// fits, outage (all-zero reconstruction) when it does not.
pub fn digital_feedback(
    bs: &LatentBitstream,
    fr: &FeedbackRealization,
    snr: f64,
    model: &mut CodecModel,
    em: &EntropyModel,
    latent_shape: (usize, usize, usize),
    reference: &ChannelTensor,
) -> Result<DigitalFeedbackOutcome> {
    let capacity_bits = feedback_capacity(fr, snr)?;
    let delivered = bs.bit_length as f64 <= capacity_bits;
    let reconstruction = if delivered {
        let z = arith_decode(bs, em, latent_shape, model.cfg.latent_quantizer_step)?;
        crate::codec::decode_features(model, &z, &reference.scenario_id)?
    } else {
        reference.zeros_like()
    };
    Ok(DigitalFeedbackOutcome {
        delivered,
        capacity_bits,
        payload_bits: bs.bit_length,
        reconstruction,
    })
}

/// Group consecutive real features into complex symbols.
pub fn pair_to_symbols(latent: &[f64]) -> Result<Vec<Complex64>> {
    if latent.len() % 2 != 0 {
        return Err(CsiError::InvalidArgument(
            "feature vector must have even length to form complex symbols".into(),
        ));
    }
    Ok(latent
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect())
}

pub fn unpair_symbols(symbols: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * symbols.len());
    for s in symbols {
        out.push(s.re);
        out.push(s.im);
    }
    out
}

/// Scale to exactly unit average per-symbol power: ||out||^2 = N_F.
/// The zero vector passes through unchanged.
pub fn power_normalize(x: &[Complex64]) -> Vec<Complex64> {
    let energy: f64 = x.iter().map(|c| c.norm_sqr()).sum();
    if energy == 0.0 {
        return x.to_vec();
    }
    let g = (x.len() as f64 / energy).sqrt();
    x.iter().map(|c| c * g).collect()
}

/// Per-subcarrier SIMO transmission: y_j = h_j x_j + z_j.
pub fn simo_transmit<R: Rng>(
    x: &[Complex64],
    fr: &FeedbackRealization,
    rng: &mut R,
) -> Result<Vec<Vec<Complex64>>> {
    if x.len() != fr.channels.len() {
        return Err(CsiError::InvalidArgument(format!(
            "{} symbols but {} feedback subcarriers",
            x.len(),
            fr.channels.len()
        )));
    }
    let s = (fr.noise_variance / 2.0).sqrt();
    Ok(x.iter()
        .zip(fr.channels.iter())
        .map(|(&xj, h)| {
            h.iter()
                .map(|&hj| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    hj * xj + Complex64::new(re * s, im * s)
                })
                .collect()
        })
        .collect())
}

/// Maximum ratio combining: h^H y / ||h||^2, the unbiased estimate of the
/// transmitted symbol with post-combining SNR snr * ||h||^2.
pub fn mrc_combine(y: &[Complex64], h: &[Complex64]) -> Result<Complex64> {
    if y.len() != h.len() {
        return Err(CsiError::InvalidArgument("MRC length mismatch".into()));
    }
    let gain: f64 = h.iter().map(|c| c.norm_sqr()).sum();
    if gain == 0.0 {
        return Err(CsiError::Numeric("MRC undefined for an all-zero channel".into()));
    }
    let num: Complex64 = h.iter().zip(y.iter()).map(|(hj, yj)| hj.conj() * yj).sum();
    Ok(num / gain)
}

/// Fully convolutional analog feedback autoencoder. The encoder/decoder pair
/// reuses the codec layer machinery; there is no quantizer or entropy model.
#[derive(Debug, Clone)]
pub struct AnalogModel {
    pub net: CodecModel,
    pub n_feedback: usize,
}

impl AnalogModel {
    pub fn build(
        cfg: &CodecConfig,
        input_scale: f64,
        n_feedback: usize,
        input_shape: (usize, usize),
        seed: u64,
    ) -> Result<AnalogModel> {
        let net = CodecModel::build(cfg, input_scale, seed)?;
        let (dk, db) = cfg.total_downsample();
        let (k, n_b) = input_shape;
        if k % dk != 0 || n_b % db != 0 {
            return Err(CsiError::Config("input shape not divisible by downsampling".into()));
        }
        let flat = cfg.latent_channels() * (k / dk) * (n_b / db);
        if flat != 2 * n_feedback {
            return Err(CsiError::Config(format!(
                "encoder outputs {flat} features but 2 * N_F = {}",
                2 * n_feedback
            )));
        }
        Ok(AnalogModel { net, n_feedback })
    }

    /// Desk-scale architecture whose feature count matches 2 * N_F on a
    /// (K, N_B) grid; N_F must be a multiple of (K/4) * (N_B/4) / 2.
    pub fn desk_config(input_shape: (usize, usize), n_feedback: usize) -> Result<CodecConfig> {
        let (k, n_b) = input_shape;
        if k % 4 != 0 || n_b % 4 != 0 {
            return Err(CsiError::Config("desk analog config needs dims divisible by 4".into()));
        }
        let spatial = (k / 4) * (n_b / 4);
        if (2 * n_feedback) % spatial != 0 {
            return Err(CsiError::Config(format!(
                "2 * N_F = {} must be a multiple of the latent spatial size {spatial}",
                2 * n_feedback
            )));
        }
        Ok(CodecConfig {
            encoder_layers: vec![
                ConvSpec { features: 16, kernel: (5, 5), down: (2, 2) },
                ConvSpec { features: 16, kernel: (3, 3), down: (2, 2) },
                ConvSpec { features: 2 * n_feedback / spatial, kernel: (3, 3), down: (1, 1) },
            ],
            residual_block_count: 1,
            residual_kernel: (3, 3),
            latent_quantizer_step: 1.0,
            rd_lambda: 0.0,
            input_channels: 2,
        })
    }
}

/// End-to-end analog pass: encode, pair, normalize, transmit over the SIMO
/// feedback channels, MRC, decode.
pub fn analog_feedback_forward<R: Rng>(
    model: &mut AnalogModel,
    h_d: &ChannelTensor,
    fr: &FeedbackRealization,
    rng: &mut R,
) -> Result<ChannelTensor> {
    model.net.check_input_shape(h_d)?;
    let x = tensor_from_channel(h_d, model.net.input_scale);
    let z = forward_stack(&mut model.net.encoder, &x, false);
    if z.len() != 2 * model.n_feedback {
        return Err(CsiError::InvalidArgument(format!(
            "encoder produced {} features, expected {}",
            z.len(),
            2 * model.n_feedback
        )));
    }
    let symbols = power_normalize(&pair_to_symbols(&z.data)?);
    let received = simo_transmit(&symbols, fr, rng)?;
    let combined: Vec<Complex64> = received
        .iter()
        .zip(fr.channels.iter())
        .map(|(y, h)| mrc_combine(y, h))
        .collect::<Result<_>>()?;
    let feats = unpair_symbols(&combined);
    let latent = Tensor {
        c: z.c,
        h: z.h,
        w: z.w,
        data: feats,
    };
    let y = forward_stack(&mut model.net.decoder, &latent, false);
    if y.data.iter().any(|v| !v.is_finite()) {
        return Err(CsiError::Numeric("analog decoder produced non-finite values".into()));
    }
    Ok(crate::codec::channel_from_tensor(
        &y,
        model.net.input_scale,
        &h_d.scenario_id,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct AnalogArchFile {
    format_version: u32,
    config: CodecConfig,
    input_scale: f64,
    init_seed: u64,
    n_feedback: usize,
    input_shape: (usize, usize),
    n_params: usize,
}

/// Persist an analog model: `arch.json` plus `weights.bin` (little-endian
/// float32, encoder then decoder).
pub fn save_analog_checkpoint(
    dir: &std::path::Path,
    model: &AnalogModel,
    input_shape: (usize, usize),
    init_seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut m = model.net.clone();
    let mut flat = crate::codec::nn::collect_values(&mut m.encoder);
    flat.extend(crate::codec::nn::collect_values(&mut m.decoder));
    let arch = AnalogArchFile {
        format_version: 1,
        config: model.net.cfg.clone(),
        input_scale: model.net.input_scale,
        init_seed,
        n_feedback: model.n_feedback,
        input_shape,
        n_params: flat.len(),
    };
    std::fs::write(dir.join("arch.json"), serde_json::to_string_pretty(&arch)?)?;
    let mut bytes = Vec::with_capacity(flat.len() * 4);
    for v in &flat {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load_analog_checkpoint(dir: &std::path::Path) -> Result<AnalogModel> {
    let arch: AnalogArchFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join("arch.json"))?)?;
    if arch.format_version != 1 {
        return Err(CsiError::Config(format!(
            "unsupported checkpoint version {}",
            arch.format_version
        )));
    }
    let mut model = AnalogModel::build(
        &arch.config,
        arch.input_scale,
        arch.n_feedback,
        arch.input_shape,
        arch.init_seed,
    )?;
    let bytes = std::fs::read(dir.join("weights.bin"))?;
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
    let n_enc = param_count(&mut model.net.encoder);
    crate::codec::nn::set_values(&mut model.net.encoder, &flat[..n_enc]);
    crate::codec::nn::set_values(&mut model.net.decoder, &flat[n_enc..]);
    Ok(model)
}

const GRAD_CHUNK: usize = 8;

struct AnalogSampleGrad {
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
    mse_sum: f64,
    count: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_analog_samples(
    model: &AnalogModel,
    inputs: &[&Tensor],
    fr: &FeedbackRealization,
    scale_sq: f64,
    rng_seed: u64,
) -> AnalogSampleGrad {
    let mut m = model.net.clone();
    zero_grads(&mut m.encoder);
    zero_grads(&mut m.decoder);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut mse_sum = 0.0;
    for &x in inputs {
        let entries = (x.len() / 2) as f64;
        let z = forward_stack(&mut m.encoder, x, true);
        let v = &z.data;
        // normalize: s = sqrt(N_F) * v / ||v||
        let energy: f64 = v.iter().map(|a| a * a).sum();
        let n_f = model.n_feedback as f64;
        let g = if energy > 0.0 { (n_f / energy).sqrt() } else { 1.0 };
        let s: Vec<f64> = v.iter().map(|a| a * g).collect();
        // channel + MRC collapses to x_j + h_j^H z_j / ||h_j||^2: additive
        // complex noise of variance sigma^2 / ||h_j||^2 per symbol
        let mut r = s.clone();
        for (j, h) in fr.channels.iter().enumerate() {
            let gain: f64 = h.iter().map(|c| c.norm_sqr()).sum();
            let std = (fr.noise_variance / (2.0 * gain)).sqrt();
            let nre: f64 = StandardNormal.sample(&mut rng);
            let nim: f64 = StandardNormal.sample(&mut rng);
            r[2 * j] += nre * std;
            r[2 * j + 1] += nim * std;
        }
        let latent = Tensor {
            c: z.c,
            h: z.h,
            w: z.w,
            data: r,
        };
        let y = forward_stack(&mut m.decoder, &latent, true);
        let mut gy = Tensor::zeros(y.c, y.h, y.w);
        let mut sq = 0.0;
        for ((gv, &yv), &xv) in gy.data.iter_mut().zip(y.data.iter()).zip(x.data.iter()) {
            let d = yv - xv;
            sq += d * d;
            *gv = 2.0 * scale_sq * d / entries;
        }
        mse_sum += scale_sq * sq / entries;
        let gr = backward_stack(&mut m.decoder, &gy);
        // back through the additive channel (identity) and the power
        // normalization jacobian g * (I - v v^T / ||v||^2)
        let gs = gr.data;
        let gz: Vec<f64> = if energy > 0.0 {
            let dot: f64 = v.iter().zip(gs.iter()).map(|(a, b)| a * b).sum();
            v.iter()
                .zip(gs.iter())
                .map(|(&vi, &gi)| g * (gi - vi * dot / energy))
                .collect()
        } else {
            gs
        };
        let gz = Tensor {
            c: z.c,
            h: z.h,
            w: z.w,
            data: gz,
        };
        backward_stack(&mut m.encoder, &gz);
    }
    AnalogSampleGrad {
        enc_grad: collect_grads(&mut m.encoder),
        dec_grad: collect_grads(&mut m.decoder),
        mse_sum,
        count: inputs.len(),
    }
}

/// Train the analog autoencoder end to end with the feedback channel as a
/// non-trainable layer; a fresh channel realization is drawn per batch.
pub fn train_analog(
    tensors: &[ChannelTensor],
    input_scale: f64,
    cfg: &CodecConfig,
    uplink: &ScenarioConfig,
    fb: &FeedbackConfig,
    schedule: &TrainSchedule,
) -> Result<(AnalogModel, TrainLog)> {
    if tensors.is_empty() {
        return Err(CsiError::InvalidArgument("training dataset is empty".into()));
    }
    schedule.validate()?;
    fb.validate()?;
    let (k, n_b, _) = tensors[0].shape();
    let mut model = AnalogModel::build(cfg, input_scale, fb.n_feedback_subcarriers, (k, n_b), schedule.seed)?;
    let inputs: Vec<Tensor> = parallel::map_slice(tensors, |t| tensor_from_channel(t, input_scale));
    let scale_sq = input_scale * input_scale;

    let n_enc = param_count(&mut model.net.encoder);
    let n_dec = param_count(&mut model.net.decoder);
    let mut opt_enc = Adam::new(schedule.learning_rate, n_enc);
    let mut opt_dec = Adam::new(schedule.learning_rate, n_dec);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x616e_6c67);
    let mut log = TrainLog::default();

    let mut batch_counter = 0u64;
    for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let mut mse_acc = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(schedule.batch_size) {
            batch_counter += 1;
            let mut ch_rng =
                ChaCha8Rng::seed_from_u64(schedule.seed ^ batch_counter.wrapping_mul(0x9e37_79b9));
            let fr = sample_feedback_realization(uplink, fb, &mut ch_rng)?;
            let refs: Vec<&Tensor> = batch.iter().map(|&i| &inputs[i]).collect();
            let chunks: Vec<(usize, &[&Tensor])> =
                refs.chunks(GRAD_CHUNK).enumerate().collect();
            let base = batch_counter.wrapping_mul(0x1000);
            let partials = parallel::map_slice(&chunks, |(ci, chunk)| {
                run_analog_samples(&model, chunk, &fr, scale_sq, base + *ci as u64)
            });
            let inv = 1.0 / batch.len() as f64;
            let mut enc_grad = vec![0.0; n_enc];
            let mut dec_grad = vec![0.0; n_dec];
            for p in &partials {
                for (a, g) in enc_grad.iter_mut().zip(&p.enc_grad) {
                    *a += g * inv;
                }
                for (a, g) in dec_grad.iter_mut().zip(&p.dec_grad) {
                    *a += g * inv;
                }
                mse_acc += p.mse_sum;
                seen += p.count;
            }
            if enc_grad.iter().chain(dec_grad.iter()).any(|g| !g.is_finite()) {
                return Err(CsiError::Numeric(format!(
                    "analog training diverged at epoch {epoch}"
                )));
            }
            opt_enc.step(&mut model.net.encoder, &enc_grad);
            opt_dec.step(&mut model.net.decoder, &dec_grad);
        }
        let mse = mse_acc / seen as f64;
        if !mse.is_finite() {
            return Err(CsiError::Numeric(format!("analog training diverged at epoch {epoch}")));
        }
        log.epochs.push(EpochStats {
            epoch,
            mse,
            bits_per_entry: 0.0,
            loss: mse,
        });
    }
    Ok((model, log))
}
