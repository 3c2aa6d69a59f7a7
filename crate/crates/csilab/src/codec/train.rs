//! Rate-distortion training of the CSI codec.
//!
//! Minimizes per-entry reconstruction MSE plus `rd_lambda` times the
//! entropy-model rate surrogate. The quantizer uses the straight-through
//! identity gradient; the rate term is the per-channel negative log
//! probability evaluated at soft (unquantized) indices. Histogram PMFs are
//! refit from the training latents every few epochs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelTensor;
use crate::codec::entropy::{fit_entropy_model, EntropyModel, DEFAULT_SMOOTHING};
use crate::codec::nn::{
    backward_stack, collect_grads, forward_stack, param_count, zero_grads, Adam, Tensor,
};
use crate::codec::{tensor_from_channel, CodecConfig, CodecModel, LatentTensor};
use crate::error::{CsiError, Result};
use crate::parallel;

/// Fixed work-chunk size for batch parallelism; independent of thread count
/// so gradient summation order (and therefore training) is reproducible.
const GRAD_CHUNK: usize = 8;
/// Number of samples used to fit/refresh the entropy model during training.
const PMF_FIT_SAMPLES: usize = 512;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Refit the rate PMFs every this many epochs.
    pub entropy_refresh_epochs: usize,
}

impl TrainSchedule {
    pub fn desk_default(seed: u64) -> TrainSchedule {
        TrainSchedule {
            epochs: 12,
            batch_size: 100,
            learning_rate: 1e-3,
            seed,
            entropy_refresh_epochs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CsiError::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CsiError::Config("learning_rate must be > 0".into()));
        }
        if self.entropy_refresh_epochs == 0 {
            return Err(CsiError::Config("entropy_refresh_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Per-complex-entry reconstruction MSE in the channel domain.
    pub mse: f64,
    /// Rate surrogate, bits per CSI entry, from the hard quantized indices.
    pub bits_per_entry: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

struct SampleGrad {
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
    mse_sum: f64,
    bits_sum: f64,
    count: usize,
}

fn run_samples(
    model: &CodecModel,
    inputs: &[&Tensor],
    em: &EntropyModel,
    rd_lambda: f64,
    scale_sq: f64,
) -> SampleGrad {
    let mut m = model.clone();
    zero_grads(&mut m.encoder);
    zero_grads(&mut m.decoder);
    let step = m.cfg.latent_quantizer_step;
    let mut mse_sum = 0.0;
    let mut bits_sum = 0.0;
    for &x in inputs {
        let entries = (x.len() / 2) as f64;
        let z = forward_stack(&mut m.encoder, x, true);
        let mut zq = z.clone();
        for v in zq.data.iter_mut() {
            *v = (*v / step).round_ties_even() * step;
        }
        let y = forward_stack(&mut m.decoder, &zq, true);
        // distortion gradient in the (normalized) decoder output domain
        let mut gy = Tensor::zeros(y.c, y.h, y.w);
        let mut sq = 0.0;
        for ((g, &yv), &xv) in gy.data.iter_mut().zip(y.data.iter()).zip(x.data.iter()) {
            let d = yv - xv;
            sq += d * d;
            *g = 2.0 * scale_sq * d / entries;
        }
        let mse = scale_sq * sq / entries;
        // straight-through: decoder input gradient passes to the encoder
        // output unchanged; add the soft-index rate gradient
        let mut gz = backward_stack(&mut m.decoder, &gy);
        let spatial = z.h * z.w;
        let mut bits = 0.0;
        for c in 0..z.c {
            let pmf = &em.channels[c];
            let zc = &z.data[c * spatial..(c + 1) * spatial];
            let zqc = &zq.data[c * spatial..(c + 1) * spatial];
            let gc = &mut gz.data[c * spatial..(c + 1) * spatial];
            for ((g, &v), &vq) in gc.iter_mut().zip(zc).zip(zqc) {
                let u = v / step;
                *g += rd_lambda / (entries * step) * pmf.soft_bits_grad(u);
                bits += pmf.bits((vq / step).round() as i64);
            }
        }
        backward_stack(&mut m.encoder, &gz);
        mse_sum += mse;
        bits_sum += bits / entries;
    }
    SampleGrad {
        enc_grad: collect_grads(&mut m.encoder),
        dec_grad: collect_grads(&mut m.decoder),
        mse_sum,
        bits_sum,
        count: inputs.len(),
    }
}

fn fit_pmfs(model: &CodecModel, inputs: &[Tensor]) -> Result<EntropyModel> {
    let n = inputs.len().min(PMF_FIT_SAMPLES);
    let step = model.cfg.latent_quantizer_step;
    let latents: Vec<LatentTensor> = parallel::map_slice(&inputs[..n], |x| {
        let mut m = model.clone();
        let z = forward_stack(&mut m.encoder, x, false);
        let mut values = z;
        for v in values.data.iter_mut() {
            *v = (*v / step).round_ties_even() * step;
        }
        LatentTensor {
            values,
            step,
            quantized: true,
        }
    });
    let refs: Vec<&LatentTensor> = latents.iter().collect();
    fit_entropy_model(&refs, DEFAULT_SMOOTHING)
}

/// Train a codec on a dataset. Deterministic given the schedule seed.
/// Returns the trained model, the final entropy model fit on the training
/// latents, and the per-epoch log.
pub fn train_codec(
    tensors: &[ChannelTensor],
    input_scale: f64,
    cfg: &CodecConfig,
    schedule: &TrainSchedule,
) -> Result<(CodecModel, EntropyModel, TrainLog)> {
    if tensors.is_empty() {
        return Err(CsiError::InvalidArgument("training dataset is empty".into()));
    }
    schedule.validate()?;
    let mut model = CodecModel::build(cfg, input_scale, schedule.seed)?;
    model.check_input_shape(&tensors[0])?;
    let inputs: Vec<Tensor> = parallel::map_slice(tensors, |t| tensor_from_channel(t, input_scale));
    let scale_sq = input_scale * input_scale;

    let mut em = fit_pmfs(&model, &inputs)?;
    let n_enc = param_count(&mut model.encoder);
    let n_dec = param_count(&mut model.decoder);
    let mut opt_enc = Adam::new(schedule.learning_rate, n_enc);
    let mut opt_dec = Adam::new(schedule.learning_rate, n_dec);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x7261_696e);
    let mut log = TrainLog::default();

    for epoch in 0..schedule.epochs {
        if epoch > 0 && epoch % schedule.entropy_refresh_epochs == 0 {
            em = fit_pmfs(&model, &inputs)?;
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let mut mse_acc = 0.0;
        let mut bits_acc = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(schedule.batch_size) {
            let refs: Vec<&Tensor> = batch.iter().map(|&i| &inputs[i]).collect();
            let chunks: Vec<&[&Tensor]> = refs.chunks(GRAD_CHUNK).collect();
            let partials = parallel::map_slice(&chunks, |chunk| {
                run_samples(&model, chunk, &em, cfg.rd_lambda, scale_sq)
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
                bits_acc += p.bits_sum;
                seen += p.count;
            }
            if enc_grad.iter().chain(dec_grad.iter()).any(|g| !g.is_finite()) {
                return Err(CsiError::Numeric(format!(
                    "training diverged (non-finite gradient) at epoch {epoch}"
                )));
            }
            opt_enc.step(&mut model.encoder, &enc_grad);
            opt_dec.step(&mut model.decoder, &dec_grad);
        }
        let mse = mse_acc / seen as f64;
        let bits = bits_acc / seen as f64;
        let loss = mse + cfg.rd_lambda * bits;
        if !loss.is_finite() {
            return Err(CsiError::Numeric(format!(
                "training diverged (loss = {loss}) at epoch {epoch}"
            )));
        }
        log.epochs.push(EpochStats {
            epoch,
            mse,
            bits_per_entry: bits,
            loss,
        });
    }

    let em = fit_pmfs(&model, &inputs)?;
    Ok((model, em, log))
}
