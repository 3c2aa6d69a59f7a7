//! Metrics, rate accounting, and experiment sweeps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{generate_sample, ChannelTensor, ScenarioConfig};
use crate::codec::cabac::arith_encode;
use crate::codec::dct::dct_baseline_compress;
use crate::codec::entropy::EntropyModel;
use crate::codec::{
    encode_features, load_checkpoint, quantize_latent, CodecModel, LatentBitstream, HEADER_BYTES,
};
use crate::error::{CsiError, Result};
use crate::feedback::{
    analog_feedback_forward, feedback_capacity, load_analog_checkpoint,
    sample_feedback_realization, AnalogModel, FeedbackConfig,
};
use crate::parallel;

/// Reporting floor for perfect reconstructions, keeps CSVs finite.
pub const NMSE_FLOOR_DB: f64 = -120.0;
/// Bitstream file header size in bits, reported separately from the payload.
pub const HEADER_BITS: usize = HEADER_BYTES * 8;

/// Per-sample squared-error ratio ||h - h_hat||^2_F / ||h||^2_F.
pub fn nmse_ratio(h: &ChannelTensor, h_hat: &ChannelTensor) -> Result<f64> {
    if h.shape() != h_hat.shape() {
        return Err(CsiError::InvalidArgument(format!(
            "nmse shape mismatch: {:?} vs {:?}",
            h.shape(),
            h_hat.shape()
        )));
    }
    let den = h.frobenius_sq();
    if den == 0.0 {
        return Err(CsiError::InvalidArgument(
            "nmse undefined for an all-zero reference".into(),
        ));
    }
    let num: f64 = h
        .data
        .iter()
        .zip(h_hat.data.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / den)
}

/// Clamp a power ratio to the dB reporting floor.
pub fn ratio_to_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
    }
}

/// Per-sample NMSE in dB.
pub fn nmse_db(h: &ChannelTensor, h_hat: &ChannelTensor) -> Result<f64> {
    Ok(ratio_to_db(nmse_ratio(h, h_hat)?))
}

/// Dataset NMSE: 10 log10 of the mean per-sample ratio, not the mean of
/// per-sample dB values.
pub fn pooled_nmse_db(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(CsiError::InvalidArgument("no ratios to pool".into()));
    }
    Ok(ratio_to_db(ratios.iter().sum::<f64>() / ratios.len() as f64))
}

/// Payload rate per complex CSI entry; the file header is accounted
/// separately via [`HEADER_BITS`].
pub fn bits_per_entry(bs: &LatentBitstream, h_shape: (usize, usize, usize)) -> f64 {
    let (k, n_b, n_u) = h_shape;
    bs.bit_length as f64 / (k * n_b * n_u) as f64
}

/// One point on a rate-distortion curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateDistortionPoint {
    /// Mean payload bits per complex CSI entry (header excluded).
    pub bits_per_entry: f64,
    pub nmse_db: f64,
    pub rd_lambda: f64,
    pub scenario_id: String,
}

/// Compress every test sample and pool NMSE and payload rate.
pub fn codec_rd_point(
    model: &mut CodecModel,
    em: &EntropyModel,
    test: &[ChannelTensor],
) -> Result<RateDistortionPoint> {
    if test.is_empty() {
        return Err(CsiError::InvalidArgument("empty test set".into()));
    }
    let step = model.cfg.latent_quantizer_step;
    let results: Vec<Result<(f64, f64)>> = {
        let m = &*model;
        parallel::map_slice(test, |h| {
            let mut local = m.clone();
            let z = quantize_latent(&encode_features(&mut local, h)?, step)?;
            let bs = arith_encode(&z, em)?;
            let h_hat = crate::codec::decode_features(&mut local, &z, &h.scenario_id)?;
            Ok((nmse_ratio(h, &h_hat)?, bits_per_entry(&bs, h.shape())))
        })
    };
    let mut ratios = Vec::with_capacity(test.len());
    let mut rate = 0.0;
    for r in results {
        let (ratio, bpe) = r?;
        ratios.push(ratio);
        rate += bpe;
    }
    Ok(RateDistortionPoint {
        bits_per_entry: rate / test.len() as f64,
        nmse_db: pooled_nmse_db(&ratios)?,
        rd_lambda: model.cfg.rd_lambda,
        scenario_id: test[0].scenario_id.clone(),
    })
}

/// DCT top-k comparator at a fixed keep fraction and coefficient depth.
pub fn dct_rd_point(
    test: &[ChannelTensor],
    keep_fraction: f64,
    bits_per_coeff: u32,
) -> Result<RateDistortionPoint> {
    if test.is_empty() {
        return Err(CsiError::InvalidArgument("empty test set".into()));
    }
    let results: Vec<Result<(f64, f64)>> = parallel::map_slice(test, |h| {
        let (c, h_hat) = dct_baseline_compress(h, keep_fraction, bits_per_coeff)?;
        Ok((
            nmse_ratio(h, &h_hat)?,
            c.total_bits as f64 / h.entry_count() as f64,
        ))
    });
    let mut ratios = Vec::with_capacity(test.len());
    let mut rate = 0.0;
    for r in results {
        let (ratio, bpe) = r?;
        ratios.push(ratio);
        rate += bpe;
    }
    Ok(RateDistortionPoint {
        bits_per_entry: rate / test.len() as f64,
        nmse_db: pooled_nmse_db(&ratios)?,
        rd_lambda: -1.0,
        scenario_id: test[0].scenario_id.clone(),
    })
}

/// Digital feedback outcome statistics at one overhead point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutagePoint {
    pub rho: f64,
    pub outage_rate: f64,
    /// Pooled over all trials; outages contribute ratio 1 (0 dB).
    pub pooled_nmse_db: f64,
    /// Pooled over delivered trials only; None when every trial outages.
    pub delivered_nmse_db: Option<f64>,
}

/// Monte Carlo digital feedback at overhead rho = n_f / k_uplink. Trial t
/// sends the compressed form of test sample t mod n over a fresh uplink
/// draw; an outage counts as a 0 dB reconstruction.
pub fn digital_outage_point(
    model: &mut CodecModel,
    em: &EntropyModel,
    test: &[ChannelTensor],
    uplink: &ScenarioConfig,
    fb: &FeedbackConfig,
    trials: usize,
    seed: u64,
) -> Result<OutagePoint> {
    if test.is_empty() || trials == 0 {
        return Err(CsiError::InvalidArgument("need test samples and trials >= 1".into()));
    }
    // per-sample payload size and delivered-quality ratio are channel
    // independent; precompute once
    let step = model.cfg.latent_quantizer_step;
    let per_sample: Vec<(usize, f64)> = {
        let m = &*model;
        parallel::map_slice(test, |h| -> Result<(usize, f64)> {
            let mut local = m.clone();
            let z = quantize_latent(&encode_features(&mut local, h)?, step)?;
            let bs = arith_encode(&z, em)?;
            let h_hat = crate::codec::decode_features(&mut local, &z, &h.scenario_id)?;
            Ok((bs.bit_length, nmse_ratio(h, &h_hat)?))
        })
        .into_iter()
        .collect::<Result<_>>()?
    };
    let snr = fb.snr_linear();
    let trial_results: Vec<Result<(bool, f64)>> = {
        let indices: Vec<u64> = (0..trials as u64).collect();
        parallel::map_slice(&indices, |&t| {
            let mut rng = crate::channel::sample_rng(seed, t);
            let fr = sample_feedback_realization(uplink, fb, &mut rng)?;
            let capacity = feedback_capacity(&fr, snr)?;
            let (payload_bits, ratio) = per_sample[t as usize % per_sample.len()];
            if payload_bits as f64 <= capacity {
                Ok((true, ratio))
            } else {
                Ok((false, 1.0))
            }
        })
    };
    let mut pooled = Vec::with_capacity(trials);
    let mut delivered = Vec::new();
    let mut outages = 0usize;
    for r in trial_results {
        let (ok, ratio) = r?;
        pooled.push(ratio);
        if ok {
            delivered.push(ratio);
        } else {
            outages += 1;
        }
    }
    Ok(OutagePoint {
        rho: fb.rho(),
        outage_rate: outages as f64 / trials as f64,
        pooled_nmse_db: pooled_nmse_db(&pooled)?,
        delivered_nmse_db: if delivered.is_empty() {
            None
        } else {
            Some(pooled_nmse_db(&delivered)?)
        },
    })
}

/// Monte Carlo analog feedback NMSE: trial t sends test sample t mod n over
/// a fresh uplink draw with fresh noise.
pub fn analog_nmse_db(
    model: &AnalogModel,
    test: &[ChannelTensor],
    uplink: &ScenarioConfig,
    fb: &FeedbackConfig,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if test.is_empty() || trials == 0 {
        return Err(CsiError::InvalidArgument("need test samples and trials >= 1".into()));
    }
    let indices: Vec<u64> = (0..trials as u64).collect();
    let ratios: Vec<f64> = parallel::map_slice(&indices, |&t| -> Result<f64> {
        let mut rng = crate::channel::sample_rng(seed, t);
        let fr = sample_feedback_realization(uplink, fb, &mut rng)?;
        let h = &test[t as usize % test.len()];
        let mut local = model.clone();
        let h_hat = analog_feedback_forward(&mut local, h, &fr, &mut rng)?;
        nmse_ratio(h, &h_hat)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    pooled_nmse_db(&ratios)
}

// --- sweep engine ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Rate-distortion weight; one checkpoint per axis value.
    RdLambda,
    /// Feedback overhead N_F / K_u for the digital link.
    Rho,
    /// Uplink SNR for the analog link; checkpoints list analog models,
    /// one per axis value.
    SnrDb,
    /// DCT comparator retained-coefficient fraction.
    KeepFraction,
}

fn default_n_test() -> usize {
    64
}

fn default_snr_db() -> f64 {
    10.0
}

fn default_k_uplink() -> usize {
    128
}

fn default_dct_bits() -> u32 {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Axis values, ascending.
    pub values: Vec<f64>,
    pub trials: usize,
    pub scenario: ScenarioConfig,
    /// Codec checkpoints for rd_lambda (one per value) and rho (exactly
    /// one); analog checkpoints for snr_db (one per value); unused for
    /// keep_fraction.
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    pub seed: u64,
    /// Test samples drawn from the scenario with indices offset past any
    /// training set.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub test_index_offset: u64,
    /// Digital-link SNR for the rho axis.
    #[serde(default = "default_snr_db")]
    pub snr_db: f64,
    #[serde(default = "default_k_uplink")]
    pub k_uplink: usize,
    #[serde(default = "default_dct_bits")]
    pub dct_bits_per_coeff: u32,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CsiError::Config("sweep needs at least one axis value".into()));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(CsiError::Config("sweep values must be sorted ascending".into()));
        }
        if self.trials == 0 {
            return Err(CsiError::Config("trials must be >= 1".into()));
        }
        if self.n_test == 0 {
            return Err(CsiError::Config("n_test must be >= 1".into()));
        }
        let need = match self.axis {
            SweepAxis::RdLambda | SweepAxis::SnrDb => self.values.len(),
            SweepAxis::Rho => 1,
            SweepAxis::KeepFraction => 0,
        };
        if self.checkpoints.len() != need {
            return Err(CsiError::Config(format!(
                "axis {:?} needs {need} checkpoint(s), got {}",
                self.axis,
                self.checkpoints.len()
            )));
        }
        for p in &self.checkpoints {
            if !p.join("arch.json").is_file() {
                return Err(CsiError::Config(format!(
                    "missing checkpoint: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// One sweep cell result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub trial: usize,
    pub bits_per_entry: f64,
    pub nmse_db: f64,
    pub delivered: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub version: String,
    pub rows: Vec<SweepRow>,
}

pub fn version_string() -> String {
    format!("csilab-v{}", env!("CARGO_PKG_VERSION"))
}

fn test_set(spec: &SweepSpec) -> Result<Vec<ChannelTensor>> {
    let indices: Vec<u64> = (0..spec.n_test as u64)
        .map(|i| i + spec.test_index_offset)
        .collect();
    parallel::map_slice(&indices, |&i| generate_sample(&spec.scenario, i))
        .into_iter()
        .collect()
}

fn uplink_for(spec: &SweepSpec) -> ScenarioConfig {
    let mut up = spec.scenario.clone();
    up.ofdm.n_subcarriers = spec.k_uplink;
    up.array.n_ue_antennas = 1;
    up.scenario_id = format!("{}-uplink", spec.scenario.scenario_id);
    up
}

/// Run every (axis value, trial) cell; deterministic in the spec seed and
/// order-stable by (axis index, trial index).
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let test = test_set(spec)?;
    let mut rows = Vec::new();
    match spec.axis {
        SweepAxis::RdLambda => {
            for (vi, (&lambda, ckpt)) in spec.values.iter().zip(&spec.checkpoints).enumerate() {
                let (mut model, em) = load_checkpoint(ckpt)?;
                for trial in 0..spec.trials {
                    let h = &test[(vi * spec.trials + trial) % test.len()];
                    let z = quantize_latent(
                        &encode_features(&mut model, h)?,
                        model.cfg.latent_quantizer_step,
                    )?;
                    let bs = arith_encode(&z, &em)?;
                    let h_hat = crate::codec::decode_features(&mut model, &z, &h.scenario_id)?;
                    rows.push(SweepRow {
                        axis_value: lambda,
                        trial,
                        bits_per_entry: bits_per_entry(&bs, h.shape()),
                        nmse_db: nmse_db(h, &h_hat)?,
                        delivered: None,
                    });
                }
            }
        }
        SweepAxis::KeepFraction => {
            for (vi, &kf) in spec.values.iter().enumerate() {
                for trial in 0..spec.trials {
                    let h = &test[(vi * spec.trials + trial) % test.len()];
                    let (c, h_hat) = dct_baseline_compress(h, kf, spec.dct_bits_per_coeff)?;
                    rows.push(SweepRow {
                        axis_value: kf,
                        trial,
                        bits_per_entry: c.total_bits as f64 / h.entry_count() as f64,
                        nmse_db: nmse_db(h, &h_hat)?,
                        delivered: None,
                    });
                }
            }
        }
        SweepAxis::Rho => {
            let (mut model, em) = load_checkpoint(&spec.checkpoints[0])?;
            let uplink = uplink_for(spec);
            let step = model.cfg.latent_quantizer_step;
            // payloads and delivered ratios are channel independent
            let per_sample: Vec<(usize, f64, f64)> = test
                .iter()
                .map(|h| {
                    let z = quantize_latent(&encode_features(&mut model, h)?, step)?;
                    let bs = arith_encode(&z, &em)?;
                    let h_hat = crate::codec::decode_features(&mut model, &z, &h.scenario_id)?;
                    Ok((
                        bs.bit_length,
                        nmse_db(h, &h_hat)?,
                        bits_per_entry(&bs, h.shape()),
                    ))
                })
                .collect::<Result<_>>()?;
            for (vi, &rho) in spec.values.iter().enumerate() {
                let n_f = (rho * spec.k_uplink as f64).round().max(1.0) as usize;
                let fb = FeedbackConfig {
                    k_uplink: spec.k_uplink,
                    n_feedback_subcarriers: n_f,
                    snr_db: spec.snr_db,
                    subcarrier_selection_seed: spec.seed,
                };
                let snr = fb.snr_linear();
                for trial in 0..spec.trials {
                    let mut rng = crate::channel::sample_rng(
                        spec.seed ^ (vi as u64) << 32,
                        trial as u64,
                    );
                    let fr = sample_feedback_realization(&uplink, &fb, &mut rng)?;
                    let capacity = feedback_capacity(&fr, snr)?;
                    let (bits, quality_db, bpe) = per_sample[trial % per_sample.len()];
                    let ok = bits as f64 <= capacity;
                    rows.push(SweepRow {
                        axis_value: rho,
                        trial,
                        bits_per_entry: bpe,
                        nmse_db: if ok { quality_db } else { 0.0 },
                        delivered: Some(ok),
                    });
                }
            }
        }
        SweepAxis::SnrDb => {
            let uplink = uplink_for(spec);
            for (vi, (&snr_db, ckpt)) in spec.values.iter().zip(&spec.checkpoints).enumerate() {
                let model = load_analog_checkpoint(ckpt)?;
                let fb = FeedbackConfig {
                    k_uplink: spec.k_uplink,
                    n_feedback_subcarriers: model.n_feedback,
                    snr_db,
                    subcarrier_selection_seed: spec.seed,
                };
                let n_f = model.n_feedback;
                for trial in 0..spec.trials {
                    let mut rng = crate::channel::sample_rng(
                        spec.seed ^ (vi as u64) << 32,
                        trial as u64,
                    );
                    let fr = sample_feedback_realization(&uplink, &fb, &mut rng)?;
                    let h = &test[trial % test.len()];
                    let mut local = model.clone();
                    let h_hat = analog_feedback_forward(&mut local, h, &fr, &mut rng)?;
                    rows.push(SweepRow {
                        axis_value: snr_db,
                        trial,
                        bits_per_entry: 2.0 * n_f as f64 / h.entry_count() as f64,
                        nmse_db: nmse_db(h, &h_hat)?,
                        delivered: None,
                    });
                }
            }
        }
    }
    Ok(SweepResult {
        spec: spec.clone(),
        version: version_string(),
        rows,
    })
}

/// RFC 4180 CSV with a mandatory header row; byte-for-byte reproducible.
pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis_value", "trial", "bits_per_entry", "nmse_db", "delivered"])?;
    for r in &result.rows {
        w.write_record([
            format!("{}", r.axis_value),
            format!("{}", r.trial),
            format!("{}", r.bits_per_entry),
            format!("{}", r.nmse_db),
            match r.delivered {
                Some(true) => "true".to_string(),
                Some(false) => "false".to_string(),
                None => String::new(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_json(path: &Path, result: &SweepResult) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(result)?)?;
    Ok(())
}
