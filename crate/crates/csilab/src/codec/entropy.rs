//! Per-feature-channel entropy model over quantization indices.
//!
//! The model is a smoothed empirical histogram per latent channel. It serves
//! three roles: the training rate surrogate, the initializer for the adaptive
//! binary contexts of the arithmetic coder, and the rate report.

use serde::{Deserialize, Serialize};

use crate::codec::LatentTensor;
use crate::error::{CsiError, Result};

/// Smoothed PMF over a contiguous index support for one latent channel.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelPmf {
    /// Lowest supported quantization index.
    pub min_index: i64,
    /// Probabilities for indices min_index..=min_index + len - 1; each > 0,
    /// sums to 1.
    pub probs: Vec<f64>,
}

impl ChannelPmf {
    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn max_index(&self) -> i64 {
        self.min_index + self.probs.len() as i64 - 1
    }

    /// Clamp an index into the supported range.
    pub fn clamp(&self, idx: i64) -> i64 {
        idx.clamp(self.min_index, self.max_index())
    }

    pub fn prob(&self, idx: i64) -> f64 {
        self.probs[(self.clamp(idx) - self.min_index) as usize]
    }

    /// -log2 p at a clamped index.
    pub fn bits(&self, idx: i64) -> f64 {
        -self.prob(idx).log2()
    }

    /// -log2 p linearly interpolated at a real-valued index; the training
    /// surrogate evaluated at soft indices.
    pub fn soft_bits(&self, u: f64) -> f64 {
        let lo = u.floor();
        let frac = u - lo;
        let a = self.bits(lo as i64);
        let b = self.bits(lo as i64 + 1);
        a + frac * (b - a)
    }

    /// d/du of [`soft_bits`].
    pub fn soft_bits_grad(&self, u: f64) -> f64 {
        let lo = u.floor() as i64;
        self.bits(lo + 1) - self.bits(lo)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EntropyModel {
    pub channels: Vec<ChannelPmf>,
    pub smoothing: f64,
    /// Stable hash of the model contents, used to pair bitstreams with the
    /// model that produced them.
    pub pmf_id: u64,
}

impl EntropyModel {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (c, pmf) in self.channels.iter().enumerate() {
            if pmf.probs.is_empty() {
                return Err(CsiError::InvalidArgument(format!("channel {c} has empty support")));
            }
            let sum: f64 = pmf.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(CsiError::InvalidArgument(format!(
                    "channel {c} PMF sums to {sum}"
                )));
            }
            if pmf.probs.iter().any(|&p| !(p > 0.0)) {
                return Err(CsiError::InvalidArgument(format!(
                    "channel {c} has a nonpositive probability"
                )));
            }
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn hash_model(channels: &[ChannelPmf], smoothing: f64) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&smoothing.to_le_bytes());
    for pmf in channels {
        bytes.extend_from_slice(&pmf.min_index.to_le_bytes());
        bytes.extend_from_slice(&(pmf.probs.len() as u64).to_le_bytes());
        for p in &pmf.probs {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
    }
    fnv1a(&bytes)
}

pub const DEFAULT_SMOOTHING: f64 = 0.25;

/// Fit per-channel smoothed histograms over the quantization indices of a
/// collection of quantized latents.
pub fn fit_entropy_model(latents: &[&LatentTensor], smoothing: f64) -> Result<EntropyModel> {
    let first = latents
        .first()
        .ok_or_else(|| CsiError::InvalidArgument("empty latent collection".into()))?;
    let n_channels = first.values.c;
    let step = first.step;
    for z in latents {
        if !z.quantized {
            return Err(CsiError::InvalidArgument("latents must be quantized".into()));
        }
        if z.values.c != n_channels {
            return Err(CsiError::InvalidArgument("latent channel counts differ".into()));
        }
    }

    let mut channels = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let mut min_idx = i64::MAX;
        let mut max_idx = i64::MIN;
        for z in latents {
            for &v in z.values.channel(c) {
                let i = (v / step).round() as i64;
                min_idx = min_idx.min(i);
                max_idx = max_idx.max(i);
            }
        }
        // widen by one index each side so near-miss test values stay coded
        min_idx -= 1;
        max_idx += 1;
        let len = (max_idx - min_idx + 1) as usize;
        let mut counts = vec![0u64; len];
        let mut total = 0u64;
        for z in latents {
            for &v in z.values.channel(c) {
                let i = (v / step).round() as i64;
                counts[(i - min_idx) as usize] += 1;
                total += 1;
            }
        }
        let denom = total as f64 + smoothing * len as f64;
        let probs: Vec<f64> = counts
            .iter()
            .map(|&n| (n as f64 + smoothing) / denom)
            .collect();
        channels.push(ChannelPmf {
            min_index: min_idx,
            probs,
        });
    }
    let pmf_id = hash_model(&channels, smoothing);
    let em = EntropyModel {
        channels,
        smoothing,
        pmf_id,
    };
    em.validate()?;
    Ok(em)
}

/// Total -log2 p over all latent entries, in bits. Out-of-support indices
/// are mapped to the nearest supported index.
pub fn entropy_rate(z: &LatentTensor, em: &EntropyModel) -> Result<f64> {
    if !z.quantized {
        return Err(CsiError::InvalidArgument("entropy_rate needs a quantized latent".into()));
    }
    if z.values.c != em.n_channels() {
        return Err(CsiError::InvalidArgument(format!(
            "latent has {} channels, model has {}",
            z.values.c,
            em.n_channels()
        )));
    }
    let mut bits = 0.0;
    for c in 0..z.values.c {
        let pmf = &em.channels[c];
        for &v in z.values.channel(c) {
            bits += pmf.bits((v / z.step).round() as i64);
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::nn::Tensor;

    fn latent_from(vals: Vec<f64>, c: usize, h: usize, w: usize) -> LatentTensor {
        LatentTensor {
            values: Tensor { c, h, w, data: vals },
            step: 1.0,
            quantized: true,
        }
    }

    #[test]
    fn all_zero_latents_concentrate_at_zero() {
        let z = latent_from(vec![0.0; 16], 1, 4, 4);
        let em = fit_entropy_model(&[&z], DEFAULT_SMOOTHING).unwrap();
        let pmf = &em.channels[0];
        let p0 = pmf.prob(0);
        assert!(p0 > 0.9, "p(0) = {p0}");
        assert!(pmf.prob(-1) > 0.0 && pmf.prob(1) > 0.0);
    }

    #[test]
    fn pmfs_sum_to_one() {
        let z = latent_from(vec![0.0, 1.0, 1.0, 3.0, -2.0, 0.0, 1.0, 2.0], 2, 2, 2);
        let em = fit_entropy_model(&[&z], DEFAULT_SMOOTHING).unwrap();
        for pmf in &em.channels {
            let s: f64 = pmf.probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_indices_near_uniform_entropy() {
        // indices cycling over {-2..2}: per-symbol entropy ~ log2(5)
        let n = 5000;
        let vals: Vec<f64> = (0..n).map(|i| (i % 5) as f64 - 2.0).collect();
        let z = latent_from(vals, 1, 1, n);
        let em = fit_entropy_model(&[&z], 1e-6).unwrap();
        let bits = entropy_rate(&z, &em).unwrap() / n as f64;
        let target = 5f64.log2();
        assert!((bits - target).abs() / target < 0.02, "bits {bits}");
    }

    #[test]
    fn deterministic_pmf_near_zero_bits() {
        let n = 1000;
        let z = latent_from(vec![2.0; n], 1, 1, n);
        let em = fit_entropy_model(&[&z], 1e-9).unwrap();
        let bits = entropy_rate(&z, &em).unwrap();
        assert!(bits / (n as f64) < 1e-6, "bits per symbol {}", bits / n as f64);
    }

    #[test]
    fn uniform_pmf_bits_per_symbol() {
        // uniform over 2^3 = 8 indices: n entries cost n * 3 bits
        let n = 8 * 100;
        let vals: Vec<f64> = (0..n).map(|i| (i % 8) as f64).collect();
        let z = latent_from(vals, 1, 1, n);
        let channels = vec![ChannelPmf {
            min_index: 0,
            probs: vec![0.125; 8],
        }];
        let pmf_id = hash_model(&channels, 0.0);
        let em = EntropyModel {
            channels,
            smoothing: 0.0,
            pmf_id,
        };
        let bits = entropy_rate(&z, &em).unwrap();
        assert!((bits - (n as f64 * 3.0)).abs() < 1e-6);
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(fit_entropy_model(&[], DEFAULT_SMOOTHING).is_err());
    }

    #[test]
    fn soft_bits_interpolates_and_differentiates() {
        let pmf = ChannelPmf {
            min_index: 0,
            probs: vec![0.5, 0.25, 0.25],
        };
        let b0 = pmf.bits(0);
        let b1 = pmf.bits(1);
        let mid = pmf.soft_bits(0.5);
        assert!((mid - 0.5 * (b0 + b1)).abs() < 1e-12);
        assert!((pmf.soft_bits_grad(0.3) - (b1 - b0)).abs() < 1e-12);
    }

    #[test]
    fn pmf_id_stable_and_content_sensitive() {
        let z = latent_from(vec![0.0, 1.0, -1.0, 0.0], 1, 2, 2);
        let a = fit_entropy_model(&[&z], DEFAULT_SMOOTHING).unwrap();
        let b = fit_entropy_model(&[&z], DEFAULT_SMOOTHING).unwrap();
        assert_eq!(a.pmf_id, b.pmf_id);
        let z2 = latent_from(vec![0.0, 2.0, -1.0, 0.0], 1, 2, 2);
        let c = fit_entropy_model(&[&z2], DEFAULT_SMOOTHING).unwrap();
        assert_ne!(a.pmf_id, c.pmf_id);
    }
}
