//! Pilot observation models and the coarse least-squares channel estimate.
//!
//! Covers the unquantized observation Y = H X + Z, element-wise coarse ADC
//! quantization of the received block, and the pseudo-inverse LS estimate
//! used as the classical baseline.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CsiError, Result};

/// A block of P pilot symbols across N_U transmit antennas.
#[derive(Debug, Clone)]
pub struct PilotBlock {
    /// Shape (N_U, P).
    pub symbols: DMatrix<Complex64>,
    /// Declared average per-symbol power.
    pub power: f64,
}

impl PilotBlock {
    /// Random complex-Gaussian pilots rescaled to exactly the requested
    /// average per-symbol power.
    pub fn random<R: Rng>(n_ue: usize, p: usize, power: f64, rng: &mut R) -> Result<Self> {
        if p < 1 || n_ue < 1 {
            return Err(CsiError::InvalidArgument("pilot block needs P >= 1, N_U >= 1".into()));
        }
        if !(power > 0.0) {
            return Err(CsiError::InvalidArgument("pilot power must be > 0".into()));
        }
        let mut symbols = DMatrix::<Complex64>::zeros(n_ue, p);
        for s in symbols.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *s = Complex64::new(re, im);
        }
        let actual: f64 = symbols.iter().map(|c| c.norm_sqr()).sum::<f64>() / (n_ue * p) as f64;
        let scale = (power / actual).sqrt();
        symbols.iter_mut().for_each(|c| *c *= scale);
        Ok(PilotBlock { symbols, power })
    }

    /// Identity pilots (P = N_U), unit power.
    pub fn identity(n_ue: usize) -> Self {
        PilotBlock {
            symbols: DMatrix::identity(n_ue, n_ue),
            power: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.ncols() == 0
    }
}

/// Received pilot block at the BS, possibly after coarse ADC quantization.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Shape (N_B, P).
    pub received: DMatrix<Complex64>,
    pub noise_variance: f64,
    /// 0 means unquantized.
    pub quantizer_bits: u32,
}

/// Y = H X + Z with circularly symmetric complex Gaussian noise.
pub fn transmit_pilots<R: Rng>(
    h: &DMatrix<Complex64>,
    x: &PilotBlock,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Observation> {
    if noise_variance < 0.0 {
        return Err(CsiError::InvalidArgument("noise_variance must be >= 0".into()));
    }
    if h.ncols() != x.symbols.nrows() {
        return Err(CsiError::InvalidArgument(format!(
            "channel has {} columns but pilot block has {} rows",
            h.ncols(),
            x.symbols.nrows()
        )));
    }
    let mut received = h * &x.symbols;
    if noise_variance > 0.0 {
        let s = (noise_variance / 2.0).sqrt();
        for y in received.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *y += Complex64::new(re * s, im * s);
        }
    }
    Ok(Observation {
        received,
        noise_variance,
        quantizer_bits: 0,
    })
}

/// Element-wise ADC on real and imaginary parts. 1 bit is the sign function;
/// more bits use a mid-rise uniform quantizer clipped at +-3 sigma of the
/// observed components.
pub fn quantize_observation(obs: &Observation, bits: u32) -> Result<Observation> {
    if bits == 0 {
        return Err(CsiError::InvalidArgument("quantizer bits must be >= 1".into()));
    }
    if obs.quantizer_bits != 0 {
        return Err(CsiError::InvalidArgument("observation is already quantized".into()));
    }
    let mut received = obs.received.clone();
    if bits == 1 {
        for y in received.iter_mut() {
            *y = Complex64::new(sign(y.re), sign(y.im));
        }
    } else {
        let n = 2 * received.len();
        let sigma = (received
            .iter()
            .map(|c| c.re * c.re + c.im * c.im)
            .sum::<f64>()
            / n as f64)
            .sqrt();
        let range = 3.0 * sigma.max(f64::MIN_POSITIVE);
        let step = 2.0 * range / (1u64 << bits) as f64;
        let q = |v: f64| {
            let clipped = v.clamp(-range, range - step * 0.5);
            step * ((clipped / step).floor() + 0.5)
        };
        for y in received.iter_mut() {
            *y = Complex64::new(q(y.re), q(y.im));
        }
    }
    Ok(Observation {
        received,
        noise_variance: obs.noise_variance,
        quantizer_bits: bits,
    })
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Coarse LS estimate: received times the pseudo-inverse of the pilots.
/// Rank-deficient pilots yield the minimum-norm solution.
pub fn ls_estimate(obs: &Observation, x: &PilotBlock) -> Result<DMatrix<Complex64>> {
    let pinv = x
        .symbols
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| CsiError::Numeric(format!("pseudo-inverse failed: {e}")))?;
    Ok(&obs.received * pinv)
}
