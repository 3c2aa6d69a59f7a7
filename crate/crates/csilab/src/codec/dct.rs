//! Classical comparator: 2-D DCT top-k coefficient compression.
//!
//! Each real/imaginary plane is transformed with an orthonormal 2-D DCT-II
//! over (subcarriers, BS antennas); the largest-magnitude fraction of
//! coefficients is kept, uniformly quantized, and recorded with positions.

use crate::channel::ChannelTensor;
use crate::codec::{channel_from_tensor, tensor_from_channel, nn::Tensor};
use crate::error::{CsiError, Result};

/// Compressed representation with explicit rate accounting.
#[derive(Debug, Clone)]
pub struct DctCompressed {
    /// (flat plane-major position, quantized coefficient) pairs.
    pub coefficients: Vec<(usize, f64)>,
    pub keep_fraction: f64,
    pub bits_per_coeff: u32,
    /// Total rate: positions + quantized magnitudes + a 64-bit scale/count
    /// header.
    pub total_bits: usize,
}

fn dct_1d(input: &[f64], out: &mut [f64]) {
    let n = input.len();
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for (p, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, &x) in input.iter().enumerate() {
            acc += x * (std::f64::consts::PI * (2 * m + 1) as f64 * p as f64 / (2 * n) as f64).cos();
        }
        *o = acc * if p == 0 { scale0 } else { scale };
    }
}

fn idct_1d(input: &[f64], out: &mut [f64]) {
    let n = input.len();
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for (m, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (p, &x) in input.iter().enumerate() {
            let a = if p == 0 { scale0 } else { scale };
            acc += a * x * (std::f64::consts::PI * (2 * m + 1) as f64 * p as f64 / (2 * n) as f64).cos();
        }
        *o = acc;
    }
}

fn dct_2d_plane(plane: &mut [f64], h: usize, w: usize, inverse: bool) {
    let mut row = vec![0.0; w];
    let mut out_row = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&plane[y * w..(y + 1) * w]);
        if inverse {
            idct_1d(&row, &mut out_row);
        } else {
            dct_1d(&row, &mut out_row);
        }
        plane[y * w..(y + 1) * w].copy_from_slice(&out_row);
    }
    let mut col = vec![0.0; h];
    let mut out_col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = plane[y * w + x];
        }
        if inverse {
            idct_1d(&col, &mut out_col);
        } else {
            dct_1d(&col, &mut out_col);
        }
        for y in 0..h {
            plane[y * w + x] = out_col[y];
        }
    }
}

/// Compress a CSI tensor by keeping the top `keep_fraction` of DCT
/// coefficients at `bits_per_coeff` bits each; returns the rate-accounted
/// representation and the reconstruction.
pub fn dct_baseline_compress(
    h: &ChannelTensor,
    keep_fraction: f64,
    bits_per_coeff: u32,
) -> Result<(DctCompressed, ChannelTensor)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CsiError::InvalidArgument(
            "keep_fraction must lie in (0, 1]".into(),
        ));
    }
    if bits_per_coeff == 0 || bits_per_coeff > 32 {
        return Err(CsiError::InvalidArgument("bits_per_coeff must be in 1..=32".into()));
    }
    let mut t = tensor_from_channel(h, 1.0);
    let (hh, ww) = (t.h, t.w);
    for c in 0..t.c {
        dct_2d_plane(t.channel_mut(c), hh, ww, false);
    }

    let total = t.data.len();
    let n_keep = ((total as f64 * keep_fraction).round() as usize).clamp(1, total);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        t.data[b]
            .abs()
            .partial_cmp(&t.data[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let kept = &order[..n_keep];

    let max_abs = kept.iter().map(|&i| t.data[i].abs()).fold(0.0f64, f64::max);
    let levels = (1u64 << bits_per_coeff) as f64;
    let step = if max_abs > 0.0 { 2.0 * max_abs / levels } else { 1.0 };
    let quantize = |v: f64| {
        let clipped = v.clamp(-max_abs, max_abs - step * 0.5);
        step * ((clipped / step).floor() + 0.5)
    };

    let mut coeffs = Vec::with_capacity(n_keep);
    let mut recon = Tensor::zeros(t.c, t.h, t.w);
    for &i in kept {
        let q = quantize(t.data[i]);
        coeffs.push((i, q));
        recon.data[i] = q;
    }
    for c in 0..recon.c {
        dct_2d_plane(recon.channel_mut(c), hh, ww, true);
    }
    let h_hat = channel_from_tensor(&recon, 1.0, &h.scenario_id);

    let pos_bits = (usize::BITS - (total - 1).leading_zeros()) as usize;
    let total_bits = n_keep * (bits_per_coeff as usize + pos_bits) + 64;
    Ok((
        DctCompressed {
            coefficients: coeffs,
            keep_fraction,
            bits_per_coeff,
            total_bits,
        },
        h_hat,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{channel_tensor, generate_sample, MultipathParams};
    use crate::codec::tests::desk_scenario;
    use crate::eval::nmse_db;
    use num_complex::Complex64;

    #[test]
    fn full_retention_near_lossless() {
        let h = generate_sample(&desk_scenario(21), 0).unwrap();
        let (_, h_hat) = dct_baseline_compress(&h, 1.0, 32).unwrap();
        let nmse = nmse_db(&h, &h_hat).unwrap();
        assert!(nmse <= -60.0, "nmse {nmse}");
    }

    #[test]
    fn zero_keep_fraction_rejected() {
        let h = generate_sample(&desk_scenario(22), 0).unwrap();
        assert!(dct_baseline_compress(&h, 0.0, 8).is_err());
        assert!(dct_baseline_compress(&h, 1.5, 8).is_err());
    }

    #[test]
    fn single_path_channel_highly_compressible() {
        let sc = desk_scenario(23);
        let mp = MultipathParams {
            n_paths: 1,
            gains: vec![Complex64::new(0.8, -0.4)],
            delays: vec![50e-9],
            aoa: vec![0.2],
            aod: vec![-0.5],
        };
        let h = channel_tensor(&mp, &sc.array, &sc.ofdm, "single").unwrap();
        let (_, h_hat) = dct_baseline_compress(&h, 0.05, 16).unwrap();
        let nmse = nmse_db(&h, &h_hat).unwrap();
        assert!(nmse <= -15.0, "nmse {nmse}");
    }

    #[test]
    fn rate_accounting_matches_layout() {
        let h = generate_sample(&desk_scenario(24), 0).unwrap();
        let (c, _) = dct_baseline_compress(&h, 0.25, 8).unwrap();
        let total = 2 * 32 * 8;
        let n_keep = (total as f64 * 0.25).round() as usize;
        assert_eq!(c.coefficients.len(), n_keep);
        let pos_bits = 9; // ceil(log2(512))
        assert_eq!(c.total_bits, n_keep * (8 + pos_bits) + 64);
    }

    #[test]
    fn dct_round_trip_identity() {
        let h = generate_sample(&desk_scenario(25), 0).unwrap();
        let mut t = tensor_from_channel(&h, 1.0);
        let orig = t.clone();
        let (hh, ww) = (t.h, t.w);
        for c in 0..t.c {
            dct_2d_plane(t.channel_mut(c), hh, ww, false);
            dct_2d_plane(t.channel_mut(c), hh, ww, true);
        }
        for (a, b) in t.data.iter().zip(orig.data.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
