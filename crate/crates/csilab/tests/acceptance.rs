//! Go/no-go gate over the full stack: one pass/fail line per criterion.
//!
//! Heavy artifacts (the rate-distortion codec bank and the per-SNR analog
//! models) are trained once up front and shared across criteria. Run with
//! `cargo test --release --test acceptance -- --nocapture` to see the lines;
//! the whole gate takes tens of minutes on a small CPU.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use csilab::channel::{
    channel_tensor, generate_sample, sample_multipath, ArrayConfig, ChannelTensor, OfdmConfig,
    ScenarioConfig,
};
use csilab::codec::cabac::{arith_decode, arith_encode};
use csilab::codec::entropy::{fit_entropy_model, ChannelPmf, EntropyModel, DEFAULT_SMOOTHING};
use csilab::codec::nn::{
    backward_stack, collect_grads, collect_values, forward_stack, param_count, set_values,
    zero_grads, Tensor,
};
use csilab::codec::train::{train_codec, TrainSchedule};
use csilab::codec::{
    decode_features, encode_features, quantize_latent, CodecConfig, CodecModel, ConvSpec,
    LatentTensor,
};
use csilab::eval::{
    analog_nmse_db, codec_rd_point, dct_rd_point, digital_outage_point, nmse_ratio,
    RateDistortionPoint,
};
use csilab::feedback::{
    mrc_combine, simo_transmit, train_analog, AnalogModel, FeedbackConfig, FeedbackRealization,
};

type Check = std::result::Result<String, String>;

fn scenario(k: usize, n_b: usize, n_u: usize, seed: u64, id: &str) -> ScenarioConfig {
    ScenarioConfig {
        array: ArrayConfig {
            n_bs_antennas: n_b,
            n_ue_antennas: n_u,
            spacing_over_wavelength: 0.5,
        },
        ofdm: OfdmConfig {
            n_subcarriers: k,
            sample_rate: 20e6,
        },
        path_count_range: (2, 8),
        delay_spread: 120e-9,
        angle_spread: 0.06,
        cluster_count: 3,
        rng_seed: seed,
        scenario_id: id.into(),
    }
}

// --- 1: entropy coder losslessness ----------------------------------------

fn coder_losslessness() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for trial in 0..10_000u64 {
        let c = rng.gen_range(1..=3usize);
        let h = rng.gen_range(1..=6usize);
        let w = rng.gen_range(1..=6usize);
        let step = [0.25, 0.5, 1.0, 2.0][rng.gen_range(0..4)];
        let mut data = Vec::with_capacity(c * h * w);
        for _ in 0..c {
            let lo = rng.gen_range(-40i64..=40);
            let len = rng.gen_range(1i64..=50);
            let peaked = rng.gen_bool(0.5);
            for _ in 0..h * w {
                let idx = if peaked {
                    // geometric-ish pile-up at the low edge
                    let mut i = 0i64;
                    while i + 1 < len && rng.gen_bool(0.6) {
                        i += 1;
                    }
                    lo + i
                } else {
                    lo + rng.gen_range(0..len)
                };
                data.push(idx as f64 * step);
            }
        }
        let z = LatentTensor {
            values: Tensor { c, h, w, data },
            step,
            quantized: true,
        };
        let em = fit_entropy_model(&[&z], DEFAULT_SMOOTHING).map_err(|e| e.to_string())?;
        let bs = arith_encode(&z, &em).map_err(|e| e.to_string())?;
        let back = arith_decode(&bs, &em, (c, h, w), step).map_err(|e| e.to_string())?;
        if back.values.data != z.values.data {
            return Err(format!("round trip {trial} mismatched (shape {c}x{h}x{w})"));
        }
    }
    let dt = t0.elapsed();
    if dt.as_secs_f64() > 120.0 {
        return Err(format!("10000 round trips exact but took {dt:.1?} (> 2 min)"));
    }
    Ok(format!("10000 randomized round trips exact in {dt:.1?}"))
}

// --- 2: coder near-optimality ---------------------------------------------

fn coder_near_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let n = 100_000usize;
    let mut worst = f64::NEG_INFINITY;
    for pmf_idx in 0..20u64 {
        let support = rng.gen_range(2..=40usize);
        let mut probs: Vec<f64> = (0..support).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        let cdf: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let mut cross_entropy = 0.0;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let sym = cdf.partition_point(|&c| c < u).min(support - 1);
                cross_entropy += -probs[sym].log2();
                sym as f64
            })
            .collect();
        let channels = vec![ChannelPmf {
            min_index: 0,
            probs,
        }];
        let em = EntropyModel {
            channels,
            smoothing: 0.0,
            pmf_id: pmf_idx,
        };
        let z = LatentTensor {
            values: Tensor { c: 1, h: 1, w: n, data },
            step: 1.0,
            quantized: true,
        };
        let bs = arith_encode(&z, &em).map_err(|e| e.to_string())?;
        let budget = cross_entropy * 1.02 + 64.0;
        let excess = bs.bit_length as f64 - budget;
        worst = worst.max(excess);
        if excess > 0.0 {
            return Err(format!(
                "pmf {pmf_idx} (support {support}): {} bits coded vs budget {budget:.0}",
                bs.bit_length
            ));
        }
    }
    Ok(format!(
        "20 pmfs x 1e5 symbols within cross-entropy + 2% + 64 bits (worst slack {:.0} bits)",
        -worst
    ))
}

// --- 3: channel model vs DFT-of-taps oracle -------------------------------

fn channel_dft_oracle() -> Check {
    let t0 = Instant::now();
    let k_total = 32usize;
    let n_b = 8usize;
    let mut max_err = 0.0f64;
    for draw in 0..100u64 {
        let n_u = if draw % 4 == 0 { 2 } else { 1 };
        let sc = scenario(k_total, n_b, n_u, 300 + draw, "oracle");
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let mut mp = sample_multipath(&sc, &mut rng).map_err(|e| e.to_string())?;
        // snap delays to the sampling grid so the frequency response is an
        // exact DFT of the delay taps
        let mut tap_of_path = Vec::with_capacity(mp.n_paths);
        for d in mp.delays.iter_mut() {
            let tap = rng.gen_range(0..k_total);
            *d = tap as f64 / sc.ofdm.sample_rate;
            tap_of_path.push(tap);
        }
        let h = channel_tensor(&mp, &sc.array, &sc.ofdm, "oracle").map_err(|e| e.to_string())?;

        // independent oracle: accumulate per-tap antenna matrices, then DFT
        let amp = ((n_u * n_b) as f64 / mp.n_paths as f64).sqrt();
        let mut taps = vec![Array2::<Complex64>::zeros((n_u, n_b)); k_total];
        for l in 0..mp.n_paths {
            let au: Vec<Complex64> = (0..n_u)
                .map(|m| {
                    Complex64::from_polar(
                        1.0 / (n_u as f64).sqrt(),
                        -2.0 * std::f64::consts::PI * 0.5 * m as f64 * mp.aoa[l].sin(),
                    )
                })
                .collect();
            let ab: Vec<Complex64> = (0..n_b)
                .map(|m| {
                    Complex64::from_polar(
                        1.0 / (n_b as f64).sqrt(),
                        -2.0 * std::f64::consts::PI * 0.5 * m as f64 * mp.aod[l].sin(),
                    )
                })
                .collect();
            let g = taps.get_mut(tap_of_path[l]).unwrap();
            for u in 0..n_u {
                for b in 0..n_b {
                    *g.get_mut((u, b)).unwrap() += mp.gains[l] * amp * au[u] * ab[b].conj();
                }
            }
        }
        for k in 0..k_total {
            let mut hk = Array2::<Complex64>::zeros((n_u, n_b));
            for (tap, g) in taps.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * tap) as f64 / k_total as f64;
                let w = Complex64::from_polar(1.0, phase);
                for u in 0..n_u {
                    for b in 0..n_b {
                        *hk.get_mut((u, b)).unwrap() += g[(u, b)] * w;
                    }
                }
            }
            for u in 0..n_u {
                for b in 0..n_b {
                    max_err = max_err.max((h.data[(k, b, u)] - hk[(u, b)]).norm());
                }
            }
        }
    }
    let dt = t0.elapsed();
    if max_err > 1e-9 {
        return Err(format!("max |H - DFT(taps)| = {max_err:.2e} (> 1e-9)"));
    }
    if dt.as_secs_f64() > 60.0 {
        return Err(format!("oracle matched but took {dt:.1?} (> 1 min)"));
    }
    Ok(format!("100 grid-delay draws, max error {max_err:.2e} in {dt:.1?}"))
}

// --- 4: MRC post-combining SNR contract -----------------------------------

fn mrc_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let snr = 10.0f64; // linear
    let n_rx = 8usize;
    let draws = 10_000usize;
    let mut worst_rel = 0.0f64;
    for ch in 0..10 {
        let h: Vec<Complex64> = (0..n_rx)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) / 2f64.sqrt()
            })
            .collect();
        let gain: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        let fr = FeedbackRealization {
            channels: vec![h.clone()],
            noise_variance: 1.0 / snr,
            selected_indices: vec![0],
        };
        let mut err_sum = 0.0;
        for _ in 0..draws {
            let x = Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
            let y = simo_transmit(&[x], &fr, &mut rng).map_err(|e| e.to_string())?;
            let xh = mrc_combine(&y[0], &h).map_err(|e| e.to_string())?;
            err_sum += (xh - x).norm_sqr();
        }
        let measured = draws as f64 / err_sum;
        let expected = snr * gain;
        let rel = (measured - expected).abs() / expected;
        worst_rel = worst_rel.max(rel);
        if rel > 0.05 {
            return Err(format!(
                "channel {ch}: measured SNR {measured:.2} vs snr*||h||^2 = {expected:.2} ({:.1}% off)",
                100.0 * rel
            ));
        }
        // noiseless exactness
        let fr0 = FeedbackRealization {
            channels: vec![h.clone()],
            noise_variance: 0.0,
            selected_indices: vec![0],
        };
        let x = Complex64::new(0.6, -0.8);
        let y = simo_transmit(&[x], &fr0, &mut rng).map_err(|e| e.to_string())?;
        let xh = mrc_combine(&y[0], &h).map_err(|e| e.to_string())?;
        if (xh - x).norm() > 1e-12 {
            return Err(format!("noiseless MRC error {:.2e} (> 1e-12)", (xh - x).norm()));
        }
    }
    Ok(format!(
        "10 channels x 1e4 draws, worst SNR deviation {:.2}%; noiseless exact to 1e-12",
        100.0 * worst_rel
    ))
}

// --- 5 and 6 share a miniature autoencoder --------------------------------

fn miniature_model() -> CodecModel {
    let cfg = CodecConfig {
        encoder_layers: vec![
            ConvSpec { features: 4, kernel: (3, 3), down: (2, 2) },
            ConvSpec { features: 2, kernel: (3, 3), down: (1, 1) },
        ],
        residual_block_count: 0,
        residual_kernel: (3, 3),
        latent_quantizer_step: 1.0,
        rd_lambda: 0.0,
        input_channels: 2,
    };
    CodecModel::build(&cfg, 1.0, 55).unwrap()
}

fn gradient_check() -> Check {
    let mut model = miniature_model();
    let n_params =
        param_count(&mut model.encoder) + param_count(&mut model.decoder);
    if n_params > 1000 {
        return Err(format!("miniature has {n_params} parameters (> 1000)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut x = Tensor::zeros(2, 8, 8);
    for v in x.data.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut target = Tensor::zeros(2, 8, 8);
    for v in target.data.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let loss = |m: &mut CodecModel| -> f64 {
        let z = forward_stack(&mut m.encoder, &x, false);
        let y = forward_stack(&mut m.decoder, &z, false);
        y.data
            .iter()
            .zip(target.data.iter())
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum()
    };
    // analytic gradient
    zero_grads(&mut model.encoder);
    zero_grads(&mut model.decoder);
    let z = forward_stack(&mut model.encoder, &x, true);
    let y = forward_stack(&mut model.decoder, &z, true);
    let mut gy = Tensor::zeros(y.c, y.h, y.w);
    for ((g, a), b) in gy.data.iter_mut().zip(y.data.iter()).zip(target.data.iter()) {
        *g = a - b;
    }
    let gz = backward_stack(&mut model.decoder, &gy);
    backward_stack(&mut model.encoder, &gz);
    let mut analytic = collect_grads(&mut model.encoder);
    analytic.extend(collect_grads(&mut model.decoder));

    let n_enc = param_count(&mut model.encoder);
    let base: Vec<f64> = {
        let mut v = collect_values(&mut model.encoder);
        v.extend(collect_values(&mut model.decoder));
        v
    };
    let mut worst = 0.0f64;
    for i in 0..n_params {
        let eps = 1e-5 * (1.0 + base[i].abs());
        let mut probe = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            set_values(&mut model.encoder, &v[..n_enc]);
            set_values(&mut model.decoder, &v[n_enc..]);
            loss(&mut model)
        };
        let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
        let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs() + 1e-8);
        worst = worst.max(rel);
        if rel > 1e-4 {
            return Err(format!(
                "param {i}: analytic {:.6e} vs finite-difference {fd:.6e} (rel {rel:.2e})",
                analytic[i]
            ));
        }
    }
    set_values(&mut model.encoder, &base[..n_enc]);
    set_values(&mut model.decoder, &base[n_enc..]);
    Ok(format!(
        "{n_params} parameters, worst analytic-vs-FD relative error {worst:.2e}"
    ))
}

fn straight_through_exactness() -> Check {
    let mut model = miniature_model();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut x = Tensor::zeros(2, 8, 8);
    for v in x.data.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = 3.0 * n;
    }
    zero_grads(&mut model.encoder);
    let z = forward_stack(&mut model.encoder, &x, true);
    let mut zq = z.clone();
    for v in zq.data.iter_mut() {
        *v = v.round_ties_even();
    }
    if zq.data == z.data {
        return Err("quantizer was a no-op on the probe input".into());
    }
    // downstream gradient comes from a real decoder pass on the quantized
    // latent
    zero_grads(&mut model.decoder);
    let y = forward_stack(&mut model.decoder, &zq, true);
    let g_zq = backward_stack(&mut model.decoder, &y.clone());

    // path A: backward through the quantizer node under the identity
    // surrogate; path B: quantizer bypassed entirely
    let mut enc_a = model.encoder.clone();
    let mut enc_b = model.encoder.clone();
    let g_through_quantizer = g_zq.clone();
    backward_stack(&mut enc_a, &g_through_quantizer);
    backward_stack(&mut enc_b, &g_zq);
    let ga = collect_grads(&mut enc_a);
    let gb = collect_grads(&mut enc_b);
    if ga != gb {
        let diff = ga
            .iter()
            .zip(&gb)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        return Err(format!("encoder gradients differ (max abs diff {diff:.2e})"));
    }
    Ok(format!(
        "encoder gradients identical bit-for-bit across {} parameters",
        ga.len()
    ))
}

// --- 7-10 share the trained bank and datasets ------------------------------

struct Bank {
    models: Vec<(CodecModel, EntropyModel)>,
    points: Vec<RateDistortionPoint>,
    train: Vec<ChannelTensor>,
    test: Vec<ChannelTensor>,
    scale: f64,
}

const BANK_LAMBDAS: [f64; 3] = [0.1, 0.02, 0.005];

fn build_bank() -> Bank {
    let sc = scenario(32, 8, 1, 7, "desk");
    let train: Vec<ChannelTensor> = (0..4000u64)
        .map(|i| generate_sample(&sc, i).unwrap())
        .collect();
    let test: Vec<ChannelTensor> = (100_000..101_000u64)
        .map(|i| generate_sample(&sc, i).unwrap())
        .collect();
    let entries = train[0].entry_count();
    let mean_pow =
        train.iter().map(|t| t.frobenius_sq()).sum::<f64>() / (train.len() * entries) as f64;
    let scale = (mean_pow / 2.0).sqrt();

    let mut models = Vec::new();
    let mut points = Vec::new();
    for (i, &lambda) in BANK_LAMBDAS.iter().enumerate() {
        let cfg = CodecConfig::desk_default(lambda);
        let sched = TrainSchedule {
            epochs: if i == 0 { 30 } else { 35 },
            batch_size: 100,
            learning_rate: 2e-3,
            seed: 11 + i as u64,
            entropy_refresh_epochs: 2,
        };
        let (mut model, em, _log) = train_codec(&train, scale, &cfg, &sched).unwrap();
        let point = codec_rd_point(&mut model, &em, &test).unwrap();
        models.push((model, em));
        points.push(point);
    }
    Bank { models, points, train, test, scale }
}

fn rate_distortion_bank(bank: &Bank) -> Check {
    let p = &bank.points;
    for i in 0..p.len() - 1 {
        if p[i + 1].bits_per_entry <= p[i].bits_per_entry {
            return Err(format!(
                "rates not strictly ordered: {:.3} then {:.3} bits/entry",
                p[i].bits_per_entry,
                p[i + 1].bits_per_entry
            ));
        }
        if p[i + 1].nmse_db >= p[i].nmse_db + 0.3 {
            return Err(format!(
                "NMSE not ordered within 0.3 dB: {:.2} then {:.2} dB",
                p[i].nmse_db,
                p[i + 1].nmse_db
            ));
        }
    }
    // DCT comparator at the middle operating point, matched (or higher)
    // feature rate
    let mid = &p[1];
    let entries = bank.test[0].entry_count() as f64;
    let total_coeffs = 2.0 * entries;
    let pos_bits = (total_coeffs - 1.0).log2().ceil();
    let n_keep = (mid.bits_per_entry * entries / (8.0 + pos_bits)).ceil();
    let kf = n_keep / total_coeffs;
    let dct = dct_rd_point(&bank.test, kf, 8).map_err(|e| e.to_string())?;
    let margin = dct.nmse_db - mid.nmse_db;
    if margin < 2.0 {
        return Err(format!(
            "codec {:.2} dB at {:.3} b/e vs DCT {:.2} dB at {:.3} b/e: margin {margin:.2} dB (< 2)",
            mid.nmse_db, mid.bits_per_entry, dct.nmse_db, dct.bits_per_entry
        ));
    }
    Ok(format!(
        "bank ({:.3}/{:.3}/{:.3} b/e at {:.2}/{:.2}/{:.2} dB) beats DCT ({:.2} dB at {:.3} b/e) by {margin:.2} dB",
        p[0].bits_per_entry,
        p[1].bits_per_entry,
        p[2].bits_per_entry,
        p[0].nmse_db,
        p[1].nmse_db,
        p[2].nmse_db,
        dct.nmse_db,
        dct.bits_per_entry
    ))
}

fn digital_outage_cliff(bank: &mut Bank) -> Check {
    let k_uplink = 512usize;
    let uplink = scenario(k_uplink, 8, 1, 77, "desk-uplink");
    let test = &bank.test[..256];
    let (model, em) = &mut bank.models[0];
    let trained = codec_rd_point(model, em, test).map_err(|e| e.to_string())?;
    let rhos = [0.02, 0.05, 0.1, 0.15, 0.2, 0.3];
    let mut points = Vec::new();
    for (i, &rho) in rhos.iter().enumerate() {
        let fb = FeedbackConfig {
            k_uplink,
            n_feedback_subcarriers: ((rho * k_uplink as f64).round() as usize).max(1),
            snr_db: 10.0,
            subcarrier_selection_seed: 0,
        };
        let op = digital_outage_point(model, em, test, &uplink, &fb, 1000, 8000 + i as u64)
            .map_err(|e| e.to_string())?;
        points.push(op);
    }
    if points[0].outage_rate < 0.99 || points[0].pooled_nmse_db < -0.05 {
        return Err(format!(
            "no 0 dB saturation at rho = {}: outage {:.3}, pooled {:.2} dB",
            rhos[0], points[0].outage_rate, points[0].pooled_nmse_db
        ));
    }
    for i in 0..points.len() - 1 {
        // 0.02 slack absorbs Monte Carlo noise at 1000 trials
        if points[i + 1].outage_rate > points[i].outage_rate + 0.02 {
            return Err(format!(
                "outage not monotone: {:.3} at rho {} then {:.3} at rho {}",
                points[i].outage_rate,
                rhos[i],
                points[i + 1].outage_rate,
                rhos[i + 1]
            ));
        }
    }
    let last = points.last().unwrap();
    if last.outage_rate > 0.1 {
        return Err(format!(
            "outage still {:.3} at rho = 0.3 (payload never fits)",
            last.outage_rate
        ));
    }
    let delivered = last
        .delivered_nmse_db
        .ok_or("no delivered trials at rho = 0.3")?;
    if (delivered - trained.nmse_db).abs() > 0.5 {
        return Err(format!(
            "delivered NMSE {delivered:.2} dB != trained codec NMSE {:.2} dB",
            trained.nmse_db
        ));
    }
    let outage_str = points
        .iter()
        .map(|p| format!("{:.2}", p.outage_rate))
        .collect::<Vec<_>>()
        .join("/");
    Ok(format!(
        "outage {outage_str} over rho 0.02..0.3; pooled {:.2} -> {:.2} dB (trained {:.2} dB)",
        points[0].pooled_nmse_db, last.pooled_nmse_db, trained.nmse_db
    ))
}

fn analog_graceful_degradation(bank: &mut Bank) -> Check {
    let k_uplink = 128usize;
    let n_f = 16usize; // rho* = 0.125
    let uplink = scenario(k_uplink, 8, 1, 78, "desk-uplink-short");
    let acfg = AnalogModel::desk_config((32, 8), n_f).map_err(|e| e.to_string())?;
    let test = &bank.test[..256];

    // the digital path is capacity-starved at rho*
    let fb_dig = FeedbackConfig {
        k_uplink,
        n_feedback_subcarriers: n_f,
        snr_db: 10.0,
        subcarrier_selection_seed: 0,
    };
    let (model, em) = &mut bank.models[0];
    let dig = digital_outage_point(model, em, test, &uplink, &fb_dig, 300, 8800)
        .map_err(|e| e.to_string())?;
    if dig.pooled_nmse_db < -0.5 {
        return Err(format!(
            "digital path still delivers at rho* ({:.2} dB pooled); no crossover to show",
            dig.pooled_nmse_db
        ));
    }

    let snrs = [0.0, 5.0, 10.0];
    let mut nmses = Vec::new();
    for (i, &snr_db) in snrs.iter().enumerate() {
        let fb = FeedbackConfig {
            k_uplink,
            n_feedback_subcarriers: n_f,
            snr_db,
            subcarrier_selection_seed: 0,
        };
        let sched = TrainSchedule {
            epochs: 60,
            batch_size: 20,
            learning_rate: 3e-3,
            seed: 31 + i as u64,
            entropy_refresh_epochs: 1,
        };
        let (amodel, _log) = train_analog(&bank.train[..1000], bank.scale, &acfg, &uplink, &fb, &sched)
            .map_err(|e| e.to_string())?;
        let nmse = analog_nmse_db(&amodel, test, &uplink, &fb, 512, 9000 + i as u64)
            .map_err(|e| e.to_string())?;
        nmses.push(nmse);
    }
    for i in 0..nmses.len() - 1 {
        // 0.2 dB slack absorbs Monte Carlo noise
        if nmses[i + 1] > nmses[i] + 0.2 {
            return Err(format!(
                "analog NMSE not improving with SNR: {:.2} dB at {} dB then {:.2} dB at {} dB",
                nmses[i],
                snrs[i],
                nmses[i + 1],
                snrs[i + 1]
            ));
        }
    }
    let at10 = *nmses.last().unwrap();
    if at10 > -3.0 {
        return Err(format!(
            "analog path reaches only {at10:.2} dB at 10 dB SNR (need <= -3) while digital sits at {:.2} dB",
            dig.pooled_nmse_db
        ));
    }
    Ok(format!(
        "analog {:.2}/{:.2}/{:.2} dB at 0/5/10 dB SNR; digital {:.2} dB at rho* = 0.125",
        nmses[0], nmses[1], nmses[2], dig.pooled_nmse_db
    ))
}

fn cross_configuration(bank: &mut Bank) -> Check {
    let wide = scenario(64, 16, 1, 79, "wide");
    let (model, em) = &mut bank.models[1];
    let step = model.cfg.latent_quantizer_step;
    let mut worst_db = f64::NEG_INFINITY;
    for i in 0..8u64 {
        let h = generate_sample(&wide, i).map_err(|e| e.to_string())?;
        let z = encode_features(model, &h).map_err(|e| e.to_string())?;
        let zq = quantize_latent(&z, step).map_err(|e| e.to_string())?;
        let bs = arith_encode(&zq, em).map_err(|e| e.to_string())?;
        if bs.bit_length == 0 {
            return Err("empty bitstream on the wide configuration".into());
        }
        let h_hat = decode_features(model, &zq, &h.scenario_id).map_err(|e| e.to_string())?;
        if h_hat.shape() != h.shape() {
            return Err(format!(
                "output shape {:?} != input shape {:?}",
                h_hat.shape(),
                h.shape()
            ));
        }
        let ratio = nmse_ratio(&h, &h_hat).map_err(|e| e.to_string())?;
        if !ratio.is_finite() {
            return Err("non-finite NMSE on the wide configuration".into());
        }
        worst_db = worst_db.max(10.0 * ratio.log10());
    }
    Ok(format!(
        "(64, 16) grid through the (32, 8)-trained codec: shapes preserved, worst NMSE {worst_db:.2} dB (finite)"
    ))
}

// --- gate ------------------------------------------------------------------

#[test]
fn acceptance_gate() {
    let mut lines = Vec::new();
    let mut failed = 0usize;
    let mut run = |n: usize, name: &str, outcome: Check| {
        let line = match outcome {
            Ok(detail) => format!("criterion {n:2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                format!("criterion {n:2} FAIL  {name}: {detail}")
            }
        };
        println!("{line}");
        lines.push(line);
    };

    run(1, "entropy coder losslessness", coder_losslessness());
    run(2, "entropy coder near-optimality", coder_near_optimality());
    run(3, "channel model DFT oracle", channel_dft_oracle());
    run(4, "MRC combining contract", mrc_contract());
    run(5, "autoencoder gradient check", gradient_check());
    run(6, "straight-through exactness", straight_through_exactness());

    let mut bank = build_bank();
    run(7, "rate-distortion bank vs DCT", rate_distortion_bank(&bank));
    run(8, "digital feedback outage cliff", digital_outage_cliff(&mut bank));
    run(9, "analog feedback graceful degradation", analog_graceful_degradation(&mut bank));
    run(10, "cross-configuration execution", cross_configuration(&mut bank));

    assert!(
        failed == 0,
        "{failed} criteria failed:\n{}",
        lines.join("\n")
    );
}
