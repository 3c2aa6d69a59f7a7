use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use csilab::channel::{
    generate_dataset, load_dataset, sample_rng, tensor_to_f32_planes,
    ScenarioConfig,
};
use csilab::codec::cabac::{arith_decode, arith_encode};
use csilab::codec::train::{train_codec, TrainSchedule};
use csilab::codec::{
    decode_features, encode_features, load_checkpoint, quantize_latent, read_bitstream,
    save_checkpoint, write_bitstream, CodecConfig,
};
use csilab::error::{CsiError, Result};
use csilab::eval::{
    analog_nmse_db, digital_outage_point, nmse_db, run_sweep, version_string, write_sweep_csv,
    write_sweep_json, SweepSpec,
};
use csilab::feedback::{
    load_analog_checkpoint, save_analog_checkpoint, train_analog, AnalogModel, FeedbackConfig,
};
use csilab::pilot::{ls_estimate, quantize_observation, transmit_pilots, PilotBlock};
use csilab::plot::{render_line_chart, Series};

#[derive(Parser)]
#[command(name = "csilab", version, about = "desk-scale CSI compression and feedback lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a channel dataset container (manifest.json + tensors.bin).
    Gen(GenArgs),
    /// Simulate pilot observation and LS estimation over a dataset.
    Pilots(PilotsArgs),
    /// Train a rate-distortion codec (or, with --analog, an analog
    /// feedback autoencoder) and write a checkpoint directory.
    Train(TrainArgs),
    /// Compress one dataset sample to a bitstream file.
    Compress(CompressArgs),
    /// Decompress a bitstream file back to a channel tensor.
    Decompress(DecompressArgs),
    /// Monte Carlo digital feedback over a capacity-limited uplink.
    FbDigital(FbDigitalArgs),
    /// Monte Carlo analog feedback through a trained analog model.
    FbAnalog(FbAnalogArgs),
    /// Run a sweep spec and emit CSV/JSON/plot artifacts.
    Sweep(SweepArgs),
    /// Render a line chart from a sweep CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scenario config (JSON).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PilotsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Pilot block length P.
    #[arg(long)]
    pilot_len: usize,
    #[arg(long)]
    snr_db: f64,
    /// ADC resolution; 0 keeps the observation unquantized.
    #[arg(long, default_value_t = 0)]
    bits: u32,
    /// Per-sample NMSE CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Train the analog feedback autoencoder instead of the codec.
    #[arg(long)]
    analog: bool,
    /// Analog only: feedback subcarrier count N_F.
    #[arg(long)]
    n_feedback: Option<usize>,
    /// Analog only: uplink SNR in dB during training.
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    /// Analog only: uplink subcarrier count K_u.
    #[arg(long, default_value_t = 128)]
    k_uplink: usize,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Sample index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Bitstream output; a `.json` sidecar with the tensor shape is written
    /// next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Reconstruction output: little-endian float32, real plane then
    /// imaginary plane.
    #[arg(long)]
    out: PathBuf,
    /// Optional reference dataset for an NMSE report.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct FbDigitalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Feedback overhead rho = N_F / K_u.
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 128)]
    k_uplink: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional JSON output; the result always prints to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FbAnalogArgs {
    /// Analog model checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 128)]
    k_uplink: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Optional NMSE-vs-axis chart.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Sweep CSV produced by `csilab sweep`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct BitstreamSidecar {
    n_subcarriers: usize,
    n_bs_antennas: usize,
    n_ue_antennas: usize,
    scenario_id: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CsiError::Config(format!("{}: {e}", path.display())))
}

fn uplink_scenario(base: &ScenarioConfig, k_uplink: usize) -> ScenarioConfig {
    let mut up = base.clone();
    up.ofdm.n_subcarriers = k_uplink;
    up.array.n_ue_antennas = 1;
    up.scenario_id = format!("{}-uplink", base.scenario_id);
    up
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen(a) => {
            let mut scenario: ScenarioConfig = read_json(&a.scenario)?;
            if let Some(s) = a.seed {
                scenario.rng_seed = s;
            }
            let manifest = generate_dataset(&scenario, a.n, &a.out, a.force)?;
            println!(
                "wrote {} samples of shape ({}, {}, {}) to {}",
                manifest.n_samples,
                manifest.n_subcarriers,
                manifest.n_bs_antennas,
                manifest.n_ue_antennas,
                a.out.display()
            );
        }
        Cmd::Pilots(a) => {
            let (manifest, tensors) = load_dataset(&a.dataset)?;
            let seed = a.seed.unwrap_or(manifest.seed ^ 0x5049_4c54);
            let noise_var = 10f64.powf(-a.snr_db / 10.0);
            let mut w = csv::Writer::from_path(&a.out)?;
            w.write_record(["sample", "nmse_db"])?;
            let mut ratios = Vec::with_capacity(tensors.len());
            for (i, h) in tensors.iter().enumerate() {
                let mut rng = sample_rng(seed, i as u64);
                let (k, _, n_u) = h.shape();
                let x = PilotBlock::random(n_u, a.pilot_len, 1.0, &mut rng)?;
                let mut h_hat = h.zeros_like();
                for sc in 0..k {
                    // per-subcarrier Y = H X + Z with H shaped (N_B, N_U)
                    let hk = nalgebra::DMatrix::from_fn(
                        manifest.n_bs_antennas,
                        n_u,
                        |b, u| h.data[(sc, b, u)],
                    );
                    let mut obs = transmit_pilots(&hk, &x, noise_var, &mut rng)?;
                    if a.bits > 0 {
                        obs = quantize_observation(&obs, a.bits)?;
                    }
                    let est = ls_estimate(&obs, &x)?;
                    for b in 0..manifest.n_bs_antennas {
                        for u in 0..n_u {
                            h_hat.data[(sc, b, u)] = est[(b, u)];
                        }
                    }
                }
                let db = nmse_db(h, &h_hat)?;
                ratios.push(10f64.powf(db / 10.0));
                w.write_record([format!("{i}"), format!("{db}")])?;
            }
            w.flush()?;
            let pooled = csilab::eval::pooled_nmse_db(&ratios)?;
            println!("pilot LS NMSE (pooled): {pooled:.2} dB over {} samples", tensors.len());
        }
        Cmd::Train(a) => {
            let (manifest, tensors) = load_dataset(&a.dataset)?;
            let mut schedule = TrainSchedule::desk_default(a.seed);
            if let Some(e) = a.epochs {
                schedule.epochs = e;
            }
            if let Some(b) = a.batch_size {
                schedule.batch_size = b;
            }
            if let Some(lr) = a.learning_rate {
                schedule.learning_rate = lr;
            }
            let input_scale = manifest.input_scale();
            if a.analog {
                let n_f = a.n_feedback.ok_or_else(|| {
                    CsiError::Config("--analog requires --n-feedback".into())
                })?;
                let shape = (manifest.n_subcarriers, manifest.n_bs_antennas);
                let cfg = AnalogModel::desk_config(shape, n_f)?;
                let uplink = uplink_scenario(&manifest.scenario, a.k_uplink);
                let fb = FeedbackConfig {
                    k_uplink: a.k_uplink,
                    n_feedback_subcarriers: n_f,
                    snr_db: a.snr_db,
                    subcarrier_selection_seed: a.seed,
                };
                let (model, log) = train_analog(&tensors, input_scale, &cfg, &uplink, &fb, &schedule)?;
                save_analog_checkpoint(&a.out, &model, shape, schedule.seed)?;
                std::fs::write(a.out.join("train_log.json"), serde_json::to_string_pretty(&log)?)?;
                let last = log.epochs.last().unwrap();
                println!(
                    "analog model trained: {} epochs, final mse {:.5}; checkpoint at {}",
                    log.epochs.len(),
                    last.mse,
                    a.out.display()
                );
            } else {
                let cfg = CodecConfig::desk_default(a.lambda);
                let (model, em, log) = train_codec(&tensors, input_scale, &cfg, &schedule)?;
                save_checkpoint(&a.out, &model, &em, schedule.seed)?;
                std::fs::write(a.out.join("train_log.json"), serde_json::to_string_pretty(&log)?)?;
                let last = log.epochs.last().unwrap();
                println!(
                    "codec trained: {} epochs, final mse {:.5}, {:.3} bits/entry; checkpoint at {}",
                    log.epochs.len(),
                    last.mse,
                    last.bits_per_entry,
                    a.out.display()
                );
            }
        }
        Cmd::Compress(a) => {
            let (mut model, em) = load_checkpoint(&a.checkpoint)?;
            let (manifest, tensors) = load_dataset(&a.dataset)?;
            let h = tensors.get(a.index).ok_or_else(|| {
                CsiError::InvalidArgument(format!(
                    "index {} out of range, dataset holds {}",
                    a.index, manifest.n_samples
                ))
            })?;
            let z = quantize_latent(&encode_features(&mut model, h)?, model.cfg.latent_quantizer_step)?;
            let bs = arith_encode(&z, &em)?;
            std::fs::write(&a.out, write_bitstream(&bs))?;
            let sidecar = BitstreamSidecar {
                n_subcarriers: manifest.n_subcarriers,
                n_bs_antennas: manifest.n_bs_antennas,
                n_ue_antennas: manifest.n_ue_antennas,
                scenario_id: h.scenario_id.clone(),
            };
            let sidecar_path = a.out.with_extension("json");
            std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
            println!(
                "compressed sample {} to {} payload bits ({:.3} bits/entry + 128 header bits)",
                a.index,
                bs.bit_length,
                csilab::eval::bits_per_entry(&bs, h.shape())
            );
        }
        Cmd::Decompress(a) => {
            let (mut model, em) = load_checkpoint(&a.checkpoint)?;
            let sidecar: BitstreamSidecar = read_json(&a.input.with_extension("json"))?;
            let bytes = std::fs::read(&a.input)?;
            let bs = read_bitstream(&bytes, em.pmf_id)?;
            let (dk, db) = model.cfg.total_downsample();
            let shape = (
                model.cfg.latent_channels(),
                sidecar.n_subcarriers / dk,
                sidecar.n_bs_antennas / db,
            );
            let z = arith_decode(&bs, &em, shape, model.cfg.latent_quantizer_step)?;
            let h_hat = decode_features(&mut model, &z, &sidecar.scenario_id)?;
            let mut out = Vec::new();
            for v in tensor_to_f32_planes(&h_hat) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(&a.out, out)?;
            if let Some(refdir) = &a.reference {
                let (_, tensors) = load_dataset(refdir)?;
                let h = tensors.get(a.index).ok_or_else(|| {
                    CsiError::InvalidArgument(format!("reference index {} out of range", a.index))
                })?;
                println!("reconstruction NMSE: {:.2} dB", nmse_db(h, &h_hat)?);
            } else {
                println!("reconstruction written to {}", a.out.display());
            }
        }
        Cmd::FbDigital(a) => {
            let (mut model, em) = load_checkpoint(&a.checkpoint)?;
            let (manifest, tensors) = load_dataset(&a.dataset)?;
            let n_f = ((a.rho * a.k_uplink as f64).round() as usize).max(1);
            let fb = FeedbackConfig {
                k_uplink: a.k_uplink,
                n_feedback_subcarriers: n_f,
                snr_db: a.snr_db,
                subcarrier_selection_seed: a.seed,
            };
            let uplink = uplink_scenario(&manifest.scenario, a.k_uplink);
            let point = digital_outage_point(&mut model, &em, &tensors, &uplink, &fb, a.trials, a.seed)?;
            let text = serde_json::to_string_pretty(&point)?;
            println!("{text}");
            if let Some(p) = &a.out {
                std::fs::write(p, text)?;
            }
        }
        Cmd::FbAnalog(a) => {
            let model = load_analog_checkpoint(&a.checkpoint)?;
            let (manifest, tensors) = load_dataset(&a.dataset)?;
            let fb = FeedbackConfig {
                k_uplink: a.k_uplink,
                n_feedback_subcarriers: model.n_feedback,
                snr_db: a.snr_db,
                subcarrier_selection_seed: a.seed,
            };
            let uplink = uplink_scenario(&manifest.scenario, a.k_uplink);
            let db = analog_nmse_db(&model, &tensors, &uplink, &fb, a.trials, a.seed)?;
            let result = serde_json::json!({
                "rho": fb.rho(),
                "snr_db": a.snr_db,
                "trials": a.trials,
                "nmse_db": db,
                "version": version_string(),
            });
            let text = serde_json::to_string_pretty(&result)?;
            println!("{text}");
            if let Some(p) = &a.out {
                std::fs::write(p, text)?;
            }
        }
        Cmd::Sweep(a) => {
            let mut spec: SweepSpec = read_json(&a.spec)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let result = run_sweep(&spec)?;
            write_sweep_csv(&a.out_csv, &result)?;
            if let Some(p) = &a.out_json {
                write_sweep_json(p, &result)?;
            }
            if let Some(p) = &a.plot {
                let series = sweep_series(
                    result
                        .rows
                        .iter()
                        .map(|r| (r.axis_value, r.nmse_db))
                        .collect(),
                );
                render_line_chart(p, &series)?;
            }
            println!("{} rows written to {}", result.rows.len(), a.out_csv.display());
        }
        Cmd::Plot(a) => {
            let mut rdr = csv::Reader::from_path(&a.csv)?;
            let headers = rdr.headers()?.clone();
            let (xi, yi) = (
                headers.iter().position(|h| h == "axis_value"),
                headers.iter().position(|h| h == "nmse_db"),
            );
            let (xi, yi) = match (xi, yi) {
                (Some(x), Some(y)) => (x, y),
                _ => {
                    return Err(CsiError::Config(
                        "CSV needs axis_value and nmse_db columns".into(),
                    ))
                }
            };
            let mut points = Vec::new();
            for record in rdr.records() {
                let r = record?;
                let x: f64 = r[xi].parse().map_err(|_| {
                    CsiError::Config(format!("bad axis_value {:?}", &r[xi]))
                })?;
                let y: f64 = r[yi].parse().map_err(|_| {
                    CsiError::Config(format!("bad nmse_db {:?}", &r[yi]))
                })?;
                points.push((x, y));
            }
            let series = sweep_series(points);
            render_line_chart(&a.out, &series)?;
            println!("chart written to {}", a.out.display());
        }
    }
    Ok(())
}

/// Collapse (axis, nmse) rows to one mean point per axis value.
fn sweep_series(points: Vec<(f64, f64)>) -> Vec<Series> {
    let mut by_axis: Vec<(f64, Vec<f64>)> = Vec::new();
    for (x, y) in points {
        match by_axis.iter_mut().find(|(ax, _)| *ax == x) {
            Some((_, ys)) => ys.push(y),
            None => by_axis.push((x, vec![y])),
        }
    }
    by_axis.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mean_points = by_axis
        .into_iter()
        .map(|(x, ys)| (x, ys.iter().sum::<f64>() / ys.len() as f64))
        .collect();
    vec![Series {
        label: "nmse_db".into(),
        points: mean_points,
    }]
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
