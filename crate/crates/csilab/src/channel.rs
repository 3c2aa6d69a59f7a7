//! Multipath MIMO-OFDM channel generation and the on-disk dataset container.
//!
//! Channels follow the geometric multipath model: a sum of `L` paths, each
//! with a complex gain, a delay, and arrival/departure angles seen through
//! uniform linear arrays at both ends. Frequency-domain responses per OFDM
//! subcarrier are produced directly; datasets are persisted as a directory
//! with `manifest.json` and a flat little-endian float32 `tensors.bin`.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CsiError, Result};
use crate::parallel;

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Uniform linear array geometry at both link ends.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ArrayConfig {
    pub n_bs_antennas: usize,
    pub n_ue_antennas: usize,
    /// Antenna spacing over carrier wavelength (d/lambda); 0.5 is the
    /// half-wavelength ULA default.
    #[serde(default = "default_spacing")]
    pub spacing_over_wavelength: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bs_antennas < 1 || self.n_ue_antennas < 1 {
            return Err(CsiError::InvalidArgument(
                "antenna counts must be >= 1".into(),
            ));
        }
        if !(self.spacing_over_wavelength > 0.0) {
            return Err(CsiError::InvalidArgument(
                "spacing_over_wavelength must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct OfdmConfig {
    pub n_subcarriers: usize,
    /// Sample rate in Hz.
    pub sample_rate: f64,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers < 1 {
            return Err(CsiError::InvalidArgument("n_subcarriers must be >= 1".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(CsiError::InvalidArgument("sample_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// One multipath draw: per-path gains, delays and angles.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathParams {
    pub n_paths: usize,
    pub gains: Vec<Complex64>,
    /// Path delays in seconds, nonnegative.
    pub delays: Vec<f64>,
    /// Azimuth angles of arrival (UE side), radians in [-pi/2, pi/2].
    pub aoa: Vec<f64>,
    /// Azimuth angles of departure (BS side), radians in [-pi/2, pi/2].
    pub aod: Vec<f64>,
}

impl MultipathParams {
    pub fn validate(&self) -> Result<()> {
        let l = self.n_paths;
        if l == 0 {
            return Err(CsiError::InvalidArgument("n_paths must be >= 1".into()));
        }
        if self.gains.len() != l || self.delays.len() != l || self.aoa.len() != l || self.aod.len() != l {
            return Err(CsiError::InvalidArgument(
                "gain/delay/angle lists must all have length n_paths".into(),
            ));
        }
        if self.delays.iter().any(|&t| !(t >= 0.0)) {
            return Err(CsiError::InvalidArgument("delays must be nonnegative".into()));
        }
        let half_pi = PI / 2.0 + 1e-12;
        if self.aoa.iter().chain(self.aod.iter()).any(|&a| a.abs() > half_pi) {
            return Err(CsiError::InvalidArgument("angles must lie in [-pi/2, pi/2]".into()));
        }
        Ok(())
    }
}

/// Clustered statistical scenario driving [`sample_multipath`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub array: ArrayConfig,
    pub ofdm: OfdmConfig,
    /// Inclusive interval for the number of paths L.
    pub path_count_range: (usize, usize),
    /// Mean of the exponential delay distribution, seconds.
    pub delay_spread: f64,
    /// Laplacian intra-cluster angle spread, radians.
    pub angle_spread: f64,
    pub cluster_count: usize,
    pub rng_seed: u64,
    #[serde(default)]
    pub scenario_id: String,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.ofdm.validate()?;
        let (lo, hi) = self.path_count_range;
        if lo < 1 || hi < lo {
            return Err(CsiError::InvalidArgument(
                "path_count_range must be a nonempty interval with lo >= 1".into(),
            ));
        }
        if !(self.delay_spread > 0.0) || !(self.angle_spread > 0.0) {
            return Err(CsiError::InvalidArgument("spreads must be > 0".into()));
        }
        if self.cluster_count < 1 {
            return Err(CsiError::InvalidArgument("cluster_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Complex downlink CSI of shape (K, N_B, N_U).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub data: Array3<Complex64>,
    pub scenario_id: String,
}

impl ChannelTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    /// Number of complex CSI entries, K * N_B * N_U.
    pub fn entry_count(&self) -> usize {
        self.data.len()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn zeros_like(&self) -> ChannelTensor {
        ChannelTensor {
            data: Array3::zeros(self.data.raw_dim()),
            scenario_id: self.scenario_id.clone(),
        }
    }
}

/// ULA steering vector: entry m is exp(-j 2 pi (d/lambda) m sin(angle)) / sqrt(n).
pub fn steering_vector(
    angle: f64,
    n_antennas: usize,
    spacing_over_wavelength: f64,
) -> Result<Vec<Complex64>> {
    if !angle.is_finite() {
        return Err(CsiError::InvalidArgument("angle must be finite".into()));
    }
    if n_antennas < 1 {
        return Err(CsiError::InvalidArgument("n_antennas must be >= 1".into()));
    }
    let norm = 1.0 / (n_antennas as f64).sqrt();
    let phase_step = -2.0 * PI * spacing_over_wavelength * angle.sin();
    Ok((0..n_antennas)
        .map(|m| Complex64::from_polar(norm, phase_step * m as f64))
        .collect())
}

/// Frequency response at subcarrier `k`: the sum over paths of
/// gain * delay phasor * outer product of the two steering vectors,
/// scaled by sqrt(N_U * N_B / L). Shape (N_U, N_B).
pub fn channel_at_subcarrier(
    mp: &MultipathParams,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    k: usize,
) -> Result<Array2<Complex64>> {
    mp.validate()?;
    if k >= ofdm.n_subcarriers {
        return Err(CsiError::InvalidArgument(format!(
            "subcarrier index {k} out of range 0..{}",
            ofdm.n_subcarriers
        )));
    }
    let n_u = array.n_ue_antennas;
    let n_b = array.n_bs_antennas;
    let mut h = Array2::<Complex64>::zeros((n_u, n_b));
    let scale = ((n_u * n_b) as f64 / mp.n_paths as f64).sqrt();
    for l in 0..mp.n_paths {
        let a_u = steering_vector(mp.aoa[l], n_u, array.spacing_over_wavelength)?;
        let a_b = steering_vector(mp.aod[l], n_b, array.spacing_over_wavelength)?;
        let phase = -2.0 * PI * mp.delays[l] * ofdm.sample_rate * k as f64
            / ofdm.n_subcarriers as f64;
        let coeff = mp.gains[l] * Complex64::from_polar(scale, phase);
        for (u, &au) in a_u.iter().enumerate() {
            // conjugate transpose on the BS steering vector
            for (b, &ab) in a_b.iter().enumerate() {
                h[(u, b)] += coeff * au * ab.conj();
            }
        }
    }
    Ok(h)
}

/// Full (K, N_B, N_U) tensor from one multipath draw.
pub fn channel_tensor(
    mp: &MultipathParams,
    array: &ArrayConfig,
    ofdm: &OfdmConfig,
    scenario_id: &str,
) -> Result<ChannelTensor> {
    let k_total = ofdm.n_subcarriers;
    let mut data = Array3::<Complex64>::zeros((k_total, array.n_bs_antennas, array.n_ue_antennas));
    for k in 0..k_total {
        let h = channel_at_subcarrier(mp, array, ofdm, k)?;
        for b in 0..array.n_bs_antennas {
            for u in 0..array.n_ue_antennas {
                data[(k, b, u)] = h[(u, b)];
            }
        }
    }
    Ok(ChannelTensor {
        data,
        scenario_id: scenario_id.to_string(),
    })
}

fn sample_laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn clamp_angle(a: f64) -> f64 {
    a.clamp(-PI / 2.0, PI / 2.0)
}

/// Draw one clustered multipath realization. Power decays exponentially with
/// delay and the profile is normalized so the ensemble satisfies
/// E[||H||_F^2] = K * N_B * N_U.
pub fn sample_multipath<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Result<MultipathParams> {
    cfg.validate()?;
    let (lo, hi) = cfg.path_count_range;
    let l = rng.gen_range(lo..=hi);

    let exp = Exp::new(1.0 / cfg.delay_spread)
        .map_err(|e| CsiError::Numeric(format!("delay distribution: {e}")))?;
    let mut delays: Vec<f64> = (0..l).map(|_| exp.sample(rng)).collect();
    delays.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let centers: Vec<(f64, f64)> = (0..cfg.cluster_count)
        .map(|_| {
            (
                rng.gen_range(-PI / 2.0..PI / 2.0),
                rng.gen_range(-PI / 2.0..PI / 2.0),
            )
        })
        .collect();
    let mut aoa = Vec::with_capacity(l);
    let mut aod = Vec::with_capacity(l);
    for _ in 0..l {
        let c = centers[rng.gen_range(0..cfg.cluster_count)];
        aoa.push(clamp_angle(c.0 + sample_laplace(rng, cfg.angle_spread)));
        aod.push(clamp_angle(c.1 + sample_laplace(rng, cfg.angle_spread)));
    }

    // Power profile: exponential decay in delay, normalized so the per-path
    // powers sum to L. With the sqrt(N_U N_B / L) front factor and unit-norm
    // steering vectors this gives E[||H_k||_F^2] = N_B * N_U per subcarrier.
    let weights: Vec<f64> = delays.iter().map(|&t| (-t / cfg.delay_spread).exp()).collect();
    let wsum: f64 = weights.iter().sum();
    let gains: Vec<Complex64> = weights
        .iter()
        .map(|&w| {
            let p = w * l as f64 / wsum;
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) * (p / 2.0).sqrt()
        })
        .collect();

    Ok(MultipathParams {
        n_paths: l,
        gains,
        delays,
        aoa,
        aod,
    })
}

/// Per-sample RNG stream derived from (seed, sample index); parallel and
/// sequential generation see identical streams.
pub fn sample_rng(seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_index.wrapping_add(1));
    rng
}

/// Generate the `index`-th sample of a scenario.
pub fn generate_sample(cfg: &ScenarioConfig, index: u64) -> Result<ChannelTensor> {
    let mut rng = sample_rng(cfg.rng_seed, index);
    let mp = sample_multipath(cfg, &mut rng)?;
    channel_tensor(&mp, &cfg.array, &cfg.ofdm, &cfg.scenario_id)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub n_samples: usize,
    pub n_subcarriers: usize,
    pub n_bs_antennas: usize,
    pub n_ue_antennas: usize,
    /// Mean |entry|^2 over the whole dataset (complex entries).
    pub mean_entry_power: f64,
    pub max_abs_component: f64,
}

impl DatasetManifest {
    pub fn entries_per_sample(&self) -> usize {
        self.n_subcarriers * self.n_bs_antennas * self.n_ue_antennas
    }

    /// Per-component RMS used to normalize codec inputs.
    pub fn input_scale(&self) -> f64 {
        let s = (self.mean_entry_power / 2.0).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

/// Flatten to the container layout: full real plane then full imaginary
/// plane, each K-major, then N_B, then N_U.
pub fn tensor_to_f32_planes(t: &ChannelTensor) -> Vec<f32> {
    let n = t.data.len();
    let mut out = Vec::with_capacity(2 * n);
    for c in t.data.iter() {
        out.push(c.re as f32);
    }
    for c in t.data.iter() {
        out.push(c.im as f32);
    }
    debug_assert_eq!(out.len(), 2 * n);
    out
}

fn planes_to_tensor(
    vals: &[f32],
    k: usize,
    n_b: usize,
    n_u: usize,
    scenario_id: &str,
) -> ChannelTensor {
    let n = k * n_b * n_u;
    let mut data = Array3::<Complex64>::zeros((k, n_b, n_u));
    for (i, c) in data.iter_mut().enumerate() {
        *c = Complex64::new(vals[i] as f64, vals[n + i] as f64);
    }
    ChannelTensor {
        data,
        scenario_id: scenario_id.to_string(),
    }
}

/// Generate `n_samples` channels and persist them under `out_dir`.
/// Refuses to overwrite an existing container unless `force` is set.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    n_samples: usize,
    out_dir: &Path,
    force: bool,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(CsiError::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("{} exists; pass --force to overwrite", manifest_path.display()),
        )));
    }
    fs::create_dir_all(out_dir)?;

    let samples = parallel::map_indexed(n_samples, |i| generate_sample(cfg, i as u64));
    let mut buf: Vec<u8> = Vec::new();
    let mut power_sum = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut entries = 0usize;
    for s in &samples {
        let t = s.as_ref().map_err(|e| CsiError::Numeric(e.to_string()))?;
        let planes = tensor_to_f32_planes(t);
        for v in &planes {
            max_abs = max_abs.max(v.abs() as f64);
            buf.extend_from_slice(&v.to_le_bytes());
        }
        power_sum += t.frobenius_sq();
        entries += t.entry_count();
    }
    let mean_entry_power = if entries > 0 { power_sum / entries as f64 } else { 1.0 };

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        scenario: cfg.clone(),
        seed: cfg.rng_seed,
        n_samples,
        n_subcarriers: cfg.ofdm.n_subcarriers,
        n_bs_antennas: cfg.array.n_bs_antennas,
        n_ue_antennas: cfg.array.n_ue_antennas,
        mean_entry_power,
        max_abs_component: max_abs,
    };

    let mut f = fs::File::create(out_dir.join("tensors.bin"))?;
    f.write_all(&buf)?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(CsiError::Config(format!(
            "unsupported dataset format version {}",
            m.format_version
        )));
    }
    Ok(m)
}

/// Load every sample of a dataset container.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<ChannelTensor>)> {
    let manifest = load_manifest(dir)?;
    let mut f = fs::File::open(dir.join("tensors.bin"))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let per_sample = 2 * manifest.entries_per_sample();
    let expected = manifest.n_samples * per_sample * 4;
    if bytes.len() != expected {
        return Err(CsiError::Decode(format!(
            "tensors.bin holds {} bytes, expected {}",
            bytes.len(),
            expected
        )));
    }
    let mut vals = Vec::with_capacity(bytes.len() / 4);
    for chunk in bytes.chunks_exact(4) {
        vals.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let id = &manifest.scenario.scenario_id;
    let tensors = (0..manifest.n_samples)
        .map(|i| {
            planes_to_tensor(
                &vals[i * per_sample..(i + 1) * per_sample],
                manifest.n_subcarriers,
                manifest.n_bs_antennas,
                manifest.n_ue_antennas,
                id,
            )
        })
        .collect();
    Ok((manifest, tensors))
}
