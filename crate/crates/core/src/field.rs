//! Analytic plane-wave sound fields and their spherical-harmonic coefficients.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    coeff_count, i_pow, spherical_bessel_row, sph_harm_row, SphericalCoord, Wavenumber,
};

/// A unit-amplitude-scaled plane wave. `direction` is the propagation
/// direction, so the field is `A e^{i k ĝ·r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWaveSource {
    pub direction: [f64; 3],
    pub amplitude: f64,
}

impl PlaneWaveSource {
    pub fn new(direction: [f64; 3], amplitude: f64) -> Result<Self> {
        let norm = dot(direction, direction).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Config(format!("source amplitude must be positive, got {amplitude}")));
        }
        Ok(Self {
            direction: direction.map(|v| v / norm),
            amplitude,
        })
    }

    /// Source seen arriving from azimuth/elevation (degrees, elevation above
    /// the x–y plane). The wave propagates away from that direction.
    pub fn from_arrival_deg(azimuth_deg: f64, elevation_deg: f64, amplitude: f64) -> Result<Self> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let toward = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
        Self::new(toward.map(|v| -v), amplitude)
    }

    pub fn validate(&self) -> Result<()> {
        let norm = dot(self.direction, self.direction).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("source direction not unit length (|g| = {norm})")));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Config("source amplitude must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Complex SH coefficients over a frequency grid, one ACN-ordered row per
/// frequency, expanded about `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoeffSet {
    pub origin: [f64; 3],
    pub n_max: u32,
    pub freqs: Vec<f64>,
    /// Row-major `freqs.len() × (n_max + 1)²`.
    pub data: Vec<Complex64>,
}

impl ShCoeffSet {
    pub fn zeros(origin: [f64; 3], n_max: u32, freqs: Vec<f64>) -> Self {
        let len = freqs.len() * coeff_count(n_max);
        Self {
            origin,
            n_max,
            freqs,
            data: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn from_data(origin: [f64; 3], n_max: u32, freqs: Vec<f64>, data: Vec<Complex64>) -> Result<Self> {
        let set = Self { origin, n_max, freqs, data };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.freqs.len() * self.width() {
            return Err(Error::ShapeMismatch(format!(
                "coefficient data has {} entries, expected {} x {}",
                self.data.len(),
                self.freqs.len(),
                self.width()
            )));
        }
        if self.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Number of coefficients per frequency row.
    pub fn width(&self) -> usize {
        coeff_count(self.n_max)
    }

    pub fn k_bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        let w = self.width();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [Complex64] {
        let w = self.width();
        &mut self.data[k * w..(k + 1) * w]
    }

    /// Drops every order above `n_max`.
    pub fn truncated(&self, n_max: u32) -> Self {
        assert!(n_max <= self.n_max, "cannot truncate order {} to {}", self.n_max, n_max);
        let w = coeff_count(n_max);
        let mut out = Self::zeros(self.origin, n_max, self.freqs.clone());
        for k in 0..self.k_bins() {
            out.row_mut(k).copy_from_slice(&self.row(k)[..w]);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= factor);
        out
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_modulus(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Plane-wave field, sampling geometry and measurement SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sources: Vec<PlaneWaveSource>,
    pub sample_points: Vec<[f64; 3]>,
    /// `None` means noise-free.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

/// Smallest sampling-point count that keeps the order 4 → 8 system full rank.
pub const MIN_SAMPLE_POINTS: usize = 4;

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("scene needs at least one source".into()));
        }
        for s in &self.sources {
            s.validate()?;
        }
        if self.sample_points.len() < MIN_SAMPLE_POINTS {
            return Err(Error::Config(format!(
                "scene needs at least {MIN_SAMPLE_POINTS} sampling points, got {}",
                self.sample_points.len()
            )));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("snr_db must be finite (use null for noise-free)".into()));
            }
        }
        Ok(())
    }

    /// Checks that every sampling point lies within `[lo, hi]` metres of the origin.
    pub fn validate_distances(&self, lo: f64, hi: f64) -> Result<()> {
        for p in &self.sample_points {
            let d = dot(*p, *p).sqrt();
            if d < lo - 1e-12 || d > hi + 1e-12 {
                return Err(Error::Config(format!("sampling distance {d} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn snr_or_inf(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }
}

/// On-disk scene description. Sources may be given by propagation
/// direction or by arrival angles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub sources: Vec<SourceSpec>,
    pub sample_points: Vec<[f64; 3]>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Propagation {
        direction: [f64; 3],
        amplitude: f64,
    },
    Arrival {
        arrival_azimuth_deg: f64,
        #[serde(default)]
        arrival_elevation_deg: f64,
        amplitude: f64,
    },
}

impl SceneFile {
    pub fn into_scene(self) -> Result<Scene> {
        let sources = self
            .sources
            .into_iter()
            .map(|s| match s {
                SourceSpec::Propagation { direction, amplitude } => PlaneWaveSource::new(direction, amplitude),
                SourceSpec::Arrival {
                    arrival_azimuth_deg,
                    arrival_elevation_deg,
                    amplitude,
                } => PlaneWaveSource::from_arrival_deg(arrival_azimuth_deg, arrival_elevation_deg, amplitude),
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene {
            sources,
            sample_points: self.sample_points,
            snr_db: self.snr_db,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<&Scene> for SceneFile {
    fn from(scene: &Scene) -> Self {
        Self {
            sources: scene
                .sources
                .iter()
                .map(|s| SourceSpec::Propagation {
                    direction: s.direction,
                    amplitude: s.amplitude,
                })
                .collect(),
            sample_points: scene.sample_points.clone(),
            snr_db: scene.snr_db,
            seed: scene.seed,
        }
    }
}

fn plane_wave_row(src: &PlaneWaveSource, k: f64, origin: [f64; 3], n_max: u32, out: &mut [Complex64]) {
    let dir = SphericalCoord::from_cartesian(src.direction);
    let ys = sph_harm_row(n_max, dir.theta, dir.phi);
    let shift = Complex64::from_polar(1.0, k * dot(src.direction, origin));
    let lead = 4.0 * PI * src.amplitude * shift;
    for n in 0..=n_max {
        let phase = lead * i_pow(n as i64);
        let base = (n * n) as usize;
        for j in base..base + (2 * n + 1) as usize {
            out[j] += phase * ys[j].conj();
        }
    }
}

/// `B_n^m = 4π A i^n conj(Y_n^m(ĝ)) e^{i k ĝ·d}` about `origin = d`.
pub fn plane_wave_coeffs(src: &PlaneWaveSource, k: Wavenumber, origin: [f64; 3], n_max: u32) -> ShCoeffSet {
    let mut set = ShCoeffSet::zeros(origin, n_max, vec![k.f]);
    plane_wave_row(src, k.k, origin, n_max, &mut set.data);
    set
}

/// Superposition of every source in `scene` on the frequency grid `freqs`.
pub fn scene_coeffs(scene: &Scene, freqs: &[f64], origin: [f64; 3], n_max: u32) -> Result<ShCoeffSet> {
    let mut set = ShCoeffSet::zeros(origin, n_max, freqs.to_vec());
    for (row, &f) in freqs.iter().enumerate() {
        let k = Wavenumber::from_frequency(f)?;
        let out = set.row_mut(row);
        for src in &scene.sources {
            plane_wave_row(src, k.k, origin, n_max, out);
        }
    }
    Ok(set)
}

/// Pressure `Σ_n j_n(kr) Σ_m B_n^m Y_n^m(θ, φ)` at a point relative to the
/// set's origin.
pub fn synth_pressure(coeffs: &ShCoeffSet, freq_index: usize, point: SphericalCoord) -> Result<Complex64> {
    if freq_index >= coeffs.k_bins() {
        return Err(Error::IndexOutOfRange {
            index: freq_index,
            len: coeffs.k_bins(),
        });
    }
    let k = Wavenumber::from_frequency(coeffs.freqs[freq_index])?;
    let radial = spherical_bessel_row(coeffs.n_max, k.k * point.r);
    let ys = sph_harm_row(coeffs.n_max, point.theta, point.phi);
    let row = coeffs.row(freq_index);
    let mut total = Complex64::new(0.0, 0.0);
    for n in 0..=coeffs.n_max {
        let base = (n * n) as usize;
        let mut inner = Complex64::new(0.0, 0.0);
        for j in base..base + (2 * n + 1) as usize {
            inner += row[j] * ys[j];
        }
        total += inner * radial[n as usize];
    }
    Ok(total)
}

/// How the requested SNR is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrMode {
    /// Energies over the whole `K × (N+1)²` matrix.
    #[default]
    Broadband,
    /// Each frequency row separately hits the target SNR.
    PerFrequency,
}

/// Circular complex Gaussian noise scaled to `snr_db` relative to `coeffs`.
///
/// Infinite SNR yields all-zero noise without consuming the generator.
pub fn noise_for<R: Rng + ?Sized>(coeffs: &ShCoeffSet, snr_db: f64, mode: SnrMode, rng: &mut R) -> Result<Vec<Complex64>> {
    if snr_db.is_nan() {
        return Err(Error::Config("snr_db is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(vec![Complex64::new(0.0, 0.0); coeffs.data.len()]);
    }
    let signal = coeffs.energy();
    if signal == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let mut noise: Vec<Complex64> = (0..coeffs.data.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let ratio = 10f64.powf(snr_db / 10.0);
    match mode {
        SnrMode::Broadband => {
            let raw: f64 = noise.iter().map(|z| z.norm_sqr()).sum();
            let gain = (signal / (ratio * raw)).sqrt();
            noise.iter_mut().for_each(|z| *z *= gain);
        }
        SnrMode::PerFrequency => {
            let w = coeffs.width();
            for k in 0..coeffs.k_bins() {
                let row_signal: f64 = coeffs.row(k).iter().map(|z| z.norm_sqr()).sum();
                let chunk = &mut noise[k * w..(k + 1) * w];
                let raw: f64 = chunk.iter().map(|z| z.norm_sqr()).sum();
                let gain = if row_signal == 0.0 { 0.0 } else { (row_signal / (ratio * raw)).sqrt() };
                chunk.iter_mut().for_each(|z| *z *= gain);
            }
        }
    }
    Ok(noise)
}

/// Adds broadband noise at `snr_db`. See [`add_noise_with`].
pub fn add_noise<R: Rng + ?Sized>(coeffs: &ShCoeffSet, snr_db: f64, rng: &mut R) -> Result<ShCoeffSet> {
    add_noise_with(coeffs, snr_db, SnrMode::Broadband, rng)
}

pub fn add_noise_with<R: Rng + ?Sized>(coeffs: &ShCoeffSet, snr_db: f64, mode: SnrMode, rng: &mut R) -> Result<ShCoeffSet> {
    let noise = noise_for(coeffs, snr_db, mode, rng)?;
    let mut out = coeffs.clone();
    for (z, e) in out.data.iter_mut().zip(noise) {
        *z += e;
    }
    Ok(out)
}
