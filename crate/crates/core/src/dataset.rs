//! Simulated training data: randomised plane-wave scenes, normalised
//! local/global coefficient pairs, and the binary shard format.
//!
//! Shard layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "SHTSHRD1"
//! header_len   u64
//! header       header_len bytes of JSON (ShardHeader)
//! blob         f64 payload, example after example
//! ```
//!
//! Each example's payload is its `Q × 3` geometry, the normalisation scale,
//! the `Q` input matrices (`K × (n_in+1)²`) and the target
//! (`K × (n_out+1)²`); complex entries are stored as interleaved
//! `re, im` pairs, row-major. The header carries the SHA-256 of the blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{noise_for, scene_coeffs, PlaneWaveSource, Scene, ShCoeffSet, SnrMode, MIN_SAMPLE_POINTS};

const SHARD_MAGIC: &[u8; 8] = b"SHTSHRD1";
const SHARD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_in: u32,
    pub n_out: u32,
    pub k_bins: usize,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub freq_step: f64,
    pub dist_min: f64,
    pub dist_max: f64,
    pub sources_min: usize,
    pub sources_max: usize,
    pub amp_min: f64,
    pub amp_max: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    /// Skip noise entirely (overrides the SNR range).
    pub noise_free: bool,
    pub snr_mode: SnrMode,
    pub q_min: usize,
    pub q_max: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_in: 4,
            n_out: 8,
            k_bins: 30,
            freq_lo: 100.0,
            freq_hi: 3000.0,
            freq_step: 100.0,
            dist_min: 0.2,
            dist_max: 2.0,
            sources_min: 1,
            sources_max: 4,
            amp_min: 0.1,
            amp_max: 1.0,
            snr_min_db: 10.0,
            snr_max_db: 30.0,
            noise_free: false,
            snr_mode: SnrMode::Broadband,
            q_min: 4,
            q_max: 10,
            train_count: 2000,
            val_count: 200,
            test_count: 200,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_out < self.n_in {
            return bad(format!("n_out ({}) below n_in ({})", self.n_out, self.n_in));
        }
        if self.k_bins == 0 {
            return bad("k_bins must be positive".into());
        }
        if !(self.freq_lo > 0.0 && self.freq_step > 0.0 && self.freq_hi >= self.freq_lo) {
            return bad("frequency grid needs 0 < freq_lo <= freq_hi and freq_step > 0".into());
        }
        let span = (self.freq_hi - self.freq_lo) / self.freq_step + 1.0;
        if (span - self.k_bins as f64).abs() > 1e-9 {
            return bad(format!(
                "frequency grid {}..={} step {} has {span} bins, k_bins is {}",
                self.freq_lo, self.freq_hi, self.freq_step, self.k_bins
            ));
        }
        if !(self.dist_min > 0.0 && self.dist_min <= self.dist_max) {
            return bad("distance range must satisfy 0 < dist_min <= dist_max".into());
        }
        if !(self.sources_min >= 1 && self.sources_min <= self.sources_max) {
            return bad("source count range must satisfy 1 <= min <= max".into());
        }
        if !(self.amp_min > 0.0 && self.amp_min <= self.amp_max) {
            return bad("amplitude range must satisfy 0 < min <= max".into());
        }
        if !(self.snr_min_db.is_finite() && self.snr_max_db.is_finite() && self.snr_min_db <= self.snr_max_db) {
            return bad("SNR range must be finite with min <= max".into());
        }
        if !(self.q_min >= MIN_SAMPLE_POINTS && self.q_min <= self.q_max) {
            return bad(format!("sampling-point range must satisfy {MIN_SAMPLE_POINTS} <= q_min <= q_max"));
        }
        Ok(())
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.k_bins).map(|i| self.freq_lo + i as f64 * self.freq_step).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Val => self.val_count,
            Split::Test => self.test_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0001,
            Split::Val => 0x7661_6c00_0000_0002,
            Split::Test => 0x7465_7374_0000_0003,
        }
    }
}

/// SplitMix64 finaliser, used to derive independent per-example seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn example_seed(master: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(master, split.salt()), index as u64)
}

/// Uniformly distributed unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a random scene: 1..=N sources, Q sampling points with independent
/// uniform directions and distances, and an SNR from the configured range.
pub fn sample_scene<R: Rng + ?Sized>(cfg: &DatasetConfig, rng: &mut R) -> Scene {
    let n_sources = rng.random_range(cfg.sources_min..=cfg.sources_max);
    let sources = (0..n_sources)
        .map(|_| {
            let dir = random_unit_vector(rng);
            let amp = uniform(rng, cfg.amp_min, cfg.amp_max);
            PlaneWaveSource { direction: dir, amplitude: amp }
        })
        .collect();
    let q = rng.random_range(cfg.q_min..=cfg.q_max);
    let sample_points = (0..q)
        .map(|_| {
            let dir = random_unit_vector(rng);
            let d = uniform(rng, cfg.dist_min, cfg.dist_max);
            dir.map(|v| v * d)
        })
        .collect();
    let snr = uniform(rng, cfg.snr_min_db, cfg.snr_max_db);
    Scene {
        sources,
        sample_points,
        snr_db: if cfg.noise_free { None } else { Some(snr) },
        seed: rng.random(),
    }
}

/// A normalised input/target pair. Multiplying by `scale` recovers the
/// analytic (noisy-input, clean-target) coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// One noisy `K × (n_in+1)²` set per sampling point, origin at the point.
    pub inputs: Vec<ShCoeffSet>,
    /// `K × (n_out+1)²` coefficients at the global origin.
    pub target: ShCoeffSet,
    pub geometry: Vec<[f64; 3]>,
    pub scale: f64,
    pub scene_seed: u64,
    pub snr_db: Option<f64>,
    pub n_sources: usize,
}

impl TrainingExample {
    pub fn q(&self) -> usize {
        self.geometry.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.target.freqs
    }

    pub fn n_in(&self) -> u32 {
        self.inputs[0].n_max
    }

    pub fn n_out(&self) -> u32 {
        self.target.n_max
    }

    pub fn mean_distance(&self) -> f64 {
        let total: f64 = self.geometry.iter().map(|p| crate::field::dot(*p, *p).sqrt()).sum();
        total / self.q() as f64
    }
}

/// Unnormalised coefficients of a scene: the noise-free global target, the
/// noise-free locals and the noisy locals.
pub struct SceneCoefficients {
    pub target: ShCoeffSet,
    pub clean_inputs: Vec<ShCoeffSet>,
    pub noisy_inputs: Vec<ShCoeffSet>,
}

pub fn scene_coefficients(scene: &Scene, cfg: &DatasetConfig) -> Result<SceneCoefficients> {
    let freqs = cfg.freqs();
    let target = scene_coeffs(scene, &freqs, [0.0; 3], cfg.n_out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut clean_inputs = Vec::with_capacity(scene.sample_points.len());
    let mut noisy_inputs = Vec::with_capacity(scene.sample_points.len());
    for p in &scene.sample_points {
        let clean = scene_coeffs(scene, &freqs, *p, cfg.n_in)?;
        let noise = noise_for(&clean, scene.snr_or_inf(), cfg.snr_mode, &mut rng)?;
        let mut noisy = clean.clone();
        for (z, e) in noisy.data.iter_mut().zip(noise) {
            *z += e;
        }
        clean_inputs.push(clean);
        noisy_inputs.push(noisy);
    }
    Ok(SceneCoefficients {
        target,
        clean_inputs,
        noisy_inputs,
    })
}

/// Analytic target and noisy inputs for `scene`, both divided by the largest
/// input modulus.
pub fn make_example(scene: &Scene, cfg: &DatasetConfig) -> Result<TrainingExample> {
    let coeffs = scene_coefficients(scene, cfg)?;
    let scale = coeffs.noisy_inputs.iter().map(ShCoeffSet::max_modulus).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) || coeffs.target.energy() == 0.0 {
        return Err(Error::Numerical("degenerate scene: field vanishes at every sampling point".into()));
    }
    let inv = 1.0 / scale;
    Ok(TrainingExample {
        inputs: coeffs.noisy_inputs.iter().map(|s| s.scaled(inv)).collect(),
        target: coeffs.target.scaled(inv),
        geometry: scene.sample_points.clone(),
        scale,
        scene_seed: scene.seed,
        snr_db: scene.snr_db,
        n_sources: scene.sources.len(),
    })
}

/// Example `index` of `split`: a pure function of `(cfg, split, index)`.
pub fn generate_example(cfg: &DatasetConfig, split: Split, index: usize) -> Result<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, split, index));
    loop {
        let scene = sample_scene(cfg, &mut rng);
        match make_example(&scene, cfg) {
            Err(Error::Numerical(_)) => continue,
            other => return other,
        }
    }
}

pub fn generate_split(cfg: &DatasetConfig, split: Split) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    (0..cfg.count(split)).map(|i| generate_example(cfg, split, i)).collect()
}

/// Groups example indices by sampling-point count and chunks each group, so
/// no batch mixes different `Q`. Batch order is shuffled.
pub fn homogeneous_batches<R: Rng + ?Sized>(qs: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut distinct: Vec<usize> = qs.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut batches = Vec::new();
    for q in distinct {
        let mut idx: Vec<usize> = (0..qs.len()).filter(|&i| qs[i] == q).collect();
        idx.shuffle(rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub q: usize,
    pub scene_seed: u64,
    pub snr_db: Option<f64>,
    pub n_sources: usize,
    /// Byte offset of the example's payload within the blob.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub version: u32,
    pub config: DatasetConfig,
    pub freqs: Vec<f64>,
    pub n_in: u32,
    pub n_out: u32,
    pub count: usize,
    pub examples: Vec<ShardEntry>,
    pub blob_len: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub header: ShardHeader,
    pub examples: Vec<TrainingExample>,
}

fn payload_floats(q: usize, k: usize, w_in: usize, w_out: usize) -> usize {
    q * 3 + 1 + 2 * q * k * w_in + 2 * k * w_out
}

fn push_complex(buf: &mut Vec<u8>, data: &[Complex64]) {
    for z in data {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
}

/// Serialises `examples` (all generated under `cfg`) to `path`.
pub fn write_shard(examples: &[TrainingExample], cfg: &DatasetConfig, path: &Path) -> Result<ShardHeader> {
    let header = encode_shard(examples, cfg)?;
    let (header, blob) = header;
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&blob)?;
    w.flush()?;
    Ok(header)
}

fn encode_shard(examples: &[TrainingExample], cfg: &DatasetConfig) -> Result<(ShardHeader, Vec<u8>)> {
    let freqs = cfg.freqs();
    let (w_in, w_out) = (crate::special::coeff_count(cfg.n_in), crate::special::coeff_count(cfg.n_out));
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.target.n_max != cfg.n_out
            || ex.target.freqs != freqs
            || ex.inputs.len() != ex.q()
            || ex.inputs.iter().any(|s| s.n_max != cfg.n_in || s.freqs != freqs)
        {
            return Err(Error::ShapeMismatch("example does not match the shard configuration".into()));
        }
        let offset = blob.len() as u64;
        for p in &ex.geometry {
            for v in p {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob.extend_from_slice(&ex.scale.to_le_bytes());
        for s in &ex.inputs {
            push_complex(&mut blob, &s.data);
        }
        push_complex(&mut blob, &ex.target.data);
        let len = blob.len() as u64 - offset;
        debug_assert_eq!(len as usize, 8 * payload_floats(ex.q(), freqs.len(), w_in, w_out));
        entries.push(ShardEntry {
            q: ex.q(),
            scene_seed: ex.scene_seed,
            snr_db: ex.snr_db,
            n_sources: ex.n_sources,
            offset,
            len,
        });
    }
    let header = ShardHeader {
        version: SHARD_VERSION,
        config: cfg.clone(),
        freqs,
        n_in: cfg.n_in,
        n_out: cfg.n_out,
        count: examples.len(),
        examples: entries,
        blob_len: blob.len() as u64,
        sha256: hex::encode(Sha256::digest(&blob)),
    };
    Ok((header, blob))
}

pub fn read_shard(path: &Path) -> Result<Shard> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_shard(&bytes)
}

fn decode_shard(bytes: &[u8]) -> Result<Shard> {
    let truncated = || Error::Format("truncated shard".into());
    if bytes.len() < 16 {
        return Err(truncated());
    }
    if &bytes[..8] != SHARD_MAGIC {
        return Err(Error::Format("not a shard file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize.checked_add(header_len).ok_or_else(truncated)?;
    if bytes.len() < header_end {
        return Err(truncated());
    }
    let header: ShardHeader = serde_json::from_slice(&bytes[16..header_end])?;
    if header.version != SHARD_VERSION {
        return Err(Error::Format(format!("unsupported shard version {}", header.version)));
    }
    let blob = &bytes[header_end..];
    if (blob.len() as u64) < header.blob_len {
        return Err(truncated());
    }
    if blob.len() as u64 != header.blob_len {
        return Err(Error::Format("trailing bytes after shard payload".into()));
    }
    let actual = hex::encode(Sha256::digest(blob));
    if actual != header.sha256 {
        return Err(Error::Checksum {
            expected: header.sha256.clone(),
            actual,
        });
    }

    let inconsistent = |msg: &str| Error::Format(format!("header/blob inconsistency: {msg}"));
    if header.count != header.examples.len() {
        return Err(inconsistent("count differs from entry list"));
    }
    if header.freqs != header.config.freqs() || header.n_in != header.config.n_in || header.n_out != header.config.n_out {
        return Err(inconsistent("shape fields disagree with the embedded config"));
    }
    let k = header.freqs.len();
    let (w_in, w_out) = (crate::special::coeff_count(header.n_in), crate::special::coeff_count(header.n_out));
    let mut examples = Vec::with_capacity(header.count);
    let mut expected_offset = 0u64;
    for e in &header.examples {
        let want = 8 * payload_floats(e.q, k, w_in, w_out) as u64;
        if e.offset != expected_offset || e.len != want || e.q == 0 {
            return Err(inconsistent("entry offsets/lengths do not tile the blob"));
        }
        expected_offset += e.len;
        if expected_offset > header.blob_len {
            return Err(inconsistent("entry runs past the blob"));
        }
        let mut floats = blob[e.offset as usize..(e.offset + e.len) as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut next = || floats.next().expect("length checked above");
        let geometry: Vec<[f64; 3]> = (0..e.q).map(|_| [next(), next(), next()]).collect();
        let scale = next();
        let mut read_set = |origin: [f64; 3], n_max: u32, width: usize| {
            let data = (0..k * width).map(|_| Complex64::new(next(), next())).collect();
            ShCoeffSet::from_data(origin, n_max, header.freqs.clone(), data)
        };
        let inputs = geometry
            .iter()
            .map(|p| read_set(*p, header.n_in, w_in))
            .collect::<Result<Vec<_>>>()?;
        let target = read_set([0.0; 3], header.n_out, w_out)?;
        examples.push(TrainingExample {
            inputs,
            target,
            geometry,
            scale,
            scene_seed: e.scene_seed,
            snr_db: e.snr_db,
            n_sources: e.n_sources,
        });
    }
    if expected_offset != header.blob_len {
        return Err(inconsistent("entries do not cover the blob"));
    }
    Ok(Shard { header, examples })
}
