//! Coefficient- and field-domain error metrics (EDM, COSS, SDR), field grids
//! and batch evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ShCoeffSet;
use crate::special::{spherical_bessel_row, sph_harm_row, SphericalCoord, Wavenumber};

/// Reported SDR when the estimate reproduces the reference exactly.
pub const SDR_CAP_DB: f64 = 300.0;

fn check_shapes(est: &ShCoeffSet, reference: &ShCoeffSet) -> Result<()> {
    if est.n_max != reference.n_max || est.freqs.len() != reference.freqs.len() || est.data.len() != reference.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate is {}x(order {}), reference is {}x(order {})",
            est.freqs.len(),
            est.n_max,
            reference.freqs.len(),
            reference.n_max
        )));
    }
    Ok(())
}

fn mean_sq_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
}

fn real_stacked_cosine(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x.re * y.re + x.im * y.im;
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean squared modulus difference over every coefficient entry.
pub fn edm(est: &ShCoeffSet, reference: &ShCoeffSet) -> Result<f64> {
    check_shapes(est, reference)?;
    Ok(mean_sq_diff(&est.data, &reference.data))
}

pub fn edm_per_freq(est: &ShCoeffSet, reference: &ShCoeffSet) -> Result<Vec<f64>> {
    check_shapes(est, reference)?;
    Ok((0..est.k_bins()).map(|k| mean_sq_diff(est.row(k), reference.row(k))).collect())
}

/// Cosine similarity of the vectors `[re..., im...]` of both sets.
pub fn coss(est: &ShCoeffSet, reference: &ShCoeffSet) -> Result<f64> {
    check_shapes(est, reference)?;
    real_stacked_cosine(&est.data, &reference.data)
}

pub fn coss_per_freq(est: &ShCoeffSet, reference: &ShCoeffSet) -> Result<Vec<f64>> {
    check_shapes(est, reference)?;
    (0..est.k_bins()).map(|k| real_stacked_cosine(est.row(k), reference.row(k))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Node layout of a field grid or an SDR integration region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// Square `extent × extent` centred on the origin in the plane spanned by `axes`.
    Plane { axes: (Axis, Axis), extent: f64, step: f64 },
    /// Lattice nodes of the x–y plane inside `radius`.
    Disk { radius: f64, step: f64 },
    /// Lattice nodes of 3-D space inside `radius`.
    Ball { radius: f64, step: f64 },
}

impl GridSpec {
    /// The default SDR region: x–y disk of radius 1 m, 0.02 m spacing.
    pub fn default_region() -> Self {
        GridSpec::Disk { radius: 1.0, step: 0.02 }
    }

    pub fn plane_xy(extent: f64, step: f64) -> Self {
        GridSpec::Plane {
            axes: (Axis::X, Axis::Y),
            extent,
            step,
        }
    }

    fn lattice_radius(radius: f64, step: f64) -> Result<i64> {
        if !(radius > 0.0 && step > 0.0) {
            return Err(Error::Config("grid radius and step must be positive".into()));
        }
        Ok((radius / step).round() as i64)
    }

    pub fn nodes(&self) -> Result<Vec<[f64; 3]>> {
        match *self {
            GridSpec::Plane { axes, extent, step } => {
                if !(extent > 0.0 && step > 0.0) || axes.0 == axes.1 {
                    return Err(Error::Config("plane grid needs two distinct axes and positive extent/step".into()));
                }
                let n = (extent / step).round() as i64;
                let half = n as f64 / 2.0;
                let mut nodes = Vec::with_capacity(((n + 1) * (n + 1)) as usize);
                for j in 0..=n {
                    for i in 0..=n {
                        let mut p = [0.0; 3];
                        p[axes.0.index()] = (i as f64 - half) * step;
                        p[axes.1.index()] = (j as f64 - half) * step;
                        nodes.push(p);
                    }
                }
                Ok(nodes)
            }
            GridSpec::Disk { radius, step } => {
                let r = Self::lattice_radius(radius, step)?;
                let mut nodes = Vec::new();
                for j in -r..=r {
                    for i in -r..=r {
                        if i * i + j * j <= r * r {
                            nodes.push([i as f64 * step, j as f64 * step, 0.0]);
                        }
                    }
                }
                Ok(nodes)
            }
            GridSpec::Ball { radius, step } => {
                let r = Self::lattice_radius(radius, step)?;
                let mut nodes = Vec::new();
                for l in -r..=r {
                    for j in -r..=r {
                        for i in -r..=r {
                            if i * i + j * j + l * l <= r * r {
                                nodes.push([i as f64 * step, j as f64 * step, l as f64 * step]);
                            }
                        }
                    }
                }
                Ok(nodes)
            }
        }
    }
}

/// Precomputed `j_n(kr) Y_n^m(θ, φ)` for every node at one frequency, so
/// synthesis of many coefficient sets is a matrix-vector product each.
pub struct FieldBasis {
    pub freq_hz: f64,
    pub n_max: u32,
    width: usize,
    values: Vec<Complex64>,
}

impl FieldBasis {
    pub fn new(nodes: &[[f64; 3]], freq_hz: f64, n_max: u32) -> Result<Self> {
        let k = Wavenumber::from_frequency(freq_hz)?.k;
        let width = crate::special::coeff_count(n_max);
        let mut values = Vec::with_capacity(nodes.len() * width);
        for p in nodes {
            let s = SphericalCoord::from_cartesian(*p);
            let radial = spherical_bessel_row(n_max, k * s.r);
            let ys = sph_harm_row(n_max, s.theta, s.phi);
            let mut ys = ys.iter();
            for (n, jn) in radial.iter().enumerate() {
                for y in ys.by_ref().take(2 * n + 1) {
                    values.push(y * jn);
                }
            }
        }
        Ok(Self {
            freq_hz,
            n_max,
            width,
            values,
        })
    }

    pub fn synthesize(&self, row: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(row.len(), self.width, "coefficient row does not match basis order");
        self.values
            .chunks_exact(self.width)
            .map(|b| b.iter().zip(row).map(|(x, y)| x * y).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub freq_hz: f64,
    pub nodes: Vec<[f64; 3]>,
    pub values: Vec<Complex64>,
}

impl FieldGrid {
    /// CSV with columns `x,y,re,im` (the two in-plane coordinates for plane
    /// grids, x and y otherwise).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (a, b) = match self.spec {
            GridSpec::Plane { axes, .. } => (axes.0.index(), axes.1.index()),
            _ => (0, 1),
        };
        writeln!(w, "x,y,re,im")?;
        for (p, v) in self.nodes.iter().zip(&self.values) {
            writeln!(w, "{},{},{:e},{:e}", round_coord(p[a]), round_coord(p[b]), v.re, v.im)?;
        }
        Ok(())
    }
}

fn round_coord(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Pressure from `coeffs` (row `freq_index`) at every node of `spec`.
pub fn field_grid(coeffs: &ShCoeffSet, freq_index: usize, spec: GridSpec) -> Result<FieldGrid> {
    if freq_index >= coeffs.k_bins() {
        return Err(Error::IndexOutOfRange {
            index: freq_index,
            len: coeffs.k_bins(),
        });
    }
    let nodes = spec.nodes()?;
    let basis = FieldBasis::new(&nodes, coeffs.freqs[freq_index], coeffs.n_max)?;
    let values = basis.synthesize(coeffs.row(freq_index));
    Ok(FieldGrid {
        spec,
        freq_hz: coeffs.freqs[freq_index],
        nodes,
        values,
    })
}

/// `10 log10(Σ|u|² / Σ|u − û|²)`, capped at [`SDR_CAP_DB`].
pub fn sdr_from_fields(reference: &[Complex64], estimate: &[Complex64]) -> Result<f64> {
    let signal: f64 = reference.iter().map(|u| u.norm_sqr()).sum();
    if signal == 0.0 {
        return Err(Error::ZeroReference);
    }
    let distortion: f64 = reference.iter().zip(estimate).map(|(u, v)| (u - v).norm_sqr()).sum();
    if distortion == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (signal / distortion).log10()).min(SDR_CAP_DB))
}

pub fn sdr(est: &ShCoeffSet, reference: &ShCoeffSet, freq_index: usize, region: GridSpec) -> Result<f64> {
    check_shapes(est, reference)?;
    if freq_index >= reference.k_bins() {
        return Err(Error::IndexOutOfRange {
            index: freq_index,
            len: reference.k_bins(),
        });
    }
    let nodes = region.nodes()?;
    let basis = FieldBasis::new(&nodes, reference.freqs[freq_index], reference.n_max)?;
    sdr_from_fields(&basis.synthesize(reference.row(freq_index)), &basis.synthesize(est.row(freq_index)))
}

/// One method's estimates for one sweep point, aligned with their references.
#[derive(Debug, Clone)]
pub struct SuiteGroup {
    pub method: String,
    pub sweep_axis: String,
    pub sweep_value: String,
    pub estimates: Vec<ShCoeffSet>,
    pub references: Vec<ShCoeffSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub sweep_axis: String,
    pub sweep_value: String,
    /// `None` marks the frequency-averaged row.
    pub freq_hz: Option<f64>,
    pub edm: f64,
    pub coss: f64,
    pub sdr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: String,
    pub sweep_axis: String,
    pub sweep_value: String,
    pub items: usize,
    pub edm: f64,
    pub coss: f64,
    pub sdr_db: f64,
}

impl EvalReport {
    pub fn averages(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.freq_hz.is_none())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "method,sweep_axis,sweep_value,freq_hz,edm,coss,sdr_db")?;
        for r in &self.rows {
            let f = r.freq_hz.map_or_else(|| "mean".to_string(), |f| f.to_string());
            writeln!(
                w,
                "{},{},{},{},{:e},{:.9},{:.6}",
                r.method, r.sweep_axis, r.sweep_value, f, r.edm, r.coss, r.sdr_db
            )?;
        }
        Ok(())
    }
}

/// Per-frequency and frequency-averaged EDM/COSS/SDR for every group.
///
/// Per-frequency values are means over the group's items; the averaged row
/// is the mean of the per-frequency values.
pub fn evaluate_suite(groups: &[SuiteGroup], region: GridSpec) -> Result<EvalReport> {
    let nodes = region.nodes()?;
    struct Acc {
        edm: Vec<f64>,
        coss: Vec<f64>,
        sdr: Vec<f64>,
    }
    let mut accs = Vec::with_capacity(groups.len());
    // (frequency, order) -> [(group, bin)], so each field basis is built once
    let mut by_basis: BTreeMap<(u64, u32), Vec<(usize, usize)>> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        if g.estimates.len() != g.references.len() || g.references.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "group {}/{}={} has {} estimates for {} references",
                g.method,
                g.sweep_axis,
                g.sweep_value,
                g.estimates.len(),
                g.references.len()
            )));
        }
        let freqs = &g.references[0].freqs;
        let k = freqs.len();
        let mut acc = Acc {
            edm: vec![0.0; k],
            coss: vec![0.0; k],
            sdr: vec![0.0; k],
        };
        for (est, reference) in g.estimates.iter().zip(&g.references) {
            check_shapes(est, reference)?;
            if &reference.freqs != freqs {
                return Err(Error::ShapeMismatch("references within a group use different grids".into()));
            }
            for (a, v) in acc.edm.iter_mut().zip(edm_per_freq(est, reference)?) {
                *a += v;
            }
            for (a, v) in acc.coss.iter_mut().zip(coss_per_freq(est, reference)?) {
                *a += v;
            }
        }
        for (fi, f) in freqs.iter().enumerate() {
            by_basis.entry((f.to_bits(), g.references[0].n_max)).or_default().push((gi, fi));
        }
        accs.push(acc);
    }
    for ((f_bits, n_max), uses) in by_basis {
        let basis = FieldBasis::new(&nodes, f64::from_bits(f_bits), n_max)?;
        for (gi, fi) in uses {
            let g = &groups[gi];
            for (est, reference) in g.estimates.iter().zip(&g.references) {
                let u = basis.synthesize(reference.row(fi));
                let u_hat = basis.synthesize(est.row(fi));
                accs[gi].sdr[fi] += sdr_from_fields(&u, &u_hat)?;
            }
        }
    }
    let mut rows = Vec::new();
    for (g, acc) in groups.iter().zip(&accs) {
        let n = g.references.len() as f64;
        let freqs = &g.references[0].freqs;
        let row = |freq_hz, edm, coss, sdr_db| ReportRow {
            method: g.method.clone(),
            sweep_axis: g.sweep_axis.clone(),
            sweep_value: g.sweep_value.clone(),
            freq_hz,
            edm,
            coss,
            sdr_db,
        };
        for (fi, &f) in freqs.iter().enumerate() {
            rows.push(row(Some(f), acc.edm[fi] / n, acc.coss[fi] / n, acc.sdr[fi] / n));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / (n * freqs.len() as f64);
        rows.push(row(None, mean(&acc.edm), mean(&acc.coss), mean(&acc.sdr)));
    }
    Ok(EvalReport { rows })
}

pub fn summarize(report: &EvalReport, groups: &[SuiteGroup]) -> Vec<SummaryEntry> {
    report
        .averages()
        .map(|r| {
            let items = groups
                .iter()
                .find(|g| g.method == r.method && g.sweep_axis == r.sweep_axis && g.sweep_value == r.sweep_value)
                .map_or(0, |g| g.references.len());
            SummaryEntry {
                method: r.method.clone(),
                sweep_axis: r.sweep_axis.clone(),
                sweep_value: r.sweep_value.clone(),
                items,
                edm: r.edm,
                coss: r.coss,
                sdr_db: r.sdr_db,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{plane_wave_coeffs, PlaneWaveSource};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n_max: u32, freqs: &[f64]) -> ShCoeffSet {
        let len = freqs.len() * crate::special::coeff_count(n_max);
        let data = (0..len)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ShCoeffSet::from_data([0.0; 3], n_max, freqs.to_vec(), data).unwrap()
    }

    #[test]
    fn edm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_set(&mut rng, 2, &[100.0, 200.0]);
        assert_eq!(edm(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        let c = Complex64::new(0.3, -0.4);
        b.data[5] += c;
        let m = a.data.len() as f64;
        assert!((edm(&b, &a).unwrap() - c.norm_sqr() / m).abs() < 1e-15);
        let other = random_set(&mut rng, 3, &[100.0, 200.0]);
        assert!(edm(&a, &other).is_err());
    }

    #[test]
    fn coss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 2, &[100.0]);
        assert!((coss(&a, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!((coss(&a.scaled(-1.0), &a).unwrap() + 1.0).abs() < 1e-14);
        assert!((coss(&a.scaled(2.0), &a).unwrap() - 1.0).abs() < 1e-14);
        let z = ShCoeffSet::zeros([0.0; 3], 2, vec![100.0]);
        assert!(matches!(coss(&z, &a), Err(Error::ZeroVector)));
    }

    #[test]
    fn disk_node_count() {
        assert_eq!(GridSpec::default_region().nodes().unwrap().len(), 7845);
    }

    #[test]
    fn plane_node_count() {
        let nodes = GridSpec::plane_xy(2.0, 0.02).nodes().unwrap();
        assert_eq!(nodes.len(), 101 * 101);
        assert!((nodes[0][0] + 1.0).abs() < 1e-12 && (nodes[nodes.len() - 1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sdr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let region = GridSpec::Disk { radius: 0.5, step: 0.05 };
        let a = random_set(&mut rng, 3, &[400.0]);
        assert_eq!(sdr(&a, &a, 0, region).unwrap(), SDR_CAP_DB);
        let zero = ShCoeffSet::zeros([0.0; 3], 3, vec![400.0]);
        assert!(sdr(&zero, &a, 0, region).unwrap().abs() < 1e-12);
        assert!(matches!(sdr(&a, &zero, 0, region), Err(Error::ZeroReference)));
    }

    #[test]
    fn sdr_distortion_halving() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let region = GridSpec::Disk { radius: 0.6, step: 0.04 };
        let reference = random_set(&mut rng, 3, &[700.0]);
        let delta = random_set(&mut rng, 3, &[700.0]);
        let mut est1 = reference.clone();
        let mut est2 = reference.clone();
        for i in 0..reference.data.len() {
            est1.data[i] += delta.data[i];
            est2.data[i] += delta.data[i] * 0.5;
        }
        let gain = sdr(&est2, &reference, 0, region).unwrap() - sdr(&est1, &reference, 0, region).unwrap();
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn sdr_phase_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let region = GridSpec::Disk { radius: 0.5, step: 0.05 };
        let r = random_set(&mut rng, 2, &[300.0]);
        let e = random_set(&mut rng, 2, &[300.0]);
        let rot = Complex64::from_polar(1.0, 1.234);
        let mut r2 = r.clone();
        let mut e2 = e.clone();
        r2.data.iter_mut().for_each(|z| *z *= rot);
        e2.data.iter_mut().for_each(|z| *z *= rot);
        let a = sdr(&e, &r, 0, region).unwrap();
        let b = sdr(&e2, &r2, 0, region).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn plane_wave_grid_matches_exponential() {
        let src = PlaneWaveSource::new([1.0, 1.0, 0.2], 1.0).unwrap();
        let k = Wavenumber::from_frequency(1000.0).unwrap();
        let coeffs = plane_wave_coeffs(&src, k, [0.0; 3], 32);
        let grid = field_grid(&coeffs, 0, GridSpec::plane_xy(2.0, 0.1)).unwrap();
        let mut worst: f64 = 0.0;
        for (p, v) in grid.nodes.iter().zip(&grid.values) {
            if (p[0] * p[0] + p[1] * p[1]).sqrt() <= 1.0 {
                let phase = k.k * crate::field::dot(src.direction, *p);
                worst = worst.max((v - Complex64::from_polar(1.0, phase)).norm());
            }
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn constant_mode_grid() {
        let mut c = ShCoeffSet::zeros([0.0; 3], 1, vec![100.0]);
        c.data[0] = Complex64::new((4.0 * std::f64::consts::PI).sqrt(), 0.0);
        let grid = field_grid(&c, 0, GridSpec::plane_xy(0.02, 0.01)).unwrap();
        for v in &grid.values {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-3);
        }
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("x,y,re,im\n-0.01,-0.01,"));
    }

    #[test]
    fn suite_single_item_and_row_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let freqs = [200.0, 500.0, 900.0];
        let region = GridSpec::Disk { radius: 0.4, step: 0.05 };
        let reference = random_set(&mut rng, 2, &freqs);
        let est = random_set(&mut rng, 2, &freqs);
        let group = SuiteGroup {
            method: "lsm".into(),
            sweep_axis: "none".into(),
            sweep_value: "-".into(),
            estimates: vec![est.clone()],
            references: vec![reference.clone()],
        };
        let report = evaluate_suite(&[group.clone()], region).unwrap();
        assert_eq!(report.rows.len(), freqs.len() + 1);
        let e = edm_per_freq(&est, &reference).unwrap();
        let c = coss_per_freq(&est, &reference).unwrap();
        for (fi, row) in report.rows.iter().take(freqs.len()).enumerate() {
            assert!((row.edm - e[fi]).abs() < 1e-15);
            assert!((row.coss - c[fi]).abs() < 1e-15);
            assert!((row.sdr_db - sdr(&est, &reference, fi, region).unwrap()).abs() < 1e-12);
        }
        // averaged EDM of a single item equals its whole-set EDM (equal row widths)
        let avg = report.averages().next().unwrap();
        assert!((avg.edm - edm(&est, &reference).unwrap()).abs() < 1e-15);

        let sweep: Vec<SuiteGroup> = ["10", "20"]
            .iter()
            .map(|v| SuiteGroup {
                sweep_axis: "snr".into(),
                sweep_value: v.to_string(),
                ..group.clone()
            })
            .collect();
        let report = evaluate_suite(&sweep, region).unwrap();
        assert_eq!(report.rows.len(), 2 * freqs.len() + 2);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,sweep_axis,sweep_value,freq_hz,edm,coss,sdr_db\n"));
        assert_eq!(text.lines().filter(|l| l.contains(",mean,")).count(), 2);
        assert_eq!(summarize(&report, &sweep)[1].items, 1);

        let bad = SuiteGroup {
            estimates: vec![],
            ..group
        };
        assert!(evaluate_suite(&[bad], region).is_err());
    }
}
