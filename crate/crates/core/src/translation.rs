//! Interior-to-interior SH translation matrices and the ridge-regularised
//! least-squares inversion (LSM baseline).
//!
//! For one frequency, the stacked local coefficients at `Q` points relate to
//! the global coefficients by `b_local = T b_global`, where `T` has
//! `Q (N''+1)²` rows and `(N+1)²` columns. Row `(q, n', m')`, column `(n, m)`:
//!
//! ```text
//! T = Σ_{n''=|n-n'|}^{n+n'} j_{n''}(k d_q) Y_{n''}^{m-m'}(d̂_q) C_{n'm'}^{n m n''}
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ShCoeffSet;
use crate::special::{
    coeff_count, spherical_bessel_row, sph_harm_row, translation_coupling, HarmonicIndex, SphericalCoord,
    Wavenumber,
};

/// Nonzero coupling terms for one `(n_local, n_global)` pair. Independent of
/// frequency and geometry, so one table serves every block.
#[derive(Debug, Clone)]
pub struct CouplingTable {
    pub n_local: u32,
    pub n_global: u32,
    terms: Vec<CouplingTerm>,
}

#[derive(Debug, Clone, Copy)]
struct CouplingTerm {
    row: usize,
    col: usize,
    n_pp: u32,
    harmonic: usize,
    coupling: Complex64,
}

impl CouplingTable {
    pub fn new(n_local: u32, n_global: u32) -> Self {
        let mut terms = Vec::new();
        for row in 0..coeff_count(n_local) {
            let local = HarmonicIndex::from_acn(row);
            for col in 0..coeff_count(n_global) {
                let global = HarmonicIndex::from_acn(col);
                let mu = global.m - local.m;
                let lo = global.n.abs_diff(local.n);
                // (n n' n''; 0 0 0) vanishes unless n + n' + n'' is even
                for n_pp in (lo..=global.n + local.n).step_by(2) {
                    if mu.unsigned_abs() > n_pp {
                        continue;
                    }
                    let coupling = translation_coupling(global.n, global.m, local.n, local.m, n_pp);
                    if coupling.norm() == 0.0 {
                        continue;
                    }
                    let harmonic = (n_pp * n_pp + n_pp) as usize;
                    terms.push(CouplingTerm {
                        row,
                        col,
                        n_pp,
                        harmonic: (harmonic as i64 + mu as i64) as usize,
                        coupling,
                    });
                }
            }
        }
        Self { n_local, n_global, terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Block for a single translation vector.
    pub fn block(&self, k: f64, point: [f64; 3]) -> DMatrix<Complex64> {
        let top = self.n_local + self.n_global;
        let sph = SphericalCoord::from_cartesian(point);
        let radial = spherical_bessel_row(top, k * sph.r);
        let angular = sph_harm_row(top, sph.theta, sph.phi);
        let mut block = DMatrix::zeros(coeff_count(self.n_local), coeff_count(self.n_global));
        for t in &self.terms {
            let j = radial[t.n_pp as usize];
            if j == 0.0 {
                continue;
            }
            block[(t.row, t.col)] += t.coupling * angular[t.harmonic] * j;
        }
        block
    }
}

/// Translation operator for a single frequency.
#[derive(Debug, Clone)]
pub struct TranslationMatrix {
    pub entries: DMatrix<Complex64>,
    pub k: Wavenumber,
    pub points: Vec<[f64; 3]>,
    pub n_local: u32,
    pub n_global: u32,
    /// Set when two sampling points coincide. Allowed, but it costs rank.
    pub has_duplicate_points: bool,
}

impl TranslationMatrix {
    pub fn q(&self) -> usize {
        self.points.len()
    }

    pub fn condition_number(&self) -> f64 {
        matrix_condition_number(&self.entries)
    }
}

/// Block mapping global ACN coefficients to the local ACN coefficients about `point`.
pub fn translation_block(k: Wavenumber, point: [f64; 3], n_local: u32, n_global: u32) -> DMatrix<Complex64> {
    CouplingTable::new(n_local, n_global).block(k.k, point)
}

pub fn build_translation_matrix(k: Wavenumber, points: &[[f64; 3]], n_local: u32, n_global: u32) -> Result<TranslationMatrix> {
    let table = CouplingTable::new(n_local, n_global);
    build_with_table(&table, k, points)
}

/// Stacks the per-point blocks of `table` in sampling-point order.
pub fn build_with_table(table: &CouplingTable, k: Wavenumber, points: &[[f64; 3]]) -> Result<TranslationMatrix> {
    if points.is_empty() {
        return Err(Error::Config("translation matrix needs at least one sampling point".into()));
    }
    let rows = coeff_count(table.n_local);
    let cols = coeff_count(table.n_global);
    let mut entries = DMatrix::zeros(points.len() * rows, cols);
    for (q, p) in points.iter().enumerate() {
        let block = table.block(k.k, *p);
        entries.view_mut((q * rows, 0), (rows, cols)).copy_from(&block);
    }
    let has_duplicate_points = points
        .iter()
        .enumerate()
        .any(|(i, a)| points[i + 1..].iter().any(|b| a == b));
    Ok(TranslationMatrix {
        entries,
        k,
        points: points.to_vec(),
        n_local: table.n_local,
        n_global: table.n_global,
        has_duplicate_points,
    })
}

/// One translation matrix per frequency of `freqs`, sharing a coupling table.
pub fn build_translation_bank(freqs: &[f64], points: &[[f64; 3]], n_local: u32, n_global: u32) -> Result<Vec<TranslationMatrix>> {
    let table = CouplingTable::new(n_local, n_global);
    freqs
        .iter()
        .map(|&f| build_with_table(&table, Wavenumber::from_frequency(f)?, points))
        .collect()
}

fn check_bank(bank: &[TranslationMatrix], freqs: &[f64]) -> Result<()> {
    if bank.len() != freqs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} translation matrices for {} frequency bins",
            bank.len(),
            freqs.len()
        )));
    }
    for (t, &f) in bank.iter().zip(freqs) {
        if (t.k.f - f).abs() > 1e-9 * f.abs().max(1.0) {
            return Err(Error::ShapeMismatch(format!(
                "translation matrix built for {} Hz applied to {} Hz",
                t.k.f, f
            )));
        }
    }
    let first = &bank[0];
    if bank
        .iter()
        .any(|t| t.n_local != first.n_local || t.n_global != first.n_global || t.points != first.points)
    {
        return Err(Error::ShapeMismatch("translation matrices disagree on geometry or orders".into()));
    }
    Ok(())
}

/// `b_local = T b_global` per frequency, split into one set per sampling point.
pub fn forward_translate(bank: &[TranslationMatrix], b_global: &ShCoeffSet) -> Result<Vec<ShCoeffSet>> {
    check_bank(bank, &b_global.freqs)?;
    let first = &bank[0];
    if first.n_global != b_global.n_max {
        return Err(Error::ShapeMismatch(format!(
            "translation expects global order {}, coefficients have order {}",
            first.n_global, b_global.n_max
        )));
    }
    let rows = coeff_count(first.n_local);
    let mut locals: Vec<ShCoeffSet> = first
        .points
        .iter()
        .map(|p| ShCoeffSet::zeros(*p, first.n_local, b_global.freqs.clone()))
        .collect();
    for (kb, t) in bank.iter().enumerate() {
        let b = DVector::from_column_slice(b_global.row(kb));
        let stacked = &t.entries * b;
        for (q, local) in locals.iter_mut().enumerate() {
            local.row_mut(kb).copy_from_slice(&stacked.as_slice()[q * rows..(q + 1) * rows]);
        }
    }
    Ok(locals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeMode {
    /// `lambda` is used as given.
    Fixed,
    /// Effective weight is `lambda × σ_max` of each frequency's matrix.
    #[default]
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub mode: RidgeMode,
}

/// Relative weight used by default and when an unregularised solve turns
/// out to be rank deficient.
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-3;

/// Condition numbers above this make an unregularised solve rank deficient.
pub const RANK_DEFICIENT_COND: f64 = 1e12;

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_RELATIVE_LAMBDA,
            mode: RidgeMode::Relative,
        }
    }
}

impl RidgeConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self { lambda, mode: RidgeMode::Fixed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqDiagnostics {
    pub freq_hz: f64,
    pub cond: f64,
    pub residual: f64,
    /// Effective ridge weight applied.
    pub lambda: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LsmSolution {
    pub coeffs: ShCoeffSet,
    pub diagnostics: Vec<FreqDiagnostics>,
}

/// Minimises `‖T b − b''‖² + λ‖b‖²` independently per frequency through a
/// complex SVD of `T`.
pub fn lsm_solve(bank: &[TranslationMatrix], locals: &[ShCoeffSet], cfg: RidgeConfig) -> Result<LsmSolution> {
    cfg.validate()?;
    let freqs = locals
        .first()
        .ok_or_else(|| Error::Config("no local coefficient sets".into()))?
        .freqs
        .clone();
    check_bank(bank, &freqs)?;
    let first = &bank[0];
    if locals.len() != first.q() {
        return Err(Error::ShapeMismatch(format!(
            "{} local sets for {} sampling points",
            locals.len(),
            first.q()
        )));
    }
    for l in locals {
        if l.n_max != first.n_local || l.freqs != freqs {
            return Err(Error::ShapeMismatch("local sets disagree with the translation matrix".into()));
        }
    }
    let rows = coeff_count(first.n_local);
    let mut out = ShCoeffSet::zeros([0.0; 3], first.n_global, freqs.clone());
    let mut diagnostics = Vec::with_capacity(freqs.len());

    for (kb, t) in bank.iter().enumerate() {
        let mut y = DVector::zeros(t.entries.nrows());
        for (q, l) in locals.iter().enumerate() {
            y.rows_mut(q * rows, rows).copy_from_slice(l.row(kb));
        }
        let svd = t.entries.clone().svd(true, true);
        let sigma = &svd.singular_values;
        let s_max = sigma.iter().cloned().fold(0.0, f64::max);
        let s_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if s_max == 0.0 { f64::INFINITY } else { s_max / s_min };

        let mut lambda = match cfg.mode {
            RidgeMode::Fixed => cfg.lambda,
            RidgeMode::Relative => cfg.lambda * s_max,
        };
        let mut warning = None;
        if lambda == 0.0 && (t.entries.nrows() < t.entries.ncols() || !(cond < RANK_DEFICIENT_COND)) {
            lambda = DEFAULT_RELATIVE_LAMBDA * s_max;
            warning = Some(format!(
                "rank-deficient unregularised solve (cond {cond:.3e}); lambda raised to {lambda:.3e}"
            ));
        }

        let u = svd.u.as_ref().expect("svd computed with u");
        let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
        let mut proj = u.ad_mul(&y);
        for (i, p) in proj.iter_mut().enumerate() {
            let s = sigma[i];
            let gain = if s == 0.0 { 0.0 } else { s / (s * s + lambda) };
            *p *= gain;
        }
        let x = v_t.ad_mul(&proj);
        let residual = (&t.entries * &x - &y).norm();
        out.row_mut(kb).copy_from_slice(x.as_slice());
        diagnostics.push(FreqDiagnostics {
            freq_hz: t.k.f,
            cond,
            residual,
            lambda,
            warning,
        });
    }
    Ok(LsmSolution { coeffs: out, diagnostics })
}

/// Ratio of the extreme singular values; `+∞` for a zero or singular matrix.
pub fn matrix_condition_number(m: &DMatrix<Complex64>) -> f64 {
    if m.iter().all(|z| z.norm() == 0.0) {
        return f64::INFINITY;
    }
    let sigma = m.clone().singular_values();
    let s_max = sigma.iter().cloned().fold(0.0, f64::max);
    let s_min = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if s_min == 0.0 {
        f64::INFINITY
    } else {
        s_max / s_min
    }
}

pub fn condition_number(bank: &[TranslationMatrix], freq_index: usize) -> Result<f64> {
    bank.get(freq_index)
        .map(TranslationMatrix::condition_number)
        .ok_or(Error::IndexOutOfRange {
            index: freq_index,
            len: bank.len(),
        })
}

/// CSV with columns `freq_hz,cond,residual,lambda`.
pub fn write_diagnostics_csv<W: Write>(mut w: W, diagnostics: &[FreqDiagnostics]) -> Result<()> {
    writeln!(w, "freq_hz,cond,residual,lambda")?;
    for d in diagnostics {
        writeln!(w, "{},{:e},{:e},{:e}", d.freq_hz, d.cond, d.residual, d.lambda)?;
    }
    Ok(())
}
