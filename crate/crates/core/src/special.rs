//! Radial and angular basis functions plus angular-momentum coupling.
//!
//! Conventions used throughout the crate:
//!
//! * complex orthonormal spherical harmonics with the Condon–Shortley phase,
//!   `Y_n^{-m} = (-1)^m conj(Y_n^m)`;
//! * coefficients flattened in ACN order, `acn = n² + n + m`;
//! * spherical angles are `theta` = polar angle measured from +z (the
//!   "elevation" of the field model) and `phi` = azimuth from +x.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound used for every frequency to wavenumber conversion.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Point in spherical coordinates (`theta` polar from +z, `phi` azimuth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoord {
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        assert!(r >= 0.0, "radius must be nonnegative, got {r}");
        Self {
            r,
            theta: theta.clamp(0.0, PI),
            phi: phi.rem_euclid(2.0 * PI),
        }
    }

    /// Converts a Cartesian position. The origin maps to `(0, 0, 0)`.
    pub fn from_cartesian(p: [f64; 3]) -> Self {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r == 0.0 {
            return Self { r: 0.0, theta: 0.0, phi: 0.0 };
        }
        let theta = (p[2] / r).clamp(-1.0, 1.0).acos();
        let phi = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
        Self { r, theta, phi }
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [self.r * st * cp, self.r * st * sp, self.r * ct]
    }
}

/// Spherical-harmonic order `n` and degree `m`, `|m| <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarmonicIndex {
    pub n: u32,
    pub m: i32,
}

impl HarmonicIndex {
    pub fn new(n: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > n {
            return Err(Error::InvalidIndex { n: n as usize, m: m as i64 });
        }
        Ok(Self { n, m })
    }

    /// Inverse of [`acn_index`].
    pub fn from_acn(acn: usize) -> Self {
        let n = (acn as f64).sqrt() as u32;
        // guard against sqrt rounding at perfect squares
        let n = if ((n + 1) * (n + 1)) as usize <= acn { n + 1 } else { n };
        let m = acn as i64 - (n as i64 * n as i64 + n as i64);
        Self { n, m: m as i32 }
    }
}

/// Number of coefficients of an order-`n_max` expansion, `(n_max + 1)²`.
pub fn coeff_count(n_max: u32) -> usize {
    ((n_max + 1) * (n_max + 1)) as usize
}

/// Acoustic wavenumber with the frequency it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavenumber {
    pub k: f64,
    pub f: f64,
    pub c: f64,
}

impl Wavenumber {
    pub fn from_frequency(f: f64) -> Result<Self> {
        Self::with_speed(f, SPEED_OF_SOUND)
    }

    pub fn with_speed(f: f64, c: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!(
                "wavenumber needs positive finite frequency and speed, got f={f}, c={c}"
            )));
        }
        Ok(Self { k: 2.0 * PI * f / c, f, c })
    }
}

/// ACN flattening index `n² + n + m`.
pub fn acn_index(idx: HarmonicIndex) -> Result<usize> {
    if idx.m.unsigned_abs() > idx.n {
        return Err(Error::InvalidIndex { n: idx.n as usize, m: idx.m as i64 });
    }
    let n = idx.n as i64;
    Ok((n * n + n + idx.m as i64) as usize)
}

/// Spherical Bessel function of the first kind `j_n(x)`.
pub fn spherical_bessel_j(n: u32, x: f64) -> f64 {
    spherical_bessel_row(n, x)[n as usize]
}

/// `j_0(x) ..= j_{n_max}(x)`.
///
/// Small arguments use the power series, arguments above the top order use
/// upward recurrence from the closed forms, and everything in between uses
/// Miller's downward recurrence normalised against the closed form of `j_0`
/// or `j_1`, whichever is further from a zero.
pub fn spherical_bessel_row(n_max: u32, x: f64) -> Vec<f64> {
    let len = n_max as usize + 1;
    if x < 0.0 {
        let mut row = spherical_bessel_row(n_max, -x);
        for (n, v) in row.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
        return row;
    }
    if x == 0.0 {
        let mut row = vec![0.0; len];
        row[0] = 1.0;
        return row;
    }
    if x <= 1.0 {
        return (0..len).map(|n| bessel_series(n, x)).collect();
    }

    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    if x >= n_max as f64 {
        let mut row = Vec::with_capacity(len);
        row.push(j0);
        if len > 1 {
            row.push(j1);
        }
        for n in 1..len.saturating_sub(1) {
            let next = (2 * n + 1) as f64 / x * row[n] - row[n - 1];
            row.push(next);
        }
        return row;
    }

    let start = len + x.ceil() as usize + 25;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-300;
    for n in (0..start).rev() {
        vals[n] = (2 * n + 3) as f64 / x * vals[n + 1] - vals[n + 2];
        if vals[n].abs() > 1e250 {
            for v in vals[n..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let scale = if j0.abs() >= j1.abs() { j0 / vals[0] } else { j1 / vals[1] };
    vals.truncate(len);
    vals.iter_mut().for_each(|v| *v *= scale);
    vals
}

fn bessel_series(n: usize, x: f64) -> f64 {
    // x^n / (2n+1)!!
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= x / (2 * k + 1) as f64;
    }
    let half_x2 = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        term *= half_x2 / (k as f64 * (2 * n + 2 * k + 1) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Orthonormalised associated Legendre values `P̄_n^m(cos θ)` for all
/// `0 <= m <= n <= n_max`, stored at `acn(n, m)` (positive `m` slots only;
/// negative slots are left zero). Includes the Condon–Shortley phase and the
/// `sqrt((2n+1)/(4π) (n-m)!/(n+m)!)` factor.
fn normalized_legendre(n_max: u32, theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let len = coeff_count(n_max);
    let mut out = vec![0.0; len];
    let at = |n: u32, m: u32| (n * n + n + m) as usize;

    let mut pmm = (0.25 / PI).sqrt();
    for m in 0..=n_max {
        if m > 0 {
            pmm *= -((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
        }
        out[at(m, m)] = pmm;
        if m == n_max {
            break;
        }
        let mut p_prev = pmm;
        let mut p = ((2 * m + 3) as f64).sqrt() * c * pmm;
        out[at(m + 1, m)] = p;
        for n in (m + 2)..=n_max {
            let (nf, mf) = (n as f64, m as f64);
            let a = ((4.0 * nf * nf - 1.0) / (nf * nf - mf * mf)).sqrt();
            let b = (((nf - 1.0) * (nf - 1.0) - mf * mf) / (4.0 * (nf - 1.0) * (nf - 1.0) - 1.0)).sqrt();
            let next = a * (c * p - b * p_prev);
            p_prev = p;
            p = next;
            out[at(n, m)] = p;
        }
    }
    out
}

/// Complex orthonormal spherical harmonic `Y_n^m(θ, φ)`.
pub fn sph_harm(idx: HarmonicIndex, theta: f64, phi: f64) -> Result<Complex64> {
    let acn = acn_index(idx)?;
    let row = sph_harm_row(idx.n, theta, phi);
    Ok(row[acn])
}

/// All `Y_n^m(θ, φ)` with `n <= n_max`, ACN ordered.
pub fn sph_harm_row(n_max: u32, theta: f64, phi: f64) -> Vec<Complex64> {
    let legendre = normalized_legendre(n_max, theta);
    let mut out = vec![Complex64::new(0.0, 0.0); legendre.len()];
    for n in 0..=n_max {
        let base = (n * n + n) as usize;
        out[base] = Complex64::new(legendre[base], 0.0);
        for m in 1..=n {
            let p = legendre[base + m as usize];
            let y = Complex64::from_polar(p, m as f64 * phi);
            out[base + m as usize] = y;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            out[base - m as usize] = y.conj() * sign;
        }
    }
    out
}

const LOG_FACTORIAL_LEN: usize = 512;

fn log_factorial(k: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LOG_FACTORIAL_LEN);
        let mut acc = 0.0f64;
        t.push(0.0);
        for i in 1..LOG_FACTORIAL_LEN {
            acc += (i as f64).ln();
            t.push(acc);
        }
        t
    });
    table[k as usize]
}

/// Wigner 3-j symbol for integer arguments, via the Racah sum.
///
/// Returns exactly `0.0` whenever a selection rule fails.
pub fn wigner3j(j1: u32, j2: u32, j3: u32, m1: i32, m2: i32, m3: i32) -> f64 {
    if m1.unsigned_abs() > j1 || m2.unsigned_abs() > j2 || m3.unsigned_abs() > j3 {
        return 0.0;
    }
    if m1 + m2 + m3 != 0 {
        return 0.0;
    }
    let (a, b, c) = (j1 as i64, j2 as i64, j3 as i64);
    if c < (a - b).abs() || c > a + b {
        return 0.0;
    }
    if m1 == 0 && m2 == 0 && m3 == 0 && (a + b + c) % 2 == 1 {
        return 0.0;
    }
    let (m1, m2, m3) = (m1 as i64, m2 as i64, m3 as i64);
    let lf = |v: i64| log_factorial(v as u32);

    let log_prefactor = 0.5
        * (lf(a + b - c) + lf(a - b + c) + lf(-a + b + c) - lf(a + b + c + 1)
            + lf(a + m1)
            + lf(a - m1)
            + lf(b + m2)
            + lf(b - m2)
            + lf(c + m3)
            + lf(c - m3));

    let t_min = 0.max(b - c - m1).max(a - c + m2);
    let t_max = (a + b - c).min(a - m1).min(b + m2);
    let mut sum = 0.0;
    for t in t_min..=t_max {
        let log_den = lf(t)
            + lf(c - b + t + m1)
            + lf(c - a + t - m2)
            + lf(a + b - c - t)
            + lf(a - t - m1)
            + lf(b - t + m2);
        let term = (log_prefactor - log_den).exp();
        if t % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if (a - b - m3).rem_euclid(2) == 1 {
        -sum
    } else {
        sum
    }
}

/// `i^p` for any integer power.
pub fn i_pow(p: i64) -> Complex64 {
    match p.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Regular-to-regular addition-theorem coupling coefficient.
///
/// With `r = d + r'`,
///
/// ```text
/// j_n(kr) Y_n^m(r̂) = Σ_{n'm'} j_{n'}(kr') Y_{n'}^{m'}(r̂')
///                      Σ_{n''} j_{n''}(kd) Y_{n''}^{m-m'}(d̂) C_{n'm'}^{n m n''}
/// ```
///
/// and `C = 4π i^{n'+n''-n} (-1)^m sqrt((2n+1)(2n'+1)(2n''+1)/(4π))
///          (n n' n''; 0 0 0) (n n' n''; -m m' m-m')`.
pub fn translation_coupling(n: u32, m: i32, n_p: u32, m_p: i32, n_pp: u32) -> Complex64 {
    let w0 = wigner3j(n, n_p, n_pp, 0, 0, 0);
    if w0 == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let wm = wigner3j(n, n_p, n_pp, -m, m_p, m - m_p);
    if wm == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let degeneracy = ((2 * n + 1) * (2 * n_p + 1) * (2 * n_pp + 1)) as f64;
    let sign = if m.rem_euclid(2) == 1 { -1.0 } else { 1.0 };
    let magnitude = 4.0 * PI * sign * (degeneracy / (4.0 * PI)).sqrt() * w0 * wm;
    i_pow(n_p as i64 + n_pp as i64 - n as i64) * magnitude
}
