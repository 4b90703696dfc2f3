//! Harmonic functions on the unit disk from their boundary traces: Fourier
//! extension, sign changes, the growth-versus-sign-changes bound and the
//! zero-count check for planar Schrödinger solutions.

use std::f64::consts::{E, PI};
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridField, Refined, ScalarField};
use crate::surface::{sup_on_region, Region};

/// Samples of `v` at `θ_k = 2πk/n` with their real Fourier coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleTrace {
    values: Vec<f64>,
    /// `v(θ) = Σ a_k cos kθ + b_k sin kθ` for `k ≤ n/2`.
    a: Vec<f64>,
    b: Vec<f64>,
}

impl CircleTrace {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 4 {
            return Err(Error::validation("trace needs at least 4 samples"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("trace has non-finite samples"));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let half = n / 2;
        let mut a = vec![0.0; half + 1];
        let mut b = vec![0.0; half + 1];
        let nf = n as f64;
        a[0] = buf[0].re / nf;
        for k in 1..=half {
            if 2 * k == n {
                a[k] = buf[k].re / nf;
            } else {
                a[k] = 2.0 * buf[k].re / nf;
                b[k] = -2.0 * buf[k].im / nf;
            }
        }
        Ok(Self { values, a, b })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values((0..n).map(|k| f(2.0 * PI * k as f64 / n as f64)).collect())
    }

    /// Trace of a planar field on the unit circle.
    pub fn of_field(field: &(impl ScalarField + ?Sized), n: usize) -> Result<Self> {
        Self::from_fn(n, |t| field.eval(t.cos(), t.sin()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.values.len() as f64
    }

    /// `(a_k, b_k)` for `k = 0..=n/2`.
    pub fn coefficients(&self) -> (&[f64], &[f64]) {
        (&self.a, &self.b)
    }

    /// Series value `Σ r^k (a_k cos kθ + b_k sin kθ)`; `r = 1` reconstructs the trace.
    pub fn extension(&self, r: f64, theta: f64) -> f64 {
        let mut acc = self.a[0];
        let mut rk = 1.0;
        for k in 1..self.a.len() {
            rk *= r;
            if rk == 0.0 {
                break;
            }
            let (s, c) = (k as f64 * theta).sin_cos();
            acc += rk * (self.a[k] * c + self.b[k] * s);
        }
        acc
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.extension(x.hypot(y), y.atan2(x))
    }

    /// Largest `|v|` over `|z| = r`, sampled at `m` angles.
    pub fn circle_sup(&self, r: f64, m: usize) -> f64 {
        (0..m)
            .map(|k| self.extension(r, 2.0 * PI * k as f64 / m as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("theta,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.theta(k), v);
        }
        s
    }

    /// Reads `theta,value` rows; angles must be uniform starting at 0.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let _theta = parts.next();
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::validation(format!("bad trace row {}", line_no + 1)))?;
            values.push(v);
        }
        Self::from_values(values)
    }
}

/// The harmonic extension as a field on the plane (inside the unit disk).
impl ScalarField for CircleTrace {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.at(x, y)
    }

    fn spacing(&self) -> f64 {
        2.0 / self.values.len() as f64
    }

    fn is_periodic(&self) -> bool {
        false
    }
}

/// Samples below this fraction of the peak count as zeros.
const ZERO_FRACTION: f64 = 1e-12;

/// Cyclic sign alternations of the trace.
pub fn sign_changes(trace: &CircleTrace) -> Result<usize> {
    let peak = trace.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::validation("trace vanishes identically"));
    }
    let cut = ZERO_FRACTION * peak;
    let n = trace.values.len();
    // start right after a nonzero sample so zero runs are measured whole
    let start = trace.values.iter().position(|v| v.abs() > cut).expect("nonzero peak");
    let mut signs = Vec::new();
    let mut run = 0usize;
    for k in 1..=n {
        let v = trace.values[(start + k) % n];
        if v.abs() <= cut {
            run += 1;
            if run > 2 {
                return Err(Error::validation("trace vanishes on an arc longer than two samples"));
            }
        } else {
            run = 0;
            signs.push(v > 0.0);
        }
    }
    Ok(signs
        .iter()
        .zip(signs.iter().cycle().skip(1))
        .filter(|(a, b)| a != b)
        .count())
}

/// Harmonic extension sampled on `[-ρ, ρ]²` and masked to `|z| ≤ ρ`.
pub fn harmonic_extend(trace: &CircleTrace, rho: f64, grid_n: usize) -> Result<GridField> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::validation("extension radius must lie in (0, 1)"));
    }
    let f = GridField::planar(grid_n, 2.0 * rho, |x, y| {
        if x.hypot(y) <= rho {
            trace.at(x, y)
        } else {
            0.0
        }
    });
    Ok(f.with_disk_mask(rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robertson {
    pub p: u32,
    /// Decimal digits of `c(p) = 2^{2p} + C(2p, p)`.
    pub value: String,
    pub bound: f64,
    pub within_bound: bool,
}

/// `c(p) = 4^p + (2p)!/(p!)²` exactly.
pub fn robertson_value(p: u32) -> BigUint {
    // C(2p, k+1) = C(2p, k) · (2p − k) / (k + 1), exact at every step
    let mut binom = BigUint::from(1u32);
    for k in 0..p {
        binom = binom * BigUint::from(2 * p - k) / BigUint::from(k + 1);
    }
    (BigUint::from(1u32) << (2 * p as usize)) + binom
}

pub fn robertson_constant(p: u32) -> Robertson {
    let c = robertson_value(p);
    let log_bound = 2f64.ln() + 2.0 * p as f64 * (2.0 * E).ln();
    let within_bound = match c.to_f64() {
        Some(v) if v.is_finite() => v.ln() <= log_bound,
        _ => (c.bits() as f64 - 1.0) * 2f64.ln() <= log_bound,
    };
    Robertson {
        p,
        value: c.to_string(),
        bound: log_bound.exp(),
        within_bound,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignsCheck {
    /// `sup_{½𝔻}|v| / sup_{r₀𝔻}|v|`.
    pub lhs_ratio: f64,
    pub n_v: usize,
    /// `12 · (8e / r₀)^{N_v}`.
    pub rhs_bound: f64,
    pub holds: bool,
}

/// Angles used for circle sups.
const CIRCLE_SAMPLES: usize = 4096;

pub fn growth_vs_signs_check(trace: &CircleTrace, r0: f64) -> Result<SignsCheck> {
    if !(r0 > 0.0 && r0 < 0.5) {
        return Err(Error::validation("r0 must lie in (0, 1/2)"));
    }
    let n_v = sign_changes(trace)?;
    let m = CIRCLE_SAMPLES.max(8 * trace.len());
    let outer = trace.circle_sup(0.5, m);
    let inner = trace.circle_sup(r0, m);
    if inner == 0.0 {
        return Err(Error::InfiniteGrowth);
    }
    let lhs_ratio = outer / inner;
    let rhs_bound = 12.0 * (8.0 * E / r0).powi(n_v as i32);
    Ok(SignsCheck {
        lhs_ratio,
        n_v,
        rhs_bound,
        holds: lhs_ratio <= rhs_bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroCountCheck {
    /// `log(sup_{ρ⁺𝔻}|F| / sup_{ρ⁻𝔻}|F|)`.
    pub lhs: f64,
    pub zero_count: usize,
    /// `lhs / (1 + zero_count)`.
    pub ratio: f64,
}

/// Samples used for the unit-circle trace.
const TRACE_SAMPLES: usize = 4096;

/// Growth between `ρ⁻𝔻` and `ρ⁺𝔻` against sign changes on the unit circle.
pub fn theorem_3_1_1_check(field: &(impl ScalarField + ?Sized), rho_plus: f64, rho_minus: f64) -> Result<ZeroCountCheck> {
    if !(0.0 < rho_minus && rho_minus < rho_plus && rho_plus < 0.5) {
        return Err(Error::validation("need 0 < rho_minus < rho_plus < 1/2"));
    }
    // the smaller disk is read at a scale it resolves
    let fine = Refined::new(field, field.spacing().min(rho_minus / 8.0));
    let outer = sup_on_region(&fine, &Region::disk((0.0, 0.0), rho_plus))?;
    let inner = sup_on_region(&fine, &Region::disk((0.0, 0.0), rho_minus))?;
    if inner == 0.0 {
        return Err(Error::InfiniteGrowth);
    }
    let lhs = (outer / inner).ln().max(0.0);
    let trace = CircleTrace::of_field(field, TRACE_SAMPLES)?;
    let zero_count = if trace.values().iter().all(|&v| v == 0.0) {
        0
    } else {
        sign_changes(&trace)?
    };
    Ok(ZeroCountCheck {
        lhs,
        zero_count,
        ratio: lhs / (1.0 + zero_count as f64),
    })
}

/// Default `ρ⁺ = 1/32` and `ρ⁻ = (ρ⁺/5)(q₋/q⁺)²`.
pub fn default_rhos(q_minus: f64, q_plus: f64) -> (f64, f64) {
    let rp = 1.0 / 32.0;
    (rp, rp / 5.0 * (q_minus / q_plus).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robertson_small_values() {
        assert_eq!(robertson_value(0), BigUint::from(2u32));
        assert_eq!(robertson_value(1), BigUint::from(6u32));
        assert_eq!(robertson_value(5), BigUint::from(1276u32));
        assert!(robertson_constant(200).within_bound);
    }

    #[test]
    fn cosine_sign_changes() {
        for n in 1..=10 {
            let t = CircleTrace::from_fn(1000, |th| (n as f64 * th).cos()).unwrap();
            assert_eq!(sign_changes(&t).unwrap(), 2 * n);
        }
        let one = CircleTrace::from_fn(64, |_| 1.0).unwrap();
        assert_eq!(sign_changes(&one).unwrap(), 0);
    }

    #[test]
    fn fourier_round_trip() {
        let t = CircleTrace::from_fn(64, |th| 0.3 + (3.0 * th).cos() - 2.0 * (5.0 * th).sin()).unwrap();
        for k in 0..64 {
            assert!((t.extension(1.0, t.theta(k)) - t.values()[k]).abs() < 1e-12);
        }
        assert!((t.extension(0.5, 0.0) - (0.3 + 0.125)).abs() < 1e-12);
    }
}
