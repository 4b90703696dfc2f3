//! Growth exponents of fields on disks, the wavelength-scale growth field
//! `β_p(λ)`, its average `A(λ)`, L^q variants and the two-sided nodal length
//! ratio table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{EigenPair, Spectrum};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::nodal::{extract_nodal_set, nodal_length};
use crate::surface::{lq_norm_on_region, sup_on_region, ConformalMetric, MetricDisk, Region};

/// β values in `[-FLOOR, 0)` are interpolation noise and clamp to zero.
pub const FLOOR: f64 = 1e-9;

/// How concentric balls are realized.
#[derive(Clone, Copy, Debug)]
pub enum Balls<'a> {
    /// Euclidean disks in the field's own coordinates.
    Euclidean,
    /// Geodesic balls of a conformal metric on the torus.
    Metric(&'a ConformalMetric),
}

fn clamp_floor(beta: f64) -> f64 {
    if (-FLOOR..0.0).contains(&beta) {
        0.0
    } else {
        beta
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Evaluates `norm` on the ball of radius `r` and on its `alpha` multiple.
fn nested<F>(balls: Balls, center: (f64, f64), r: f64, alpha: f64, norm: F) -> Result<(f64, f64)>
where
    F: Fn(&Region) -> Result<f64>,
{
    check_alpha(alpha)?;
    if !(r > 0.0) {
        return Err(Error::validation("disk radius must be positive"));
    }
    match balls {
        Balls::Euclidean => Ok((
            norm(&Region::disk(center, r))?,
            norm(&Region::disk(center, alpha * r))?,
        )),
        // a constant factor makes metric balls exact Euclidean disks
        Balls::Metric(g) if g.is_constant() => {
            let e = r / g.q_minus.sqrt();
            Ok((
                norm(&Region::disk(center, e))?,
                norm(&Region::disk(center, alpha * e))?,
            ))
        }
        Balls::Metric(g) => {
            let outer = MetricDisk::new(g, center, r)?;
            let inner = outer.scaled(alpha);
            Ok((norm(&Region::Metric(&outer))?, norm(&Region::Metric(&inner))?))
        }
    }
}

fn log_ratio(outer: f64, inner: f64) -> Result<f64> {
    if inner == 0.0 {
        return Err(Error::InfiniteGrowth);
    }
    Ok(clamp_floor((outer / inner).ln()))
}

/// `β(f, B; α) = log(sup_B |f| / sup_{αB} |f|)`.
pub fn growth_exponent(field: &impl ScalarField, center: (f64, f64), r: f64, alpha: f64, balls: Balls) -> Result<f64> {
    let (o, i) = nested(balls, center, r, alpha, |reg| sup_on_region(field, reg))?;
    log_ratio(o, i)
}

/// `log(‖f‖_{L^q(B)} / ‖f‖_{L^q(αB)})`; `qexp = ∞` is [`growth_exponent`].
pub fn lq_growth_exponent(
    field: &impl ScalarField,
    center: (f64, f64),
    r: f64,
    alpha: f64,
    qexp: f64,
    balls: Balls,
) -> Result<f64> {
    if qexp.is_infinite() {
        return growth_exponent(field, center, r, alpha, balls);
    }
    let (o, i) = nested(balls, center, r, alpha, |reg| lq_norm_on_region(field, reg, qexp))?;
    log_ratio(o, i)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub p: (f64, f64),
    pub beta: f64,
    pub outer_radius: f64,
    pub alpha: f64,
}

/// Wavelength-scale radius `k₀ λ^{-1/2}` after the resolution guard.
pub fn wavelength_radius(lambda: f64, metric: &ConformalMetric, k0: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::validation("growth field needs λ > 0 (constant eigenfunction excluded)"));
    }
    if !(k0 > 0.0) {
        return Err(Error::validation("k0 must be positive"));
    }
    let r = k0 / lambda.sqrt();
    let h = metric.h();
    if r < 10.0 * h {
        let need = (10.0 * lambda.sqrt() / k0).ceil() as usize;
        return Err(Error::validation(format!(
            "k0·λ^(-1/2) = {r:.3e} is below 10h = {:.3e}; use grid_n ≥ {need}",
            10.0 * h
        )));
    }
    Ok(r)
}

/// Centres `((i + ½)/m, (j + ½)/m)`, row-major.
pub fn sample_centers(m: usize) -> Vec<(f64, f64)> {
    (0..m * m)
        .map(|k| (((k % m) as f64 + 0.5) / m as f64, ((k / m) as f64 + 0.5) / m as f64))
        .collect()
}

fn field_over_centers(
    m: usize,
    radius: f64,
    alpha: f64,
    beta: impl Fn((f64, f64)) -> Result<f64> + Sync,
) -> Result<Vec<GrowthSample>> {
    if m < 2 {
        return Err(Error::validation("sample grid needs m ≥ 2"));
    }
    sample_centers(m)
        .into_par_iter()
        .map(|p| {
            Ok(GrowthSample {
                p,
                beta: beta(p)?,
                outer_radius: radius,
                alpha,
            })
        })
        .collect()
}

/// `β_p(λ)` on an `m × m` grid of centres with `r = k₀λ^{-1/2}`, `α = α₀`.
pub fn growth_field(pair: &EigenPair, metric: &ConformalMetric, k0: f64, m: usize) -> Result<Vec<GrowthSample>> {
    let r = wavelength_radius(pair.lambda, metric, k0)?;
    let alpha = metric.alpha0;
    field_over_centers(m, r, alpha, |p| {
        growth_exponent(&pair.field, p, r, alpha, Balls::Metric(metric))
    })
}

/// L^q version of [`growth_field`].
pub fn lq_growth_field(
    pair: &EigenPair,
    metric: &ConformalMetric,
    k0: f64,
    m: usize,
    qexp: f64,
) -> Result<Vec<GrowthSample>> {
    let r = wavelength_radius(pair.lambda, metric, k0)?;
    let alpha = metric.alpha0;
    field_over_centers(m, r, alpha, |p| {
        lq_growth_exponent(&pair.field, p, r, alpha, qexp, Balls::Metric(metric))
    })
}

/// `A = Σ β_p q(p) / Σ q(p)`: the volume-weighted mean over equal cells.
pub fn average_local_growth(samples: &[GrowthSample], metric: &ConformalMetric) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::validation("average needs at least 4 samples"));
    }
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), s| {
        let w = metric.q_at(s.p.0, s.p.1);
        (n + s.beta * w, d + w)
    });
    Ok(num / den)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthSummary {
    pub lambda: f64,
    #[serde(rename = "A")]
    pub a: f64,
    /// Averaged L^q growth keyed by exponent (as text so ∞ survives JSON).
    #[serde(rename = "Bq")]
    pub bq: BTreeMap<String, f64>,
    pub sample_count: usize,
    pub k0: f64,
    pub max_beta: f64,
}

pub fn summarize(
    pair: &EigenPair,
    metric: &ConformalMetric,
    k0: f64,
    m: usize,
    qexps: &[f64],
) -> Result<(GrowthSummary, Vec<GrowthSample>)> {
    let samples = growth_field(pair, metric, k0, m)?;
    let a = average_local_growth(&samples, metric)?;
    let mut bq = BTreeMap::new();
    for &q in qexps {
        let s = lq_growth_field(pair, metric, k0, m, q)?;
        bq.insert(format!("{q}"), average_local_growth(&s, metric)?);
    }
    let max_beta = samples.iter().map(|s| s.beta).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        GrowthSummary {
            lambda: pair.lambda,
            a,
            bq,
            sample_count: samples.len(),
            k0,
            max_beta,
        },
        samples,
    ))
}

pub fn growth_csv(samples: &[GrowthSample]) -> String {
    let mut s = String::from("x,y,beta\n");
    for g in samples {
        let _ = writeln!(s, "{},{},{}", g.p.0, g.p.1, g.beta);
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RatioRow {
    pub lambda: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub h1_metric: f64,
    pub lower_ratio: f64,
    pub upper_ratio: f64,
    /// `max_p β_p(λ)`.
    pub max_beta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
}

/// `(min, max)` of a sequence.
fn extent(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

impl RatioTable {
    pub fn prefix(&self, k: usize) -> RatioTable {
        RatioTable {
            rows: self.rows[..k.min(self.rows.len())].to_vec(),
        }
    }

    pub fn lower_extent(&self) -> (f64, f64) {
        extent(self.rows.iter().map(|r| r.lower_ratio))
    }

    pub fn upper_extent(&self) -> (f64, f64) {
        extent(self.rows.iter().map(|r| r.upper_ratio))
    }

    /// `max / min` of the lower and upper ratios.
    pub fn spreads(&self) -> (f64, f64) {
        let (a, b) = self.lower_extent();
        let (c, d) = self.upper_extent();
        (b / a, d / c)
    }

    /// `max_λ max_p β_p(λ) / √λ`.
    pub fn donnelly_fefferman_constant(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.max_beta / r.lambda.sqrt())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean `A` of the last quarter over the mean of the first quarter.
    pub fn quartile_trend(&self) -> f64 {
        let n = self.rows.len();
        let q = (n / 4).max(1);
        let mean = |rs: &[RatioRow]| rs.iter().map(|r| r.a).sum::<f64>() / rs.len() as f64;
        mean(&self.rows[n - q..]) / mean(&self.rows[..q])
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("lambda,A,H1_metric,lower_ratio,upper_ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.lambda, r.a, r.h1_metric, r.lower_ratio, r.upper_ratio);
        }
        s
    }
}

/// One row of the ratio table.
pub fn theorem1_row(pair: &EigenPair, metric: &ConformalMetric, k0: f64, m: usize) -> Result<RatioRow> {
    let samples = growth_field(pair, metric, k0, m)?;
    let a = average_local_growth(&samples, metric)?;
    let max_beta = samples.iter().map(|s| s.beta).fold(f64::NEG_INFINITY, f64::max);
    let set = extract_nodal_set(&pair.field);
    let (_, h1) = nodal_length(&set, Some(metric));
    let root = pair.lambda.sqrt();
    Ok(RatioRow {
        lambda: pair.lambda,
        a,
        h1_metric: h1,
        lower_ratio: h1 / (root * a),
        upper_ratio: h1 / (root * (a + 1.0)),
        max_beta,
    })
}

/// Ratio table over every nonconstant pair of the spectrum.
pub fn verify_theorem1(metric: &ConformalMetric, spectrum: &Spectrum, k0: f64, m: usize) -> Result<RatioTable> {
    let floor = constant_floor(spectrum);
    let rows = spectrum
        .nonconstant(floor)
        .map(|p| theorem1_row(p, metric, k0, m))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::validation("spectrum has no nonconstant eigenpairs"));
    }
    Ok(RatioTable { rows })
}

/// Eigenvalues at or below this are treated as the constant mode.
pub fn constant_floor(spectrum: &Spectrum) -> f64 {
    let top = spectrum.pairs.iter().map(|p| p.lambda).fold(0.0, f64::max);
    1e-6 * top.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridField;
    use std::f64::consts::PI;

    struct Power(i32);
    impl ScalarField for Power {
        fn eval(&self, x: f64, y: f64) -> f64 {
            x.hypot(y).powi(self.0)
        }
        fn spacing(&self) -> f64 {
            1e-2
        }
        fn is_periodic(&self) -> bool {
            false
        }
    }

    #[test]
    fn power_doubling() {
        for n in 0..=10 {
            let b = growth_exponent(&Power(n), (0.0, 0.0), 1.0, 0.5, Balls::Euclidean).unwrap();
            assert!((b - n as f64 * 2f64.ln()).abs() < 1e-9, "n={n} {b}");
        }
    }

    #[test]
    fn zero_inner_sup_is_infinite_growth() {
        let f = GridField::torus(64, |x, _| if x > 0.7 { 1.0 } else { 0.0 });
        let e = growth_exponent(&f, (0.3, 0.5), 0.2, 0.2, Balls::Euclidean).unwrap_err();
        assert!(matches!(e, Error::InfiniteGrowth));
    }

    #[test]
    fn constant_field_has_zero_growth() {
        let f = GridField::torus(64, |_, _| 3.0);
        let b = growth_exponent(&f, (0.5, 0.5), 0.1, 0.2, Balls::Euclidean).unwrap();
        assert_eq!(b, 0.0);
        let b2 = lq_growth_exponent(&f, (0.5, 0.5), 0.1, 0.5, 2.0, Balls::Euclidean).unwrap();
        assert!((b2 - 2f64.ln()).abs() < 1e-2);
    }

    #[test]
    fn sine_growth_matches_one_dimensional_ratio() {
        let f = GridField::torus(256, |x, _| (2.0 * PI * x).sin());
        let r = 1.0 / (2.0 * PI);
        let a = 0.2;
        let b = growth_exponent(&f, (0.0, 0.5), r, a, Balls::Euclidean).unwrap();
        let want = ((2.0 * PI * r).sin() / (2.0 * PI * a * r).sin()).ln();
        assert!((b - want).abs() < 2e-3, "{b} vs {want}");
    }
}
