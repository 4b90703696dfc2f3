//! Localization of an eigenfunction to a planar solution of `ΔF + qF = 0` on
//! `3𝔻`, disk and annulus configurations, rapid-disk classification and the
//! effective growth exponent `β*`.

use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::EigenPair;
use crate::error::{Error, Result};
use crate::field::{GridField, ScalarField};
use crate::growth::{growth_exponent, Balls};
use crate::surface::{integrate_region, sup_on_region, ConformalMetric, Region};

/// Radius of the disk containing all probe configurations.
pub const CONFIG_RADIUS: f64 = 1.0 / 60.0;

/// Default potential bound.
pub const EPS0: f64 = 0.1;

type PlanarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Source {
    /// `φ(scale · z + p)` read from a torus grid.
    Pullback { field: GridField, p: (f64, f64), scale: f64 },
    Analytic(PlanarFn),
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Pullback { p, scale, .. } => write!(f, "Pullback {{ p: {p:?}, scale: {scale} }}"),
            Source::Analytic(_) => write!(f, "Analytic"),
        }
    }
}

/// A sup-normalized planar field on `3𝔻` together with its potential.
#[derive(Clone, Debug)]
pub struct PlanarField {
    source: Source,
    /// Multiplier applied to the source so that `sup_{3𝔻} |F| = 1`.
    norm: f64,
    spacing: f64,
    /// Potential samples over `[-3, 3]²`, masked to `|z| ≤ 3`.
    pub potential: GridField,
    pub potential_sup: f64,
    pub eps0: f64,
    /// Largest `|Δ_h F + qF|` over nodes inside `|z| ≤ 2.9`.
    pub residual: f64,
}

impl ScalarField for PlanarField {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.norm * self.raw(x, y)
    }

    fn spacing(&self) -> f64 {
        self.spacing
    }

    fn is_periodic(&self) -> bool {
        false
    }
}

/// Number of potential samples per side.
const POTENTIAL_N: usize = 128;

impl PlanarField {
    fn raw(&self, x: f64, y: f64) -> f64 {
        match &self.source {
            Source::Pullback { field, p, scale } => field.sample(p.0 + scale * x, p.1 + scale * y),
            Source::Analytic(f) => f(x, y),
        }
    }

    /// A closed-form field with constant potential `q`; `spacing` sets the
    /// sampling scale used by sups and quadrature.
    pub fn analytic(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        spacing: f64,
        q: f64,
        eps0: f64,
    ) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::validation("spacing must be positive"));
        }
        if q.abs() >= eps0 {
            return Err(Error::validation(format!("potential {q} is not below eps0 = {eps0}")));
        }
        let potential = GridField::planar(POTENTIAL_N, 6.0, |_, _| q).with_disk_mask(3.0);
        let mut out = Self {
            source: Source::Analytic(Arc::new(f)),
            norm: 1.0,
            spacing,
            potential,
            potential_sup: q.abs(),
            eps0,
            residual: 0.0,
        };
        out.normalize()?;
        out.residual = out.measure_residual(|_, _| q);
        Ok(out)
    }

    fn normalize(&mut self) -> Result<()> {
        self.norm = 1.0;
        let sup = sup_on_region(self, &Region::disk((0.0, 0.0), 3.0))?;
        if sup == 0.0 {
            return Err(Error::validation("field vanishes on 3𝔻 and cannot be sup-normalized"));
        }
        self.norm = 1.0 / sup;
        Ok(())
    }

    /// Five-point residual at spacing `self.spacing` over a lattice of
    /// points inside `|z| ≤ 2.9`.
    fn measure_residual(&self, q: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
        let h = self.spacing;
        let (anchor, step) = match &self.source {
            // stencils land on torus nodes
            Source::Pullback { field, p, scale } => {
                let th = field.h();
                let ax = ((p.0 / th).round() * th - p.0) / scale;
                let ay = ((p.1 / th).round() * th - p.1) / scale;
                ((ax, ay), h)
            }
            Source::Analytic(_) => ((0.0, 0.0), h),
        };
        let k = (2.9 / step).floor() as i64;
        let stride = ((2 * k + 1) / 96).max(1) as usize;
        let idx: Vec<i64> = (-k..=k).step_by(stride).collect();
        idx.par_iter()
            .map(|&j| {
                let mut worst: f64 = 0.0;
                for &i in &idx {
                    let x = anchor.0 + i as f64 * step;
                    let y = anchor.1 + j as f64 * step;
                    if x * x + y * y > 2.9 * 2.9 {
                        continue;
                    }
                    let c = self.eval(x, y);
                    let lap = (self.eval(x + h, y) + self.eval(x - h, y) + self.eval(x, y + h) + self.eval(x, y - h)
                        - 4.0 * c)
                        / (h * h);
                    worst = worst.max((lap + q(x, y) * c).abs());
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Torus point mapped to `z = 0`, for pulled-back fields.
    pub fn center(&self) -> Option<(f64, f64)> {
        match &self.source {
            Source::Pullback { p, .. } => Some(*p),
            Source::Analytic(_) => None,
        }
    }

    /// Torus length of one unit of `z`, for pulled-back fields.
    pub fn scale(&self) -> Option<f64> {
        match &self.source {
            Source::Pullback { scale, .. } => Some(*scale),
            Source::Analytic(_) => None,
        }
    }
}

/// `τ = 2 q⁺ α₀`.
pub fn tau(metric: &ConformalMetric) -> f64 {
    2.0 * metric.q_plus * metric.alpha0
}

/// `F(z) = φ(τ k₀ λ^{-1/2} z + p)` with potential `(k₀τ)² q`, sup-normalized on `3𝔻`.
pub fn localize(pair: &EigenPair, metric: &ConformalMetric, p: (f64, f64), k0: f64, eps0: f64) -> Result<PlanarField> {
    if !(pair.lambda > 0.0) {
        return Err(Error::validation("localization needs λ > 0"));
    }
    if !(k0 > 0.0) {
        return Err(Error::validation("k0 must be positive"));
    }
    if pair.field.n() != metric.grid_n() {
        return Err(Error::validation("eigenfunction and metric grids differ"));
    }
    let t = tau(metric);
    let scale = t * k0 / pair.lambda.sqrt();
    let h = pair.field.h();
    if 3.0 * scale < 10.0 * h {
        return Err(Error::validation(format!(
            "localization disk radius {:.3e} is below 10h = {:.3e}; increase grid_n or k0",
            3.0 * scale,
            10.0 * h
        )));
    }
    let kt2 = (k0 * t).powi(2);
    let potential = GridField::planar(POTENTIAL_N, 6.0, |x, y| {
        kt2 * metric.q_at((p.0 + scale * x).rem_euclid(1.0), (p.1 + scale * y).rem_euclid(1.0))
    })
    .with_disk_mask(3.0);
    let potential_sup = potential
        .values()
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            let (x, y) = potential.node(k % POTENTIAL_N, k / POTENTIAL_N);
            x * x + y * y <= 9.0
        })
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max);
    if potential_sup >= eps0 {
        return Err(Error::validation(format!(
            "potential sup {potential_sup:.4} is not below eps0 = {eps0}; decrease k0"
        )));
    }
    let mut out = PlanarField {
        source: Source::Pullback {
            field: pair.field.clone(),
            p,
            scale,
        },
        norm: 1.0,
        spacing: h / scale,
        potential,
        potential_sup,
        eps0,
        residual: 0.0,
    };
    out.normalize()?;
    out.residual = out.measure_residual(|x, y| kt2 * metric.q_at((p.0 + scale * x).rem_euclid(1.0), (p.1 + scale * y).rem_euclid(1.0)));
    Ok(out)
}

/// `(β, β*)` with `β = log(sup_{5/2 𝔻}|F| / sup_{1/4 𝔻}|F|)` and `β* = max(β, 1)`.
pub fn beta_star(field: &impl ScalarField) -> Result<(f64, f64)> {
    let beta = growth_exponent(field, (0.0, 0.0), 2.5, 0.1, Balls::Euclidean)?;
    Ok((beta, beta.max(1.0)))
}

/// Radius interval `(inner, outer)`.
pub type Band = (f64, f64);

/// A disk `D(z_ν, δ)` and its three annuli.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskAnnuli {
    pub center: (f64, f64),
    pub delta: f64,
    pub a: f64,
}

impl DiskAnnuli {
    pub fn new(center: (f64, f64), delta: f64, a: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::validation("delta must be positive"));
        }
        if !(a > 0.0 && a < 0.25) {
            return Err(Error::validation(format!("a = {a} must lie in (0, 1/4)")));
        }
        Ok(Self { center, delta, a })
    }

    /// `A_ν = ((1−2a)δ, (1−a)δ)`.
    pub fn a_nu(&self) -> Band {
        ((1.0 - 2.0 * self.a) * self.delta, (1.0 - self.a) * self.delta)
    }

    /// `A′_ν = ((1−3a)δ, (1−4a/3)δ)`.
    pub fn a_prime(&self) -> Band {
        ((1.0 - 3.0 * self.a) * self.delta, (1.0 - 4.0 * self.a / 3.0) * self.delta)
    }

    /// `A″_ν = ((1−3a/2)δ, (1−a)δ)`.
    pub fn a_double_prime(&self) -> Band {
        ((1.0 - 1.5 * self.a) * self.delta, (1.0 - self.a) * self.delta)
    }

    pub fn region(&self, band: Band) -> Region<'static> {
        Region::annulus(self.center, band.0, band.1)
    }

    /// Quadrature spacing used for annulus integrals.
    pub fn quadrature_step(&self) -> f64 {
        self.a * self.delta / 4.0
    }
}

pub fn band_area(b: Band) -> f64 {
    std::f64::consts::PI * (b.1 * b.1 - b.0 * b.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RapidCheck {
    pub is_rapid: bool,
    pub int_a_prime: f64,
    pub int_a_double_prime: f64,
}

/// `M ∫_{A′} F² ≤ ∫_{A″} F²`.
pub fn classify_rapid(field: &impl ScalarField, annuli: &DiskAnnuli, m: f64) -> Result<RapidCheck> {
    if !(m >= 0.0) {
        return Err(Error::validation("rapid threshold M must be nonnegative"));
    }
    // fields are evaluated continuously, so the step is tied to the annulus width
    let s = annuli.quadrature_step();
    let sq = |x: f64, y: f64| {
        let v = field.eval(x, y);
        v * v
    };
    let int_a_prime = integrate_region(&annuli.region(annuli.a_prime()), s, sq)?;
    let int_a_double_prime = integrate_region(&annuli.region(annuli.a_double_prime()), s, sq)?;
    Ok(RapidCheck {
        is_rapid: m * int_a_prime <= int_a_double_prime,
        int_a_prime,
        int_a_double_prime,
    })
}

/// Eq. (4.1.2)-style constraints `δ < 1/60` and `δ β* < 1/2`.
pub fn check_delta(delta: f64, beta_star: f64) -> Result<()> {
    if !(delta > 0.0 && delta < CONFIG_RADIUS) {
        return Err(Error::validation(format!("delta = {delta} must lie in (0, 1/60)")));
    }
    if !(delta * beta_star < 0.5) {
        return Err(Error::validation(format!(
            "delta·β* = {:.4} must be below 1/2; decrease delta",
            delta * beta_star
        )));
    }
    Ok(())
}

/// Probe disks with pairwise separation `2γδ` and `γ = δ^{-1/2}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiskConfig {
    pub centers: Vec<(f64, f64)>,
    pub delta: f64,
    pub gamma: f64,
    pub beta_star: f64,
}

impl DiskConfig {
    /// Hexagonal lattice of pitch `2γδ` through the origin, kept inside `(1/60)𝔻`.
    pub fn hexagonal(delta: f64, beta_star: f64) -> Result<Self> {
        check_delta(delta, beta_star)?;
        let gamma = delta.powf(-0.5);
        let pitch = 2.0 * gamma * delta;
        let k = (CONFIG_RADIUS / pitch).ceil() as i64 + 1;
        let mut centers = Vec::new();
        for j in -k..=k {
            for i in -k..=k {
                let x = pitch * (i as f64 + 0.5 * j as f64);
                let y = pitch * (3f64.sqrt() / 2.0) * j as f64;
                if x.hypot(y) + delta <= CONFIG_RADIUS {
                    centers.push((x, y));
                }
            }
        }
        Ok(Self {
            centers,
            delta,
            gamma,
            beta_star,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta, self.beta_star)?;
        let sep = 2.0 * self.gamma * self.delta;
        for (k, &c) in self.centers.iter().enumerate() {
            if c.0.hypot(c.1) + self.delta > CONFIG_RADIUS * (1.0 + 1e-12) {
                return Err(Error::validation(format!("disk {k} leaves (1/60)𝔻")));
            }
            for &d in &self.centers[..k] {
                if (c.0 - d.0).hypot(c.1 - d.1) < sep * (1.0 - 1e-12) {
                    return Err(Error::validation("probe disks are not γ-separated"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub z: (f64, f64),
    pub delta: f64,
    #[serde(flatten)]
    pub check: RapidCheck,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RapidReport {
    pub probes: Vec<ProbeRow>,
    pub n_rapid: usize,
    pub beta: f64,
    pub beta_star: f64,
    /// `N_rapid / β*`.
    pub ratio: f64,
}

impl RapidReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("z_x,z_y,delta,int_Aprime,int_Adoubleprime,is_rapid\n");
        for p in &self.probes {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.z.0, p.z.1, p.delta, p.check.int_a_prime, p.check.int_a_double_prime, p.check.is_rapid
            );
        }
        s
    }
}

/// Classifies every disk of the hexagonal probe family.
pub fn count_rapid_disks(field: &impl ScalarField, delta: f64, m: f64, a: f64) -> Result<RapidReport> {
    let (beta, bs) = beta_star(field)?;
    let config = DiskConfig::hexagonal(delta, bs)?;
    let probes = config
        .centers
        .par_iter()
        .map(|&z| {
            let ann = DiskAnnuli::new(z, delta, a)?;
            Ok(ProbeRow {
                z,
                delta,
                check: classify_rapid(field, &ann, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n_rapid = probes.iter().filter(|p| p.check.is_rapid).count();
    Ok(RapidReport {
        probes,
        n_rapid,
        beta,
        beta_star: bs,
        ratio: n_rapid as f64 / bs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub grad_energy: f64,
    pub l2_mass: f64,
    /// `δ² ∫|∇f|² / ∫|f|²`; `None` when both integrals vanish.
    pub ratio: Option<f64>,
}

/// Gradient energy and mass of `f` on `A_ν` for `f` vanishing on the inner circle.
pub fn annulus_poincare_check(f: impl Fn(f64, f64) -> f64, annuli: &DiskAnnuli) -> Result<PoincareCheck> {
    let (r0, r1) = annuli.a_nu();
    let c = annuli.center;
    for k in 0..256 {
        let th = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
        let v = f(c.0 + r0 * th.cos(), c.1 + r0 * th.sin());
        if v.abs() > 1e-8 {
            return Err(Error::validation(format!(
                "test field does not vanish on the inner circle (|f| = {v:.3e})"
            )));
        }
    }
    let s = (r1 - r0) / 64.0;
    let e = 1e-4 * (r1 - r0);
    let region = Region::annulus(c, r0, r1);
    let grad_energy = integrate_region(&region, s, |x, y| {
        let gx = (f(x + e, y) - f(x - e, y)) / (2.0 * e);
        let gy = (f(x, y + e) - f(x, y - e)) / (2.0 * e);
        gx * gx + gy * gy
    })?;
    let l2_mass = integrate_region(&region, s, |x, y| f(x, y).powi(2))?;
    let ratio = if l2_mass == 0.0 {
        None
    } else {
        Some(annuli.delta * annuli.delta * grad_energy / l2_mass)
    };
    Ok(PoincareCheck {
        grad_energy,
        l2_mass,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annulus_radii() {
        let d = DiskAnnuli::new((0.0, 0.0), 1.0, 0.1).unwrap();
        assert_eq!(d.a_nu(), (0.8, 0.9));
        let (p0, p1) = d.a_prime();
        assert!((p0 - 0.7).abs() < 1e-15 && (p1 - (1.0 - 0.4 / 3.0)).abs() < 1e-15);
        assert_eq!(d.a_double_prime(), (0.85, 0.9));
    }

    #[test]
    fn delta_constraints() {
        assert!(check_delta(1.0 / 120.0, 1.0).is_ok());
        assert!(check_delta(1.0 / 60.0, 1.0).is_err());
        assert!(check_delta(0.01, 60.0).is_err());
    }

    #[test]
    fn hexagonal_family_is_separated() {
        for delta in [1e-4, 4e-5, 1e-3] {
            let c = DiskConfig::hexagonal(delta, 1.0).unwrap();
            assert!(!c.centers.is_empty());
            c.validate().unwrap();
        }
    }
}
