//! Weights with logarithmic singularities and the weighted `∂̄` inequalities
//! built from them: the radial profile `ψ₀`, composite weights
//! `Φ = Φ₀ e^{t|z|²}`, `|P|^{-2}`, and quadrature checks on compactly
//! supported test functions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;

/// Source term `h(r)` of the radial equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Zero,
    Constant { value: f64 },
    /// `a3` on `[1−2a, 1−a]`, quintic ramp to 0 at `1 − a/2`, zero beyond.
    Bump { a: f64, a3: f64 },
}

fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

impl Source {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Source::Zero => 0.0,
            Source::Constant { value } => value,
            Source::Bump { a, a3 } => {
                let (r1, r2) = (1.0 - a, 1.0 - 0.5 * a);
                if r <= r1 {
                    a3
                } else if r >= r2 {
                    0.0
                } else {
                    a3 * (1.0 - smoothstep5((r - r1) / (r2 - r1)))
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Source::Zero => Ok(()),
            Source::Constant { value } if value.is_finite() => Ok(()),
            Source::Constant { .. } => Err(Error::validation("source must be finite")),
            Source::Bump { a, a3 } => {
                if !(a > 0.0 && a < 0.25) {
                    Err(Error::validation("bump source needs 0 < a < 1/4"))
                } else if !(a3 > 0.0) {
                    Err(Error::validation("bump source needs a3 > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// `u = log ψ₀` solving `u″ + u′/r = h`, `u(1) = u′(1) = 0`, tabulated with
/// its derivative on a uniform radial grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Psi0 {
    pub source: Source,
    pub r_min: f64,
    pub r_max: f64,
    dr: f64,
    u: Vec<f64>,
    du: Vec<f64>,
}

/// RK4 steps per unit radius.
const STEPS_PER_UNIT: f64 = 20_000.0;

impl Psi0 {
    /// Integrates from `r = 1` to both ends of `[r_min, r_max]`.
    pub fn solve(source: Source, r_min: f64, r_max: f64) -> Result<Self> {
        source.validate()?;
        if !(r_min > 0.0 && r_min < 1.0 && r_max >= 1.0) {
            return Err(Error::validation("need 0 < r_min < 1 ≤ r_max"));
        }
        let below = ((1.0 - r_min) * STEPS_PER_UNIT).ceil() as usize;
        let dr = (1.0 - r_min) / below as f64;
        let above = ((r_max - 1.0) / dr).ceil() as usize;
        let n = below + above + 1;
        let mut u = vec![0.0; n];
        let mut du = vec![0.0; n];
        let rhs = |r: f64, v: f64| source.eval(r) - v / r;
        let step = |r: f64, y: (f64, f64), h: f64| -> (f64, f64) {
            let k1 = (y.1, rhs(r, y.1));
            let k2 = (y.1 + 0.5 * h * k1.1, rhs(r + 0.5 * h, y.1 + 0.5 * h * k1.1));
            let k3 = (y.1 + 0.5 * h * k2.1, rhs(r + 0.5 * h, y.1 + 0.5 * h * k2.1));
            let k4 = (y.1 + h * k3.1, rhs(r + h, y.1 + h * k3.1));
            (
                y.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                y.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            )
        };
        let r_of = |k: usize| 1.0 + (k as f64 - below as f64) * dr;
        let mut y = (0.0, 0.0);
        for k in (0..below).rev() {
            y = step(r_of(k + 1), y, -dr);
            u[k] = y.0;
            du[k] = y.1;
        }
        y = (0.0, 0.0);
        for k in below + 1..n {
            y = step(r_of(k - 1), y, dr);
            u[k] = y.0;
            du[k] = y.1;
        }
        Ok(Self {
            source,
            r_min: r_of(0),
            r_max: r_of(n - 1),
            dr,
            u,
            du,
        })
    }

    /// `log ψ₀(r)` by cubic Hermite interpolation; `0` beyond the table when
    /// the source vanishes there.
    pub fn log_psi(&self, r: f64) -> f64 {
        self.hermite(r).0
    }

    /// `(u, u′)` at `r`.
    pub fn hermite(&self, r: f64) -> (f64, f64) {
        if r > self.r_max {
            return match self.source {
                Source::Constant { .. } => (f64::NAN, f64::NAN),
                _ => (0.0, 0.0),
            };
        }
        if r < self.r_min {
            return (f64::NAN, f64::NAN);
        }
        let x = (r - self.r_min) / self.dr;
        let k = (x.floor() as usize).min(self.u.len() - 2);
        let t = x - k as f64;
        let (p0, p1) = (self.u[k], self.u[k + 1]);
        let (m0, m1) = (self.du[k] * self.dr, self.du[k + 1] * self.dr);
        let t2 = t * t;
        let t3 = t2 * t;
        let val = (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1;
        let der = ((6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1 + (3.0 * t2 - 2.0 * t) * m1)
            / self.dr;
        (val, der)
    }

    /// Radial Laplacian of `log ψ₀` by central differences of the interpolant.
    pub fn radial_laplacian(&self, r: f64, e: f64) -> f64 {
        let (a, b, c) = (self.log_psi(r - e), self.log_psi(r), self.log_psi(r + e));
        (a - 2.0 * b + c) / (e * e) + (c - a) / (2.0 * e * r)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.u.iter().enumerate().map(|(k, &u)| (self.r_min + k as f64 * self.dr, u))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psi0Report {
    pub u_at_1: f64,
    pub du_at_1: f64,
    /// Largest `|Δ_r log ψ₀ − h|` by second differences on the table nodes.
    pub residual: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    /// Smallest `Δ log ψ₀` on `(1−2a, 1)` and on `(1−2a, 1−a)`.
    pub lap_min: f64,
    pub lap_min_band: f64,
}

/// Solves on `[1−2a, 1]` and reports the four properties of the profile.
pub fn build_psi0(a: f64, source: Source) -> Result<(Psi0, Psi0Report)> {
    if !(a > 0.0 && a < 0.25) {
        return Err(Error::validation("a must lie in (0, 1/4)"));
    }
    let psi = Psi0::solve(source, 1.0 - 2.0 * a, 1.0)?;
    let (u1, du1) = psi.hermite(1.0);
    let mut report = Psi0Report {
        u_at_1: u1,
        du_at_1: du1,
        residual: 0.0,
        psi_min: f64::INFINITY,
        psi_max: 0.0,
        lap_min: f64::INFINITY,
        lap_min_band: f64::INFINITY,
    };
    let dr = psi.dr;
    for k in 1..psi.u.len() - 1 {
        let r = psi.r_min + k as f64 * dr;
        let (um, u0, up) = (psi.u[k - 1], psi.u[k], psi.u[k + 1]);
        let lap = (um - 2.0 * u0 + up) / (dr * dr) + (up - um) / (2.0 * dr * r);
        report.residual = report.residual.max((lap - source.eval(r)).abs());
        report.lap_min = report.lap_min.min(lap);
        if r < 1.0 - a {
            report.lap_min_band = report.lap_min_band.min(lap);
        }
        let p = u0.exp();
        report.psi_min = report.psi_min.min(p);
        report.psi_max = report.psi_max.max(p);
    }
    report.psi_min = report.psi_min.min(1.0);
    report.psi_max = report.psi_max.max(1.0);
    Ok((psi, report))
}

/// `Φ = Φ₀ e^{t|z|²}` with `Φ₀` built from `ψ₀` on each disk `D(z_ν, δ)`.
#[derive(Clone, Debug)]
pub struct CarlemanWeight {
    pub psi0: Psi0,
    pub a: f64,
    pub delta: f64,
    pub centers: Vec<(f64, f64)>,
    pub t: f64,
}

pub fn build_weight(centers: &[(f64, f64)], delta: f64, a: f64, t: f64) -> Result<CarlemanWeight> {
    if !(t > 0.0) {
        return Err(Error::validation("t must be positive"));
    }
    if !(delta > 0.0) {
        return Err(Error::validation("delta must be positive"));
    }
    for (k, c) in centers.iter().enumerate() {
        for d in &centers[..k] {
            if (c.0 - d.0).hypot(c.1 - d.1) <= 2.0 * delta {
                return Err(Error::validation("weight centres must be more than 2δ apart"));
            }
        }
    }
    let (psi0, _) = build_psi0(a, Source::Bump { a, a3: 1.0 })?;
    Ok(CarlemanWeight {
        psi0,
        a,
        delta,
        centers: centers.to_vec(),
        t,
    })
}

impl CarlemanWeight {
    /// Radius of the excluded disks `D_ν(a)`.
    pub fn hole_radius(&self) -> f64 {
        (1.0 - 2.0 * self.a) * self.delta
    }

    /// `None` inside some `D_ν(a)`, where `Φ₀` is undefined.
    pub fn log_phi0(&self, x: f64, y: f64) -> Option<f64> {
        for c in &self.centers {
            let d = (x - c.0).hypot(y - c.1);
            if d <= self.hole_radius() {
                return None;
            }
            if d < self.delta {
                return Some(self.psi0.log_psi(d / self.delta));
            }
        }
        Some(0.0)
    }

    pub fn log_phi(&self, x: f64, y: f64) -> Option<f64> {
        Some(self.log_phi0(x, y)? + self.t * (x * x + y * y))
    }

    /// `Δ log Φ = 4t + h(|w|)/δ²` with `w = (z − z_ν)/δ` inside a disk.
    pub fn lap_log_phi(&self, x: f64, y: f64) -> Option<f64> {
        let mut v = 4.0 * self.t;
        for c in &self.centers {
            let d = (x - c.0).hypot(y - c.1);
            if d <= self.hole_radius() {
                return None;
            }
            if d < self.delta {
                v += self.psi0.source.eval(d / self.delta) / (self.delta * self.delta);
            }
        }
        Some(v)
    }

    /// `|P(z)|^{-2}` with `P = Π(z − z_ν)`.
    pub fn p_inv2(&self, x: f64, y: f64) -> f64 {
        self.centers
            .iter()
            .map(|c| 1.0 / ((x - c.0).powi(2) + (y - c.1).powi(2)))
            .product()
    }

    /// Samples of `Φ` and `|P|^{-2}` on `[-side/2, side/2]²`; nodes inside a
    /// hole or within two cells of a centre are set to zero.
    pub fn fields(&self, n: usize, side: f64) -> (GridField, GridField) {
        let h = side / n as f64;
        let masked = |x: f64, y: f64| {
            self.centers
                .iter()
                .any(|c| (x - c.0).hypot(y - c.1) <= self.hole_radius().max(2.0 * h))
        };
        let phi = GridField::planar(n, side, |x, y| {
            if masked(x, y) {
                0.0
            } else {
                self.log_phi(x, y).map_or(0.0, f64::exp)
            }
        });
        let p = GridField::planar(n, side, |x, y| if masked(x, y) { 0.0 } else { self.p_inv2(x, y) });
        (phi, p)
    }
}

/// `exp(1 − 1/(1 − s²))` for `|s| < 1`, zero otherwise: a smooth bump with peak 1.
pub fn bump(s: f64) -> f64 {
    let s2 = s * s;
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// A compactly supported piece of a test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Piece {
    /// `bump(|z − c| / radius)`.
    Disk { center: (f64, f64), radius: f64 },
    /// `bump((|z − c| − mid) / half_width)`, an annular bump.
    Ring { center: (f64, f64), mid: f64, half_width: f64 },
}

impl Piece {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Piece::Disk { center, radius } => bump((x - center.0).hypot(y - center.1) / radius),
            Piece::Ring { center, mid, half_width } => {
                bump(((x - center.0).hypot(y - center.1) - mid) / half_width)
            }
        }
    }

    /// `(center, inner, outer)` radii of the support about its centre.
    fn support(&self) -> ((f64, f64), f64, f64) {
        match *self {
            Piece::Disk { center, radius } => (center, 0.0, radius),
            Piece::Ring { center, mid, half_width } => (center, (mid - half_width).max(0.0), mid + half_width),
        }
    }

    /// Smallest feature size, which sets the quadrature step.
    fn scale(&self) -> f64 {
        match *self {
            Piece::Disk { radius, .. } => radius,
            Piece::Ring { half_width, .. } => half_width,
        }
    }

    /// Whether the support stays outside the closed disk `D(c, r)`.
    fn clear_of(&self, c: (f64, f64), r: f64) -> bool {
        let (p, inner, outer) = self.support();
        let d = (p.0 - c.0).hypot(p.1 - c.1);
        d >= outer + r || (inner > 0.0 && d + r <= inner)
    }
}

/// `u = Σ c_k piece_k`, compactly supported and smooth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub pieces: Vec<(Piece, (f64, f64))>,
}

impl TestFunction {
    pub fn eval(&self, x: f64, y: f64) -> Complex64 {
        self.pieces
            .iter()
            .map(|(p, c)| Complex64::new(c.0, c.1) * p.eval(x, y))
            .sum()
    }

    pub fn real(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y).re
    }

    /// Bounding box `(lo, hi)` of the support.
    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (p, _) in &self.pieces {
            let (c, _, r) = p.support();
            lo = (lo.0.min(c.0 - r), lo.1.min(c.1 - r));
            hi = (hi.0.max(c.0 + r), hi.1.max(c.1 + r));
        }
        (lo, hi)
    }

    pub fn min_scale(&self) -> f64 {
        self.pieces.iter().map(|(p, _)| p.scale()).fold(f64::INFINITY, f64::min)
    }

    /// Whether the support avoids every hole `D_ν(a)`.
    pub fn avoids(&self, weight: &CarlemanWeight) -> bool {
        let r = weight.hole_radius();
        self.pieces
            .iter()
            .all(|(p, _)| weight.centers.iter().all(|&c| p.clear_of(c, r)))
    }
}

/// Groups pieces whose (slightly enlarged) bounding boxes overlap; each
/// group is integrated on its own grid.
fn clusters(u: &TestFunction) -> Vec<TestFunction> {
    let boxes: Vec<_> = u
        .pieces
        .iter()
        .map(|(p, _)| {
            let (c, _, r) = p.support();
            let m = r + 0.1 * p.scale();
            ((c.0 - m, c.1 - m), (c.0 + m, c.1 + m))
        })
        .collect();
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (boxes[i], boxes[j]);
            if a.0 .0 <= b.1 .0 && b.0 .0 <= a.1 .0 && a.0 .1 <= b.1 .1 && b.0 .1 <= a.1 .1 {
                let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut out: Vec<(usize, TestFunction)> = Vec::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        match out.iter_mut().find(|(k, _)| *k == r) {
            Some((_, t)) => t.pieces.push(u.pieces[i]),
            None => out.push((r, TestFunction { pieces: vec![u.pieces[i]] })),
        }
    }
    out.into_iter().map(|(_, t)| t).collect()
}

/// Nodes per smallest feature in quadrature grids.
const CELLS_PER_SCALE: f64 = 40.0;

/// `Σ h² · node(u, x, y, h)` over every cluster grid, skipping nodes within
/// two cells of a weight centre.
fn cluster_sum<const K: usize>(
    u: &TestFunction,
    weight: &CarlemanWeight,
    node: impl Fn(&TestFunction, f64, f64, f64) -> [f64; K] + Sync,
) -> [f64; K] {
    let mut total = [0.0; K];
    for part in clusters(u) {
        let h = part.min_scale() / CELLS_PER_SCALE;
        let (lo, hi) = part.bounds();
        let o = (lo.0 - 2.0 * h, lo.1 - 2.0 * h);
        let nx = ((hi.0 + 2.0 * h - o.0) / h).ceil() as usize + 1;
        let ny = ((hi.1 + 2.0 * h - o.1) / h).ceil() as usize + 1;
        let rows: Vec<[f64; K]> = (1..ny - 1)
            .into_par_iter()
            .map(|j| {
                let y = o.1 + j as f64 * h;
                let mut acc = [0.0; K];
                for i in 1..nx - 1 {
                    let x = o.0 + i as f64 * h;
                    if near_center(weight, x, y, h) {
                        continue;
                    }
                    let v = node(&part, x, y, h);
                    for k in 0..K {
                        acc[k] += v[k];
                    }
                }
                acc
            })
            .collect();
        for r in rows {
            for k in 0..K {
                total[k] += r[k] * h * h;
            }
        }
    }
    total
}

fn near_center(w: &CarlemanWeight, x: f64, y: f64, h: f64) -> bool {
    w.centers.iter().any(|c| (x - c.0).hypot(y - c.1) <= 2.0 * h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// `∫ |∂̄u|² Φ`.
    pub lhs: f64,
    /// `∫ ¼ (Δ log Φ) |u|² Φ`.
    pub rhs: f64,
    pub margin: f64,
    /// `|lhs| + |rhs|`, the scale for relative tolerances.
    pub scale: f64,
}

/// `∫|∂̄u|²Φ ≥ ∫¼(Δ log Φ)|u|²Φ` by centred differences and node quadrature.
pub fn check_subharmonic_inequality(u: &TestFunction, weight: &CarlemanWeight) -> Result<LemmaCheck> {
    if !u.avoids(weight) {
        return Err(Error::validation("test function support meets a weight hole"));
    }
    if u.pieces.is_empty() {
        return Ok(LemmaCheck {
            lhs: 0.0,
            rhs: 0.0,
            margin: 0.0,
            scale: 0.0,
        });
    }
    let [lhs, rhs] = cluster_sum(u, weight, |u, x, y, h| {
        let c = u.eval(x, y);
        let ux = (u.eval(x + h, y) - u.eval(x - h, y)) / (2.0 * h);
        let uy = (u.eval(x, y + h) - u.eval(x, y - h)) / (2.0 * h);
        if c.norm_sqr() == 0.0 && ux.norm_sqr() == 0.0 && uy.norm_sqr() == 0.0 {
            return [0.0; 2];
        }
        let (Some(lp), Some(lap)) = (weight.log_phi(x, y), weight.lap_log_phi(x, y)) else {
            return [0.0; 2];
        };
        let phi = lp.exp();
        let dbar = 0.5 * (ux + Complex64::i() * uy);
        [dbar.norm_sqr() * phi, 0.25 * lap * c.norm_sqr() * phi]
    });
    Ok(LemmaCheck {
        lhs,
        rhs,
        margin: lhs - rhs,
        scale: lhs.abs() + rhs.abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Check {
    /// `∫ |Δf|² |P|^{-2} e^{t|z|²}`.
    pub lhs: f64,
    /// `t² ∫ f² |P|^{-2} e^{t|z|²}`.
    pub rhs_t2_term: f64,
    /// `δ^{-2} ∫_A |∇f|² |P|^{-2} e^{t|z|²}`.
    pub rhs_grad_term: f64,
    /// `lhs / (t²-term + δ^{-2}-term)`; `None` for a vanishing test field.
    pub constant: Option<f64>,
}

/// Weighted `(Δf, f, ∇f)` integrals for a real test field.
pub fn carleman_c1_check(f: &TestFunction, weight: &CarlemanWeight) -> Result<C1Check> {
    if weight.t < 1.0 {
        return Err(Error::validation("the estimate is checked for t ≥ 1"));
    }
    if !f.avoids(weight) {
        return Err(Error::validation("test field does not vanish on the weight holes"));
    }
    if f.pieces.is_empty() {
        return Ok(C1Check {
            lhs: 0.0,
            rhs_t2_term: 0.0,
            rhs_grad_term: 0.0,
            constant: None,
        });
    }
    let (r0, r1) = ((1.0 - 2.0 * weight.a) * weight.delta, (1.0 - weight.a) * weight.delta);
    let in_a = |x: f64, y: f64| {
        weight.centers.iter().any(|c| {
            let d = (x - c.0).hypot(y - c.1);
            d > r0 && d < r1
        })
    };
    let [lhs, l2, grad] = cluster_sum(f, weight, |f, x, y, h| {
        let c = f.real(x, y);
        let (e, w, n, s) = (f.real(x + h, y), f.real(x - h, y), f.real(x, y + h), f.real(x, y - h));
        if c == 0.0 && e == 0.0 && w == 0.0 && n == 0.0 && s == 0.0 {
            return [0.0; 3];
        }
        let wt = weight.p_inv2(x, y) * (weight.t * (x * x + y * y)).exp();
        let lap = (e + w + n + s - 4.0 * c) / (h * h);
        let g = if in_a(x, y) {
            let gx = (e - w) / (2.0 * h);
            let gy = (n - s) / (2.0 * h);
            (gx * gx + gy * gy) * wt
        } else {
            0.0
        };
        [lap * lap * wt, c * c * wt, g]
    });
    let t2 = weight.t * weight.t * l2;
    let g = grad / (weight.delta * weight.delta);
    let denom = t2 + g;
    Ok(C1Check {
        lhs,
        rhs_t2_term: t2,
        rhs_grad_term: g,
        constant: (denom > 0.0).then(|| lhs / denom),
    })
}

/// Random superposition of 1–5 disk bumps inside `[-extent, extent]²`, with
/// radii in `[r_lo, r_hi]`, redrawn until clear of the weight holes.
pub fn random_bumps(seed: u64, index: u64, weight: &CarlemanWeight, extent: f64, r_lo: f64, r_hi: f64) -> TestFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    loop {
        let k = rng.random_range(1..=5);
        let mut pieces = Vec::with_capacity(k);
        for _ in 0..k {
            let radius = rng.random_range(r_lo..=r_hi);
            let lim = (extent - radius).max(0.0);
            let center = (rng.random_range(-lim..=lim), rng.random_range(-lim..=lim));
            let coef = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            pieces.push((Piece::Disk { center, radius }, coef));
        }
        let u = TestFunction { pieces };
        if u.avoids(weight) {
            return u;
        }
    }
}

/// Random real test field made of rings around the weight centres (which
/// meet the annuli `A_ν`) plus disk bumps just outside the disks `D_ν`.
pub fn random_ring_field(seed: u64, index: u64, weight: &CarlemanWeight) -> TestFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let d = weight.delta;
    let hole = weight.hole_radius();
    loop {
        let mut pieces = Vec::new();
        for &c in &weight.centers {
            if rng.random_bool(0.75) || pieces.is_empty() {
                let inner = hole + rng.random_range(0.005..=0.05) * d;
                let outer = rng.random_range(1.05..=1.6) * d;
                let coef = rng.random_range(0.2..=1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                pieces.push((
                    Piece::Ring {
                        center: c,
                        mid: 0.5 * (inner + outer),
                        half_width: 0.5 * (outer - inner),
                    },
                    (coef, 0.0),
                ));
            }
            if rng.random_bool(0.5) {
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let dist = rng.random_range(1.2..=2.0) * d;
                let radius = rng.random_range(0.15..=0.35) * d;
                pieces.push((
                    Piece::Disk {
                        center: (c.0 + dist * th.cos(), c.1 + dist * th.sin()),
                        radius,
                    },
                    (rng.random_range(-1.0..=1.0), 0.0),
                ));
            }
        }
        let u = TestFunction { pieces };
        if u.avoids(weight) {
            return u;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_source_gives_unit_profile() {
        let (p, rep) = build_psi0(0.1, Source::Zero).unwrap();
        assert!(p.samples().all(|(_, u)| u == 0.0));
        assert_eq!(rep.psi_min, 1.0);
    }

    #[test]
    fn bump_source_shape() {
        let s = Source::Bump { a: 0.1, a3: 1.0 };
        assert_eq!(s.eval(0.85), 1.0);
        assert_eq!(s.eval(0.95), 0.0);
        assert!(s.eval(0.92) > 0.0 && s.eval(0.92) < 1.0);
    }

    #[test]
    fn holes_and_separation() {
        assert!(build_weight(&[(0.0, 0.0), (0.0015, 0.0)], 1e-3, 0.1, 1.0).is_err());
        let w = build_weight(&[(0.0, 0.0)], 1e-3, 0.1, 1.0).unwrap();
        assert!(w.log_phi0(0.0, 0.0).is_none());
        assert_eq!(w.log_phi0(0.01, 0.0), Some(0.0));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub lemma: String,
    pub family_size: usize,
    /// Smallest `margin / scale` for the subharmonic inequality.
    pub min_margin: Option<f64>,
    /// Smallest empirical constant for the weighted Laplacian estimate.
    pub empirical_constant: Option<f64>,
}

/// Worst relative margin of the subharmonic inequality over a family.
pub fn lemma_family(weight: &CarlemanWeight, family: &[TestFunction]) -> Result<(Vec<LemmaCheck>, CarlemanReport)> {
    let checks = family
        .iter()
        .map(|u| check_subharmonic_inequality(u, weight))
        .collect::<Result<Vec<_>>>()?;
    let min_margin = checks
        .iter()
        .filter(|c| c.scale > 0.0)
        .map(|c| c.margin / c.scale)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    Ok((
        checks,
        CarlemanReport {
            lemma: "6.1.1".into(),
            family_size: family.len(),
            min_margin,
            empirical_constant: None,
        },
    ))
}

/// Smallest empirical constant of the weighted estimate over a family.
pub fn c1_family(weight: &CarlemanWeight, family: &[TestFunction]) -> Result<(Vec<C1Check>, CarlemanReport)> {
    let checks = family
        .iter()
        .map(|f| carleman_c1_check(f, weight))
        .collect::<Result<Vec<_>>>()?;
    let c = checks
        .iter()
        .filter_map(|c| c.constant)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    Ok((
        checks,
        CarlemanReport {
            lemma: "C1".into(),
            family_size: family.len(),
            min_margin: None,
            empirical_constant: c,
        },
    ))
}

/// Vertices of an equilateral triangle of circumradius `r` about the origin.
pub fn triangle_centers(r: f64) -> Vec<(f64, f64)> {
    (0..3)
        .map(|k| {
            let th = std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::TAU / 3.0;
            (r * th.cos(), r * th.sin())
        })
        .collect()
}

#[cfg(test)]
mod discrete_identities {
    use super::*;

    fn dbar(f: impl Fn(f64, f64) -> Complex64, x: f64, y: f64, h: f64) -> Complex64 {
        let ux = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let uy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        0.5 * (ux + Complex64::i() * uy)
    }

    fn d(f: impl Fn(f64, f64) -> Complex64, x: f64, y: f64, h: f64) -> Complex64 {
        let ux = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let uy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        0.5 * (ux - Complex64::i() * uy)
    }

    #[test]
    fn cauchy_riemann_for_cubics() {
        let p = |x: f64, y: f64| {
            let z = Complex64::new(x, y);
            z * z * z - 2.0 * z + Complex64::new(0.5, 1.0)
        };
        for h in [1e-2, 5e-3] {
            let e = dbar(p, 0.3, -0.2, h).norm();
            assert!(e < 10.0 * h * h, "{e}");
        }
    }

    #[test]
    fn dbar_d_is_quarter_laplacian() {
        let psi = |x: f64, y: f64| Complex64::new((x * y).sin() + x * x * y, 0.0);
        let (x, y, h) = (0.4, 0.7, 1e-3);
        let lhs = dbar(|a, b| d(psi, a, b, h), x, y, h);
        let lap = (-(x * y).sin()) * (x * x + y * y) + 2.0 * y;
        assert!((lhs.re - 0.25 * lap).abs() < 1e-4 && lhs.im.abs() < 1e-4);
    }

    #[test]
    fn weighted_adjoint_and_commutator() {
        // ∂̄* v = -e^{φ} ∂(e^{-φ} v) in L²(e^{-φ}); weight φ = t|z|².
        let t = 1.5;
        let u = TestFunction {
            pieces: vec![(Piece::Disk { center: (0.1, 0.0), radius: 0.6 }, (1.0, 0.5))],
        };
        let v = TestFunction {
            pieces: vec![(Piece::Disk { center: (-0.1, 0.2), radius: 0.5 }, (0.3, -1.0))],
        };
        let w = |x: f64, y: f64| (-t * (x * x + y * y)).exp();
        let h = 2e-3;
        let adj = |f: &TestFunction, x: f64, y: f64| -> Complex64 {
            -d(|a, b| f.eval(a, b) * w(a, b), x, y, h) / w(x, y)
        };
        let n = (1.0 / h) as i64;
        let (mut l, mut r, mut comm, mut rhs) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), 0.0, 0.0);
        for j in -n..=n {
            for i in -n..=n {
                let (x, y) = (i as f64 * h, j as f64 * h);
                let wt = w(x, y) * h * h;
                l += dbar(|a, b| u.eval(a, b), x, y, h) * v.eval(x, y).conj() * wt;
                r += u.eval(x, y) * adj(&v, x, y).conj() * wt;
                // ⟨[∂̄, ∂̄*]u, u⟩ = ‖∂̄*u‖² − ‖∂̄u‖² for compact support
                comm += (adj(&u, x, y).norm_sqr() - dbar(|a, b| u.eval(a, b), x, y, h).norm_sqr()) * wt;
                rhs += t * u.eval(x, y).norm_sqr() * wt;
            }
        }
        assert!((l - r).norm() < 1e-3 * l.norm().max(1.0), "{l} {r}");
        assert!((comm - rhs).abs() < 1e-2 * rhs, "{comm} {rhs}");
    }

    #[test]
    fn annulus_laplacian_of_log_weight() {
        let delta = 1e-3;
        let w = build_weight(&[(0.0, 0.0)], delta, 0.1, 1.0).unwrap();
        let e = delta * 1e-3;
        for k in 0..20 {
            let th = k as f64 * 0.3;
            let r = (0.81 + 0.08 * k as f64 / 19.0) * delta;
            let (x, y) = (r * th.cos(), r * th.sin());
            let f = |a: f64, b: f64| w.log_phi0(a, b).unwrap();
            let lap = (f(x + e, y) + f(x - e, y) + f(x, y + e) + f(x, y - e) - 4.0 * f(x, y)) / (e * e);
            assert!(lap >= 0.95 / (delta * delta), "{lap}");
        }
    }

    #[test]
    fn polynomial_times_wide_bump() {
        let w = build_weight(&[], 1e-3, 0.1, 1e-6).unwrap();
        // ∂̄(z³b) = z³∂̄b is tiny where a radius-50 bump is nearly flat
        let b = |x: f64, y: f64| bump(x.hypot(y) / 50.0);
        let f = |x: f64, y: f64| {
            let z = Complex64::new(x, y);
            z * z * z * b(x, y)
        };
        let (mut num, mut den) = (0.0, 0.0);
        let h = 0.01;
        for j in -50..=50 {
            for i in -50..=50 {
                let (x, y) = (i as f64 * h, j as f64 * h);
                num += dbar(f, x, y, h).norm_sqr();
                den += f(x, y).norm_sqr();
            }
        }
        assert!(num < 1e-3 * den.max(1e-12) || num < 1e-3, "{num} {den}");
        assert!(w.lap_log_phi(0.0, 0.0).unwrap() * den * 0.25 < 1e-3 * den.max(1.0));
    }

    #[test]
    fn no_centre_inequality_for_several_t() {
        for t in [1.0, 5.0, 20.0] {
            let w = build_weight(&[], 1e-3, 0.1, t).unwrap();
            for k in 0..4 {
                let u = random_bumps(11, k, &w, 0.6, 0.15, 0.35);
                let c = check_subharmonic_inequality(&u, &w).unwrap();
                assert!(c.margin >= -1e-6 * c.scale, "t={t} {c:?}");
            }
        }
    }

    #[test]
    fn t_scaling_of_c1_ratio() {
        let f = TestFunction {
            pieces: vec![(Piece::Disk { center: (0.0, 0.0), radius: 0.3 }, (1.0, 0.0))],
        };
        let r = |t: f64| {
            let c = carleman_c1_check(&f, &build_weight(&[], 1e-3, 0.1, t).unwrap()).unwrap();
            c.lhs / c.rhs_t2_term
        };
        assert!(r(10.0) <= r(1.0));
    }

    #[test]
    fn degenerate_field_is_flagged() {
        let w = build_weight(&[], 1e-3, 0.1, 1.0).unwrap();
        let c = carleman_c1_check(&TestFunction { pieces: vec![] }, &w).unwrap();
        assert!(c.constant.is_none());
    }
}
