//! Conformally flat metrics `g = q (dx² + dy²)` on the unit torus, geodesic
//! distance by fast marching, and sup / L^q evaluation of fields over disks,
//! annuli and metric balls.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{wrap_delta, Domain, GridField, ScalarField};

/// Named conformal factor profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Profile {
    /// `q ≡ 1`.
    Flat,
    /// `q ≡ value`.
    Constant { value: f64 },
    /// `q = 1 + amplitude · sin(2π kx x) · sin(2π ky y)`.
    Wave {
        amplitude: f64,
        #[serde(default = "one")]
        kx: u32,
        #[serde(default = "one")]
        ky: u32,
    },
    /// `q = exp(amplitude · cos(2π x) · cos(2π y))`, a real-analytic factor
    /// with an asymmetric range.
    Exponential { amplitude: f64 },
}

fn one() -> u32 {
    1
}

impl Profile {
    pub fn wave(amplitude: f64) -> Self {
        Profile::Wave {
            amplitude,
            kx: 1,
            ky: 1,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            Profile::Flat => 1.0,
            Profile::Constant { value } => value,
            Profile::Wave { amplitude, kx, ky } => {
                1.0 + amplitude * (2.0 * PI * kx as f64 * x).sin() * (2.0 * PI * ky as f64 * y).sin()
            }
            Profile::Exponential { amplitude } => {
                (amplitude * (2.0 * PI * x).cos() * (2.0 * PI * y).cos()).exp()
            }
        }
    }
}

/// Conformal factor sampled on the torus grid, with its pinching bounds.
#[derive(Clone, Debug)]
pub struct ConformalMetric {
    profile: Option<Profile>,
    q: GridField,
    sqrt_q: Vec<f64>,
    pub q_minus: f64,
    pub q_plus: f64,
    /// Metric area `∫ q dA`.
    pub volume: f64,
    /// `q₋ / (5 q⁺)`.
    pub alpha0: f64,
}

impl ConformalMetric {
    pub fn from_profile(profile: Profile, grid_n: usize) -> Result<Self> {
        if grid_n < 16 {
            return Err(Error::validation(format!("grid_n = {grid_n} is below the minimum of 16")));
        }
        let mut values = Vec::with_capacity(grid_n * grid_n);
        let h = 1.0 / grid_n as f64;
        for j in 0..grid_n {
            for i in 0..grid_n {
                values.push(profile.eval(i as f64 * h, j as f64 * h));
            }
        }
        let q = GridField::new(grid_n, Domain::Torus, values)?;
        Self::build(Some(profile), q)
    }

    /// Metric from raw samples of `q`.
    pub fn from_samples(q: GridField) -> Result<Self> {
        if q.domain() != Domain::Torus {
            return Err(Error::validation("conformal factor must live on the torus"));
        }
        if q.n() < 16 {
            return Err(Error::validation("grid_n must be at least 16"));
        }
        Self::build(None, q)
    }

    fn build(profile: Option<Profile>, q: GridField) -> Result<Self> {
        if let Some(k) = q.values().iter().position(|&v| v <= 0.0) {
            let n = q.n();
            let (x, y) = q.node(k % n, k / n);
            return Err(Error::validation(format!(
                "conformal factor is non-positive ({}) at ({x:.4}, {y:.4})",
                q.values()[k]
            )));
        }
        let q_minus = q.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let q_plus = q.values().iter().cloned().fold(0.0, f64::max);
        let h = q.h();
        let volume = q.values().iter().sum::<f64>() * h * h;
        let sqrt_q = q.values().iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            profile,
            q,
            sqrt_q,
            q_minus,
            q_plus,
            volume,
            alpha0: q_minus / (5.0 * q_plus),
        })
    }

    /// `c · q` on the same grid.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let profile = match &self.profile {
            Some(Profile::Flat) => Some(Profile::Constant { value: c }),
            Some(Profile::Constant { value }) => Some(Profile::Constant { value: c * value }),
            _ => None,
        };
        Self::build(profile, self.q.scaled(c))
    }

    pub fn profile(&self) -> Option<&Profile> {
        self.profile.as_ref()
    }

    pub fn grid_n(&self) -> usize {
        self.q.n()
    }

    pub fn h(&self) -> f64 {
        self.q.h()
    }

    pub fn q(&self) -> &GridField {
        &self.q
    }

    /// Conformal factor at an arbitrary point: analytic when the metric came
    /// from a profile, bilinear otherwise.
    pub fn q_at(&self, x: f64, y: f64) -> f64 {
        match &self.profile {
            Some(p) => p.eval(x, y),
            None => self.q.sample(x, y),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.q_plus - self.q_minus <= 1e-14 * self.q_plus
    }

    /// Metric length of a straight segment, `∫ √q ds` by 3-point Gauss.
    pub fn segment_length(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        if len == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (t, w) in NODES.iter().zip(WEIGHTS) {
            let s = 0.5 * (1.0 + t);
            let x = a.0 + s * (b.0 - a.0);
            let y = a.1 + s * (b.1 - a.1);
            acc += w * self.q_at(x, y).sqrt();
        }
        0.5 * len * acc
    }

    pub fn polyline_length(&self, pts: &[(f64, f64)]) -> f64 {
        pts.windows(2).map(|w| self.segment_length(w[0], w[1])).sum()
    }
}

pub fn make_metric(profile: Profile, grid_n: usize) -> Result<ConformalMetric> {
    ConformalMetric::from_profile(profile, grid_n)
}

// ---------------------------------------------------------------------------
// Fast marching
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    d: f64,
    idx: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by index for determinism
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Rectangular node lattice for the marcher, periodic or bounded.
struct Lattice<'a> {
    w: usize,
    ht: usize,
    periodic: bool,
    h: f64,
    slowness: &'a [f64],
}

impl Lattice<'_> {
    #[inline]
    fn step(&self, idx: usize, dx: isize, dy: isize) -> Option<usize> {
        let a = (idx % self.w) as isize + dx;
        let b = (idx / self.w) as isize + dy;
        if self.periodic {
            let a = a.rem_euclid(self.w as isize) as usize;
            let b = b.rem_euclid(self.ht as isize) as usize;
            Some(b * self.w + a)
        } else if a < 0 || b < 0 || a >= self.w as isize || b >= self.ht as isize {
            None
        } else {
            Some(b as usize * self.w + a as usize)
        }
    }

    /// Upwind contribution along one axis: `(coefficient, centre)` of the
    /// quadratic term `c (d − m)²`. Second order when the two upwind nodes
    /// are known and monotone.
    fn axis_term(&self, idx: usize, dx: isize, dy: isize, d: &[f64], known: &[bool]) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for s in [-1isize, 1] {
            let Some(n1) = self.step(idx, s * dx, s * dy) else { continue };
            if !known[n1] {
                continue;
            }
            let a1 = d[n1];
            let term = match self.step(n1, s * dx, s * dy) {
                Some(n2) if known[n2] && d[n2] <= a1 => {
                    let a2 = d[n2];
                    (9.0 / (4.0 * self.h * self.h), (4.0 * a1 - a2) / 3.0)
                }
                _ => (1.0 / (self.h * self.h), a1),
            };
            // prefer the direction giving the smaller one-sided solution
            let est = term.1 + 1.0 / term.0.sqrt();
            if best.is_none_or(|b| est < b.1 + 1.0 / b.0.sqrt()) {
                best = Some(term);
            }
        }
        best
    }

    fn solve(&self, idx: usize, d: &[f64], known: &[bool]) -> f64 {
        let f = self.slowness[idx];
        let tx = self.axis_term(idx, 1, 0, d, known);
        let ty = self.axis_term(idx, 0, 1, d, known);
        let one_sided = |(c, m): (f64, f64)| m + f / c.sqrt();
        match (tx, ty) {
            (Some(a), Some(b)) => {
                // c1 (d−m1)² + c2 (d−m2)² = f²
                let (c1, m1) = a;
                let (c2, m2) = b;
                let qa = c1 + c2;
                let qb = -2.0 * (c1 * m1 + c2 * m2);
                let qc = c1 * m1 * m1 + c2 * m2 * m2 - f * f;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let sol = (-qb + disc.sqrt()) / (2.0 * qa);
                    if sol >= m1.max(m2) {
                        return sol;
                    }
                }
                one_sided(a).min(one_sided(b))
            }
            (Some(a), None) => one_sided(a),
            (None, Some(b)) => one_sided(b),
            (None, None) => f64::INFINITY,
        }
    }

    /// Marches outward from fixed seed values; nodes beyond `cutoff` stay infinite.
    fn march(&self, seeds: &[(usize, f64)], cutoff: f64) -> Vec<f64> {
        let n = self.w * self.ht;
        let mut d = vec![f64::INFINITY; n];
        let mut known = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &(idx, v) in seeds {
            if v < d[idx] {
                d[idx] = v;
            }
        }
        for &(idx, _) in seeds {
            known[idx] = true;
        }
        for &(idx, _) in seeds {
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if let Some(nb) = self.step(idx, dx, dy) {
                    if !known[nb] {
                        let v = self.solve(nb, &d, &known);
                        if v < d[nb] {
                            d[nb] = v;
                            heap.push(Trial { d: v, idx: nb });
                        }
                    }
                }
            }
        }
        while let Some(Trial { d: v, idx }) = heap.pop() {
            if known[idx] || v > d[idx] {
                continue;
            }
            known[idx] = true;
            if v > cutoff {
                break;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                if let Some(nb) = self.step(idx, dx, dy) {
                    if !known[nb] {
                        let u = self.solve(nb, &d, &known);
                        if u < d[nb] {
                            d[nb] = u;
                            heap.push(Trial { d: u, idx: nb });
                        }
                    }
                }
            }
        }
        for (v, k) in d.iter_mut().zip(&known) {
            if !k || *v > cutoff {
                *v = f64::INFINITY;
            }
        }
        d
    }
}

/// Nodes within this many cells of the source are initialised from the
/// local straight-line metric distance instead of being marched.
const SEED_RADIUS_CELLS: f64 = 3.0;

fn seed_distance(metric: &ConformalMetric, p: (f64, f64), x: f64, y: f64) -> f64 {
    // midpoint rule for ∫√q along the straight segment
    let mx = 0.5 * (p.0 + x);
    let my = 0.5 * (p.1 + y);
    metric.q_at(mx, my).sqrt() * (x - p.0).hypot(y - p.1)
}

/// Geodesic distance from `p` to every node of the torus grid: a first/second
/// order upwind solution of `|∇d| = √q`.
pub fn geodesic_distance(metric: &ConformalMetric, p: (f64, f64)) -> Result<GridField> {
    check_point(p)?;
    let n = metric.grid_n();
    let h = metric.h();
    let lattice = Lattice {
        w: n,
        ht: n,
        periodic: true,
        h,
        slowness: &metric.sqrt_q,
    };
    let seeds = seeds_around(metric, p, |i, j| {
        let a = i.rem_euclid(n as isize) as usize;
        let b = j.rem_euclid(n as isize) as usize;
        Some(b * n + a)
    });
    let d = lattice.march(&seeds, f64::INFINITY);
    GridField::new(n, Domain::Torus, d)
}

fn check_point(p: (f64, f64)) -> Result<()> {
    if !(0.0..1.0).contains(&p.0) || !(0.0..1.0).contains(&p.1) {
        return Err(Error::validation(format!(
            "point ({}, {}) outside the fundamental domain [0,1)²",
            p.0, p.1
        )));
    }
    Ok(())
}

/// Seeds for nodes `(i, j)` (unwrapped global indices) near `p`.
fn seeds_around(
    metric: &ConformalMetric,
    p: (f64, f64),
    index: impl Fn(isize, isize) -> Option<usize>,
) -> Vec<(usize, f64)> {
    let h = metric.h();
    let r = SEED_RADIUS_CELLS;
    let ci = (p.0 / h).floor() as isize;
    let cj = (p.1 / h).floor() as isize;
    let k = r.ceil() as isize + 1;
    let mut seeds = Vec::new();
    for j in cj - k..=cj + k + 1 {
        for i in ci - k..=ci + k + 1 {
            let x = i as f64 * h;
            let y = j as f64 * h;
            if (x - p.0).hypot(y - p.1) <= r * h {
                if let Some(idx) = index(i, j) {
                    seeds.push((idx, seed_distance(metric, p, x, y)));
                }
            }
        }
    }
    seeds
}

/// Geodesic distances near a centre, stored on an unwrapped local window.
#[derive(Clone, Debug)]
pub struct DistanceMap {
    h: f64,
    /// Global (unwrapped) index of the window's first node.
    i0: isize,
    j0: isize,
    w: usize,
    /// `None` for a full periodic field.
    periodic_n: Option<usize>,
    values: Vec<f64>,
}

impl DistanceMap {
    fn node(&self, a: isize, b: isize) -> f64 {
        match self.periodic_n {
            Some(n) => {
                let n = n as isize;
                let a = a.rem_euclid(n) as usize;
                let b = b.rem_euclid(n) as usize;
                self.values[b * n as usize + a]
            }
            None => {
                let a = a - self.i0;
                let b = b - self.j0;
                if a < 0 || b < 0 || a >= self.w as isize || b >= self.w as isize {
                    f64::INFINITY
                } else {
                    self.values[b as usize * self.w + a as usize]
                }
            }
        }
    }

    /// Bilinear distance at an unwrapped point; infinite if any corner is unreached.
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let u = x / self.h;
        let v = y / self.h;
        let i = u.floor();
        let j = v.floor();
        let (tx, ty) = (u - i, v - j);
        let (i, j) = (i as isize, j as isize);
        let f00 = self.node(i, j);
        let f10 = self.node(i + 1, j);
        let f01 = self.node(i, j + 1);
        let f11 = self.node(i + 1, j + 1);
        if !(f00.is_finite() && f10.is_finite() && f01.is_finite() && f11.is_finite()) {
            return f64::INFINITY;
        }
        crate::field::bilerp(f00, f10, f01, f11, tx, ty)
    }
}

/// The metric ball `{x : d_g(p, x) ≤ r}`.
#[derive(Clone, Debug)]
pub struct MetricDisk {
    pub center: (f64, f64),
    pub radius: f64,
    /// Upper bound on the Euclidean radius of the ball, `r / √q₋`.
    euclid_bound: f64,
    pub distance: DistanceMap,
}

impl MetricDisk {
    /// Marches only as far as the ball needs.
    pub fn new(metric: &ConformalMetric, p: (f64, f64), r: f64) -> Result<Self> {
        check_point(p)?;
        if !(r > 0.0) {
            return Err(Error::validation("metric disk radius must be positive"));
        }
        let n = metric.grid_n();
        let h = metric.h();
        let euclid_bound = r / metric.q_minus.sqrt();
        let half = ((euclid_bound / h).ceil() as isize) + 4;
        if 2 * half + 2 >= n as isize {
            // window would wrap onto itself
            let full = geodesic_distance(metric, p)?;
            return Ok(Self::from_field(full, p, r, metric.q_minus));
        }
        let ci = (p.0 / h).floor() as isize;
        let cj = (p.1 / h).floor() as isize;
        let i0 = ci - half;
        let j0 = cj - half;
        let w = (2 * half + 2) as usize;
        let mut slowness = Vec::with_capacity(w * w);
        for b in 0..w as isize {
            for a in 0..w as isize {
                let gi = (i0 + a).rem_euclid(n as isize) as usize;
                let gj = (j0 + b).rem_euclid(n as isize) as usize;
                slowness.push(metric.sqrt_q[gj * n + gi]);
            }
        }
        let lattice = Lattice {
            w,
            ht: w,
            periodic: false,
            h,
            slowness: &slowness,
        };
        let seeds = seeds_around(metric, p, |i, j| {
            let a = i - i0;
            let b = j - j0;
            (a >= 0 && b >= 0 && a < w as isize && b < w as isize).then(|| b as usize * w + a as usize)
        });
        let values = lattice.march(&seeds, r + 3.0 * h * metric.q_plus.sqrt());
        Ok(Self {
            center: p,
            radius: r,
            euclid_bound,
            distance: DistanceMap {
                h,
                i0,
                j0,
                w,
                periodic_n: None,
                values,
            },
        })
    }

    /// Ball from a precomputed full distance field.
    pub fn from_field(field: GridField, p: (f64, f64), r: f64, q_minus: f64) -> Self {
        let n = field.n();
        let h = field.h();
        Self {
            center: p,
            radius: r,
            euclid_bound: r / q_minus.sqrt(),
            distance: DistanceMap {
                h,
                i0: 0,
                j0: 0,
                w: n,
                periodic_n: Some(n),
                values: field.into_values(),
            },
        }
    }

    /// The concentric ball of radius `alpha · r` sharing the same distance map.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            center: self.center,
            radius: alpha * self.radius,
            euclid_bound: alpha * self.euclid_bound,
            distance: self.distance.clone(),
        }
    }

    /// Membership for an unwrapped point near the centre.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.distance.at(x, y) <= self.radius
    }
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub enum Region<'a> {
    Disk { center: (f64, f64), radius: f64 },
    /// Open annulus `inner < |z − c| < outer`.
    Annulus { center: (f64, f64), inner: f64, outer: f64 },
    Metric(&'a MetricDisk),
}

impl Region<'_> {
    pub fn disk(center: (f64, f64), radius: f64) -> Self {
        Region::Disk { center, radius }
    }

    pub fn annulus(center: (f64, f64), inner: f64, outer: f64) -> Self {
        Region::Annulus { center, inner, outer }
    }

    pub fn center(&self) -> (f64, f64) {
        match *self {
            Region::Disk { center, .. } | Region::Annulus { center, .. } => center,
            Region::Metric(m) => m.center,
        }
    }

    /// Euclidean radius of a disk about the centre containing the region.
    pub fn outer_radius(&self) -> f64 {
        match *self {
            Region::Disk { radius, .. } => radius,
            Region::Annulus { outer, .. } => outer,
            Region::Metric(m) => m.euclid_bound,
        }
    }

    /// `(x, y)` are unwrapped coordinates near the centre.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Disk { center, radius } => {
                let (dx, dy) = (x - center.0, y - center.1);
                dx * dx + dy * dy <= radius * radius
            }
            Region::Annulus { center, inner, outer } => {
                let (dx, dy) = (x - center.0, y - center.1);
                let r2 = dx * dx + dy * dy;
                r2 > inner * inner && r2 < outer * outer
            }
            Region::Metric(m) => m.contains(x, y),
        }
    }

    /// Points on the region boundary at roughly the given arc spacing.
    fn boundary_points(&self, spacing: f64) -> Vec<(f64, f64)> {
        let circle = |c: (f64, f64), r: f64, out: &mut Vec<(f64, f64)>| {
            if r <= 0.0 {
                return;
            }
            let k = ((2.0 * PI * r / spacing).ceil() as usize).max(16);
            for t in 0..k {
                let th = 2.0 * PI * t as f64 / k as f64;
                out.push((c.0 + r * th.cos(), c.1 + r * th.sin()));
            }
        };
        let mut out = Vec::new();
        match *self {
            Region::Disk { center, radius } => circle(center, radius, &mut out),
            Region::Annulus { center, inner, outer } => {
                circle(center, inner, &mut out);
                circle(center, outer, &mut out);
            }
            Region::Metric(m) => {
                let k = ((2.0 * PI * m.euclid_bound / spacing).ceil() as usize).max(16);
                for t in 0..k {
                    let th = 2.0 * PI * t as f64 / k as f64;
                    let (c, s) = (th.cos(), th.sin());
                    let at = |rho: f64| m.distance.at(m.center.0 + rho * c, m.center.1 + rho * s);
                    let (mut lo, mut hi) = (0.0, m.euclid_bound);
                    if at(hi) <= m.radius {
                        out.push((m.center.0 + hi * c, m.center.1 + hi * s));
                        continue;
                    }
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        if at(mid) <= m.radius {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    out.push((m.center.0 + lo * c, m.center.1 + lo * s));
                }
            }
        }
        out
    }
}

/// Sub-grid index range covering `[c − r, c + r]` at spacing `s`, aligned to multiples of `s`.
fn span(c: f64, r: f64, s: f64) -> std::ops::RangeInclusive<i64> {
    ((c - r) / s).ceil() as i64..=((c + r) / s).floor() as i64
}

/// Oversampling factor relative to the field's native spacing.
pub const OVERSAMPLE: f64 = 4.0;

/// Maximum of `|field|` over the region: every 4× sub-grid sample inside the
/// region plus a dense set of points on its boundary. Bilinear lattice fields
/// only need the lattice nodes inside.
pub fn sup_on_region(field: &impl ScalarField, region: &Region) -> Result<f64> {
    let fine = field.spacing() / OVERSAMPLE;
    if let Some(h) = field.bilinear_lattice() {
        if let Some(best) = interior_sup(field, region, h) {
            return Ok(boundary_sup(field, region, fine, best));
        }
    }
    match interior_sup(field, region, fine) {
        Some(best) => Ok(boundary_sup(field, region, fine, best)),
        None => Err(Error::EmptyRegion {
            radius: region.outer_radius(),
            spacing: fine,
        }),
    }
}

fn interior_sup(field: &impl ScalarField, region: &Region, s: f64) -> Option<f64> {
    let (cx, cy) = region.center();
    let r = region.outer_radius();
    let mut best = None::<f64>;
    for j in span(cy, r, s) {
        let y = j as f64 * s;
        for i in span(cx, r, s) {
            let x = i as f64 * s;
            if region.contains(x, y) {
                let v = field.eval(x, y).abs();
                best = Some(best.map_or(v, |b| b.max(v)));
            }
        }
    }
    best
}

fn boundary_sup(field: &impl ScalarField, region: &Region, s: f64, mut best: f64) -> f64 {
    for (x, y) in region.boundary_points(s) {
        best = best.max(field.eval(x, y).abs());
    }
    best
}

/// `∫_region f dA` by cell quadrature at spacing `s`: interior cells by the
/// midpoint rule, cells cut by the boundary by 4×4 sub-sampling.
pub fn integrate_region(region: &Region, s: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let (cx, cy) = region.center();
    let r = region.outer_radius() + s;
    let j_lo = ((cy - r) / s).floor() as i64;
    let j_hi = ((cy + r) / s).ceil() as i64;
    let i_lo = ((cx - r) / s).floor() as i64;
    let i_hi = ((cx + r) / s).ceil() as i64;
    let mut total = 0.0;
    let mut any = false;
    for j in j_lo..j_hi {
        let y0 = j as f64 * s;
        let mut row = 0.0;
        for i in i_lo..i_hi {
            let x0 = i as f64 * s;
            let corners = [
                region.contains(x0, y0),
                region.contains(x0 + s, y0),
                region.contains(x0, y0 + s),
                region.contains(x0 + s, y0 + s),
            ];
            let mid_in = region.contains(x0 + 0.5 * s, y0 + 0.5 * s);
            let inside = corners.iter().filter(|&&c| c).count();
            if inside == 4 && mid_in {
                row += f(x0 + 0.5 * s, y0 + 0.5 * s) * s * s;
                any = true;
            } else if inside > 0 || mid_in {
                const K: usize = 4;
                let ss = s / K as f64;
                for b in 0..K {
                    for a in 0..K {
                        let x = x0 + (a as f64 + 0.5) * ss;
                        let y = y0 + (b as f64 + 0.5) * ss;
                        if region.contains(x, y) {
                            row += f(x, y) * ss * ss;
                            any = true;
                        }
                    }
                }
            }
        }
        total += row;
    }
    if !any {
        return Err(Error::EmptyRegion {
            radius: region.outer_radius(),
            spacing: s,
        });
    }
    Ok(total)
}

/// `‖field‖_{L^q(region)}` with Lebesgue measure; `qexp = ∞` gives the sup.
pub fn lq_norm_on_region(field: &impl ScalarField, region: &Region, qexp: f64) -> Result<f64> {
    if qexp.is_infinite() {
        return sup_on_region(field, region);
    }
    if !(qexp >= 1.0) {
        return Err(Error::validation(format!("L^q exponent {qexp} must be ≥ 1")));
    }
    let s = field.spacing() / OVERSAMPLE;
    let integral = integrate_region(region, s, |x, y| field.eval(x, y).abs().powf(qexp))?;
    Ok(integral.powf(1.0 / qexp))
}

/// Flat torus distance from `p` to the node `(x, y)`; used by tests and checks.
pub fn flat_torus_distance(p: (f64, f64), x: f64, y: f64) -> f64 {
    wrap_delta(x - p.0).hypot(wrap_delta(y - p.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> ConformalMetric {
        make_metric(Profile::Flat, n).unwrap()
    }

    #[test]
    fn flat_metric_constants() {
        let m = flat(64);
        assert_eq!(m.q_minus, 1.0);
        assert_eq!(m.q_plus, 1.0);
        assert!((m.volume - 1.0).abs() < 1e-14);
        assert!((m.alpha0 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn wave_metric_extrema_and_volume() {
        let m = make_metric(Profile::wave(0.2), 256).unwrap();
        let h = m.h();
        // analytic extrema 0.8 and 1.2; allow one grid sample of drift
        let slope = 0.2 * 2.0 * PI * h;
        assert!((m.q_minus - 0.8).abs() <= slope, "{}", m.q_minus);
        assert!((m.q_plus - 1.2).abs() <= slope, "{}", m.q_plus);
        assert!((m.volume - 1.0).abs() < 1e-10);
        assert!(m.alpha0 > 0.0 && m.alpha0 <= 0.2);
    }

    #[test]
    fn rejects_small_grid_and_nonpositive_factor() {
        assert!(make_metric(Profile::Flat, 8).unwrap_err().is_validation());
        let err = make_metric(Profile::wave(1.5), 32).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn flat_geodesic_matches_torus_distance() {
        let m = flat(64);
        let h = m.h();
        for p in [(0.3, 0.6), (0.0, 0.0), (0.917, 0.051)] {
            let d = geodesic_distance(&m, p).unwrap();
            let mut worst: f64 = 0.0;
            for j in 0..64 {
                for i in 0..64 {
                    let (x, y) = d.node(i, j);
                    worst = worst.max((d.at(i, j) - flat_torus_distance(p, x, y)).abs());
                }
            }
            assert!(worst <= 2.0 * h, "p={p:?} worst={worst}");
        }
    }

    #[test]
    fn constant_factor_scales_distance() {
        let m = make_metric(Profile::Constant { value: 4.0 }, 64).unwrap();
        let h = m.h();
        let p = (0.25, 0.4);
        let d = geodesic_distance(&m, p).unwrap();
        for j in (0..64).step_by(5) {
            for i in (0..64).step_by(3) {
                let (x, y) = d.node(i, j);
                let e = 2.0 * flat_torus_distance(p, x, y);
                assert!((d.at(i, j) - e).abs() <= 2.0 * h, "{} vs {}", d.at(i, j), e);
            }
        }
    }

    #[test]
    fn distance_vanishes_at_grid_source() {
        let m = make_metric(Profile::wave(0.2), 32).unwrap();
        let d = geodesic_distance(&m, (0.25, 0.5)).unwrap();
        assert_eq!(d.at(8, 16), 0.0);
        assert!(d.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn local_ball_agrees_with_full_field() {
        let m = make_metric(Profile::wave(0.2), 128).unwrap();
        let p = (0.31, 0.72);
        let r = 0.08;
        let ball = MetricDisk::new(&m, p, r).unwrap();
        let full = geodesic_distance(&m, p).unwrap();
        let full_ball = MetricDisk::from_field(full, p, r, m.q_minus);
        for k in 0..200 {
            let t = k as f64 * 0.37;
            let rho = 0.07 * ((k % 17) as f64 / 16.0);
            let (x, y) = (p.0 + rho * t.cos(), p.1 + rho * t.sin());
            let a = ball.distance.at(x, y);
            let b = full_ball.distance.at(x, y);
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn sup_constant_field() {
        let f = GridField::torus(64, |_, _| -3.5);
        for region in [
            Region::disk((0.5, 0.5), 0.1),
            Region::annulus((0.1, 0.9), 0.05, 0.12),
        ] {
            assert!((sup_on_region(&f, &region).unwrap() - 3.5).abs() < 1e-15);
        }
    }

    #[test]
    fn sup_with_interior_maximiser() {
        let f = GridField::torus(256, |x, _| (2.0 * PI * x).sin());
        let s = sup_on_region(&f, &Region::disk((0.25, 0.5), 0.1)).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_region_is_an_error() {
        let f = GridField::torus(16, |x, _| x);
        let err = sup_on_region(&f, &Region::annulus((0.5, 0.5), 0.001, 0.0011)).unwrap_err();
        assert!(matches!(err, Error::EmptyRegion { .. }));
    }

    #[test]
    fn lq_of_zero_and_constant() {
        let z = GridField::torus(64, |_, _| 0.0);
        assert_eq!(lq_norm_on_region(&z, &Region::disk((0.5, 0.5), 0.1), 2.0).unwrap(), 0.0);
        let one = GridField::torus(256, |_, _| 1.0);
        let v = lq_norm_on_region(&one, &Region::disk((0.5, 0.5), 0.1), 2.0).unwrap();
        let e = (PI * 0.01_f64).sqrt();
        assert!((v - e).abs() / e < 0.01);
    }

    #[test]
    fn metric_length_pinching() {
        let m = make_metric(Profile::wave(0.2), 64).unwrap();
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|k| {
                let t = k as f64 / 49.0;
                (0.1 + 0.8 * t, 0.5 + 0.3 * (5.0 * t).sin())
            })
            .collect();
        let euclid: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
        let metric = m.polyline_length(&pts);
        assert!(metric >= m.q_minus.sqrt() * euclid - 1e-12);
        assert!(metric <= m.q_plus.sqrt() * euclid + 1e-12);
    }
}
