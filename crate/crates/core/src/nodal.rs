//! Nodal sets by marching squares: segments, lengths, singular points and
//! circle intersection counts.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{wrap_delta, GridField, ScalarField};
use crate::surface::ConformalMetric;

pub type Point = (f64, f64);

/// A straight piece of the zero set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.b.0 - self.a.0).hypot(self.b.1 - self.a.1)
    }

    /// Length of the part inside the closed disk `|z − c| ≤ r`.
    pub fn length_in_disk(&self, c: Point, r: f64) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let (fx, fy) = (self.a.0 - c.0, self.a.1 - c.1);
        let a = dx * dx + dy * dy;
        if a == 0.0 {
            return 0.0;
        }
        let b = 2.0 * (fx * dx + fy * dy);
        let cc = fx * fx + fy * fy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc <= 0.0 {
            return 0.0;
        }
        let sq = disc.sqrt();
        let t0 = ((-b - sq) / (2.0 * a)).max(0.0);
        let t1 = ((-b + sq) / (2.0 * a)).min(1.0);
        if t1 <= t0 {
            0.0
        } else {
            (t1 - t0) * a.sqrt()
        }
    }

    /// Length of the part inside the half-open square `[x, x+s) × [y, y+s)`.
    pub fn length_in_square(&self, x: f64, y: f64, s: f64) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for (p, d, lo, hi) in [(self.a.0, dx, x, x + s), (self.a.1, dy, y, y + s)] {
            if d == 0.0 {
                // an axis-parallel segment on the closing edge is excluded
                if p < lo || p >= hi {
                    return 0.0;
                }
            } else {
                let (u, v) = ((lo - p) / d, (hi - p) / d);
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
        }
        if t1 <= t0 {
            0.0
        } else {
            (t1 - t0) * self.length()
        }
    }

    /// Points where the segment meets the circle `|z − c| = r`; a tangency
    /// yields one point.
    fn circle_hits(&self, c: Point, r: f64, out: &mut Vec<Point>) {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let (fx, fy) = (self.a.0 - c.0, self.a.1 - c.1);
        let a = dx * dx + dy * dy;
        if a == 0.0 {
            return;
        }
        let b = 2.0 * (fx * dx + fy * dy);
        let cc = fx * fx + fy * fy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc < 0.0 {
            return;
        }
        let sq = disc.sqrt();
        let mut push = |t: f64| {
            if (0.0..=1.0).contains(&t) {
                out.push((self.a.0 + t * dx, self.a.1 + t * dy));
            }
        };
        if sq == 0.0 {
            push(-b / (2.0 * a));
        } else {
            push((-b - sq) / (2.0 * a));
            push((-b + sq) / (2.0 * a));
        }
    }
}

/// Zero set of a sampled field as straight segments.
#[derive(Clone, Debug, Default)]
pub struct NodalSet {
    pub segments: Vec<Segment>,
    pub singular_points: Vec<Point>,
    /// Whether coordinates live on the unit torus.
    pub periodic: bool,
    pub euclidean_length: f64,
    pub metric_length: Option<f64>,
    index: Option<BucketIndex>,
}

impl NodalSet {
    pub fn from_segments(segments: Vec<Segment>, periodic: bool) -> Self {
        let euclidean_length = segments.iter().map(Segment::length).sum();
        Self {
            segments,
            singular_points: Vec::new(),
            periodic,
            euclidean_length,
            metric_length: None,
            index: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Builds a spatial index so disk and circle queries touch only nearby segments.
    pub fn indexed(mut self) -> Self {
        if !self.segments.is_empty() {
            self.index = Some(BucketIndex::new(&self.segments));
        }
        self
    }

    /// Axis-aligned bounding box `(min, max)` of all endpoints.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let mut it = self.segments.iter().flat_map(|s| [s.a, s.b]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| {
            ((lo.0.min(p.0), lo.1.min(p.1)), (hi.0.max(p.0), hi.1.max(p.1)))
        }))
    }

    /// Translates of the query point that can see the set: periodic images on
    /// the torus, the point itself otherwise.
    fn images(&self, c: Point, r: f64) -> Vec<Point> {
        if !self.periodic {
            return vec![c];
        }
        let base = (c.0.rem_euclid(1.0), c.1.rem_euclid(1.0));
        let mut out = Vec::with_capacity(9);
        for dy in [-1.0, 0.0, 1.0] {
            for dx in [-1.0, 0.0, 1.0] {
                let p = (base.0 + dx, base.1 + dy);
                // the fundamental domain is [0,1]² up to one cell of overhang
                if p.0 + r >= -0.01 && p.0 - r <= 1.01 && p.1 + r >= -0.01 && p.1 - r <= 1.01 {
                    out.push(p);
                }
            }
        }
        out
    }

    fn candidates(&self, c: Point, r: f64, visit: &mut dyn FnMut(&Segment)) {
        match &self.index {
            Some(ix) => ix.query(c, r, |k| visit(&self.segments[k])),
            None => self.segments.iter().for_each(visit),
        }
    }

    /// `H¹(Z ∩ D(c, r))`, Euclidean.
    pub fn length_in_disk(&self, c: Point, r: f64) -> f64 {
        let mut total = 0.0;
        for p in self.images(c, r) {
            self.candidates(p, r, &mut |s| total += s.length_in_disk(p, r));
        }
        total
    }

    /// Length inside the half-open square `[x, x+s) × [y, y+s)`.
    pub fn length_in_square(&self, x: f64, y: f64, s: f64) -> f64 {
        let c = (x + 0.5 * s, y + 0.5 * s);
        let r = s * std::f64::consts::FRAC_1_SQRT_2;
        let mut total = 0.0;
        self.candidates(c, r, &mut |seg| total += seg.length_in_square(x, y, s));
        total
    }

    /// Points where the set meets the circle; shared segment endpoints are
    /// merged so each crossing counts once.
    pub fn circle_points(&self, center: Point, radius: f64) -> Vec<Point> {
        let mut pts = Vec::new();
        for p in self.images(center, radius) {
            let shift = (center.0 - p.0, center.1 - p.1);
            let mut local = Vec::new();
            self.candidates(p, radius, &mut |s| s.circle_hits(p, radius, &mut local));
            pts.extend(local.into_iter().map(|q| (q.0 + shift.0, q.1 + shift.1)));
        }
        dedup_points(pts, 1e-9)
    }

    /// Number of crossings of the circle `|z − center| = radius`.
    pub fn circle_intersections(&self, center: Point, radius: f64) -> usize {
        self.circle_points(center, radius).len()
    }

    /// Segments as CSV `x0,y0,x1,y1`.
    pub fn segments_csv(&self) -> String {
        let mut s = String::from("x0,y0,x1,y1\n");
        for seg in &self.segments {
            let _ = writeln!(s, "{},{},{},{}", seg.a.0, seg.a.1, seg.b.0, seg.b.1);
        }
        s
    }

    pub fn singular_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.singular_points {
            let _ = writeln!(s, "{},{}", p.0, p.1);
        }
        s
    }

    pub fn write_csv(&self, segments: &Path, singular: &Path) -> Result<()> {
        std::fs::File::create(segments)?.write_all(self.segments_csv().as_bytes())?;
        std::fs::File::create(singular)?.write_all(self.singular_csv().as_bytes())?;
        Ok(())
    }
}

fn dedup_points(mut pts: Vec<Point>, tol: f64) -> Vec<Point> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts {
        let dup = out
            .iter()
            .rev()
            .take_while(|q| p.0 - q.0 <= tol)
            .any(|q| (p.1 - q.1).abs() <= tol);
        if !dup {
            out.push(p);
        }
    }
    out
}

/// Uniform bucket grid over segment bounding boxes.
#[derive(Clone, Debug)]
struct BucketIndex {
    lo: Point,
    size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn new(segments: &[Segment]) -> Self {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut mean_len = 0.0;
        for s in segments {
            for p in [s.a, s.b] {
                lo = (lo.0.min(p.0), lo.1.min(p.1));
                hi = (hi.0.max(p.0), hi.1.max(p.1));
            }
            mean_len += s.length();
        }
        mean_len /= segments.len() as f64;
        let extent = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-12);
        // a few segments per bucket, at most 512 buckets per side
        let size = (4.0 * mean_len).max(extent / 512.0).max(1e-12);
        let nx = ((hi.0 - lo.0) / size).floor() as usize + 1;
        let ny = ((hi.1 - lo.1) / size).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (k, s) in segments.iter().enumerate() {
            let i0 = ((s.a.0.min(s.b.0) - lo.0) / size).floor() as usize;
            let i1 = (((s.a.0.max(s.b.0) - lo.0) / size).floor() as usize).min(nx - 1);
            let j0 = ((s.a.1.min(s.b.1) - lo.1) / size).floor() as usize;
            let j1 = (((s.a.1.max(s.b.1) - lo.1) / size).floor() as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(k);
                }
            }
        }
        Self {
            lo,
            size,
            nx,
            ny,
            buckets,
        }
    }

    /// Visits each segment whose bucket meets the box around `D(c, r)` once.
    fn query(&self, c: Point, r: f64, mut visit: impl FnMut(usize)) {
        let range = |v: f64, lo: f64, n: usize| -> Option<(usize, usize)> {
            let a = ((v - r - lo) / self.size).floor();
            let b = ((v + r - lo) / self.size).floor();
            if b < 0.0 || a > (n - 1) as f64 {
                None
            } else {
                Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
            }
        };
        let (Some((i0, i1)), Some((j0, j1))) = (range(c.0, self.lo.0, self.nx), range(c.1, self.lo.1, self.ny)) else {
            return;
        };
        let single = i0 == i1 && j0 == j1;
        let mut seen: Vec<usize> = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &k in &self.buckets[j * self.nx + i] {
                    if single {
                        visit(k);
                    } else {
                        seen.push(k);
                    }
                }
            }
        }
        if !single {
            seen.sort_unstable();
            seen.dedup();
            seen.into_iter().for_each(visit);
        }
    }
}

// ---------------------------------------------------------------------------
// Marching squares
// ---------------------------------------------------------------------------

/// Node samples on a rectangular lattice.
struct Lattice<'a> {
    values: &'a [f64],
    nx: usize,
    ny: usize,
    origin: Point,
    h: f64,
    periodic: bool,
    /// Planar only: cells with a corner outside `|z| ≤ mask` are skipped.
    mask: Option<f64>,
}

impl Lattice<'_> {
    fn value(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if self.periodic {
            (i % self.nx, j % self.ny)
        } else {
            (i, j)
        };
        self.values[j * self.nx + i]
    }

    fn cells_x(&self) -> usize {
        if self.periodic {
            self.nx
        } else {
            self.nx - 1
        }
    }

    fn cells_y(&self) -> usize {
        if self.periodic {
            self.ny
        } else {
            self.ny - 1
        }
    }

    fn cell_in_mask(&self, i: usize, j: usize) -> bool {
        let Some(r) = self.mask else { return true };
        let r2 = r * r;
        [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(a, b)| {
            let x = self.origin.0 + (i + a) as f64 * self.h;
            let y = self.origin.1 + (j + b) as f64 * self.h;
            x * x + y * y <= r2
        })
    }

    fn cell_segments(&self, i: usize, j: usize, out: &mut Vec<Segment>) {
        if !self.cell_in_mask(i, j) {
            return;
        }
        let v = [
            self.value(i, j),
            self.value(i + 1, j),
            self.value(i + 1, j + 1),
            self.value(i, j + 1),
        ];
        // zeros count as positive
        let pos = v.map(|x| x >= 0.0);
        let code = pos.iter().enumerate().fold(0u8, |c, (k, &p)| c | ((p as u8) << k));
        if code == 0 || code == 15 {
            return;
        }
        let x0 = self.origin.0 + i as f64 * self.h;
        let y0 = self.origin.1 + j as f64 * self.h;
        let h = self.h;
        let corner = [(x0, y0), (x0 + h, y0), (x0 + h, y0 + h), (x0, y0 + h)];
        // edge e joins corner e and corner e+1 (bottom, right, top, left)
        let cut = |e: usize| -> Point {
            let (a, b) = (e, (e + 1) % 4);
            let t = v[a] / (v[a] - v[b]);
            (
                corner[a].0 + t * (corner[b].0 - corner[a].0),
                corner[a].1 + t * (corner[b].1 - corner[a].1),
            )
        };
        let crosses: Vec<usize> = (0..4).filter(|&e| pos[e] != pos[(e + 1) % 4]).collect();
        let mut push = |e: usize, f: usize| out.push(Segment { a: cut(e), b: cut(f) });
        if crosses.len() == 2 {
            push(crosses[0], crosses[1]);
            return;
        }
        // saddle: corners 0 and 2 share a sign
        let centre = 0.25 * (v[0] + v[1] + v[2] + v[3]);
        if (centre >= 0.0) == pos[0] {
            // the sign of corners 0 and 2 connects through the centre
            push(0, 1);
            push(2, 3);
        } else {
            push(3, 0);
            push(1, 2);
        }
    }

    fn extract(&self) -> Vec<Segment> {
        let rows: Vec<Vec<Segment>> = (0..self.cells_y())
            .into_par_iter()
            .map(|j| {
                let mut row = Vec::new();
                for i in 0..self.cells_x() {
                    self.cell_segments(i, j, &mut row);
                }
                row
            })
            .collect();
        rows.into_iter().flatten().collect()
    }
}

/// Marching-squares zero set of a gridded field.
pub fn extract_nodal_set(field: &GridField) -> NodalSet {
    let o = field.origin();
    let lat = Lattice {
        values: field.values(),
        nx: field.n(),
        ny: field.n(),
        origin: (o, o),
        h: field.h(),
        periodic: field.domain().is_periodic(),
        mask: field.mask_radius(),
    };
    NodalSet::from_segments(lat.extract(), lat.periodic)
}

/// Zero set of `f` over the square window `[x0, x0+side] × [y0, y0+side]`,
/// sampled with `n` cells per side.
pub fn extract_window(f: &(impl ScalarField + ?Sized), x0: f64, y0: f64, side: f64, n: usize) -> NodalSet {
    let h = side / n as f64;
    let m = n + 1;
    let values: Vec<f64> = (0..m * m)
        .into_par_iter()
        .map(|k| f.eval(x0 + (k % m) as f64 * h, y0 + (k / m) as f64 * h))
        .collect();
    let lat = Lattice {
        values: &values,
        nx: m,
        ny: m,
        origin: (x0, y0),
        h,
        periodic: false,
        mask: None,
    };
    NodalSet::from_segments(lat.extract(), false)
}

/// `(euclidean, metric)` length; metric length integrates `√q` along each
/// segment and equals the Euclidean length without a metric.
pub fn nodal_length(set: &NodalSet, metric: Option<&ConformalMetric>) -> (f64, f64) {
    let e = set.euclidean_length;
    let m = match metric {
        None => e,
        Some(g) if g.is_constant() => g.q_minus.sqrt() * e,
        Some(g) => set.segments.iter().map(|s| g.segment_length(s.a, s.b)).sum(),
    };
    (e, m)
}

/// Default thresholds for [`singular_points`].
pub const TOL_F: f64 = 1e-3;
pub const TOL_G: f64 = 1e-2;

/// Cells where both the field and its central-difference gradient are small
/// relative to their maxima, merged into cluster centroids.
pub fn singular_points(field: &GridField, tol_f: f64, tol_g: f64) -> Result<Vec<Point>> {
    if !(tol_f > 0.0 && tol_g > 0.0) {
        return Err(Error::validation("singular-point tolerances must be positive"));
    }
    let n = field.n();
    let h = field.h();
    let periodic = field.domain().is_periodic();
    let grad = |i: usize, j: usize| -> f64 {
        let (ii, jj) = (i as isize, j as isize);
        if periodic {
            let gx = field.at_wrapped(ii + 1, jj) - field.at_wrapped(ii - 1, jj);
            let gy = field.at_wrapped(ii, jj + 1) - field.at_wrapped(ii, jj - 1);
            gx.hypot(gy) / (2.0 * h)
        } else {
            let d = |a: usize, b: usize, c: usize, e: usize, span: f64| {
                (field.at(a, b) - field.at(c, e)) / (span * h)
            };
            let gx = match i {
                0 => d(1, j, 0, j, 1.0),
                _ if i == n - 1 => d(n - 1, j, n - 2, j, 1.0),
                _ => d(i + 1, j, i - 1, j, 2.0),
            };
            let gy = match j {
                0 => d(i, 1, i, 0, 1.0),
                _ if j == n - 1 => d(i, n - 1, i, n - 2, 1.0),
                _ => d(i, j + 1, i, j - 1, 2.0),
            };
            gx.hypot(gy)
        }
    };
    let g: Vec<f64> = (0..n * n).map(|k| grad(k % n, k / n)).collect();
    let fmax = field.max_abs();
    let gmax = g.iter().cloned().fold(0.0, f64::max);
    if fmax == 0.0 {
        return Ok(Vec::new());
    }
    let cells = if periodic { n } else { n - 1 };
    let corner = |i: usize, j: usize, a: usize, b: usize| ((i + a) % n, (j + b) % n);
    let mut flagged = vec![false; cells * cells];
    for j in 0..cells {
        for i in 0..cells {
            let mut fmin = f64::INFINITY;
            let mut gmin = f64::INFINITY;
            for (a, b) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (ci, cj) = corner(i, j, a, b);
                fmin = fmin.min(field.at(ci, cj).abs());
                gmin = gmin.min(g[cj * n + ci]);
            }
            flagged[j * cells + i] = fmin < tol_f * fmax && gmin < tol_g * gmax;
        }
    }
    // 8-connected clusters
    let mut label = vec![usize::MAX; cells * cells];
    let mut points = Vec::new();
    let o = field.origin();
    for start in 0..cells * cells {
        if !flagged[start] || label[start] != usize::MAX {
            continue;
        }
        let id = points.len();
        let mut stack = vec![(start % cells, start / cells, 0isize, 0isize)];
        label[start] = id;
        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
        while let Some((i, j, ui, uj)) = stack.pop() {
            // (ui, uj) is the unwrapped offset of this cell relative to `start`
            sx += ui as f64;
            sy += uj as f64;
            count += 1;
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    let (ni, nj) = if periodic {
                        (ni.rem_euclid(cells as isize), nj.rem_euclid(cells as isize))
                    } else if ni < 0 || nj < 0 || ni >= cells as isize || nj >= cells as isize {
                        continue;
                    } else {
                        (ni, nj)
                    };
                    let k = nj as usize * cells + ni as usize;
                    if flagged[k] && label[k] == usize::MAX {
                        label[k] = id;
                        stack.push((ni as usize, nj as usize, ui + di, uj + dj));
                    }
                }
            }
        }
        let (i0, j0) = (start % cells, start / cells);
        let cx = o + (i0 as f64 + 0.5 + sx / count as f64) * h;
        let cy = o + (j0 as f64 + 0.5 + sy / count as f64) * h;
        points.push(if periodic {
            (cx.rem_euclid(1.0), cy.rem_euclid(1.0))
        } else {
            (cx, cy)
        });
    }
    Ok(points)
}

/// Extraction plus singular points with the default tolerances.
pub fn analyze(field: &GridField) -> Result<NodalSet> {
    let mut set = extract_nodal_set(field);
    set.singular_points = singular_points(field, TOL_F, TOL_G)?;
    Ok(set)
}

/// Smallest distance between two points, periodic if requested.
pub fn point_distance(a: Point, b: Point, periodic: bool) -> f64 {
    if periodic {
        wrap_delta(a.0 - b.0).hypot(wrap_delta(a.1 - b.1))
    } else {
        (a.0 - b.0).hypot(a.1 - b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_lines() {
        for m in 1..=5 {
            let f = GridField::torus(256, |x, _| (2.0 * PI * m as f64 * x).sin());
            let set = extract_nodal_set(&f);
            let want = 2.0 * m as f64;
            assert!((set.euclidean_length - want).abs() < 1e-3 * want, "m={m}: {}", set.euclidean_length);
        }
    }

    #[test]
    fn clipping() {
        let s = Segment { a: (0.0, 0.5), b: (1.0, 0.5) };
        assert!((s.length_in_disk((0.5, 0.5), 0.1) - 0.2).abs() < 1e-14);
        assert!((s.length_in_square(0.25, 0.25, 0.5) - 0.5).abs() < 1e-14);
        // on the closing edge of a half-open square
        assert_eq!(s.length_in_square(0.0, 0.0, 0.5), 0.0);
        assert!((s.length_in_square(0.0, 0.5, 0.5) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dedup_merges_shared_endpoints() {
        let v = dedup_points(vec![(0.1, 0.2), (0.1, 0.2 + 1e-12), (0.3, 0.4)], 1e-9);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn saddle_resolution_follows_centre() {
        // corners + - + - with positive centre joins the positive diagonal
        let vals = [1.0, -1.0, -1.0, 1.0];
        let lat = Lattice {
            values: &vals,
            nx: 2,
            ny: 2,
            origin: (0.0, 0.0),
            h: 1.0,
            periodic: false,
            mask: None,
        };
        let segs = lat.extract();
        assert_eq!(segs.len(), 2);
    }
}
