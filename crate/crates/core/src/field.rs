//! Sampled scalar fields on the unit torus or on a centred planar square.
//!
//! Nodes sit at `origin + i*h` for `i in 0..n`, with `h = side / n`. Values are
//! stored row-major with `x` varying fastest: `values[j * n + i]` is the sample
//! at `(origin + i*h, origin + j*h)`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    /// `[0,1)²` with periodic identification.
    Torus,
    /// `[-side/2, side/2)²`.
    Planar { side: f64 },
}

impl Domain {
    pub fn side(&self) -> f64 {
        match *self {
            Domain::Torus => 1.0,
            Domain::Planar { side } => side,
        }
    }

    pub fn origin(&self) -> f64 {
        match *self {
            Domain::Torus => 0.0,
            Domain::Planar { side } => -0.5 * side,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Domain::Torus)
    }
}

/// Anything that can be evaluated at a point and knows its natural sampling
/// scale. Region sups and norms are written against this trait so analytic
/// planar fields are sampled exactly while gridded fields interpolate.
pub trait ScalarField: Sync {
    fn eval(&self, x: f64, y: f64) -> f64;

    /// Spacing of the underlying samples; region quadrature oversamples it.
    fn spacing(&self) -> f64;

    fn is_periodic(&self) -> bool;

    /// `Some(h)` when `eval` is the bilinear interpolant of samples at the
    /// lattice `hℤ²`. Such a field attains its extremes over a region at
    /// lattice nodes or on the region's boundary.
    fn bilinear_lattice(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    domain: Domain,
    values: Vec<f64>,
    /// Planar only: samples outside the mask are not part of the domain.
    mask_radius: Option<f64>,
}

impl GridField {
    pub fn new(n: usize, domain: Domain, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::validation("grid_n must be at least 2"));
        }
        if values.len() != n * n {
            return Err(Error::validation(format!(
                "expected {} samples, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite sample at index {k}")));
        }
        if let Domain::Planar { side } = domain {
            if !(side > 0.0 && side.is_finite()) {
                return Err(Error::validation("planar side must be positive"));
            }
        }
        Ok(Self {
            n,
            domain,
            values,
            mask_radius: None,
        })
    }

    /// Samples `f` at every node. Panics if `f` produces a non-finite value.
    pub fn from_fn(n: usize, domain: Domain, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = domain.side() / n as f64;
        let o = domain.origin();
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            let y = o + j as f64 * h;
            for i in 0..n {
                values.push(f(o + i as f64 * h, y));
            }
        }
        Self::new(n, domain, values).expect("from_fn produced an invalid field")
    }

    pub fn torus(n: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(n, Domain::Torus, f)
    }

    pub fn planar(n: usize, side: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(n, Domain::Planar { side }, f)
    }

    /// Restricts a planar field to the disk `|z| <= radius`.
    pub fn with_disk_mask(mut self, radius: f64) -> Self {
        self.mask_radius = Some(radius);
        self
    }

    pub fn mask_radius(&self) -> Option<f64> {
        self.mask_radius
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn h(&self) -> f64 {
        self.domain.side() / self.n as f64
    }

    pub fn origin(&self) -> f64 {
        self.domain.origin()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        let o = self.origin();
        (o + i as f64 * h, o + j as f64 * h)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    /// Node value with periodic wrap on the torus and clamping on the plane.
    #[inline]
    pub fn at_wrapped(&self, i: isize, j: isize) -> f64 {
        let n = self.n as isize;
        let (i, j) = if self.domain.is_periodic() {
            (i.rem_euclid(n), j.rem_euclid(n))
        } else {
            (i.clamp(0, n - 1), j.clamp(0, n - 1))
        };
        self.values[(j * n + i) as usize]
    }

    /// Whether `(x, y)` lies in the field's domain (always true on the torus).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self.domain {
            Domain::Torus => true,
            Domain::Planar { side } => {
                let half = 0.5 * side;
                let inside = x >= -half && x <= half && y >= -half && y <= half;
                inside && self.mask_radius.is_none_or(|r| x * x + y * y <= r * r)
            }
        }
    }

    /// Bilinear interpolation.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let h = self.h();
        let o = self.origin();
        let u = (x - o) / h;
        let v = (y - o) / h;
        if self.domain.is_periodic() {
            let i = u.floor();
            let j = v.floor();
            let tx = u - i;
            let ty = v - j;
            let (i, j) = (i as isize, j as isize);
            bilerp(
                self.at_wrapped(i, j),
                self.at_wrapped(i + 1, j),
                self.at_wrapped(i, j + 1),
                self.at_wrapped(i + 1, j + 1),
                tx,
                ty,
            )
        } else {
            let last = (self.n - 2) as f64;
            let i = u.floor().clamp(0.0, last);
            let j = v.floor().clamp(0.0, last);
            let tx = (u - i).clamp(0.0, 1.0);
            let ty = (v - j).clamp(0.0, 1.0);
            let (i, j) = (i as usize, j as usize);
            bilerp(
                self.at(i, j),
                self.at(i + 1, j),
                self.at(i, j + 1),
                self.at(i + 1, j + 1),
                tx,
                ty,
            )
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            domain: self.domain,
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask_radius: self.mask_radius,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Writes the `.gfd` dump: one JSON header line, then `n*n` little-endian f64.
    pub fn write_gfd(&self, mut w: impl Write) -> Result<()> {
        let (tag, side) = match self.domain {
            Domain::Torus => ("torus", 1.0),
            Domain::Planar { side } => ("planar", side),
        };
        let side = serde_json::to_string(&side)?;
        writeln!(w, "{{\"grid_n\":{},\"domain\":\"{}\",\"side\":{}}}", self.n, tag, side)?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_gfd(r: impl Read) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            grid_n: usize,
            domain: String,
            side: f64,
        }
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        let domain = match header.domain.as_str() {
            "torus" => Domain::Torus,
            "planar" => Domain::Planar { side: header.side },
            other => return Err(Error::validation(format!("unknown domain tag {other:?}"))),
        };
        let count = header.grid_n * header.grid_n;
        let mut raw = vec![0u8; count * 8];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(header.grid_n, domain, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_gfd(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_gfd(std::fs::File::open(path)?)
    }
}

impl ScalarField for GridField {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y)
    }

    fn spacing(&self) -> f64 {
        self.h()
    }

    fn is_periodic(&self) -> bool {
        self.domain.is_periodic()
    }

    fn bilinear_lattice(&self) -> Option<f64> {
        self.domain.is_periodic().then(|| self.h())
    }
}

/// Re-samples a field at a different scale: sups and quadrature over regions
/// smaller than the native grid read the interpolant more densely.
pub struct Refined<'a, F: ?Sized> {
    pub field: &'a F,
    pub spacing: f64,
}

impl<'a, F: ScalarField + ?Sized> Refined<'a, F> {
    pub fn new(field: &'a F, spacing: f64) -> Self {
        Self { field, spacing }
    }
}

impl<F: ScalarField + ?Sized> ScalarField for Refined<'_, F> {
    fn eval(&self, x: f64, y: f64) -> f64 {
        self.field.eval(x, y)
    }

    fn spacing(&self) -> f64 {
        self.spacing
    }

    fn is_periodic(&self) -> bool {
        self.field.is_periodic()
    }
}

#[inline]
pub(crate) fn bilerp(f00: f64, f10: f64, f01: f64, f11: f64, tx: f64, ty: f64) -> f64 {
    let a = f00 + (f10 - f00) * tx;
    let b = f01 + (f11 - f01) * tx;
    a + (b - a) * ty
}

/// Flat distance on the unit torus.
pub fn torus_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = wrap_delta(a.0 - b.0);
    let dy = wrap_delta(a.1 - b.1);
    dx.hypot(dy)
}

/// Representative of `d` modulo 1 in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_delta(d: f64) -> f64 {
    d - (d + 0.5).floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn torus_interpolation_is_periodic() {
        let f = GridField::torus(32, |x, y| (2.0 * PI * x).sin() + (2.0 * PI * y).cos());
        for &(x, y) in &[(0.013, 0.77), (0.5, 0.999), (0.97, 0.03)] {
            let a = f.sample(x, y);
            assert!((a - f.sample(x + 1.0, y)).abs() < 1e-12);
            assert!((a - f.sample(x, y - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_reproduces_nodes() {
        let f = GridField::planar(16, 2.0, |x, y| x * x - y);
        for (i, j) in [(0, 0), (3, 7), (15, 15), (8, 1)] {
            let (x, y) = f.node(i, j);
            assert!((f.sample(x, y) - f.at(i, j)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let err = GridField::new(2, Domain::Torus, vec![0.0, 1.0, f64::NAN, 2.0]).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn gfd_round_trip_and_header() {
        let f = GridField::planar(8, 6.0, |x, y| x + 2.0 * y);
        let mut buf = Vec::new();
        f.write_gfd(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..header_end]).unwrap(),
            r#"{"grid_n":8,"domain":"planar","side":6.0}"#
        );
        assert_eq!(buf.len(), header_end + 1 + 64 * 8);
        let g = GridField::read_gfd(buf.as_slice()).unwrap();
        assert_eq!(f.values(), g.values());
        assert_eq!(g.domain(), Domain::Planar { side: 6.0 });
    }

    #[test]
    fn wrap_delta_range() {
        for d in [-1.7, -0.5, -0.2, 0.0, 0.49, 0.5, 3.25] {
            let w = wrap_delta(d);
            assert!((-0.5..0.5).contains(&w), "{d} -> {w}");
            assert!(((d - w) - (d - w).round()).abs() < 1e-12);
        }
    }
}
