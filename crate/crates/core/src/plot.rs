//! Minimal deterministic SVG rendering for experiment artifacts.

use std::fmt::Write;

use crate::nodal::NodalSet;
use crate::schrodinger::RapidReport;
use crate::tiling::{Kind, TilingState};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

/// Plot area mapping data coordinates `[lo, hi]` onto the page, `y` up.
pub struct Canvas {
    lo: (f64, f64),
    hi: (f64, f64),
    body: String,
}

fn num(v: f64) -> String {
    format!("{v:.3}")
}

impl Canvas {
    pub fn new(lo: (f64, f64), hi: (f64, f64)) -> Self {
        let fix = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = fix(lo.0, hi.0);
        let (y0, y1) = fix(lo.1, hi.1);
        Self {
            lo: (x0, y0),
            hi: (x1, y1),
            body: String::new(),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (
            MARGIN + (x - self.lo.0) / (self.hi.0 - self.lo.0) * w,
            SIZE - MARGIN - (y - self.lo.1) / (self.hi.1 - self.lo.1) * w,
        )
    }

    fn scale(&self) -> f64 {
        (SIZE - 2.0 * MARGIN) / (self.hi.0 - self.lo.0)
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, width: f64) {
        let (p, q) = (self.px(a.0, a.1), self.px(b.0, b.1));
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"#,
            num(p.0),
            num(p.1),
            num(q.0),
            num(q.1),
            num(width)
        );
    }

    pub fn rect(&mut self, origin: (f64, f64), side: f64, fill: &str) {
        let p = self.px(origin.0, origin.1 + side);
        let s = side * self.scale();
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="black" stroke-width="0.2"/>"#,
            num(p.0),
            num(p.1),
            num(s),
            num(s)
        );
    }

    pub fn circle(&mut self, c: (f64, f64), r: f64, stroke: &str, fill: &str) {
        let p = self.px(c.0, c.1);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" stroke="{stroke}" fill="{fill}" stroke-width="0.5"/>"#,
            num(p.0),
            num(p.1),
            num(r * self.scale())
        );
    }

    pub fn dot(&mut self, c: (f64, f64), fill: &str) {
        let p = self.px(c.0, c.1);
        let _ = writeln!(self.body, r#"<circle cx="{}" cy="{}" r="3" fill="{fill}"/>"#, num(p.0), num(p.1));
    }

    pub fn nodal(&mut self, set: &NodalSet, stroke: &str) {
        for s in &set.segments {
            self.line(s.a, s.b, stroke, 1.0);
        }
    }

    /// Closes the document with axes, tick labels at the ends and axis names.
    pub fn finish(self, xlabel: &str, ylabel: &str, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
        let (b, t) = (SIZE - MARGIN, MARGIN);
        let _ = writeln!(s, r#"<g stroke="black" stroke-width="1"><line x1="{MARGIN}" y1="{b}" x2="{b}" y2="{b}"/><line x1="{MARGIN}" y1="{b}" x2="{MARGIN}" y2="{t}"/></g>"#);
        let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">{}</text>"#, b + 14.0, num(self.lo.0));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, b, b + 14.0, num(self.hi.0));
        let _ = writeln!(s, r#"<text x="{}" y="{b}" text-anchor="end">{}</text>"#, MARGIN - 4.0, num(self.lo.1));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, t + 4.0, num(self.hi.1));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, SIZE / 2.0, SIZE - 12.0);
        let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#, SIZE / 2.0, SIZE / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle">{title}</text>"#, SIZE / 2.0);
        let _ = writeln!(s, "</g>");
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

/// Nodal segments over the unit square (torus) or their bounding box.
pub fn nodal_svg(set: &NodalSet, title: &str) -> String {
    let (lo, hi) = if set.periodic {
        ((0.0, 0.0), (1.0, 1.0))
    } else {
        set.bounds().unwrap_or(((0.0, 0.0), (1.0, 1.0)))
    };
    let mut c = Canvas::new(lo, hi);
    c.nodal(set, "navy");
    for &p in &set.singular_points {
        c.dot(p, "crimson");
    }
    c.finish("x", "y", title)
}

/// Slow squares in one fill, remaining rapid squares in another, nodal overlay.
pub fn tiling_svg(state: &TilingState, set: &NodalSet, title: &str) -> String {
    let r = crate::schrodinger::CONFIG_RADIUS;
    let mut c = Canvas::new((-r, -r), (r, r));
    let last = state.level();
    for (sq, kind) in state.squares() {
        if kind == Kind::Rapid && sq.level != last {
            continue;
        }
        let fill = match kind {
            Kind::Slow => "#cfe8cf",
            Kind::Rapid => "#f2b8b8",
        };
        c.rect(state.origin(&sq), state.delta(sq.level), fill);
    }
    c.circle((0.0, 0.0), r, "gray", "none");
    c.nodal(set, "navy");
    c.finish("x", "y", title)
}

/// Probe disks with their annuli; rapid disks filled.
pub fn disks_svg(report: &RapidReport, a: f64, title: &str) -> String {
    let r = crate::schrodinger::CONFIG_RADIUS;
    let mut c = Canvas::new((-r, -r), (r, r));
    for p in &report.probes {
        let fill = if p.check.is_rapid { "#f2b8b8" } else { "none" };
        c.circle(p.z, p.delta, "black", fill);
        c.circle(p.z, (1.0 - 2.0 * a) * p.delta, "gray", "none");
        c.circle(p.z, (1.0 - a) * p.delta, "gray", "none");
    }
    c.finish("x", "y", title)
}

/// One dot per `(x, y)` pair.
pub fn scatter_svg(points: &[(f64, f64)], xlabel: &str, ylabel: &str, title: &str) -> String {
    let fin = points.iter().filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in fin.clone() {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    let pad = |a: f64, b: f64| {
        let d = 0.05 * (b - a).max(1e-9);
        (a - d, b + d)
    };
    let (x0, x1) = pad(lo.0, hi.0);
    let (y0, y1) = pad(lo.1.min(0.0), hi.1);
    let mut c = Canvas::new((x0, y0), (x1, y1));
    for &p in fin {
        c.dot(p, "navy");
    }
    c.finish(xlabel, ylabel, title)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_nodal_set_has_axes_only() {
        let s = nodal_svg(&NodalSet::default(), "empty");
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s.matches("<line").count(), 2);
    }

    #[test]
    fn scatter_has_one_dot_per_point() {
        let s = scatter_svg(&[(1.0, 2.0), (3.0, 1.0), (5.0, 4.0)], "lambda", "A", "A(lambda)");
        assert_eq!(s.matches(r#"r="3""#).count(), 3);
        assert!(s.contains(">lambda<") && s.contains(">A<"));
    }
}
