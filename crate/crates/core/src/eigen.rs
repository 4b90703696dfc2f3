//! Generalized eigenproblem `L φ = λ Q φ` on the torus grid, where `L` is the
//! negated periodic 5-point Laplacian and `Q = diag(q)`. This is the discrete
//! form of `Δ_g φ + λ φ = 0` in the global conformal chart.
//!
//! The solver is a blocked LOBPCG iteration with soft locking, preconditioned
//! by the FFT inverse of `L + σ q̄`.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, GridField};
use crate::surface::ConformalMetric;

/// The discrete pair `(L, Q)`.
#[derive(Clone, Debug)]
pub struct Operators {
    n: usize,
    h: f64,
    q: Vec<f64>,
}

impl Operators {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Diagonal of `Q`.
    pub fn mass(&self) -> &[f64] {
        &self.q
    }

    /// `out = L x`.
    pub fn apply_l(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv_h2 = 1.0 / (self.h * self.h);
        for j in 0..n {
            let up = if j + 1 == n { 0 } else { j + 1 };
            let down = if j == 0 { n - 1 } else { j - 1 };
            let row = &x[j * n..(j + 1) * n];
            let row_up = &x[up * n..(up + 1) * n];
            let row_down = &x[down * n..(down + 1) * n];
            let o = &mut out[j * n..(j + 1) * n];
            for i in 0..n {
                let left = if i == 0 { row[n - 1] } else { row[i - 1] };
                let right = if i + 1 == n { row[0] } else { row[i + 1] };
                o[i] = (4.0 * row[i] - left - right - row_up[i] - row_down[i]) * inv_h2;
            }
        }
    }

    pub fn apply_q(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &v), &q) in out.iter_mut().zip(x).zip(&self.q) {
            *o = q * v;
        }
    }

    /// Row `k` of `L` as `(column, value)` pairs.
    pub fn l_row(&self, k: usize) -> Vec<(usize, f64)> {
        let n = self.n;
        let (i, j) = (k % n, k / n);
        let c = 1.0 / (self.h * self.h);
        let idx = |a: usize, b: usize| b * n + a;
        vec![
            (k, 4.0 * c),
            (idx((i + n - 1) % n, j), -c),
            (idx((i + 1) % n, j), -c),
            (idx(i, (j + n - 1) % n), -c),
            (idx(i, (j + 1) % n), -c),
        ]
    }

    /// `‖L x − λ Q x‖₂ / ‖x‖₂`.
    pub fn residual(&self, lambda: f64, x: &[f64]) -> f64 {
        let mut lx = vec![0.0; x.len()];
        self.apply_l(x, &mut lx);
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&l, &v), &q) in lx.iter().zip(x).zip(&self.q) {
            let r = l - lambda * q * v;
            num += r * r;
            den += v * v;
        }
        (num / den).sqrt()
    }

    /// Eigenvalue of `L` on the Fourier mode `(m, n)`.
    pub fn symbol(&self, m: i64, k: i64) -> f64 {
        let t = 2.0 * PI * self.h;
        (2.0 / (self.h * self.h)) * (2.0 - (t * m as f64).cos() - (t * k as f64).cos())
    }
}

pub fn assemble_operators(metric: &ConformalMetric) -> Operators {
    Operators {
        n: metric.grid_n(),
        h: metric.h(),
        q: metric.q().values().to_vec(),
    }
}

/// One eigenpair, sup-normalized with its largest-magnitude sample positive.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub field: GridField,
    /// `‖Δ_h φ + λ q φ‖₂ / ‖φ‖₂` on the grid.
    pub residual: f64,
    /// Factor `s` such that `s · field` has unit `Q`-norm (`Σ q φ² = 1`).
    pub q_scale: f64,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub pairs: Vec<EigenPair>,
}

impl Spectrum {
    pub fn lambdas(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    /// Pairs with `λ` above `floor`, i.e. the nonconstant eigenfunctions.
    pub fn nonconstant(&self, floor: f64) -> impl Iterator<Item = &EigenPair> {
        self.pairs.iter().filter(move |p| p.lambda > floor)
    }

    /// `#{λ ≤ bound}`.
    pub fn count_below(&self, bound: f64) -> usize {
        self.pairs.iter().filter(|p| p.lambda <= bound).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub count: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra block columns carried beyond `count`.
    pub guard: usize,
    /// Shift in the preconditioner `(L + σ q̄)^{-1}`.
    pub shift: f64,
}

impl SolverOptions {
    pub fn new(count: usize, tol: f64) -> Self {
        Self {
            count,
            tol,
            max_iter: 400,
            seed: 0x5eed,
            guard: (count / 4).max(6),
            shift: 50.0,
        }
    }
}

/// FFT solve with the shifted flat Laplacian.
struct Preconditioner {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    inv_symbol: Vec<f64>,
}

impl Preconditioner {
    fn new(ops: &Operators, shift: f64) -> Self {
        let n = ops.n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let qbar = ops.q.iter().sum::<f64>() / ops.q.len() as f64;
        let one_d: Vec<f64> = (0..n)
            .map(|k| (2.0 / (ops.h * ops.h)) * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
            .collect();
        let mut inv_symbol = vec![0.0; n * n];
        for ky in 0..n {
            for kx in 0..n {
                // normalisation of the two unnormalised inverse transforms folded in
                inv_symbol[ky * n + kx] = 1.0 / ((one_d[kx] + one_d[ky] + shift * qbar) * (n * n) as f64);
            }
        }
        Self {
            n,
            fwd,
            inv,
            inv_symbol,
        }
    }

    fn apply(&self, r: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let n = self.n;
        buf.clear();
        buf.extend(r.iter().map(|&v| Complex64::new(v, 0.0)));
        tmp.resize(n * n, Complex64::new(0.0, 0.0));
        self.fwd.process(buf);
        transpose(buf, tmp, n);
        self.fwd.process(tmp);
        // tmp is indexed [kx][ky]
        for kx in 0..n {
            for ky in 0..n {
                tmp[kx * n + ky] *= self.inv_symbol[ky * n + kx];
            }
        }
        self.inv.process(tmp);
        transpose(tmp, buf, n);
        self.inv.process(buf);
        for (o, c) in out.iter_mut().zip(buf.iter()) {
            *o = c.re;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 32;
    for jb in (0..n).step_by(B) {
        for ib in (0..n).step_by(B) {
            for j in jb..(jb + B).min(n) {
                for i in ib..(ib + B).min(n) {
                    dst[i * n + j] = src[j * n + i];
                }
            }
        }
    }
}

/// `aᵀ b` for tall column-major blocks.
fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (n, ka, kb) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = DMatrix::zeros(ka, kb);
    if n == 0 || ka == 0 || kb == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            ka,
            n,
            kb,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            ka as isize,
        );
    }
    c
}

/// `a c` for a tall block `a` and a small coefficient matrix `c`.
fn combine(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), c.nrows());
    let (n, k, m) = (a.nrows(), a.ncols(), c.ncols());
    let mut out = DMatrix::zeros(n, m);
    if n == 0 || k == 0 || m == 0 {
        return out;
    }
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            1,
            n as isize,
            c.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            n as isize,
        );
    }
    out
}

fn apply_block(ops: &Operators, x: &DMatrix<f64>, which: Op) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let src = x.column(c);
        let mut dst = out.column_mut(c);
        let s = src.as_slice();
        let d = dst.as_mut_slice();
        match which {
            Op::L => ops.apply_l(s, d),
            Op::Q => ops.apply_q(s, d),
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Op {
    L,
    Q,
}

/// Solves `G_A c = θ G_B c` for a small dense pencil, ascending.
fn dense_pencil(ga: &DMatrix<f64>, gb: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let gb_sym = (gb + gb.transpose()) * 0.5;
    let chol = gb_sym.cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let m = &linv * ga * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let dim = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(dim, order.len());
    for (c, &k) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(k));
    }
    let coeffs = linv.transpose() * vecs;
    if coeffs.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((vals, coeffs))
}

/// `Q`-orthonormalises the columns of `w` in place (Cholesky QR), also
/// transforming the companion blocks. Returns `false` if `w` is rank deficient.
fn q_orthonormalize(ops: &Operators, w: &mut DMatrix<f64>, qw: &mut DMatrix<f64>) -> bool {
    let g = gram(w, qw);
    let g = (&g + g.transpose()) * 0.5;
    let Some(chol) = g.cholesky() else { return false };
    let Some(linv) = chol.l().try_inverse() else { return false };
    let t = linv.transpose();
    if t.iter().any(|v| !v.is_finite()) {
        return false;
    }
    *w = combine(w, &t);
    *qw = apply_block(ops, w, Op::Q);
    true
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (c, &k) in cols.iter().enumerate() {
        out.set_column(c, &m.column(k));
    }
    out
}

/// The `count` smallest eigenpairs of `(L, Q)`.
pub fn solve_spectrum(ops: &Operators, opts: &SolverOptions) -> Result<Spectrum> {
    let n = ops.dim();
    if opts.count == 0 {
        return Err(Error::validation("eigenpair count must be positive"));
    }
    if opts.count > n / 4 {
        return Err(Error::validation(format!(
            "requested {} eigenpairs but at most grid_n²/4 = {} are allowed",
            opts.count,
            n / 4
        )));
    }
    if !(opts.tol >= 1e-10) {
        return Err(Error::validation("solver tolerance must be ≥ 1e-10"));
    }
    let k = (opts.count + opts.guard).min(n / 2);
    let pre = Preconditioner::new(ops, opts.shift);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() - 0.5);
    let mut qx = apply_block(ops, &x, Op::Q);
    if !q_orthonormalize(ops, &mut x, &mut qx) {
        return Err(Error::Numerical("degenerate random start block".into()));
    }
    let mut lx = apply_block(ops, &x, Op::L);
    let (theta, c) = dense_pencil(&gram(&x, &lx), &gram(&x, &qx))
        .ok_or_else(|| Error::Numerical("initial Rayleigh-Ritz failed".into()))?;
    x = combine(&x, &c);
    lx = combine(&lx, &c);
    qx = combine(&qx, &c);
    let mut lambda = theta[..k].to_vec();

    let mut p: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;
    let mut best_residual = f64::INFINITY;
    let mut buf = Vec::new();
    let mut tmp = Vec::new();

    for _ in 0..opts.max_iter {
        // residuals
        let mut r = lx.clone();
        let mut res = vec![0.0; k];
        for c in 0..k {
            let mut col = r.column_mut(c);
            col.axpy(-lambda[c], &qx.column(c), 1.0);
            res[c] = col.norm() / x.column(c).norm();
        }
        let worst_wanted = res[..opts.count].iter().cloned().fold(0.0, f64::max);
        best_residual = best_residual.min(worst_wanted);
        if worst_wanted <= opts.tol {
            return Ok(finish(ops, &x, &lambda, opts.count));
        }
        // soft locking: only unconverged columns get new directions
        let active: Vec<usize> = (0..k).filter(|&c| res[c] > opts.tol).collect();

        let r_act = select_columns(&r, &active);
        let mut w = DMatrix::zeros(n, active.len());
        for c in 0..active.len() {
            let src = r_act.column(c);
            let mut dst = w.column_mut(c);
            pre.apply(src.as_slice(), dst.as_mut_slice(), &mut buf, &mut tmp);
        }
        // Q-orthogonalise against X, twice for stability
        for _ in 0..2 {
            let proj = gram(&qx, &w);
            w -= combine(&x, &proj);
        }
        let mut qw = apply_block(ops, &w, Op::Q);
        if !q_orthonormalize(ops, &mut w, &mut qw) {
            p = None;
            continue;
        }
        let lw = apply_block(ops, &w, Op::L);

        let mut pcur = p.take().map(|(pp, lp, qp)| {
            (
                select_columns(&pp, &active),
                select_columns(&lp, &active),
                select_columns(&qp, &active),
            )
        });
        if let Some((pp, lp, qp)) = pcur.as_mut() {
            let g = gram(pp, qp);
            let g = (&g + g.transpose()) * 0.5;
            match g.cholesky().and_then(|ch| ch.l().try_inverse()) {
                Some(linv) => {
                    let t = linv.transpose();
                    *pp = combine(pp, &t);
                    *lp = combine(lp, &t);
                    *qp = combine(qp, &t);
                }
                None => pcur = None,
            }
        }

        let a = active.len();
        let rr = |with_p: bool| -> Option<(Vec<f64>, DMatrix<f64>)> {
            let pc = if with_p { pcur.as_ref().map_or(0, |t| t.0.ncols()) } else { 0 };
            let dim = k + a + pc;
            let mut ga = DMatrix::zeros(dim, dim);
            let mut gb = DMatrix::zeros(dim, dim);
            let blocks_l: Vec<&DMatrix<f64>> = if pc > 0 {
                let t = pcur.as_ref().unwrap();
                vec![&lx, &lw, &t.1]
            } else {
                vec![&lx, &lw]
            };
            let blocks_q: Vec<&DMatrix<f64>> = if pc > 0 {
                let t = pcur.as_ref().unwrap();
                vec![&qx, &qw, &t.2]
            } else {
                vec![&qx, &qw]
            };
            let basis: Vec<&DMatrix<f64>> = if pc > 0 {
                let t = pcur.as_ref().unwrap();
                vec![&x, &w, &t.0]
            } else {
                vec![&x, &w]
            };
            let offs: Vec<usize> = {
                let mut o = vec![0];
                for b in &basis {
                    o.push(o.last().unwrap() + b.ncols());
                }
                o
            };
            for bi in 0..basis.len() {
                for bj in bi..basis.len() {
                    let sa = gram(basis[bi], blocks_l[bj]);
                    let sb = gram(basis[bi], blocks_q[bj]);
                    ga.view_mut((offs[bi], offs[bj]), (sa.nrows(), sa.ncols())).copy_from(&sa);
                    gb.view_mut((offs[bi], offs[bj]), (sb.nrows(), sb.ncols())).copy_from(&sb);
                    if bi != bj {
                        ga.view_mut((offs[bj], offs[bi]), (sa.ncols(), sa.nrows()))
                            .copy_from(&sa.transpose());
                        gb.view_mut((offs[bj], offs[bi]), (sb.ncols(), sb.nrows()))
                            .copy_from(&sb.transpose());
                    }
                }
            }
            dense_pencil(&ga, &gb)
        };
        let (with_p, (theta, coeffs)) = match rr(true) {
            Some(sol) => (pcur.is_some(), sol),
            None => match rr(false) {
                Some(sol) => (false, sol),
                None => return Err(Error::Numerical("Rayleigh-Ritz pencil is not positive definite".into())),
            },
        };

        let cx = coeffs.view((0, 0), (k, k)).into_owned();
        let cw = coeffs.view((k, 0), (a, k)).into_owned();
        let (mut np, mut nlp, mut nqp) = (combine(&w, &cw), combine(&lw, &cw), combine(&qw, &cw));
        if with_p {
            let (pp, lp, qp) = pcur.as_ref().unwrap();
            let cp = coeffs.view((k + a, 0), (pp.ncols(), k)).into_owned();
            np += combine(pp, &cp);
            nlp += combine(lp, &cp);
            nqp += combine(qp, &cp);
        }
        x = combine(&x, &cx) + &np;
        lx = combine(&lx, &cx) + &nlp;
        qx = combine(&qx, &cx) + &nqp;
        lambda = theta[..k].to_vec();
        p = Some((np, nlp, nqp));
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        best_residual,
    })
}

fn finish(ops: &Operators, x: &DMatrix<f64>, lambda: &[f64], count: usize) -> Spectrum {
    let mut pairs = Vec::with_capacity(count);
    let mut qx = vec![0.0; ops.dim()];
    for c in 0..count {
        let col: Vec<f64> = x.column(c).iter().cloned().collect();
        ops.apply_q(&col, &mut qx);
        let qnorm = col.iter().zip(&qx).map(|(a, b)| a * b).sum::<f64>().sqrt();
        let (_, &peak) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .unwrap();
        let s = 1.0 / peak;
        let values: Vec<f64> = col.iter().map(|v| v * s).collect();
        let residual = ops.residual(lambda[c].max(0.0), &values);
        let field = GridField::new(ops.n, Domain::Torus, values).expect("finite eigenvector");
        pairs.push(EigenPair {
            lambda: lambda[c].max(0.0),
            field,
            residual,
            q_scale: peak.abs() / qnorm,
        });
    }
    Spectrum { pairs }
}

/// Closed-form flat-torus eigenfunction `cos(2π(mx + ny) − θ)`, so `θ = π/2`
/// gives `sin(2π(mx + ny))`.
pub fn analytic_eigenpair(m: i64, n: i64, phase: f64, grid_n: usize) -> EigenPair {
    let field = GridField::torus(grid_n, |x, y| {
        (2.0 * PI * (m as f64 * x + n as f64 * y) - phase).cos()
    });
    let peak = field.max_abs();
    let field = if m == 0 && n == 0 && peak == 0.0 {
        GridField::torus(grid_n, |_, _| 1.0)
    } else {
        field.scaled(1.0 / peak)
    };
    let lambda = 4.0 * PI * PI * (m * m + n * n) as f64;
    let ops = Operators {
        n: grid_n,
        h: 1.0 / grid_n as f64,
        q: vec![1.0; grid_n * grid_n],
    };
    let residual = ops.residual(lambda, field.values());
    let qnorm = field.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    EigenPair {
        lambda,
        field,
        residual,
        q_scale: 1.0 / qnorm,
    }
}

/// Smallest grid satisfying `≥ 10` samples per wavelength with the 8× margin.
pub fn resolution_floor(lambda_max: f64, q_plus: f64) -> usize {
    let k = (10.0 * lambda_max.max(0.0).sqrt() * q_plus.sqrt() / (2.0 * PI)).ceil() as usize;
    (k * 8).max(128)
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub lambda: f64,
    pub residual: f64,
    pub file: String,
}

/// Writes one `.gfd` per eigenfunction and an `index.json` listing them.
pub fn write_cache(spectrum: &Spectrum, dir: &Path) -> Result<Vec<CacheEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::new();
    for (k, pair) in spectrum.pairs.iter().enumerate() {
        let file = format!("phi_{k:04}.gfd");
        pair.field.save(dir.join(&file))?;
        index.push(CacheEntry {
            lambda: pair.lambda,
            residual: pair.residual,
            file,
        });
    }
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(dir.join("index.json"), json + "\n")?;
    Ok(index)
}

/// Reads a cache written by [`write_cache`]; `q` restores the Q-normalisation.
pub fn read_cache(dir: &Path, metric: &ConformalMetric) -> Result<Spectrum> {
    let index: Vec<CacheEntry> = serde_json::from_str(&std::fs::read_to_string(dir.join("index.json"))?)?;
    let mut pairs = Vec::with_capacity(index.len());
    for e in index {
        let field = GridField::load(dir.join(&e.file))?;
        if field.n() != metric.grid_n() {
            return Err(Error::validation("cached spectrum grid does not match the metric"));
        }
        let qnorm = field
            .values()
            .iter()
            .zip(metric.q().values())
            .map(|(v, q)| q * v * v)
            .sum::<f64>()
            .sqrt();
        pairs.push(EigenPair {
            lambda: e.lambda,
            residual: e.residual,
            q_scale: 1.0 / qnorm,
            field,
        });
    }
    Ok(Spectrum { pairs })
}

/// `λ` values of the flat torus `4π²(m² + n²)` up to `bound`, with multiplicity.
pub fn flat_lattice_eigenvalues(bound: f64) -> Vec<f64> {
    let kmax = (bound.sqrt() / (2.0 * PI)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for m in -kmax..=kmax {
        for n in -kmax..=kmax {
            let l = 4.0 * PI * PI * (m * m + n * n) as f64;
            if l <= bound {
                out.push(l);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Q-weighted Gram matrix of the returned basis (identity up to solver error).
pub fn q_gram(spectrum: &Spectrum, ops: &Operators) -> DMatrix<f64> {
    let k = spectrum.pairs.len();
    let cols: Vec<DVector<f64>> = spectrum
        .pairs
        .iter()
        .map(|p| DVector::from_iterator(ops.dim(), p.field.values().iter().map(|v| v * p.q_scale)))
        .collect();
    DMatrix::from_fn(k, k, |a, b| {
        cols[a]
            .iter()
            .zip(cols[b].iter())
            .zip(&ops.q)
            .map(|((x, y), q)| x * y * q)
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{make_metric, Profile};

    #[test]
    fn laplacian_rows_sum_to_zero_and_mass_is_q() {
        let m = make_metric(Profile::wave(0.2), 16).unwrap();
        let ops = assemble_operators(&m);
        for k in 0..ops.dim() {
            let s: f64 = ops.l_row(k).iter().map(|e| e.1).sum();
            assert!(s.abs() < 1e-9);
        }
        assert_eq!(ops.mass(), m.q().values());
        let ones = vec![1.0; ops.dim()];
        let mut out = vec![0.0; ops.dim()];
        ops.apply_l(&ones, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn fourier_modes_diagonalise_flat_stencil() {
        let m = make_metric(Profile::Flat, 32).unwrap();
        let ops = assemble_operators(&m);
        for (a, b) in [(1, 0), (2, 3), (5, 1)] {
            let f = GridField::torus(32, |x, y| (2.0 * PI * (a as f64 * x + b as f64 * y)).cos());
            let r = ops.residual(ops.symbol(a, b), f.values());
            assert!(r < 1e-8, "({a},{b}) residual {r}");
        }
    }

    #[test]
    fn analytic_pairs() {
        let p = analytic_eigenpair(1, 0, PI / 2.0, 64);
        assert!((p.lambda - 4.0 * PI * PI).abs() < 1e-12);
        let h = 1.0 / 64.0;
        for i in 0..64 {
            let e = (2.0 * PI * i as f64 * h).sin();
            assert!((p.field.at(i, 7) - e).abs() < 1e-12);
        }
        let p = analytic_eigenpair(3, 4, 0.0, 64);
        assert!((p.lambda - 986.960_440_108_935_8).abs() < 1e-9);
    }

    #[test]
    fn analytic_residual_matches_symbol_deficit() {
        let n = 256;
        let p = analytic_eigenpair(1, 0, PI / 2.0, n);
        let th = 2.0 * PI / n as f64;
        let bound = p.lambda * th * th / 12.0 * 1.1;
        assert!(p.residual <= bound, "{} > {}", p.residual, bound);
        assert!(p.residual > 0.5 * bound / 1.1);
    }

    #[test]
    fn resolution_rule() {
        assert_eq!(resolution_floor(100.0, 1.0), 128);
        let l = 4.0 * PI * PI * 17.0;
        // ceil(10·√l/2π) = ceil(41.23) = 42
        assert_eq!(resolution_floor(l, 1.0), 336);
    }

    #[test]
    fn small_flat_spectrum() {
        let m = make_metric(Profile::Flat, 32).unwrap();
        let ops = assemble_operators(&m);
        let spec = solve_spectrum(&ops, &SolverOptions::new(9, 1e-6)).unwrap();
        assert!(spec.pairs[0].lambda.abs() < 1e-6);
        let c = spec.pairs[0].field.values()[0];
        assert!(spec.pairs[0].field.values().iter().all(|v| (v - c).abs() < 1e-6));
        let want = ops.symbol(1, 0);
        for p in &spec.pairs[1..5] {
            assert!((p.lambda - want).abs() / want < 1e-8);
        }
        let want = ops.symbol(1, 1);
        for p in &spec.pairs[5..9] {
            assert!((p.lambda - want).abs() / want < 1e-8);
        }
        for p in &spec.pairs {
            assert!(p.residual <= 1e-6);
            assert!((p.field.max_abs() - 1.0).abs() < 1e-12);
        }
        let g = q_gram(&spec, &ops);
        assert!((g - DMatrix::identity(9, 9)).amax() < 1e-8);
    }

    #[test]
    fn rejects_bad_requests() {
        let m = make_metric(Profile::Flat, 16).unwrap();
        let ops = assemble_operators(&m);
        assert!(solve_spectrum(&ops, &SolverOptions::new(65, 1e-6)).unwrap_err().is_validation());
        assert!(solve_spectrum(&ops, &SolverOptions::new(4, 1e-12)).unwrap_err().is_validation());
    }

    #[test]
    fn iteration_cap_reports_best_residual() {
        let m = make_metric(Profile::wave(0.2), 32).unwrap();
        let ops = assemble_operators(&m);
        let mut opts = SolverOptions::new(6, 1e-10);
        opts.max_iter = 2;
        match solve_spectrum(&ops, &opts) {
            Err(Error::NoConvergence { iterations, best_residual }) => {
                assert_eq!(iterations, 2);
                assert!(best_residual.is_finite() && best_residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
