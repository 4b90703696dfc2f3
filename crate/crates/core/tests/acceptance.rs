//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use ngl_core::crofton::{self, Kernel};
use ngl_core::eigen::{self, SolverOptions};
use ngl_core::experiment::{self, drift, ExperimentConfig, Runner};
use ngl_core::growth::{growth_exponent, Balls};
use ngl_core::harmonic::{self, CircleTrace};
use ngl_core::nodal::{self, NodalSet, Segment};
use ngl_core::surface::{make_metric, Profile};
use ngl_core::tiling::{self, TilingOptions, P_SIDE};
use ngl_core::{schrodinger, GridField, ScalarField};
use serde_json::json;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn criterion(id: u32, name: &'static str, f: impl FnOnce() -> Result<(bool, String), String>) -> Outcome {
    let t = Instant::now();
    let (pass, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let o = Outcome {
        id,
        name,
        pass,
        detail,
        elapsed: t.elapsed(),
    };
    println!(
        "[{}] {:>2} {:<28} {:>8.1}s  {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

fn e(x: impl std::fmt::Display) -> String {
    x.to_string()
}

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

fn flat_spectrum() -> Result<(bool, String), String> {
    let t = Instant::now();
    let metric = make_metric(Profile::Flat, 256).map_err(e)?;
    let ops = eigen::assemble_operators(&metric);
    let s = eigen::solve_spectrum(&ops, &SolverOptions::new(21, 1e-3)).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    let got: Vec<f64> = s.lambdas().into_iter().skip(1).take(20).collect();
    let want: Vec<f64> = eigen::flat_lattice_eigenvalues(4.0 * PI * PI * 26.0)
        .into_iter()
        .filter(|&l| l > 0.0)
        .take(20)
        .collect();
    let worst = got
        .iter()
        .zip(&want)
        .map(|(g, w)| (g - w).abs() / w)
        .fold(0.0, f64::max);
    let mult = |target: f64| got.iter().filter(|&&l| (l - target).abs() < 0.01 * target).count();
    let (m1, m2) = (mult(4.0 * PI * PI), mult(8.0 * PI * PI));
    Ok((
        got.len() == 20 && worst < 0.01 && m1 == 4 && m2 == 4 && secs < 60.0,
        format!("max rel err {worst:.2e}, mult(4π²)={m1}, mult(8π²)={m2}, solve {secs:.1}s"),
    ))
}

fn nodal_exactness() -> Result<(bool, String), String> {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for m in 1..=5 {
        let f = GridField::torus(256, |x, _| (2.0 * PI * m as f64 * x + 0.1).sin());
        let (l, _) = nodal::nodal_length(&nodal::extract_nodal_set(&f), None);
        worst = worst.max((l - 2.0 * m as f64).abs() / (2.0 * m as f64));
    }
    let r = 0.3;
    let f = GridField::torus(256, |x, y| (x - 0.5).hypot(y - 0.5) - r);
    let (c, _) = nodal::nodal_length(&nodal::extract_nodal_set(&f), None);
    let circ = (c - 2.0 * PI * r).abs() / (2.0 * PI * r);
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst < 1e-3 && circ < 5e-3 && secs < 10.0,
        format!("lines rel err {worst:.2e}, circle rel err {circ:.2e}"),
    ))
}

fn growth_closed_forms() -> Result<(bool, String), String> {
    let t = Instant::now();
    let alpha = 0.1;
    let mut worst: f64 = 0.0;
    for n in 0..=10 {
        let d = growth_exponent(&Power(n), (0.0, 0.0), 1.0, 0.5, Balls::Euclidean).map_err(e)?;
        let a = growth_exponent(&Power(n), (0.0, 0.0), 1.0, alpha, Balls::Euclidean).map_err(e)?;
        worst = worst
            .max((d - n as f64 * 2f64.ln()).abs())
            .max((a - n as f64 * (1.0 / alpha).ln()).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-6 && secs < 1.0, format!("max abs err {worst:.2e}")))
}

fn theorem1(runner: &mut Runner) -> Result<(bool, String), String> {
    let t = Instant::now();
    let table = runner.thm1_table().map_err(e)?;
    let (t30, t50) = (table.prefix(30), table.prefix(50));
    let finite = t50
        .rows
        .iter()
        .all(|r| r.lower_ratio.is_finite() && r.upper_ratio.is_finite() && r.lower_ratio > 0.0 && r.upper_ratio > 0.0);
    let (l30, u30) = t30.spreads();
    let (l50, u50) = t50.spreads();
    let (dl, du) = (drift(l30, l50), drift(u30, u50));
    let secs = t.elapsed().as_secs_f64();
    Ok((
        t50.rows.len() == 50 && finite && l30 < 100.0 && u30 < 100.0 && dl < 0.25 && du < 0.25 && secs < 900.0,
        format!("spreads 30: ({l30:.3}, {u30:.3}) 50: ({l50:.3}, {u50:.3}); changes ({dl:.3}, {du:.3})"),
    ))
}

fn a_trend(runner: &mut Runner) -> Result<(bool, String), String> {
    let q = runner.thm1_table().map_err(e)?.prefix(30).quartile_trend();
    Ok((q < 2.0, format!("last/first quartile mean A = {q:.3}")))
}

fn df_bound(runner: &mut Runner) -> Result<(bool, String), String> {
    let table = runner.thm1_table().map_err(e)?;
    let (c30, c50) = (
        table.prefix(30).donnelly_fefferman_constant(),
        table.prefix(50).donnelly_fefferman_constant(),
    );
    let d = drift(c30, c50);
    Ok((d < 0.2 && c30.is_finite(), format!("max β/√λ: 30 → {c30:.4}, 50 → {c50:.4}, drift {d:.3}")))
}

fn crofton_oracles(runner: &mut Runner) -> Result<(bool, String), String> {
    let t = Instant::now();
    let unit = NodalSet::from_segments(vec![Segment { a: (0.0, 0.0), b: (1.0, 0.0) }], false);
    let d = crofton::disk_average_length(&unit, 0.05, 100_000, 17).map_err(e)?;
    let seg_ok = (d.value - 1.0).abs() <= 3.0 * d.stderr && d.stderr < 0.01;
    let k = crofton::kinematic_constant_check(0.05, 400);
    let kin_ok = (k - 1.0).abs() < 5e-5;
    let spectrum = runner.spectrum().map_err(e)?.clone();
    let floor = ngl_core::growth::constant_floor(&spectrum);
    let mut agree = 0;
    let mut worst: f64 = 0.0;
    for (i, pair) in spectrum.nonconstant(floor).take(5).enumerate() {
        let set = nodal::extract_nodal_set(&pair.field).indexed();
        let mut ok = true;
        for kern in [Kernel::Disk, Kernel::Circle] {
            let est = crofton::run_kernel(kern, &set, 0.05, 20_000, 100 + i as u64).map_err(e)?;
            ok &= crofton::agrees(set.euclidean_length, &est);
            worst = worst.max((est.value - set.euclidean_length).abs() / set.euclidean_length);
        }
        agree += ok as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        seg_ok && kin_ok && agree == 5 && secs < 120.0,
        format!(
            "segment {:.4}±{:.4}, 4r check {k:.6}, eigenfunctions agreeing {agree}/5 (max rel dev {worst:.3})",
            d.value, d.stderr
        ),
    ))
}

fn tiling_structure(runner: &mut Runner, sizes: (usize, usize), m0: f64, a: f64) -> Result<(bool, String), String> {
    let opts = TilingOptions {
        a,
        k_max: 8,
        probes: 3,
    };
    let locals = runner.locals().map_err(e)?;
    let mut ok = true;
    let mut ratios = Vec::new();
    let mut worst_mismatch: f64 = 0.0;
    for l in locals {
        let d0 = tiling::default_delta0(l.beta_star);
        let mut state = tiling::init_tiling(&l.field, d0, m0, opts.clone()).map_err(e)?;
        state.run(&l.field).map_err(e)?;
        let set = nodal::extract_window(&l.field, -schrodinger::CONFIG_RADIUS, -schrodinger::CONFIG_RADIUS, P_SIDE, 128);
        let total = tiling::total_bound_report(&state, &set);
        let (slow, rapid) = state.area_partition();
        ok &= state.structural_bound_holds() && slow + rapid == state.p_area_units();
        ok &= total.mismatch < 0.01 && total.ratio.is_finite();
        worst_mismatch = worst_mismatch.max(total.mismatch);
        ratios.push(total.ratio);
    }
    let max = |n: usize| ratios[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (b, x) = (max(sizes.0), max(sizes.1));
    let d = drift(b, x);
    Ok((
        ok && ratios.len() == sizes.1 && d < 0.2,
        format!("max H¹/β*: {b:.5} → {x:.5} (drift {d:.3}), worst sum mismatch {worst_mismatch:.1e}"),
    ))
}

fn rapid_counts(runner: &mut Runner, sizes: (usize, usize), m0: f64, a: f64) -> Result<(bool, String), String> {
    let locals = runner.locals().map_err(e)?;
    let mut ratios = Vec::new();
    for l in locals {
        let d = tiling::default_delta0(l.beta_star);
        ratios.push(schrodinger::count_rapid_disks(&l.field, d, m0, a).map_err(e)?.ratio);
    }
    let max = |n: usize| ratios[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (b, x) = (max(sizes.0), max(sizes.1));
    let d = drift(b, x);
    let c = experiment::constant_field_rapid(m0, a, tiling::default_delta0(1.0)).map_err(e)?;
    let const_ok = c["rapid_at_M0"] == json!(0) && c["rapid_at_zero"] == c["disks"];
    Ok((
        ratios.len() == sizes.1 && b.is_finite() && d < 0.2 && const_ok,
        format!("max N_rapid/β*: {b:.3} → {x:.3} (drift {d:.3}); constant field {c}"),
    ))
}

/// `C(2p, p)` by an independent running product in `u128`.
fn central_binomial(p: u32) -> u128 {
    (1..=p as u128).fold(1u128, |acc, k| acc * (p as u128 + k) / k)
}

fn lemma_321() -> Result<(bool, String), String> {
    let mut holds = 0;
    for k in 0..100 {
        let tr = experiment::random_trace(2024, k).map_err(e)?;
        holds += harmonic::growth_vs_signs_check(&tr, 0.25).map_err(e)?.holds as usize;
    }
    let mut powers = 0;
    for n in 1..=10u32 {
        let tr = CircleTrace::from_fn(1024, |t| (n as f64 * t).cos()).map_err(e)?;
        let c = harmonic::growth_vs_signs_check(&tr, 0.25).map_err(e)?;
        powers += (c.holds && c.n_v == 2 * n as usize && (c.lhs_ratio - 2f64.powi(n as i32)).abs() < 1e-9 * 2f64.powi(n as i32))
            as usize;
    }
    let exact = (0..=30u32).all(|p| {
        let r = harmonic::robertson_constant(p);
        r.value == (4u128.pow(p) + central_binomial(p)).to_string() && r.within_bound
    });
    Ok((
        holds == 100 && powers == 10 && exact,
        format!("random traces {holds}/100, Re zⁿ {powers}/10, c(p) exact for p ≤ 30: {exact}"),
    ))
}

fn carleman_suite() -> Result<(bool, String), String> {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    let v = experiment::carleman_suite(&cfg, 0).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    let pairs = v["lemma_pairs"].as_u64().unwrap_or(0);
    let margin = v["lemma_min_margin"].as_f64().unwrap_or(f64::NEG_INFINITY);
    let cf = v["closed_form_error"].as_f64().unwrap_or(f64::INFINITY);
    let c1 = v["c1"].as_array().cloned().unwrap_or_default();
    let base = c1.first().and_then(|c| c["empirical_constant"].as_f64()).unwrap_or(f64::NAN);
    let ext = c1.last().and_then(|c| c["empirical_constant"].as_f64()).unwrap_or(f64::NAN);
    let d = v["c1_drift"].as_f64().unwrap_or(f64::INFINITY);
    Ok((
        pairs >= 60 && margin >= -1e-6 && cf < 1e-8 && base > 0.0 && ext > 0.0 && d < 0.2 && secs < 300.0,
        format!("{pairs} pairs, min rel margin {margin:.3e}, closed form err {cf:.1e}, c10 {base:.1} → {ext:.1} (drift {d:.3})"),
    ))
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{"schema":"ngl.experiment/1","grid_n":256,"eigen_count":9,"family_sizes":[4,8],
            "local_family_sizes":[2,4],"crofton_samples":2000,"sample_grid_m":6,
            "carleman":{"lemma_family":2,"c1_family_sizes":[2,4]}}"#,
    )
    .expect("small config is valid")
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Result<(bool, String), String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(e)?;
    let tmp = tempfile::tempdir().map_err(e)?;
    let run = |name: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let dir = tmp.path().join(name);
        pool.install(|| -> Result<(), String> {
            let mut r = Runner::new(small_config(), &dir).map_err(e)?;
            r.run(experiment::Command::All).map_err(e)?;
            Ok(())
        })?;
        Ok(tree(&dir))
    };
    let (a, b) = (run("first")?, run("second")?);
    let same = a == b;
    Ok((same && !a.is_empty(), format!("{} files, byte-identical: {same}", a.len())))
}

fn main() {
    let filter: Option<u32> = std::env::var("NGL_CRITERION").ok().and_then(|s| s.parse().ok());
    let want = |id: u32| filter.is_none_or(|f| f == id);
    let mut results = Vec::new();
    if want(1) {
        results.push(criterion(1, "flat spectrum", flat_spectrum));
    }
    if want(2) {
        results.push(criterion(2, "nodal length exactness", nodal_exactness));
    }
    if want(3) {
        results.push(criterion(3, "growth closed forms", growth_closed_forms));
    }
    if (4..=9).any(want) {
        let tmp = tempfile::tempdir().expect("tempdir");
        let cfg = ExperimentConfig::from_json(
            r#"{"schema":"ngl.experiment/1","grid_n":520,"eigen_count":51,
                "family_sizes":[30,50],"local_family_sizes":[15,30]}"#,
        )
        .expect("family config is valid");
        let (m0, a) = (cfg.m0, cfg.a);
        let mut runner = Runner::new(cfg, tmp.path()).expect("runner");
        let t = Instant::now();
        let solved = runner.spectrum().map(|s| s.pairs.len());
        println!("       family spectrum: {solved:?} pairs in {:.1}s", t.elapsed().as_secs_f64());
        let solve_time = t.elapsed();
        if want(4) {
            let mut o = criterion(4, "theorem 1 ratios", || theorem1(&mut runner));
            o.elapsed += solve_time;
            if o.elapsed.as_secs_f64() >= 900.0 {
                o.pass = false;
            }
            results.push(o);
        }
        if want(5) {
            results.push(criterion(5, "A(λ) trend", || a_trend(&mut runner)));
        }
        if want(6) {
            results.push(criterion(6, "growth/√λ bound", || df_bound(&mut runner)));
        }
        if want(7) {
            results.push(criterion(7, "crofton oracles", || crofton_oracles(&mut runner)));
        }
        if want(8) {
            results.push(criterion(8, "tiling structure", || tiling_structure(&mut runner, (15, 30), m0, a)));
        }
        if want(9) {
            results.push(criterion(9, "rapid-disk counts", || rapid_counts(&mut runner, (15, 30), m0, a)));
        }
    }
    if want(10) {
        results.push(criterion(10, "sign changes vs growth", lemma_321));
    }
    if want(11) {
        results.push(criterion(11, "weighted inequalities", carleman_suite));
    }
    if want(12) {
        results.push(criterion(12, "determinism", determinism));
    }
    let failed: Vec<u32> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
