//! Experiment orchestration: versioned JSON configs, the command pipelines,
//! persisted result records and plot emission.
//!
//! Every artifact is written without timestamps and every reduction runs in
//! index order, so single-threaded reruns reproduce files byte for byte.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::carleman::{self, Source};
use crate::crofton::{self, Kernel};
use crate::eigen::{self, EigenPair, SolverOptions, Spectrum};
use crate::error::{Error, Result};
use crate::field::{torus_distance, GridField, ScalarField};
use crate::growth::{self, constant_floor, RatioTable};
use crate::harmonic::{self, CircleTrace};
use crate::nodal::{self, NodalSet, Segment};
use crate::plot;
use crate::schrodinger::{self, PlanarField, CONFIG_RADIUS};
use crate::surface::{make_metric, ConformalMetric, Profile};
use crate::tiling::{self, TilingOptions, P_SIDE};

pub const SCHEMA: &str = "ngl.experiment/1";

/// Weighted-inequality experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub delta: f64,
    /// Circumradius of the triangle of weight centres.
    pub center_radius: f64,
    /// Exponents for the centre-free weight sweep.
    pub t_values: Vec<f64>,
    /// Exponent for the weight with centres.
    pub t: f64,
    /// Test functions per weight in the lemma sweep.
    pub lemma_family: usize,
    /// Base and extended family sizes for the weighted estimate.
    pub c1_family_sizes: Vec<usize>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        Self {
            delta: 1e-3,
            center_radius: 0.01,
            t_values: vec![1.0, 5.0, 20.0],
            t: 2.0,
            lemma_family: 10,
            c1_family_sizes: vec![30, 60],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default = "defaults::profile")]
    pub profile: Profile,
    #[serde(default = "defaults::grid_n")]
    pub grid_n: usize,
    /// Eigenpairs to compute, the constant mode included.
    #[serde(default = "defaults::eigen_count")]
    pub eigen_count: usize,
    #[serde(default = "defaults::eigen_tol")]
    pub eigen_tol: f64,
    #[serde(default = "defaults::k0")]
    pub k0: f64,
    #[serde(default = "defaults::eps0")]
    pub eps0: f64,
    #[serde(rename = "M0", alias = "m0", default = "defaults::m0")]
    pub m0: f64,
    #[serde(default = "defaults::a")]
    pub a: f64,
    /// Level-0 square side; the largest admissible dyadic side when absent.
    #[serde(default)]
    pub delta0: Option<f64>,
    #[serde(default = "defaults::sample_grid_m")]
    pub sample_grid_m: usize,
    #[serde(default = "defaults::crofton_samples")]
    pub crofton_samples: usize,
    #[serde(default = "defaults::crofton_r")]
    pub crofton_r: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rho_plus: Option<f64>,
    #[serde(default)]
    pub rho_minus: Option<f64>,
    /// Base and extended sizes of the eigenfunction family.
    #[serde(default = "defaults::family_sizes")]
    pub family_sizes: Vec<usize>,
    /// Base and extended sizes of the localized family.
    #[serde(default = "defaults::local_family_sizes")]
    pub local_family_sizes: Vec<usize>,
    #[serde(default = "defaults::k_max")]
    pub k_max: u32,
    #[serde(default = "defaults::probes")]
    pub probes: usize,
    #[serde(default)]
    pub carleman: CarlemanConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

mod defaults {
    use crate::surface::Profile;
    pub fn profile() -> Profile {
        Profile::Flat
    }
    pub fn grid_n() -> usize {
        512
    }
    pub fn eigen_count() -> usize {
        31
    }
    pub fn eigen_tol() -> f64 {
        1e-3
    }
    pub fn k0() -> f64 {
        0.5
    }
    pub fn eps0() -> f64 {
        crate::schrodinger::EPS0
    }
    pub fn m0() -> f64 {
        10.0
    }
    pub fn a() -> f64 {
        0.1
    }
    pub fn sample_grid_m() -> usize {
        64
    }
    pub fn crofton_samples() -> usize {
        100_000
    }
    pub fn crofton_r() -> f64 {
        0.05
    }
    pub fn family_sizes() -> Vec<usize> {
        vec![30]
    }
    pub fn local_family_sizes() -> Vec<usize> {
        vec![15, 30]
    }
    pub fn k_max() -> u32 {
        8
    }
    pub fn probes() -> usize {
        3
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_value(json!({ "schema": SCHEMA })).expect("defaults deserialize")
    }
}

fn check_sizes(name: &str, sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::validation(format!("{name} needs positive entries")));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::validation(format!(
                "unsupported schema {:?}; expected {SCHEMA:?}",
                self.schema
            )));
        }
        if self.grid_n < 16 {
            return Err(Error::validation("grid_n must be at least 16"));
        }
        if self.eigen_count < 2 {
            return Err(Error::validation("eigen_count must include at least one nonconstant mode"));
        }
        if !(self.eigen_tol >= 1e-10) {
            return Err(Error::validation("eigen_tol must be ≥ 1e-10"));
        }
        if !(self.k0 > 0.0) || !(self.eps0 > 0.0) {
            return Err(Error::validation("k0 and eps0 must be positive"));
        }
        if !(self.m0 >= 0.0) {
            return Err(Error::validation("M0 must be non-negative"));
        }
        if !(self.a > 0.0 && self.a < 0.25) {
            return Err(Error::validation("a must lie in (0, 1/4)"));
        }
        if let Some(d) = self.delta0 {
            if !(d > 0.0 && d < CONFIG_RADIUS) {
                return Err(Error::validation("delta0 must lie in (0, 1/60)"));
            }
            let n = (P_SIDE / d).round();
            if (n * d - P_SIDE).abs() > 1e-12 * P_SIDE {
                return Err(Error::validation("delta0 must divide the square side 1/30"));
            }
        }
        if self.sample_grid_m < 2 {
            return Err(Error::validation("sample_grid_m must be at least 2"));
        }
        if self.crofton_samples == 0 || !(self.crofton_r > 0.0 && self.crofton_r < 0.5) {
            return Err(Error::validation("crofton needs samples > 0 and 0 < r < 1/2"));
        }
        check_sizes("family_sizes", &self.family_sizes)?;
        check_sizes("local_family_sizes", &self.local_family_sizes)?;
        let need = *self.family_sizes.last().unwrap().max(self.local_family_sizes.last().unwrap());
        if need > self.eigen_count - 1 {
            return Err(Error::validation(format!(
                "families need {need} nonconstant eigenpairs but eigen_count = {} gives {}",
                self.eigen_count,
                self.eigen_count - 1
            )));
        }
        if let (Some(p), Some(m)) = (self.rho_plus, self.rho_minus) {
            if !(0.0 < m && m < p && p < 0.5) {
                return Err(Error::validation("need 0 < rho_minus < rho_plus < 1/2"));
            }
        }
        if self.k_max > 40 || self.probes == 0 {
            return Err(Error::validation("need k_max ≤ 40 and probes ≥ 1"));
        }
        let c = &self.carleman;
        if !(c.delta > 0.0) || !(c.t >= 1.0) || c.t_values.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::validation("carleman needs delta > 0, t ≥ 1 and positive t_values"));
        }
        if c.center_radius * 3f64.sqrt() <= 2.0 * c.delta || c.center_radius > CONFIG_RADIUS {
            return Err(Error::validation(
                "carleman centres must be more than 2δ apart and inside the 1/60 disk",
            ));
        }
        check_sizes("carleman.c1_family_sizes", &c.c1_family_sizes)?;
        // the wavelength disks of the top mode must be resolved
        let lambda_top = 4.0 * PI * self.eigen_count as f64 / self.volume_estimate();
        let r = self.k0 / lambda_top.sqrt() * self.profile_q_minus().sqrt();
        if r < 10.0 / self.grid_n as f64 {
            return Err(Error::validation(format!(
                "grid_n = {} does not resolve wavelength disks for {} eigenpairs at k0 = {}; raise grid_n to {}",
                self.grid_n,
                self.eigen_count,
                self.k0,
                (10.0 / r).ceil() as usize
            )));
        }
        Ok(())
    }

    fn volume_estimate(&self) -> f64 {
        match self.profile {
            Profile::Constant { value } => value,
            _ => 1.0,
        }
    }

    fn profile_q_minus(&self) -> f64 {
        match self.profile {
            Profile::Flat => 1.0,
            Profile::Constant { value } => value.max(1e-12).min(1.0),
            Profile::Wave { amplitude, .. } => (1.0 - amplitude.abs()).max(1e-12),
            Profile::Exponential { amplitude } => (-amplitude.abs()).exp(),
        }
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        hash_value(&v)
    }
}

/// Keys are sorted by `serde_json`'s map, so semantically equal values hash
/// identically.
fn hash_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Relative change `|ext − base| / |base|`, zero when both vanish.
pub fn drift(base: f64, ext: f64) -> f64 {
    if base == ext {
        0.0
    } else {
        (ext - base).abs() / base.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalConstant {
    pub name: String,
    /// Which family the value was taken over.
    pub family: String,
    pub family_size: usize,
    pub value: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub summary: Value,
    pub constants: Vec<EmpiricalConstant>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Spectrum,
    Nodal,
    Growth,
    Thm1,
    Localize,
    Tile,
    Rapid,
    Crofton,
    Harmonic,
    Carleman,
    All,
}

impl Command {
    pub const EACH: [Command; 10] = [
        Command::Spectrum,
        Command::Nodal,
        Command::Growth,
        Command::Thm1,
        Command::Localize,
        Command::Tile,
        Command::Rapid,
        Command::Crofton,
        Command::Harmonic,
        Command::Carleman,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Nodal => "nodal",
            Command::Growth => "growth",
            Command::Thm1 => "thm1",
            Command::Localize => "localize",
            Command::Tile => "tile",
            Command::Rapid => "rapid",
            Command::Crofton => "crofton",
            Command::Harmonic => "harmonic",
            Command::Carleman => "carleman",
            Command::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::EACH
            .into_iter()
            .chain([Command::All])
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown command {s:?}")))
    }
}

/// Restricts the crofton command to one kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CroftonOverride {
    pub kernel: Option<Kernel>,
    pub r: Option<f64>,
    pub samples: Option<usize>,
}

/// One localized family member.
pub struct Local {
    pub index: usize,
    pub lambda: f64,
    pub anchor: (f64, f64),
    pub field: PlanarField,
    pub beta: f64,
    pub beta_star: f64,
}

/// Shared state for one run: config, output directory, lazily built inputs.
pub struct Runner {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub crofton: CroftonOverride,
    hash: String,
    metric: Option<ConformalMetric>,
    spectrum: Option<Spectrum>,
    locals: Option<Vec<Local>>,
    thm1: Option<RatioTable>,
    /// Whether the last spectrum load came from the cache.
    pub from_cache: bool,
}

impl Runner {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out)?;
        Ok(Self {
            hash: config.hash(),
            config,
            out,
            crofton: CroftonOverride::default(),
            metric: None,
            thm1: None,
            spectrum: None,
            locals: None,
            from_cache: false,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn metric(&mut self) -> Result<&ConformalMetric> {
        if self.metric.is_none() {
            self.metric = Some(make_metric(self.config.profile.clone(), self.config.grid_n)?);
        }
        Ok(self.metric.as_ref().unwrap())
    }

    fn cache_dir(&self) -> PathBuf {
        let c = &self.config;
        let key = hash_value(&json!({
            "profile": c.profile, "grid_n": c.grid_n, "count": c.eigen_count,
            "tol": c.eigen_tol, "seed": c.seed,
        }));
        self.out.join("cache").join(format!("spectrum-{}", &key[..16]))
    }

    /// Solves or loads the cached spectrum.
    pub fn spectrum(&mut self) -> Result<&Spectrum> {
        if self.spectrum.is_none() {
            let dir = self.cache_dir();
            let metric = self.metric()?.clone();
            let s = if dir.join("index.json").exists() {
                self.from_cache = true;
                eigen::read_cache(&dir, &metric)?
            } else {
                self.from_cache = false;
                let ops = eigen::assemble_operators(&metric);
                let mut opts = SolverOptions::new(self.config.eigen_count, self.config.eigen_tol);
                opts.seed ^= self.config.seed;
                let s = eigen::solve_spectrum(&ops, &opts)?;
                eigen::write_cache(&s, &dir)?;
                s
            };
            self.spectrum = Some(s);
        }
        Ok(self.spectrum.as_ref().unwrap())
    }

    /// Nonconstant eigenpairs in ascending order.
    fn family(&mut self) -> Result<Vec<EigenPair>> {
        let s = self.spectrum()?;
        let floor = constant_floor(s);
        Ok(s.nonconstant(floor).cloned().collect())
    }

    /// Localized fields for the largest local family size.
    pub fn locals(&mut self) -> Result<&[Local]> {
        if self.locals.is_none() {
            let n = *self.config.local_family_sizes.last().unwrap();
            let fam = self.family()?;
            let metric = self.metric()?.clone();
            let mut out = Vec::with_capacity(n);
            for (index, pair) in fam.iter().take(n).enumerate() {
                let set = nodal::extract_nodal_set(&pair.field);
                let anchor = nodal_anchor(&set, (0.5, 0.5))
                    .ok_or_else(|| Error::Numerical(format!("eigenfunction {index} has an empty nodal set")))?;
                let field = schrodinger::localize(pair, &metric, anchor, self.config.k0, self.config.eps0)?;
                let (beta, beta_star) = schrodinger::beta_star(&field)?;
                out.push(Local {
                    index,
                    lambda: pair.lambda,
                    anchor,
                    field,
                    beta,
                    beta_star,
                });
            }
            self.locals = Some(out);
        }
        Ok(self.locals.as_ref().unwrap())
    }

    fn write(&self, rel: &str, text: &str) -> Result<String> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, text)?;
        Ok(rel.to_string())
    }

    fn constant(&self, name: &str, family: &str, size: usize, value: f64) -> EmpiricalConstant {
        EmpiricalConstant {
            name: name.into(),
            family: family.into(),
            family_size: size,
            value,
            config_hash: self.hash.clone(),
        }
    }

    fn record(&self, cmd: Command, summary: Value, constants: Vec<EmpiricalConstant>, mut artifacts: Vec<String>) -> Result<ResultRecord> {
        let rel = format!("{}.record.json", cmd.name());
        artifacts.push(rel.clone());
        let rec = ResultRecord {
            schema: SCHEMA.into(),
            command: cmd.name().into(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            summary,
            constants,
            artifacts,
        };
        self.write(&rel, &(serde_json::to_string_pretty(&rec)? + "\n"))?;
        Ok(rec)
    }

    pub fn run(&mut self, cmd: Command) -> Result<Vec<ResultRecord>> {
        let rec = match cmd {
            Command::All => {
                let mut out = Vec::new();
                for c in Command::EACH {
                    out.extend(self.run(c)?);
                }
                return Ok(out);
            }
            Command::Spectrum => self.run_spectrum()?,
            Command::Nodal => self.run_nodal()?,
            Command::Growth => self.run_growth()?,
            Command::Thm1 => self.run_thm1()?,
            Command::Localize => self.run_localize()?,
            Command::Tile => self.run_tile()?,
            Command::Rapid => self.run_rapid()?,
            Command::Crofton => self.run_crofton()?,
            Command::Harmonic => self.run_harmonic()?,
            Command::Carleman => self.run_carleman()?,
        };
        Ok(vec![rec])
    }

    fn run_spectrum(&mut self) -> Result<ResultRecord> {
        let dir = self.cache_dir();
        let s = self.spectrum()?;
        let mut csv = String::from("index,lambda,residual\n");
        for (k, p) in s.pairs.iter().enumerate() {
            let _ = writeln!(csv, "{k},{},{}", p.lambda, p.residual);
        }
        let summary = json!({
            "count": s.pairs.len(),
            "lambdas": s.lambdas(),
            "max_residual": s.pairs.iter().map(|p| p.residual).fold(0.0, f64::max),
            "cache": dir.strip_prefix(&self.out).unwrap_or(&dir).to_string_lossy(),
        });
        let a = vec![self.write("spectrum.csv", &csv)?];
        self.record(Command::Spectrum, summary, vec![], a)
    }

    fn run_nodal(&mut self) -> Result<ResultRecord> {
        let fam = self.family()?;
        let metric = self.metric()?.clone();
        let mut csv = String::from("index,lambda,euclidean_length,metric_length,singular_points\n");
        let mut artifacts = Vec::new();
        let mut rows = Vec::new();
        for (k, pair) in fam.iter().enumerate() {
            let set = nodal::analyze(&pair.field)?;
            let (e, m) = nodal::nodal_length(&set, Some(&metric));
            let _ = writeln!(csv, "{k},{},{e},{m},{}", pair.lambda, set.singular_points.len());
            artifacts.push(self.write(&format!("nodal/segments_{k:03}.csv"), &set.segments_csv())?);
            artifacts.push(self.write(&format!("nodal/singular_{k:03}.csv"), &set.singular_csv())?);
            if k == 0 {
                artifacts.push(self.write("nodal_000.svg", &plot::nodal_svg(&set, "nodal set"))?);
            }
            rows.push(json!({"lambda": pair.lambda, "euclidean_length": e, "metric_length": m}));
        }
        artifacts.insert(0, self.write("nodal.csv", &csv)?);
        self.record(Command::Nodal, json!({ "rows": rows }), vec![], artifacts)
    }

    fn run_growth(&mut self) -> Result<ResultRecord> {
        let fam = self.family()?;
        let metric = self.metric()?.clone();
        let n = *self.config.family_sizes.last().unwrap();
        let mut csv = String::from("lambda,A,B2,B4,max_beta\n");
        let mut artifacts = Vec::new();
        let mut points = Vec::new();
        for (k, pair) in fam.iter().take(n).enumerate() {
            let (s, samples) = growth::summarize(pair, &metric, self.config.k0, self.config.sample_grid_m, &[2.0, 4.0])?;
            let _ = writeln!(csv, "{},{},{},{},{}", s.lambda, s.a, s.bq["2"], s.bq["4"], s.max_beta);
            if k == 0 {
                artifacts.push(self.write("growth_field_000.csv", &growth::growth_csv(&samples))?);
            }
            points.push((s.lambda, s.a));
        }
        artifacts.insert(0, self.write("growth.csv", &csv)?);
        artifacts.push(self.write("growth_A.svg", &plot::scatter_svg(&points, "lambda", "A", "A(lambda)"))?);
        self.record(Command::Growth, json!({ "family_size": points.len() }), vec![], artifacts)
    }

    /// The ratio table over the largest family, computed once.
    pub fn thm1_table(&mut self) -> Result<RatioTable> {
        if let Some(t) = &self.thm1 {
            return Ok(t.clone());
        }
        let fam = self.family()?;
        let metric = self.metric()?.clone();
        let n = *self.config.family_sizes.last().unwrap();
        let rows = fam
            .iter()
            .take(n)
            .map(|p| growth::theorem1_row(p, &metric, self.config.k0, self.config.sample_grid_m))
            .collect::<Result<Vec<_>>>()?;
        let table = RatioTable { rows };
        self.thm1 = Some(table.clone());
        Ok(table)
    }

    fn run_thm1(&mut self) -> Result<ResultRecord> {
        let table = self.thm1_table()?;
        let mut summary = Vec::new();
        let mut constants = Vec::new();
        for &n in &self.config.family_sizes {
            let t = table.prefix(n);
            let (lo, up) = t.spreads();
            let fam = format!("first {n} nonconstant eigenfunctions");
            summary.push(json!({
                "family_size": n,
                "lower_ratio": t.lower_extent(),
                "upper_ratio": t.upper_extent(),
                "lower_spread": lo,
                "upper_spread": up,
                "df_constant": t.donnelly_fefferman_constant(),
                "quartile_trend": t.quartile_trend(),
            }));
            constants.push(self.constant("lower_ratio_min", &fam, n, t.lower_extent().0));
            constants.push(self.constant("upper_ratio_max", &fam, n, t.upper_extent().1));
            constants.push(self.constant("df_constant", &fam, n, t.donnelly_fefferman_constant()));
        }
        let pts: Vec<_> = table.rows.iter().map(|r| (r.lambda, r.a)).collect();
        let artifacts = vec![
            self.write("thm1.csv", &table.csv())?,
            self.write("thm1.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?,
            self.write("A_lambda.svg", &plot::scatter_svg(&pts, "lambda", "A", "A(lambda)"))?,
        ];
        self.record(Command::Thm1, json!({ "families": summary }), constants, artifacts)
    }

    fn run_localize(&mut self) -> Result<ResultRecord> {
        let mut csv = String::from("index,lambda,p_x,p_y,scale,beta,beta_star,potential_sup,residual\n");
        let mut artifacts = Vec::new();
        let locals = self.locals()?;
        let mut dumps = Vec::new();
        for l in locals {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                l.index,
                l.lambda,
                l.anchor.0,
                l.anchor.1,
                l.field.scale().unwrap_or(f64::NAN),
                l.beta,
                l.beta_star,
                l.field.potential_sup,
                l.field.residual
            );
            let g = GridField::planar(128, 6.0, |x, y| l.field.eval(x, y)).with_disk_mask(3.0);
            dumps.push((format!("localize/F_{:03}.gfd", l.index), g));
        }
        let n = locals.len();
        for (rel, g) in dumps {
            let path = self.out.join(&rel);
            std::fs::create_dir_all(path.parent().unwrap())?;
            g.save(&path)?;
            artifacts.push(rel);
        }
        artifacts.insert(0, self.write("localize.csv", &csv)?);
        self.record(Command::Localize, json!({ "family_size": n }), vec![], artifacts)
    }

    fn delta0_for(&self, beta_star: f64) -> f64 {
        self.config.delta0.unwrap_or_else(|| tiling::default_delta0(beta_star))
    }

    fn run_tile(&mut self) -> Result<ResultRecord> {
        let options = TilingOptions {
            a: self.config.a,
            k_max: self.config.k_max,
            probes: self.config.probes,
        };
        let m0 = self.config.m0;
        let delta0 = self.config.delta0;
        let locals = self.locals()?;
        let mut rows = Vec::new();
        let mut files = Vec::new();
        for l in locals {
            let d0 = delta0.unwrap_or_else(|| tiling::default_delta0(l.beta_star));
            let mut state = tiling::init_tiling(&l.field, d0, m0, options.clone())?;
            state.run(&l.field)?;
            let set = nodal::extract_window(&l.field, -CONFIG_RADIUS, -CONFIG_RADIUS, P_SIDE, 128);
            let total = tiling::total_bound_report(&state, &set);
            let (slow, rapid) = state.area_partition();
            rows.push(json!({
                "index": l.index,
                "lambda": l.lambda,
                "delta0": d0,
                "levels": state.level_counts(),
                "structural_bound_holds": state.structural_bound_holds(),
                "area_exact": slow + rapid == state.p_area_units(),
                "capped": state.capped,
                "total": total,
            }));
            files.push((format!("tiling/tiling_{:03}.csv", l.index), state.csv()));
            if l.index == 0 {
                files.push(("tiling_000.svg".into(), plot::tiling_svg(&state, &set, "rapid/slow tiling")));
            }
        }
        let ratios: Vec<f64> = rows.iter().map(|r| r["total"]["ratio"].as_f64().unwrap_or(f64::NAN)).collect();
        let mut artifacts = Vec::new();
        for (rel, text) in files {
            artifacts.push(self.write(&rel, &text)?);
        }
        let constants = self.family_max_constants("tiling_ratio", "localized eigenfunctions", &ratios, &self.config.local_family_sizes);
        let summary = json!({ "rows": rows, "drift": family_drift(&constants) });
        artifacts.insert(0, self.write("tile.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?);
        self.record(Command::Tile, summary, constants, artifacts)
    }

    fn family_max_constants(&self, name: &str, family: &str, values: &[f64], sizes: &[usize]) -> Vec<EmpiricalConstant> {
        sizes
            .iter()
            .map(|&n| {
                let v = values[..n.min(values.len())].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                self.constant(name, family, n, v)
            })
            .collect()
    }

    fn run_rapid(&mut self) -> Result<ResultRecord> {
        let (m0, a) = (self.config.m0, self.config.a);
        let delta0 = self.config.delta0;
        let locals = self.locals()?;
        let mut rows = Vec::new();
        let mut files = Vec::new();
        for l in locals {
            let d = delta0.unwrap_or_else(|| tiling::default_delta0(l.beta_star));
            let rep = schrodinger::count_rapid_disks(&l.field, d, m0, a)?;
            rows.push(json!({
                "index": l.index, "lambda": l.lambda, "delta": d, "disks": rep.probes.len(),
                "n_rapid": rep.n_rapid, "beta_star": rep.beta_star, "ratio": rep.ratio,
            }));
            files.push((format!("rapid/rapid_{:03}.csv", l.index), rep.csv()));
            if l.index == 0 {
                files.push(("disks_000.svg".into(), plot::disks_svg(&rep, a, "probe disks")));
            }
        }
        let ratios: Vec<f64> = rows.iter().map(|r| r["ratio"].as_f64().unwrap()).collect();
        let constant_field = constant_field_rapid(m0, a, self.delta0_for(1.0))?;
        let mut artifacts = Vec::new();
        for (rel, text) in files {
            artifacts.push(self.write(&rel, &text)?);
        }
        let constants = self.family_max_constants("rapid_ratio", "localized eigenfunctions", &ratios, &self.config.local_family_sizes);
        let summary = json!({ "rows": rows, "constant_field": constant_field, "drift": family_drift(&constants) });
        artifacts.insert(0, self.write("rapid.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?);
        self.record(Command::Rapid, summary, constants, artifacts)
    }

    fn run_crofton(&mut self) -> Result<ResultRecord> {
        let ov = self.crofton;
        let samples = ov.samples.unwrap_or(self.config.crofton_samples);
        let r = ov.r.unwrap_or(self.config.crofton_r);
        if !(r > 0.0 && r < 0.5) || samples == 0 {
            return Err(Error::validation("crofton needs samples > 0 and 0 < r < 1/2"));
        }
        let seed = self.config.seed;
        let kernels: Vec<Kernel> = match ov.kernel {
            Some(k) => vec![k],
            None => vec![Kernel::Disk, Kernel::Circle],
        };
        let unit = NodalSet::from_segments(vec![Segment { a: (0.0, 0.0), b: (1.0, 0.0) }], false);
        let mut segment = BTreeMap::new();
        for &k in &kernels {
            let e = crofton::run_kernel(k, &unit, r, samples, seed)?;
            segment.insert(kernel_name(k), json!({"value": e.value, "stderr": e.stderr, "samples": e.samples}));
        }
        let kinematic = crofton::kinematic_constant_check(r, 400);
        let fam = self.family()?;
        let mut consistency = Vec::new();
        for (k, pair) in fam.iter().take(5).enumerate() {
            let set = nodal::extract_nodal_set(&pair.field).indexed();
            let direct = set.euclidean_length;
            let mut row = json!({"index": k, "lambda": pair.lambda, "direct": direct});
            let mut agree = true;
            for &kern in &kernels {
                let e = crofton::run_kernel(kern, &set, r, samples, seed.wrapping_add(k as u64 + 1))?;
                agree &= crofton::agrees(direct, &e);
                row[kernel_name(kern)] = json!({"value": e.value, "stderr": e.stderr, "samples": e.samples});
            }
            row["agree"] = json!(agree);
            consistency.push(row);
        }
        let summary = json!({
            "r": r,
            "segment": segment,
            "kinematic_constant_ratio": kinematic,
            "consistency": consistency,
        });
        let a = vec![self.write("crofton.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?];
        self.record(Command::Crofton, summary, vec![], a)
    }

    fn run_harmonic(&mut self) -> Result<ResultRecord> {
        let seed = self.config.seed;
        let robertson: Vec<_> = (0..=10).map(harmonic::robertson_constant).collect();
        let r0 = 0.25;
        let mut sweep = Vec::new();
        for k in 0..100u64 {
            let trace = random_trace(seed, k)?;
            sweep.push(harmonic::growth_vs_signs_check(&trace, r0)?);
        }
        let mut powers = Vec::new();
        for n in 1..=10u32 {
            let trace = CircleTrace::from_fn(1024, |t| (n as f64 * t).cos())?;
            powers.push(harmonic::growth_vs_signs_check(&trace, r0)?);
        }
        let metric = self.metric()?.clone();
        let (dp, dm) = harmonic::default_rhos(metric.q_minus, metric.q_plus);
        let (rp, rm) = (self.config.rho_plus.unwrap_or(dp), self.config.rho_minus.unwrap_or(dm));
        let locals = self.locals()?;
        let mut zero_rows = Vec::new();
        for l in locals {
            let c = harmonic::theorem_3_1_1_check(&l.field, rp, rm)?;
            zero_rows.push(json!({"index": l.index, "lambda": l.lambda, "check": c}));
        }
        let ratios: Vec<f64> = zero_rows.iter().map(|r| r["check"]["ratio"].as_f64().unwrap()).collect();
        let constants =
            self.family_max_constants("zero_count_ratio", "localized eigenfunctions", &ratios, &self.config.local_family_sizes);
        let summary = json!({
            "robertson": robertson,
            "random_traces": { "count": sweep.len(), "all_hold": sweep.iter().all(|c| c.holds) },
            "re_z_n": powers,
            "rho_plus": rp,
            "rho_minus": rm,
            "zero_count": zero_rows,
            "drift": family_drift(&constants),
        });
        let a = vec![self.write("harmonic.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?];
        self.record(Command::Harmonic, summary, constants, a)
    }

    fn run_carleman(&mut self) -> Result<ResultRecord> {
        let summary = carleman_suite(&self.config, self.config.seed)?;
        let c1 = summary["c1"].as_array().cloned().unwrap_or_default();
        let constants = c1
            .iter()
            .map(|r| {
                self.constant(
                    "c10",
                    "random ring fields about three centres",
                    r["family_size"].as_u64().unwrap_or(0) as usize,
                    r["empirical_constant"].as_f64().unwrap_or(f64::NAN),
                )
            })
            .collect::<Vec<_>>();
        let a = vec![self.write("carleman.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?];
        self.record(Command::Carleman, summary, constants, a)
    }
}

fn kernel_name(k: Kernel) -> &'static str {
    match k {
        Kernel::Disk => "disk",
        Kernel::Circle => "circle",
    }
}

/// Drift between the first and last entry of a constants list.
fn family_drift(c: &[EmpiricalConstant]) -> f64 {
    match (c.first(), c.last()) {
        (Some(a), Some(b)) => drift(a.value, b.value),
        _ => 0.0,
    }
}

/// Midpoint of the nodal segment nearest `target` in torus distance.
pub fn nodal_anchor(set: &NodalSet, target: (f64, f64)) -> Option<(f64, f64)> {
    set.segments
        .iter()
        .map(|s| {
            let m = (0.5 * (s.a.0 + s.b.0), 0.5 * (s.a.1 + s.b.1));
            (torus_distance(m, target), m)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, m)| (m.0.rem_euclid(1.0), m.1.rem_euclid(1.0)))
}

/// Trigonometric polynomial of random degree in `1..=10` with uniform
/// coefficients, keyed by `(seed, index)`.
pub fn random_trace(seed: u64, index: u64) -> Result<CircleTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6365);
    rng.set_stream(index);
    let deg = rng.random_range(1..=10usize);
    let coef: Vec<(f64, f64)> = (0..=deg)
        .map(|_| (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
        .collect();
    CircleTrace::from_fn(1024, |t| {
        coef.iter()
            .enumerate()
            .map(|(n, &(a, b))| a * (n as f64 * t).cos() + if n > 0 { b * (n as f64 * t).sin() } else { 0.0 })
            .sum()
    })
}

/// Rapid counts of a constant planar field at `M0` and at `M = 0`.
pub fn constant_field_rapid(m0: f64, a: f64, delta: f64) -> Result<Value> {
    let f = PlanarField::analytic(|_, _| 1.0, 0.05, 0.0, schrodinger::EPS0)?;
    let at_m0 = schrodinger::count_rapid_disks(&f, delta, m0, a)?;
    let at_zero = schrodinger::count_rapid_disks(&f, delta, 0.0, a)?;
    Ok(json!({
        "disks": at_m0.probes.len(),
        "rapid_at_M0": at_m0.n_rapid,
        "rapid_at_zero": at_zero.n_rapid,
    }))
}

/// Closed-form check, lemma sweeps with and without centres, and the
/// weighted-estimate constant over nested families.
pub fn carleman_suite(config: &ExperimentConfig, seed: u64) -> Result<Value> {
    let c = &config.carleman;
    let a = config.a;
    let value = 0.7;
    let psi = carleman::Psi0::solve(Source::Constant { value }, 1.0 - 2.0 * a, 1.0)?;
    let closed_form_error = psi
        .samples()
        .map(|(r, u)| (u - (value * r * r / 4.0 - value / 2.0 * r.ln() - value / 4.0)).abs())
        .fold(0.0, f64::max);
    let (_, profile) = carleman::build_psi0(a, Source::Bump { a, a3: 1.0 })?;

    let mut lemma = Vec::new();
    for (k, &t) in c.t_values.iter().enumerate() {
        let w = carleman::build_weight(&[], c.delta, a, t)?;
        let fam: Vec<_> = (0..c.lemma_family as u64)
            .map(|i| carleman::random_bumps(seed, 1000 * k as u64 + i, &w, 0.6, 0.1, 0.35))
            .collect();
        let (_, rep) = carleman::lemma_family(&w, &fam)?;
        lemma.push(json!({"weight": "exp(t|z|^2)", "t": t, "report": rep}));
    }
    let centers = carleman::triangle_centers(c.center_radius);
    let w = carleman::build_weight(&centers, c.delta, a, c.t)?;
    let n_centred = c.lemma_family * c.t_values.len().max(1);
    let fam: Vec<_> = (0..n_centred as u64)
        .map(|i| carleman::random_ring_field(seed ^ 0x6c65, i, &w))
        .collect();
    let (_, rep) = carleman::lemma_family(&w, &fam)?;
    lemma.push(json!({"weight": "Phi0 exp(t|z|^2)", "t": c.t, "report": rep}));

    let w1 = carleman::build_weight(&centers, c.delta, a, 1.0)?;
    let top = *c.c1_family_sizes.last().unwrap();
    let fam: Vec<_> = (0..top as u64)
        .map(|i| carleman::random_ring_field(seed ^ 0x6331, i, &w1))
        .collect();
    let (checks, _) = carleman::c1_family(&w1, &fam)?;
    let mut c1 = Vec::new();
    for &n in &c.c1_family_sizes {
        let min = checks[..n]
            .iter()
            .filter_map(|c| c.constant)
            .fold(f64::INFINITY, f64::min);
        c1.push(json!(carleman::CarlemanReport {
            lemma: "C1".into(),
            family_size: n,
            min_margin: None,
            empirical_constant: Some(min),
        }));
    }
    let pairs: usize = lemma
        .iter()
        .map(|l| l["report"]["family_size"].as_u64().unwrap_or(0) as usize)
        .sum();
    let min_margin = lemma
        .iter()
        .filter_map(|l| l["report"]["min_margin"].as_f64())
        .fold(f64::INFINITY, f64::min);
    let base = c1.first().and_then(|v| v["empirical_constant"].as_f64()).unwrap_or(f64::NAN);
    let ext = c1.last().and_then(|v| v["empirical_constant"].as_f64()).unwrap_or(f64::NAN);
    Ok(json!({
        "closed_form_error": closed_form_error,
        "psi0": profile,
        "lemma": lemma,
        "lemma_pairs": pairs,
        "lemma_min_margin": min_margin,
        "c1": c1,
        "c1_drift": drift(base, ext),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = ExperimentConfig::from_json(r#"{"schema":"ngl.experiment/1","k0":0.5,"grid_n":256,"eigen_count":9,"family_sizes":[5],"local_family_sizes":[3,6]}"#).unwrap();
        let mut b = ExperimentConfig::from_json(r#"{"local_family_sizes":[3,6],"family_sizes":[5],"eigen_count":9,"grid_n":256,"k0":0.5,"schema":"ngl.experiment/1"}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.k0 = 0.25;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn validation_messages() {
        let bad = |s: &str| ExperimentConfig::from_json(s).unwrap_err();
        assert!(bad(r#"{"schema":"v0"}"#).is_validation());
        assert!(bad(r#"{"schema":"ngl.experiment/1","a":0.3}"#).is_validation());
        assert!(bad(r#"{"schema":"ngl.experiment/1","unknown":1}"#).is_validation());
        let e = bad(r#"{"schema":"ngl.experiment/1","grid_n":32}"#);
        assert!(e.to_string().contains("grid_n"), "{e}");
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn drift_of_zero_family_is_zero() {
        assert_eq!(drift(0.0, 0.0), 0.0);
        assert!((drift(2.0, 2.2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn anchor_is_nearest_midpoint() {
        let set = NodalSet::from_segments(
            vec![
                Segment { a: (0.1, 0.1), b: (0.2, 0.1) },
                Segment { a: (0.45, 0.5), b: (0.55, 0.5) },
            ],
            true,
        );
        assert_eq!(nodal_anchor(&set, (0.5, 0.5)), Some((0.5, 0.5)));
    }
}
