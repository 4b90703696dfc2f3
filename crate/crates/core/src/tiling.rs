//! Iterative rapid/slow decomposition of the square `P = (-1/60, 1/60)²`.
//!
//! Squares are stored by level and integer position so halving and area
//! bookkeeping are exact; floating coordinates are derived on demand.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Refined, ScalarField};
use crate::nodal::{NodalSet, Point};
use crate::schrodinger::{beta_star, check_delta, classify_rapid, DiskAnnuli, CONFIG_RADIUS};

/// Side of `P`.
pub const P_SIDE: f64 = 2.0 * CONFIG_RADIUS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kind {
    Rapid,
    Slow,
}

impl Kind {
    fn label(self) -> &'static str {
        match self {
            Kind::Rapid => "rapid",
            Kind::Slow => "slow",
        }
    }
}

/// Half-open square `[x, x+s) × [y, y+s)` at a refinement level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Square {
    pub level: u32,
    pub ix: u64,
    pub iy: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TilingOptions {
    /// Annulus thickness.
    pub a: f64,
    pub k_max: u32,
    /// Candidate centres per square side.
    pub probes: usize,
}

impl Default for TilingOptions {
    fn default() -> Self {
        Self {
            a: 0.1,
            k_max: 8,
            probes: 3,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Level {
    pub rapid: Vec<Square>,
    pub slow: Vec<Square>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TilingState {
    pub delta0: f64,
    /// `P_SIDE / δ(0)`.
    pub n_side: u64,
    pub m: f64,
    pub beta: f64,
    pub beta_star: f64,
    pub options: TilingOptions,
    pub levels: Vec<Level>,
    /// Set when `k_max` was reached with rapid squares left.
    pub capped: bool,
}

/// Largest `P_SIDE / 2^k` satisfying `δ < 1/60` and `δβ* < 1/2`.
pub fn default_delta0(beta_star: f64) -> f64 {
    let mut d = P_SIDE;
    while check_delta(d, beta_star).is_err() {
        d *= 0.5;
    }
    d
}

impl TilingState {
    pub fn level(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    /// `δ(k) = 2^{-k} δ(0)`.
    pub fn delta(&self, k: u32) -> f64 {
        self.delta0 / (1u64 << k) as f64
    }

    pub fn origin(&self, sq: &Square) -> Point {
        let d = self.delta(sq.level);
        (-CONFIG_RADIUS + sq.ix as f64 * d, -CONFIG_RADIUS + sq.iy as f64 * d)
    }

    /// Area of a level-`k` square in units of the finest possible square.
    fn area_units(&self, k: u32) -> u128 {
        let side = 1u128 << (self.options.k_max - k);
        side * side
    }

    pub fn p_area_units(&self) -> u128 {
        let side = self.n_side as u128 * (1u128 << self.options.k_max);
        side * side
    }

    /// Exact `(slow area over all levels, rapid area at the current level)`.
    pub fn area_partition(&self) -> (u128, u128) {
        let slow = self
            .levels
            .iter()
            .enumerate()
            .map(|(k, l)| l.slow.len() as u128 * self.area_units(k as u32))
            .sum();
        let k = self.level();
        let rapid = self.levels[k as usize].rapid.len() as u128 * self.area_units(k);
        (slow, rapid)
    }

    pub fn current_rapid(&self) -> &[Square] {
        &self.levels.last().expect("at least one level").rapid
    }

    fn classify(&self, field: &(impl ScalarField + ?Sized), squares: Vec<Square>) -> Result<Level> {
        let kinds = squares
            .par_iter()
            .map(|sq| self.classify_square(field, sq))
            .collect::<Result<Vec<_>>>()?;
        let mut level = Level::default();
        for (sq, kind) in squares.into_iter().zip(kinds) {
            match kind {
                Kind::Rapid => level.rapid.push(sq),
                Kind::Slow => level.slow.push(sq),
            }
        }
        Ok(level)
    }

    /// Rapid if any probe disk `D(z, δ(k))` on the sub-lattice is rapid.
    fn classify_square(&self, field: &(impl ScalarField + ?Sized), sq: &Square) -> Result<Kind> {
        let d = self.delta(sq.level);
        let (x, y) = self.origin(sq);
        let p = self.options.probes;
        for j in 0..p {
            for i in 0..p {
                let z = (x + (i as f64 + 0.5) * d / p as f64, y + (j as f64 + 0.5) * d / p as f64);
                let ann = DiskAnnuli::new(z, d, self.options.a)?;
                if classify_rapid(&Refined::new(field, field.spacing()), &ann, self.m)?.is_rapid {
                    return Ok(Kind::Rapid);
                }
            }
        }
        Ok(Kind::Slow)
    }

    /// Splits every current rapid square into four and classifies the
    /// children; returns `false` (and sets `capped`) at `k_max`.
    pub fn refine(&mut self, field: &(impl ScalarField + ?Sized)) -> Result<bool> {
        if self.current_rapid().is_empty() {
            return Err(Error::validation("no rapid squares left to refine"));
        }
        let k = self.level();
        if k >= self.options.k_max {
            self.capped = true;
            return Ok(false);
        }
        let children = self
            .current_rapid()
            .iter()
            .flat_map(|sq| {
                [(0, 0), (1, 0), (0, 1), (1, 1)].map(|(a, b)| Square {
                    level: k + 1,
                    ix: 2 * sq.ix + a,
                    iy: 2 * sq.iy + b,
                })
            })
            .collect();
        let level = self.classify(field, children)?;
        self.levels.push(level);
        Ok(true)
    }

    /// Refines until no rapid squares remain or `k_max` is reached.
    pub fn run(&mut self, field: &(impl ScalarField + ?Sized)) -> Result<()> {
        while !self.current_rapid().is_empty() {
            if !self.refine(field)? {
                break;
            }
        }
        Ok(())
    }

    pub fn level_counts(&self) -> Vec<LevelCount> {
        self.levels
            .iter()
            .enumerate()
            .map(|(k, l)| LevelCount {
                level: k as u32,
                rapid: l.rapid.len(),
                slow: l.slow.len(),
                rapid_ratio: l.rapid.len() as f64 * self.delta0 / self.beta_star,
                slow_ratio: l.slow.len() as f64 * self.delta0 / self.beta_star,
            })
            .collect()
    }

    /// `|J(k)| ≤ 4 |I(k−1)|` for every `k ≥ 1`.
    pub fn structural_bound_holds(&self) -> bool {
        self.levels
            .windows(2)
            .all(|w| w[1].slow.len() <= 4 * w[0].rapid.len())
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("level,x,y,side,kind\n");
        for (k, l) in self.levels.iter().enumerate() {
            let side = self.delta(k as u32);
            for (kind, list) in [(Kind::Slow, &l.slow), (Kind::Rapid, &l.rapid)] {
                for sq in list {
                    let (x, y) = self.origin(sq);
                    let _ = writeln!(s, "{k},{x},{y},{side},{}", kind.label());
                }
            }
        }
        s
    }

    /// Every square with its kind, in level order.
    pub fn squares(&self) -> Vec<(Square, Kind)> {
        let mut out = Vec::new();
        for l in &self.levels {
            out.extend(l.slow.iter().map(|&s| (s, Kind::Slow)));
            out.extend(l.rapid.iter().map(|&s| (s, Kind::Rapid)));
        }
        out
    }
}

/// Classifies the level-0 grid of `P` at side `delta0`.
pub fn init_tiling(
    field: &(impl ScalarField + ?Sized),
    delta0: f64,
    m: f64,
    options: TilingOptions,
) -> Result<TilingState> {
    let (beta, bs) = beta_star(&Refined::new(field, field.spacing()))?;
    check_delta(delta0, bs)?;
    let n = (P_SIDE / delta0).round();
    if n < 1.0 || (n * delta0 - P_SIDE).abs() > 1e-12 * P_SIDE {
        return Err(Error::validation(format!(
            "P side 1/30 is not an integer multiple of delta0 = {delta0}"
        )));
    }
    if options.probes == 0 {
        return Err(Error::validation("need at least one probe per square side"));
    }
    if options.k_max > 40 {
        return Err(Error::validation("k_max above 40 is beyond exact bookkeeping"));
    }
    let n_side = n as u64;
    let mut state = TilingState {
        delta0,
        n_side,
        m,
        beta,
        beta_star: bs,
        options,
        levels: Vec::new(),
        capped: false,
    };
    let squares = (0..n_side * n_side)
        .map(|k| Square {
            level: 0,
            ix: k % n_side,
            iy: k / n_side,
        })
        .collect();
    let level = state.classify(field, squares)?;
    state.levels.push(level);
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: u32,
    /// `|I(k)|`.
    pub rapid: usize,
    /// `|J(k)|`.
    pub slow: usize,
    pub rapid_ratio: f64,
    pub slow_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub level: u32,
    pub x: f64,
    pub y: f64,
    pub side: f64,
    pub length: f64,
    /// `H¹(Z ∩ S) / (2^{-k} δ)`.
    pub ratio: f64,
}

/// Clipped nodal length in every slow square.
pub fn slow_square_budgets(state: &TilingState, set: &NodalSet) -> Vec<Budget> {
    let mut out = Vec::new();
    for (k, l) in state.levels.iter().enumerate() {
        let side = state.delta(k as u32);
        for sq in &l.slow {
            let (x, y) = state.origin(sq);
            let length = set.length_in_square(x, y, side);
            out.push(Budget {
                level: k as u32,
                x,
                y,
                side,
                length,
                ratio: length / side,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalBound {
    /// `H¹(Z_F ∩ (1/60)𝔻)`.
    pub h1: f64,
    pub beta_star: f64,
    pub ratio: f64,
    /// `Σ_k Σ_j H¹(Z_F ∩ S_j(k))`.
    pub reconstructed: f64,
    /// Length in `P` minus the length in rapid squares left over.
    pub direct: f64,
    /// `|reconstructed − direct| / max(direct, tiny)`.
    pub mismatch: f64,
}

pub fn total_bound_report(state: &TilingState, set: &NodalSet) -> TotalBound {
    let h1 = set.length_in_disk((0.0, 0.0), CONFIG_RADIUS);
    let reconstructed: f64 = slow_square_budgets(state, set).iter().map(|b| b.length).sum();
    let k = state.level();
    let side = state.delta(k);
    let leftover: f64 = state
        .current_rapid()
        .iter()
        .map(|sq| {
            let (x, y) = state.origin(sq);
            set.length_in_square(x, y, side)
        })
        .sum();
    let direct = set.length_in_square(-CONFIG_RADIUS, -CONFIG_RADIUS, P_SIDE) - leftover;
    let mismatch = if direct.abs() < 1e-300 && reconstructed.abs() < 1e-300 {
        0.0
    } else {
        (reconstructed - direct).abs() / direct.abs().max(reconstructed.abs())
    };
    TotalBound {
        h1,
        beta_star: state.beta_star,
        ratio: h1 / state.beta_star,
        reconstructed,
        direct,
        mismatch,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Exact uncovered area as a fraction of `P`.
    pub uncovered_fraction: f64,
    pub uncovered_area: f64,
    pub remaining_rapid: usize,
    /// Largest distance from a remaining rapid square's centre to the nearest
    /// singular point, in units of `δ(k)`; `None` without rapid squares or points.
    pub max_singular_distance: Option<f64>,
}

pub fn coverage_check(state: &TilingState, singular: &[Point]) -> Coverage {
    let (_, rapid) = state.area_partition();
    let total = state.p_area_units();
    let frac = rapid as f64 / total as f64;
    let k = state.level();
    let side = state.delta(k);
    let rem = state.current_rapid();
    let max_singular_distance = if rem.is_empty() || singular.is_empty() {
        None
    } else {
        Some(
            rem.iter()
                .map(|sq| {
                    let (x, y) = state.origin(sq);
                    let c = (x + 0.5 * side, y + 0.5 * side);
                    singular
                        .iter()
                        .map(|p| (p.0 - c.0).hypot(p.1 - c.1))
                        .fold(f64::INFINITY, f64::min)
                        / side
                })
                .fold(0.0, f64::max),
        )
    };
    Coverage {
        uncovered_fraction: frac,
        uncovered_area: frac * P_SIDE * P_SIDE,
        remaining_rapid: rem.len(),
        max_singular_distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_delta_is_dyadic_and_admissible() {
        let d = default_delta0(1.0);
        assert!((d - P_SIDE / 4.0).abs() < 1e-18);
        let d = default_delta0(100.0);
        assert!(d * 100.0 < 0.5 && d * 200.0 >= 0.5 - 1e-12);
    }
}
