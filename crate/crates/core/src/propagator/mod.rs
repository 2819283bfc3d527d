//! Exact propagation of the piecewise-constant rate equations.
//!
//! Every pulse period is two constant-generator segments (pump on for
//! `delta_t`, pump off for the rest of the period), each propagated with a
//! matrix exponential. Photon-number resolution uses the block-bidiagonal
//! generator from [`counting`]. The full finite period is always evolved;
//! no long-period limit is taken here.

pub mod counting;
pub mod expm;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rates::{Collection, DipoleParams, GeneratorKind, Level, PulseTrain, RateGenerator};

pub use expm::ExpmRoute;

/// Occupation (sub-)probabilities of the three levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelDistribution(pub [f64; 3]);

impl LevelDistribution {
    pub const GROUND: LevelDistribution = LevelDistribution([1.0, 0.0, 0.0]);

    /// Validated construction: entries in `[0, 1]`, total at most one.
    pub fn new(p: [f64; 3]) -> Result<Self> {
        for v in p {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain {
                    what: "level probability",
                    value: v,
                });
            }
        }
        let total: f64 = p.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::Domain {
                what: "level distribution total",
                value: total,
            });
        }
        Ok(Self(p))
    }

    pub fn pure(level: Level) -> Self {
        let mut p = [0.0; 3];
        p[level.index()] = 1.0;
        Self(p)
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.index()]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::from(self.0)
    }

    // Rounding can leave entries a few ulps below zero.
    fn from_vector(v: &Vector3<f64>) -> Self {
        Self([v[0].max(0.0), v[1].max(0.0), v[2].max(0.0)])
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn to_dense(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(3, 3, m.iter().copied())
}

fn from_dense(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_iterator(m.iter().copied())
}

/// `exp(gen * dt)` as a 3×3 matrix.
pub fn segment_map(gen: &RateGenerator, dt: f64) -> Result<Matrix3<f64>> {
    let (e, _) = expm::expm(&to_dense(gen.matrix()), dt)?;
    Ok(from_dense(&e))
}

/// `exp(gen * dt) · state`.
pub fn expm_propagate(
    gen: &RateGenerator,
    state: &LevelDistribution,
    dt: f64,
) -> Result<LevelDistribution> {
    let e = segment_map(gen, dt)?;
    Ok(LevelDistribution::from_vector(&(e * state.to_vector())))
}

/// One-period map `exp(G_off (T - δT)) · exp(G_on δT)` for a generator kind.
pub fn cycle_map(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    kind: GeneratorKind,
) -> Result<Matrix3<f64>> {
    pulses.validate()?;
    let on = RateGenerator::build(&pulses.segment_dipole(dipole, true), pulses.r, kind)?;
    let off = RateGenerator::build(&pulses.segment_dipole(dipole, false), 0.0, kind)?;
    Ok(segment_map(&off, pulses.dark_time())? * segment_map(&on, pulses.delta_t)?)
}

/// Evolves `initial` through one full pulse period.
pub fn propagate_cycle(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    kind: GeneratorKind,
    initial: &LevelDistribution,
) -> Result<LevelDistribution> {
    let m = cycle_map(dipole, pulses, kind)?;
    Ok(LevelDistribution::from_vector(&(m * initial.to_vector())))
}

pub const STEADY_TOLERANCE: f64 = 1e-12;
pub const STEADY_MAX_ITERATIONS: usize = 1_000_000;

/// Fixed point of the one-period population map, reached by iteration from
/// the ground state.
pub fn steady_cycle_distribution(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
) -> Result<LevelDistribution> {
    let m = cycle_map(dipole, pulses, GeneratorKind::Population)?;
    let mut p = LevelDistribution::GROUND.to_vector();
    let mut residual = f64::INFINITY;
    for _ in 0..STEADY_MAX_ITERATIONS {
        let mut next = m * p;
        // Renormalize to stop rounding drift over long iterations.
        next /= next.sum();
        residual = (next - p).amax();
        p = next;
        if residual < STEADY_TOLERANCE {
            return Ok(LevelDistribution::from_vector(&p));
        }
    }
    Err(Error::NoConvergence {
        what: "steady cycle distribution",
        iterations: STEADY_MAX_ITERATIONS,
        residual,
    })
}

/// What the block index of a count-resolved state counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountVariant {
    /// Photons emitted on 2 → 1.
    Emitted,
    /// Photons collected with efficiency `eta`.
    Collected(Collection),
}

/// Level populations resolved by the number of photons counted so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountResolvedState {
    /// `blocks[n]`: sub-probabilities of each level having counted exactly `n`.
    pub blocks: Vec<LevelDistribution>,
    /// Mass that went beyond the cutoff.
    pub tail_mass: f64,
}

impl CountResolvedState {
    pub fn cutoff(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block_totals(&self) -> Vec<f64> {
        self.blocks.iter().map(LevelDistribution::total).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.block_totals().iter().sum::<f64>() + self.tail_mass
    }

    /// Σ_n blocks[n], i.e. the level distribution ignoring counts.
    pub fn marginal(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for b in &self.blocks {
            for (acc, v) in m.iter_mut().zip(b.0) {
                *acc += v;
            }
        }
        m
    }
}

fn count_blocks(
    dipole: &DipoleParams,
    pump: f64,
    variant: CountVariant,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let (kind, counted) = match variant {
        CountVariant::Emitted => (GeneratorKind::Conditional, dipole.gamma),
        CountVariant::Collected(c) => (GeneratorKind::Tilde(c), c.eta() * dipole.gamma),
    };
    let diag = *RateGenerator::build(dipole, pump, kind)?.matrix();
    let mut coupling = Matrix3::zeros();
    coupling[(Level::Ground.index(), Level::Excited.index())] = counted;
    Ok((diag, coupling))
}

/// Photon-number-resolved propagation over one period with a fixed cutoff.
pub fn count_resolved_cycle(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    variant: CountVariant,
    cutoff: usize,
    initial: &LevelDistribution,
) -> Result<CountResolvedState> {
    if cutoff < 1 {
        return Err(Error::Domain {
            what: "cutoff",
            value: cutoff as f64,
        });
    }
    pulses.validate()?;
    let mut blocks = vec![Vector3::zeros(); cutoff + 1];
    blocks[0] = initial.to_vector();
    let segments = [
        (true, pulses.delta_t),
        (false, pulses.dark_time()),
    ];
    for (on, dt) in segments {
        if dt == 0.0 {
            continue;
        }
        let d = pulses.segment_dipole(dipole, on);
        let (diag, coupling) = count_blocks(&d, pulses.segment_pump(on), variant)?;
        let e = counting::exp_block_bidiagonal(&diag, &coupling, dt, cutoff);
        blocks = e.apply(&blocks);
    }
    if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            context: "count-resolved propagation",
        });
    }
    let blocks: Vec<LevelDistribution> = blocks.iter().map(LevelDistribution::from_vector).collect();
    let kept: f64 = blocks.iter().map(LevelDistribution::total).sum();
    let tail_mass = (initial.total() - kept).max(0.0);
    Ok(CountResolvedState { blocks, tail_mass })
}

pub const DEFAULT_CUTOFF: usize = 16;
pub const MAX_CUTOFF: usize = 1024;
pub const TAIL_TARGET: f64 = 1e-10;

/// [`count_resolved_cycle`] with the cutoff doubled from 16 until the tail
/// mass drops below 1e-10 or the cutoff reaches 1024.
pub fn count_resolved_auto(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    variant: CountVariant,
    initial: &LevelDistribution,
) -> Result<CountResolvedState> {
    let mut cutoff = DEFAULT_CUTOFF;
    loop {
        let s = count_resolved_cycle(dipole, pulses, variant, cutoff, initial)?;
        if s.tail_mass < TAIL_TARGET || cutoff >= MAX_CUTOFF {
            return Ok(s);
        }
        cutoff = (cutoff * 2).min(MAX_CUTOFF);
    }
}

/// Per-period count distribution and the scalars derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhotonStats {
    pub p_n: Vec<f64>,
    pub tail: f64,
    /// Probability of at least one count.
    pub p_e: f64,
    /// Probability of exactly one count.
    pub p_1_exact: f64,
    /// `P(n >= 2) / P(n >= 1)`.
    pub f_il: f64,
    /// Set when `p_e = 0`, in which case `f_il` is reported as 0.
    pub degenerate: bool,
}

impl PhotonStats {
    /// Builds stats from per-count probabilities plus truncated tail mass.
    pub fn from_distribution(p_n: Vec<f64>, tail: f64) -> Result<Self> {
        if p_n.is_empty() {
            return Err(Error::Domain {
                what: "distribution length",
                value: 0.0,
            });
        }
        for &v in p_n.iter().chain(std::iter::once(&tail)) {
            if !(0.0..=1.0 + 1e-12).contains(&v) {
                return Err(Error::Domain {
                    what: "count probability",
                    value: v,
                });
            }
        }
        let p_1_exact = p_n.get(1).copied().unwrap_or(0.0);
        let multi: f64 = p_n.iter().skip(2).sum::<f64>() + tail;
        let p_e = p_1_exact + multi;
        let (f_il, degenerate) = if p_e > 0.0 {
            ((multi / p_e).clamp(0.0, 1.0), false)
        } else {
            (0.0, true)
        };
        Ok(Self {
            p_n,
            tail,
            p_e,
            p_1_exact,
            f_il,
            degenerate,
        })
    }

    /// `P(n = k)`, zero beyond the stored range.
    pub fn p(&self, k: usize) -> f64 {
        self.p_n.get(k).copied().unwrap_or(0.0)
    }

    pub fn p_ge(&self, k: usize) -> f64 {
        self.p_n.iter().skip(k).sum::<f64>() + self.tail
    }
}

pub fn stats_from_counts(state: &CountResolvedState) -> Result<PhotonStats> {
    PhotonStats::from_distribution(state.block_totals(), state.tail_mass)
}

/// Collected-count statistics for one period starting from `initial`.
pub fn collected_stats(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    collection: Collection,
    initial: &LevelDistribution,
) -> Result<PhotonStats> {
    let s = count_resolved_auto(dipole, pulses, CountVariant::Collected(collection), initial)?;
    stats_from_counts(&s)
}

/// Emitted-count statistics for one period starting from `initial`.
pub fn emitted_stats(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    initial: &LevelDistribution,
) -> Result<PhotonStats> {
    let s = count_resolved_auto(dipole, pulses, CountVariant::Emitted, initial)?;
    stats_from_counts(&s)
}

/// Start-of-period distribution: the ground state without shelving,
/// otherwise the long-run fixed point of the period map.
pub fn cycle_start_distribution(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
) -> Result<LevelDistribution> {
    if dipole.beta == 0.0 {
        Ok(LevelDistribution::GROUND)
    } else {
        steady_cycle_distribution(dipole, pulses)
    }
}

#[cfg(test)]
mod tests;
