//! Jump-process simulation of the emitter over pulse trains.
//!
//! Each period is simulated exactly: exponential waiting times at the
//! current level's total outflow, clipped at the segment boundary, with
//! the jump picked in proportion to its rate. Every 2 → 1 jump emits a
//! photon, which is collected independently with probability `eta`.
//!
//! Cycle `i` draws all of its randomness from ChaCha8 stream `i` of the
//! configured seed, so results do not depend on how cycles are scheduled.
//! Consecutive cycles are chained through the end level. To run a chain in
//! parallel, fixed-size shards are simulated speculatively from the ground
//! level; when a shard actually starts elsewhere, its prefix is re-run from
//! the true start until the two trajectories end a cycle on the same level,
//! after which they are identical. The stitched result is bit-for-bit the
//! serial chain for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rates::{Collection, DipoleParams, Level, PulseTrain};

/// Cycles per shard; fixed so results never depend on the thread count.
pub const SHARD_CYCLES: u64 = 4096;

/// Count histograms keep this many bins; the last one collects overflow.
pub const HIST_BINS: usize = 33;

/// Bins of the joint (emitted, collected) table.
pub const JOINT_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n_cycles: u64,
    pub seed: u64,
    pub thinning: Collection,
    /// Leading cycles simulated but left out of the statistics.
    pub burn_in: u64,
}

impl McConfig {
    pub fn new(n_cycles: u64, seed: u64, thinning: Collection) -> Self {
        Self {
            n_cycles,
            seed,
            thinning,
            burn_in: 0,
        }
    }

    pub fn with_burn_in(self, burn_in: u64) -> Self {
        Self { burn_in, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cycles < 1 {
            return Err(Error::Domain {
                what: "n_cycles",
                value: 0.0,
            });
        }
        if self.burn_in >= self.n_cycles {
            return Err(Error::Domain {
                what: "burn_in",
                value: self.burn_in as f64,
            });
        }
        Ok(())
    }

    /// Cycles that enter the statistics.
    pub fn counted(&self) -> u64 {
        self.n_cycles - self.burn_in
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl McEstimate {
    /// Fraction `hits / n` with the binomial standard error.
    pub fn binomial(hits: u64, n: u64) -> Self {
        if n == 0 {
            return Self {
                mean: 0.0,
                std_error: 0.0,
                n,
            };
        }
        let p = hits as f64 / n as f64;
        Self {
            mean: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }

    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        let d = (self.mean - value).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }

    pub fn within(&self, value: f64, sigmas: f64) -> bool {
        self.z_score(value) <= sigmas
    }
}

/// Result of one simulated pulse period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CycleOutcome {
    pub emitted: u32,
    pub collected: u32,
    pub end_level: Level,
    /// The emitter visited the metastable level during the period.
    pub shelved: bool,
}

/// Independent random stream for cycle `index`.
pub fn cycle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy)]
struct SegmentRates {
    pump: f64,
    decay: f64,
    to_metastable: f64,
    metastable_decay: f64,
    deshelve: f64,
}

impl SegmentRates {
    fn new(dipole: &DipoleParams, pulses: &PulseTrain, on: bool) -> Self {
        let d = pulses.segment_dipole(dipole, on);
        Self {
            pump: pulses.segment_pump(on),
            decay: d.gamma,
            to_metastable: d.beta * d.gamma,
            metastable_decay: d.gamma_m,
            deshelve: d.r_d,
        }
    }

    fn outflow(&self, level: Level) -> f64 {
        match level {
            Level::Ground => self.pump,
            Level::Excited => self.decay + self.to_metastable,
            Level::Metastable => self.metastable_decay + self.deshelve,
        }
    }
}

fn run_segment<R: Rng>(
    rates: &SegmentRates,
    duration: f64,
    eta: f64,
    level: &mut Level,
    out: &mut CycleOutcome,
    rng: &mut R,
) {
    let mut t = 0.0;
    loop {
        let total = rates.outflow(*level);
        if total <= 0.0 {
            return;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        t += wait;
        if t >= duration {
            return;
        }
        let u: f64 = rng.random::<f64>() * total;
        *level = match *level {
            Level::Ground => Level::Excited,
            Level::Excited => {
                if u < rates.decay {
                    out.emitted += 1;
                    if rng.random::<f64>() < eta {
                        out.collected += 1;
                    }
                    Level::Ground
                } else {
                    out.shelved = true;
                    Level::Metastable
                }
            }
            Level::Metastable => {
                if u < rates.metastable_decay {
                    Level::Ground
                } else {
                    Level::Excited
                }
            }
        };
    }
}

/// Simulates one pulse period starting in `start`.
pub fn simulate_cycle<R: Rng>(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    start: Level,
    collection: Collection,
    rng: &mut R,
) -> CycleOutcome {
    let mut out = CycleOutcome {
        emitted: 0,
        collected: 0,
        end_level: start,
        shelved: start == Level::Metastable,
    };
    let mut level = start;
    let on = SegmentRates::new(dipole, pulses, true);
    let off = SegmentRates::new(dipole, pulses, false);
    run_segment(&on, pulses.delta_t, collection.eta(), &mut level, &mut out, rng);
    run_segment(&off, pulses.dark_time(), collection.eta(), &mut level, &mut out, rng);
    out.end_level = level;
    out
}

/// Integer tallies of cycle outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub cycles: u64,
    pub emitted_hist: Vec<u64>,
    pub collected_hist: Vec<u64>,
    /// `joint[e][c]`: cycles with `e` emitted and `c` collected, both `< JOINT_BINS`.
    pub joint: [[u64; JOINT_BINS]; JOINT_BINS],
    pub emitted_total: u64,
    pub end_metastable: u64,
    pub shelved: u64,
}

impl Default for Tally {
    fn default() -> Self {
        Self {
            cycles: 0,
            emitted_hist: vec![0; HIST_BINS],
            collected_hist: vec![0; HIST_BINS],
            joint: [[0; JOINT_BINS]; JOINT_BINS],
            emitted_total: 0,
            end_metastable: 0,
            shelved: 0,
        }
    }
}

impl Tally {
    fn apply(&mut self, o: &CycleOutcome, add: bool) {
        let step = |v: &mut u64| {
            if add {
                *v += 1
            } else {
                *v -= 1
            }
        };
        step(&mut self.cycles);
        step(&mut self.emitted_hist[(o.emitted as usize).min(HIST_BINS - 1)]);
        step(&mut self.collected_hist[(o.collected as usize).min(HIST_BINS - 1)]);
        let (e, c) = (o.emitted as usize, o.collected as usize);
        if e < JOINT_BINS && c < JOINT_BINS {
            step(&mut self.joint[e][c]);
        }
        if o.end_level == Level::Metastable {
            step(&mut self.end_metastable);
        }
        if o.shelved {
            step(&mut self.shelved);
        }
        if add {
            self.emitted_total += o.emitted as u64;
        } else {
            self.emitted_total -= o.emitted as u64;
        }
    }

    fn merge(&mut self, other: &Tally) {
        self.cycles += other.cycles;
        for (a, b) in self.emitted_hist.iter_mut().zip(&other.emitted_hist) {
            *a += b;
        }
        for (a, b) in self.collected_hist.iter_mut().zip(&other.collected_hist) {
            *a += b;
        }
        for (ra, rb) in self.joint.iter_mut().zip(&other.joint) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self.emitted_total += other.emitted_total;
        self.end_metastable += other.end_metastable;
        self.shelved += other.shelved;
    }

    /// Cycles with at least `k` collected photons.
    pub fn collected_at_least(&self, k: usize) -> u64 {
        self.collected_hist.iter().skip(k).sum()
    }

    pub fn emitted_at_least(&self, k: usize) -> u64 {
        self.emitted_hist.iter().skip(k).sum()
    }
}

struct Chain<'a> {
    dipole: &'a DipoleParams,
    pulses: &'a PulseTrain,
    mc: &'a McConfig,
}

impl Chain<'_> {
    fn step(&self, index: u64, start: Level) -> CycleOutcome {
        let mut rng = cycle_rng(self.mc.seed, index);
        simulate_cycle(self.dipole, self.pulses, start, self.mc.thinning, &mut rng)
    }

    fn counted(&self, index: u64) -> bool {
        index >= self.mc.burn_in
    }

    fn shard(&self, first: u64, last: u64) -> (Tally, Level) {
        let mut tally = Tally::default();
        let mut level = Level::Ground;
        for i in first..last {
            let o = self.step(i, level);
            if self.counted(i) {
                tally.apply(&o, true);
            }
            level = o.end_level;
        }
        (tally, level)
    }

    /// Replaces the speculative ground-start prefix of a shard by the
    /// trajectory from `start`, until the two coalesce.
    fn correct(&self, first: u64, last: u64, start: Level, tally: &mut Tally, end: &mut Level) {
        let mut actual = start;
        let mut guess = Level::Ground;
        for i in first..last {
            let a = self.step(i, actual);
            let g = self.step(i, guess);
            if self.counted(i) {
                tally.apply(&a, true);
                tally.apply(&g, false);
            }
            actual = a.end_level;
            guess = g.end_level;
            if actual == guess {
                return;
            }
        }
        *end = actual;
    }

    /// Per-shard tallies of the serial chain started in the ground level.
    fn run(&self) -> Vec<Tally> {
        let n = self.mc.n_cycles;
        let shards: Vec<(u64, u64)> = (0..n.div_ceil(SHARD_CYCLES))
            .map(|k| (k * SHARD_CYCLES, ((k + 1) * SHARD_CYCLES).min(n)))
            .collect();
        let mut results: Vec<(Tally, Level)> = shards
            .par_iter()
            .map(|&(first, last)| self.shard(first, last))
            .collect();
        let mut level = Level::Ground;
        for (&(first, last), (tally, end)) in shards.iter().zip(results.iter_mut()) {
            if level != Level::Ground {
                self.correct(first, last, level, tally, end);
            }
            level = *end;
        }
        results.into_iter().map(|(t, _)| t).collect()
    }
}

/// Runs the chained simulation and returns one tally per shard, in order.
pub fn simulate_shards(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    mc: &McConfig,
) -> Result<Vec<Tally>> {
    dipole.validate()?;
    pulses.validate()?;
    mc.validate()?;
    Ok(Chain { dipole, pulses, mc }.run())
}

/// Runs the chained simulation serially and returns every outcome.
pub fn simulate_chain(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    mc: &McConfig,
) -> Result<Vec<CycleOutcome>> {
    dipole.validate()?;
    pulses.validate()?;
    mc.validate()?;
    let chain = Chain { dipole, pulses, mc };
    let mut level = Level::Ground;
    let mut out = Vec::with_capacity(mc.n_cycles as usize);
    for i in 0..mc.n_cycles {
        let o = chain.step(i, level);
        level = o.end_level;
        out.push(o);
    }
    Ok(out)
}

/// Monte Carlo estimates of the per-period collected statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McStats {
    pub pi_0: McEstimate,
    pub pi_1: McEstimate,
    pub pi_ge2: McEstimate,
    pub f_il: McEstimate,
    /// Set when nothing was collected; `f_il` is then 0 ± 0.
    pub f_il_degenerate: bool,
    pub p_e_emitted: McEstimate,
    /// Fraction of periods ending in the metastable level (naive error).
    pub metastable_end: McEstimate,
    pub tally: Tally,
}

impl McStats {
    fn from_tally(tally: Tally) -> Self {
        let n = tally.cycles;
        let c0 = tally.collected_hist[0];
        let c1 = tally.collected_hist[1];
        let ge1 = tally.collected_at_least(1);
        let ge2 = tally.collected_at_least(2);
        let (f_il, f_il_degenerate) = if ge1 == 0 {
            (
                McEstimate {
                    mean: 0.0,
                    std_error: 0.0,
                    n,
                },
                true,
            )
        } else {
            (ratio_estimate(ge2, ge1, n), false)
        };
        Self {
            pi_0: McEstimate::binomial(c0, n),
            pi_1: McEstimate::binomial(c1, n),
            pi_ge2: McEstimate::binomial(ge2, n),
            f_il,
            f_il_degenerate,
            p_e_emitted: McEstimate::binomial(tally.emitted_at_least(1), n),
            metastable_end: McEstimate::binomial(tally.end_metastable, n),
            tally,
        }
    }
}

/// `f = a / b` for nested event counts `a ⊆ b` out of `n` trials, with the
/// delta-method error
/// `Var f ≈ f² [Var p_a / p_a² + Var p_b / p_b² - 2 Cov / (p_a p_b)]`.
fn ratio_estimate(a: u64, b: u64, n: u64) -> McEstimate {
    let nf = n as f64;
    let pa = a as f64 / nf;
    let pb = b as f64 / nf;
    let f = a as f64 / b as f64;
    let var = if a == 0 {
        0.0
    } else {
        let va = pa * (1.0 - pa) / nf;
        let vb = pb * (1.0 - pb) / nf;
        let cov = pa * (1.0 - pb) / nf;
        (f * f * (va / (pa * pa) + vb / (pb * pb) - 2.0 * cov / (pa * pb))).max(0.0)
    };
    McEstimate {
        mean: f,
        std_error: var.sqrt(),
        n,
    }
}

pub fn estimate_stats(dipole: &DipoleParams, pulses: &PulseTrain, mc: &McConfig) -> Result<McStats> {
    let shards = simulate_shards(dipole, pulses, mc)?;
    let mut total = Tally::default();
    for s in &shards {
        total.merge(s);
    }
    Ok(McStats::from_tally(total))
}

/// Long-run emitted-photon rate with shelving relative to the same emitter
/// with `beta = 0`, using the same per-cycle random streams for both. The
/// error comes from batch means over shards, which are long compared to
/// shelving correlation times in the intended regime.
pub fn estimate_duty_factor(
    dipole: &DipoleParams,
    pulses: &PulseTrain,
    mc: &McConfig,
) -> Result<McEstimate> {
    mc.validate()?;
    if dipole.beta == 0.0 {
        return Ok(McEstimate {
            mean: 1.0,
            std_error: 0.0,
            n: mc.counted(),
        });
    }
    let with = simulate_shards(dipole, pulses, mc)?;
    let without = simulate_shards(&dipole.with_beta(0.0), pulses, mc)?;
    let batches: Vec<(f64, f64)> = with
        .iter()
        .zip(&without)
        .filter(|(a, _)| a.cycles > 0)
        .map(|(a, b)| (a.emitted_total as f64, b.emitted_total as f64))
        .collect();
    let sx: f64 = batches.iter().map(|b| b.0).sum();
    let sy: f64 = batches.iter().map(|b| b.1).sum();
    if sy == 0.0 {
        return Err(Error::Domain {
            what: "reference emission count",
            value: 0.0,
        });
    }
    let ratio = sx / sy;
    let k = batches.len() as f64;
    let std_error = if batches.len() > 1 {
        let mean_y = sy / k;
        let ss: f64 = batches.iter().map(|(x, y)| (x - ratio * y).powi(2)).sum();
        (ss / (k * (k - 1.0))).sqrt() / mean_y
    } else {
        0.0
    };
    Ok(McEstimate {
        mean: ratio,
        std_error,
        n: mc.counted(),
    })
}
