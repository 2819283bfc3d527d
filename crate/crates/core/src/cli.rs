//! Batch front-end: configuration, single-point analysis, sweeps, Monte
//! Carlo runs, attack reports and cross-validation.
//!
//! Configuration is one JSON document. Rates are given in units of `gamma`
//! and times in units of `1/gamma`; `gamma` defaults to 1.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, poisson_f_il};
use crate::attacks::{self, AttackReport, SourceComparison};
use crate::error::Error;
use crate::montecarlo::{self, McConfig, McEstimate};
use crate::propagator::{self, CountVariant, LevelDistribution, PhotonStats};
use crate::rates::{
    build_conditional_generator, build_population_generator, build_tilde_generator, Collection,
    DeshelvingWindow, DipoleParams, GeneratorKind, PulseTrain,
};

pub const CSV_HEADER: &str = "x,pe,pi_e,pi_1,fil,fil_poisson";

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PHOTONGUN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Carries whatever the run would have printed.
    #[error("{failed} validation check(s) failed")]
    ChecksFailed { failed: usize, stdout: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Analyze,
    Sweep,
    Mc,
    Attack,
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    R,
    DeltaT,
    Eta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub min: f64,
    pub max: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: AxisScale,
}

impl SweepSpec {
    fn validate(&self) -> CliResult<()> {
        if self.points < 2 {
            return Err(CliError::Config("sweep.points must be >= 2".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(CliError::Config("sweep.min must be < sweep.max".into()));
        }
        if self.scale == AxisScale::Log && self.min <= 0.0 {
            return Err(CliError::Config("sweep.min must be > 0 on a log axis".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1) as f64;
                match self.scale {
                    AxisScale::Linear => self.min + f * (self.max - self.min),
                    AxisScale::Log => {
                        let (a, b) = (self.min.log10(), self.max.log10());
                        10f64.powf(a + f * (b - a))
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    #[serde(default = "default_cycles")]
    pub n_cycles: u64,
    #[serde(default)]
    pub burn_in: u64,
}

fn default_cycles() -> u64 {
    100_000
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_cycles: default_cycles(),
            burn_in: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    #[serde(default = "half")]
    pub tap: f64,
    #[serde(default = "default_line")]
    pub line_efficiency: f64,
    /// Non-empty-pulse probability of the Poissonian reference; defaults
    /// to the source's own collected value.
    #[serde(default)]
    pub p_e_match: Option<f64>,
}

fn half() -> f64 {
    0.5
}

fn default_line() -> f64 {
    0.001
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            tap: half(),
            line_efficiency: default_line(),
            p_e_match: None,
        }
    }
}

/// Pass thresholds of the `validate` checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub identity_rel: f64,
    pub conservation: f64,
    pub oracle_abs: f64,
    pub normalization: f64,
    pub seam: f64,
    pub poisson_seam: f64,
    pub mc_sigmas: f64,
    pub duty_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity_rel: 1e-12,
            conservation: 1e-12,
            oracle_abs: 1e-6,
            normalization: 1e-9,
            seam: 1e-9,
            poisson_seam: 1e-12,
            mc_sigmas: 3.0,
            duty_abs: 0.05,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> CliResult<()> {
        let fields = [
            ("identity_rel", self.identity_rel),
            ("conservation", self.conservation),
            ("oracle_abs", self.oracle_abs),
            ("normalization", self.normalization),
            ("seam", self.seam),
            ("poisson_seam", self.poisson_seam),
            ("mc_sigmas", self.mc_sigmas),
            ("duty_abs", self.duty_abs),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!(
                    "tolerances.{name} = {v} must be a finite non-negative number"
                )));
            }
        }
        Ok(())
    }
}

fn one() -> f64 {
    1.0
}

fn default_period() -> f64 {
    50.0
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub gamma_m: f64,
    #[serde(default)]
    pub r_d: f64,
    pub r: f64,
    pub delta_t: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    pub eta: f64,
    #[serde(default)]
    pub deshelving: DeshelvingWindow,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub attack: AttackSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

impl Default for RunConfig {
    /// The reference operating point: ΓδT = 0.01, r = 1000 Γ, η = 0.2, ΓT = 50.
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 0.0,
            gamma_m: 0.0,
            r_d: 0.0,
            r: 1000.0,
            delta_t: 0.01,
            period: 50.0,
            eta: 0.2,
            deshelving: DeshelvingWindow::Always,
            sweep: None,
            mc: McSettings::default(),
            attack: AttackSettings::default(),
            tolerances: Tolerances::default(),
            seed: 1,
            output: None,
        }
    }
}

fn config_err(e: Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Physical parameters of a configuration point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub dipole: DipoleParams,
    pub pulses: PulseTrain,
    pub collection: Collection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Config(format!(
            "cannot read {}: {source}",
            path.display()
        )))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.point()?;
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        self.tolerances.validate()?;
        self.mc_config(self.seed).validate().map_err(config_err)?;
        let a = &self.attack;
        if !(0.0..=1.0).contains(&a.tap) {
            return Err(CliError::Config(format!("attack.tap = {} must lie in [0, 1]", a.tap)));
        }
        if !(a.line_efficiency > 0.0 && a.line_efficiency <= 1.0) {
            return Err(CliError::Config(format!(
                "attack.line_efficiency = {} must lie in (0, 1]",
                a.line_efficiency
            )));
        }
        if let Some(p) = a.p_e_match {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Config(format!("attack.p_e_match = {p} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn point(&self) -> CliResult<Point> {
        let g = self.gamma;
        if !(g.is_finite() && g > 0.0) {
            return Err(CliError::Config(format!("gamma = {g} must be > 0")));
        }
        let dipole = DipoleParams::new(g, self.beta, self.gamma_m * g, self.r_d * g).map_err(config_err)?;
        let pulses = PulseTrain::new(self.r * g, self.delta_t / g, self.period / g)
            .map_err(config_err)?
            .with_deshelving_window(self.deshelving);
        let collection = Collection::new(self.eta).map_err(config_err)?;
        Ok(Point {
            dipole,
            pulses,
            collection,
        })
    }

    pub fn mc_config(&self, seed: u64) -> McConfig {
        let collection = Collection::new(self.eta.clamp(0.0, 1.0)).unwrap_or(Collection::PERFECT);
        McConfig::new(self.mc.n_cycles, seed, collection).with_burn_in(self.mc.burn_in)
    }

    /// Copy with one swept variable replaced (given in config units).
    pub fn with_variable(&self, variable: SweepVariable, value: f64) -> Self {
        let mut c = self.clone();
        match variable {
            SweepVariable::R => c.r = value,
            SweepVariable::DeltaT => c.delta_t = value,
            SweepVariable::Eta => c.eta = value,
        }
        c
    }
}

/// Collected and emitted statistics of one period from the exact propagator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactPoint {
    pub emitted: PhotonStats,
    pub collected: PhotonStats,
}

pub fn exact_point(p: &Point) -> crate::Result<ExactPoint> {
    let start = propagator::cycle_start_distribution(&p.dipole, &p.pulses)?;
    Ok(ExactPoint {
        emitted: propagator::emitted_stats(&p.dipole, &p.pulses, &start)?,
        collected: propagator::collected_stats(&p.dipole, &p.pulses, p.collection, &start)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticSummary {
    pub pe_exact: f64,
    pub pe_approx: f64,
    pub p1: f64,
    pub pi_0: f64,
    pub pi_e: f64,
    pub pi_1: f64,
    pub f_il: f64,
    pub f_il_two_photon_approx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorSummary {
    pub pe: f64,
    pub p1: f64,
    pub pi_0: f64,
    pub pi_e: f64,
    pub pi_1: f64,
    pub f_il: f64,
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    /// Two-level closed forms (metastable level ignored, long period).
    pub analytic: AnalyticSummary,
    /// Exact three-level propagation over the finite period.
    pub propagator: PropagatorSummary,
    pub poisson_f_il_same_pi_e: f64,
    pub improvement_ratio: f64,
    pub duty_factor: f64,
    pub anticorrelation: bool,
}

pub fn run_analyze(cfg: &RunConfig) -> CliResult<AnalyzeReport> {
    let p = cfg.point()?;
    let (r, g, dt) = (p.pulses.r, p.dipole.gamma, p.pulses.delta_t);
    let two = analytics::two_level_emission(r, g, dt, p.pulses.period)?;
    let coll = analytics::collection_stats(r, g, dt, p.collection.eta())?;
    let approx = analytics::collection_stats_two_photon_approx(r, g, dt, p.collection.eta())?;
    let exact = exact_point(&p)?;
    let cmp = attacks::compare_sources(&exact.collected, exact.collected.p_e)?;
    let shelving = analytics::shelving_figures(&p.dipole, &p.pulses, two.pe_exact)?;
    Ok(AnalyzeReport {
        analytic: AnalyticSummary {
            pe_exact: two.pe_exact,
            pe_approx: two.pe_approx,
            p1: two.p1,
            pi_0: coll.pi_0,
            pi_e: coll.pi_e,
            pi_1: coll.pi_1,
            f_il: coll.f_il,
            f_il_two_photon_approx: approx.f_il,
        },
        propagator: PropagatorSummary {
            pe: exact.emitted.p_e,
            p1: exact.emitted.p_1_exact,
            pi_0: exact.collected.p(0),
            pi_e: exact.collected.p_e,
            pi_1: exact.collected.p_1_exact,
            f_il: exact.collected.f_il,
            tail: exact.collected.tail,
        },
        poisson_f_il_same_pi_e: cmp.poisson_f_il,
        improvement_ratio: cmp.improvement_ratio,
        duty_factor: shelving.duty_factor,
        anticorrelation: analytics::satisfies_anticorrelation(
            exact.collected.f_il,
            exact.collected.p_1_exact,
        ),
    })
}

impl AnalyzeReport {
    pub fn to_text(&self) -> String {
        let a = &self.analytic;
        let p = &self.propagator;
        let mut s = String::new();
        let _ = writeln!(s, "{:<28}{:>16}{:>16}", "quantity", "closed form", "propagator");
        let rows = [
            ("P_e (emitted >= 1)", a.pe_exact, p.pe),
            ("P_1 (emitted = 1)", a.p1, p.p1),
            ("Pi_0 (collected = 0)", a.pi_0, p.pi_0),
            ("Pi_e (collected >= 1)", a.pi_e, p.pi_e),
            ("Pi_1 (collected = 1)", a.pi_1, p.pi_1),
            ("f_il", a.f_il, p.f_il),
        ];
        for (name, x, y) in rows {
            let _ = writeln!(s, "{name:<28}{x:>16.8e}{y:>16.8e}");
        }
        let _ = writeln!(s, "f_il (two-photon approx)    {:>16.8e}", a.f_il_two_photon_approx);
        let _ = writeln!(s, "Poisson f_il at same Pi_e   {:>16.8e}", self.poisson_f_il_same_pi_e);
        let _ = writeln!(s, "improvement ratio           {:>16.8e}", self.improvement_ratio);
        let _ = writeln!(s, "duty factor M               {:>16.8e}", self.duty_factor);
        let _ = writeln!(s, "f_il < P_1/2                {:>16}", self.anticorrelation);
        s
    }
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub pe: f64,
    pub pi_e: f64,
    pub pi_1: f64,
    pub fil: f64,
    pub fil_poisson: f64,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

impl SweepRow {
    pub fn csv(&self) -> String {
        [self.x, self.pe, self.pi_e, self.pi_1, self.fil, self.fil_poisson]
            .iter()
            .map(|v| fmt17(*v))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn sweep_row(cfg: &RunConfig, variable: SweepVariable, x: f64) -> CliResult<SweepRow> {
    let c = cfg.with_variable(variable, x);
    let p = c.point()?;
    let exact = exact_point(&p)?;
    let col = &exact.collected;
    Ok(SweepRow {
        x,
        pe: exact.emitted.p_e,
        pi_e: col.p_e,
        pi_1: col.p_1_exact,
        fil: col.f_il,
        fil_poisson: poisson_f_il(col.p_e.min(1.0))?,
    })
}

/// One curve of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    /// Short label, used as a file-name suffix for multi-curve presets.
    pub label: String,
    pub config: RunConfig,
    pub spec: SweepSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
}

impl std::str::FromStr for Preset {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            other => Err(CliError::Config(format!("unknown preset `{other}`"))),
        }
    }
}

const PRESET_ETA: f64 = 0.2;

impl Preset {
    /// Curves of the preset; emitter rates and period come from `base`.
    pub fn curves(&self, base: &RunConfig) -> Vec<SweepCurve> {
        let at = |delta_t: f64, r: f64| RunConfig {
            delta_t,
            r,
            eta: PRESET_ETA,
            ..base.clone()
        };
        match self {
            // Leakage against emission probability: pulse energy r δT from
            // 1e-2 to 10 at two fixed durations.
            Preset::Fig2 => [0.1, 0.01]
                .iter()
                .map(|&dt| SweepCurve {
                    label: format!("dt{dt}"),
                    config: at(dt, 1.0),
                    spec: SweepSpec {
                        variable: SweepVariable::R,
                        min: 1e-2 / dt,
                        max: 10.0 / dt,
                        points: 31,
                        scale: AxisScale::Log,
                    },
                })
                .collect(),
            Preset::Fig3 => vec![SweepCurve {
                label: "r100".into(),
                config: at(0.01, 100.0),
                spec: SweepSpec {
                    variable: SweepVariable::DeltaT,
                    min: 1e-3,
                    max: 10.0,
                    points: 41,
                    scale: AxisScale::Log,
                },
            }],
            Preset::Fig4 => [0.01, 0.1]
                .iter()
                .map(|&dt| SweepCurve {
                    label: format!("dt{dt}"),
                    config: at(dt, 1.0),
                    spec: SweepSpec {
                        variable: SweepVariable::R,
                        min: 1.0,
                        max: 1e5,
                        points: 51,
                        scale: AxisScale::Log,
                    },
                })
                .collect(),
        }
    }
}

/// Rows of one curve, evaluated concurrently and returned in grid order.
pub fn run_curve(curve: &SweepCurve) -> CliResult<Vec<SweepRow>> {
    curve.spec.validate()?;
    curve
        .spec
        .grid()
        .par_iter()
        .map(|&x| sweep_row(&curve.config, curve.spec.variable, x))
        .collect()
}

pub fn curve_csv(rows: &[SweepRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// CSV documents of a sweep, one per curve.
pub fn run_sweep(cfg: &RunConfig, preset: Option<Preset>) -> CliResult<Vec<(String, String)>> {
    let curves = match preset {
        Some(p) => p.curves(cfg),
        None => {
            let spec = cfg
                .sweep
                .ok_or_else(|| CliError::Config("sweep mode needs a `sweep` section or --preset".into()))?;
            vec![SweepCurve {
                label: String::new(),
                config: cfg.clone(),
                spec,
            }]
        }
    };
    curves
        .iter()
        .map(|c| Ok((c.label.clone(), curve_csv(&run_curve(c)?))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub n_cycles: u64,
    pub seed: u64,
    pub pi_0: McEstimate,
    pub pi_1: McEstimate,
    pub pi_ge2: McEstimate,
    pub f_il: McEstimate,
    pub f_il_degenerate: bool,
    pub p_e_emitted: McEstimate,
    pub metastable_end: McEstimate,
    pub exact_pi_0: f64,
    pub exact_pi_1: f64,
    pub exact_f_il: f64,
    pub duty_factor: Option<McEstimate>,
    pub duty_factor_mean_field: f64,
}

pub fn run_mc(cfg: &RunConfig) -> CliResult<McReport> {
    let p = cfg.point()?;
    let mc = cfg.mc_config(cfg.seed);
    let stats = montecarlo::estimate_stats(&p.dipole, &p.pulses, &mc)?;
    let exact = exact_point(&p)?;
    let two = analytics::two_level_emission(p.pulses.r, p.dipole.gamma, p.pulses.delta_t, p.pulses.period)?;
    let m = analytics::shelving_figures(&p.dipole, &p.pulses, two.pe_exact)?;
    let duty = if p.dipole.beta > 0.0 {
        Some(montecarlo::estimate_duty_factor(&p.dipole, &p.pulses, &mc)?)
    } else {
        None
    };
    Ok(McReport {
        n_cycles: mc.n_cycles,
        seed: mc.seed,
        pi_0: stats.pi_0,
        pi_1: stats.pi_1,
        pi_ge2: stats.pi_ge2,
        f_il: stats.f_il,
        f_il_degenerate: stats.f_il_degenerate,
        p_e_emitted: stats.p_e_emitted,
        metastable_end: stats.metastable_end,
        exact_pi_0: exact.collected.p(0),
        exact_pi_1: exact.collected.p_1_exact,
        exact_f_il: exact.collected.f_il,
        duty_factor: duty,
        duty_factor_mean_field: m.duty_factor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSummary {
    pub stats: PhotonStats,
    pub beamsplitter: AttackReport,
    pub qnd: AttackReport,
    pub lossy_line: AttackReport,
    pub comparison: SourceComparison,
}

pub fn run_attack(cfg: &RunConfig) -> CliResult<AttackSummary> {
    let p = cfg.point()?;
    let stats = exact_point(&p)?.collected;
    let a = &cfg.attack;
    let p_match = a.p_e_match.unwrap_or(stats.p_e);
    Ok(AttackSummary {
        beamsplitter: attacks::beamsplitter_attack(&stats, a.tap)?,
        qnd: attacks::qnd_attack(&stats),
        lossy_line: attacks::lossy_line_attack(&stats, a.line_efficiency)?,
        comparison: attacks::compare_sources(&stats, p_match)?,
        stats,
    })
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub deviation: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: &'static str, deviation: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: deviation <= tolerance,
            deviation,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

/// Random two-level operating points used by the oracle checks.
pub fn random_two_level_draws(seed: u64, n: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = 10f64.powf(rng.random_range(-1.0..3.0));
            let dt = 10f64.powf(rng.random_range(-3.0..0.0));
            let eta = rng.random_range(0.0..=1.0);
            (r, dt, eta)
        })
        .collect()
}

const ORACLE_PERIOD: f64 = 50.0;

pub fn run_validate(cfg: &RunConfig) -> CliResult<ValidationReport> {
    cfg.validate()?;
    let tol = cfg.tolerances;
    let p = cfg.point()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::new();

    // effective-rate sum and product identities
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let r = 10f64.powf(rng.random_range(-3.0..4.0));
        let g = 10f64.powf(rng.random_range(-2.0..2.0));
        let eta: f64 = rng.random_range(0.0..=1.0);
        let e = analytics::effective_rates(r, g, eta)?;
        worst = worst.max(((e.r_prime + e.gamma_prime) - (r + g)).abs() / (r + g));
        let prod = eta * r * g;
        if prod > 0.0 {
            worst = worst.max((e.r_prime * e.gamma_prime - prod).abs() / prod);
        }
    }
    checks.push(Check::at_most("effective_rate_identities", worst, tol.identity_rel));

    // generator degeneracies and population conservation
    let mut degen: f64 = 0.0;
    let mut conservation: f64 = 0.0;
    for _ in 0..1_000 {
        let d = DipoleParams::new(
            1.0,
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..0.5),
        )?;
        let pump = 10f64.powf(rng.random_range(-1.0..4.0));
        let pop = build_population_generator(&d, pump)?;
        let cond = build_conditional_generator(&d, pump)?;
        let t0 = build_tilde_generator(&d, pump, Collection::new(0.0)?)?;
        let t1 = build_tilde_generator(&d, pump, Collection::new(1.0)?)?;
        degen = degen
            .max((t0.matrix() - pop.matrix()).amax())
            .max((t1.matrix() - cond.matrix()).amax());
        let dt = 10f64.powf(rng.random_range(-3.0..0.0));
        let pulses = PulseTrain::new(pump, dt, dt + rng.random_range(1.0..30.0))?;
        let out = propagator::propagate_cycle(&d, &pulses, GeneratorKind::Population, &LevelDistribution::GROUND)?;
        conservation = conservation.max((out.total() - 1.0).abs());
    }
    checks.push(Check::at_most("generator_degeneracies", degen, 0.0));
    checks.push(Check::at_most("population_conservation", conservation, tol.conservation));

    // closed forms against the propagator, plus count normalization
    let draws = random_two_level_draws(cfg.seed, 100);
    let two_level = DipoleParams::two_level(1.0)?;
    let oracle: Vec<(f64, f64, f64)> = draws
        .par_iter()
        .map(|&(r, dt, eta)| -> crate::Result<(f64, f64, f64)> {
            let c = analytics::collection_stats(r, 1.0, dt, eta)?;
            let pulses = PulseTrain::new(r, dt, ORACLE_PERIOD)?;
            let s = propagator::count_resolved_auto(
                &two_level,
                &pulses,
                CountVariant::Collected(Collection::new(eta)?),
                &LevelDistribution::GROUND,
            )?;
            let st = propagator::stats_from_counts(&s)?;
            Ok((
                (c.pi_0 - st.p(0)).abs(),
                (c.pi_1 - st.p_1_exact).abs(),
                (s.total_mass() - 1.0).abs(),
            ))
        })
        .collect::<crate::Result<_>>()?;
    let max_of = |f: fn(&(f64, f64, f64)) -> f64| oracle.iter().map(f).fold(0.0, f64::max);
    checks.push(Check::at_most("analytic_vs_propagator_pi_0", max_of(|t| t.0), tol.oracle_abs));
    checks.push(Check::at_most("analytic_vs_propagator_pi_1", max_of(|t| t.1), tol.oracle_abs));
    checks.push(Check::at_most("count_normalization", max_of(|t| t.2), tol.normalization));

    // series seams
    let mut seam: f64 = 0.0;
    for dt in [0.01, 0.3, 2.0] {
        for side in [-1.0, 1.0] {
            let a = analytics::single_photon_probability(1.0 + side * 0.999 * analytics::SERIES_GAP, 1.0, dt);
            let b = analytics::single_photon_probability(1.0 + side * 1.001 * analytics::SERIES_GAP, 1.0, dt);
            seam = seam.max((a - b).abs());
        }
    }
    checks.push(Check::at_most("p1_series_seam", seam, tol.seam));
    let x = analytics::POISSON_SERIES_BELOW;
    let poisson_seam = (poisson_f_il(x * (1.0 - 1e-12))? - poisson_f_il(x)?).abs();
    checks.push(Check::at_most("poisson_series_seam", poisson_seam, tol.poisson_seam));

    // Monte Carlo at the configured point
    let mc = cfg.mc_config(cfg.seed);
    let stats = montecarlo::estimate_stats(&p.dipole, &p.pulses, &mc)?;
    let exact = exact_point(&p)?;
    let reference_f_il = if p.dipole.beta == 0.0 {
        analytics::collection_stats(p.pulses.r, p.dipole.gamma, p.pulses.delta_t, p.collection.eta())?.f_il
    } else {
        exact.collected.f_il
    };
    checks.push(Check::at_most(
        "mc_vs_reference_f_il_sigmas",
        stats.f_il.z_score(reference_f_il),
        tol.mc_sigmas,
    ));
    checks.push(Check::at_most(
        "mc_vs_propagator_pi_0_sigmas",
        stats.pi_0.z_score(exact.collected.p(0)),
        tol.mc_sigmas,
    ));
    if p.dipole.beta > 0.0 {
        let two = analytics::two_level_emission(p.pulses.r, p.dipole.gamma, p.pulses.delta_t, p.pulses.period)?;
        let m = analytics::shelving_figures(&p.dipole, &p.pulses, two.pe_exact)?;
        let est = montecarlo::estimate_duty_factor(&p.dipole, &p.pulses, &mc)?;
        checks.push(Check::at_most("duty_factor_abs", (est.mean - m.duty_factor).abs(), tol.duty_abs));
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport { passed, checks })
}

/// Worker count from `PHOTONGUN_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} = `{v}` is not a positive integer"))),
        },
    }
}

/// Runs `f` on a pool with `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    match b.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `out.csv` with label `dt0.1` becomes `out_dt0.1.csv`.
pub fn labelled_path(path: &Path, label: &str, multi: bool) -> PathBuf {
    if !multi || label.is_empty() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{label}.{ext}"),
        None => format!("{stem}_{label}"),
    };
    path.with_file_name(name)
}

/// Everything a run prints to stdout plus files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub stdout: String,
    pub files: Vec<PathBuf>,
}

/// Executes one mode; the caller maps errors to exit codes.
pub fn execute(mode: Mode, cfg: &RunConfig, preset: Option<Preset>, out: Option<&Path>) -> CliResult<RunOutput> {
    let out = out.map(Path::to_path_buf).or_else(|| cfg.output.clone());
    let mut files = Vec::new();
    let emit = |text: String, files: &mut Vec<PathBuf>| -> CliResult<String> {
        match &out {
            Some(path) => {
                write_file(path, &text)?;
                files.push(path.clone());
                Ok(String::new())
            }
            None => Ok(text),
        }
    };
    let stdout = match mode {
        Mode::Analyze => {
            let rep = run_analyze(cfg)?;
            if let Some(path) = &out {
                write_file(path, &to_json(&rep))?;
                files.push(path.clone());
            }
            rep.to_text()
        }
        Mode::Sweep => {
            let docs = run_sweep(cfg, preset)?;
            let multi = docs.len() > 1;
            let mut s = String::new();
            for (label, csv) in docs {
                match &out {
                    Some(path) => {
                        let p = labelled_path(path, &label, multi);
                        write_file(&p, &csv)?;
                        files.push(p);
                    }
                    None => s.push_str(&csv),
                }
            }
            s
        }
        Mode::Mc => emit(to_json(&run_mc(cfg)?), &mut files)?,
        Mode::Attack => emit(to_json(&run_attack(cfg)?), &mut files)?,
        Mode::Validate => {
            let rep = run_validate(cfg)?;
            let text = emit(to_json(&rep), &mut files)?;
            if !rep.passed {
                return Err(CliError::ChecksFailed {
                    failed: rep.failures(),
                    stdout: text,
                });
            }
            text
        }
    };
    Ok(RunOutput { stdout, files })
}
