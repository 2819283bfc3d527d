//! Physical parameters of the three-level emitter and the transition-rate
//! generators built from them.
//!
//! Level indices are fixed: `Ground` = 1, `Excited` = 2, `Metastable` = 3
//! (zero-based matrix rows/columns 0, 1, 2). A generator acts on column
//! probability vectors: entry `(b, c)` is the rate of flow into level `b`
//! from level `c`, and the diagonal holds minus the total outflow, so
//! `dp/dt = G p`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{check, Result};

/// One of the three emitter levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Ground = 1,
    Excited = 2,
    Metastable = 3,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Ground, Level::Excited, Level::Metastable];

    /// Zero-based row/column index into generators and distributions.
    pub const fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }
}

/// Rates of the emitter, all in units of inverse time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleParams {
    /// Radiative decay 2 → 1; the only photon-emitting channel.
    pub gamma: f64,
    /// 2 → 3 proceeds at `beta * gamma`.
    pub beta: f64,
    /// Metastable decay 3 → 1.
    pub gamma_m: f64,
    /// Deshelving 3 → 2.
    pub r_d: f64,
}

impl DipoleParams {
    pub fn new(gamma: f64, beta: f64, gamma_m: f64, r_d: f64) -> Result<Self> {
        let p = Self {
            gamma,
            beta,
            gamma_m,
            r_d,
        };
        p.validate()?;
        Ok(p)
    }

    /// Two-level emitter (no metastable channel) with decay rate `gamma`.
    pub fn two_level(gamma: f64) -> Result<Self> {
        Self::new(gamma, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        check("gamma", self.gamma, self.gamma > 0.0, "must be > 0")?;
        check("beta", self.beta, self.beta >= 0.0, "must be >= 0")?;
        check("gamma_m", self.gamma_m, self.gamma_m >= 0.0, "must be >= 0")?;
        check("r_d", self.r_d, self.r_d >= 0.0, "must be >= 0")
    }

    pub fn with_deshelving(self, r_d: f64) -> Self {
        Self { r_d, ..self }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

/// When the deshelving rate `r_d` is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeshelvingWindow {
    /// Deshelving acts during the whole period.
    #[default]
    Always,
    /// Deshelving acts only while the pump pulse is on.
    PulseOnly,
}

/// Rectangular excitation pulses: pump rate `r` for `delta_t`, then dark
/// until `period`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub r: f64,
    pub delta_t: f64,
    pub period: f64,
    #[serde(default)]
    pub deshelving: DeshelvingWindow,
}

impl PulseTrain {
    pub fn new(r: f64, delta_t: f64, period: f64) -> Result<Self> {
        let p = Self {
            r,
            delta_t,
            period,
            deshelving: DeshelvingWindow::Always,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_deshelving_window(self, deshelving: DeshelvingWindow) -> Self {
        Self { deshelving, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check("r", self.r, self.r >= 0.0, "must be >= 0")?;
        check("delta_t", self.delta_t, self.delta_t > 0.0, "must be > 0")?;
        check(
            "period",
            self.period,
            self.period >= self.delta_t,
            "must be >= delta_t",
        )
    }

    /// Length of the dark part of each period.
    pub fn dark_time(&self) -> f64 {
        self.period - self.delta_t
    }

    /// Pulse energy in units of the pump rate times duration.
    pub fn energy(&self) -> f64 {
        self.r * self.delta_t
    }

    /// Dipole as seen during the pulse (`on = true`) or the dark window.
    pub fn segment_dipole(&self, dipole: &DipoleParams, on: bool) -> DipoleParams {
        match (self.deshelving, on) {
            (DeshelvingWindow::PulseOnly, false) => dipole.with_deshelving(0.0),
            _ => *dipole,
        }
    }

    /// Pump rate applied during the pulse (`on = true`) or the dark window.
    pub fn segment_pump(&self, on: bool) -> f64 {
        if on {
            self.r
        } else {
            0.0
        }
    }
}

/// Collection (detection) efficiency of emitted photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Collection {
    eta: f64,
}

impl Collection {
    pub fn new(eta: f64) -> Result<Self> {
        check("eta", eta, (0.0..=1.0).contains(&eta), "must lie in [0, 1]")?;
        Ok(Self { eta })
    }

    pub const PERFECT: Collection = Collection { eta: 1.0 };

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Probability that an emitted photon is missed.
    pub fn eta_bar(&self) -> f64 {
        1.0 - self.eta
    }
}

/// Which evolution a generator describes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// Unconditional level populations.
    Population,
    /// Populations conditioned on no photon emitted yet.
    Conditional,
    /// Populations weighted by `eta_bar` per uncollected photon; the total
    /// gives the probability that nothing has been collected.
    Tilde(Collection),
}

impl GeneratorKind {
    /// Fraction of the 2 → 1 emission flow that refills the ground level.
    pub fn refill_fraction(&self) -> f64 {
        match self {
            GeneratorKind::Population => 1.0,
            GeneratorKind::Conditional => 0.0,
            GeneratorKind::Tilde(c) => c.eta_bar(),
        }
    }
}

/// The photon-emitting transition 2 → 1 as represented in a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionTag {
    /// Total emission rate out of the excited level.
    pub rate: f64,
    /// Part of `rate` that re-enters the ground level within this generator.
    pub refill: f64,
}

/// 3×3 transition-rate matrix with the emitting transition tagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateGenerator {
    matrix: Matrix3<f64>,
    emission: EmissionTag,
    kind: GeneratorKind,
}

impl RateGenerator {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn emission(&self) -> EmissionTag {
        self.emission
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    /// Rate of flow into `to` from `from`.
    pub fn entry(&self, to: Level, from: Level) -> f64 {
        self.matrix[(to.index(), from.index())]
    }

    /// Column sums; minus the rate at which probability leaves the
    /// described ensemble from each level.
    pub fn column_sums(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.matrix.column(c).sum();
        }
        out
    }

    pub fn build(dipole: &DipoleParams, pump: f64, kind: GeneratorKind) -> Result<Self> {
        dipole.validate()?;
        check("pump", pump, pump >= 0.0, "must be >= 0")?;
        let DipoleParams {
            gamma,
            beta,
            gamma_m,
            r_d,
        } = *dipole;
        let (g, e, m) = (
            Level::Ground.index(),
            Level::Excited.index(),
            Level::Metastable.index(),
        );
        let refill = kind.refill_fraction() * gamma;

        let mut a = Matrix3::zeros();
        a[(e, g)] = pump;
        a[(g, g)] = -pump;

        a[(g, e)] = refill;
        a[(m, e)] = beta * gamma;
        a[(e, e)] = -(1.0 + beta) * gamma;

        a[(g, m)] = gamma_m;
        a[(e, m)] = r_d;
        a[(m, m)] = -(gamma_m + r_d);

        Ok(Self {
            matrix: a,
            emission: EmissionTag {
                rate: gamma,
                refill,
            },
            kind,
        })
    }
}

/// Generator of the unconditional populations; columns sum to zero.
pub fn build_population_generator(dipole: &DipoleParams, pump: f64) -> Result<RateGenerator> {
    RateGenerator::build(dipole, pump, GeneratorKind::Population)
}

/// Generator of the zero-emission populations: the 2 → 1 refill is removed,
/// so column 2 leaks probability at rate `gamma`.
pub fn build_conditional_generator(dipole: &DipoleParams, pump: f64) -> Result<RateGenerator> {
    RateGenerator::build(dipole, pump, GeneratorKind::Conditional)
}

/// Generator of the no-collection generating function: the conditional
/// generator with the uncollected part `eta_bar * gamma` of the emission
/// flow restored to the ground level.
pub fn build_tilde_generator(
    dipole: &DipoleParams,
    pump: f64,
    collection: Collection,
) -> Result<RateGenerator> {
    RateGenerator::build(dipole, pump, GeneratorKind::Tilde(collection))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Level::*;

    fn dipole(gamma: f64, beta: f64, gamma_m: f64, r_d: f64) -> DipoleParams {
        DipoleParams::new(gamma, beta, gamma_m, r_d).unwrap()
    }

    #[test]
    fn pure_decay_population_generator() {
        let g = build_population_generator(&dipole(1.0, 0.0, 0.0, 0.0), 0.0).unwrap();
        assert_eq!(g.entry(Ground, Excited), 1.0);
        assert_eq!(g.entry(Excited, Excited), -1.0);
        let nonzero = g.matrix().iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2);
        assert_eq!(g.column_sums(), [0.0; 3]);
    }

    #[test]
    fn population_generator_entries() {
        let g = build_population_generator(&dipole(1.0, 0.1, 0.01, 0.5), 100.0).unwrap();
        assert!((g.entry(Excited, Excited) + 1.1).abs() < 1e-15);
        assert_eq!(g.entry(Metastable, Excited), 0.1);
        assert_eq!(g.entry(Excited, Metastable), 0.5);
        assert_eq!(g.entry(Ground, Metastable), 0.01);
        assert_eq!(g.entry(Excited, Ground), 100.0);
        assert_eq!(g.entry(Ground, Ground), -100.0);
        assert_eq!(g.entry(Ground, Excited), 1.0);
    }

    #[test]
    fn conditional_two_level_reduction() {
        let g = build_conditional_generator(&dipole(1.0, 0.0, 0.0, 0.0), 5.0).unwrap();
        assert_eq!(g.entry(Ground, Ground), -5.0);
        assert_eq!(g.entry(Excited, Ground), 5.0);
        assert_eq!(g.entry(Excited, Excited), -1.0);
        assert_eq!(g.entry(Ground, Excited), 0.0);
    }

    #[test]
    fn conditional_with_shelving_and_no_pump() {
        let g = build_conditional_generator(&dipole(1.0, 0.1, 0.0, 0.0), 0.0).unwrap();
        assert!((g.entry(Excited, Excited) + 1.1).abs() < 1e-15);
        assert_eq!(g.entry(Ground, Excited), 0.0);
    }

    #[test]
    fn tilde_two_level_reduction() {
        let c = Collection::new(0.2).unwrap();
        let g = build_tilde_generator(&dipole(1.0, 0.0, 0.0, 0.0), 5.0, c).unwrap();
        assert!((g.entry(Ground, Excited) - 0.8).abs() < 1e-15);
        assert_eq!(g.entry(Excited, Excited), -1.0);
    }

    #[test]
    fn invalid_parameters_name_the_field() {
        let err = DipoleParams::new(0.0, 0.0, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let err = DipoleParams::new(1.0, -0.1, 0.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("beta"));
        let err = DipoleParams::new(1.0, 0.0, f64::INFINITY, 0.0).unwrap_err();
        assert!(err.to_string().contains("gamma_m"));
        let d = dipole(1.0, 0.0, 0.0, 0.0);
        let err = build_population_generator(&d, -1.0).unwrap_err();
        assert!(err.to_string().contains("pump"));
        assert!(Collection::new(1.5).is_err());
        assert!(PulseTrain::new(1.0, 2.0, 1.0).is_err());
        assert!(PulseTrain::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn level_index_mapping() {
        assert_eq!(Ground.index(), 0);
        assert_eq!(Excited.index(), 1);
        assert_eq!(Metastable.index(), 2);
        for l in Level::ALL {
            assert_eq!(Level::from_index(l.index()), Some(l));
        }
    }

    #[test]
    fn pulse_only_deshelving_is_gated() {
        let d = dipole(1.0, 0.1, 0.01, 0.5);
        let p = PulseTrain::new(10.0, 0.1, 50.0)
            .unwrap()
            .with_deshelving_window(DeshelvingWindow::PulseOnly);
        assert_eq!(p.segment_dipole(&d, true).r_d, 0.5);
        assert_eq!(p.segment_dipole(&d, false).r_d, 0.0);
        let p = p.with_deshelving_window(DeshelvingWindow::Always);
        assert_eq!(p.segment_dipole(&d, false).r_d, 0.5);
    }

    fn params() -> impl Strategy<Value = (DipoleParams, f64, f64)> {
        (
            1e-3f64..1e3,
            0.0f64..2.0,
            0.0f64..10.0,
            0.0f64..10.0,
            0.0f64..1e4,
            0.0f64..=1.0,
        )
            .prop_map(|(g, b, gm, rd, pump, eta)| (dipole(g, b, gm, rd), pump, eta))
    }

    proptest! {
        #[test]
        fn column_sums_and_degeneracies((d, pump, eta) in params()) {
            let pop = build_population_generator(&d, pump).unwrap();
            let cond = build_conditional_generator(&d, pump).unwrap();
            let c = Collection::new(eta).unwrap();
            let tilde = build_tilde_generator(&d, pump, c).unwrap();

            let tol = 1e-12 * (pump + (1.0 + d.beta) * d.gamma + d.gamma_m + d.r_d);
            for (s, want) in pop.column_sums().iter().zip([0.0, 0.0, 0.0]) {
                prop_assert!((s - want).abs() <= tol);
            }
            for (s, want) in cond.column_sums().iter().zip([0.0, -d.gamma, 0.0]) {
                prop_assert!((s - want).abs() <= tol);
            }
            for (s, want) in tilde.column_sums().iter().zip([0.0, -eta * d.gamma, 0.0]) {
                prop_assert!((s - want).abs() <= tol);
            }

            for g in [&pop, &cond, &tilde] {
                for b in 0..3 {
                    for col in 0..3 {
                        if b != col {
                            prop_assert!(g.matrix()[(b, col)] >= 0.0);
                        }
                    }
                }
            }

            let t0 = build_tilde_generator(&d, pump, Collection::new(0.0).unwrap()).unwrap();
            let t1 = build_tilde_generator(&d, pump, Collection::new(1.0).unwrap()).unwrap();
            prop_assert_eq!(t0.matrix(), pop.matrix());
            prop_assert_eq!(t1.matrix(), cond.matrix());
        }
    }
}
