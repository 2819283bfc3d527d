//! Closed-form results for the two-level emitter, the Poissonian baseline
//! and the mean-field shelving model.
//!
//! Everything except [`TwoLevelClosedForm::pe_exact`] assumes the long
//! period limit `exp(-Γ T) → 0`.

use serde::Serialize;

use crate::error::{check, Error, Result};
use crate::rates::{Collection, DipoleParams, PulseTrain};

/// Relative gap `|r - Γ| / Γ` below which series expansions replace the
/// divided differences.
pub const SERIES_GAP: f64 = 1e-6;

/// Emission probabilities of a two-level emitter under one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoLevelClosedForm {
    /// At least one photon within the finite period.
    pub pe_exact: f64,
    /// At least one photon, long-period limit `1 - exp(-r δT)`.
    pub pe_approx: f64,
    /// Exactly one photon, long-period limit.
    pub p1: f64,
    pub limits: LimitFlags,
}

/// Which outputs were evaluated in the `exp(-Γ T) → 0` limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LimitFlags {
    pub pe_exact: bool,
    pub pe_approx: bool,
    pub p1: bool,
}

fn validate_two_level(r: f64, gamma: f64, delta_t: f64) -> Result<()> {
    check("r", r, r >= 0.0, "must be >= 0")?;
    check("gamma", gamma, gamma > 0.0, "must be > 0")?;
    check("delta_t", delta_t, delta_t > 0.0, "must be > 0")
}

/// `(1 - exp(-d x)) / d`, continuous through `d = 0`.
fn one_minus_exp_over(d: f64, x: f64) -> f64 {
    let y = d * x;
    if y.abs() < 1e-5 {
        x * (1.0 - y / 2.0 + y * y / 6.0 - y * y * y / 24.0)
    } else {
        -(-y).exp_m1() / d
    }
}

/// Probability of exactly one emitted photon in the long-period limit.
///
/// Written as `e^{-r x} [r x + (r/d)² (expm1(d x) - d x)]` with `d = r - Γ`;
/// for `|d| / Γ < SERIES_GAP` the bracket uses its expansion
/// `r x [1 + r x / 2 + r d x² / 6 + r d² x³ / 24]`.
pub fn single_photon_probability(r: f64, gamma: f64, delta_t: f64) -> f64 {
    let d = r - gamma;
    let x = delta_t;
    let bracket = if d.abs() / gamma < SERIES_GAP {
        r * x * (1.0 + r * x / 2.0 + r * d * x * x / 6.0 + r * d * d * x * x * x / 24.0)
    } else {
        let y = d * x;
        r * x + (r / d) * (r / d) * (y.exp_m1() - y)
    };
    (-r * x).exp() * bracket
}

pub fn two_level_emission(r: f64, gamma: f64, delta_t: f64, period: f64) -> Result<TwoLevelClosedForm> {
    validate_two_level(r, gamma, delta_t)?;
    check("period", period, period >= delta_t, "must be >= delta_t")?;
    let x = delta_t;
    let pe_approx = -(-r * x).exp_m1();
    // r/(r-Γ) e^{-ΓT} [1 - e^{(Γ-r)δT}] = r e^{-ΓT} (1 - e^{-(r-Γ)δT}) / (r-Γ)
    let late = r * (-gamma * period).exp() * one_minus_exp_over(r - gamma, x);
    let pe_exact = (pe_approx - late).max(0.0);
    let p1 = single_photon_probability(r, gamma, delta_t).min(pe_approx);
    Ok(TwoLevelClosedForm {
        pe_exact,
        pe_approx,
        p1,
        limits: LimitFlags {
            pe_exact: false,
            pe_approx: true,
            p1: true,
        },
    })
}

/// The two decay rates of the two-level no-collection system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveRates {
    pub r_prime: f64,
    pub gamma_prime: f64,
}

pub fn effective_rates(r: f64, gamma: f64, eta: f64) -> Result<EffectiveRates> {
    check("r", r, r >= 0.0, "must be >= 0")?;
    check("gamma", gamma, gamma > 0.0, "must be > 0")?;
    let eta_bar = Collection::new(eta)?.eta_bar();
    let disc = ((r - gamma).powi(2) + 4.0 * eta_bar * r * gamma).sqrt();
    let r_prime = 0.5 * (gamma + r + disc);
    // Product form avoids cancellation in (Γ + r - disc).
    let gamma_prime = eta * r * gamma / r_prime;
    Ok(EffectiveRates {
        r_prime,
        gamma_prime,
    })
}

/// Collected-photon statistics for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectionStats {
    pub pi_0: f64,
    pub pi_e: f64,
    pub pi_1: f64,
    pub f_il: f64,
    /// Set when `pi_e = 0`; `f_il` is then reported as 0.
    pub degenerate: bool,
}

impl CollectionStats {
    fn from_pi(pi_0: f64, pi_1: f64) -> Self {
        let pi_0 = pi_0.clamp(0.0, 1.0);
        let pi_e = 1.0 - pi_0;
        let pi_1 = pi_1.clamp(0.0, pi_e);
        let (f_il, degenerate) = if pi_e > 0.0 {
            (((pi_e - pi_1) / pi_e).clamp(0.0, 1.0), false)
        } else {
            (0.0, true)
        };
        Self {
            pi_0,
            pi_e,
            pi_1,
            f_il,
            degenerate,
        }
    }
}

/// `sinh(y) / y` and `(y cosh y - sinh y) / y³` by their power series; used
/// for `|y| < 1` where the closed forms cancel.
fn sinhc_series(y: f64) -> (f64, f64) {
    let y2 = y * y;
    // s_k = y^{2k} / (2k+1)!,  u_k = y^{2k-2} / (2k+1)!
    let (mut s, mut t) = (0.0, 0.0);
    let mut s_k = 1.0;
    let mut u_k = 1.0 / 6.0;
    for k in 0..20 {
        s += s_k;
        if k >= 1 {
            t += 2.0 * k as f64 * u_k;
            u_k *= y2 / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
        }
        s_k *= y2 / ((2 * k + 2) as f64 * (2 * k + 3) as f64);
    }
    (s, t)
}

/// Pieces of the no-collection solution at the end of the pulse, written
/// around the mean rate `c = (r' + Γ')/2 = (r + Γ)/2` and the half gap
/// `y = (r' - Γ') δT / 2`. All are finite at `r' = Γ'`.
struct TildeSolution {
    /// e^{-cx} cosh y
    ech: f64,
    /// e^{-cx} sinh(y) / y
    esc: f64,
    /// e^{-cx} (y cosh y - sinh y) / y³
    est: f64,
}

impl TildeSolution {
    fn new(r: f64, gamma: f64, x: f64, gap: f64) -> Self {
        let c = 0.5 * (r + gamma);
        let y = 0.5 * gap * x;
        let lo = (-c * x + y).exp(); // e^{-Γ' x}
        let hi = (-c * x - y).exp(); // e^{-r' x}
        let ech = 0.5 * (lo + hi);
        if y < 1.0 {
            let (s, t) = sinhc_series(y);
            let e = (-c * x).exp();
            Self {
                ech,
                esc: e * s,
                est: e * t,
            }
        } else {
            let esh = 0.5 * (lo - hi);
            Self {
                ech,
                esc: esh / y,
                est: (y * ech - esh) / (y * y * y),
            }
        }
    }
}

/// Collected-photon statistics in the long-period limit.
///
/// `pi_0 = η̄ σ̃22(δT) + σ̃11(δT)` with
/// `σ̃22 = r x E S(y)` and `σ̃11 = E [cosh y - (r - c) x S(y)]`, where
/// `E = e^{-c x}`, `S(y) = sinh(y)/y`, `c = (r+Γ)/2` and
/// `y = x sqrt((r-Γ)² + 4 η̄ r Γ) / 2`. Only `y` depends on `η̄`, with
/// `y dy/dη̄ = r Γ x² / 2`, which gives
///
/// `∂Π₀/∂η̄ = σ̃22 + E (r Γ x² / 2) [S(y) + (η̄ r x - (r - c) x) T(y)]`
///
/// where `T(y) = S'(y)/y = (y cosh y - sinh y)/y³`, and `pi_1 = η ∂Π₀/∂η̄`.
pub fn collection_stats(r: f64, gamma: f64, delta_t: f64, eta: f64) -> Result<CollectionStats> {
    validate_two_level(r, gamma, delta_t)?;
    let c = Collection::new(eta)?;
    let (pi_0, d_pi0) = pi0_and_derivative(r, gamma, delta_t, c.eta_bar());
    Ok(CollectionStats::from_pi(pi_0, eta * d_pi0))
}

/// `Π₀(η̄)` and `∂Π₀/∂η̄` for the two-level system.
pub fn pi0_and_derivative(r: f64, gamma: f64, x: f64, eta_bar: f64) -> (f64, f64) {
    let gap = ((r - gamma).powi(2) + 4.0 * eta_bar * r * gamma).sqrt();
    let sol = TildeSolution::new(r, gamma, x, gap);
    let c = 0.5 * (r + gamma);
    let s22 = r * x * sol.esc;
    let s11 = sol.ech - (r - c) * x * sol.esc;
    let pi_0 = eta_bar * s22 + s11;
    let d = s22 + 0.5 * r * gamma * x * x * (sol.esc + (eta_bar * r * x - (r - c) * x) * sol.est);
    (pi_0, d)
}

/// Collected-photon statistics assuming at most two photons per pulse.
pub fn collection_stats_two_photon_approx(
    r: f64,
    gamma: f64,
    delta_t: f64,
    eta: f64,
) -> Result<CollectionStats> {
    validate_two_level(r, gamma, delta_t)?;
    let c = Collection::new(eta)?;
    let pe = -(-r * delta_t).exp_m1();
    let p1 = single_photon_probability(r, gamma, delta_t).min(pe);
    let eb = c.eta_bar();
    let pi_0 = 1.0 - pe + eb * p1 + eb * eb * (pe - p1);
    let pi_1 = eta * (p1 + 2.0 * eb * (pe - p1));
    Ok(CollectionStats::from_pi(pi_0, pi_1))
}

/// Below this emission probability the Poisson leakage uses its series.
pub const POISSON_SERIES_BELOW: f64 = 1e-6;

/// Leakage `P(n >= 2) / P(n >= 1)` of a Poissonian source with
/// `P(n >= 1) = p_e`: `1 - (1 - 1/p_e) ln(1 - p_e)`.
pub fn poisson_f_il(p_e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::Domain {
            what: "p_e",
            value: p_e,
        });
    }
    if p_e == 1.0 {
        return Ok(1.0);
    }
    if p_e < POISSON_SERIES_BELOW {
        return Ok(p_e * (0.5 + p_e * (1.0 / 6.0 + p_e / 12.0)));
    }
    Ok(1.0 + (1.0 - p_e) / p_e * (-p_e).ln_1p())
}

/// Mean-field shelving figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShelvingFigures {
    /// Total escape rate from the metastable level, `Γ_M + r_d`.
    pub escape_rate: f64,
    pub period: f64,
    /// Fraction of emitted photons retained relative to no shelving.
    pub duty_factor: f64,
}

impl ShelvingFigures {
    /// Probability of still being shelved after `q` periods.
    pub fn survival(&self, q: f64) -> f64 {
        (-self.escape_rate * q * self.period).exp()
    }
}

pub fn shelving_figures(dipole: &DipoleParams, pulses: &PulseTrain, p_e: f64) -> Result<ShelvingFigures> {
    dipole.validate()?;
    pulses.validate()?;
    check("p_e", p_e, (0.0..=1.0).contains(&p_e), "must lie in [0, 1]")?;
    let escape_rate = dipole.gamma_m + dipole.r_d;
    let reach = dipole.beta * p_e;
    let escape = escape_rate * pulses.period;
    let duty_factor = if reach == 0.0 { 1.0 } else { escape / (reach + escape) };
    Ok(ShelvingFigures {
        escape_rate,
        period: pulses.period,
        duty_factor,
    })
}

/// `f_il < P_1 / 2`, equivalent to an anticorrelation parameter below one
/// when `P(n >= 1) ≪ 1`.
pub fn satisfies_anticorrelation(f_il: f64, p_1: f64) -> bool {
    f_il < 0.5 * p_1
}
