//! Eavesdropping models that exploit multi-photon pulses.
//!
//! All calculators take [`PhotonStats`] and do not care whether those came
//! from the closed forms, the propagator or the Monte Carlo.

use serde::Serialize;

use crate::analytics::poisson_f_il;
use crate::error::{check, Result};
use crate::propagator::PhotonStats;

/// How Bob could notice the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Detectability {
    /// Looks like extra loss on the line.
    pub loss_anomaly: bool,
    /// Shows up in the photon-number statistics Bob receives.
    pub statistics_anomaly: bool,
}

impl Detectability {
    pub fn undetectable(&self) -> bool {
        !self.loss_anomaly && !self.statistics_anomaly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackReport {
    /// Fraction of Bob's bits that Eve also learns.
    pub eve_fraction: f64,
    /// Fraction of pulses that give Bob a bit.
    pub bob_rate: f64,
    pub detectable_by: Detectability,
    /// Source had no non-empty pulses; nothing to attack.
    pub degenerate: bool,
    /// Pulses with three or more photons are not negligible (beam splitter).
    pub multiphoton_warning: bool,
    /// `eve_fraction` comes from the proportional model below the loss
    /// threshold rather than the threshold statement itself.
    pub extension: bool,
}

impl AttackReport {
    fn degenerate(detectable_by: Detectability) -> Self {
        Self {
            eve_fraction: 0.0,
            bob_rate: 0.0,
            detectable_by,
            degenerate: true,
            multiphoton_warning: false,
            extension: false,
        }
    }
}

/// Eve taps a fraction `tap` of the beam and stores the photons until the
/// bases are announced. Pulses with three or more photons are neglected.
pub fn beamsplitter_attack(stats: &PhotonStats, tap: f64) -> Result<AttackReport> {
    check("tap", tap, (0.0..=1.0).contains(&tap), "must lie in [0, 1]")?;
    let detectable_by = Detectability {
        loss_anomaly: true,
        statistics_anomaly: false,
    };
    if stats.degenerate || stats.p_e <= 0.0 {
        return Ok(AttackReport::degenerate(detectable_by));
    }
    let p2 = stats.p(2);
    let p_ge3 = stats.p_ge(3);
    let eve = 2.0 * tap * (1.0 - tap) * p2 / stats.p_e;
    let bob_rate = stats
        .p_n
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, p)| p * (1.0 - tap.powi(n as i32)))
        .sum::<f64>()
        + stats.tail * (1.0 - tap * tap * tap);
    Ok(AttackReport {
        eve_fraction: eve.min(1.0),
        bob_rate,
        detectable_by,
        degenerate: false,
        multiphoton_warning: p_ge3 >= 0.01 * p2 && p_ge3 > 0.0,
        extension: false,
    })
}

/// Eve counts photons non-destructively and keeps one photon of every
/// multi-photon pulse.
pub fn qnd_attack(stats: &PhotonStats) -> AttackReport {
    let detectable_by = Detectability {
        loss_anomaly: false,
        statistics_anomaly: true,
    };
    if stats.degenerate || stats.p_e <= 0.0 {
        return AttackReport::degenerate(detectable_by);
    }
    AttackReport {
        eve_fraction: stats.f_il,
        bob_rate: stats.p_e,
        detectable_by,
        degenerate: false,
        multiphoton_warning: false,
        extension: false,
    }
}

/// Eve replaces a lossy line of efficiency `line_efficiency` by a lossless
/// one and forwards preferentially the pulses she has split. Below the
/// threshold `line_efficiency < f_il` she learns essentially everything;
/// above it, `f_il / line_efficiency` is reported as a proportional model.
pub fn lossy_line_attack(stats: &PhotonStats, line_efficiency: f64) -> Result<AttackReport> {
    check(
        "line_efficiency",
        line_efficiency,
        line_efficiency > 0.0 && line_efficiency <= 1.0,
        "must lie in (0, 1]",
    )?;
    let detectable_by = Detectability::default();
    if stats.degenerate || stats.p_e <= 0.0 {
        return Ok(AttackReport::degenerate(detectable_by));
    }
    let (eve_fraction, extension) = if line_efficiency < stats.f_il {
        (1.0, false)
    } else {
        ((stats.f_il / line_efficiency).min(1.0), true)
    };
    Ok(AttackReport {
        eve_fraction,
        bob_rate: line_efficiency * stats.p_e,
        detectable_by,
        degenerate: false,
        multiphoton_warning: false,
        extension,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceComparison {
    pub dipole_f_il: f64,
    pub poisson_f_il: f64,
    /// `poisson_f_il / dipole_f_il`; infinite when the dipole does not leak.
    pub improvement_ratio: f64,
    pub infinite: bool,
}

/// Leakage of the source against an attenuated Poissonian source with the
/// non-empty-pulse probability `p_e_match`.
pub fn compare_sources(dipole_stats: &PhotonStats, p_e_match: f64) -> Result<SourceComparison> {
    let poisson = poisson_f_il(p_e_match)?;
    let dipole = dipole_stats.f_il;
    let infinite = dipole == 0.0;
    Ok(SourceComparison {
        dipole_f_il: dipole,
        poisson_f_il: poisson,
        improvement_ratio: if infinite { f64::INFINITY } else { poisson / dipole },
        infinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(p: &[f64]) -> PhotonStats {
        PhotonStats::from_distribution(p.to_vec(), 0.0).unwrap()
    }

    fn poisson_stats(mu: f64, n: usize) -> PhotonStats {
        let mut p = Vec::with_capacity(n);
        let mut term = (-mu).exp();
        for k in 0..n {
            p.push(term);
            term *= mu / (k + 1) as f64;
        }
        PhotonStats::from_distribution(p, 0.0).unwrap()
    }

    #[test]
    fn beamsplitter_examples() {
        let s = stats(&[0.8, 0.18, 0.02]);
        assert_eq!(beamsplitter_attack(&s, 0.0).unwrap().eve_fraction, 0.0);
        let r = beamsplitter_attack(&s, 0.5).unwrap();
        assert!((r.eve_fraction - 0.05).abs() < 1e-15);
        assert!((r.eve_fraction - s.p(2) / (2.0 * s.p_e)).abs() < 1e-15);
        assert!(r.detectable_by.loss_anomaly);
        assert!(!r.multiphoton_warning);
        // singles lose a fraction `tap`, pairs reach Bob unless both are tapped
        assert!((r.bob_rate - (0.18 * 0.5 + 0.02 * 0.75)).abs() < 1e-15);
    }

    #[test]
    fn beamsplitter_is_concave_with_peak_at_half() {
        let s = stats(&[0.7, 0.25, 0.05]);
        let grid: Vec<f64> = (0..=100)
            .map(|i| beamsplitter_attack(&s, i as f64 / 100.0).unwrap().eve_fraction)
            .collect();
        let peak = grid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 50);
        for w in grid.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] <= 1e-15);
        }
    }

    #[test]
    fn beamsplitter_flags_heavy_multiphoton_tail() {
        let s = stats(&[0.5, 0.3, 0.1, 0.1]);
        assert!(beamsplitter_attack(&s, 0.5).unwrap().multiphoton_warning);
    }

    #[test]
    fn qnd_examples() {
        assert_eq!(qnd_attack(&stats(&[0.8, 0.2])).eve_fraction, 0.0);
        let s = stats(&[0.8, 0.18, 0.02]);
        let r = qnd_attack(&s);
        assert_eq!(r.eve_fraction, s.f_il);
        assert!((r.eve_fraction - 0.1).abs() < 1e-14);
        assert!(r.detectable_by.statistics_anomaly);
    }

    #[test]
    fn lossy_line_examples() {
        // f_il = 0.002 exactly
        let s = stats(&[0.8, 0.1996, 0.0004]);
        assert!((s.f_il - 0.002).abs() < 1e-15);
        let r = lossy_line_attack(&s, 0.001).unwrap();
        assert_eq!(r.eve_fraction, 1.0);
        assert!(r.detectable_by.undetectable());
        assert!(!r.extension);
        let r = lossy_line_attack(&s, 0.01).unwrap();
        assert!((r.eve_fraction - 0.2).abs() < 1e-12);
        assert!(r.extension);
        let r = lossy_line_attack(&stats(&[0.8, 0.2]), 0.3).unwrap();
        assert_eq!(r.eve_fraction, 0.0);
        assert!(lossy_line_attack(&s, 0.0).is_err());
    }

    #[test]
    fn degenerate_source() {
        let s = stats(&[1.0]);
        assert!(beamsplitter_attack(&s, 0.5).unwrap().degenerate);
        assert!(qnd_attack(&s).degenerate);
        assert!(lossy_line_attack(&s, 0.5).unwrap().degenerate);
        let c = compare_sources(&s, 0.2).unwrap();
        assert!(c.infinite && c.improvement_ratio.is_infinite());
    }

    #[test]
    fn poisson_source_compares_equal_to_itself() {
        let mu = 0.25;
        let s = poisson_stats(mu, 40);
        let c = compare_sources(&s, 1.0 - (-mu).exp()).unwrap();
        assert!((c.improvement_ratio - 1.0).abs() < 1e-12);
    }
}
