use super::*;
use crate::rates::{build_conditional_generator, build_population_generator, build_tilde_generator};
use proptest::prelude::*;

fn two_level() -> DipoleParams {
    DipoleParams::two_level(1.0).unwrap()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn pure_decay_matches_exponential() {
    let g = build_population_generator(&two_level(), 0.0).unwrap();
    for t in [0.0, 0.5, 3.0] {
        let p = expm_propagate(&g, &LevelDistribution::pure(Level::Excited), t).unwrap();
        assert!((p.get(Level::Excited) - (-t).exp()).abs() < 1e-14);
        assert!((p.get(Level::Ground) - (1.0 - (-t).exp())).abs() < 1e-14);
    }
}

#[test]
fn conditional_two_level_during_pulse() {
    let (r, gamma) = (5.0, 1.0);
    let g = build_conditional_generator(&two_level(), r).unwrap();
    for t in [0.01, 0.2, 1.0] {
        let p = expm_propagate(&g, &LevelDistribution::GROUND, t).unwrap();
        let s11 = (-r * t).exp();
        let s22 = r / (r - gamma) * ((-gamma * t).exp() - (-r * t).exp());
        assert!((p.get(Level::Ground) - s11).abs() < 1e-14);
        assert!((p.get(Level::Excited) - s22).abs() < 1e-14);
    }
}

#[test]
fn degenerate_pump_equal_to_decay() {
    let g = build_conditional_generator(&two_level(), 1.0).unwrap();
    let t = 0.7;
    let p = expm_propagate(&g, &LevelDistribution::GROUND, t).unwrap();
    // limit r -> gamma of r/(r-gamma) (e^{-gamma t} - e^{-r t})
    assert!((p.get(Level::Excited) - t * (-t).exp()).abs() < 1e-14);
}

#[test]
fn conditional_cycle_empties_excited_level() {
    let pulses = PulseTrain::new(1000.0, 0.01, 50.0).unwrap();
    let p = propagate_cycle(
        &two_level(),
        &pulses,
        GeneratorKind::Conditional,
        &LevelDistribution::GROUND,
    )
    .unwrap();
    assert!(p.get(Level::Excited) <= 1e-20);
}

/// Closed-form no-collection probability in the long-period limit, written
/// out directly from the two roots r', Γ'.
fn pi0_long_period(r: f64, gamma: f64, dt: f64, eta: f64) -> f64 {
    let eb = 1.0 - eta;
    let disc = ((r - gamma).powi(2) + 4.0 * eb * r * gamma).sqrt();
    let rp = 0.5 * (gamma + r + disc);
    let gp = 0.5 * (gamma + r - disc);
    let s11 = (r - gp) / (rp - gp) * (-rp * dt).exp() + (rp - r) / (rp - gp) * (-gp * dt).exp();
    let s22 = r / (rp - gp) * ((-gp * dt).exp() - (-rp * dt).exp());
    eb * s22 + s11
}

#[test]
fn tilde_cycle_matches_closed_form() {
    for (r, dt, eta) in [(1000.0, 0.01, 0.2), (5.0, 0.3, 0.5), (30.0, 0.1, 0.9)] {
        let pulses = PulseTrain::new(r, dt, 50.0).unwrap();
        let c = Collection::new(eta).unwrap();
        let p = propagate_cycle(
            &two_level(),
            &pulses,
            GeneratorKind::Tilde(c),
            &LevelDistribution::GROUND,
        )
        .unwrap();
        let want = pi0_long_period(r, 1.0, dt, eta);
        assert!((p.get(Level::Ground) - want).abs() < 1e-12, "{r} {dt} {eta}");
        assert!((p.total() - want).abs() < 1e-12);
    }
}

#[test]
fn population_cycle_is_normalized() {
    let d = DipoleParams::new(1.0, 0.1, 0.01, 0.5).unwrap();
    let pulses = PulseTrain::new(100.0, 0.05, 20.0).unwrap();
    let p = propagate_cycle(&d, &pulses, GeneratorKind::Population, &LevelDistribution::GROUND)
        .unwrap();
    assert!((p.total() - 1.0).abs() < 1e-12);
}

#[test]
fn no_pump_leaves_ground_state_alone() {
    let pulses = PulseTrain::new(0.0, 0.1, 10.0).unwrap();
    let s = count_resolved_cycle(
        &two_level(),
        &pulses,
        CountVariant::Emitted,
        4,
        &LevelDistribution::GROUND,
    )
    .unwrap();
    assert_eq!(s.blocks[0], LevelDistribution::GROUND);
    for b in &s.blocks[1..] {
        assert_eq!(b.total(), 0.0);
    }
    assert_eq!(s.tail_mass, 0.0);
}

#[test]
fn single_photon_block_matches_long_period_formula() {
    let (r, dt, gamma) = (1000.0, 0.01, 1.0);
    let pulses = PulseTrain::new(r, dt, 50.0).unwrap();
    let s = count_resolved_cycle(
        &two_level(),
        &pulses,
        CountVariant::Emitted,
        10,
        &LevelDistribution::GROUND,
    )
    .unwrap();
    let p1 = (r / (r - gamma)).powi(2) * ((-gamma * dt).exp() - (-r * dt).exp())
        - gamma * r * dt / (r - gamma) * (-r * dt).exp();
    let got = s.blocks[1].total();
    assert!((got - p1).abs() < 1e-12, "{got} vs {p1}");
    assert!((got - 0.992).abs() < 5e-4);
}

#[test]
fn structured_matches_dense_count_resolved() {
    let d = DipoleParams::new(1.0, 0.2, 0.05, 0.3).unwrap();
    let pulses = PulseTrain::new(20.0, 0.2, 3.0).unwrap();
    let cutoff = 6;
    let c = Collection::new(0.4).unwrap();
    for variant in [CountVariant::Emitted, CountVariant::Collected(c)] {
        let s = count_resolved_cycle(&d, &pulses, variant, cutoff, &LevelDistribution::GROUND)
            .unwrap();
        let mut v = nalgebra::DVector::zeros(3 * (cutoff + 1));
        v[0] = 1.0;
        for (on, dt) in [(true, pulses.delta_t), (false, pulses.dark_time())] {
            let (diag, coupling) = count_blocks(&d, pulses.segment_pump(on), variant).unwrap();
            let dense = counting::dense_block_bidiagonal(&diag, &coupling, cutoff);
            v = expm::expm_series(&dense, dt) * v;
        }
        for n in 0..=cutoff {
            for l in 0..3 {
                assert!((s.blocks[n].0[l] - v[3 * n + l].max(0.0)).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn generating_function_identities() {
    let d = two_level();
    for (r, dt, eta) in [(1000.0, 0.01, 0.2), (8.0, 0.5, 0.35), (50.0, 0.1, 0.8)] {
        let pulses = PulseTrain::new(r, dt, 50.0).unwrap();
        let c = Collection::new(eta).unwrap();
        let g = LevelDistribution::GROUND;
        let pi0 = propagate_cycle(&d, &pulses, GeneratorKind::Tilde(c), &g)
            .unwrap()
            .total();

        let emitted = count_resolved_auto(&d, &pulses, CountVariant::Emitted, &g).unwrap();
        let weighted: f64 = emitted
            .block_totals()
            .iter()
            .enumerate()
            .map(|(n, p)| (1.0 - eta).powi(n as i32) * p)
            .sum();
        assert!((weighted - pi0).abs() < 1e-10);

        let collected = count_resolved_auto(&d, &pulses, CountVariant::Collected(c), &g).unwrap();
        assert!((collected.blocks[0].total() - pi0).abs() < 1e-10);

        // Collected counts are the binomial thinning of emitted counts.
        let pe = emitted.block_totals();
        for (k, got) in collected.block_totals().iter().enumerate().take(5) {
            let want: f64 = (k..pe.len())
                .map(|n| binom(n, k) * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32) * pe[n])
                .sum();
            assert!((got - want).abs() < 1e-10, "k = {k}");
        }
    }
}

#[test]
fn stats_examples() {
    let s = CountResolvedState {
        blocks: vec![LevelDistribution::GROUND, LevelDistribution([0.0; 3])],
        tail_mass: 0.0,
    };
    let st = stats_from_counts(&s).unwrap();
    assert_eq!(st.p_e, 0.0);
    assert_eq!(st.f_il, 0.0);
    assert!(st.degenerate);

    let st = PhotonStats::from_distribution(vec![0.8, 0.18, 0.02], 0.0).unwrap();
    assert!((st.p_e - 0.2).abs() < 1e-15);
    assert!((st.f_il - 0.1).abs() < 1e-14);
    assert!(!st.degenerate);
    assert!((st.p_e - (1.0 - st.p_n[0])).abs() < 1e-12);
}

#[test]
fn auto_cutoff_reaches_tail_target() {
    // About ten emissions per period.
    let pulses = PulseTrain::new(100.0, 10.0, 60.0).unwrap();
    let s = count_resolved_auto(
        &two_level(),
        &pulses,
        CountVariant::Emitted,
        &LevelDistribution::GROUND,
    )
    .unwrap();
    assert!(s.cutoff() > DEFAULT_CUTOFF);
    assert!(s.tail_mass < TAIL_TARGET);
    assert!((s.total_mass() - 1.0).abs() < 1e-9);
}

#[test]
fn steady_state_without_shelving_is_ground() {
    let pulses = PulseTrain::new(1000.0, 0.01, 50.0).unwrap();
    let p = steady_cycle_distribution(&two_level(), &pulses).unwrap();
    assert!(p.max_abs_diff(&LevelDistribution::GROUND) < 1e-10);
}

#[test]
fn steady_state_is_a_fixed_point() {
    let d = DipoleParams::new(1.0, 0.1, 1e-3, 1e-3).unwrap();
    let pulses = PulseTrain::new(1000.0, 0.01, 50.0).unwrap();
    let p = steady_cycle_distribution(&d, &pulses).unwrap();
    let q = propagate_cycle(&d, &pulses, GeneratorKind::Population, &p).unwrap();
    assert!(p.max_abs_diff(&q) < 1e-11);
    assert!(p.get(Level::Metastable) > 0.1);
}

#[test]
fn level_distribution_validation() {
    assert!(LevelDistribution::new([0.5, 0.6, 0.0]).is_err());
    assert!(LevelDistribution::new([-0.1, 0.6, 0.0]).is_err());
    assert!(LevelDistribution::new([0.2, 0.3, 0.5]).is_ok());
    assert!(count_resolved_cycle(
        &two_level(),
        &PulseTrain::new(1.0, 0.1, 1.0).unwrap(),
        CountVariant::Emitted,
        0,
        &LevelDistribution::GROUND
    )
    .is_err());
}

fn random_case() -> impl Strategy<Value = (DipoleParams, PulseTrain, [f64; 3])> {
    (
        0.0f64..1.0,
        1e-3f64..0.5,
        1e-3f64..0.5,
        -1.0f64..4.0,
        -3.0f64..0.5,
        1.0f64..30.0,
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
    )
        .prop_map(|(beta, gm, rd, log_r, log_dt, t, (a, b, c))| {
            let d = DipoleParams::new(1.0, beta, gm, rd).unwrap();
            let dt = 10f64.powf(log_dt);
            let p = PulseTrain::new(10f64.powf(log_r), dt, dt + t).unwrap();
            let s = a + b + c + 1e-9;
            (d, p, [a / s, b / s, c / s])
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn population_cycle_conserves_probability((d, p, init) in random_case()) {
        let out = propagate_cycle(&d, &p, GeneratorKind::Population, &LevelDistribution(init)).unwrap();
        let want: f64 = init.iter().sum();
        prop_assert!((out.total() - want).abs() < 1e-12);
    }

    #[test]
    fn semigroup_property((d, p, init) in random_case(), t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
        let g = build_population_generator(&d, p.r).unwrap();
        let s = LevelDistribution(init);
        let once = expm_propagate(&g, &s, t1 + t2).unwrap();
        let twice = expm_propagate(&g, &expm_propagate(&g, &s, t1).unwrap(), t2).unwrap();
        prop_assert!(once.max_abs_diff(&twice) < 1e-12);
    }

    #[test]
    fn conditional_mass_decreases((d, p, _init) in random_case()) {
        let g = build_conditional_generator(&d, p.r).unwrap();
        let mut s = LevelDistribution::GROUND;
        let mut last = s.total();
        for _ in 0..20 {
            s = expm_propagate(&g, &s, p.delta_t).unwrap();
            prop_assert!(s.total() <= last + 1e-15);
            last = s.total();
        }
    }

    #[test]
    fn emitted_blocks_sum_to_populations((d, p, init) in random_case()) {
        let init = LevelDistribution(init);
        let s = count_resolved_auto(&d, &p, CountVariant::Emitted, &init).unwrap();
        let pop = propagate_cycle(&d, &p, GeneratorKind::Population, &init).unwrap();
        for (m, q) in s.marginal().iter().zip(pop.0) {
            prop_assert!((m - q).abs() < 1e-9 + s.tail_mass);
        }
        prop_assert!((s.total_mass() - init.total()).abs() < 1e-9);
    }

    #[test]
    fn collected_identity_random(log_r in -1.0f64..3.0, log_dt in -3.0f64..0.0, eta in 0.0f64..=1.0) {
        let d = two_level();
        let p = PulseTrain::new(10f64.powf(log_r), 10f64.powf(log_dt), 50.0).unwrap();
        let c = Collection::new(eta).unwrap();
        let g = LevelDistribution::GROUND;
        let pi0 = propagate_cycle(&d, &p, GeneratorKind::Tilde(c), &g).unwrap().total();
        let emitted = count_resolved_auto(&d, &p, CountVariant::Emitted, &g).unwrap();
        let weighted: f64 = emitted.block_totals().iter().enumerate()
            .map(|(n, q)| (1.0 - eta).powi(n as i32) * q).sum();
        prop_assert!((weighted - pi0).abs() < 1e-10);
        let collected = count_resolved_auto(&d, &p, CountVariant::Collected(c), &g).unwrap();
        prop_assert!((collected.blocks[0].total() - pi0).abs() < 1e-10);
    }
}

#[test]
fn tilde_generator_route_agrees_with_direct_builders() {
    let d = DipoleParams::new(1.0, 0.05, 0.01, 0.02).unwrap();
    let c = Collection::new(0.3).unwrap();
    let a = build_tilde_generator(&d, 40.0, c).unwrap();
    let b = RateGenerator::build(&d, 40.0, GeneratorKind::Tilde(c)).unwrap();
    assert_eq!(a, b);
}
