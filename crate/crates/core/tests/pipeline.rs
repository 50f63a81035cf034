use approx::assert_relative_eq;
use logcap::kernel::{measure_energy, DensitySpec};
use logcap::redistribution::{
    clip_equilibrium, density_measure, multi_level, nested_driver, single_level, substitute_density,
    RedistributionConfig,
};
use logcap::setgen::{
    level_union, restrict_support, sample_centers_iid, CenterSequence, DensityTable, GDeltaApprox, LengthSchedule,
    LevelBlocks,
};
use logcap::transition::{h0_volume_bound, integral_bracket, sweep_alpha, sweep_table, SweepConfig, Verdict};
use proptest::prelude::*;

fn energy(d: &DensitySpec) -> f64 {
    measure_energy(&density_measure(d).unwrap(), 1e-10).unwrap().total
}

#[test]
fn clipped_energies_decrease_to_log4() {
    let es: Vec<f64> = [0.1, 0.03, 0.01]
        .iter()
        .map(|&d| energy(&clip_equilibrium(d).unwrap()))
        .collect();
    assert!(es[0] > es[1] && es[1] > es[2], "{es:?}");
    assert!(es[2] > 4f64.ln() && es[2] - 4f64.ln() < 0.02, "{es:?}");
    assert!((energy(&clip_equilibrium(0.49999).unwrap()) - 1.5).abs() < 1e-3);
}

#[test]
fn uniform_outer_part_near_c0() {
    let cfg = RedistributionConfig::new(
        LengthSchedule::new(1.0, 1.0).unwrap(),
        sample_centers_iid(&DensityTable::uniform(), 512, 0),
        DensitySpec::Constant(1.0),
    )
    .unwrap();
    let (mu, b) = single_level(&cfg, 512).unwrap();
    assert_eq!(b.normalization, 1.0);
    assert_relative_eq!(mu.total_mass(), 1.0, epsilon = 1e-12);
    assert!((b.outer_sum - 1.5).abs() < 0.1, "{}", b.outer_sum);
}

#[test]
fn substitution_recovers_target_under_triangular_sampling() {
    let h = clip_equilibrium(0.05).unwrap();
    let phi = DensityTable::triangular();
    let sub = substitute_density(&h, &phi).unwrap();
    assert!(sub.capped_mass > 0.0 && sub.capped_mass < 5e-3, "{}", sub.capped_mass);
    let lambda = 0.1;
    let q = 6;
    let cfg = RedistributionConfig::new(
        LengthSchedule::new(lambda, 1.0).unwrap(),
        sample_centers_iid(&phi, 3, 0),
        sub.f,
    )
    .unwrap()
    .with_q(q)
    .unwrap();
    let target = energy(&h);
    let ml = multi_level(&cfg, 256).unwrap();
    let cross = ml.breakdown.outer_sum / (1.0 - 1.0 / q as f64);
    assert!((cross - target).abs() < 0.05, "{cross} vs {target}");
    assert!(ml.energy() > target - 0.05);
}

#[test]
fn level_self_term_is_suppressed() {
    let cfg = RedistributionConfig::new(
        LengthSchedule::new(1.0, 1.0).unwrap(),
        sample_centers_iid(&DensityTable::uniform(), 8, 0),
        DensitySpec::Constant(1.0),
    )
    .unwrap()
    .with_q(4)
    .unwrap();
    let ml = multi_level(&cfg, 32).unwrap();
    let worst = ml.level_energies.iter().cloned().fold(f64::MIN, f64::max);
    assert!(ml.breakdown.self_sum <= worst / 4.0 + 1e-12);
    let total: f64 = ml.cells.iter().flatten().sum();
    assert!((total - ml.energy()).abs() <= 1e-12 * ml.energy());
}

#[test]
fn second_stage_exhausts_at_desk_scale() {
    let cfg = RedistributionConfig::new(
        LengthSchedule::new(0.1, 1.0).unwrap(),
        sample_centers_iid(&DensityTable::uniform(), 5, 0),
        DensitySpec::Constant(1.0),
    )
    .unwrap()
    .with_q(4)
    .unwrap()
    .with_m_min(16)
    .unwrap()
    .with_max_centers(1 << 14);
    let run = nested_driver(&cfg, 0.8, 2).unwrap();
    assert!(run.steps.len() == 2 || run.stopped.is_some(), "{:?}", run.stopped);
    assert!(!run.steps.is_empty());
    assert!(run.ledger_holds());
    for w in run.steps.windows(2) {
        assert!(logcap::redistribution::support_contained(
            &w[1].nu_prime,
            &w[0].nu_prime
        ));
    }
}

#[test]
fn sweep_is_deterministic_and_tabulated() {
    let cfg = SweepConfig::new(1.0, sample_centers_iid(&DensityTable::uniform(), 1, 0));
    let alphas = [0.8, 1.0, 1.25, 1.5];
    let a = sweep_alpha(&cfg, &alphas, &[16, 32]).unwrap();
    let b = sweep_alpha(&cfg, &alphas, &[16, 32]).unwrap();
    assert_eq!(a, b);
    let verdicts: Vec<Verdict> = a.iter().map(|r| r.series_verdict).collect();
    assert_eq!(
        verdicts,
        [
            Verdict::Divergent,
            Verdict::Divergent,
            Verdict::Convergent,
            Verdict::Convergent
        ]
    );
    assert!(a[0].errors.is_empty() && a[1].capacity_estimates.len() == 2);
    let rows = sweep_table(&a);
    assert!(rows.iter().any(|r| r.kind == "h0_tail" && r.alpha == 1.5));
    assert!(rows.iter().any(|r| r.kind == "capacity_lower_bound" && r.alpha == 1.0));
}

#[test]
fn tail_at_ten() {
    let s = LengthSchedule::new(1.0, 1.5).unwrap();
    let b = h0_volume_bound(&s, 10).unwrap();
    let (lo, hi) = integral_bracket(&s, 10).unwrap();
    assert!(lo <= b.lower && b.upper <= hi);
    assert!((b.value - 0.6).abs() < 0.05);
}

#[test]
fn gdelta_stages_nest() {
    let s = LengthSchedule::new(0.05, 1.0).unwrap();
    let mut g = GDeltaApprox::new(s, sample_centers_iid(&DensityTable::uniform(), 2, 0));
    g.advance(16).unwrap();
    let first = g.current_support.clone();
    g.advance(64).unwrap();
    let r = restrict_support(&first, &g.current_support);
    assert_eq!(r.kept.len(), g.current_support.len());
    assert!(g.advance(100).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blocks_partition(n in 1usize..200, q in 0usize..5) {
        let lb = LevelBlocks::new(n, q).unwrap();
        let total: usize = lb.levels().iter().map(|&l| LevelBlocks::block(l).len()).sum();
        prop_assert_eq!(total, lb.union_len());
        prop_assert_eq!(lb.union().len(), lb.union_len());
    }

    #[test]
    fn centers_are_prefix_stable(seed in 0u64..1000, a in 1usize..50, b in 50usize..200) {
        let t = DensityTable::triangular();
        let short = sample_centers_iid(&t, seed, a);
        let long = sample_centers_iid(&t, seed, b);
        prop_assert_eq!(short.centers(), &long.centers()[..a]);
    }

    #[test]
    fn restriction_is_contained(seed in 0u64..500, n in 4usize..64) {
        let s = LengthSchedule::new(0.1, 1.0).unwrap();
        let mut c = sample_centers_iid(&DensityTable::uniform(), seed, 0);
        c.extend_to(8 * n).unwrap();
        let outer = level_union(&s, &c, n).unwrap().intervals;
        let inner = level_union(&s, &c, 2 * n).unwrap().intervals;
        let r = restrict_support(&outer, &inner);
        for iv in &r.kept {
            let (lo, hi) = iv.bounds();
            let held = outer.iter().any(|o| o.bounds().0 <= lo && hi <= o.bounds().1);
            prop_assert!(held);
        }
        prop_assert!(r.kept.len() + r.straddlers <= inner.len());
    }

    #[test]
    fn h0_halving_lambda_doubles(lambda in 0.1f64..4.0, alpha in 1.05f64..3.0, m in 1usize..200) {
        let a = h0_volume_bound(&LengthSchedule::new(lambda, alpha).unwrap(), m).unwrap();
        let b = h0_volume_bound(&LengthSchedule::new(lambda / 2.0, alpha).unwrap(), m).unwrap();
        prop_assert!((b.value - 2.0 * a.value).abs() <= 1e-12 * b.value);
        let c = h0_volume_bound(&LengthSchedule::new(lambda, alpha).unwrap(), m + 1).unwrap();
        prop_assert!(c.value <= a.value);
    }

    #[test]
    fn grid_centers_fill_levels(n in 1usize..40) {
        let c = CenterSequence::uniform_grid(n * (n + 1) / 2);
        let last: Vec<f64> = c.centers()[n * (n - 1) / 2..].to_vec();
        for (j, x) in last.iter().enumerate() {
            prop_assert!((x - (2 * j + 1) as f64 / (2 * n) as f64).abs() < 1e-15);
        }
    }
}
