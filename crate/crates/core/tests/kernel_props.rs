use approx::assert_relative_eq;
use logcap::kernel::{
    farfield_interaction, gap_ratio, interaction_quadrature, measure_energy, mutual_energy,
    pair_interaction_closed_form, Atom, DensitySpec, Interval, PiecewiseMeasure, Relation,
};
use proptest::prelude::*;

fn one() -> DensitySpec {
    DensitySpec::Constant(1.0)
}

/// Two disjoint intervals strictly inside `(0, 1)`.
fn disjoint_pair() -> impl Strategy<Value = (Interval, Interval)> {
    (0.05f64..0.45, 0.55f64..0.95, -12.0f64..-2.5, -12.0f64..-2.5).prop_filter_map(
        "overlap or clipped",
        |(c1, c2, l1, l2)| {
            let a = Interval::new(c1, l1).ok()?;
            let b = Interval::new(c2, l2).ok()?;
            let ok = |i: &Interval| i.materialize().is_some_and(|m| !m.clipped);
            (ok(&a) && ok(&b) && a.relation(&b) == Relation::Disjoint).then_some((a, b))
        },
    )
}

fn measure(atoms: &[(f64, f64, f64)]) -> PiecewiseMeasure {
    PiecewiseMeasure::new(
        atoms
            .iter()
            .map(|&(c, l, w)| Atom::uniform(Interval::new(c, l).unwrap(), w).unwrap())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric((a, b) in disjoint_pair(), fa in 0.1f64..3.0, fb in 0.1f64..3.0) {
        let da = DensitySpec::Constant(fa);
        let db = DensitySpec::Constant(fb);
        let ab = pair_interaction_closed_form(&a, &da, &b, &db).unwrap();
        let ba = pair_interaction_closed_form(&b, &db, &a, &da).unwrap();
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn translation((a, b) in disjoint_pair(), t in -0.04f64..0.04) {
        let shift = |i: &Interval| Interval::new(i.center() + t, i.loglen()).unwrap();
        let v = pair_interaction_closed_form(&a, &one(), &b, &one()).unwrap();
        let w = pair_interaction_closed_form(&shift(&a), &one(), &shift(&b), &one()).unwrap();
        prop_assert!((v - w).abs() <= 1e-11 * v.abs().max(1.0));
    }

    #[test]
    fn dilation((a, b) in disjoint_pair(), beta in 0.2f64..1.0) {
        let scale = |i: &Interval| Interval::new(i.center() * beta, i.loglen() + beta.ln()).unwrap();
        let v = pair_interaction_closed_form(&a, &one(), &b, &one()).unwrap();
        let w = pair_interaction_closed_form(&scale(&a), &one(), &scale(&b), &one()).unwrap();
        prop_assert!((w - (v - beta.ln())).abs() <= 1e-10 * v.abs().max(1.0));
    }

    #[test]
    fn closed_form_matches_quadrature((a, b) in disjoint_pair(), s0 in 0.2f64..2.0) {
        let sampled = DensitySpec::sampled(vec![0.0, 0.4, 1.0], vec![s0, s0, s0]).unwrap();
        let exact = pair_interaction_closed_form(&a, &DensitySpec::Constant(s0), &b, &one()).unwrap();
        let quad = interaction_quadrature(&a, &sampled, &b, &one(), 1e-12).unwrap();
        prop_assert!((exact - quad).abs() <= 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn farfield_bound_holds((a, b) in disjoint_pair(), fa in 0.1f64..3.0, fb in 0.1f64..3.0) {
        prop_assume!(gap_ratio(&a, &b) < 1.0);
        let ff = farfield_interaction(&a, fa, &b, fb).unwrap();
        let exact = pair_interaction_closed_form(&a, &DensitySpec::Constant(fa), &b, &DensitySpec::Constant(fb)).unwrap();
        prop_assert!((exact - ff.value).abs() <= ff.bound);
    }

    #[test]
    fn bilinear_in_weights(ws in prop::collection::vec(0.05f64..2.0, 3), c in 0.1f64..5.0) {
        let mu = measure(&[(0.2, -3.0, ws[0]), (0.5, -4.0, ws[1]), (0.8, -2.5, ws[2])]);
        let e = measure_energy(&mu, 1e-12).unwrap();
        let es = measure_energy(&mu.scaled(c), 1e-12).unwrap();
        assert_relative_eq!(es.total, c * c * e.total, max_relative = 1e-12);
        prop_assert_eq!(e.total, e.self_sum + e.outer_sum);
    }

    #[test]
    fn split_invariance(c in 0.3f64..0.7, l in -3.0f64..-1.0, theta in 0.05f64..0.95) {
        let atom = Atom::uniform(Interval::new(c, l).unwrap(), 1.0).unwrap();
        let (lo, hi) = atom.interval.bounds();
        let (left, right) = atom.split(lo + theta * (hi - lo)).unwrap();
        let whole = measure_energy(&PiecewiseMeasure::single(atom), 1e-12).unwrap().total;
        let parts = measure_energy(&PiecewiseMeasure::new(vec![left, right]).unwrap(), 1e-12).unwrap().total;
        prop_assert!((whole - parts).abs() <= 1e-9);
    }

    #[test]
    fn mutual_is_symmetric(ws in prop::collection::vec(0.05f64..2.0, 4)) {
        let mu = measure(&[(0.1, -5.0, ws[0]), (0.6, -6.0, ws[1])]);
        let nu = measure(&[(0.35, -4.0, ws[2]), (0.9, -7.0, ws[3])]);
        prop_assert_eq!(mutual_energy(&mu, &nu, 1e-12).unwrap(), mutual_energy(&nu, &mu, 1e-12).unwrap());
    }
}

#[test]
fn far_field_consistency() {
    // exact outer sum vs the certified far-field replacement
    let atoms: Vec<(f64, f64, f64)> = (0..40)
        .map(|i| (0.0125 + 0.025 * i as f64, -40.0 - i as f64, 1.0 / 40.0))
        .collect();
    let mu = measure(&atoms);
    let b = measure_energy(&mu, 1e-9).unwrap();
    assert!(b.farfield_pairs > 0);
    let mut exact = 0.0;
    for (i, a) in mu.atoms().iter().enumerate() {
        for c in &mu.atoms()[i + 1..] {
            exact += 2.0
                * a.weight
                * c.weight
                * pair_interaction_closed_form(&a.interval, &one(), &c.interval, &one()).unwrap();
        }
    }
    assert!((b.outer_sum - exact).abs() <= b.farfield_bound + 1e-13);
}

#[test]
fn half_split_reassembles() {
    let halves = measure(&[(0.25, 0.5f64.ln(), 0.5), (0.75, 0.5f64.ln(), 0.5)]);
    assert_relative_eq!(measure_energy(&halves, 1e-12).unwrap().total, 1.5, epsilon = 1e-12);
}

#[test]
fn zero_density_vanishes() {
    let z = DensitySpec::Constant(0.0);
    let v = interaction_quadrature(&Interval::unit(), &z, &Interval::unit(), &one(), 1e-10).unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn arcsine_sample_energy() {
    let knots: Vec<f64> = (0..=400)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / 400.0).cos())
        .collect();
    let clip = 1e-3;
    let vals: Vec<f64> = knots
        .iter()
        .map(|&x| {
            let x = x.clamp(clip, 1.0 - clip);
            1.0 / (std::f64::consts::PI * (x * (1.0 - x)).sqrt())
        })
        .collect();
    let d = DensitySpec::sampled(knots, vals).unwrap();
    let m = d.mean();
    let e = interaction_quadrature(&Interval::unit(), &d, &Interval::unit(), &d, 1e-10).unwrap() / (m * m);
    assert!((e - 4f64.ln()).abs() < 5e-3, "{e}");
}
