use proptest::prelude::*;

use thermoflow::decomposition::Split;
use thermoflow::equilibrium::{softmax, time_average, EmpiricalMeasure, MeasureKind};
use thermoflow::flow::{
    Flow, OdeFlow, Potential, RegionLabel, Sft, SymPoint, SymbolicSuspension, VectorField,
};
use thermoflow::io::{read_cloud, write_cloud};
use thermoflow::partition::{
    log_sum_exp, min_pairwise_distance, separated_from_candidates, PartitionOptions,
};
use thermoflow::regularity::DistortionReport;
use thermoflow::segments::{bowen_distance, trim, OrbitSegment, Provenance, SegmentCollection};
use thermoflow::specification::{verify, Glue, GlueParams, SearchBudget};
use thermoflow::Neighborhood;

fn full2() -> SymbolicSuspension {
    SymbolicSuspension::full_shift(2, 1.0, 0.5).unwrap()
}

fn sym_point(alphabet: u8, max_len: usize) -> impl Strategy<Value = SymPoint> {
    prop::collection::vec(0..alphabet, 1..max_len).prop_flat_map(|w| {
        let n = w.len();
        (Just(w), 0..n, 0.0..1.0f64).prop_map(|(w, i, h)| SymPoint::new(w, i, h))
    })
}

fn golden_point() -> impl Strategy<Value = SymPoint> {
    prop::collection::vec(prop::bool::ANY, 1..10).prop_map(|bits| {
        let mut w = Vec::new();
        for b in bits {
            w.push(0);
            if b {
                w.push(1);
            }
        }
        SymPoint::new(w, 0, 0.0)
    })
}

fn lorenz_point() -> impl Strategy<Value = [f64; 3]> {
    (-15.0..15.0f64, -20.0..20.0f64, 5.0..40.0f64).prop_map(|(x, y, z)| [x, y, z])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbolic_flow_composes(x in sym_point(2, 12), s in 0.0..5.0f64, t in 0.0..5.0f64) {
        let f = full2();
        let a = f.evolve(&f.evolve(&x, s).unwrap(), t).unwrap();
        let b = f.evolve(&x, s + t).unwrap();
        prop_assert!(f.distance(&a, &b) < 1e-9);
    }

    #[test]
    fn symbolic_flow_inverts(x in sym_point(3, 12), t in -6.0..6.0f64) {
        let f = SymbolicSuspension::new(Sft::full(3), vec![1.0, 0.5, 2.0], 0.5).unwrap();
        let back = f.evolve(&f.evolve(&x, t).unwrap(), -t).unwrap();
        prop_assert!(f.distance(&back, &x) < 1e-9);
        prop_assert!(back.height >= 0.0 && back.height < f.roof_of(back.symbol(0)));
    }

    #[test]
    fn ode_flow_composes(x in lorenz_point(), s in 0.0..0.5f64, t in 0.0..0.5f64) {
        let f = OdeFlow::lorenz();
        let a = f.evolve(&f.evolve(&x, s).unwrap(), t).unwrap();
        let b = f.evolve(&x, s + t).unwrap();
        prop_assert!(f.distance(&a, &b) < 1e-6 * (1.0 + f.distance(&b, &[0.0; 3])));
    }

    #[test]
    fn symbolic_metric_is_symmetric(x in sym_point(2, 10), y in sym_point(2, 10)) {
        let f = full2();
        prop_assert_eq!(f.distance(&x, &x), 0.0);
        prop_assert_eq!(f.distance(&x, &y), f.distance(&y, &x));
        prop_assert!(f.distance(&x, &y) >= 0.0);
    }

    #[test]
    fn ode_metric_triangle(x in lorenz_point(), y in lorenz_point(), z in lorenz_point()) {
        let f = OdeFlow::lorenz();
        prop_assert!(f.distance(&x, &z) <= f.distance(&x, &y) + f.distance(&y, &z) + 1e-12);
    }

    #[test]
    fn bowen_distance_is_monotone_in_t(x in sym_point(2, 10), y in sym_point(2, 10), s in 0.0..4.0f64, ds in 0.0..4.0f64) {
        let f = full2();
        let d0 = f.distance(&x, &y);
        let d1 = bowen_distance(&f, &x, &y, s, None).unwrap();
        let d2 = bowen_distance(&f, &x, &y, s + ds, None).unwrap();
        prop_assert!(d0 <= d1 + 1e-12 && d1 <= d2 + 1e-12);
    }

    #[test]
    fn ode_bowen_distance_dominates_distance(x in lorenz_point(), dx in -0.1..0.1f64, t in 0.1..1.0f64) {
        let f = OdeFlow::lorenz();
        let y = [x[0] + dx, x[1], x[2]];
        let d = bowen_distance(&f, &x, &y, t, None).unwrap();
        prop_assert!(d >= f.distance(&x, &y));
    }

    #[test]
    fn neighborhoods_nest(x in sym_point(3, 14)) {
        let f = SymbolicSuspension::with_lambda(Sft::full(3), Sft::golden_mean(), vec![1.0; 3], 0.5, 2, 1).unwrap();
        let (l, u1, u) = (f.region(RegionLabel::Lambda), f.region(RegionLabel::U1), f.region(RegionLabel::U));
        use thermoflow::flow::Region;
        prop_assert!(!l.contains(&x) || u1.contains(&x));
        prop_assert!(!u1.contains(&x) || u.contains(&x));
    }

    #[test]
    fn trims_compose(lens in prop::collection::vec(0.0..8.0f64, 1..6), i in 0.0..2.0f64, j in 0.0..2.0f64, i2 in 0.0..2.0f64, j2 in 0.0..2.0f64) {
        let f = full2();
        let x = SymPoint::new(vec![0, 1, 1, 0, 1], 0, 0.25);
        let c = SegmentCollection::new(lens.iter().map(|&t| OrbitSegment::new(x.clone(), t)).collect(), Provenance::U);
        let twice = trim(&f, &trim(&f, &c, i, j).unwrap(), i2, j2).unwrap();
        let once = trim(&f, &c, i + i2, j + j2).unwrap();
        prop_assert_eq!(twice.len(), once.len());
        for (a, b) in twice.segments.iter().zip(&once.segments) {
            prop_assert!((a.t - b.t).abs() < 1e-9);
            prop_assert!(f.distance(&a.start, &b.start) < 1e-9);
        }
    }

    #[test]
    fn birkhoff_is_additive(x in sym_point(2, 10), s in 0.0..4.0f64, t in 0.0..4.0f64) {
        let f = full2();
        let phi = Potential::FirstSymbol { values: vec![0.3, -1.1] };
        let whole = f.birkhoff(&phi, &x, s + t).unwrap();
        let parts = f.birkhoff(&phi, &x, s).unwrap() + f.birkhoff(&phi, &f.evolve(&x, s).unwrap(), t).unwrap();
        prop_assert!((whole - parts).abs() < 1e-9);
    }

    #[test]
    fn greedy_sets_are_separated_and_maximal(points in prop::collection::vec(sym_point(2, 8), 1..40), t in 0.5..4.0f64, delta in 0.01..0.6f64) {
        let f = full2();
        let set = separated_from_candidates(&f, &Potential::zero(), points.clone(), t, delta, 0.0, &PartitionOptions::default()).unwrap();
        prop_assert!(min_pairwise_distance(&f, &set.points, t, None).unwrap() > delta);
        prop_assert_eq!(set.len() + set.certificate.witnesses.len(), points.len());
        for &(c, a, _) in &set.certificate.witnesses {
            prop_assert!(bowen_distance(&f, &points[c], &set.points[a], t, None).unwrap() <= delta);
        }
    }

    #[test]
    fn separation_keys_respect_scale(x in sym_point(2, 8), y in sym_point(2, 8), t in 0.5..4.0f64) {
        let f = SymbolicSuspension::full_shift(2, 1.0, 0.01).unwrap();
        let x = SymPoint::new(x.word.to_vec(), x.index, 0.0);
        let y = SymPoint::new(y.word.to_vec(), y.index, 0.0);
        let delta = 0.002;
        if let (Some(a), Some(b)) = (f.separation_key(&x, t, delta), f.separation_key(&y, t, delta)) {
            if a != b {
                prop_assert!(bowen_distance(&f, &x, &y, t, None).unwrap() > delta);
            }
        }
    }

    #[test]
    fn glued_orbits_verify(words in prop::collection::vec(golden_point(), 1..4), lens in prop::collection::vec(1.0..5.0f64, 4)) {
        let f = SymbolicSuspension::new(Sft::golden_mean(), vec![1.0, 1.0], 0.01).unwrap();
        let segs: Vec<_> = words.into_iter().zip(lens).map(|(x, t)| OrbitSegment::new(x, t)).collect();
        let params = GlueParams {
            delta: 0.05,
            tau_max: 3.0,
            t0: 1.0,
            container: Neighborhood::new(RegionLabel::U, f.region(RegionLabel::U)),
            budget: SearchBudget::default(),
            n_samples: None,
        };
        let cert = f.glue(&segs, &params).unwrap();
        let report = verify(&f, &cert, &params.container, params.tau_max, None).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn k_of_m_identity(k in 0.0..10.0f64, var in 0.0..1.0f64, m in 0.0..50.0f64) {
        let r = DistortionReport { eps: 0.1, n_samples: 0, k_hat: k, records: vec![], variation: var, growth_slope: 0.0, unbounded: false };
        prop_assert!((r.k_m(m) - (k + 2.0 * m * var)).abs() < 1e-12);
        prop_assert!(r.k_m(m) >= r.k_m(0.0));
    }

    #[test]
    fn measures_are_normalised(values in prop::collection::vec(-50.0..50.0f64, 1..30), slices in 1usize..16) {
        let w = softmax(&values);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f = full2();
        let atoms: Vec<SymPoint> = (0..values.len()).map(|i| SymPoint::new(vec![(i % 2) as u8, 1], 0, 0.0)).collect();
        let nu = EmpiricalMeasure { atoms, weights: w, kind: MeasureKind::NuT, t: 3.0 };
        let mu = time_average(&f, &nu, 3.0, slices).unwrap();
        prop_assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mu.len(), values.len() * slices);
    }

    #[test]
    fn log_sum_exp_bounds(values in prop::collection::vec(-700.0..700.0f64, 1..20)) {
        let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_sum_exp(&values);
        prop_assert!(l >= m && l <= m + (values.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn clouds_round_trip(points in prop::collection::vec(prop::array::uniform3(prop::num::f64::ANY), 0..20)) {
        let mut buf = Vec::new();
        write_cloud(&mut buf, &points).unwrap();
        let back = read_cloud(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), points.len());
        for (a, b) in points.iter().zip(&back) {
            for c in 0..3 {
                prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
        }
    }

    #[test]
    fn rotation_preserves_radius(r in 0.1..5.0f64, t in 0.0..10.0f64) {
        let f = OdeFlow::new(VectorField::rotation(), 1e-3, 200.0).unwrap();
        let y = f.evolve(&[r, 0.0, 1.0], t).unwrap();
        prop_assert!(((y[0] * y[0] + y[1] * y[1]).sqrt() - r).abs() < 1e-9 * r.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20_000))]

    #[test]
    fn splits_sum_exactly(t in 0.0..1e6f64, p in 0.0..1.0f64, s in 0.0..1.0f64, scale in -12i32..6) {
        let t = t * 10f64.powi(scale);
        let sp = Split::exact(t, p * t, s * t);
        prop_assert_eq!(sp.p + sp.g + sp.s, t);
        prop_assert!(sp.p >= 0.0 && sp.g >= 0.0 && sp.s >= 0.0);
    }
}
