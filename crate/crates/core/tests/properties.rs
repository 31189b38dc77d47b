use proptest::prelude::*;
use smvlc::cabm::{
    build_plan, build_space_codebook, decode_value, encode_value, prior_probabilities, split_exponent, MappingPlan,
    PlanParams,
};
use smvlc::capacity::{mi_lower_bound, mutual_information, Method};
use smvlc::experiment::format_number;
use smvlc::geometry::{channel_gain, ChannelGains, RoomScenario};
use smvlc::link::NoiseModel;
use smvlc::precode::{min_normalized_distance, optimize_points, soft_min, SolverConfig};
use smvlc::simulate::{ml_detect, BerResult};

fn permutation(m: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..m).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codebook_is_complete_prefix_code((m, order) in (2usize..=64).prop_flat_map(|m| (Just(m), permutation(m)))) {
        let codes = build_space_codebook(m, &order).unwrap();
        let kraft: f64 = codes.iter().map(|c| (-(c.len as f64)).exp2()).sum();
        prop_assert_eq!(kraft, 1.0);
        for (i, a) in codes.iter().enumerate() {
            for (j, b) in codes.iter().enumerate() {
                prop_assert!(i == j || !a.is_prefix_of(b));
            }
        }
    }

    #[test]
    fn encoding_is_a_bijection(
        (m, order) in (2usize..=20).prop_flat_map(|m| (Just(m), permutation(m))),
        extra in 1u32..=3,
    ) {
        let k = split_exponent(m).unwrap().0 + extra;
        let plan = MappingPlan::with_order(order, &PlanParams::new(k, 1.0)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for v in 0..1u32 << k {
            let t = encode_value(&plan, v);
            prop_assert!(seen.insert((t.led, t.level)));
            prop_assert_eq!(decode_value(&plan, t.led, t.level).unwrap(), v);
        }
        let pr = prior_probabilities(&plan);
        prop_assert!((pr.space_total() - 1.0).abs() < 1e-12);
        prop_assert!((pr.symbol_total(&plan) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_min_brackets_the_minimum(v in prop::collection::vec(0.0f64..10.0, 1..40), rho in 0.1f64..1e4) {
        let s = soft_min(&v, rho).unwrap();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(s <= min + 1e-12);
        prop_assert!(s >= min - (v.len() as f64).ln() / rho - 1e-12);
    }

    #[test]
    fn gain_falls_along_a_ray_from_the_sub_led_point(dir in 0.0f64..std::f64::consts::TAU, a in 0.0f64..1.4, b in 0.0f64..1.4) {
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let at = |d: f64| {
            let s = RoomScenario::standard(vec![[2.5, 2.0, 3.0]], [2.5 + d * dir.cos(), 2.0 + d * dir.sin(), 0.8]);
            channel_gain(&s, 0).unwrap()
        };
        prop_assert!(at(far) <= at(near));
    }

    #[test]
    fn ml_detection_is_exhaustive_argmax(
        rel in prop::collection::vec(0.05f64..1.0, 3..=6),
        varsigma in 0.0f64..20.0,
        y in -0.2f64..2.0,
    ) {
        let gains = ChannelGains::new(rel).unwrap();
        let k = split_exponent(gains.len()).unwrap().0 + 2;
        let plan = build_plan(&gains, &PlanParams::new(k, 1.0), 0.0, true).unwrap();
        let noise = NoiseModel::new(1e-3, varsigma * varsigma).unwrap();
        let got = ml_detect(y, &plan, &gains, &noise).unwrap();
        let mut best = (f64::NEG_INFINITY, (0, 0));
        for p in plan.points(&gains).unwrap() {
            let v = noise.variance(p.r);
            let ll = -(y - p.r).powi(2) / (2.0 * v) - 0.5 * v.ln();
            if ll > best.0 {
                best = (ll, (p.led, p.level));
            }
        }
        prop_assert_eq!(got, best.1);
    }

    #[test]
    fn lower_bound_never_exceeds_mutual_information(
        rel in prop::collection::vec(0.05f64..1.0, 2..=5),
        snr_db in -20.0f64..50.0,
        varsigma in 0.0f64..50.0,
    ) {
        let gains = ChannelGains::new(rel.iter().map(|g| g * 1e-5).collect()).unwrap();
        let noise = NoiseModel::standard(varsigma);
        let pt = smvlc::link::SnrPoint::from_db(snr_db).transmit_power(gains.max(), &noise).unwrap();
        let k = split_exponent(gains.len()).unwrap().0 + 2;
        let plan = build_plan(&gains, &PlanParams::new(k, pt), noise.varsigma_sq, true).unwrap();
        let mi = mutual_information(&plan, &gains, &noise, Method::default()).unwrap();
        let lb = mi_lower_bound(&plan, &gains, &noise).unwrap();
        prop_assert!(lb.value <= mi.value + 3.0 * mi.std_error + 1e-12);
    }

    #[test]
    fn formatted_numbers_round_trip_to_nine_digits(v in prop::num::f64::NORMAL) {
        let back: f64 = format_number(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-9 * v.abs());
    }

    #[test]
    fn ber_interval_contains_estimate(errors in 0u64..1000, extra in 0u64..100_000) {
        let r = BerResult::from_counts(errors, errors + extra + 1);
        let (lo, hi) = r.interval();
        prop_assert!(lo <= r.ber && r.ber <= hi && r.ci95_halfwidth >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn precoding_is_feasible_and_never_worse(
        r0 in prop::collection::vec(0.01f64..1.0, 3..=8),
        varsigma_sq in prop_oneof![Just(0.0), 0.0f64..5.0],
    ) {
        let config = SolverConfig { restarts: 2, ..SolverConfig::default() };
        let out = optimize_points(&r0, varsigma_sq, &config).unwrap();
        let total: f64 = r0.iter().sum();
        prop_assert!((out.points.iter().sum::<f64>() - total).abs() <= 1e-8 * total);
        prop_assert!(out.points.iter().all(|r| *r > 0.0));
        prop_assert!(out.min_distance >= min_normalized_distance(&r0, varsigma_sq));
        prop_assert!(out.outer_iterations <= config.max_outer_iterations());
    }
}
