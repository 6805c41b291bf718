use exact_sde::config::{parse_params, RunConfig};
use exact_sde::factory::{flip_linear, FactorySpec};
use exact_sde::localize::Partition;
use exact_sde::multilevel::{inverse_square_tail, level_pmf, Schedule};
use exact_sde::report::survival;
use exact_sde::rng::{substream, Stage, Stream};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn params_round_trip(vals in prop::collection::btree_map("[a-z][a-z0-9]{0,5}", -1e6f64..1e6, 0..5)) {
        let text: Vec<String> = vals.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        let p = parse_params(&text.join(",")).unwrap();
        prop_assert_eq!(p.len(), vals.len());
        for (k, v) in &vals {
            prop_assert_eq!(p[k], *v);
        }
    }

    #[test]
    fn config_numbers_round_trip(n in 1u64..1_000_000, seed in any::<u64>()) {
        let mut c = RunConfig::default();
        c.apply_text(&format!("n = {n}\nseed = {seed}  # trailing comment\n")).unwrap();
        prop_assert_eq!(c.n, n);
        prop_assert_eq!(c.seed, seed);
    }

    #[test]
    fn survival_is_nonincreasing_and_exact(work in prop::collection::vec(0u64..500, 1..200)) {
        let s = survival(&work);
        prop_assert!(s.windows(2).all(|w| w[0].work < w[1].work && w[0].survival >= w[1].survival));
        for p in &s {
            let above = work.iter().filter(|w| **w > p.work).count() as f64 / work.len() as f64;
            prop_assert!((p.survival - above).abs() < 1e-12);
        }
        prop_assert_eq!(s.last().unwrap().survival, 0.0);
    }

    #[test]
    fn schedule_is_monotone(delta in 1e-4f64..1.0, c in 1e-3f64..10.0, d in 1usize..4) {
        let s = Schedule::from_constants(d, delta, c).unwrap();
        for n in 1..30u64 {
            prop_assert!(s.radius(n + 1) < s.radius(n));
            prop_assert!(s.m_bound(n + 1) > s.m_bound(n));
        }
    }

    #[test]
    fn band_cell_contains_point(l in -50.0f64..50.0, y in -5.0f64..5.0) {
        let p = Partition::Band { coord: 0 };
        let cell = p.cell(&[l, y]);
        prop_assert!((cell[0] as f64) <= l && l < (cell[0] + 1) as f64);
        let dist = p.distance_to_complement(&[l, y], &cell).unwrap();
        prop_assert!(dist >= 0.0 && dist <= 0.5 + 1e-12);
        prop_assert!((dist - (l - cell[0] as f64).min(cell[0] as f64 + 1.0 - l)).abs() < 1e-12);
    }

    #[test]
    fn factory_respects_cap_and_zero_coin(alpha in 1.01f64..20.0, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = FactorySpec::new(alpha, 0.5).unwrap();
        let p = frac * (1.0 - 0.5) / alpha;
        let mut rng = Stream::from_seed(seed);
        let mut coin = |r: &mut Stream| Ok(r.bernoulli(p));
        let f = flip_linear(&mut coin, spec, &mut rng, 1_000_000).unwrap();
        prop_assert!(f.pulls <= 1_000_000);
        let mut never = |_: &mut Stream| Ok(false);
        prop_assert!(!flip_linear(&mut never, spec, &mut rng, 1_000_000).unwrap().bit);
    }

    #[test]
    fn substreams_are_deterministic(seed in any::<u64>(), index in any::<u64>()) {
        let a = substream(seed, index, Stage::Path).uniform();
        prop_assert_eq!(a, substream(seed, index, Stage::Path).uniform());
        prop_assert_ne!(a, substream(seed, index.wrapping_add(1), Stage::Path).uniform());
        prop_assert_ne!(a, substream(seed, index, Stage::Band).uniform());
    }
}

#[test]
fn level_law_sums_to_one() {
    let head: f64 = (1..=1000).map(level_pmf).sum();
    assert!((head + 1.0 / 1001.0 - 1.0).abs() < 1e-12);
    let pi2 = std::f64::consts::PI.powi(2) / 6.0;
    assert!((inverse_square_tail(0) - pi2).abs() < 1e-12);
    for k in [5u64, 19, 20, 100] {
        let direct: f64 = (k + 1..k + 2_000_000).map(|j| 1.0 / (j as f64 * j as f64)).sum::<f64>() + 1.0 / (k as f64 + 2e6);
        assert!((inverse_square_tail(k) - direct).abs() < 1e-9, "k={k}");
    }
}
