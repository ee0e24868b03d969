mod common;

use common::*;
use memroof::hardware::Hierarchy;
use memroof::oracle::flop_count;
use memroof::placement::PlacementPolicy;
use memroof::roofline::{graph_time, tps, TpsMode};
use memroof::workload::{build_inference_graph, ModelSpec, PhaseSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walk_matches_closed_form((h, k, r) in kernel_case(false)) {
        check_oracle(&h, &k, &r)?;
    }

    #[test]
    fn kernel_time_is_the_roofline_max((h, k, r) in kernel_case(false)) {
        check_eq1(&h, &k, &r)?;
    }

    #[test]
    fn zero_latency_classification((h, k, r) in kernel_case(true)) {
        check_eq1(&h, &k, &r)?;
    }

    #[test]
    fn doubling_speed_halves_memory_time((h, k, r) in kernel_case(false)) {
        check_scaling(&h, &k, &r)?;
    }

    #[test]
    fn tps_is_monotone((h, p, m, ph) in graph_case(), which in 0usize..4, factor in 1.0f64..8.0) {
        check_monotone(&h, &p, &m, &ph, which, factor)?;
    }

    #[test]
    fn flop_count_matches_descriptor(k in small_kernel()) {
        prop_assert_eq!(flop_count(&k), k.flops);
    }
}

fn tps_of(model: &str, hier: &Hierarchy, policy: &str) -> f64 {
    let m = ModelSpec::preset(model).unwrap();
    let ph = PhaseSpec::new(200, 200).unwrap();
    let g = build_inference_graph(&m, &ph).unwrap();
    let r = graph_time(&g, hier, &PlacementPolicy::named(policy).unwrap()).unwrap();
    tps(&r, &ph, TpsMode::DecodeOnly)
}

/// On-chip defaults barely matter while HBS is the bottleneck.
#[test]
fn on_chip_defaults_are_insensitive_when_hbs_bound() {
    let base = Hierarchy::from_shorthand("lpddr6+hbs:64gbps,10us").unwrap();
    let t0 = tps_of("llava15-13b", &base, "all-in-hbs");
    for f in [0.5, 2.0] {
        for lvl in ["scratchpad", "l2"] {
            let mut s = "lpddr6+hbs:64gbps,10us".to_string();
            let d = base.level(&lvl.into()).unwrap();
            s.push_str(&format!(
                "+{lvl}:{}bps,{}s,{}b",
                d.bandwidth * f,
                d.latency / f,
                (d.capacity.unwrap() as f64 * f) as u64
            ));
            let h = Hierarchy::from_shorthand(&s).unwrap();
            let t = tps_of("llava15-13b", &h, "all-in-hbs");
            assert!((t / t0 - 1.0).abs() < 0.05, "{lvl} x{f}: {t} vs {t0}");
        }
    }
}
