mod common;

use std::time::Instant;

use common::*;
use memroof::experiments::{bottleneck_crossover, builtin, run_sweep, Param, ResultRow};
use memroof::hardware::{Hierarchy, HBS};
use memroof::placement::PlacementPolicy;
use memroof::workload::{kv_cache_bytes, weight_bytes, ModelSpec, PhaseSpec};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n} {name}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} {name}: {detail}");
}

fn within(v: f64, target: f64, tol: f64) -> bool {
    (v / target - 1.0).abs() <= tol
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        max_global_rejects: cases * 20,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn rows_of(name: &str) -> Vec<ResultRow> {
    run_sweep(&builtin(name).unwrap()).unwrap()
}

/// Largest relative residual of a least-squares line through `pts`.
fn linear_fit_deviation(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    pts.iter()
        .map(|&(x, y)| {
            let fit = my + slope * (x - mx);
            ((y - fit) / fit).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_1_kv_cache_sizes() {
    let big = kv_cache_bytes(&ModelSpec::preset("llava15-13b").unwrap(), 32768) as f64;
    let small = kv_cache_bytes(&ModelSpec::preset("llama32-1b").unwrap(), 512) as f64;
    verdict(
        1,
        "kv-cache sizes",
        within(big, 27e9, 0.05) && within(small, 68e6, 0.05),
        format!("13b@32768 = {:.2} GB, 1b@512 = {:.1} MB", big / 1e9, small / 1e6),
    );
}

#[test]
fn criterion_2_weight_footprint() {
    let m = ModelSpec {
        name: "7b".into(),
        n_layers: 32,
        d_model: 4096,
        n_heads: 32,
        d_ff: 12000,
        n_ffn_mats: 3,
        bytes_per_el: 2,
        vocab_size: 32000,
    };
    m.validate().unwrap();
    let params = m.parameter_count() as f64;
    let w = weight_bytes(&m) as f64;
    verdict(
        2,
        "weight footprint",
        within(params, 7e9, 0.01) && within(w, 14e9, 0.02),
        format!("{:.3}e9 params, {:.2} GB", params / 1e9, w / 1e9),
    );
}

#[test]
fn criterion_3_table_reproduction() {
    let t0 = Instant::now();
    let rows = rows_of("table1");
    let secs = t0.elapsed().as_secs_f64();
    let tps: Vec<f64> = rows.iter().map(|r| r.tps).collect();
    let gains: Vec<f64> = tps[1..].iter().map(|t| t / tps[0]).collect();
    let increasing = tps.windows(2).all(|w| w[1] > w[0]);
    let abs_ok = tps.iter().zip([4.0, 5.5, 8.9, 12.5]).all(|(&v, t)| within(v, t, 0.30));
    let gain_ok = gains.iter().zip([1.4, 2.2, 3.1]).all(|(&v, t)| within(v, t, 0.25));
    verdict(
        3,
        "table reproduction",
        increasing && abs_ok && gain_ok && secs < 10.0,
        format!("tps {tps:.2?}, gains {gains:.2?}, {secs:.2} s"),
    );
}

#[test]
fn criterion_4_hbs_bandwidth_sweep() {
    let rows = rows_of("exp1");
    let mut notes = Vec::new();
    let mut ok = true;
    for lat in [2.0, 10.0, 50.0, 100.0] {
        let curve: Vec<&ResultRow> = rows.iter().filter(|r| r.hbs_lat_us == Some(lat)).collect();
        let hbs_bound: Vec<(f64, f64)> = curve
            .iter()
            .filter(|r| r.bottleneck == HBS)
            .map(|r| (r.hbs_bw_gbps.unwrap(), r.tps))
            .collect();
        let ddr_bound: Vec<f64> = curve.iter().filter(|r| r.bottleneck == "ddr").map(|r| r.tps).collect();
        let dev = if hbs_bound.len() >= 3 { linear_fit_deviation(&hbs_bound) } else { 0.0 };
        let (lo, hi) = ddr_bound.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
        let flat = ddr_bound.is_empty() || hi / lo - 1.0 < 0.01;
        let below = ddr_bound.iter().all(|&t| t < 10.0);
        ok &= dev <= 0.02 && flat && below;
        notes.push(format!(
            "{lat}us: linear dev {:.1}% over {} pts, plateau spread {:.2}% max {hi:.2}",
            dev * 100.0,
            hbs_bound.len(),
            if ddr_bound.is_empty() { 0.0 } else { (hi / lo - 1.0) * 100.0 }
        ));
    }
    let m = ModelSpec::preset("llava15-13b").unwrap();
    let h = Hierarchy::from_shorthand("lpddr6+hbs:16gbps,10us").unwrap();
    let p = PlacementPolicy::named("all-in-hbs").unwrap();
    let ph = PhaseSpec::new(200, 200).unwrap();
    let x = bottleneck_crossover(&m, &ph, &h, &p, Param::HbsBandwidth, HBS, (16e9, 1e12), 1e8)
        .unwrap()
        .unwrap();
    let ratio = x / 173e9;
    ok &= (1.2..=1.6).contains(&ratio);
    notes.push(format!("crossover at 10us {:.0} GB/s = {ratio:.2}x DDR", x / 1e9));
    verdict(4, "hbs bandwidth sweep", ok, notes.join("; "));
}

#[test]
fn criterion_5_fast_ddr_sweep() {
    let rows = rows_of("exp2");
    let best: Vec<(f64, f64)> = [2.0, 10.0, 50.0, 100.0]
        .iter()
        .map(|&lat| {
            let m = rows.iter().filter(|r| r.hbs_lat_us == Some(lat)).map(|r| r.tps).fold(0.0, f64::max);
            (lat, m)
        })
        .collect();
    let ok = best.iter().all(|&(lat, m)| (m > 10.0) == (lat == 2.0));
    verdict(5, "fast ddr sweep", ok, format!("max tps per latency {best:.2?}"));
}

#[test]
fn criterion_6_breakdown_windows() {
    let exp2 = rows_of("exp2");
    let att = |lat: f64| {
        exp2.iter()
            .find(|r| r.hbs_lat_us == Some(lat) && r.hbs_bw_gbps == Some(512.0))
            .unwrap()
            .attention_fraction()
    };
    let (a10, a50) = (att(10.0), att(50.0));
    let big_ok = (0.31..=0.69).contains(&a10) && (0.31..=0.69).contains(&a50) && a50 > a10;
    let chip = rows_of("chiplet");
    let mut small = Vec::new();
    let mut small_ok = true;
    for r in chip.iter().filter(|r| r.policy == "baseline-ddr" && r.chiplet_bw_gbps == Some(173.0)) {
        let a = r.attention_fraction();
        let pm = r.frac_proj + r.frac_mlp;
        small_ok &= (0.04..=0.09).contains(&a) && (0.82..=0.86).contains(&pm);
        small.push(format!("{}ns att {a:.3} pm {pm:.3}", r.ddr_lat_ns));
    }
    verdict(
        6,
        "breakdown windows",
        big_ok && small_ok,
        format!("13b att {a10:.3}@10us {a50:.3}@50us; 1b {}", small.join(", ")),
    );
}

#[test]
fn criterion_7_context_length() {
    let rows = rows_of("context");
    let phases: Vec<(u64, u64)> = vec![(200, 200), (4096, 12288), (8192, 24576)];
    let variants = 3;
    let table: Vec<Vec<f64>> = phases
        .iter()
        .map(|&(p, d)| rows.iter().filter(|r| (r.prefill, r.decode) == (p, d)).map(|r| r.tps).collect())
        .collect();
    let decreasing = (0..variants).all(|v| table.windows(2).all(|w| w[1][v] < w[0][v]));
    let order = |row: &Vec<f64>| {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
        idx
    };
    let consistent = table.iter().all(|r| order(r) == order(&table[0]));
    verdict(
        7,
        "context length",
        decreasing && consistent && table.iter().all(|r| r.len() == variants),
        format!("tps per context {table:.2?}"),
    );
}

#[test]
fn criterion_8_chiplet_study() {
    let rows = rows_of("chiplet");
    let tps_of = |policy: &str, lat: f64, bw: f64| {
        rows.iter()
            .find(|r| r.policy == policy && r.ddr_lat_ns == lat && r.chiplet_bw_gbps == Some(bw))
            .map(|r| r.tps)
            .unwrap()
    };
    let lats = [100.0, 250.0, 500.0, 1000.0];
    let bws = [173.0, 256.0, 384.0, 512.0, 768.0, 1000.0];
    let mut ok = true;
    let mut lines = Vec::new();
    for bw in bws {
        let gains: Vec<f64> = lats
            .iter()
            .map(|&l| tps_of("chiplet-qkv", l, bw) / tps_of("baseline-ddr", l, bw))
            .collect();
        ok &= gains.iter().all(|&g| (1.0..1.15).contains(&g));
        ok &= gains.windows(2).all(|w| w[1] > w[0]);
        lines.push(format!("{bw}GB/s {gains:.3?}"));
    }
    verdict(8, "chiplet study", ok, lines.join("; "));
}

#[test]
fn criterion_9_oracle_equivalence() {
    let plans = std::cell::Cell::new(0usize);
    let res = runner(256).run(&kernel_case(false), |(h, k, rt)| {
        plans.set(plans.get() + check_oracle(&h, &k, &rt)?);
        Ok(())
    });
    let plans = plans.get();
    verdict(
        9,
        "oracle equivalence",
        res.is_ok(),
        format!("256 kernels, {plans} plans walked {}", res.err().map(|e| e.to_string()).unwrap_or_default()),
    );
}

#[test]
fn criterion_10_property_suite() {
    let eq1 = runner(1000).run(&kernel_case(false), |(h, k, r)| check_eq1(&h, &k, &r));
    let zero = runner(1000).run(&kernel_case(true), |(h, k, r)| check_eq1(&h, &k, &r));
    let halve = runner(1000).run(&kernel_case(false), |(h, k, r)| check_scaling(&h, &k, &r));
    let strategy = (graph_case(), 0usize..4, 1.0f64..8.0);
    let mono = runner(1000).run(&strategy, |((h, p, m, ph), which, f)| check_monotone(&h, &p, &m, &ph, which, f));
    let errs: Vec<String> = [
        ("max", eq1.err().map(|e| e.to_string())),
        ("zero-latency", zero.err().map(|e| e.to_string())),
        ("halving", halve.err().map(|e| e.to_string())),
        ("monotone", mono.err().map(|e| e.to_string())),
    ]
    .into_iter()
    .filter_map(|(n, e)| e.map(|e| format!("{n}: {e}")))
    .collect();
    verdict(
        10,
        "property suite",
        errs.is_empty(),
        format!("4 x 1000 cases {}", errs.join("; ")),
    );
}
