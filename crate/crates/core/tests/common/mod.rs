#![allow(dead_code)]

use std::collections::BTreeMap;

use memroof::hardware::{ComputeSpec, Hierarchy, LevelId, MemoryLevel};
use memroof::placement::{KernelClass, PlacementPolicy, Route, TensorClass};
use memroof::workload::{KernelDesc, ModelSpec, PhaseSpec};
use proptest::prelude::*;

const LEVEL_NAMES: [&str; 4] = ["l0", "l1", "l2", "l3"];

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log2()..hi.log2()).prop_map(f64::exp2)
}

fn level(id: &'static str, outermost: bool, zero_latency: bool) -> impl Strategy<Value = MemoryLevel> {
    let cap = if outermost {
        Just(None).boxed()
    } else {
        (2048u64..65536).prop_map(Some).boxed()
    };
    let lat = if zero_latency {
        Just(0.0).boxed()
    } else {
        prop_oneof![Just(0.0), log_uniform(1e-9, 1e-4)].boxed()
    };
    let xfer = prop_oneof![Just(None), (64u64..4096).prop_map(Some)];
    (cap, log_uniform(1e9, 1e13), lat, xfer)
        .prop_map(move |(c, bw, lat, x)| MemoryLevel::new(id, c, bw, lat).with_max_transfer(x))
}

/// Two to four levels, bounded inner levels, unbounded outermost.
pub fn hierarchy(zero_latency: bool) -> impl Strategy<Value = Hierarchy> {
    (2usize..=4, log_uniform(1e9, 1e14))
        .prop_flat_map(move |(n, peak)| {
            let levels: Vec<_> = (0..n).map(|i| level(LEVEL_NAMES[i], i + 1 == n, zero_latency)).collect();
            (levels, Just(peak))
        })
        .prop_map(|(levels, peak)| Hierarchy::new(ComputeSpec { peak_flops: peak }, levels, None).unwrap())
}

const GEMM_CLASSES: [KernelClass; 6] = [
    KernelClass::QKVGen,
    KernelClass::QKt,
    KernelClass::SoftmaxV,
    KernelClass::Projection,
    KernelClass::MLP1,
    KernelClass::MLP2,
];

/// GEMMs with dims up to 64 and no operand over 4096 elements.
pub fn small_kernel() -> impl Strategy<Value = KernelDesc> {
    (0usize..6, 1u64..=4, prop::sample::select(vec![1u64, 2, 4]), any::<bool>())
        .prop_flat_map(|(ci, batch, bpe, per_head)| {
            let hi = if batch == 1 { 64u64 } else { 32 };
            (Just(ci), Just(batch), 1..=hi, 1..=hi, 1..=hi, Just(bpe), Just(per_head))
        })
        .prop_map(|(ci, batch, m, n, k, bpe, per_head)| {
            let classes = [TensorClass::OtherActivations, TensorClass::Weights, TensorClass::OtherActivations];
            KernelDesc::gemm(GEMM_CLASSES[ci], batch, m, n, k, bpe, classes, per_head)
        })
}

/// Each operand resident at a random level and staged inward.
pub fn route_for(h: &Hierarchy, k: &KernelDesc) -> impl Strategy<Value = Route> {
    let n = h.levels.len();
    let ids: Vec<LevelId> = h.levels.iter().map(|l| l.id.clone()).collect();
    prop::collection::vec(0..n, k.operands.len()).prop_map(move |tops| Route {
        paths: tops
            .into_iter()
            .map(|top| (0..=top).rev().map(|i| ids[i].clone()).collect())
            .collect(),
    })
}

pub fn kernel_case(zero_latency: bool) -> impl Strategy<Value = (Hierarchy, KernelDesc, Route)> {
    (hierarchy(zero_latency), small_kernel()).prop_flat_map(|(h, k)| {
        let r = route_for(&h, &k);
        (Just(h), Just(k), r)
    })
}

pub fn tiny_model() -> impl Strategy<Value = ModelSpec> {
    (1u64..=2, prop::sample::select(vec![1u64, 2, 4]), prop::sample::select(vec![4u64, 8, 16]), 8u64..=64, 2u64..=3, 1u64..=2)
        .prop_map(|(layers, heads, hd, d_ff, mats, bpe)| ModelSpec {
            name: "tiny".into(),
            n_layers: layers,
            d_model: heads * hd,
            n_heads: heads,
            d_ff,
            n_ffn_mats: mats,
            bytes_per_el: bpe,
            vocab_size: 16,
        })
}

pub fn tiny_phase() -> impl Strategy<Value = PhaseSpec> {
    (0u64..=8, 1u64..=4).prop_map(|(p, d)| PhaseSpec::new(p, d).unwrap())
}

/// Random residency for every tensor class.
pub fn policy_for(h: &Hierarchy) -> impl Strategy<Value = PlacementPolicy> {
    let ids: Vec<LevelId> = h.levels.iter().map(|l| l.id.clone()).collect();
    let n = ids.len();
    prop::collection::vec(0..n, TensorClass::ALL.len()).prop_map(move |idx| {
        let residency: BTreeMap<TensorClass, LevelId> = TensorClass::ALL
            .iter()
            .zip(idx)
            .map(|(&c, i)| (c, ids[i].clone()))
            .collect();
        PlacementPolicy::custom("random", residency).unwrap()
    })
}

pub fn graph_case() -> impl Strategy<Value = (Hierarchy, PlacementPolicy, ModelSpec, PhaseSpec)> {
    (hierarchy(false), tiny_model(), tiny_phase()).prop_flat_map(|(h, m, ph)| {
        let p = policy_for(&h);
        (Just(h), p, Just(m), Just(ph))
    })
}

use memroof::error::Error;
use memroof::oracle::simulate_plan;
use memroof::roofline::{enumerate_tilings, graph_time, kernel_time_routed, tps, traffic, KernelTiming, TilingPlan, TpsMode};
use memroof::workload::build_inference_graph;
use proptest::test_runner::TestCaseError;

/// Times a kernel, discarding cases where no tile fits.
pub fn time_or_reject(h: &Hierarchy, k: &KernelDesc, r: &Route) -> Result<KernelTiming, TestCaseError> {
    match kernel_time_routed(k, h, r) {
        Ok(t) => Ok(t),
        Err(Error::InfeasibleKernel { .. }) => Err(TestCaseError::reject("no feasible tile")),
        Err(e) => Err(TestCaseError::fail(e.to_string())),
    }
}

/// Walk and closed form agree on the chosen plan and on variants that swap
/// in other candidates for one destination at a time.
pub fn check_oracle(h: &Hierarchy, k: &KernelDesc, r: &Route) -> Result<usize, TestCaseError> {
    let chosen = time_or_reject(h, k, r)?.plan;
    let space = enumerate_tilings(k, h, r).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mut plans = vec![chosen.clone()];
    for (gi, g) in space.groups.iter().enumerate() {
        let step = (g.candidates.len() / 4).max(1);
        for c in g.candidates.iter().step_by(step).take(4) {
            let mut p: TilingPlan = chosen.clone();
            p.tiles[gi] = c.clone();
            plans.push(p);
        }
    }
    for plan in &plans {
        let walk = simulate_plan(k, plan, r, h).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for lvl in h.all_levels() {
            let a = traffic(k, plan, r, h, &lvl.id).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let (wb, wt) = walk.totals.get(&lvl.id).copied().unwrap_or_default();
            prop_assert_eq!(
                (a.bytes, a.transfers),
                (wb, wt),
                "{} at {} with plan {:?}",
                k.label(),
                lvl.id,
                plan.tiles
            );
        }
    }
    Ok(plans.len())
}

/// Total is the max of compute and level times, the bound tag names it,
/// the physical lower bound holds, and zero-latency classification agrees
/// with the inflection point.
pub fn check_eq1(h: &Hierarchy, k: &KernelDesc, r: &Route) -> Result<(), TestCaseError> {
    let t = time_or_reject(h, k, r)?;
    let max = t.levels.iter().map(|l| l.time).fold(t.compute_time, f64::max);
    prop_assert_eq!(t.total, max);
    prop_assert_eq!(t.compute_time, k.flops as f64 / h.compute.peak_flops);
    let named = match &t.bound {
        memroof::roofline::Bound::Compute => t.compute_time,
        memroof::roofline::Bound::Level(id) => t.level(id.as_str()).unwrap().time,
    };
    prop_assert_eq!(named, t.total);
    for lvl in h.all_levels() {
        let crossing: u64 = r
            .paths
            .iter()
            .zip(&k.operands)
            .filter(|(p, _)| p.contains(&lvl.id))
            .map(|(_, o)| o.bytes)
            .sum();
        prop_assert!(t.total >= crossing as f64 / lvl.bandwidth);
        if lvl.latency == 0.0 {
            if let Some(lt) = t.level(lvl.id.as_str()) {
                let ip = h.compute.peak_flops / lvl.bandwidth;
                let below = lt.arithmetic_intensity < ip;
                let slower = lt.time > t.compute_time;
                let near = (lt.arithmetic_intensity / ip - 1.0).abs() < 1e-9;
                prop_assert!(near || below == slower, "AI {} vs {}", lt.arithmetic_intensity, ip);
            }
        }
    }
    Ok(())
}

/// Doubling every bandwidth and halving every latency halves each level time.
pub fn check_scaling(h: &Hierarchy, k: &KernelDesc, r: &Route) -> Result<(), TestCaseError> {
    let t = time_or_reject(h, k, r)?;
    let mut fast = h.clone();
    for l in fast.levels.iter_mut() {
        l.bandwidth *= 2.0;
        l.latency /= 2.0;
    }
    let f = time_or_reject(&fast, k, r)?;
    for (a, b) in t.levels.iter().zip(&f.levels) {
        prop_assert_eq!(a.time / 2.0, b.time);
    }
    let mem = t.levels.iter().map(|l| l.time).fold(0.0, f64::max);
    if mem / 2.0 >= t.compute_time {
        prop_assert_eq!(f.total, t.total / 2.0);
    }
    Ok(())
}

/// TPS never drops when a level gets faster or lower-latency.
pub fn check_monotone(h: &Hierarchy, p: &PlacementPolicy, m: &ModelSpec, ph: &PhaseSpec, which: usize, factor: f64) -> Result<(), TestCaseError> {
    let g = build_inference_graph(m, ph).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let eval = |h: &Hierarchy| -> Result<f64, TestCaseError> {
        match graph_time(&g, h, p) {
            Ok(r) => Ok(tps(&r, ph, TpsMode::DecodeOnly)),
            Err(Error::InKernel { source, .. }) if matches!(*source, Error::InfeasibleKernel { .. }) => {
                Err(TestCaseError::reject("infeasible"))
            }
            Err(e) => Err(TestCaseError::fail(e.to_string())),
        }
    };
    let base = eval(h)?;
    let i = which % h.levels.len();
    let mut bw = h.clone();
    bw.levels[i].bandwidth *= factor;
    prop_assert!(eval(&bw)? >= base, "bandwidth up at {}", bw.levels[i].id);
    let mut lat = h.clone();
    lat.levels[i].latency = lat.levels[i].latency * factor + 1e-9;
    prop_assert!(eval(&lat)? <= base, "latency up at {}", lat.levels[i].id);
    Ok(())
}
