//! Declarative sweeps over models, phases, hierarchies and placements.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{Hierarchy, LevelId, CHIPLET, DDR, HBS};
use crate::placement::{capacity_check, KernelClass, PlacementPolicy};
use crate::roofline::{graph_time, plurality, tps, Bound, PerfReport, TpsMode};
use crate::units::{parse_bandwidth, parse_latency};
use crate::workload::{build_inference_graph, kv_cache_bytes, weight_bytes, KernelGraph, ModelSpec, Phase, PhaseSpec};

/// Column order of result tables.
pub const CSV_HEADER: &str = "experiment,model,prefill,decode,policy,ddr_bw_gbps,ddr_lat_ns,hbs_bw_gbps,hbs_lat_us,chiplet_bw_gbps,tps,bottleneck,frac_qkvgen,frac_qkt,frac_softmaxv,frac_proj,frac_mlp,kv_bytes,weight_bytes,feasible";

pub const BUILTIN_EXPERIMENTS: &[&str] = &["exp1", "exp2", "exp3", "table1", "context", "chiplet"];

/// HBS bandwidth grid of the HBS sweeps.
pub const HBS_BANDWIDTHS: &[&str] = &["16gbps", "32gbps", "64gbps", "128gbps", "173gbps", "256gbps", "384gbps", "512gbps"];
pub const HBS_LATENCIES: &[&str] = &["2us", "10us", "50us", "100us"];
pub const CHIPLET_DDR_LATENCIES: &[&str] = &["100ns", "250ns", "500ns", "1us"];
pub const CHIPLET_BANDWIDTHS: &[&str] = &["173gbps", "256gbps", "384gbps", "512gbps", "768gbps", "1tbps"];

/// A preset name or an inline model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Preset(String),
    Inline(ModelSpec),
}

impl ModelRef {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelRef::Preset(name) => ModelSpec::preset(name),
            ModelRef::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

/// Sweepable hardware parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "ddr.bandwidth")]
    DdrBandwidth,
    #[serde(rename = "ddr.latency")]
    DdrLatency,
    #[serde(rename = "hbs.bandwidth")]
    HbsBandwidth,
    #[serde(rename = "hbs.latency")]
    HbsLatency,
    #[serde(rename = "chiplet.bandwidth")]
    ChipletBandwidth,
    #[serde(rename = "chiplet.latency")]
    ChipletLatency,
}

impl Param {
    fn level(self) -> &'static str {
        match self {
            Param::DdrBandwidth | Param::DdrLatency => DDR,
            Param::HbsBandwidth | Param::HbsLatency => HBS,
            Param::ChipletBandwidth | Param::ChipletLatency => CHIPLET,
        }
    }

    fn is_bandwidth(self) -> bool {
        matches!(self, Param::DdrBandwidth | Param::HbsBandwidth | Param::ChipletBandwidth)
    }

    fn parse(self, value: &str) -> Result<f64> {
        if self.is_bandwidth() {
            parse_bandwidth(value)
        } else {
            parse_latency(value)
        }
    }

    /// Sets this parameter on `h`.
    pub fn apply(self, h: &mut Hierarchy, value: f64) -> Result<()> {
        let id = LevelId::from(self.level());
        let lvl = h
            .level_mut(&id)
            .ok_or_else(|| Error::config(format!("axes.{}", self.name()), format!("hierarchy has no `{id}` level")))?;
        if self.is_bandwidth() {
            lvl.bandwidth = value;
        } else {
            lvl.latency = value;
        }
        lvl.validate()
    }

    pub fn name(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: Param,
    /// Unit-suffixed values, swept in the listed order.
    pub values: Vec<String>,
}

/// A base configuration that the axes are applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    /// Hierarchy shorthand, e.g. `lpddr6+hbs:16gbps,10us`.
    pub hierarchy: String,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub model: ModelRef,
    pub phases: Vec<PhaseSpec>,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
    #[serde(default)]
    pub tps_mode: TpsMode,
}

/// One fully resolved sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub phase: PhaseSpec,
    pub hierarchy: Hierarchy,
    pub policy: PlacementPolicy,
}

impl ExperimentSpec {
    /// Number of rows the sweep produces.
    pub fn cardinality(&self) -> usize {
        self.phases.len() * self.variants.len() * self.axes.iter().map(|a| a.values.len()).product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        self.points().map(|_| ())
    }

    /// All points in canonical order: phase, then variant, then the axes
    /// with the first axis varying slowest.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.model.resolve()?;
        if self.phases.is_empty() {
            return Err(Error::config("phases", "at least one phase is required"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        for p in &self.phases {
            p.validate()?;
        }
        let mut axes = Vec::with_capacity(self.axes.len());
        for (i, a) in self.axes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::config(format!("axes[{i}].values"), "must not be empty"));
            }
            if self.axes[..i].iter().any(|b| b.param == a.param) {
                return Err(Error::config(format!("axes[{i}].param"), format!("`{}` swept twice", a.param.name())));
            }
            let vals = a
                .values
                .iter()
                .map(|v| a.param.parse(v))
                .collect::<Result<Vec<_>>>()?;
            axes.push((a.param, vals));
        }
        let mut bases = Vec::with_capacity(self.variants.len());
        for (i, v) in self.variants.iter().enumerate() {
            let h = Hierarchy::from_shorthand(&v.hierarchy)
                .map_err(|e| Error::config(format!("variants[{i}].hierarchy"), e.to_string()))?;
            let p = PlacementPolicy::named(&v.policy)?;
            p.check_against(&h)?;
            bases.push((h, p));
        }

        let mut combos: Vec<Vec<(Param, f64)>> = vec![Vec::new()];
        for (param, vals) in &axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |&v| {
                        let mut c = c.clone();
                        c.push((*param, v));
                        c
                    })
                })
                .collect();
        }
        let mut out = Vec::with_capacity(self.cardinality());
        for phase in &self.phases {
            for (h, p) in &bases {
                for c in &combos {
                    let mut hier = h.clone();
                    for &(param, v) in c {
                        param.apply(&mut hier, v)?;
                    }
                    out.push(SweepPoint {
                        phase: *phase,
                        hierarchy: hier,
                        policy: p.clone(),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub model: String,
    pub prefill: u64,
    pub decode: u64,
    pub policy: String,
    pub ddr_bw_gbps: f64,
    pub ddr_lat_ns: f64,
    pub hbs_bw_gbps: Option<f64>,
    pub hbs_lat_us: Option<f64>,
    pub chiplet_bw_gbps: Option<f64>,
    pub tps: f64,
    pub bottleneck: String,
    pub frac_qkvgen: f64,
    pub frac_qkt: f64,
    pub frac_softmaxv: f64,
    pub frac_proj: f64,
    pub frac_mlp: f64,
    pub kv_bytes: u64,
    pub weight_bytes: u64,
    pub feasible: bool,
}

impl ResultRow {
    pub fn attention_fraction(&self) -> f64 {
        self.frac_qkt + self.frac_softmaxv
    }
}

/// Which steps a breakdown covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreakdownScope {
    /// All decode steps together.
    Decode,
    /// The decode step whose context is `prefill + decode / 2`.
    MidContext,
}

/// Share of GEMM time per class; elementwise kernels are excluded.
pub fn gemm_breakdown(report: &PerfReport, phase: &PhaseSpec, scope: BreakdownScope) -> BTreeMap<KernelClass, f64> {
    let mut time: BTreeMap<KernelClass, f64> = BTreeMap::new();
    let mid = phase.prefill_len + (phase.decode_len / 2).max(1);
    for s in report.steps.iter().filter(|s| s.phase == Phase::Decode) {
        if scope == BreakdownScope::MidContext && s.context != mid {
            continue;
        }
        for c in KernelClass::ALL.into_iter().filter(|c| c.is_gemm()) {
            *time.entry(c).or_insert(0.0) += s.class_time[c.index()];
        }
    }
    let total: f64 = time.values().sum();
    if total > 0.0 {
        time.values_mut().for_each(|v| *v /= total);
    }
    time
}

/// Resource bounding the largest share of the time counted by `mode`.
pub fn find_bottleneck(report: &PerfReport, mode: TpsMode) -> Bound {
    match mode {
        TpsMode::DecodeOnly => plurality(&report.decode_bound_time),
        TpsMode::EndToEnd => plurality(&report.bound_time),
    }
}

/// TPS of each row relative to the first row matching `is_baseline`.
pub fn speedup_table(rows: &[ResultRow], is_baseline: impl Fn(&ResultRow) -> bool) -> Result<Vec<f64>> {
    let base = rows
        .iter()
        .find(|r| is_baseline(r))
        .ok_or_else(|| Error::MissingBaseline("no row matches the baseline selector".into()))?;
    Ok(rows.iter().map(|r| r.tps / base.tps).collect())
}

fn level_field(h: &Hierarchy, id: &str) -> Option<(f64, f64)> {
    h.level(&LevelId::from(id)).map(|l| (l.bandwidth, l.latency))
}

/// Times one point; infeasible placements still yield a row.
pub fn evaluate_point(
    experiment: &str,
    model: &ModelSpec,
    graph: &KernelGraph,
    point: &SweepPoint,
    mode: TpsMode,
) -> Result<ResultRow> {
    let cap = capacity_check(&point.policy, model, &point.phase, &point.hierarchy)?;
    let (ddr_bw, ddr_lat) = level_field(&point.hierarchy, DDR).unwrap_or((f64::NAN, f64::NAN));
    let hbs = level_field(&point.hierarchy, HBS);
    let chiplet = level_field(&point.hierarchy, CHIPLET);
    let mut row = ResultRow {
        experiment: experiment.into(),
        model: model.name.clone(),
        prefill: point.phase.prefill_len,
        decode: point.phase.decode_len,
        policy: point.policy.name.clone(),
        ddr_bw_gbps: ddr_bw / 1e9,
        ddr_lat_ns: ddr_lat * 1e9,
        hbs_bw_gbps: hbs.map(|h| h.0 / 1e9),
        hbs_lat_us: hbs.map(|h| h.1 * 1e6),
        chiplet_bw_gbps: chiplet.map(|c| c.0 / 1e9),
        tps: 0.0,
        bottleneck: "infeasible".into(),
        frac_qkvgen: 0.0,
        frac_qkt: 0.0,
        frac_softmaxv: 0.0,
        frac_proj: 0.0,
        frac_mlp: 0.0,
        kv_bytes: kv_cache_bytes(model, point.phase.final_context()),
        weight_bytes: weight_bytes(model),
        feasible: cap.is_ok(),
    };
    let report = match graph_time(graph, &point.hierarchy, &point.policy) {
        Ok(r) => r,
        Err(Error::InKernel { source, .. }) if matches!(*source, Error::InfeasibleKernel { .. }) => {
            row.feasible = false;
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    row.tps = tps(&report, &point.phase, mode);
    row.bottleneck = find_bottleneck(&report, mode).to_string();
    let f = gemm_breakdown(&report, &point.phase, BreakdownScope::Decode);
    let get = |c| f.get(&c).copied().unwrap_or(0.0);
    row.frac_qkvgen = get(KernelClass::QKVGen);
    row.frac_qkt = get(KernelClass::QKt);
    row.frac_softmaxv = get(KernelClass::SoftmaxV);
    row.frac_proj = get(KernelClass::Projection);
    row.frac_mlp = get(KernelClass::MLP1) + get(KernelClass::MLP2);
    Ok(row)
}

/// Runs every point; rows come back in canonical order whatever the
/// execution order.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let model = spec.model.resolve()?;
    let points = spec.points()?;
    let mut graphs: HashMap<PhaseSpec, KernelGraph> = HashMap::new();
    for p in &spec.phases {
        if !graphs.contains_key(p) {
            graphs.insert(*p, build_inference_graph(&model, p)?);
        }
    }
    points
        .par_iter()
        .map(|pt| evaluate_point(&spec.name, &model, &graphs[&pt.phase], pt, spec.tps_mode))
        .collect()
}

/// Smallest bandwidth of `param` in `[lo, hi]` at which the bottleneck is
/// no longer `level`, located to within `tol` bytes/s by bisection.
#[allow(clippy::too_many_arguments)]
pub fn bottleneck_crossover(
    model: &ModelSpec,
    phase: &PhaseSpec,
    hierarchy: &Hierarchy,
    policy: &PlacementPolicy,
    param: Param,
    level: &str,
    (lo, hi): (f64, f64),
    tol: f64,
) -> Result<Option<f64>> {
    let graph = build_inference_graph(model, phase)?;
    let bound_at = |bw: f64| -> Result<bool> {
        let mut h = hierarchy.clone();
        param.apply(&mut h, bw)?;
        let r = graph_time(&graph, &h, policy)?;
        Ok(r.bottleneck() != Bound::Level(LevelId::from(level)))
    };
    if bound_at(lo)? {
        return Ok(Some(lo));
    }
    if !bound_at(hi)? {
        return Ok(None);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if bound_at(mid)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Some(b))
}

fn sweep(name: &str, model: &str, phases: &[(u64, u64)], variants: &[(&str, &str)], axes: &[(Param, &[&str])]) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        model: ModelRef::Preset(model.into()),
        phases: phases
            .iter()
            .map(|&(p, d)| PhaseSpec {
                prefill_len: p,
                decode_len: d,
            })
            .collect(),
        variants: variants
            .iter()
            .map(|&(h, p)| Variant {
                hierarchy: h.into(),
                policy: p.into(),
            })
            .collect(),
        axes: axes
            .iter()
            .map(|&(param, vals)| SweepAxis {
                param,
                values: vals.iter().map(|v| v.to_string()).collect(),
            })
            .collect(),
        tps_mode: TpsMode::DecodeOnly,
    }
}

/// Built-in experiment definitions.
pub fn builtin(name: &str) -> Result<ExperimentSpec> {
    const M13: &str = "llava15-13b";
    let hbs_axes: &[(Param, &[&str])] = &[(Param::HbsLatency, HBS_LATENCIES), (Param::HbsBandwidth, HBS_BANDWIDTHS)];
    Ok(match name {
        "exp1" => sweep(name, M13, &[(200, 200)], &[("lpddr6+hbs:16gbps,10us", "all-in-hbs")], hbs_axes),
        "exp2" => sweep(name, M13, &[(200, 200)], &[("lpddr6-3x+hbs:16gbps,10us", "all-in-hbs")], hbs_axes),
        "exp3" => sweep(name, M13, &[(200, 200)], &[("lpddr6-3x+hbs:16gbps,10us", "qkv-in-ddr")], hbs_axes),
        "table1" => sweep(
            name,
            M13,
            &[(200, 200)],
            &[
                ("lpddr6+hbs:173gbps,10us", "all-in-hbs"),
                ("lpddr6+hbs:512gbps,10us", "all-in-hbs"),
                ("lpddr6-3x+hbs:512gbps,10us", "all-in-hbs"),
                ("lpddr6-3x+hbs:512gbps,10us", "qkv-in-ddr"),
            ],
            &[],
        ),
        "context" => sweep(
            name,
            M13,
            &[(200, 200), (4096, 12288), (8192, 24576)],
            &[
                ("lpddr6+hbs:512gbps,10us", "all-in-hbs"),
                ("lpddr6-3x+hbs:512gbps,10us", "all-in-hbs"),
                ("lpddr6-3x+hbs:512gbps,10us", "qkv-in-ddr"),
            ],
            &[],
        ),
        "chiplet" => sweep(
            name,
            "llama32-1b",
            &[(128, 384)],
            &[
                ("ddr:173gbps,100ns+hbs:512gbps,10us+chiplet:173gbps", "baseline-ddr"),
                ("ddr:173gbps,100ns+hbs:512gbps,10us+chiplet:173gbps", "chiplet-qkv"),
            ],
            &[(Param::DdrLatency, CHIPLET_DDR_LATENCIES), (Param::ChipletBandwidth, CHIPLET_BANDWIDTHS)],
        ),
        _ => {
            return Err(Error::UnknownPreset {
                kind: "experiment",
                name: name.into(),
                valid: BUILTIN_EXPERIMENTS.iter().map(|s| s.to_string()).collect(),
            })
        }
    })
}

pub fn write_csv(rows: &[ResultRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_json(rows: &[ResultRow], mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    writeln!(out)?;
    Ok(())
}
