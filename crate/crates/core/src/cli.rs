//! `memroof` command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_json, write_atomic, Catalog, Format, HierarchyRef, PolicyRef, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    self, evaluate_point, gemm_breakdown, BreakdownScope, ExperimentSpec, ModelRef, ResultRow, SweepPoint,
    BUILTIN_EXPERIMENTS,
};
use crate::hardware::{self, inflection_point, Hierarchy, HIERARCHY_PRESETS, LEVEL_PRESETS};
use crate::placement::{capacity_check, CapacityReport, KernelClass, PlacementPolicy, POLICY_NAMES};
use crate::roofline::{graph_time, timing_dump, TpsMode};
use crate::units::{format_bandwidth, format_capacity, format_latency};
use crate::workload::{build_inference_graph, ModelSpec, PhaseSpec, MODEL_PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "memroof", version, about = "Roofline performance estimates for LLM inference on tiered memory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time one configuration.
    Estimate(EstimateArgs),
    /// Run a built-in or file-defined parameter sweep.
    Sweep(SweepArgs),
    /// List models, memory levels, hierarchies, policies and experiments.
    Presets(PresetsArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// JSON run configuration; other flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset name.
    #[arg(long, conflicts_with = "model_file")]
    pub model: Option<String>,
    /// JSON model description.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long)]
    pub prefill: Option<u64>,
    #[arg(long)]
    pub decode: Option<u64>,
    /// Hierarchy preset or shorthand, e.g. `lpddr6+hbs:512gbps,10us`.
    #[arg(long, conflicts_with = "hier_file")]
    pub hier: Option<String>,
    /// JSON hierarchy description.
    #[arg(long)]
    pub hier_file: Option<PathBuf>,
    /// Placement policy name.
    #[arg(long)]
    pub policy: Option<String>,
    /// `decode-only` or `end-to-end`.
    #[arg(long)]
    pub tps_mode: Option<TpsMode>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Report even when a placement exceeds a level's capacity.
    #[arg(long)]
    pub allow_infeasible: bool,
    /// Write a per-kernel timing table to this file.
    #[arg(long)]
    pub dump_kernels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Built-in or custom experiment name.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub builtin: Option<String>,
    /// JSON experiment spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Defaults to json for `.json` outputs, csv otherwise.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Emit the resolved spec instead of running it.
    #[arg(long)]
    pub dump_spec: bool,
}

#[derive(Debug, Args)]
pub struct PresetsArgs {
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleKernel { .. } => EXIT_INFEASIBLE,
        Error::InKernel { source, .. } => exit_code(source),
        Error::InvalidModel { .. }
        | Error::DimensionMismatch(_)
        | Error::UnknownPreset { .. }
        | Error::Config { .. }
        | Error::Unit { .. }
        | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let res = Catalog::from_env().and_then(|cat| match &cli.command {
        Command::Estimate(a) => cmd_estimate(&cat, a, out, err),
        Command::Sweep(a) => cmd_sweep(&cat, a, out, err),
        Command::Presets(a) => cmd_presets(&cat, a.format, out),
    });
    match res {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => Ok(out.write_all(bytes)?),
    }
}

/// Merges a config file (if any) with command-line overrides.
fn resolve_run(cat: &Catalog, a: &EstimateArgs) -> Result<(RunConfig, ModelSpec, Hierarchy, PlacementPolicy)> {
    let base = a.config.as_deref().map(RunConfig::load).transpose()?;
    let model = match (&a.model, &a.model_file) {
        (Some(n), _) => ModelRef::Preset(n.clone()),
        (None, Some(f)) => ModelRef::Inline(load_json(f)?),
        (None, None) => base
            .as_ref()
            .map(|b| b.model.clone())
            .ok_or_else(|| Error::config("model", "give --model, --model-file or --config"))?,
    };
    let hierarchy = match (&a.hier, &a.hier_file) {
        (Some(s), _) => HierarchyRef::Named(s.clone()),
        (None, Some(f)) => HierarchyRef::Inline(load_json(f)?),
        (None, None) => base
            .as_ref()
            .map(|b| b.hierarchy.clone())
            .ok_or_else(|| Error::config("hierarchy", "give --hier, --hier-file or --config"))?,
    };
    let policy = match &a.policy {
        Some(p) => PolicyRef::Named(p.clone()),
        None => base
            .as_ref()
            .map(|b| b.policy.clone())
            .ok_or_else(|| Error::config("policy", "give --policy or --config"))?,
    };
    let bp = base.as_ref().map(|b| b.phase);
    let prefill = a
        .prefill
        .or(bp.map(|p| p.prefill_len))
        .ok_or_else(|| Error::config("phase.prefill_len", "give --prefill or --config"))?;
    let decode = a
        .decode
        .or(bp.map(|p| p.decode_len))
        .ok_or_else(|| Error::config("phase.decode_len", "give --decode or --config"))?;
    let mut output = base.as_ref().map(|b| b.output.clone()).unwrap_or_default();
    if let Some(f) = a.format {
        output.format = f;
    }
    if a.output.is_some() {
        output.path = a.output.clone();
    }
    let cfg = RunConfig {
        model,
        phase: PhaseSpec::new(prefill, decode)?,
        hierarchy,
        policy,
        tps_mode: a.tps_mode.or(base.map(|b| b.tps_mode)).unwrap_or_default(),
        output,
    };
    let m = cat.model(&cfg.model)?;
    let h = cat.hierarchy(&cfg.hierarchy)?;
    let p = cat.policy(&cfg.policy)?;
    p.check_against(&h)?;
    Ok((cfg, m, h, p))
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    row: ResultRow,
    hierarchy: String,
    tps_mode: TpsMode,
    prefill_time_s: f64,
    decode_time_s: f64,
    total_time_s: f64,
    breakdown_decode: Vec<(KernelClass, f64)>,
    breakdown_mid_context: Vec<(KernelClass, f64)>,
    capacity: CapacityReport,
}

fn render_estimate(r: &EstimateReport) -> String {
    let mut s = String::new();
    let row = &r.row;
    let _ = writeln!(s, "model        {} ({}/{} tokens)", row.model, row.prefill, row.decode);
    let _ = writeln!(s, "hierarchy    {}", r.hierarchy);
    let _ = writeln!(s, "policy       {}", row.policy);
    let _ = writeln!(s, "tps          {:.3} ({})", row.tps, r.tps_mode);
    let _ = writeln!(s, "bottleneck   {}", row.bottleneck);
    let _ = writeln!(
        s,
        "time         prefill {:.4} s, decode {:.4} s, total {:.4} s",
        r.prefill_time_s, r.decode_time_s, r.total_time_s
    );
    let _ = writeln!(s, "footprint    weights {} B, kv cache {} B", row.weight_bytes, row.kv_bytes);
    let _ = writeln!(s, "\nGEMM time share   decode    mid-context");
    for ((c, d), (_, m)) in r.breakdown_decode.iter().zip(&r.breakdown_mid_context) {
        let _ = writeln!(s, "  {:<14} {:>8.4} {:>12.4}", c.to_string(), d, m);
    }
    let _ = writeln!(
        s,
        "  {:<14} {:>8.4}",
        "attention",
        row.attention_fraction()
    );
    let _ = writeln!(s, "\ncapacity");
    for o in &r.capacity.occupancy {
        let _ = writeln!(
            s,
            "  {:<10} {:>16} / {:<12} {}",
            o.level.to_string(),
            o.required,
            format_capacity(o.capacity),
            if o.fits() { "ok" } else { "EXCEEDED" }
        );
    }
    s
}

fn cmd_estimate(cat: &Catalog, a: &EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (cfg, model, hierarchy, policy) = resolve_run(cat, a)?;
    let cap = capacity_check(&policy, &model, &cfg.phase, &hierarchy)?;
    if !cap.is_ok() {
        writeln!(err, "capacity exceeded: {}", cap.describe_violations())?;
        if !a.allow_infeasible {
            return Ok(EXIT_INFEASIBLE);
        }
    }
    let graph = build_inference_graph(&model, &cfg.phase)?;
    let report = graph_time(&graph, &hierarchy, &policy)?;
    let point = SweepPoint {
        phase: cfg.phase,
        hierarchy: hierarchy.clone(),
        policy: policy.clone(),
    };
    let row = evaluate_point("estimate", &model, &graph, &point, cfg.tps_mode)?;
    let gemms = |scope| {
        let b = gemm_breakdown(&report, &cfg.phase, scope);
        KernelClass::ALL
            .into_iter()
            .filter(|c| c.is_gemm())
            .map(|c| (c, b.get(&c).copied().unwrap_or(0.0)))
            .collect::<Vec<_>>()
    };
    let rep = EstimateReport {
        hierarchy: hierarchy.to_shorthand(),
        tps_mode: cfg.tps_mode,
        prefill_time_s: report.prefill_time(),
        decode_time_s: report.decode_time(),
        total_time_s: report.total_time(),
        breakdown_decode: gemms(BreakdownScope::Decode),
        breakdown_mid_context: gemms(BreakdownScope::MidContext),
        capacity: cap,
        row,
    };
    if let Some(p) = &a.dump_kernels {
        let mut buf = Vec::new();
        timing_dump(&graph, &hierarchy, &policy, &mut buf)?;
        write_atomic(p, &buf)?;
    }
    let bytes = match cfg.output.format {
        Format::Table => render_estimate(&rep).into_bytes(),
        Format::Csv => {
            let mut b = Vec::new();
            experiments::write_csv(std::slice::from_ref(&rep.row), &mut b)?;
            b
        }
        Format::Json => {
            let mut b = serde_json::to_vec_pretty(&rep)?;
            b.push(b'\n');
            b
        }
    };
    emit(cfg.output.path.as_deref(), &bytes, out)?;
    Ok(EXIT_OK)
}

fn render_rows(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>13} {:>14} {:>9} {:>11} {:>10} {:>11} {:>9} {:>10} {:>6} {:>8}",
        "policy", "prefill/decode", "ddr", "ddr_lat", "hbs", "hbs_lat", "chiplet", "tps", "bottleneck", "attn", "feasible"
    );
    let opt = |v: Option<f64>, unit: &str| v.map_or("-".to_string(), |x| format!("{x}{unit}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>13} {:>14} {:>9} {:>11} {:>10} {:>11} {:>9.3} {:>10} {:>6.3} {:>8}",
            r.policy,
            format!("{}/{}", r.prefill, r.decode),
            format!("{}gbps", r.ddr_bw_gbps),
            format!("{}ns", r.ddr_lat_ns),
            opt(r.hbs_bw_gbps, "gbps"),
            opt(r.hbs_lat_us, "us"),
            opt(r.chiplet_bw_gbps, "gbps"),
            r.tps,
            r.bottleneck,
            r.attention_fraction(),
            r.feasible
        );
    }
    s
}

/// Bandwidth steps where the bottleneck leaves HBS, per HBS-latency curve.
fn crossovers(rows: &[ResultRow]) -> Vec<String> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        let same_curve = w[0].policy == w[1].policy
            && w[0].prefill == w[1].prefill
            && w[0].ddr_bw_gbps == w[1].ddr_bw_gbps
            && w[0].ddr_lat_ns == w[1].ddr_lat_ns
            && w[0].hbs_lat_us == w[1].hbs_lat_us
            && w[0].hbs_bw_gbps < w[1].hbs_bw_gbps;
        if same_curve && w[0].bottleneck == hardware::HBS && w[1].bottleneck != hardware::HBS {
            out.push(format!(
                "bottleneck leaves hbs between {} and {} GB/s (hbs latency {} us, {})",
                w[0].hbs_bw_gbps.unwrap_or(0.0),
                w[1].hbs_bw_gbps.unwrap_or(0.0),
                w[0].hbs_lat_us.unwrap_or(0.0),
                w[0].policy
            ));
        }
    }
    out
}

fn cmd_sweep(cat: &Catalog, a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let spec: ExperimentSpec = match (&a.builtin, &a.spec) {
        (Some(name), _) => cat.experiment(name)?,
        (None, Some(path)) => {
            let mut s: ExperimentSpec = load_json(path)?;
            cat.inline_model(&mut s)?;
            s
        }
        (None, None) => return Err(Error::config("sweep", "give --builtin or --spec")),
    };
    let format = a.format.unwrap_or(match a.output.as_deref().and_then(|p| p.extension()) {
        Some(x) if x == "json" => Format::Json,
        _ => Format::Csv,
    });
    if a.dump_spec {
        let mut b = serde_json::to_vec_pretty(&spec)?;
        b.push(b'\n');
        emit(a.output.as_deref(), &b, out)?;
        return Ok(EXIT_OK);
    }
    spec.validate()?;
    writeln!(err, "{}: {} points", spec.name, spec.cardinality())?;
    let rows = experiments::run_sweep(&spec)?;
    let mut buf = Vec::new();
    match format {
        Format::Csv => experiments::write_csv(&rows, &mut buf)?,
        Format::Json => experiments::write_json(&rows, &mut buf)?,
        Format::Table => buf = render_rows(&rows).into_bytes(),
    }
    emit(a.output.as_deref(), &buf, out)?;

    let feasible: Vec<&ResultRow> = rows.iter().filter(|r| r.feasible).collect();
    writeln!(err, "{} rows ({} infeasible)", rows.len(), rows.len() - feasible.len())?;
    let best = feasible.iter().max_by(|a, b| a.tps.total_cmp(&b.tps));
    let worst = feasible.iter().min_by(|a, b| a.tps.total_cmp(&b.tps));
    if let (Some(b), Some(w)) = (best, worst) {
        writeln!(err, "best tps {:.3} ({}), worst tps {:.3} ({})", b.tps, b.policy, w.tps, w.policy)?;
    }
    for c in crossovers(&rows) {
        writeln!(err, "{c}")?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct PresetListing {
    models: Vec<ModelSpec>,
    levels: Vec<(String, hardware::MemoryLevel)>,
    hierarchies: Vec<(String, String)>,
    policies: Vec<PlacementPolicy>,
    experiments: Vec<(String, usize)>,
}

fn listing(cat: &Catalog) -> Result<PresetListing> {
    let mut models: Vec<ModelSpec> = MODEL_PRESETS.iter().map(|n| ModelSpec::preset(n)).collect::<Result<_>>()?;
    models.extend(cat.models.values().cloned());
    let levels = LEVEL_PRESETS
        .iter()
        .map(|n| hardware::level_preset(n).map(|l| (n.to_string(), l)))
        .collect::<Result<Vec<_>>>()?;
    let mut hierarchies = Vec::new();
    for n in HIERARCHY_PRESETS {
        hierarchies.push((n.to_string(), cat.hierarchy(&HierarchyRef::Named(n.to_string()))?.to_shorthand()));
    }
    for (n, h) in &cat.hierarchies {
        hierarchies.push((n.clone(), h.to_shorthand()));
    }
    let policies = POLICY_NAMES.iter().map(|n| PlacementPolicy::named(n)).collect::<Result<_>>()?;
    let mut experiments = Vec::new();
    for n in BUILTIN_EXPERIMENTS {
        experiments.push((n.to_string(), experiments::builtin(n)?.cardinality()));
    }
    for (n, e) in &cat.experiments {
        experiments.push((n.clone(), e.cardinality()));
    }
    Ok(PresetListing {
        models,
        levels,
        hierarchies,
        policies,
        experiments,
    })
}

fn cmd_presets(cat: &Catalog, format: Format, out: &mut dyn Write) -> Result<i32> {
    let l = listing(cat)?;
    if format == Format::Json {
        serde_json::to_writer_pretty(&mut *out, &l)?;
        writeln!(out)?;
        return Ok(EXIT_OK);
    }
    if format == Format::Csv {
        return Err(Error::config("format", "presets support table or json"));
    }
    writeln!(out, "models")?;
    for m in &l.models {
        writeln!(
            out,
            "  {:<14} layers {:<3} d_model {:<5} heads {:<3} d_ff {:<6} ffn mats {} bytes/el {} vocab {} ({} params)",
            m.name,
            m.n_layers,
            m.d_model,
            m.n_heads,
            m.d_ff,
            m.n_ffn_mats,
            m.bytes_per_el,
            m.vocab_size,
            m.parameter_count()
        )?;
    }
    writeln!(out, "memory levels")?;
    let compute = hardware::ComputeSpec::default();
    for (n, lvl) in &l.levels {
        writeln!(
            out,
            "  {:<14} {:<8} bw {:<9} lat {:<7} cap {:<10} inflection {:.1} flop/B",
            n,
            lvl.id.to_string(),
            format_bandwidth(lvl.bandwidth),
            format_latency(lvl.latency),
            format_capacity(lvl.capacity),
            inflection_point(&compute, lvl).value
        )?;
    }
    writeln!(out, "  {:<14} storage level, {} per request", "hbs:<bw>,<lat>", format_capacity(Some(hardware::STORAGE_MAX_TRANSFER)))?;
    writeln!(out, "  {:<14} bonded SRAM beside L2, default {}", "chiplet:<bw>", format_capacity(Some(hardware::DEFAULT_CHIPLET_CAPACITY)))?;
    writeln!(out, "hierarchies")?;
    for (n, s) in &l.hierarchies {
        writeln!(out, "  {n:<14} {s}")?;
    }
    writeln!(out, "policies")?;
    for p in &l.policies {
        let r: Vec<String> = p.residency.iter().map(|(c, lvl)| format!("{c}={lvl}")).collect();
        writeln!(out, "  {:<20} {}", p.name, r.join(" "))?;
    }
    writeln!(out, "experiments")?;
    for (n, c) in &l.experiments {
        writeln!(out, "  {n:<14} {c} points")?;
    }
    Ok(EXIT_OK)
}
