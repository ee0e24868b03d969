//! Hierarchical roofline timing engine.
//!
//! Every operand is staged from its residency level inward along its
//! route. A tile shape is chosen per *destination* level: data entering
//! level `X` moves in tiles sized so that the double-buffered working set
//! fits `X`. The innermost level feeds the processing elements with its own
//! tile. Traffic is charged to the level the data leaves, and each level's
//! time is `transfers × latency + bytes / bandwidth`. A kernel's time is the
//! maximum of its compute time and all level times; kernels run serially.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{Hierarchy, LevelId, MemoryLevel};
use crate::placement::{route, KernelClass, PlacementPolicy, Route};
use crate::workload::{KernelDesc, KernelGraph, KernelKind, OperandSlot, Phase, PhaseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopOrder {
    /// `for m { for n { for k } }`: output stationary, A reused across n when k is untiled.
    Mnk,
    /// `for n { for m { for k } }`: output stationary, B reused across m when k is untiled.
    Nmk,
}

impl fmt::Display for LoopOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopOrder::Mnk => "mnk",
            LoopOrder::Nmk => "nmk",
        })
    }
}

/// Tile extents along batch (heads), m, n and k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileShape {
    pub tb: u64,
    pub tm: u64,
    pub tn: u64,
    pub tk: u64,
}

impl TileShape {
    pub fn full(k: &KernelDesc) -> Self {
        TileShape {
            tb: k.batch,
            tm: k.m,
            tn: k.n,
            tk: k.k,
        }
    }

    pub fn volume(&self) -> u64 {
        self.tb * self.tm * self.tn * self.tk
    }

    /// Elements of the `slot` operand covered by one full tile.
    pub fn operand_elements(&self, slot: OperandSlot) -> u64 {
        self.tb
            * match slot {
                OperandSlot::A => self.tm * self.tk,
                OperandSlot::B => self.tk * self.tn,
                OperandSlot::C => self.tm * self.tn,
            }
    }
}

impl fmt::Display for TileShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.tb, self.tm, self.tn, self.tk)
    }
}

/// Tiling of the data staged into `dest`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelTile {
    pub dest: LevelId,
    pub shape: TileShape,
    pub order: LoopOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingPlan {
    pub tiles: Vec<LevelTile>,
}

impl TilingPlan {
    pub fn tile_for(&self, dest: &LevelId) -> Option<&LevelTile> {
        self.tiles.iter().find(|t| &t.dest == dest)
    }
}

/// One hop of one operand: data leaves `src` in tiles keyed by `tile_key`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Movement {
    pub operand: usize,
    pub src: LevelId,
    pub tile_key: LevelId,
    /// The hop lands in `tile_key`'s storage (as opposed to feeding compute).
    pub staged: bool,
}

/// All hops implied by a route: one per path edge, plus the innermost
/// level feeding compute.
pub fn movements(route: &Route, hierarchy: &Hierarchy) -> Vec<Movement> {
    let inner = hierarchy.innermost().id.clone();
    let mut out = Vec::new();
    for (i, path) in route.paths.iter().enumerate() {
        for w in path.windows(2) {
            out.push(Movement {
                operand: i,
                src: w[0].clone(),
                tile_key: w[1].clone(),
                staged: true,
            });
        }
        if let Some(last) = path.last() {
            out.push(Movement {
                operand: i,
                src: last.clone(),
                tile_key: inner.clone(),
                staged: false,
            });
        }
    }
    out
}

/// Candidate tiles for one destination level.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGroup {
    pub dest: LevelId,
    /// Levels whose outgoing traffic uses this group's tile.
    pub sources: Vec<LevelId>,
    pub candidates: Vec<LevelTile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilingSpace {
    pub groups: Vec<TileGroup>,
}

impl TilingSpace {
    /// Number of complete plans (product of group sizes).
    pub fn plan_count(&self) -> u128 {
        self.groups.iter().map(|g| g.candidates.len() as u128).product()
    }

    /// Cartesian product of the groups. Only sensible for small spaces.
    pub fn plans(&self) -> Vec<TilingPlan> {
        let mut out = vec![TilingPlan { tiles: Vec::new() }];
        for g in &self.groups {
            let mut next = Vec::with_capacity(out.len() * g.candidates.len());
            for p in &out {
                for c in &g.candidates {
                    let mut q = p.clone();
                    q.tiles.push(c.clone());
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }
}

fn tile_values(extent: u64) -> Vec<u64> {
    let mut v: Vec<u64> = std::iter::successors(Some(1u64), |&x| x.checked_mul(2))
        .take_while(|&x| x < extent)
        .collect();
    v.push(extent);
    v
}

/// Bytes of the double-buffered working set staged into a level.
fn working_set(kernel: &KernelDesc, shape: &TileShape, staged_slots: &[OperandSlot]) -> u64 {
    2 * staged_slots
        .iter()
        .map(|&s| shape.operand_elements(s) * kernel.bytes_per_el)
        .sum::<u64>()
}

fn group_keys(moves: &[Movement]) -> Vec<LevelId> {
    let mut keys: Vec<LevelId> = Vec::new();
    for m in moves {
        if !keys.contains(&m.tile_key) {
            keys.push(m.tile_key.clone());
        }
    }
    keys
}

/// Candidate tilings per destination level.
///
/// Tile extents are powers of two or the full extent. Attention kernels
/// never split a head: the head-dimension axis stays whole and the batch
/// (head) axis is tiled in whole heads. When the whole kernel fits a level
/// the untiled shape is the only candidate.
pub fn enumerate_tilings(kernel: &KernelDesc, hierarchy: &Hierarchy, route: &Route) -> Result<TilingSpace> {
    let moves = movements(route, hierarchy);
    let full = TileShape::full(kernel);
    let mut groups = Vec::new();
    for key in group_keys(&moves) {
        let mut sources: Vec<LevelId> = Vec::new();
        let mut staged: Vec<OperandSlot> = Vec::new();
        for m in moves.iter().filter(|m| m.tile_key == key) {
            if !sources.contains(&m.src) {
                sources.push(m.src.clone());
            }
            if m.staged {
                let slot = kernel.operands[m.operand].slot;
                if !staged.contains(&slot) {
                    staged.push(slot);
                }
            }
        }
        let level = hierarchy
            .level(&key)
            .ok_or_else(|| Error::config("route", format!("unknown level `{key}`")))?;
        let fits = |s: &TileShape| level.fits(working_set(kernel, s, &staged));

        let mut candidates = Vec::new();
        if kernel.kind == KernelKind::Elementwise || fits(&full) {
            candidates.push(LevelTile {
                dest: key.clone(),
                shape: full,
                order: LoopOrder::Mnk,
            });
        } else {
            let fixed_k = kernel.class == KernelClass::QKt;
            let fixed_n = kernel.class == KernelClass::SoftmaxV;
            let tbs = tile_values(kernel.batch);
            let tms = tile_values(kernel.m);
            let tns = if fixed_n { vec![kernel.n] } else { tile_values(kernel.n) };
            let tks = if fixed_k { vec![kernel.k] } else { tile_values(kernel.k) };
            for &tb in &tbs {
                for &tm in &tms {
                    for &tn in &tns {
                        for &tk in &tks {
                            let shape = TileShape { tb, tm, tn, tk };
                            if !fits(&shape) {
                                continue;
                            }
                            for order in [LoopOrder::Mnk, LoopOrder::Nmk] {
                                candidates.push(LevelTile {
                                    dest: key.clone(),
                                    shape,
                                    order,
                                });
                            }
                        }
                    }
                }
            }
            if candidates.is_empty() {
                let minimal = TileShape {
                    tb: 1,
                    tm: 1,
                    tn: if fixed_n { kernel.n } else { 1 },
                    tk: if fixed_k { kernel.k } else { 1 },
                };
                return Err(Error::InfeasibleKernel {
                    kernel: kernel.label(),
                    level: key.to_string(),
                    needed: working_set(kernel, &minimal, &staged),
                    capacity: level.capacity.unwrap_or(u64::MAX),
                });
            }
        }
        groups.push(TileGroup {
            dest: key,
            sources,
            candidates,
        });
    }
    Ok(TilingSpace { groups })
}

/// Bytes and transactions moved across one level's link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub level: LevelId,
    pub bytes: u64,
    pub transfers: u64,
}

/// `(extent, count)` classes of a tiled axis: full tiles and the remainder.
fn axis_classes(extent: u64, tile: u64) -> [(u64, u64); 2] {
    [(tile, extent / tile), (extent % tile, u64::from(!extent.is_multiple_of(tile)))]
}

/// How many times each tile of `slot` is fetched under the loop order.
/// A tile is re-used only while consecutive iterations need the same tile.
fn fetch_multiplicity(slot: OperandSlot, order: LoopOrder, mt: u64, nt: u64, kt: u64) -> u64 {
    match (order, slot) {
        (_, OperandSlot::C) => 1,
        (LoopOrder::Mnk, OperandSlot::A) => {
            if kt == 1 || nt == 1 {
                1
            } else {
                nt
            }
        }
        (LoopOrder::Mnk, OperandSlot::B) => {
            if nt * kt == 1 {
                1
            } else {
                mt
            }
        }
        (LoopOrder::Nmk, OperandSlot::B) => {
            if kt == 1 || mt == 1 {
                1
            } else {
                mt
            }
        }
        (LoopOrder::Nmk, OperandSlot::A) => {
            if mt * kt == 1 {
                1
            } else {
                nt
            }
        }
    }
}

/// Closed-form traffic of one operand hop.
fn movement_traffic(kernel: &KernelDesc, operand: usize, tile: &LevelTile, src: &MemoryLevel) -> (u64, u64) {
    let op = &kernel.operands[operand];
    if kernel.kind == KernelKind::Elementwise {
        return (op.bytes, src.transactions(op.bytes));
    }
    let s = &tile.shape;
    let tiles = |e: u64, t: u64| e.div_ceil(t);
    let (mt, nt, kt) = (tiles(kernel.m, s.tm), tiles(kernel.n, s.tn), tiles(kernel.k, s.tk));
    let mult = fetch_multiplicity(op.slot, tile.order, mt, nt, kt);
    let (rows, cols) = match op.slot {
        OperandSlot::A => ((kernel.m, s.tm), (kernel.k, s.tk)),
        OperandSlot::B => ((kernel.k, s.tk), (kernel.n, s.tn)),
        OperandSlot::C => ((kernel.m, s.tm), (kernel.n, s.tn)),
    };
    let mut tx = 0u64;
    for (hb, bc) in axis_classes(kernel.batch, s.tb) {
        for (r, rc) in axis_classes(rows.0, rows.1) {
            for (c, cc) in axis_classes(cols.0, cols.1) {
                let count = bc * rc * cc;
                if count == 0 {
                    continue;
                }
                let per_tile = if op.per_head {
                    hb * src.transactions(r * c * kernel.bytes_per_el)
                } else {
                    src.transactions(hb * r * c * kernel.bytes_per_el)
                };
                tx += count * per_tile;
            }
        }
    }
    (mult * op.bytes, mult * tx)
}

/// Traffic leaving `level` under `plan`.
pub fn traffic(
    kernel: &KernelDesc,
    plan: &TilingPlan,
    route: &Route,
    hierarchy: &Hierarchy,
    level: &LevelId,
) -> Result<TrafficStats> {
    let src = hierarchy
        .level(level)
        .ok_or_else(|| Error::config("level", format!("unknown level `{level}`")))?;
    let mut bytes = 0;
    let mut transfers = 0;
    for m in movements(route, hierarchy).iter().filter(|m| &m.src == level) {
        let tile = plan
            .tile_for(&m.tile_key)
            .ok_or_else(|| Error::PlanMismatch(format!("no tile for level `{}`", m.tile_key)))?;
        let (b, t) = movement_traffic(kernel, m.operand, tile, src);
        bytes += b;
        transfers += t;
    }
    Ok(TrafficStats {
        level: level.clone(),
        bytes,
        transfers,
    })
}

/// Flops per byte moved at a level; 0 for flop-free kernels.
pub fn arithmetic_intensity(kernel: &KernelDesc, stats: &TrafficStats) -> f64 {
    if kernel.flops == 0 {
        0.0
    } else if stats.bytes == 0 {
        f64::INFINITY
    } else {
        kernel.flops as f64 / stats.bytes as f64
    }
}

/// Latency per transaction plus streaming time; the two never overlap.
pub fn level_time(stats: &TrafficStats, level: &MemoryLevel) -> f64 {
    stats.transfers as f64 * level.latency + stats.bytes as f64 / level.bandwidth
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Level(LevelId),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Compute => f.write_str("compute"),
            Bound::Level(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTiming {
    pub level: LevelId,
    pub bytes: u64,
    pub transfers: u64,
    pub time: f64,
    pub arithmetic_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub kernel: KernelDesc,
    pub plan: TilingPlan,
    /// Levels that move data for this kernel, innermost first.
    pub levels: Vec<LevelTiming>,
    pub compute_time: f64,
    pub total: f64,
    pub bound: Bound,
}

impl KernelTiming {
    pub fn level(&self, id: &str) -> Option<&LevelTiming> {
        self.levels.iter().find(|l| l.level.as_str() == id)
    }
}

/// Evaluates one candidate tile for a group: per-source `(bytes, transfers)`.
fn group_traffic(
    kernel: &KernelDesc,
    moves: &[&Movement],
    tile: &LevelTile,
    sources: &[(&LevelId, &MemoryLevel)],
) -> Vec<(u64, u64)> {
    let mut acc = vec![(0u64, 0u64); sources.len()];
    for m in moves {
        let si = sources.iter().position(|(id, _)| **id == m.src).expect("source listed");
        let (b, t) = movement_traffic(kernel, m.operand, tile, sources[si].1);
        acc[si].0 += b;
        acc[si].1 += t;
    }
    acc
}

/// Times a kernel under the best tiling.
///
/// Each destination level's tile is chosen independently: it minimises the
/// largest time among the levels feeding that destination, then the number
/// of transactions, then prefers the larger tile, then the smaller shape
/// lexicographically. Groups touch disjoint source levels, so the result
/// minimises the overall `max(compute, level times)`.
pub fn kernel_time(kernel: &KernelDesc, hierarchy: &Hierarchy, policy: &PlacementPolicy) -> Result<KernelTiming> {
    let route = route(policy, kernel, hierarchy)?;
    kernel_time_routed(kernel, hierarchy, &route)
}

/// Max source time, transfers, chosen tile and per-source (bytes, transfers).
type Scored<'a> = (f64, u64, &'a LevelTile, Vec<(u64, u64)>);

pub fn kernel_time_routed(kernel: &KernelDesc, hierarchy: &Hierarchy, route: &Route) -> Result<KernelTiming> {
    let space = enumerate_tilings(kernel, hierarchy, route)?;
    let moves = movements(route, hierarchy);
    let mut plan = TilingPlan { tiles: Vec::new() };
    let mut per_level: BTreeMap<LevelId, (u64, u64)> = BTreeMap::new();

    for g in &space.groups {
        let gm: Vec<&Movement> = moves.iter().filter(|m| m.tile_key == g.dest).collect();
        let sources: Vec<(&LevelId, &MemoryLevel)> = g
            .sources
            .iter()
            .map(|id| (id, hierarchy.level(id).expect("routed level exists")))
            .collect();
        let mut best: Option<Scored> = None;
        for cand in &g.candidates {
            let t = group_traffic(kernel, &gm, cand, &sources);
            let worst = t
                .iter()
                .zip(&sources)
                .map(|(&(bytes, transfers), (id, lvl))| {
                    level_time(
                        &TrafficStats {
                            level: (*id).clone(),
                            bytes,
                            transfers,
                        },
                        lvl,
                    )
                })
                .fold(0.0, f64::max);
            let transfers: u64 = t.iter().map(|x| x.1).sum();
            let better = match &best {
                None => true,
                Some((bw, bt, bc, _)) => {
                    (worst, transfers, std::cmp::Reverse(cand.shape.volume()), cand.shape, cand.order)
                        .partial_cmp(&(*bw, *bt, std::cmp::Reverse(bc.shape.volume()), bc.shape, bc.order))
                        == Some(std::cmp::Ordering::Less)
                }
            };
            if better {
                best = Some((worst, transfers, cand, t));
            }
        }
        let (_, _, tile, t) = best.expect("enumerate_tilings never yields an empty group");
        plan.tiles.push(tile.clone());
        for ((id, _), (b, tr)) in sources.iter().zip(t) {
            let e = per_level.entry((*id).clone()).or_default();
            e.0 += b;
            e.1 += tr;
        }
    }

    let compute_time = kernel.flops as f64 / hierarchy.compute.peak_flops;
    let mut total = compute_time;
    let mut bound = Bound::Compute;
    let mut levels = Vec::new();
    for lvl in hierarchy.all_levels() {
        let Some(&(bytes, transfers)) = per_level.get(&lvl.id) else {
            continue;
        };
        let stats = TrafficStats {
            level: lvl.id.clone(),
            bytes,
            transfers,
        };
        let time = level_time(&stats, lvl);
        if time > total {
            total = time;
            bound = Bound::Level(lvl.id.clone());
        }
        levels.push(LevelTiming {
            level: lvl.id.clone(),
            bytes,
            transfers,
            time,
            arithmetic_intensity: arithmetic_intensity(kernel, &stats),
        });
    }
    Ok(KernelTiming {
        kernel: kernel.clone(),
        plan,
        levels,
        compute_time,
        total,
        bound,
    })
}

/// Timing of one step (all layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step_id: usize,
    pub phase: Phase,
    pub context: u64,
    pub time: f64,
    /// Indexed by [`KernelClass::index`].
    pub class_time: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub model: String,
    pub n_layers: u64,
    pub steps: Vec<StepTiming>,
    /// Time spent in kernels bounded by each resource, decode steps only.
    pub decode_bound_time: BTreeMap<Bound, f64>,
    /// Same, over the whole graph.
    pub bound_time: BTreeMap<Bound, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TpsMode {
    #[default]
    DecodeOnly,
    EndToEnd,
}

impl std::str::FromStr for TpsMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decode-only" => Ok(TpsMode::DecodeOnly),
            "end-to-end" => Ok(TpsMode::EndToEnd),
            _ => Err(Error::config("tps_mode", "expected `decode-only` or `end-to-end`")),
        }
    }
}

impl fmt::Display for TpsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TpsMode::DecodeOnly => "decode-only",
            TpsMode::EndToEnd => "end-to-end",
        })
    }
}

impl PerfReport {
    pub fn total_time(&self) -> f64 {
        self.steps.iter().map(|s| s.time).sum()
    }

    pub fn decode_time(&self) -> f64 {
        self.steps.iter().filter(|s| s.phase == Phase::Decode).map(|s| s.time).sum()
    }

    pub fn prefill_time(&self) -> f64 {
        self.steps.iter().filter(|s| s.phase == Phase::Prefill).map(|s| s.time).sum()
    }

    /// Time per kernel class, summed over the selected phase (`None` = all).
    pub fn class_time(&self, phase: Option<Phase>) -> BTreeMap<KernelClass, f64> {
        let mut out = BTreeMap::new();
        for s in self.steps.iter().filter(|s| phase.is_none_or(|p| s.phase == p)) {
            for c in KernelClass::ALL {
                *out.entry(c).or_insert(0.0) += s.class_time[c.index()];
            }
        }
        out
    }

    /// Resource bounding the largest share of decode time.
    pub fn bottleneck(&self) -> Bound {
        plurality(&self.decode_bound_time)
    }
}

pub(crate) fn plurality(m: &BTreeMap<Bound, f64>) -> Bound {
    let mut best: Option<(&Bound, f64)> = None;
    for (b, &t) in m {
        if best.is_none_or(|(_, bt)| t > bt) {
            best = Some((b, t));
        }
    }
    best.map(|(b, _)| b.clone()).unwrap_or(Bound::Compute)
}

/// Distinct kernels of a graph, timed once each.
fn time_unique<'g>(graph: &'g KernelGraph, hierarchy: &Hierarchy, policy: &PlacementPolicy) -> Result<(Vec<KernelTiming>, HashMap<&'g KernelDesc, usize>)> {
    let mut index: HashMap<&KernelDesc, usize> = HashMap::new();
    let mut unique: Vec<(&KernelDesc, usize)> = Vec::new();
    for s in &graph.steps {
        for k in &s.layer_kernels {
            if !index.contains_key(k) {
                index.insert(k, unique.len());
                unique.push((k, s.step_id));
            }
        }
    }
    let timed: Vec<Result<KernelTiming>> = unique
        .par_iter()
        .map(|(k, step)| {
            kernel_time(k, hierarchy, policy).map_err(|e| Error::InKernel {
                step: *step,
                class: k.label(),
                source: Box::new(e),
            })
        })
        .collect();
    let timed = timed.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((timed, index))
}

/// Times a whole graph; kernels execute one after another.
pub fn graph_time(graph: &KernelGraph, hierarchy: &Hierarchy, policy: &PlacementPolicy) -> Result<PerfReport> {
    policy.check_against(hierarchy)?;
    let (timed, index) = time_unique(graph, hierarchy, policy)?;
    let layers = graph.n_layers as f64;
    let mut steps = Vec::with_capacity(graph.steps.len());
    let mut decode_bound_time: BTreeMap<Bound, f64> = BTreeMap::new();
    let mut bound_time: BTreeMap<Bound, f64> = BTreeMap::new();
    for s in &graph.steps {
        let mut class_time = [0.0; 7];
        let mut time = 0.0;
        for k in &s.layer_kernels {
            let kt = &timed[index[k]];
            let t = kt.total * layers;
            time += t;
            class_time[k.class.index()] += t;
            *bound_time.entry(kt.bound.clone()).or_insert(0.0) += t;
            if s.phase == Phase::Decode {
                *decode_bound_time.entry(kt.bound.clone()).or_insert(0.0) += t;
            }
        }
        steps.push(StepTiming {
            step_id: s.step_id,
            phase: s.phase,
            context: s.context,
            time,
            class_time,
        });
    }
    Ok(PerfReport {
        model: graph.model.clone(),
        n_layers: graph.n_layers,
        steps,
        decode_bound_time,
        bound_time,
    })
}

/// Tokens per second.
pub fn tps(report: &PerfReport, phase: &PhaseSpec, mode: TpsMode) -> f64 {
    let denom = match mode {
        TpsMode::DecodeOnly => report.decode_time(),
        TpsMode::EndToEnd => report.total_time(),
    };
    phase.decode_len as f64 / denom
}

/// Writes one tab-separated record per kernel instance.
pub fn timing_dump(
    graph: &KernelGraph,
    hierarchy: &Hierarchy,
    policy: &PlacementPolicy,
    mut out: impl Write,
) -> Result<()> {
    let (timed, index) = time_unique(graph, hierarchy, policy)?;
    writeln!(out, "step\tlayer\tclass\tdims\ttiles\tlevels\tcompute_s\ttotal_s\tbound")?;
    for (step, layer, k) in graph.entries() {
        let t = &timed[index[k]];
        let tiles = t
            .plan
            .tiles
            .iter()
            .map(|lt| format!("{}={}/{}", lt.dest, lt.shape, lt.order))
            .collect::<Vec<_>>()
            .join(",");
        let levels = t
            .levels
            .iter()
            .map(|l| format!("{}:{}B/{}tx/{:.6e}s", l.level, l.bytes, l.transfers, l.time))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            out,
            "{step}\t{layer}\t{}\t{}x{}x{}x{}\t{tiles}\t{levels}\t{:.6e}\t{:.6e}\t{}",
            k.class, k.batch, k.m, k.n, k.k, t.compute_time, t.total, t.bound
        )?;
    }
    Ok(())
}
