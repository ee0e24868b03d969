//! Brute-force tile walk used to validate the closed-form traffic model.
//!
//! The walk replays every loop iteration of a plan and records a transfer
//! whenever an operand's tile differs from the one fetched on the previous
//! iteration. It shares no arithmetic with [`crate::roofline::traffic`].

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hardware::{Hierarchy, LevelId};
use crate::placement::{Route, TensorClass};
use crate::roofline::{movements, LoopOrder, TilingPlan};
use crate::workload::{KernelDesc, KernelKind, OperandSlot};

/// Per-operand element limit for the walk.
pub const MAX_OPERAND_ELEMENTS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    /// Level the data leaves.
    pub level: LevelId,
    pub bytes: u64,
    pub class: TensorClass,
    pub slot: OperandSlot,
    pub transactions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TransferTrace {
    pub entries: Vec<TraceEntry>,
    /// `(bytes, transactions)` per level.
    pub totals: BTreeMap<LevelId, (u64, u64)>,
}

impl TransferTrace {
    fn push(&mut self, e: TraceEntry) {
        let t = self.totals.entry(e.level.clone()).or_default();
        t.0 += e.bytes;
        t.1 += e.transactions;
        self.entries.push(e);
    }

    pub fn bytes(&self, level: &str) -> u64 {
        self.totals.get(&LevelId::from(level)).map_or(0, |t| t.0)
    }

    pub fn transactions(&self, level: &str) -> u64 {
        self.totals.get(&LevelId::from(level)).map_or(0, |t| t.1)
    }

    /// Tab-separated dump, one line per transfer.
    pub fn dump(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "idx\tlevel\tslot\tclass\tbytes\ttransactions")?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{i}\t{}\t{:?}\t{}\t{}\t{}",
                e.level, e.slot, e.class, e.bytes, e.transactions
            )?;
        }
        Ok(())
    }
}

fn extent(total: u64, tile: u64, idx: u64) -> u64 {
    tile.min(total - idx * tile)
}

/// Walks `plan` over `kernel` and records every transfer implied by `route`.
pub fn simulate_plan(kernel: &KernelDesc, plan: &TilingPlan, route: &Route, hierarchy: &Hierarchy) -> Result<TransferTrace> {
    if route.paths.len() != kernel.operands.len() {
        return Err(Error::PlanMismatch(format!(
            "route has {} paths for {} operands",
            route.paths.len(),
            kernel.operands.len()
        )));
    }
    for op in &kernel.operands {
        let elems = op.bytes / kernel.bytes_per_el;
        if elems > MAX_OPERAND_ELEMENTS {
            return Err(Error::DimensionMismatch(format!(
                "{:?} operand of {} has {elems} elements; the tile walk is limited to {MAX_OPERAND_ELEMENTS}",
                op.slot,
                kernel.label()
            )));
        }
    }
    let mut trace = TransferTrace::default();
    for mv in movements(route, hierarchy) {
        let op = &kernel.operands[mv.operand];
        let src = hierarchy
            .level(&mv.src)
            .ok_or_else(|| Error::PlanMismatch(format!("route names unknown level `{}`", mv.src)))?;
        if kernel.kind == KernelKind::Elementwise {
            trace.push(TraceEntry {
                level: mv.src.clone(),
                bytes: op.bytes,
                class: op.class,
                slot: op.slot,
                transactions: src.transactions(op.bytes),
            });
            continue;
        }
        let tile = plan
            .tile_for(&mv.tile_key)
            .ok_or_else(|| Error::PlanMismatch(format!("no tile for level `{}`", mv.tile_key)))?;
        let s = tile.shape;
        let dims = [(kernel.batch, s.tb), (kernel.m, s.tm), (kernel.n, s.tn), (kernel.k, s.tk)];
        if dims.iter().any(|&(d, t)| t == 0 || t > d) {
            return Err(Error::PlanMismatch(format!("tile {s} does not fit {}", kernel.label())));
        }
        let nb = kernel.batch.div_ceil(s.tb);
        let nm = kernel.m.div_ceil(s.tm);
        let nn = kernel.n.div_ceil(s.tn);
        let nk = kernel.k.div_ceil(s.tk);
        let (outer, inner) = match tile.order {
            LoopOrder::Mnk => (nm, nn),
            LoopOrder::Nmk => (nn, nm),
        };
        let mut last: Option<(u64, u64, u64)> = None;
        for b in 0..nb {
            for o in 0..outer {
                for i in 0..inner {
                    let (mi, ni) = match tile.order {
                        LoopOrder::Mnk => (o, i),
                        LoopOrder::Nmk => (i, o),
                    };
                    for ki in 0..nk {
                        let coords = match op.slot {
                            OperandSlot::A => (b, mi, ki),
                            OperandSlot::B => (b, ki, ni),
                            OperandSlot::C => (b, mi, ni),
                        };
                        if last == Some(coords) {
                            continue;
                        }
                        last = Some(coords);
                        let heads = extent(kernel.batch, s.tb, b);
                        let (rows, cols) = match op.slot {
                            OperandSlot::A => (extent(kernel.m, s.tm, mi), extent(kernel.k, s.tk, ki)),
                            OperandSlot::B => (extent(kernel.k, s.tk, ki), extent(kernel.n, s.tn, ni)),
                            OperandSlot::C => (extent(kernel.m, s.tm, mi), extent(kernel.n, s.tn, ni)),
                        };
                        let strip = rows * cols * kernel.bytes_per_el;
                        let transactions = if op.per_head {
                            (0..heads).map(|_| src.transactions(strip)).sum()
                        } else {
                            src.transactions(heads * strip)
                        };
                        trace.push(TraceEntry {
                            level: mv.src.clone(),
                            bytes: heads * strip,
                            class: op.class,
                            slot: op.slot,
                            transactions,
                        });
                    }
                }
            }
        }
    }
    Ok(trace)
}

/// Multiply-accumulate count of the triple loop, two flops each.
pub fn flop_count(kernel: &KernelDesc) -> u64 {
    if kernel.kind != KernelKind::Gemm {
        return 0;
    }
    let mut macs = 0u64;
    for _ in 0..kernel.batch {
        for _ in 0..kernel.m {
            for _ in 0..kernel.n {
                macs += kernel.k;
            }
        }
    }
    2 * macs
}

/// Compares the walk against the closed form; the error names the first
/// level whose totals diverge.
pub fn check_against_analytical(
    kernel: &KernelDesc,
    plan: &TilingPlan,
    route: &Route,
    hierarchy: &Hierarchy,
) -> Result<()> {
    let trace = simulate_plan(kernel, plan, route, hierarchy)?;
    for lvl in hierarchy.all_levels() {
        let a = crate::roofline::traffic(kernel, plan, route, hierarchy, &lvl.id)?;
        let (ob, ot) = trace.totals.get(&lvl.id).copied().unwrap_or_default();
        if (a.bytes, a.transfers) != (ob, ot) {
            return Err(Error::PlanMismatch(format!(
                "{} at `{}`: analytical {} B / {} tx, walk {ob} B / {ot} tx",
                kernel.label(),
                lvl.id,
                a.bytes,
                a.transfers
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardware::{ComputeSpec, MemoryLevel};
    use crate::placement::KernelClass;
    use crate::roofline::{LevelTile, TileShape};

    const ACT: [TensorClass; 3] = [TensorClass::OtherActivations, TensorClass::Weights, TensorClass::OtherActivations];

    fn two_level() -> Hierarchy {
        Hierarchy::new(
            ComputeSpec::default(),
            vec![
                MemoryLevel::new("inner", Some(1 << 20), 1e12, 1e-9),
                MemoryLevel::new("outer", None, 1e11, 1e-7),
            ],
            None,
        )
        .unwrap()
    }

    fn staged(_: &Hierarchy) -> Route {
        let p = vec![LevelId::from("outer"), LevelId::from("inner")];
        Route {
            paths: vec![p.clone(), p.clone(), p],
        }
    }

    fn plan(shape: TileShape, order: LoopOrder) -> TilingPlan {
        TilingPlan {
            tiles: vec![LevelTile {
                dest: LevelId::from("inner"),
                shape,
                order,
            }],
        }
    }

    #[test]
    fn untiled_gemm_moves_each_operand_once() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::MLP1, 1, 8, 8, 8, 2, ACT, false);
        let t = simulate_plan(&k, &plan(TileShape::full(&k), LoopOrder::Mnk), &staged(&h), &h).unwrap();
        assert_eq!(t.bytes("outer"), 3 * 64 * 2);
        assert_eq!(t.transactions("outer"), 3);
    }

    #[test]
    fn halved_tiles_double_streamed_traffic() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::MLP1, 1, 16, 16, 16, 2, ACT, false);
        let s = TileShape { tb: 1, tm: 8, tn: 8, tk: 8 };
        let t = simulate_plan(&k, &plan(s, LoopOrder::Mnk), &staged(&h), &h).unwrap();
        let a: u64 = t
            .entries
            .iter()
            .filter(|e| e.level.as_str() == "outer" && e.slot == OperandSlot::A)
            .map(|e| e.bytes)
            .sum();
        assert_eq!(a, 2 * 16 * 16 * 2);
    }

    #[test]
    fn gemv_weights_cross_once_whatever_the_tiling() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::Projection, 1, 1, 64, 64, 2, ACT, false);
        for (tn, tk) in [(64, 64), (8, 64), (64, 8), (4, 16)] {
            for order in [LoopOrder::Mnk, LoopOrder::Nmk] {
                let s = TileShape { tb: 1, tm: 1, tn, tk };
                let t = simulate_plan(&k, &plan(s, order), &staged(&h), &h).unwrap();
                let w: u64 = t.entries.iter().filter(|e| e.class == TensorClass::Weights && e.level.as_str() == "outer").map(|e| e.bytes).sum();
                assert_eq!(w, 64 * 64 * 2, "tile {s} {order}");
            }
        }
    }

    #[test]
    fn totals_are_sums_of_entries() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::QKt, 3, 5, 7, 9, 2, ACT, true);
        let s = TileShape { tb: 2, tm: 4, tn: 4, tk: 9 };
        let t = simulate_plan(&k, &plan(s, LoopOrder::Nmk), &staged(&h), &h).unwrap();
        for (lvl, &(b, tx)) in &t.totals {
            let es = t.entries.iter().filter(|e| &e.level == lvl);
            assert_eq!(es.clone().map(|e| e.bytes).sum::<u64>(), b);
            assert_eq!(es.map(|e| e.transactions).sum::<u64>(), tx);
        }
        check_against_analytical(&k, &plan(s, LoopOrder::Nmk), &staged(&h), &h).unwrap();
    }

    #[test]
    fn mismatched_plans_are_rejected() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::MLP1, 1, 8, 8, 8, 2, ACT, false);
        let too_big = TileShape { tb: 1, tm: 16, tn: 8, tk: 8 };
        assert!(matches!(
            simulate_plan(&k, &plan(too_big, LoopOrder::Mnk), &staged(&h), &h),
            Err(Error::PlanMismatch(_))
        ));
        let empty = TilingPlan { tiles: vec![] };
        assert!(matches!(simulate_plan(&k, &empty, &staged(&h), &h), Err(Error::PlanMismatch(_))));
        let big = KernelDesc::gemm(KernelClass::MLP1, 1, 128, 128, 128, 2, ACT, false);
        assert!(simulate_plan(&big, &plan(TileShape::full(&big), LoopOrder::Mnk), &staged(&h), &h).is_err());
    }

    #[test]
    fn flop_counts() {
        let one = KernelDesc::gemm(KernelClass::MLP1, 1, 1, 1, 1, 2, ACT, false);
        assert_eq!(flop_count(&one), 2);
        let qkv = KernelDesc::gemm(KernelClass::QKVGen, 1, 1, 15360, 5120, 2, ACT, false);
        assert_eq!(flop_count(&qkv), 2 * 15360 * 5120);
        let att = KernelDesc::gemm(KernelClass::QKt, 40, 1, 201, 128, 2, ACT, true);
        assert_eq!(flop_count(&att), 2 * 40 * 201 * 128);
        assert_eq!(flop_count(&att), att.flops);
    }

    #[test]
    fn dump_has_one_line_per_transfer() {
        let h = two_level();
        let k = KernelDesc::gemm(KernelClass::MLP1, 1, 8, 8, 8, 2, ACT, false);
        let t = simulate_plan(&k, &plan(TileShape::full(&k), LoopOrder::Mnk), &staged(&h), &h).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + t.entries.len());
    }
}
