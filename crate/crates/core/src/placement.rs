//! Tensor residency policies and operand routing through the hierarchy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hardware::{Hierarchy, LevelId, CHIPLET, DDR, HBS};
use crate::workload::{self, KernelDesc, KernelKind, ModelSpec, PhaseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorClass {
    Weights,
    Q,
    K,
    V,
    #[serde(rename = "kv-cache")]
    KVCache,
    /// R, Z and other attention intermediates.
    AttnActivations,
    /// X, O and the MLP intermediates.
    OtherActivations,
}

impl TensorClass {
    pub const ALL: [TensorClass; 7] = [
        TensorClass::Weights,
        TensorClass::Q,
        TensorClass::K,
        TensorClass::V,
        TensorClass::KVCache,
        TensorClass::AttnActivations,
        TensorClass::OtherActivations,
    ];

    fn attention_side(self) -> bool {
        matches!(
            self,
            TensorClass::Q | TensorClass::K | TensorClass::V | TensorClass::KVCache | TensorClass::AttnActivations
        )
    }
}

impl fmt::Display for TensorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelClass {
    QKVGen,
    QKt,
    SoftmaxV,
    Projection,
    MLP1,
    MLP2,
    Elementwise,
}

impl KernelClass {
    pub const ALL: [KernelClass; 7] = [
        KernelClass::QKVGen,
        KernelClass::QKt,
        KernelClass::SoftmaxV,
        KernelClass::Projection,
        KernelClass::MLP1,
        KernelClass::MLP2,
        KernelClass::Elementwise,
    ];

    pub fn is_gemm(self) -> bool {
        self != KernelClass::Elementwise
    }

    pub fn is_attention(self) -> bool {
        matches!(self, KernelClass::QKt | KernelClass::SoftmaxV)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for KernelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub const POLICY_NAMES: &[&str] = &[
    "all-in-hbs",
    "qkv-in-ddr",
    "qkv-in-ddr-all-act",
    "chiplet-qkv",
    "baseline-ddr",
];

/// Residency level for every tensor class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementPolicy {
    pub name: String,
    pub residency: BTreeMap<TensorClass, LevelId>,
}

impl PlacementPolicy {
    /// Built-in policies.
    ///
    /// `qkv-in-ddr` pins Q, K, V, the KV cache and attention intermediates
    /// to DDR; `qkv-in-ddr-all-act` also pins the remaining activations.
    pub fn named(name: &str) -> Result<Self> {
        let split = |attn: &str, rest: &str, all_act: bool| {
            TensorClass::ALL
                .iter()
                .map(|&c| {
                    let to_attn = c.attention_side() || (all_act && c == TensorClass::OtherActivations);
                    (c, LevelId::new(if to_attn { attn } else { rest }))
                })
                .collect::<BTreeMap<_, _>>()
        };
        let residency = match name {
            "all-in-hbs" => split(HBS, HBS, false),
            "qkv-in-ddr" => split(DDR, HBS, false),
            "qkv-in-ddr-all-act" => split(DDR, HBS, true),
            "chiplet-qkv" => split(CHIPLET, DDR, false),
            "baseline-ddr" => split(DDR, DDR, false),
            _ => {
                return Err(Error::UnknownPreset {
                    kind: "policy",
                    name: name.into(),
                    valid: POLICY_NAMES.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        Ok(PlacementPolicy {
            name: name.into(),
            residency,
        })
    }

    /// Explicit map; must cover every tensor class.
    pub fn custom(name: &str, residency: BTreeMap<TensorClass, LevelId>) -> Result<Self> {
        let p = PlacementPolicy {
            name: name.into(),
            residency,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for c in TensorClass::ALL {
            if !self.residency.contains_key(&c) {
                return Err(Error::config(
                    format!("policy.residency.{c}"),
                    "missing tensor class",
                ));
            }
        }
        Ok(())
    }

    /// Checks that every referenced level exists in `hierarchy`.
    pub fn check_against(&self, hierarchy: &Hierarchy) -> Result<()> {
        for c in TensorClass::ALL {
            residency(self, hierarchy, c)?;
        }
        Ok(())
    }
}

/// Outermost level at which `tclass` is held.
pub fn residency(policy: &PlacementPolicy, hierarchy: &Hierarchy, tclass: TensorClass) -> Result<LevelId> {
    let id = policy.residency.get(&tclass).ok_or_else(|| {
        Error::config(format!("policy.residency.{tclass}"), "missing tensor class")
    })?;
    if hierarchy.level(id).is_none() {
        return Err(Error::config(
            format!("policy.{}.{tclass}", policy.name),
            format!(
                "level `{id}` is not in the hierarchy (have: {})",
                hierarchy
                    .level_ids()
                    .iter()
                    .map(|l| l.0.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ));
    }
    Ok(id.clone())
}

/// Staging path of each operand, aligned with `KernelDesc::operands`.
/// Each path starts at the residency level and ends at the innermost level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub paths: Vec<Vec<LevelId>>,
}

pub fn route(policy: &PlacementPolicy, kernel: &KernelDesc, hierarchy: &Hierarchy) -> Result<Route> {
    let inner = hierarchy.innermost().id.clone();
    let paths = kernel
        .operands
        .iter()
        .map(|op| {
            let res = residency(policy, hierarchy, op.class)?;
            if kernel.kind == KernelKind::Elementwise {
                // Streamed in place at the residency level.
                return Ok(vec![res]);
            }
            if hierarchy.is_chiplet(&res) {
                return Ok(vec![res, inner.clone()]);
            }
            let top = hierarchy.index_of(&res).expect("residency checked");
            Ok((0..=top).rev().map(|i| hierarchy.levels[i].id.clone()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Route { paths })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOccupancy {
    pub level: LevelId,
    pub required: u64,
    pub capacity: Option<u64>,
}

impl LevelOccupancy {
    pub fn fits(&self) -> bool {
        self.capacity.is_none_or(|c| self.required <= c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub occupancy: Vec<LevelOccupancy>,
}

impl CapacityReport {
    pub fn is_ok(&self) -> bool {
        self.occupancy.iter().all(LevelOccupancy::fits)
    }

    pub fn violations(&self) -> impl Iterator<Item = &LevelOccupancy> {
        self.occupancy.iter().filter(|o| !o.fits())
    }

    pub fn describe_violations(&self) -> String {
        self.violations()
            .map(|o| {
                format!(
                    "{} needs {} bytes but holds {}",
                    o.level,
                    o.required,
                    o.capacity.map_or("unbounded".to_string(), |c| c.to_string())
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Bytes each level must hold: weights, the max-context KV cache and the
/// peak live activations of the classes resident there.
pub fn capacity_check(
    policy: &PlacementPolicy,
    model: &ModelSpec,
    phase: &PhaseSpec,
    hierarchy: &Hierarchy,
) -> Result<CapacityReport> {
    let mut need: BTreeMap<LevelId, u64> = BTreeMap::new();
    for c in TensorClass::ALL {
        let lvl = residency(policy, hierarchy, c)?;
        let bytes = match c {
            TensorClass::Weights => workload::weight_bytes(model),
            TensorClass::KVCache => workload::kv_cache_bytes(model, phase.final_context()),
            other => workload::activation_bytes(model, phase, other),
        };
        *need.entry(lvl).or_default() += bytes;
    }
    let occupancy = hierarchy
        .all_levels()
        .filter_map(|l| {
            need.get(&l.id).map(|&required| LevelOccupancy {
                level: l.id.clone(),
                required,
                capacity: l.capacity,
            })
        })
        .collect();
    Ok(CapacityReport { occupancy })
}
