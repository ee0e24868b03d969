//! Compute engine and memory hierarchy descriptions, with the named presets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{self, serde_units};

/// Identifier of a memory level (`scratchpad`, `l2`, `ddr`, `hbs`, `chiplet`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelId(pub String);

impl LevelId {
    pub fn new(s: impl Into<String>) -> Self {
        LevelId(s.into())
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LevelId {
    fn from(s: &str) -> Self {
        LevelId(s.to_string())
    }
}

pub const SCRATCHPAD: &str = "scratchpad";
pub const L2: &str = "l2";
pub const DDR: &str = "ddr";
pub const HBS: &str = "hbs";
pub const CHIPLET: &str = "chiplet";

/// Largest single request served by storage-class levels (HBS, SSD).
///
/// Bigger tiles are split into several transactions, each paying the
/// level latency.
pub const STORAGE_MAX_TRANSFER: u64 = 12 << 20;

pub const DEFAULT_PEAK_FLOPS: f64 = 35e12;
pub const DEFAULT_CHIPLET_CAPACITY: u64 = 96_000_000;
pub const DEFAULT_CHIPLET_LATENCY: f64 = 50e-9;
pub const SSD_LATENCY: f64 = 100e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeSpec {
    /// Aggregate over all processing elements.
    #[serde(with = "serde_units::flops")]
    pub peak_flops: f64,
}

impl Default for ComputeSpec {
    fn default() -> Self {
        ComputeSpec {
            peak_flops: DEFAULT_PEAK_FLOPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub id: LevelId,
    /// `None` means unbounded.
    #[serde(with = "serde_units::capacity")]
    pub capacity: Option<u64>,
    /// Bytes per second.
    #[serde(with = "serde_units::bandwidth")]
    pub bandwidth: f64,
    /// Seconds per transaction.
    #[serde(with = "serde_units::latency")]
    pub latency: f64,
    /// Largest transaction in bytes; `None` moves any tile in one transaction.
    #[serde(
        with = "serde_units::capacity",
        default = "unbounded",
        skip_serializing_if = "Option::is_none"
    )]
    pub max_transfer: Option<u64>,
}

fn unbounded() -> Option<u64> {
    None
}

impl MemoryLevel {
    pub fn new(id: &str, capacity: Option<u64>, bandwidth: f64, latency: f64) -> Self {
        MemoryLevel {
            id: LevelId::new(id),
            capacity,
            bandwidth,
            latency,
            max_transfer: None,
        }
    }

    pub fn with_max_transfer(mut self, bytes: Option<u64>) -> Self {
        self.max_transfer = bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let path = format!("levels.{}", self.id);
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::config(format!("{path}.bandwidth"), "must be positive"));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(Error::config(format!("{path}.latency"), "must be non-negative"));
        }
        if self.capacity == Some(0) {
            return Err(Error::config(format!("{path}.capacity"), "must be positive"));
        }
        if self.max_transfer == Some(0) {
            return Err(Error::config(format!("{path}.max_transfer"), "must be positive"));
        }
        Ok(())
    }

    /// Transactions needed to move `bytes` as one contiguous block.
    pub fn transactions(&self, bytes: u64) -> u64 {
        match self.max_transfer {
            _ if bytes == 0 => 0,
            Some(g) => bytes.div_ceil(g),
            None => 1,
        }
    }

    pub fn fits(&self, bytes: u64) -> bool {
        self.capacity.is_none_or(|c| bytes <= c)
    }
}

/// Ordered memory levels, innermost first, plus an optional chiplet buffer
/// attached beside the second level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hierarchy {
    pub compute: ComputeSpec,
    pub levels: Vec<MemoryLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chiplet: Option<MemoryLevel>,
}

impl Hierarchy {
    /// Builds and validates a hierarchy. Any non-empty level list is
    /// accepted here; [`Hierarchy::validate_standard`] adds the layout rules
    /// enforced on user configuration.
    pub fn new(compute: ComputeSpec, levels: Vec<MemoryLevel>, chiplet: Option<MemoryLevel>) -> Result<Self> {
        let h = Hierarchy {
            compute,
            levels,
            chiplet,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compute.peak_flops.is_finite() && self.compute.peak_flops > 0.0) {
            return Err(Error::config("compute.peak_flops", "must be positive"));
        }
        if self.levels.is_empty() {
            return Err(Error::config("levels", "at least one level is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in self.all_levels() {
            l.validate()?;
            if !seen.insert(l.id.clone()) {
                return Err(Error::config(format!("levels.{}", l.id), "duplicate level id"));
            }
        }
        Ok(())
    }

    /// Scratchpad, L2 and DDR at minimum; HBS, when present, is outermost.
    pub fn validate_standard(&self) -> Result<()> {
        self.validate()?;
        if self.levels.len() < 3 {
            return Err(Error::config(
                "levels",
                "need at least scratchpad, l2 and ddr levels",
            ));
        }
        if let Some(pos) = self.index_of(&LevelId::new(HBS)) {
            if pos + 1 != self.levels.len() {
                return Err(Error::config("levels.hbs", "hbs must be the outermost level"));
            }
        }
        if let Some(c) = &self.chiplet {
            if c.id.as_str() != CHIPLET {
                return Err(Error::config("chiplet.id", "chiplet level must be named `chiplet`"));
            }
        }
        Ok(())
    }

    /// Levels innermost to outermost, then the chiplet.
    pub fn all_levels(&self) -> impl Iterator<Item = &MemoryLevel> {
        self.levels.iter().chain(self.chiplet.iter())
    }

    pub fn level(&self, id: &LevelId) -> Option<&MemoryLevel> {
        self.all_levels().find(|l| &l.id == id)
    }

    pub fn level_mut(&mut self, id: &LevelId) -> Option<&mut MemoryLevel> {
        self.levels
            .iter_mut()
            .chain(self.chiplet.iter_mut())
            .find(|l| &l.id == id)
    }

    /// Position in the ordered list (the chiplet has none).
    pub fn index_of(&self, id: &LevelId) -> Option<usize> {
        self.levels.iter().position(|l| &l.id == id)
    }

    pub fn innermost(&self) -> &MemoryLevel {
        &self.levels[0]
    }

    pub fn is_chiplet(&self, id: &LevelId) -> bool {
        self.chiplet.as_ref().is_some_and(|c| &c.id == id)
    }

    pub fn level_ids(&self) -> Vec<LevelId> {
        self.all_levels().map(|l| l.id.clone()).collect()
    }

    /// Parses the CLI shorthand, e.g. `lpddr6+hbs:512gbps,10us` or
    /// `lpddr6:250ns+chiplet:1tbps`. Scratchpad and L2 defaults are added
    /// unless overridden by `scratchpad:` / `l2:` components.
    pub fn from_shorthand(spec: &str) -> Result<Hierarchy> {
        let mut scratch = scratchpad_default();
        let mut l2 = l2_default();
        let mut ddr: Option<MemoryLevel> = None;
        let mut storage: Option<MemoryLevel> = None;
        let mut chip: Option<MemoryLevel> = None;
        let mut compute = ComputeSpec::default();

        for part in spec.split('+').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, args) = match part.split_once(':') {
                Some((n, a)) => (n.trim(), a),
                None => (part, ""),
            };
            let args = ShorthandArgs::parse(part, args)?;
            let path = format!("hier.{name}");
            match name {
                "compute" => {
                    compute.peak_flops = args
                        .flops
                        .ok_or_else(|| Error::config(&path, "expected e.g. `compute:35tflops`"))?;
                }
                "scratchpad" => args.apply(&mut scratch),
                "l2" => args.apply(&mut l2),
                "lpddr6" | "lpddr6-3x" | "ddr" => {
                    if ddr.is_some() {
                        return Err(Error::config(&path, "more than one DDR level"));
                    }
                    let mut lvl = if name == "ddr" {
                        let bw = args
                            .bandwidth
                            .ok_or_else(|| Error::config(&path, "ddr needs a bandwidth"))?;
                        let lat = args
                            .latency
                            .ok_or_else(|| Error::config(&path, "ddr needs a latency"))?;
                        MemoryLevel::new(DDR, None, bw, lat)
                    } else {
                        level_preset(name)?
                    };
                    args.apply(&mut lvl);
                    ddr = Some(lvl);
                }
                "hbs" | "ssd-pcie-gen5" | "ssd-pcie-gen6" => {
                    if storage.is_some() {
                        return Err(Error::config(&path, "more than one storage level"));
                    }
                    let mut lvl = if name == "hbs" {
                        let bw = args
                            .bandwidth
                            .ok_or_else(|| Error::config(&path, "hbs needs a bandwidth"))?;
                        let lat = args
                            .latency
                            .ok_or_else(|| Error::config(&path, "hbs needs a latency"))?;
                        hbs(bw, lat)
                    } else {
                        level_preset(name)?
                    };
                    args.apply(&mut lvl);
                    storage = Some(lvl);
                }
                "chiplet" => {
                    let bw = args
                        .bandwidth
                        .ok_or_else(|| Error::config(&path, "chiplet needs a bandwidth"))?;
                    let mut lvl = self::chiplet(bw, DEFAULT_CHIPLET_LATENCY);
                    args.apply(&mut lvl);
                    chip = Some(lvl);
                }
                other => {
                    return Err(Error::UnknownPreset {
                        kind: "hierarchy component",
                        name: other.to_string(),
                        valid: SHORTHAND_COMPONENTS.iter().map(|s| s.to_string()).collect(),
                    })
                }
            }
        }
        let ddr = ddr.ok_or_else(|| Error::config("hier", "a DDR level (lpddr6, lpddr6-3x or ddr:...) is required"))?;
        let mut levels = vec![scratch, l2, ddr];
        levels.extend(storage);
        let h = Hierarchy::new(compute, levels, chip)?;
        h.validate_standard()?;
        Ok(h)
    }

    /// Inverse of [`Hierarchy::from_shorthand`] for hierarchies built from it.
    pub fn to_shorthand(&self) -> String {
        let fmt_level = |name: &str, l: &MemoryLevel| {
            let mut s = format!(
                "{name}:{},{},{}",
                units::format_bandwidth(l.bandwidth),
                units::format_latency(l.latency),
                units::format_capacity(l.capacity)
            );
            s.push_str(&format!(",xfer={}", units::format_capacity(l.max_transfer)));
            s
        };
        let mut parts = vec![format!("compute:{}", units::format_flops(self.compute.peak_flops))];
        for l in &self.levels {
            parts.push(fmt_level(l.id.as_str(), l));
        }
        if let Some(c) = &self.chiplet {
            parts.push(fmt_level(CHIPLET, c));
        }
        parts.join("+")
    }
}

const SHORTHAND_COMPONENTS: &[&str] = &[
    "compute",
    "scratchpad",
    "l2",
    "lpddr6",
    "lpddr6-3x",
    "ddr",
    "hbs",
    "ssd-pcie-gen5",
    "ssd-pcie-gen6",
    "chiplet",
];

#[derive(Default)]
struct ShorthandArgs {
    bandwidth: Option<f64>,
    latency: Option<f64>,
    capacity: Option<Option<u64>>,
    max_transfer: Option<Option<u64>>,
    flops: Option<f64>,
}

impl ShorthandArgs {
    fn parse(part: &str, args: &str) -> Result<Self> {
        let mut out = ShorthandArgs::default();
        for raw in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            let lower = raw.to_ascii_lowercase();
            if let Some((key, value)) = lower.split_once('=') {
                match key {
                    "bw" => out.bandwidth = Some(units::parse_bandwidth(value)?),
                    "lat" => out.latency = Some(units::parse_latency(value)?),
                    "cap" => out.capacity = Some(units::parse_capacity(value)?),
                    "xfer" => out.max_transfer = Some(units::parse_capacity(value)?),
                    _ => {
                        return Err(Error::config(
                            format!("hier.{part}"),
                            format!("unknown key `{key}` (bw, lat, cap, xfer)"),
                        ))
                    }
                }
            } else if lower.ends_with("flops") {
                out.flops = Some(units::parse_flops(&lower)?);
            } else if lower.ends_with("bps") {
                out.bandwidth = Some(units::parse_bandwidth(&lower)?);
            } else if lower.ends_with('s') {
                out.latency = Some(units::parse_latency(&lower)?);
            } else if lower.ends_with('b') || lower == "unbounded" {
                out.capacity = Some(units::parse_capacity(&lower)?);
            } else {
                return Err(Error::config(
                    format!("hier.{part}"),
                    format!("`{raw}` has no recognised unit suffix"),
                ));
            }
        }
        Ok(out)
    }

    fn apply(&self, l: &mut MemoryLevel) {
        if let Some(bw) = self.bandwidth {
            l.bandwidth = bw;
        }
        if let Some(lat) = self.latency {
            l.latency = lat;
        }
        if let Some(cap) = self.capacity {
            l.capacity = cap;
        }
        if let Some(x) = self.max_transfer {
            l.max_transfer = x;
        }
    }
}

/// Compute-to-bandwidth ratio of a level, in flops per byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflectionPoint {
    pub level_id: LevelId,
    pub value: f64,
}

pub fn inflection_point(compute: &ComputeSpec, level: &MemoryLevel) -> InflectionPoint {
    InflectionPoint {
        level_id: level.id.clone(),
        value: compute.peak_flops / level.bandwidth,
    }
}

pub fn scratchpad_default() -> MemoryLevel {
    MemoryLevel::new(SCRATCHPAD, Some(4_000_000), 10e12, 20e-9)
}

pub fn l2_default() -> MemoryLevel {
    MemoryLevel::new(L2, Some(32_000_000), 2e12, 50e-9)
}

/// High-bandwidth storage level; capacity is unbounded.
pub fn hbs(bandwidth: f64, latency: f64) -> MemoryLevel {
    MemoryLevel::new(HBS, None, bandwidth, latency).with_max_transfer(Some(STORAGE_MAX_TRANSFER))
}

/// SRAM chiplet buffer beside L2.
pub fn chiplet(bandwidth: f64, latency: f64) -> MemoryLevel {
    MemoryLevel::new(CHIPLET, Some(DEFAULT_CHIPLET_CAPACITY), bandwidth, latency)
}

pub const LEVEL_PRESETS: &[&str] = &[
    "scratchpad",
    "l2",
    "lpddr6",
    "lpddr6-3x",
    "ssd-pcie-gen5",
    "ssd-pcie-gen6",
];

pub const HIERARCHY_PRESETS: &[&str] = &["base", "base-3x"];

pub fn level_preset(name: &str) -> Result<MemoryLevel> {
    Ok(match name {
        "scratchpad" => scratchpad_default(),
        "l2" => l2_default(),
        "lpddr6" => MemoryLevel::new(DDR, None, 173e9, 100e-9),
        "lpddr6-3x" => MemoryLevel::new(DDR, None, 520e9, 100e-9),
        "ssd-pcie-gen5" => hbs(16e9, SSD_LATENCY),
        "ssd-pcie-gen6" => hbs(32e9, SSD_LATENCY),
        _ => {
            return Err(Error::UnknownPreset {
                kind: "memory level",
                name: name.into(),
                valid: LEVEL_PRESETS.iter().map(|s| s.to_string()).collect(),
            })
        }
    })
}

/// A named level or a complete hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    Level(MemoryLevel),
    Hierarchy(Hierarchy),
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "base" => Ok(Preset::Hierarchy(Hierarchy::from_shorthand("lpddr6")?)),
        "base-3x" => Ok(Preset::Hierarchy(Hierarchy::from_shorthand("lpddr6-3x")?)),
        _ => level_preset(name).map(Preset::Level).map_err(|_| Error::UnknownPreset {
            kind: "hardware",
            name: name.into(),
            valid: LEVEL_PRESETS
                .iter()
                .chain(HIERARCHY_PRESETS)
                .chain(["hbs(bw,lat)", "chiplet(bw,lat)"].iter())
                .map(|s| s.to_string())
                .collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inflection_points() {
        let c = ComputeSpec::default();
        let ddr = level_preset("lpddr6").unwrap();
        assert!((inflection_point(&c, &ddr).value - 202.312).abs() < 1e-3);
        let ddr3 = level_preset("lpddr6-3x").unwrap();
        assert!((inflection_point(&c, &ddr3).value - 67.3077).abs() < 1e-3);
        let eq = MemoryLevel::new("x", None, 35e12, 0.0);
        assert_eq!(inflection_point(&c, &eq).value, 1.0);
    }

    #[test]
    fn level_presets() {
        let l = level_preset("lpddr6").unwrap();
        assert_eq!((l.bandwidth, l.latency), (173e9, 100e-9));
        assert_eq!(level_preset("ssd-pcie-gen6").unwrap().bandwidth, 32e9);
        assert_eq!(level_preset("ssd-pcie-gen5").unwrap().bandwidth, 16e9);
        assert_eq!(level_preset("lpddr6-3x").unwrap().bandwidth, 520e9);
        let err = level_preset("hbm3").unwrap_err().to_string();
        assert!(err.contains("lpddr6"), "{err}");
        assert!(matches!(preset("base").unwrap(), Preset::Hierarchy(_)));
        assert!(preset("nope").unwrap_err().to_string().contains("base-3x"));
    }

    #[test]
    fn shorthand_composition() {
        let h = Hierarchy::from_shorthand("lpddr6+hbs:512gbps,10us").unwrap();
        let ids: Vec<_> = h.levels.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, [SCRATCHPAD, L2, DDR, HBS]);
        let hbs = h.level(&LevelId::new(HBS)).unwrap();
        assert_eq!((hbs.bandwidth, hbs.latency, hbs.capacity), (512e9, 1e-5, None));

        let h = Hierarchy::from_shorthand("lpddr6:lat=1us+chiplet:1tbps").unwrap();
        assert_eq!(h.level(&LevelId::new(DDR)).unwrap().latency, 1e-6);
        let c = h.chiplet.as_ref().unwrap();
        assert_eq!((c.bandwidth, c.capacity), (1e12, Some(96_000_000)));

        assert!(Hierarchy::from_shorthand("hbs:512gbps,10us").is_err());
        assert!(Hierarchy::from_shorthand("lpddr6+hbs:512").is_err());
        assert!(Hierarchy::from_shorthand("lpddr6+hbm").is_err());
    }

    #[test]
    fn standard_layout_rules() {
        let mut h = Hierarchy::from_shorthand("lpddr6+hbs:64gbps,2us").unwrap();
        h.levels.swap(2, 3);
        assert!(h.validate_standard().is_err());
        let two = Hierarchy::new(
            ComputeSpec::default(),
            vec![scratchpad_default(), level_preset("lpddr6").unwrap()],
            None,
        )
        .unwrap();
        assert!(two.validate_standard().is_err());
    }

    #[test]
    fn transactions_respect_max_transfer() {
        let h = hbs(1e9, 1e-6);
        assert_eq!(h.transactions(0), 0);
        assert_eq!(h.transactions(1), 1);
        assert_eq!(h.transactions(STORAGE_MAX_TRANSFER), 1);
        assert_eq!(h.transactions(STORAGE_MAX_TRANSFER + 1), 2);
        assert_eq!(l2_default().transactions(1 << 40), 1);
    }

    fn arb_level(id: &'static str) -> impl Strategy<Value = MemoryLevel> {
        (
            proptest::option::of(1u64..1u64 << 50),
            1e6f64..1e13,
            0.0f64..1e-3,
            proptest::option::of(1u64..1u64 << 40),
        )
            .prop_map(move |(cap, bw, lat, x)| MemoryLevel::new(id, cap, bw, lat).with_max_transfer(x))
    }

    proptest! {
        #[test]
        fn inflection_monotone(f in 1e9f64..1e15, b1 in 1e6f64..1e12, b2 in 1e6f64..1e12) {
            prop_assume!(b1 < b2);
            let c = ComputeSpec { peak_flops: f };
            let lo = MemoryLevel::new("a", None, b1, 0.0);
            let hi = MemoryLevel::new("b", None, b2, 0.0);
            prop_assert!(inflection_point(&c, &lo).value > inflection_point(&c, &hi).value);
            let c2 = ComputeSpec { peak_flops: f * 1.5 };
            prop_assert!(inflection_point(&c2, &lo).value > inflection_point(&c, &lo).value);
        }

        #[test]
        fn hierarchy_json_round_trip(
            sp in arb_level(SCRATCHPAD), l2 in arb_level(L2), ddr in arb_level(DDR),
            hb in proptest::option::of(arb_level(HBS)), ch in proptest::option::of(arb_level(CHIPLET)),
            flops in 1e9f64..1e16,
        ) {
            let mut levels = vec![sp, l2, ddr];
            levels.extend(hb);
            let h = Hierarchy::new(ComputeSpec { peak_flops: flops }, levels, ch).unwrap();
            let json = serde_json::to_string(&h).unwrap();
            let back: Hierarchy = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&back, &h);
            for (a, b) in back.all_levels().zip(h.all_levels()) {
                prop_assert_eq!(a.bandwidth.to_bits(), b.bandwidth.to_bits());
                prop_assert_eq!(a.latency.to_bits(), b.latency.to_bits());
            }
            let again = Hierarchy::from_shorthand(&h.to_shorthand()).unwrap();
            prop_assert_eq!(again, h);
        }
    }
}
