//! Unit-suffixed quantities used in configuration files and CLI shorthand.
//!
//! All units are decimal. Bandwidth suffixes denote **bytes** per second
//! (`gbps` = 10^9 B/s). Bare numbers are rejected everywhere a physical
//! quantity is expected.

use crate::error::{Error, Result};

const BANDWIDTH_UNITS: &[(&str, f64)] = &[
    ("tbps", 1e12),
    ("gbps", 1e9),
    ("mbps", 1e6),
    ("kbps", 1e3),
    ("bps", 1.0),
];

// Sub-second units are applied by division so that e.g. `10us` is the
// correctly rounded value of 1e-5.
const LATENCY_UNITS: &[(&str, f64)] = &[
    ("ms", 1e3),
    ("us", 1e6),
    ("ns", 1e9),
    ("ps", 1e12),
    ("s", 1.0),
];

const FLOPS_UNITS: &[(&str, f64)] = &[
    ("pflops", 1e15),
    ("tflops", 1e12),
    ("gflops", 1e9),
    ("flops", 1.0),
];

const CAPACITY_UNITS: &[(&str, f64)] = &[
    ("tb", 1e12),
    ("gb", 1e9),
    ("mb", 1e6),
    ("kb", 1e3),
    ("b", 1.0),
];

fn split(
    what: &'static str,
    input: &str,
    units: &[(&'static str, f64)],
) -> Result<(f64, &'static str, f64)> {
    let s = input.trim().to_ascii_lowercase();
    let err = |reason: &str| Error::Unit {
        what,
        input: input.to_string(),
        reason: reason.to_string(),
    };
    // Units are listed so that no suffix is shadowed by a shorter one
    // appearing earlier (e.g. `ms` before `s`).
    for &(suffix, scale) in units {
        if let Some(num) = s.strip_suffix(suffix) {
            let num = num.trim();
            if num.is_empty() {
                return Err(err("missing number"));
            }
            let v: f64 = num.parse().map_err(|_| err("malformed number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(err("must be a finite non-negative number"));
            }
            return Ok((v, suffix, scale));
        }
    }
    let names: Vec<&str> = units.iter().map(|u| u.0).collect();
    Err(err(&format!(
        "missing unit suffix (expected one of {})",
        names.join(", ")
    )))
}

/// Parses a bandwidth such as `173gbps` into bytes per second.
pub fn parse_bandwidth(input: &str) -> Result<f64> {
    let (v, _, scale) = split("bandwidth", input, BANDWIDTH_UNITS)?;
    let bw = v * scale;
    if bw <= 0.0 {
        return Err(Error::Unit {
            what: "bandwidth",
            input: input.to_string(),
            reason: "must be positive".into(),
        });
    }
    Ok(bw)
}

/// Parses a latency such as `100ns` or `10us` into seconds.
pub fn parse_latency(input: &str) -> Result<f64> {
    let (v, _, scale) = split("latency", input, LATENCY_UNITS)?;
    Ok(v / scale)
}

/// Parses a compute throughput such as `35tflops` into operations/second.
pub fn parse_flops(input: &str) -> Result<f64> {
    let (v, _, scale) = split("compute throughput", input, FLOPS_UNITS)?;
    let f = v * scale;
    if f <= 0.0 {
        return Err(Error::Unit {
            what: "compute throughput",
            input: input.to_string(),
            reason: "must be positive".into(),
        });
    }
    Ok(f)
}

pub fn format_flops(f: f64) -> String {
    format_readable(f, FLOPS_UNITS, "flops", |s| parse_flops(s).ok())
}

/// Parses a capacity such as `32mb` into bytes. `unbounded` yields `None`.
pub fn parse_capacity(input: &str) -> Result<Option<u64>> {
    let t = input.trim().to_ascii_lowercase();
    if t == "unbounded" || t == "inf" {
        return Ok(None);
    }
    let err = |reason: &str| Error::Unit {
        what: "capacity",
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let (v, suffix, scale) = split("capacity", input, CAPACITY_UNITS)?;
    // Integral mantissas go through u64 so large capacities stay exact.
    let num = t.strip_suffix(suffix).unwrap_or_default().trim();
    if let Ok(whole) = num.parse::<u64>() {
        return match whole.checked_mul(scale as u64) {
            Some(0) => Err(err("must be positive")),
            Some(bytes) => Ok(Some(bytes)),
            None => Err(err("overflows 64 bits")),
        };
    }
    let bytes = v * scale;
    if bytes.fract() != 0.0 || bytes < 1.0 || bytes >= u64::MAX as f64 {
        return Err(err("must be a positive whole number of bytes"));
    }
    Ok(Some(bytes as u64))
}

/// Formats bytes/s with the largest unit that parses back bit-identically.
pub fn format_bandwidth(bw: f64) -> String {
    format_readable(bw, BANDWIDTH_UNITS, "bps", |s| parse_bandwidth(s).ok())
}

/// Picks the unit giving a mantissa in `[1, 1000)` when that parses back
/// bit-exactly, else the first unit that does.
fn format_readable(v: f64, units: &[(&str, f64)], base: &str, parse: impl Fn(&str) -> Option<f64>) -> String {
    let exact = |suffix: &str, scale: f64| {
        let s = format!("{}{}", v / scale, suffix);
        parse(&s).is_some_and(|x| x.to_bits() == v.to_bits()).then_some(s)
    };
    let readable = units.iter().filter(|u| (1.0..1000.0).contains(&(v / u.1)));
    readable
        .chain(units.iter())
        .find_map(|&(suffix, scale)| exact(suffix, scale))
        .unwrap_or_else(|| format!("{v}{base}"))
}

/// Formats seconds with the most readable unit that parses back exactly.
pub fn format_latency(lat: f64) -> String {
    if lat == 0.0 {
        return "0ns".into();
    }
    // Prefer the unit giving a mantissa in [1, 1000).
    let mut ordered: Vec<&(&str, f64)> = LATENCY_UNITS.iter().collect();
    ordered.sort_by(|a, b| {
        let score = |u: &(&str, f64)| {
            let m = lat * u.1;
            if (1.0..1000.0).contains(&m) {
                0
            } else {
                1
            }
        };
        score(a).cmp(&score(b))
    });
    for &&(suffix, scale) in &ordered {
        let s = format!("{}{}", lat * scale, suffix);
        if parse_latency(&s).is_ok_and(|x| x.to_bits() == lat.to_bits()) {
            return s;
        }
    }
    format!("{lat}s")
}

pub fn format_capacity(cap: Option<u64>) -> String {
    let Some(bytes) = cap else {
        return "unbounded".into();
    };
    for &(suffix, scale) in CAPACITY_UNITS {
        let scale = scale as u64;
        if bytes % scale == 0 {
            return format!("{}{}", bytes / scale, suffix);
        }
    }
    format!("{bytes}b")
}

/// Serde adapters storing quantities as unit-suffixed strings.
pub mod serde_units {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub mod bandwidth {
        use super::*;
        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&crate::units::format_bandwidth(*v))
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            let s = String::deserialize(d)?;
            crate::units::parse_bandwidth(&s).map_err(D::Error::custom)
        }
    }

    pub mod latency {
        use super::*;
        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&crate::units::format_latency(*v))
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            let s = String::deserialize(d)?;
            crate::units::parse_latency(&s).map_err(D::Error::custom)
        }
    }

    pub mod flops {
        use super::*;
        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&crate::units::format_flops(*v))
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            let s = String::deserialize(d)?;
            crate::units::parse_flops(&s).map_err(D::Error::custom)
        }
    }

    pub mod capacity {
        use super::*;
        pub fn serialize<S: Serializer>(v: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&crate::units::format_capacity(*v))
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            let s = String::deserialize(d)?;
            crate::units::parse_capacity(&s).map_err(D::Error::custom)
        }
    }
}
