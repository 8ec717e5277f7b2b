//! JSON design files and reshaped-distribution files.
//!
//! Design file:
//! `{"T": 3, "support": [[0,0,0],[0,0,1],...], "pi": {"mode": "shared", "probs": ...}}`
//! where `probs` is an array aligned with `support` or an object keyed by
//! path strings such as `"011"`. With `"mode": "per_unit"`, `probs` is an
//! array holding one such entry per unit. Probabilities may be numbers or
//! decimal strings. `"pi"` may be omitted when propensities are estimated.
//! An optional `"kind"` (`staggered`, `transient:<k>`, `did`, `crossover`,
//! `general`) overrides classification.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::design::{AssignmentDistribution, DesignSupport, PathDistribution, ReshapedDistribution, SupportKind};
use crate::error::{Result, RipwError};
use crate::panel::AssignmentPath;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignFile {
    pub support: DesignSupport,
    pub pi: Option<DesignPi>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignPi {
    Shared(PathDistribution),
    PerUnit(AssignmentDistribution),
}

fn bad(msg: impl Into<String>) -> RipwError {
    RipwError::InvalidDesignFile(msg.into())
}

fn number(v: &Value, what: &str) -> Result<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    match x {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(bad(format!("{what}: expected a finite number or decimal string, got {v}"))),
    }
}

fn parse_path(v: &Value, periods: usize) -> Result<AssignmentPath> {
    let arr = v
        .as_array()
        .ok_or_else(|| bad(format!("support entry {v} is not an array")))?;
    let bits = arr
        .iter()
        .map(|b| match b.as_u64() {
            Some(0) => Ok(0u8),
            Some(1) => Ok(1u8),
            _ => Err(bad(format!("support entry {v} must contain only 0 and 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if bits.len() != periods {
        return Err(bad(format!("support entry {v} has length {}, T = {periods}", bits.len())));
    }
    AssignmentPath::new(&bits)
}

fn parse_kind(s: &str) -> Result<SupportKind> {
    match s {
        "staggered" => Ok(SupportKind::Staggered),
        "did" => Ok(SupportKind::DiD),
        "crossover" => Ok(SupportKind::CrossOver),
        "general" => Ok(SupportKind::General),
        _ => match s.strip_prefix("transient:").map(str::parse::<usize>) {
            Some(Ok(k)) => Ok(SupportKind::Transient(k)),
            _ => Err(bad(format!("unknown support kind '{s}'"))),
        },
    }
}

/// Path-keyed probabilities from an object `{"011": 0.25, ...}`.
fn path_map(obj: &serde_json::Map<String, Value>, periods: Option<usize>) -> Result<BTreeMap<AssignmentPath, f64>> {
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        let path: AssignmentPath = k.parse().map_err(|_| bad(format!("invalid path key '{k}'")))?;
        if let Some(t) = periods {
            if path.len() != t {
                return Err(bad(format!("path key '{k}' has length {}, T = {t}", path.len())));
            }
        }
        let p = number(v, &format!("probability of {k}"))?;
        if map.insert(path, p).is_some() {
            return Err(bad(format!("duplicate path key '{k}'")));
        }
    }
    Ok(map)
}

fn distribution(v: &Value, support: &DesignSupport, order: &[AssignmentPath]) -> Result<PathDistribution> {
    let map = match v {
        Value::Array(arr) => {
            if arr.len() != order.len() {
                return Err(bad(format!(
                    "{} probabilities for a support of {} paths",
                    arr.len(),
                    order.len()
                )));
            }
            let mut map = BTreeMap::new();
            for (p, x) in order.iter().zip(arr) {
                map.insert(*p, number(x, &format!("probability of {p}"))?);
            }
            map
        }
        Value::Object(obj) => path_map(obj, Some(support.periods()))?,
        other => return Err(bad(format!("probabilities must be an array or object, got {other}"))),
    };
    if let Some((p, _)) = map.iter().find(|(p, v)| !support.contains(p) && **v != 0.0) {
        return Err(bad(format!("path {p} outside the support has positive probability")));
    }
    PathDistribution::new(map)
}

pub fn parse_design(text: &str) -> Result<DesignFile> {
    let root: Value = serde_json::from_str(text)?;
    let periods = root
        .get("T")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("missing integer field \"T\""))? as usize;
    let entries = root
        .get("support")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing array field \"support\""))?;
    // keep file order for aligned probability arrays
    let order = entries
        .iter()
        .map(|e| parse_path(e, periods))
        .collect::<Result<Vec<_>>>()?;
    let support = match root.get("kind") {
        None | Some(Value::Null) => DesignSupport::classify(order.clone())?,
        Some(Value::String(s)) => DesignSupport::new(parse_kind(s)?, order.clone())?,
        Some(other) => return Err(bad(format!("\"kind\" must be a string, got {other}"))),
    };
    if support.len() != order.len() {
        return Err(bad("support lists a path more than once"));
    }
    let pi = match root.get("pi") {
        None | Some(Value::Null) => None,
        Some(pi) => {
            let mode = pi.get("mode").and_then(Value::as_str).unwrap_or("shared");
            let probs = pi.get("probs").ok_or_else(|| bad("missing field \"pi.probs\""))?;
            Some(match mode {
                "shared" => DesignPi::Shared(distribution(probs, &support, &order)?),
                "per_unit" => {
                    let units = probs
                        .as_array()
                        .ok_or_else(|| bad("per_unit probabilities must be an array of units"))?;
                    let dists = units
                        .iter()
                        .map(|u| distribution(u, &support, &order))
                        .collect::<Result<Vec<_>>>()?;
                    DesignPi::PerUnit(AssignmentDistribution::per_unit(dists)?)
                }
                other => return Err(bad(format!("unknown pi mode '{other}'"))),
            })
        }
    };
    Ok(DesignFile { support, pi })
}

pub fn load_design(path: impl AsRef<Path>) -> Result<DesignFile> {
    parse_design(&std::fs::read_to_string(path)?)
}

impl DesignFile {
    /// Propensities for a panel of `n_units`; a shared distribution is
    /// broadcast, a per-unit one must match in length.
    pub fn pi_for(&self, n_units: usize) -> Result<Option<AssignmentDistribution>> {
        match &self.pi {
            None => Ok(None),
            Some(DesignPi::Shared(d)) => Ok(Some(AssignmentDistribution::shared(n_units, d.clone()))),
            Some(DesignPi::PerUnit(pi)) if pi.n_units() == n_units => Ok(Some(pi.clone())),
            Some(DesignPi::PerUnit(pi)) => Err(RipwError::DimensionMismatch(format!(
                "design lists propensities for {} units, panel has {n_units}",
                pi.n_units()
            ))),
        }
    }
}

/// Reads a reshaped distribution from `{"solution": {"011": p, ...}}` or a
/// bare path-keyed object. Its support is the set of paths with positive mass.
pub fn parse_reshaped(text: &str) -> Result<ReshapedDistribution> {
    let root: Value = serde_json::from_str(text)?;
    let obj = match root.get("solution") {
        Some(Value::Object(o)) => o,
        Some(other) => return Err(bad(format!("\"solution\" must be an object, got {other}"))),
        None => root
            .as_object()
            .ok_or_else(|| bad("reshaped file must be a JSON object"))?,
    };
    let map = path_map(obj, None)?;
    let positive: Vec<AssignmentPath> = map.iter().filter(|(_, v)| **v > 0.0).map(|(p, _)| *p).collect();
    if let Some((p, v)) = map.iter().find(|(_, v)| **v < 0.0) {
        return Err(RipwError::InvalidDistribution(format!("path {p} has negative mass {v}")));
    }
    let support = DesignSupport::classify(positive)?;
    ReshapedDistribution::from_map(support, &map)
}

pub fn load_reshaped(path: impl AsRef<Path>) -> Result<ReshapedDistribution> {
    parse_reshaped(&std::fs::read_to_string(path)?)
}
