//! Assignment designs: supports, generalized propensity scores and reshaped
//! distributions, plus the RIP weights that link them.

use std::collections::BTreeMap;

use crate::error::{Result, RipwError};
use crate::panel::{enumerate_paths, AssignmentPath};

/// Tolerance on `sum_w pi_i(w) = 1`.
pub const DENSITY_TOLERANCE: f64 = 1e-10;
/// Tolerance on `sum_w Pi(w) = 1`.
pub const RESHAPED_TOLERANCE: f64 = 1e-12;
/// Overlap floor used when clipping estimated propensities.
pub const DEFAULT_OVERLAP_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    Staggered,
    /// Paths with at most `k` treated periods.
    Transient(usize),
    DiD,
    CrossOver,
    General,
}

/// The support `S*` of a reshaped distribution: at least two paths, one of
/// which is neither all-zeros nor all-ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignSupport {
    kind: SupportKind,
    periods: usize,
    paths: Vec<AssignmentPath>,
}

impl DesignSupport {
    pub fn new(kind: SupportKind, mut paths: Vec<AssignmentPath>) -> Result<Self> {
        paths.sort_unstable();
        paths.dedup();
        let Some(first) = paths.first() else {
            return Err(RipwError::InvalidSupport("support is empty".into()));
        };
        let periods = first.len();
        if paths.iter().any(|p| p.len() != periods) {
            return Err(RipwError::InvalidSupport(
                "support paths differ in length".into(),
            ));
        }
        if paths.len() < 2 {
            return Err(RipwError::InvalidSupport(
                "support needs at least two paths".into(),
            ));
        }
        if paths.iter().all(AssignmentPath::is_constant) {
            return Err(RipwError::InvalidSupport(
                "support needs a path other than all-zeros and all-ones".into(),
            ));
        }
        match kind {
            SupportKind::Staggered => {
                if let Some(p) = paths.iter().find(|p| !p.is_staggered()) {
                    return Err(RipwError::NonStaggeredSupport(format!(
                        "path {p} is not of the form 0..01..1"
                    )));
                }
            }
            SupportKind::Transient(k) => {
                if k == 0 || k > periods {
                    return Err(RipwError::InvalidSupport(format!(
                        "transient bound k = {k} outside 1..={periods}"
                    )));
                }
                if let Some(p) = paths.iter().find(|p| p.treated_count() > k) {
                    return Err(RipwError::InvalidSupport(format!(
                        "path {p} has more than {k} treated periods"
                    )));
                }
            }
            SupportKind::DiD => {
                let expected = [AssignmentPath::new(&[0, 0])?, AssignmentPath::new(&[0, 1])?];
                if paths != expected {
                    return Err(RipwError::InvalidSupport(
                        "difference-in-differences support is {00, 01}".into(),
                    ));
                }
            }
            SupportKind::CrossOver => {
                let expected = [AssignmentPath::new(&[0, 1])?, AssignmentPath::new(&[1, 0])?];
                if paths != expected {
                    return Err(RipwError::InvalidSupport(
                        "cross-over support is {01, 10}".into(),
                    ));
                }
            }
            SupportKind::General => {}
        }
        Ok(Self {
            kind,
            periods,
            paths,
        })
    }

    /// A support whose kind is read off its paths.
    pub fn classify(paths: Vec<AssignmentPath>) -> Result<Self> {
        let general = Self::new(SupportKind::General, paths)?;
        let periods = general.periods;
        let kind = if periods == 2 && general.paths == Self::did()?.paths {
            SupportKind::DiD
        } else if periods == 2 && general.paths == Self::crossover()?.paths {
            SupportKind::CrossOver
        } else if general.paths.iter().all(AssignmentPath::is_staggered) {
            SupportKind::Staggered
        } else {
            let k = general.paths.iter().map(|p| p.treated_count()).max().unwrap_or(0);
            match Self::transient(periods, k) {
                Ok(full) if full.paths == general.paths => SupportKind::Transient(k),
                _ => SupportKind::General,
            }
        };
        Ok(Self { kind, ..general })
    }

    pub fn general(paths: Vec<AssignmentPath>) -> Result<Self> {
        Self::new(SupportKind::General, paths)
    }

    pub fn full_staggered(periods: usize) -> Result<Self> {
        staggered_support(periods, None)
    }

    /// `W_{T,k}^tra`: every path with at most `k` treated periods.
    pub fn transient(periods: usize, k: usize) -> Result<Self> {
        let paths = enumerate_paths(periods)?
            .into_iter()
            .filter(|p| p.treated_count() <= k)
            .collect();
        Self::new(SupportKind::Transient(k), paths)
    }

    pub fn did() -> Result<Self> {
        Self::new(
            SupportKind::DiD,
            vec![AssignmentPath::new(&[0, 0])?, AssignmentPath::new(&[0, 1])?],
        )
    }

    pub fn crossover() -> Result<Self> {
        Self::new(
            SupportKind::CrossOver,
            vec![AssignmentPath::new(&[0, 1])?, AssignmentPath::new(&[1, 0])?],
        )
    }

    pub fn kind(&self) -> SupportKind {
        self.kind
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Paths in lexicographic order.
    pub fn paths(&self) -> &[AssignmentPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn contains(&self, path: &AssignmentPath) -> bool {
        self.paths.binary_search(path).is_ok()
    }

    pub fn index_of(&self, path: &AssignmentPath) -> Option<usize> {
        self.paths.binary_search(path).ok()
    }
}

/// Staggered support `{w_(0), w_(j_1), ..., w_(j_r), w_(T)}`.
///
/// `None` selects every adoption count `1..T-1`.
pub fn staggered_support(periods: usize, adopt_counts: Option<&[usize]>) -> Result<DesignSupport> {
    if periods < 2 {
        return Err(RipwError::InvalidAdoptionSet(format!(
            "staggered designs need T >= 2, got {periods}"
        )));
    }
    let counts: Vec<usize> = match adopt_counts {
        None => (1..periods).collect(),
        Some(js) => {
            if js.is_empty() {
                return Err(RipwError::InvalidAdoptionSet(
                    "at least one intermediate adoption count is required".into(),
                ));
            }
            if js.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RipwError::InvalidAdoptionSet(format!(
                    "adoption counts {js:?} must be strictly increasing"
                )));
            }
            if let Some(j) = js.iter().find(|&&j| j == 0 || j >= periods) {
                return Err(RipwError::InvalidAdoptionSet(format!(
                    "adoption count {j} outside 1..={}",
                    periods - 1
                )));
            }
            js.to_vec()
        }
    };
    let mut paths = vec![AssignmentPath::staggered(periods, 0)?];
    for j in counts {
        paths.push(AssignmentPath::staggered(periods, j)?);
    }
    paths.push(AssignmentPath::staggered(periods, periods)?);
    DesignSupport::new(SupportKind::Staggered, paths)
}

/// A probability map over paths of one length.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDistribution {
    periods: usize,
    probs: BTreeMap<AssignmentPath, f64>,
}

impl PathDistribution {
    pub fn new(probs: BTreeMap<AssignmentPath, f64>) -> Result<Self> {
        let Some(first) = probs.keys().next() else {
            return Err(RipwError::InvalidDistribution("no paths".into()));
        };
        let periods = first.len();
        if probs.keys().any(|p| p.len() != periods) {
            return Err(RipwError::InvalidDistribution(
                "paths differ in length".into(),
            ));
        }
        if let Some((p, v)) = probs.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(RipwError::InvalidDistribution(format!(
                "probability {v} for path {p} is negative or non-finite"
            )));
        }
        let total: f64 = probs.values().sum();
        if (total - 1.0).abs() > DENSITY_TOLERANCE {
            return Err(RipwError::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self { periods, probs })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (AssignmentPath, f64)>) -> Result<Self> {
        let mut probs = BTreeMap::new();
        for (p, v) in pairs {
            *probs.entry(p).or_insert(0.0) += v;
        }
        Self::new(probs)
    }

    /// Probabilities aligned with the paths of `support`.
    pub fn on_support(support: &DesignSupport, probs: &[f64]) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(RipwError::DimensionMismatch(format!(
                "{} probabilities for a support of {} paths",
                probs.len(),
                support.len()
            )));
        }
        Self::from_pairs(support.paths().iter().copied().zip(probs.iter().copied()))
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn prob(&self, path: &AssignmentPath) -> f64 {
        self.probs.get(path).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AssignmentPath, &f64)> {
        self.probs.iter()
    }
}

/// Per-unit generalized propensity scores `pi_i(w)`.
///
/// Units pointing at the same profile share a distribution, so shared and
/// stratified designs do not store one map per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDistribution {
    profiles: Vec<PathDistribution>,
    unit_profile: Vec<usize>,
}

impl AssignmentDistribution {
    pub fn shared(n_units: usize, dist: PathDistribution) -> Self {
        Self {
            profiles: vec![dist],
            unit_profile: vec![0; n_units],
        }
    }

    pub fn per_unit(dists: Vec<PathDistribution>) -> Result<Self> {
        let n = dists.len();
        Self::from_profiles(dists, (0..n).collect())
    }

    pub fn from_profiles(profiles: Vec<PathDistribution>, unit_profile: Vec<usize>) -> Result<Self> {
        let Some(first) = profiles.first() else {
            return Err(RipwError::InvalidDistribution("no profiles".into()));
        };
        let periods = first.periods();
        if profiles.iter().any(|p| p.periods() != periods) {
            return Err(RipwError::InvalidDistribution(
                "profiles differ in period count".into(),
            ));
        }
        if let Some(k) = unit_profile.iter().find(|&&k| k >= profiles.len()) {
            return Err(RipwError::InvalidDistribution(format!(
                "unit refers to missing profile {k}"
            )));
        }
        Ok(Self {
            profiles,
            unit_profile,
        })
    }

    pub fn n_units(&self) -> usize {
        self.unit_profile.len()
    }

    pub fn periods(&self) -> usize {
        self.profiles[0].periods()
    }

    pub fn unit(&self, i: usize) -> &PathDistribution {
        &self.profiles[self.unit_profile[i]]
    }

    pub fn prob(&self, i: usize, path: &AssignmentPath) -> f64 {
        self.unit(i).prob(path)
    }

    pub fn profiles(&self) -> &[PathDistribution] {
        &self.profiles
    }

    pub fn unit_profiles(&self) -> &[usize] {
        &self.unit_profile
    }

    /// Restriction to a subset of units, in the given order.
    pub fn subset(&self, units: &[usize]) -> Self {
        Self {
            profiles: self.profiles.clone(),
            unit_profile: units.iter().map(|&i| self.unit_profile[i]).collect(),
        }
    }

    /// Splices per-unit rows from several distributions.
    ///
    /// `parts[k]` covers the units `index[k]`; every unit must appear once.
    pub fn assemble(n_units: usize, parts: Vec<(Vec<usize>, AssignmentDistribution)>) -> Result<Self> {
        let mut profiles = Vec::new();
        let mut unit_profile = vec![usize::MAX; n_units];
        for (units, dist) in parts {
            if units.len() != dist.n_units() {
                return Err(RipwError::DimensionMismatch(
                    "fold distribution does not match its units".into(),
                ));
            }
            let offset = profiles.len();
            profiles.extend(dist.profiles.iter().cloned());
            for (r, &i) in units.iter().enumerate() {
                unit_profile[i] = offset + dist.unit_profile[r];
            }
        }
        if unit_profile.contains(&usize::MAX) {
            return Err(RipwError::DimensionMismatch(
                "some units received no propensity".into(),
            ));
        }
        Self::from_profiles(profiles, unit_profile)
    }

    /// Whether every unit puts at least `floor` on every support path.
    pub fn has_overlap(&self, support: &DesignSupport, floor: f64) -> bool {
        self.profiles
            .iter()
            .enumerate()
            .filter(|(k, _)| self.unit_profile.contains(k))
            .all(|(_, d)| support.paths().iter().all(|p| d.prob(p) >= floor))
    }
}

/// The reshaped distribution `Pi`: positive exactly on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshapedDistribution {
    support: DesignSupport,
    probs: Vec<f64>,
}

impl ReshapedDistribution {
    /// `probs` is aligned with `support.paths()`.
    pub fn new(support: DesignSupport, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(RipwError::DimensionMismatch(format!(
                "{} probabilities for a support of {} paths",
                probs.len(),
                support.len()
            )));
        }
        if let Some((p, v)) = support
            .paths()
            .iter()
            .zip(&probs)
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(RipwError::InvalidDistribution(format!(
                "reshaped probability {v} on support path {p} is not positive"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > RESHAPED_TOLERANCE {
            return Err(RipwError::InvalidDistribution(format!(
                "reshaped probabilities sum to {total}"
            )));
        }
        Ok(Self { support, probs })
    }

    /// From a path map; off-support entries must be zero.
    pub fn from_map(support: DesignSupport, map: &BTreeMap<AssignmentPath, f64>) -> Result<Self> {
        if let Some((p, v)) = map.iter().find(|(p, v)| !support.contains(p) && **v != 0.0) {
            return Err(RipwError::InvalidDistribution(format!(
                "path {p} outside the support has mass {v}"
            )));
        }
        let probs = support
            .paths()
            .iter()
            .map(|p| map.get(p).copied().unwrap_or(0.0))
            .collect();
        Self::new(support, probs)
    }

    pub fn uniform(support: DesignSupport) -> Self {
        let k = support.len();
        Self {
            support,
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn support(&self) -> &DesignSupport {
        &self.support
    }

    pub fn periods(&self) -> usize {
        self.support.periods()
    }

    /// Probabilities aligned with `support().paths()`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, path: &AssignmentPath) -> f64 {
        self.support
            .index_of(path)
            .map(|k| self.probs[k])
            .unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (AssignmentPath, f64)> + '_ {
        self.support.paths().iter().copied().zip(self.probs.iter().copied())
    }

    /// As a propensity profile, for designs where `W ~ Pi`.
    pub fn to_path_distribution(&self) -> PathDistribution {
        PathDistribution {
            periods: self.periods(),
            probs: self.entries().collect(),
        }
    }
}

/// RIP weights `Theta_i = Pi(W_i) / pi_i(W_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RipWeights {
    pub theta: Vec<f64>,
    /// Units whose realized path has no reshaped mass.
    pub zero_weight_units: usize,
}

pub fn rip_weights(
    pi: &AssignmentDistribution,
    reshaped: &ReshapedDistribution,
    realized: &[AssignmentPath],
) -> Result<RipWeights> {
    if pi.n_units() != realized.len() {
        return Err(RipwError::DimensionMismatch(format!(
            "{} propensity rows for {} units",
            pi.n_units(),
            realized.len()
        )));
    }
    if pi.periods() != reshaped.periods() {
        return Err(RipwError::DimensionMismatch(
            "propensity and reshaped distribution differ in T".into(),
        ));
    }
    for (path, _) in reshaped.entries() {
        let reachable = pi
            .unit_profiles()
            .iter()
            .any(|&k| pi.profiles()[k].prob(&path) > 0.0);
        if !reachable {
            return Err(RipwError::AbsoluteContinuityViolated {
                path: path.to_string(),
            });
        }
    }
    let mut theta = Vec::with_capacity(realized.len());
    let mut zero_weight_units = 0;
    for (i, w) in realized.iter().enumerate() {
        let propensity = pi.prob(i, w);
        if propensity <= 0.0 {
            return Err(RipwError::ZeroPropensityRealized {
                unit: i,
                path: w.to_string(),
            });
        }
        let target = reshaped.prob(w);
        if target == 0.0 {
            zero_weight_units += 1;
        }
        theta.push(target / propensity);
    }
    Ok(RipWeights {
        theta,
        zero_weight_units,
    })
}

/// Floors every support probability at `floor` and rescales the remaining
/// mass so each profile still sums to one.
///
/// Floored entries end exactly at `floor`; off-support entries are rescaled
/// with the free mass but never floored.
pub fn clip_propensities(
    pi: &AssignmentDistribution,
    support: &DesignSupport,
    floor: f64,
) -> Result<AssignmentDistribution> {
    if !(floor > 0.0) || floor * support.len() as f64 >= 1.0 {
        return Err(RipwError::FloorTooLarge {
            floor,
            support_size: support.len(),
        });
    }
    let profiles = pi
        .profiles()
        .iter()
        .map(|d| clip_profile(d, support, floor))
        .collect::<Result<Vec<_>>>()?;
    AssignmentDistribution::from_profiles(profiles, pi.unit_profiles().to_vec())
}

fn clip_profile(dist: &PathDistribution, support: &DesignSupport, floor: f64) -> Result<PathDistribution> {
    if support.paths().iter().all(|p| dist.prob(p) >= floor) {
        return Ok(dist.clone());
    }
    let mut entries: BTreeMap<AssignmentPath, f64> = dist.probs.clone();
    for p in support.paths() {
        entries.entry(*p).or_insert(0.0);
    }
    let mut fixed: Vec<AssignmentPath> = Vec::new();
    loop {
        let free_mass: f64 = entries
            .iter()
            .filter(|(p, _)| !fixed.contains(p))
            .map(|(_, v)| v)
            .sum();
        let target = 1.0 - fixed.len() as f64 * floor;
        let scale = target / free_mass;
        let newly: Vec<AssignmentPath> = support
            .paths()
            .iter()
            .filter(|p| !fixed.contains(p) && entries[p] * scale < floor)
            .copied()
            .collect();
        if newly.is_empty() {
            for (p, v) in entries.iter_mut() {
                *v = if fixed.contains(p) { floor } else { *v * scale };
            }
            break;
        }
        fixed.extend(newly);
    }
    PathDistribution::new(entries)
}
