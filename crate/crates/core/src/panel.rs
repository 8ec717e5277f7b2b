//! Panel data model: assignment paths, balanced panels, time weights and the
//! centering algebra used by every estimator in the crate.
//!
//! A panel holds `n` units observed over `T` periods. Outcomes are an
//! `n x T` matrix; assignments are stored per unit as an [`AssignmentPath`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Result, RipwError};

/// Hard cap on the number of periods; path enumeration is `2^T`.
pub const MAX_PERIODS: usize = 20;

/// A binary treatment path `(w_1, ..., w_T)`.
///
/// Stored as a bit mask with period 1 in the most significant position, so
/// that the derived ordering is lexicographic for paths of equal length.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssignmentPath {
    len: u8,
    bits: u32,
}

impl AssignmentPath {
    pub fn new(values: &[u8]) -> Result<Self> {
        check_periods(values.len())?;
        let mut bits = 0u32;
        for (t, &v) in values.iter().enumerate() {
            match v {
                0 => {}
                1 => bits |= 1 << (values.len() - 1 - t),
                other => {
                    return Err(RipwError::InvalidArgument(format!(
                        "path entry {other} at position {t} is not binary"
                    )))
                }
            }
        }
        Ok(Self {
            len: values.len() as u8,
            bits,
        })
    }

    /// Builds a path from its mask; bit `T-1` is period 1.
    pub fn from_mask(periods: usize, mask: u32) -> Result<Self> {
        check_periods(periods)?;
        if periods < 32 && mask >> periods != 0 {
            return Err(RipwError::InvalidArgument(format!(
                "mask {mask:#b} has bits beyond {periods} periods"
            )));
        }
        Ok(Self {
            len: periods as u8,
            bits: mask,
        })
    }

    pub fn zeros(periods: usize) -> Result<Self> {
        Self::from_mask(periods, 0)
    }

    pub fn ones(periods: usize) -> Result<Self> {
        Self::from_mask(periods, (1u32 << periods) - 1)
    }

    /// Staggered path `w_(j)`: untreated for `T - j` periods, then treated.
    pub fn staggered(periods: usize, treated: usize) -> Result<Self> {
        if treated > periods {
            return Err(RipwError::InvalidArgument(format!(
                "{treated} treated periods exceeds {periods}"
            )));
        }
        Self::from_mask(periods, (1u32 << treated) - 1)
    }

    /// Path treated only in period `t` (1-based).
    pub fn single(periods: usize, t: usize) -> Result<Self> {
        if t == 0 || t > periods {
            return Err(RipwError::InvalidArgument(format!(
                "period {t} outside 1..={periods}"
            )));
        }
        Self::from_mask(periods, 1 << (periods - t))
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mask(&self) -> u32 {
        self.bits
    }

    /// Treatment in period `t` (0-based).
    pub fn get(&self, t: usize) -> bool {
        debug_assert!(t < self.len());
        (self.bits >> (self.len() - 1 - t)) & 1 == 1
    }

    pub fn value(&self, t: usize) -> f64 {
        if self.get(t) {
            1.0
        } else {
            0.0
        }
    }

    pub fn treated_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_constant(&self) -> bool {
        self.bits == 0 || self.treated_count() == self.len()
    }

    /// True for paths of the form `0..01..1`.
    pub fn is_staggered(&self) -> bool {
        let j = self.treated_count();
        self.bits == (1u32 << j) - 1
    }

    /// First treated period (1-based), if any.
    pub fn adoption_period(&self) -> Option<usize> {
        (0..self.len()).find(|&t| self.get(t)).map(|t| t + 1)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t)).collect()
    }

    /// `J w`: the path with its time mean removed.
    pub fn centered(&self) -> Vec<f64> {
        let mean = self.treated_count() as f64 / self.len() as f64;
        (0..self.len()).map(|t| self.value(t) - mean).collect()
    }
}

impl fmt::Display for AssignmentPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in 0..self.len() {
            f.write_str(if self.get(t) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for AssignmentPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AssignmentPath({self})")
    }
}

impl FromStr for AssignmentPath {
    type Err = RipwError;

    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                _ => Err(RipwError::InvalidArgument(format!(
                    "path `{s}` must contain only 0 and 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&values)
    }
}

fn check_periods(periods: usize) -> Result<()> {
    if periods > MAX_PERIODS {
        return Err(RipwError::DimensionTooLarge {
            periods,
            max: MAX_PERIODS,
        });
    }
    if periods == 0 {
        return Err(RipwError::InvalidArgument("paths need at least one period".into()));
    }
    Ok(())
}

/// All `2^T` paths in lexicographic order.
pub fn enumerate_paths(periods: usize) -> Result<Vec<AssignmentPath>> {
    check_periods(periods)?;
    (0..1u32 << periods)
        .map(|mask| AssignmentPath::from_mask(periods, mask))
        .collect()
}

/// Nonnegative time weights `xi` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWeights(Vec<f64>);

impl TimeWeights {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(RipwError::InvalidTimeWeights("no periods".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(RipwError::InvalidTimeWeights(format!(
                "weight {w} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(RipwError::InvalidTimeWeights(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    /// `1/T` in every period.
    pub fn equal(periods: usize) -> Self {
        Self(vec![1.0 / periods as f64; periods])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_equal(&self, tol: f64) -> bool {
        let target = 1.0 / self.0.len() as f64;
        self.0.iter().all(|w| (w - target).abs() <= tol)
    }
}

/// `J = I - 11'/T`, applied implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenteringOperator {
    dim: usize,
}

impl CenteringOperator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "centering dimension mismatch");
        let mean = v.iter().sum::<f64>() / self.dim as f64;
        v.iter().map(|x| x - mean).collect()
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        let t = self.dim as f64;
        DMatrix::from_fn(self.dim, self.dim, |r, c| {
            if r == c {
                1.0 - 1.0 / t
            } else {
                -1.0 / t
            }
        })
    }
}

/// Removes row means and column means (adding back the grand mean).
pub fn center_doubly(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return m.clone();
    }
    let row_means: Vec<f64> = (0..rows).map(|i| m.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..cols).map(|t| m.column(t).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / rows as f64;
    DMatrix::from_fn(rows, cols, |i, t| {
        m[(i, t)] - row_means[i] - col_means[t] + grand
    })
}

/// A balanced panel of `n` units over `T >= 2` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_labels: Vec<String>,
    period_labels: Vec<i64>,
    outcomes: DMatrix<f64>,
    paths: Vec<AssignmentPath>,
    covariates: Vec<DMatrix<f64>>,
}

impl PanelDataset {
    pub fn new(outcomes: DMatrix<f64>, paths: Vec<AssignmentPath>) -> Result<Self> {
        let (n, periods) = outcomes.shape();
        if n == 0 {
            return Err(RipwError::InvalidArgument("panel has no units".into()));
        }
        if periods < 2 {
            return Err(RipwError::InvalidArgument(format!(
                "panel needs at least 2 periods, got {periods}"
            )));
        }
        check_periods(periods)?;
        if paths.len() != n {
            return Err(RipwError::DimensionMismatch(format!(
                "{} assignment paths for {n} units",
                paths.len()
            )));
        }
        if let Some(p) = paths.iter().find(|p| p.len() != periods) {
            return Err(RipwError::DimensionMismatch(format!(
                "path {p} does not have {periods} periods"
            )));
        }
        if let Some(v) = outcomes.iter().find(|v| !v.is_finite()) {
            return Err(RipwError::InvalidArgument(format!(
                "outcome {v} is not finite"
            )));
        }
        Ok(Self {
            unit_labels: (1..=n).map(|i| i.to_string()).collect(),
            period_labels: (1..=periods as i64).collect(),
            outcomes,
            paths,
            covariates: Vec::new(),
        })
    }

    /// Builds a panel from an `n x T` 0/1 matrix.
    pub fn from_matrices(outcomes: DMatrix<f64>, treated: &DMatrix<f64>) -> Result<Self> {
        if treated.shape() != outcomes.shape() {
            return Err(RipwError::DimensionMismatch(
                "outcome and treatment matrices differ in shape".into(),
            ));
        }
        let paths = (0..treated.nrows())
            .map(|i| {
                let row: Vec<u8> = treated
                    .row(i)
                    .iter()
                    .map(|&v| match v {
                        v if v == 0.0 => Ok(0),
                        v if v == 1.0 => Ok(1),
                        v => Err(RipwError::NonBinaryTreatment {
                            unit: (i + 1).to_string(),
                            period: 0,
                            value: v.to_string(),
                        }),
                    })
                    .collect::<Result<_>>()?;
                AssignmentPath::new(&row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(outcomes, paths)
    }

    pub fn with_covariates(mut self, covariates: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(c) = covariates.iter().find(|c| c.shape() != self.outcomes.shape()) {
            return Err(RipwError::DimensionMismatch(format!(
                "covariate of shape {:?} does not match panel {:?}",
                c.shape(),
                self.outcomes.shape()
            )));
        }
        self.covariates = covariates;
        Ok(self)
    }

    pub fn with_unit_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_units() {
            return Err(RipwError::DimensionMismatch("unit label count".into()));
        }
        self.unit_labels = labels;
        Ok(self)
    }

    pub fn with_period_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.n_periods() {
            return Err(RipwError::DimensionMismatch("period label count".into()));
        }
        self.period_labels = labels;
        Ok(self)
    }

    /// Same design, different outcomes.
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>) -> Result<Self> {
        if outcomes.shape() != self.outcomes.shape() {
            return Err(RipwError::DimensionMismatch("outcome shape".into()));
        }
        let mut out = self.clone();
        out.outcomes = outcomes;
        Ok(out)
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn paths(&self) -> &[AssignmentPath] {
        &self.paths
    }

    pub fn covariates(&self) -> &[DMatrix<f64>] {
        &self.covariates
    }

    pub fn covariate(&self, column: usize) -> Result<&DMatrix<f64>> {
        self.covariates
            .get(column)
            .ok_or(RipwError::CovariateOutOfRange {
                column,
                available: self.covariates.len(),
            })
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_labels(&self) -> &[i64] {
        &self.period_labels
    }

    /// `n x T` 0/1 assignment matrix.
    pub fn treatment_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_units(), self.n_periods(), |i, t| {
            self.paths[i].value(t)
        })
    }

    /// Panel restricted to the given units, in the given order.
    pub fn subset(&self, units: &[usize]) -> Result<Self> {
        if units.is_empty() {
            return Err(RipwError::InvalidArgument("empty unit subset".into()));
        }
        let periods = self.n_periods();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(units.len(), periods, |r, t| m[(units[r], t)]);
        Ok(Self {
            unit_labels: units.iter().map(|&i| self.unit_labels[i].clone()).collect(),
            period_labels: self.period_labels.clone(),
            outcomes: pick(&self.outcomes),
            paths: units.iter().map(|&i| self.paths[i]).collect(),
            covariates: self.covariates.iter().map(pick).collect(),
        })
    }
}

/// Column names of a long-format panel CSV.
///
/// Any columns after the four named ones are read as covariates, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LongCsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub treated: String,
}

impl Default for LongCsvSchema {
    fn default() -> Self {
        Self {
            unit: "unit_id".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            treated: "treated".into(),
        }
    }
}

pub fn load_panel(path: impl AsRef<Path>, schema: &LongCsvSchema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    read_panel(file, schema)
}

/// Parses a long-format CSV into a balanced panel.
///
/// Units keep first-appearance order; periods are sorted ascending and
/// re-indexed `1..=T`.
pub fn read_panel<R: Read>(reader: R, schema: &LongCsvSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = [&schema.unit, &schema.period, &schema.outcome, &schema.treated];
    for (k, name) in expected.iter().enumerate() {
        let found = headers.get(k).unwrap_or("");
        if found != name.as_str() {
            return Err(RipwError::MissingColumn {
                expected: (*name).clone(),
                found: found.to_string(),
            });
        }
    }
    let covariate_names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();

    struct Cell {
        outcome: f64,
        treated: u8,
        covariates: Vec<f64>,
    }

    let mut unit_order: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<BTreeMap<i64, Cell>> = Vec::new();

    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row_idx + 2;
        let field = |k: usize, column: &str| -> Result<String> {
            let v = record.get(k).unwrap_or("");
            if v.is_empty() {
                return Err(RipwError::MalformedValue {
                    column: column.to_string(),
                    row,
                    value: String::new(),
                });
            }
            Ok(v.to_string())
        };
        let unit = field(0, &schema.unit)?;
        let period_raw = field(1, &schema.period)?;
        let period: i64 = period_raw.parse().map_err(|_| RipwError::MalformedValue {
            column: schema.period.clone(),
            row,
            value: period_raw.clone(),
        })?;
        let outcome = parse_real(&field(2, &schema.outcome)?, &schema.outcome, row)?;
        let treated_raw = field(3, &schema.treated)?;
        let treated = match treated_raw.parse::<f64>() {
            Ok(v) if v == 0.0 => 0u8,
            Ok(v) if v == 1.0 => 1u8,
            _ => {
                return Err(RipwError::NonBinaryTreatment {
                    unit,
                    period,
                    value: treated_raw,
                })
            }
        };
        let covariates = covariate_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_real(&field(4 + k, name)?, name, row))
            .collect::<Result<Vec<_>>>()?;

        let idx = *unit_index.entry(unit.clone()).or_insert_with(|| {
            unit_order.push(unit.clone());
            cells.push(BTreeMap::new());
            unit_order.len() - 1
        });
        if cells[idx]
            .insert(
                period,
                Cell {
                    outcome,
                    treated,
                    covariates,
                },
            )
            .is_some()
        {
            return Err(RipwError::DuplicateCell { unit, period });
        }
    }

    if unit_order.is_empty() {
        return Err(RipwError::InvalidArgument("panel CSV has no rows".into()));
    }
    let mut periods: Vec<i64> = cells.iter().flat_map(|c| c.keys().copied()).collect();
    periods.sort_unstable();
    periods.dedup();
    for (unit, c) in unit_order.iter().zip(&cells) {
        if let Some(&p) = periods.iter().find(|p| !c.contains_key(p)) {
            return Err(RipwError::UnbalancedPanel {
                unit: unit.clone(),
                period: p,
            });
        }
    }

    let n = unit_order.len();
    let t_count = periods.len();
    check_periods(t_count)?;
    let mut outcomes = DMatrix::zeros(n, t_count);
    let mut covariates = vec![DMatrix::zeros(n, t_count); covariate_names.len()];
    let mut paths = Vec::with_capacity(n);
    for (i, c) in cells.iter().enumerate() {
        let mut bits = Vec::with_capacity(t_count);
        for (t, cell) in c.values().enumerate() {
            outcomes[(i, t)] = cell.outcome;
            bits.push(cell.treated);
            for (k, v) in cell.covariates.iter().enumerate() {
                covariates[k][(i, t)] = *v;
            }
        }
        paths.push(AssignmentPath::new(&bits)?);
    }
    PanelDataset::new(outcomes, paths)?
        .with_covariates(covariates)?
        .with_unit_labels(unit_order)?
        .with_period_labels(periods)
}

fn parse_real(raw: &str, column: &str, row: usize) -> Result<f64> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| RipwError::MalformedValue {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> AssignmentPath {
        s.parse().unwrap()
    }

    #[test]
    fn enumerate_small_dimensions() {
        let one: Vec<String> = enumerate_paths(1).unwrap().iter().map(|p| p.to_string()).collect();
        assert_eq!(one, ["0", "1"]);
        let two: Vec<String> = enumerate_paths(2).unwrap().iter().map(|p| p.to_string()).collect();
        assert_eq!(two, ["00", "01", "10", "11"]);
    }

    #[test]
    fn enumerate_rejects_beyond_cap() {
        assert!(matches!(
            enumerate_paths(21),
            Err(RipwError::DimensionTooLarge { periods: 21, max: 20 })
        ));
    }

    #[test]
    fn enumeration_is_a_bijection() {
        for periods in 1..=10 {
            let paths = enumerate_paths(periods).unwrap();
            assert_eq!(paths.len(), 1 << periods);
            assert!(paths.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn path_ordering_is_lexicographic() {
        assert!(p("011") < p("100"));
        assert!(p("0011") < p("0101"));
        assert_eq!(AssignmentPath::staggered(4, 2).unwrap(), p("0011"));
        assert_eq!(AssignmentPath::single(4, 1).unwrap(), p("1000"));
        assert_eq!(p("0011").adoption_period(), Some(3));
        assert!(p("0111").is_staggered());
        assert!(!p("0101").is_staggered());
    }

    #[test]
    fn centering_matrix_properties() {
        let j = CenteringOperator::new(5).materialize();
        let ones = DMatrix::from_element(5, 1, 1.0);
        assert!((&j * &ones).abs().max() <= 1e-15);
        assert!((&j * &j - &j).abs().max() <= 1e-12);
    }

    #[test]
    fn center_doubly_examples() {
        let c = center_doubly(&DMatrix::from_element(3, 4, 7.5));
        assert!(c.abs().max() < 1e-12);

        let a = [1.0, -2.0, 1.0];
        let b = [0.5, -0.5, 2.0, -2.0];
        let m = DMatrix::from_fn(3, 4, |i, t| a[i] + b[t]);
        assert!(center_doubly(&m).abs().max() < 1e-12);

        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((center_doubly(&m) - expected).abs().max() < 1e-15);
    }

    #[test]
    fn time_weights_validation() {
        assert!(TimeWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(TimeWeights::new(vec![0.6, 0.5]).is_err());
        assert!(TimeWeights::new(vec![1.5, -0.5]).is_err());
        assert!(TimeWeights::equal(4).is_equal(1e-15));
    }

    #[test]
    fn reads_minimal_panel() {
        let csv = "unit_id,period,outcome,treated\na,1,1.0,0\na,2,2.0,1\nb,1,0.5,0\nb,2,0.25,0\n";
        let panel = read_panel(csv.as_bytes(), &LongCsvSchema::default()).unwrap();
        assert_eq!(panel.n_units(), 2);
        assert_eq!(panel.n_periods(), 2);
        assert_eq!(panel.paths()[0], p("01"));
        assert_eq!(panel.outcomes()[(1, 1)], 0.25);
    }

    #[test]
    fn periods_are_sorted_and_units_keep_order() {
        let csv = "unit_id,period,outcome,treated,x1\nz,2010,1,1,3\nz,2008,2,0,3\na,2010,3,0,4\na,2008,4,0,4\n";
        let panel = read_panel(csv.as_bytes(), &LongCsvSchema::default()).unwrap();
        assert_eq!(panel.unit_labels(), ["z", "a"]);
        assert_eq!(panel.period_labels(), [2008, 2010]);
        assert_eq!(panel.outcomes()[(0, 0)], 2.0);
        assert_eq!(panel.paths()[0], p("01"));
        assert_eq!(panel.covariates().len(), 1);
        assert_eq!(panel.covariate(0).unwrap()[(1, 1)], 4.0);
    }

    #[test]
    fn unbalanced_panel_rejected() {
        let mut csv = String::from("unit_id,period,outcome,treated\n");
        for t in 1..=4 {
            csv.push_str(&format!("a,{t},1,0\n"));
            if t != 3 {
                csv.push_str(&format!("b,{t},1,0\n"));
            }
        }
        let err = read_panel(csv.as_bytes(), &LongCsvSchema::default()).unwrap_err();
        assert!(matches!(err, RipwError::UnbalancedPanel { ref unit, period: 3 } if unit == "b"));
    }

    #[test]
    fn non_binary_treatment_rejected() {
        let csv = "unit_id,period,outcome,treated\na,1,1,0\na,2,1,2\n";
        let err = read_panel(csv.as_bytes(), &LongCsvSchema::default()).unwrap_err();
        assert!(matches!(err, RipwError::NonBinaryTreatment { .. }));
    }

    #[test]
    fn duplicate_cell_rejected() {
        let csv = "unit_id,period,outcome,treated\na,1,1,0\na,1,2,0\n";
        let err = read_panel(csv.as_bytes(), &LongCsvSchema::default()).unwrap_err();
        assert!(matches!(err, RipwError::DuplicateCell { .. }));
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "unit,period,outcome,treated\na,1,1,0\n";
        assert!(matches!(
            read_panel(csv.as_bytes(), &LongCsvSchema::default()),
            Err(RipwError::MissingColumn { .. })
        ));
    }

    #[test]
    fn subset_keeps_labels() {
        let y = DMatrix::from_fn(3, 2, |i, t| (i * 2 + t) as f64);
        let panel = PanelDataset::new(y, vec![p("00"), p("01"), p("11")]).unwrap();
        let sub = panel.subset(&[2, 0]).unwrap();
        assert_eq!(sub.unit_labels(), ["3", "1"]);
        assert_eq!(sub.paths(), [p("11"), p("00")]);
        assert_eq!(sub.outcomes()[(0, 1)], 5.0);
    }
}
