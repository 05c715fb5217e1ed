//! Study analysis: improvement over baseline, imputation, Mann-Whitney U,
//! Cohen's d and the comparison table / effect grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::metrics::{MetricId, TaskMetrics};

pub const BASELINE: &str = "baseline";
/// Post-baseline repetitions shown in the effect grid, in column order.
pub const GRID_LABELS: [&str; 4] = ["rep2", "rep3", "rep4", "final"];
pub const SIGNIFICANCE: f64 = 0.05;
/// Largest combined sample size for which exact enumeration is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("empty sample")]
    Empty,
    #[error("need at least {need} values per group, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("pooled standard deviation is zero, effect size undefined")]
    ZeroVariance,
    #[error("participant {participant}: missing repetition `{label}`")]
    MissingRepetition { participant: String, label: String },
    #[error("participant {participant}: repetition `{label}` appears twice")]
    DuplicateLabel { participant: String, label: String },
    #[error("column {column} has no observed values")]
    FullyMissing { column: usize },
    #[error("matrix row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("{0} arm has no participants")]
    EmptyArm(Arm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Experimental,
    Control,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Experimental => "experimental",
            Arm::Control => "control",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantSeries {
    pub participant: String,
    pub arm: Arm,
    pub repetitions: Vec<(String, TaskMetrics)>,
}

impl ParticipantSeries {
    pub fn new(participant: &str, arm: Arm, repetitions: Vec<(String, TaskMetrics)>) -> Result<Self, AnalyticsError> {
        let s = ParticipantSeries { participant: participant.to_string(), arm, repetitions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        for (i, (label, _)) in self.repetitions.iter().enumerate() {
            if self.repetitions[..i].iter().any(|(l, _)| l == label) {
                return Err(AnalyticsError::DuplicateLabel {
                    participant: self.participant.clone(),
                    label: label.clone(),
                });
            }
        }
        self.repetition(BASELINE).map(|_| ())
    }

    pub fn repetition(&self, label: &str) -> Result<&TaskMetrics, AnalyticsError> {
        self.repetitions.iter().find(|(l, _)| l == label).map(|(_, m)| m).ok_or_else(|| {
            AnalyticsError::MissingRepetition { participant: self.participant.clone(), label: label.to_string() }
        })
    }
}

/// Group labelled session metrics by participant, keeping the given label order.
pub fn group_series(
    arm: Arm,
    sessions: impl IntoIterator<Item = (String, String, TaskMetrics)>,
) -> Result<Vec<ParticipantSeries>, AnalyticsError> {
    let mut by: BTreeMap<String, Vec<(String, TaskMetrics)>> = BTreeMap::new();
    for (participant, label, m) in sessions {
        by.entry(participant).or_default().push((label, m));
    }
    by.into_iter().map(|(p, reps)| ParticipantSeries::new(&p, arm, reps)).collect()
}

/// Per-metric change from baseline; missing where either value is missing.
pub fn improvement(series: &ParticipantSeries, label: &str) -> Result<[Option<f64>; 15], AnalyticsError> {
    let base = series.repetition(BASELINE)?.values();
    let rep = series.repetition(label)?.values();
    Ok(std::array::from_fn(|i| Some(rep[i]? - base[i]?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Count,
}

impl ColumnKind {
    pub fn of(metric: MetricId) -> Self {
        if metric.is_count() {
            ColumnKind::Count
        } else {
            ColumnKind::Continuous
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1). Zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Fill missing entries column-wise: mean for continuous columns, median for counts.
pub fn impute(matrix: &[Vec<Option<f64>>], kinds: &[ColumnKind]) -> Result<Vec<Vec<f64>>, AnalyticsError> {
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != kinds.len() {
            return Err(AnalyticsError::Ragged { row, got: r.len(), expected: kinds.len() });
        }
    }
    let mut fill = Vec::with_capacity(kinds.len());
    for (column, kind) in kinds.iter().enumerate() {
        let observed: Vec<f64> = matrix.iter().filter_map(|r| r[column]).collect();
        if observed.is_empty() {
            if matrix.iter().all(|r| r[column].is_some()) {
                fill.push(0.0);
                continue;
            }
            return Err(AnalyticsError::FullyMissing { column });
        }
        fill.push(match kind {
            ColumnKind::Continuous => mean(&observed),
            ColumnKind::Count => median(&observed),
        });
    }
    Ok(matrix.iter().map(|r| r.iter().zip(&fill).map(|(v, f)| v.unwrap_or(*f)).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

/// Midranks of the pooled sample plus the tie-group sizes.
fn ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut r = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for p in &pooled[i..j] {
            r[p.1] = mid;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (r, ties)
}

fn u_statistic(a: &[f64], b: &[f64]) -> (f64, Vec<usize>) {
    let (r, ties) = ranks(a, b);
    let n = a.len() as f64;
    let ua = r[..a.len()].iter().sum::<f64>() - n * (n + 1.0) / 2.0;
    let ub = n * b.len() as f64 - ua;
    (ua.min(ub), ties)
}

/// Number of orderings of n a's and m b's giving each value of U_a.
fn u_distribution(n: usize, m: usize) -> Vec<f64> {
    // counts[j][k] for the current n, j b's.
    let mut prev: Vec<Vec<f64>> = (0..=m).map(|_| vec![1.0]).collect();
    for i in 1..=n {
        let mut cur: Vec<Vec<f64>> = vec![vec![1.0]];
        for j in 1..=m {
            let mut v = vec![0.0; i * j + 1];
            // Largest element is an a: it beats all j b's.
            for (k, c) in prev[j].iter().enumerate() {
                v[k + j] += c;
            }
            // Largest element is a b.
            for (k, c) in cur[j - 1].iter().enumerate() {
                v[k] += c;
            }
            cur.push(v);
        }
        prev = cur;
    }
    prev.swap_remove(m)
}

/// Two-sided exact p by enumeration of the null U distribution (no ties).
pub fn exact_p(u: f64, n: usize, m: usize) -> f64 {
    let dist = u_distribution(n, m);
    let total: f64 = dist.iter().sum();
    let lower: f64 = dist.iter().enumerate().filter(|(k, _)| (*k as f64) <= u + 1e-9).map(|(_, c)| c).sum();
    (2.0 * lower / total).min(1.0)
}

/// Two-sided normal approximation with tie and continuity correction.
pub fn normal_p(u: f64, n: usize, m: usize, ties: &[usize]) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term);
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((nf * mf / 2.0 - u).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * std.sf(z)).min(1.0)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, AnalyticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let (u, ties) = u_statistic(a, b);
    if a.len() + b.len() <= EXACT_MAX_N && ties.is_empty() {
        Ok(MannWhitney { u, p: exact_p(u, a.len(), b.len()), exact: true })
    } else {
        Ok(MannWhitney { u, p: normal_p(u, a.len(), b.len(), &ties), exact: false })
    }
}

/// Standardized mean difference (a − b) over the pooled sample SD.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, AnalyticsError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(AnalyticsError::TooFew { need: 2, got });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled =
        (((na - 1.0) * sample_sd(a).powi(2) + (nb - 1.0) * sample_sd(b).powi(2)) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    if pooled == 0.0 || !pooled.is_finite() {
        return Err(AnalyticsError::ZeroVariance);
    }
    Ok(diff / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        Summary { mean: mean(xs), sd: sample_sd(xs) }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub experimental: Summary,
    pub control: Summary,
    pub u: f64,
    pub p: f64,
    pub exact: bool,
    /// Experimental minus control on raw deltas; absent when both arms have zero spread.
    pub d: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub label: String,
    pub n_experimental: usize,
    pub n_control: usize,
    pub rows: Vec<MetricComparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    /// Positive means a larger improvement in the experimental arm.
    pub d: Option<f64>,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectGrid {
    pub metrics: Vec<String>,
    pub labels: Vec<String>,
    /// Row per metric, column per repetition.
    pub cells: Vec<Vec<EffectCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table: GroupComparison,
    pub grid: EffectGrid,
}

/// Imputed delta matrix (participants × metrics) for one arm.
fn arm_deltas(series: &[&ParticipantSeries], label: &str) -> Result<Vec<Vec<f64>>, AnalyticsError> {
    let raw: Vec<Vec<Option<f64>>> =
        series.iter().map(|s| improvement(s, label).map(|d| d.to_vec())).collect::<Result<_, _>>()?;
    impute(&raw, &MetricId::ALL.map(ColumnKind::of))
}

fn column(m: &[Vec<f64>], c: usize) -> Vec<f64> {
    m.iter().map(|r| r[c]).collect()
}

pub fn compare(groups: &[ParticipantSeries], label: &str) -> Result<GroupComparison, AnalyticsError> {
    let exp: Vec<&ParticipantSeries> = groups.iter().filter(|s| s.arm == Arm::Experimental).collect();
    let ctl: Vec<&ParticipantSeries> = groups.iter().filter(|s| s.arm == Arm::Control).collect();
    if exp.is_empty() {
        return Err(AnalyticsError::EmptyArm(Arm::Experimental));
    }
    if ctl.is_empty() {
        return Err(AnalyticsError::EmptyArm(Arm::Control));
    }
    for s in groups {
        s.validate()?;
    }
    let de = arm_deltas(&exp, label)?;
    let dc = arm_deltas(&ctl, label)?;
    let mut rows = Vec::with_capacity(15);
    for (i, id) in MetricId::ALL.iter().enumerate() {
        let (a, b) = (column(&de, i), column(&dc, i));
        let mw = mann_whitney_u(&a, &b)?;
        let d = match cohens_d(&a, &b) {
            Ok(d) => Some(d),
            Err(AnalyticsError::ZeroVariance | AnalyticsError::TooFew { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(MetricComparison {
            metric: id.name().to_string(),
            experimental: Summary::of(&a),
            control: Summary::of(&b),
            u: mw.u,
            p: mw.p,
            exact: mw.exact,
            d,
            significant: mw.p < SIGNIFICANCE,
        });
    }
    Ok(GroupComparison { label: label.to_string(), n_experimental: exp.len(), n_control: ctl.len(), rows })
}

/// Final-repetition table plus the metric × repetition effect grid.
pub fn report(groups: &[ParticipantSeries]) -> Result<Report, AnalyticsError> {
    let mut columns = Vec::with_capacity(GRID_LABELS.len());
    for label in GRID_LABELS {
        columns.push(compare(groups, label)?);
    }
    let cells = MetricId::ALL
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let sign = if id.lower_is_better() { -1.0 } else { 1.0 };
            columns
                .iter()
                .map(|c| {
                    let r = &c.rows[i];
                    EffectCell { d: r.d.map(|d| sign * d), p: r.p, significant: r.significant }
                })
                .collect()
        })
        .collect();
    let grid = EffectGrid {
        metrics: MetricId::ALL.iter().map(|m| m.name().to_string()).collect(),
        labels: GRID_LABELS.iter().map(|l| l.to_string()).collect(),
        cells,
    };
    let table = columns.pop().expect("final column");
    Ok(Report { table, grid })
}

fn fmt_d(d: Option<f64>) -> String {
    d.map_or_else(|| "n/a".to_string(), |d| format!("{d:.2}"))
}

impl Report {
    pub fn to_text(&self) -> String {
        let t = &self.table;
        let name_w = t.rows.iter().map(|r| r.metric.chars().count()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Improvement from baseline to {} (experimental n={}, control n={})",
            t.label, t.n_experimental, t.n_control
        );
        let _ = writeln!(
            s,
            "{:<name_w$}  {:>18}  {:>18}  {:>6}  {:>6}  {:>6}",
            "Metric", "Experimental", "Control", "U", "p", "d"
        );
        for r in &t.rows {
            let pad = name_w - r.metric.chars().count();
            let _ = writeln!(
                s,
                "{}{}  {:>18}  {:>18}  {:>6.1}  {:>6.3}  {:>6}{}",
                r.metric,
                " ".repeat(pad),
                r.experimental.to_string(),
                r.control.to_string(),
                r.u,
                r.p,
                fmt_d(r.d),
                if r.significant { " *" } else { "" }
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Effect size (Cohen's d, positive = larger improvement with coaching)");
        let _ = write!(s, "{:<name_w$}", "Metric");
        for l in &self.grid.labels {
            let _ = write!(s, "  {l:>8}");
        }
        let _ = writeln!(s);
        for (m, row) in self.grid.metrics.iter().zip(&self.grid.cells) {
            let _ = write!(s, "{}{}", m, " ".repeat(name_w - m.chars().count()));
            for c in row {
                let mark = if c.significant { "*" } else { " " };
                let _ = write!(s, "  {:>7}{mark}", fmt_d(c.d));
            }
            let _ = writeln!(s);
        }
        s
    }

    /// Grid as long-format CSV: metric,label,d,p,significant.
    pub fn grid_csv(&self) -> String {
        let mut s = String::from("metric,label,d,p,significant\n");
        for (m, row) in self.grid.metrics.iter().zip(&self.grid.cells) {
            for (l, c) in self.grid.labels.iter().zip(row) {
                let d = c.d.map_or(String::new(), |d| d.to_string());
                let _ = writeln!(s, "\"{m}\",{l},{d},{},{}", c.p, c.significant);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_p_for_separated_triples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert_eq!(r.p, 0.1);
    }

    #[test]
    fn interleaved_u() {
        let r = mann_whitney_u(&[1.0, 3.0, 5.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(r.u, 3.0);
    }

    #[test]
    fn identical_groups_are_null() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u, 8.0);
        assert!(r.p >= 0.99);
        assert!(!r.exact);
    }

    #[test]
    fn u_distribution_sums_to_binomial() {
        let d = u_distribution(6, 6);
        assert_eq!(d.len(), 37);
        assert_eq!(d.iter().sum::<f64>(), 924.0);
        assert_eq!(u_distribution(1, 1), vec![1.0, 1.0]);
    }

    #[test]
    fn all_tied_gives_p_one() {
        let r = mann_whitney_u(&[0.0; 5], &[0.0; 9]).unwrap();
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn cohens_d_fixture() {
        assert!((cohens_d(&[2.0, 4.0], &[1.0, 3.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(cohens_d(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(cohens_d(&[1.0, 1.0], &[1.0, 1.0]), Err(AnalyticsError::ZeroVariance));
        assert_eq!(cohens_d(&[1.0], &[1.0, 2.0]), Err(AnalyticsError::TooFew { need: 2, got: 1 }));
    }

    #[test]
    fn imputation_fixtures() {
        let m = vec![vec![Some(2.0), Some(1.0)], vec![None, Some(2.0)], vec![Some(4.0), None], vec![Some(9.0), Some(10.0)]];
        let out = impute(&m, &[ColumnKind::Continuous, ColumnKind::Count]).unwrap();
        assert_eq!(out[1][0], 5.0);
        assert_eq!(out[2][1], 2.0);
        let full = vec![vec![Some(1.0)], vec![Some(2.0)]];
        assert_eq!(impute(&full, &[ColumnKind::Count]).unwrap(), vec![vec![1.0], vec![2.0]]);
        let empty = vec![vec![None], vec![None]];
        assert_eq!(impute(&empty, &[ColumnKind::Continuous]), Err(AnalyticsError::FullyMissing { column: 0 }));
    }

    #[test]
    fn summary_formatting() {
        assert_eq!(Summary { mean: -14.531, sd: 12.994 }.to_string(), "-14.53 (12.99)");
    }
}
