//! Result tables: raw per-cell metric values for each method, and the
//! aggregate comparison — per-cell deltas against the plain jointly
//! trained model, relative improvements, mean ranks, and one-sided
//! significance tests with multiplicity correction. Emission is
//! deterministic: rows are canonically sorted and floats use shortest
//! round-trip formatting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::metrics::{
    holm_bonferroni, mean_and_standard_error, rank_methods, relative_improvement,
    wilcoxon_one_sided_greater, HolmOutcome,
};
use crate::splits::protocol::Subset;

/// Compared prediction methods. Declaration order is the canonical
/// report order; the plain jointly trained model is the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Jt,
    TttMmr,
    TttMmrGeo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Jt, Method::TttMmr, Method::TttMmrGeo];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Jt => "jt",
            Method::TttMmr => "ttt-mmr",
            Method::TttMmrGeo => "ttt-mmr-geo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "jt" => Ok(Method::Jt),
            "ttt-mmr" => Ok(Method::TttMmr),
            "ttt-mmr-geo" => Ok(Method::TttMmrGeo),
            other => Err(LabError::Usage(format!(
                "unknown method {other:?}; expected jt, ttt-mmr or ttt-mmr-geo"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which held-out test population a cell was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    Random,
    Geo,
}

impl SplitKind {
    pub const ALL: [SplitKind; 2] = [SplitKind::Random, SplitKind::Geo];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::Random => "random",
            SplitKind::Geo => "geo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitKind::Random),
            "geo" => Ok(SplitKind::Geo),
            other => Err(LabError::Usage(format!(
                "unknown split {other:?}; expected random or geo"
            ))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One raw result: a method's metric on one (split, subset, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub split: SplitKind,
    pub subset: Subset,
    pub seed: u64,
    /// Metric name, e.g. "r2" or "map"; uniform across a report.
    pub metric: String,
    pub value: f64,
}

/// One method's change over the baseline on one (split, subset, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCell {
    pub method: Method,
    pub split: SplitKind,
    pub subset: Subset,
    pub seed: u64,
    /// Method value minus baseline value on the same cell key.
    pub delta: f64,
    /// (new − old)/(1 − old); absent when the baseline is already ≥ 1.
    pub relative_improvement: Option<f64>,
}

/// Per-(method, split) means over subsets and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDelta {
    pub method: Method,
    pub split: SplitKind,
    pub mean_delta: f64,
    /// Mean of the defined per-cell relative improvements, if any.
    pub mean_relative_improvement: Option<f64>,
}

/// Mean rank of one method across all (split, subset, seed) groups,
/// rank 1 best, ties sharing the mean rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub method: Method,
    pub mean_rank: f64,
    pub standard_error: f64,
}

/// One-sided paired test of a method improving on the baseline, pairs
/// ranging over every (split, subset, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub method: Method,
    pub pairs: usize,
    pub p_value: f64,
}

/// The full aggregate: raw cells plus every derived comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: String,
    pub alpha: f64,
    /// Raw cells in canonical (method, split, subset, seed) order.
    pub cells: Vec<Cell>,
    pub deltas: Vec<DeltaCell>,
    pub split_deltas: Vec<SplitDelta>,
    pub ranks: Vec<RankSummary>,
    /// In the same order as `significance`.
    pub holm: HolmOutcome,
    pub significance: Vec<Significance>,
}

type GroupKey = (SplitKind, Subset, u64);

fn cell_sort_key(c: &Cell) -> (Method, SplitKind, Subset, u64) {
    (c.method, c.split, c.subset, c.seed)
}

/// Build the aggregate report from raw cells. Every (split, subset,
/// seed) group must contain the same method set including the baseline,
/// each method exactly once, and all cells must carry the same metric.
pub fn aggregate(cells: &[Cell], alpha: f64) -> Result<Report> {
    if cells.is_empty() {
        return Err(LabError::Config("report needs at least one cell".into()));
    }
    if !(0.0..=1.0).contains(&alpha) || alpha == 0.0 {
        return Err(LabError::Config(format!(
            "significance level must be in (0, 1], got {alpha}"
        )));
    }
    let metric = cells[0].metric.clone();
    if let Some(odd) = cells.iter().find(|c| c.metric != metric) {
        return Err(LabError::Config(format!(
            "mixed metrics in one report: {} and {}",
            metric, odd.metric
        )));
    }

    let mut groups: BTreeMap<GroupKey, BTreeMap<Method, f64>> = BTreeMap::new();
    for c in cells {
        let key = (c.split, c.subset, c.seed);
        if groups
            .entry(key)
            .or_default()
            .insert(c.method, c.value)
            .is_some()
        {
            return Err(LabError::Config(format!(
                "duplicate cell: {} on {}/{}/{}",
                c.method, c.split, c.subset, c.seed
            )));
        }
    }
    let method_set: BTreeSet<Method> = groups.values().next().unwrap().keys().copied().collect();
    for (key, group) in &groups {
        let this: BTreeSet<Method> = group.keys().copied().collect();
        if this != method_set {
            return Err(LabError::Config(format!(
                "inconsistent method sets across report groups (at {}/{}/{})",
                key.0, key.1, key.2
            )));
        }
    }
    if !method_set.contains(&Method::Jt) {
        return Err(LabError::Config(
            "report has no baseline cells to compare against".into(),
        ));
    }
    let contenders: Vec<Method> = method_set
        .iter()
        .copied()
        .filter(|m| *m != Method::Jt)
        .collect();

    // Per-cell deltas and relative improvements against the baseline.
    let mut deltas = Vec::new();
    for (&(split, subset, seed), group) in &groups {
        let base = group[&Method::Jt];
        for &m in &contenders {
            let delta = group[&m] - base;
            let ri = if base < 1.0 {
                Some(relative_improvement(base, group[&m])?)
            } else {
                None
            };
            deltas.push(DeltaCell {
                method: m,
                split,
                subset,
                seed,
                delta,
                relative_improvement: ri,
            });
        }
    }
    deltas.sort_by_key(|d| (d.method, d.split, d.subset, d.seed));

    // Per-(method, split) means.
    let mut split_deltas = Vec::new();
    for &m in &contenders {
        for split in SplitKind::ALL {
            let here: Vec<&DeltaCell> = deltas
                .iter()
                .filter(|d| d.method == m && d.split == split)
                .collect();
            if here.is_empty() {
                continue;
            }
            let mean_delta = here.iter().map(|d| d.delta).sum::<f64>() / here.len() as f64;
            let ris: Vec<f64> = here
                .iter()
                .filter_map(|d| d.relative_improvement)
                .collect();
            let mean_ri = if ris.is_empty() {
                None
            } else {
                Some(ris.iter().sum::<f64>() / ris.len() as f64)
            };
            split_deltas.push(SplitDelta {
                method: m,
                split,
                mean_delta,
                mean_relative_improvement: mean_ri,
            });
        }
    }

    // Mean rank ± standard error per method over all groups; ranks need
    // at least two methods to compare.
    let ordered_methods: Vec<Method> = method_set.iter().copied().collect();
    let mut ranks = Vec::new();
    if ordered_methods.len() >= 2 {
        let mut per_method_ranks: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
        for group in groups.values() {
            let values: Vec<f64> = ordered_methods.iter().map(|m| group[m]).collect();
            let group_ranks = rank_methods(&values, true)?;
            for (m, r) in ordered_methods.iter().zip(group_ranks) {
                per_method_ranks.entry(*m).or_default().push(r);
            }
        }
        for m in &ordered_methods {
            let (mean_rank, standard_error) = mean_and_standard_error(&per_method_ranks[m])?;
            ranks.push(RankSummary {
                method: *m,
                mean_rank,
                standard_error,
            });
        }
    }

    // One-sided significance per contender, then the step-down
    // correction over that family.
    let mut significance = Vec::new();
    for &m in &contenders {
        let diffs: Vec<f64> = deltas
            .iter()
            .filter(|d| d.method == m)
            .map(|d| d.delta)
            .collect();
        let p_value = wilcoxon_one_sided_greater(&diffs)?;
        significance.push(Significance {
            method: m,
            pairs: diffs.len(),
            p_value,
        });
    }
    let holm = if significance.is_empty() {
        HolmOutcome {
            rejected: Vec::new(),
            adjusted: Vec::new(),
        }
    } else {
        holm_bonferroni(
            &significance.iter().map(|s| s.p_value).collect::<Vec<_>>(),
            alpha,
        )?
    };

    let mut sorted_cells = cells.to_vec();
    sorted_cells.sort_by_key(cell_sort_key);

    Ok(Report {
        metric,
        alpha,
        cells: sorted_cells,
        deltas,
        split_deltas,
        ranks,
        holm,
        significance,
    })
}

/// The raw-cell table as CSV, canonically sorted, shortest-round-trip
/// float formatting; byte-identical for equal inputs.
pub fn cells_to_csv(cells: &[Cell]) -> String {
    let mut sorted = cells.to_vec();
    sorted.sort_by_key(cell_sort_key);
    let mut out = String::from("method,split,subset,seed,metric,value\n");
    for c in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.method, c.split, c.subset, c.seed, c.metric, c.value
        ));
    }
    out
}

/// The aggregate as pretty JSON with a trailing newline.
pub fn report_to_json(report: &Report) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| LabError::Config(format!("report serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: Method, split: SplitKind, seed: u64, value: f64) -> Cell {
        Cell {
            method,
            split,
            subset: Subset::S100,
            seed,
            metric: "r2".into(),
            value,
        }
    }

    /// Two seeds × two splits × three methods with the adapted methods
    /// always ahead of the baseline.
    fn full_grid() -> Vec<Cell> {
        let mut cells = Vec::new();
        for (si, split) in SplitKind::ALL.into_iter().enumerate() {
            for seed in [7u64, 8] {
                let base = 0.40 + 0.01 * si as f64 + 0.02 * (seed - 7) as f64;
                cells.push(cell(Method::Jt, split, seed, base));
                cells.push(cell(Method::TttMmr, split, seed, base + 0.10));
                cells.push(cell(Method::TttMmrGeo, split, seed, base + 0.20));
            }
        }
        cells
    }

    #[test]
    fn deltas_recompute_from_raw_cells() {
        let cells = full_grid();
        let report = aggregate(&cells, 0.05).unwrap();
        assert_eq!(report.deltas.len(), 8);
        for d in &report.deltas {
            let value = |m: Method| {
                report
                    .cells
                    .iter()
                    .find(|c| {
                        c.method == m && c.split == d.split && c.subset == d.subset
                            && c.seed == d.seed
                    })
                    .unwrap()
                    .value
            };
            let recomputed = value(d.method) - value(Method::Jt);
            assert!((d.delta - recomputed).abs() < 1e-15);
            let ri = d.relative_improvement.unwrap();
            let expect = recomputed / (1.0 - value(Method::Jt));
            assert!((ri - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_small_example_matches_hand_arithmetic() {
        // One split, seeds {1, 2}: baseline {0.5, 0.6}, contender
        // {0.7, 0.65}. Deltas {0.2, 0.05}; mean 0.125. RIs
        // {0.2/0.5, 0.05/0.4} = {0.4, 0.125}; mean 0.2625. Two positive
        // pairs ⇒ one-sided p = 1/4.
        let cells = vec![
            cell(Method::Jt, SplitKind::Random, 1, 0.5),
            cell(Method::Jt, SplitKind::Random, 2, 0.6),
            cell(Method::TttMmr, SplitKind::Random, 1, 0.7),
            cell(Method::TttMmr, SplitKind::Random, 2, 0.65),
        ];
        let report = aggregate(&cells, 0.05).unwrap();
        let sd = &report.split_deltas[0];
        assert_eq!(sd.method, Method::TttMmr);
        assert_eq!(sd.split, SplitKind::Random);
        assert!((sd.mean_delta - 0.125).abs() < 1e-15);
        assert!((sd.mean_relative_improvement.unwrap() - 0.2625).abs() < 1e-12);
        assert_eq!(report.significance.len(), 1);
        assert_eq!(report.significance[0].pairs, 2);
        assert!((report.significance[0].p_value - 0.25).abs() < 1e-15);
        // Baseline loses both groups: mean rank 2, contender rank 1.
        let rank_of = |m: Method| {
            report
                .ranks
                .iter()
                .find(|r| r.method == m)
                .unwrap()
                .mean_rank
        };
        assert_eq!(rank_of(Method::Jt), 2.0);
        assert_eq!(rank_of(Method::TttMmr), 1.0);
    }

    #[test]
    fn ranks_share_the_mean_on_ties() {
        let cells = vec![
            cell(Method::Jt, SplitKind::Random, 1, 0.5),
            cell(Method::TttMmr, SplitKind::Random, 1, 0.5),
            cell(Method::TttMmrGeo, SplitKind::Random, 1, 0.4),
        ];
        let report = aggregate(&cells, 0.05).unwrap_err();
        // A tie between baseline and contender makes the paired
        // difference zero; with only zero differences the significance
        // test is undefined and the aggregate must say so.
        assert!(matches!(report, LabError::Metric(_)));
    }

    #[test]
    fn rank_ties_average_when_differences_remain_elsewhere() {
        let mut cells = vec![
            cell(Method::Jt, SplitKind::Random, 1, 0.5),
            cell(Method::TttMmr, SplitKind::Random, 1, 0.5),
            cell(Method::TttMmrGeo, SplitKind::Random, 1, 0.4),
        ];
        // A second group breaks the all-zero-difference degeneracy.
        cells.push(cell(Method::Jt, SplitKind::Random, 2, 0.3));
        cells.push(cell(Method::TttMmr, SplitKind::Random, 2, 0.6));
        cells.push(cell(Method::TttMmrGeo, SplitKind::Random, 2, 0.5));
        let report = aggregate(&cells, 0.05).unwrap();
        let summary: BTreeMap<Method, f64> = report
            .ranks
            .iter()
            .map(|r| (r.method, r.mean_rank))
            .collect();
        // Group 1 ranks: jt 1.5, ttt-mmr 1.5, geo 3. Group 2: ttt-mmr 1,
        // geo 2, jt 3.
        assert!((summary[&Method::Jt] - 2.25).abs() < 1e-15);
        assert!((summary[&Method::TttMmr] - 1.25).abs() < 1e-15);
        assert!((summary[&Method::TttMmrGeo] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn relative_improvement_is_absent_at_perfect_baseline() {
        let cells = vec![
            cell(Method::Jt, SplitKind::Random, 1, 1.0),
            cell(Method::TttMmr, SplitKind::Random, 1, 0.9),
        ];
        let report = aggregate(&cells, 0.05).unwrap();
        assert_eq!(report.deltas[0].relative_improvement, None);
        assert_eq!(report.split_deltas[0].mean_relative_improvement, None);
        assert!((report.deltas[0].delta + 0.1).abs() < 1e-15);
    }

    #[test]
    fn missing_baseline_is_rejected() {
        let cells = vec![
            cell(Method::TttMmr, SplitKind::Random, 1, 0.5),
            cell(Method::TttMmrGeo, SplitKind::Random, 1, 0.6),
        ];
        assert!(matches!(
            aggregate(&cells, 0.05),
            Err(LabError::Config(_))
        ));
    }

    #[test]
    fn duplicate_and_inconsistent_cells_are_rejected() {
        let mut dup = vec![
            cell(Method::Jt, SplitKind::Random, 1, 0.5),
            cell(Method::Jt, SplitKind::Random, 1, 0.6),
        ];
        assert!(matches!(aggregate(&dup, 0.05), Err(LabError::Config(_))));
        dup.pop();
        dup.push(cell(Method::TttMmr, SplitKind::Random, 1, 0.6));
        dup.push(cell(Method::Jt, SplitKind::Geo, 1, 0.5));
        // Geo group lacks the contender present in the random group.
        assert!(matches!(aggregate(&dup, 0.05), Err(LabError::Config(_))));
        let mixed = vec![
            cell(Method::Jt, SplitKind::Random, 1, 0.5),
            Cell {
                metric: "map".into(),
                ..cell(Method::TttMmr, SplitKind::Random, 1, 0.6)
            },
        ];
        assert!(matches!(aggregate(&mixed, 0.05), Err(LabError::Config(_))));
    }

    #[test]
    fn emission_is_deterministic_and_order_independent() {
        let cells = full_grid();
        let mut shuffled = cells.clone();
        shuffled.reverse();
        let a = aggregate(&cells, 0.05).unwrap();
        let b = aggregate(&shuffled, 0.05).unwrap();
        assert_eq!(a, b);
        assert_eq!(report_to_json(&a).unwrap(), report_to_json(&b).unwrap());
        assert_eq!(cells_to_csv(&cells), cells_to_csv(&shuffled));
        let csv = cells_to_csv(&cells);
        assert_eq!(csv.lines().count(), cells.len() + 1);
        assert!(csv.starts_with("method,split,subset,seed,metric,value\n"));
        assert!(csv.contains("ttt-mmr-geo,geo,100,7,r2,"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let report = aggregate(&full_grid(), 0.05).unwrap();
        let json = report_to_json(&report).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn holm_family_matches_significance_order() {
        let report = aggregate(&full_grid(), 0.05).unwrap();
        assert_eq!(report.holm.adjusted.len(), report.significance.len());
        for (s, (&rej, &adj)) in report
            .significance
            .iter()
            .zip(report.holm.rejected.iter().zip(&report.holm.adjusted))
        {
            assert_eq!(rej, adj <= report.alpha);
            assert!(adj >= s.p_value);
        }
    }

    #[test]
    fn method_and_split_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        for s in SplitKind::ALL {
            assert_eq!(SplitKind::parse(s.as_str()).unwrap(), s);
        }
        assert!(Method::parse("ttt").is_err());
        assert!(SplitKind::parse("geographic").is_err());
    }
}
