//! Class distributions and Fisher's exact test.
//!
//! The two-sided p-value follows the sum-of-small-probabilities convention:
//! over all tables sharing the observed margins, sum the point probabilities
//! that do not exceed the observed one times (1 + 1e-7). Point probabilities
//! are hypergeometric, computed in log space from a cumulative
//! log-factorial table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{AnswerClass, ClassifiedResult, CotClass};

/// Relative slack when comparing point probabilities to the observed one.
pub const TWO_SIDED_SLACK: f64 = 1e-7;

/// 2x2 contingency table: rows are two interventions, columns are
/// target-class vs rest.
///
/// ```text
///         target   rest
/// arm A     a       b
/// arm B     c       d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

#[derive(Deserialize)]
struct RawTable {
    a: u64,
    b: u64,
    c: u64,
    d: u64,
}

impl TryFrom<RawTable> for ContingencyTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        ContingencyTable::new(raw.a, raw.b, raw.c, raw.d)
    }
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        if a == 0 && b == 0 && c == 0 && d == 0 {
            return Err(Error::invalid_field("table", "all four cells are zero"));
        }
        Ok(ContingencyTable { a, b, c, d })
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// A margin (row or column total) is zero: the test is vacuous.
    pub fn has_degenerate_margin(&self) -> bool {
        self.a + self.b == 0 || self.c + self.d == 0 || self.a + self.c == 0 || self.b + self.d == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub p_two_sided: f64,
    /// Set when a zero margin forced the conventional p = 1.
    pub degenerate: bool,
    pub table: ContingencyTable,
}

/// Cumulative log-factorials: `table[n] = ln(n!)`.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher's exact test on a 2x2 table.
pub fn fisher_exact(table: &ContingencyTable) -> FisherResult {
    if table.has_degenerate_margin() {
        return FisherResult {
            p_two_sided: 1.0,
            degenerate: true,
            table: *table,
        };
    }
    let r1 = table.a + table.b;
    let r2 = table.c + table.d;
    let c1 = table.a + table.c;
    let n = r1 + r2;
    let lnf = ln_factorials(n);
    let ln_choose = |n: u64, k: u64| lnf[n as usize] - lnf[k as usize] - lnf[(n - k) as usize];
    let ln_point = |k: u64| ln_choose(r1, k) + ln_choose(r2, c1 - k) - ln_choose(n, c1);

    let k_min = c1.saturating_sub(r2);
    let k_max = r1.min(c1);
    let threshold = ln_point(table.a).exp() * (1.0 + TWO_SIDED_SLACK);

    let mut total = 0.0;
    let mut included = 0u64;
    for k in k_min..=k_max {
        let p = ln_point(k).exp();
        if p <= threshold {
            total += p;
            included += 1;
        }
    }
    // When every same-margin table qualifies the sum is 1 by definition;
    // return it exactly rather than up to rounding.
    let p_two_sided = if included == k_max - k_min + 1 {
        1.0
    } else {
        total.min(1.0)
    };
    FisherResult {
        p_two_sided,
        degenerate: false,
        table: *table,
    }
}

/// Which label set a distribution or p-value matrix is over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAxis {
    Answer,
    Cot,
}

impl ClassAxis {
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            ClassAxis::Answer => AnswerClass::ALL.iter().map(|c| c.label()).collect(),
            ClassAxis::Cot => CotClass::ALL.iter().map(|c| c.label()).collect(),
        }
    }

    pub fn label_of(self, result: &ClassifiedResult) -> &'static str {
        match self {
            ClassAxis::Answer => result.answer_class.label(),
            ClassAxis::Cot => result.cot_class.label(),
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            ClassAxis::Answer => "answer",
            ClassAxis::Cot => "cot",
        }
    }
}

/// Counts and proportions for one (dataset, intervention) group. All labels
/// of the axis are present, including zero-count ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub dataset: String,
    pub intervention: String,
    pub total: u64,
    pub counts: BTreeMap<String, u64>,
    pub proportions: BTreeMap<String, f64>,
}

/// Distribution of classes per intervention (and dataset), in the given
/// intervention order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub axis: ClassAxis,
    pub groups: Vec<GroupDistribution>,
}

/// Aggregates classification results into per-intervention class counts and
/// proportions. `intervention_order` fixes row order; interventions absent
/// from the results are skipped.
pub fn class_distribution(
    results: &[ClassifiedResult],
    axis: ClassAxis,
    intervention_order: &[String],
) -> Distribution {
    let mut datasets: Vec<String> = Vec::new();
    for r in results {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    datasets.sort();

    let mut groups = Vec::new();
    for dataset in &datasets {
        for intervention in intervention_order {
            let subset: Vec<&ClassifiedResult> = results
                .iter()
                .filter(|r| &r.dataset == dataset && &r.intervention == intervention)
                .collect();
            if subset.is_empty() {
                continue;
            }
            let mut counts: BTreeMap<String, u64> = axis
                .labels()
                .into_iter()
                .map(|l| (l.to_string(), 0))
                .collect();
            for r in &subset {
                *counts.get_mut(axis.label_of(r)).expect("closed label set") += 1;
            }
            let total = subset.len() as u64;
            let proportions = counts
                .iter()
                .map(|(label, &count)| (label.clone(), count as f64 / total as f64))
                .collect();
            groups.push(GroupDistribution {
                dataset: dataset.clone(),
                intervention: intervention.clone(),
                total,
                counts,
                proportions,
            });
        }
    }
    Distribution { axis, groups }
}

/// One pairwise significance entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPvalue {
    pub intervention_a: String,
    pub intervention_b: String,
    pub result: FisherResult,
}

/// Symmetric p-value matrix over unordered intervention pairs for one target
/// class (target vs rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvalueMatrix {
    pub axis: ClassAxis,
    pub target_class: String,
    pub interventions: Vec<String>,
    pub pairs: Vec<PairPvalue>,
}

impl PvalueMatrix {
    /// Looks up the symmetric entry for two interventions.
    pub fn get(&self, a: &str, b: &str) -> Option<&FisherResult> {
        self.pairs.iter().find_map(|p| {
            let hit = (p.intervention_a == a && p.intervention_b == b)
                || (p.intervention_a == b && p.intervention_b == a);
            hit.then_some(&p.result)
        })
    }
}

/// Builds the 2x2 table (target vs rest) for every unordered intervention
/// pair and applies Fisher's exact test.
pub fn pvalue_matrix(
    results: &[ClassifiedResult],
    axis: ClassAxis,
    target_class: &str,
    intervention_order: &[String],
) -> Result<PvalueMatrix> {
    if intervention_order.len() < 2 {
        return Err(Error::invalid_field(
            "interventions",
            "need at least two interventions for pairwise tests",
        ));
    }
    let count = |intervention: &str| -> (u64, u64) {
        let mut target = 0;
        let mut rest = 0;
        for r in results {
            if r.intervention == intervention {
                if axis.label_of(r) == target_class {
                    target += 1;
                } else {
                    rest += 1;
                }
            }
        }
        (target, rest)
    };

    let mut pairs = Vec::new();
    for i in 0..intervention_order.len() {
        for j in (i + 1)..intervention_order.len() {
            let (a, b) = count(&intervention_order[i]);
            let (c, d) = count(&intervention_order[j]);
            let table = ContingencyTable::new(a, b, c, d)?;
            pairs.push(PairPvalue {
                intervention_a: intervention_order[i].clone(),
                intervention_b: intervention_order[j].clone(),
                result: fisher_exact(&table),
            });
        }
    }
    Ok(PvalueMatrix {
        axis,
        target_class: target_class.to_string(),
        interventions: intervention_order.to_vec(),
        pairs,
    })
}
