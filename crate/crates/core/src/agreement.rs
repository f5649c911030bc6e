//! Inter-annotator reliability: Krippendorff's alpha for nominal labels.
//!
//! Labels are full label paths; "1_1" and "1_1_1" are simply different
//! values. Values are accumulated in a coincidence matrix and alpha is
//! computed in double precision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{LabelPath, ObjectId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("need at least two coders, got {0}")]
    TooFewCoders(usize),
    #[error("duplicate coder {0}")]
    DuplicateCoder(String),
    #[error("unit {unit} has {found} values for {expected} coders")]
    RaggedUnit { unit: usize, expected: usize, found: usize },
    #[error("no unit has two or more values")]
    NoPairableUnits,
}

/// Values indexed by unit, then coder. `None` is a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityData {
    coders: Vec<String>,
    units: Vec<ObjectId>,
    values: Vec<Vec<Option<LabelPath>>>,
}

impl ReliabilityData {
    pub fn new(
        coders: Vec<String>,
        units: Vec<ObjectId>,
        values: Vec<Vec<Option<LabelPath>>>,
    ) -> Result<Self, AgreementError> {
        if coders.len() < 2 {
            return Err(AgreementError::TooFewCoders(coders.len()));
        }
        let mut seen = BTreeSet::new();
        for c in &coders {
            if !seen.insert(c) {
                return Err(AgreementError::DuplicateCoder(c.clone()));
            }
        }
        if units.len() != values.len() {
            return Err(AgreementError::RaggedUnit {
                unit: units.len().min(values.len()),
                expected: coders.len(),
                found: 0,
            });
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != coders.len() {
                return Err(AgreementError::RaggedUnit {
                    unit: i,
                    expected: coders.len(),
                    found: row.len(),
                });
            }
        }
        Ok(ReliabilityData { coders, units, values })
    }

    /// Aligns per-coder labelings on the union of their objects; objects a
    /// coder did not label are missing for that coder.
    pub fn from_labelings(labelings: &[(String, BTreeMap<ObjectId, LabelPath>)]) -> Result<Self, AgreementError> {
        let units: BTreeSet<&ObjectId> = labelings.iter().flat_map(|(_, m)| m.keys()).collect();
        let values = units
            .iter()
            .map(|u| labelings.iter().map(|(_, m)| m.get(*u).cloned()).collect())
            .collect();
        ReliabilityData::new(
            labelings.iter().map(|(c, _)| c.clone()).collect(),
            units.into_iter().cloned().collect(),
            values,
        )
    }

    pub fn coders(&self) -> &[String] {
        &self.coders
    }

    pub fn units(&self) -> &[ObjectId] {
        &self.units
    }

    pub fn values(&self) -> &[Vec<Option<LabelPath>>] {
        &self.values
    }

    /// Number of units carrying at least two values.
    pub fn pairable_units(&self) -> usize {
        self.values
            .iter()
            .filter(|row| row.iter().flatten().count() >= 2)
            .count()
    }

    /// Label counts per coder, missing values skipped.
    pub fn counts_by_coder(&self) -> Vec<BTreeMap<LabelPath, usize>> {
        (0..self.coders.len())
            .map(|c| {
                let mut counts = BTreeMap::new();
                for v in self.values.iter().filter_map(|row| row[c].as_ref()) {
                    *counts.entry(v.clone()).or_insert(0) += 1;
                }
                counts
            })
            .collect()
    }
}

/// Symmetric coincidence matrix over the label values that occur in
/// pairable units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceMatrix {
    pub labels: Vec<LabelPath>,
    pub counts: Vec<Vec<f64>>,
}

impl CoincidenceMatrix {
    pub fn get(&self, a: &LabelPath, b: &LabelPath) -> f64 {
        match (self.index(a), self.index(b)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0.0,
        }
    }

    fn index(&self, l: &LabelPath) -> Option<usize> {
        self.labels.binary_search(l).ok()
    }

    /// Row sums: how often each value occurs among pairable values.
    pub fn marginals(&self) -> Vec<f64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Total number of pairable values.
    pub fn total(&self) -> f64 {
        self.marginals().iter().sum()
    }
}

pub fn coincidence_matrix(data: &ReliabilityData) -> Result<CoincidenceMatrix, AgreementError> {
    let per_unit: Vec<BTreeMap<&LabelPath, usize>> = data
        .values
        .iter()
        .filter(|row| row.iter().flatten().count() >= 2)
        .map(|row| {
            let mut m = BTreeMap::new();
            for v in row.iter().flatten() {
                *m.entry(v).or_insert(0) += 1;
            }
            m
        })
        .collect();
    if per_unit.is_empty() {
        return Err(AgreementError::NoPairableUnits);
    }
    let labels: Vec<LabelPath> = per_unit
        .iter()
        .flat_map(|m| m.keys().map(|l| (*l).clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = labels.len();
    let mut counts = vec![vec![0.0; k]; k];
    for unit in &per_unit {
        let m: usize = unit.values().sum();
        let weight = 1.0 / (m - 1) as f64;
        for (a, &na) in unit {
            let i = labels.binary_search(a).expect("label collected above");
            for (b, &nb) in unit {
                let j = labels.binary_search(b).expect("label collected above");
                let pairs = if i == j { na * (na - 1) } else { na * nb };
                counts[i][j] += pairs as f64 * weight;
            }
        }
    }
    Ok(CoincidenceMatrix { labels, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub alpha: f64,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
    /// Number of pairable values.
    pub n_pairable: usize,
    pub pairable_units: usize,
    /// False when expected disagreement is zero; alpha is then reported as
    /// 1 by convention.
    pub defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub coincidences: CoincidenceMatrix,
}

/// Nominal alpha, `1 - Do/De`.
pub fn krippendorff_alpha_nominal(data: &ReliabilityData) -> Result<AlphaReport, AgreementError> {
    let coincidences = coincidence_matrix(data)?;
    let marginals = coincidences.marginals();
    let n: f64 = marginals.iter().sum();
    let k = coincidences.labels.len();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                observed += coincidences.counts[i][j];
                expected += marginals[i] * marginals[j];
            }
        }
    }
    let observed_disagreement = observed / n;
    let expected_disagreement = expected / (n * (n - 1.0));
    let n_pairable = data
        .values
        .iter()
        .map(|row| row.iter().flatten().count())
        .filter(|&m| m >= 2)
        .sum();

    let (alpha, defined, note) = if expected_disagreement > 0.0 {
        (1.0 - observed_disagreement / expected_disagreement, true, None)
    } else {
        (
            1.0,
            false,
            Some("every pairable value is the same label; expected disagreement is zero".to_string()),
        )
    };
    Ok(AlphaReport {
        alpha,
        observed_disagreement,
        expected_disagreement,
        n_pairable,
        pairable_units: data.pairable_units(),
        defined,
        note,
        coincidences,
    })
}

/// Per-coder category counts plus alpha, as printed by the `alpha` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub coders: Vec<String>,
    pub categories: Vec<LabelPath>,
    /// `counts[coder][category]`
    pub counts: Vec<Vec<usize>>,
    pub report: AlphaReport,
}

impl AgreementSummary {
    pub fn new(data: &ReliabilityData) -> Result<Self, AgreementError> {
        let report = krippendorff_alpha_nominal(data)?;
        let by_coder = data.counts_by_coder();
        let categories: Vec<LabelPath> = by_coder
            .iter()
            .flat_map(|m| m.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let counts = by_coder
            .iter()
            .map(|m| categories.iter().map(|c| m.get(c).copied().unwrap_or(0)).collect())
            .collect();
        Ok(AgreementSummary {
            coders: data.coders.clone(),
            categories,
            counts,
            report,
        })
    }

    /// Aligned text table: one column per category, one row per coder, alpha
    /// on the first row.
    pub fn to_table(&self) -> String {
        let alpha = if self.report.defined {
            format!("{:.4}", self.report.alpha)
        } else {
            format!("{:.4}*", self.report.alpha)
        };
        let mut header = vec!["Category".to_string()];
        header.extend(self.categories.iter().map(|c| c.to_string()));
        header.push("Alpha".into());
        let mut rows = vec![header];
        for (i, coder) in self.coders.iter().enumerate() {
            let mut row = vec![coder.clone()];
            row.extend(self.counts[i].iter().map(|n| n.to_string()));
            row.push(if i == 0 { alpha.clone() } else { String::new() });
            rows.push(row);
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let mut line = String::new();
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        if let Some(note) = &self.report.note {
            let _ = writeln!(out, "* {note}");
        }
        out
    }
}
