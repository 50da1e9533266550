//! Domain data model: longitudinal datasets, arms, estimand specifications,
//! and slope estimates.
//!
//! Times are in years since randomization and eGFR in mL/min/1.73m²
//! everywhere; nothing in this crate converts units.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arm label. 0 is always the control/reference arm; labels are dense.
pub type ArmId = u8;

/// Normal 97.5% quantile used for all confidence intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub id: ArmId,
    pub name: Option<String>,
}

/// One eGFR measurement for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub subject_id: String,
    pub arm: ArmId,
    /// Years since randomization, >= 0.
    pub time: f64,
    pub egfr: f64,
}

/// Per-subject view into a dataset: constant arm, strictly increasing times
/// starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub arm: ArmId,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Subject {
    pub fn n_obs(&self) -> usize {
        self.times.len()
    }

    pub fn n_distinct_times(&self) -> usize {
        // Times are strictly increasing by construction.
        self.times.len()
    }
}

/// Validated repeated-measures dataset.
///
/// Invariants (enforced by [`LongitudinalDataset::build`]):
/// - every subject keeps one arm across all its measurements;
/// - every subject has a baseline (t = 0) measurement;
/// - (subject, time) pairs are unique and all values finite;
/// - arm ids are dense `0..K` with 0 present;
/// - `grid` is the sorted set of distinct times over all measurements.
///
/// Datasets are immutable after construction and safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    measurements: Vec<Measurement>,
    subjects: Vec<Subject>,
    arms: Vec<Arm>,
    grid: Vec<f64>,
}

impl LongitudinalDataset {
    /// Build and validate a dataset from raw records (`build_dataset`).
    ///
    /// Measurements are sorted by (subject_id, time); input order does not
    /// matter.
    pub fn build(records: Vec<Measurement>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput);
        }
        for m in &records {
            if !m.time.is_finite() || m.time < 0.0 {
                return Err(Error::NonFiniteValue {
                    subject_id: m.subject_id.clone(),
                    field: "time",
                });
            }
            if !m.egfr.is_finite() {
                return Err(Error::NonFiniteValue {
                    subject_id: m.subject_id.clone(),
                    field: "egfr",
                });
            }
        }

        let mut sorted = records;
        sorted.sort_by(|a, b| {
            a.subject_id
                .cmp(&b.subject_id)
                .then(a.time.total_cmp(&b.time))
        });

        let mut subjects: Vec<Subject> = Vec::new();
        for m in &sorted {
            match subjects.last_mut() {
                Some(s) if s.id == m.subject_id => {
                    if s.arm != m.arm {
                        return Err(Error::InconsistentArm {
                            subject_id: m.subject_id.clone(),
                            first: s.arm,
                            second: m.arm,
                        });
                    }
                    if *s.times.last().unwrap() == m.time {
                        return Err(Error::DuplicateTimePoint {
                            subject_id: m.subject_id.clone(),
                            time: m.time,
                        });
                    }
                    s.times.push(m.time);
                    s.values.push(m.egfr);
                }
                _ => subjects.push(Subject {
                    id: m.subject_id.clone(),
                    arm: m.arm,
                    times: vec![m.time],
                    values: vec![m.egfr],
                }),
            }
        }

        for s in &subjects {
            if s.times[0] != 0.0 {
                return Err(Error::MissingBaseline {
                    subject_id: s.id.clone(),
                });
            }
        }

        // Dense arm table with 0 present.
        let mut seen: Vec<u8> = subjects.iter().map(|s| s.arm).collect();
        seen.sort_unstable();
        seen.dedup();
        let dense = seen.first() == Some(&0)
            && seen.iter().enumerate().all(|(i, &a)| a as usize == i);
        if !dense {
            return Err(Error::ArmLabels { observed: seen });
        }
        let arms = seen
            .into_iter()
            .map(|id| Arm { id, name: None })
            .collect();

        let mut grid: Vec<f64> = sorted.iter().map(|m| m.time).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        Ok(Self {
            measurements: sorted,
            subjects,
            arms,
            grid,
        })
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Sorted distinct visit times; first element is always 0 (`visit_grid`).
    pub fn visit_grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn subjects_in_arm(&self, arm: ArmId) -> impl Iterator<Item = &Subject> {
        self.subjects.iter().filter(move |s| s.arm == arm)
    }

    /// Read the CSV interchange format (`subject_id,arm,time_years,egfr`,
    /// header required, UTF-8, LF or CRLF).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers()?;
            let expected = ["subject_id", "arm", "time_years", "egfr"];
            let got: Vec<&str> = headers.iter().map(str::trim).collect();
            if got != expected {
                return Err(Error::InvalidConfig(format!(
                    "expected CSV header {:?}, got {:?}",
                    expected.join(","),
                    got.join(",")
                )));
            }
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            records.push(Measurement {
                subject_id: row.subject_id,
                arm: row.arm,
                time: row.time_years,
                egfr: row.egfr,
            });
        }
        Self::build(records)
    }

    /// Write the CSV interchange format.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["subject_id", "arm", "time_years", "egfr"])?;
        for m in &self.measurements {
            wtr.write_record([
                m.subject_id.as_str(),
                &m.arm.to_string(),
                &m.time.to_string(),
                &m.egfr.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Counts of subjects per (arm, visit time), keyed for cell checks.
    pub fn cell_counts(&self) -> BTreeMap<(ArmId, u64), usize> {
        let mut counts = BTreeMap::new();
        for s in &self.subjects {
            for &t in &s.times {
                *counts.entry((s.arm, t.to_bits())).or_insert(0) += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    subject_id: String,
    arm: ArmId,
    time_years: f64,
    egfr: f64,
}

/// Weight function over the estimand interval. Only the uniform weight is
/// exposed; non-uniform weights exist inside the truth oracle for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Uniform,
}

/// Which named slope an interval represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlopeKind {
    Total,
    Chronic,
    Acute,
    Interval,
}

/// Target interval [t1, t2] and slope kind defining the average-slope
/// estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub t1: f64,
    pub t2: f64,
    pub weight: WeightKind,
    pub kind: SlopeKind,
}

impl EstimandSpec {
    fn validate(t1: f64, t2: f64) -> Result<()> {
        if !(t1.is_finite() && t2.is_finite()) || t1 < 0.0 || t1 >= t2 {
            return Err(Error::DomainError {
                what: "estimand interval",
                value: t2 - t1,
            });
        }
        Ok(())
    }

    /// Average slope from randomization to `t2`.
    pub fn total(t2: f64) -> Result<Self> {
        Self::validate(0.0, t2)?;
        Ok(Self {
            t1: 0.0,
            t2,
            weight: WeightKind::Uniform,
            kind: SlopeKind::Total,
        })
    }

    /// Average slope from the change point `tau0` to `t2`.
    pub fn chronic(tau0: f64, t2: f64) -> Result<Self> {
        Self::validate(tau0, t2)?;
        if tau0 <= 0.0 {
            return Err(Error::DomainError {
                what: "chronic slope start",
                value: tau0,
            });
        }
        Ok(Self {
            t1: tau0,
            t2,
            weight: WeightKind::Uniform,
            kind: SlopeKind::Chronic,
        })
    }

    /// Average slope over the acute window [0, tau0].
    pub fn acute(tau0: f64) -> Result<Self> {
        Self::validate(0.0, tau0)?;
        Ok(Self {
            t1: 0.0,
            t2: tau0,
            weight: WeightKind::Uniform,
            kind: SlopeKind::Acute,
        })
    }

    /// Average slope over an arbitrary interval.
    pub fn interval(t1: f64, t2: f64) -> Result<Self> {
        Self::validate(t1, t2)?;
        Ok(Self {
            t1,
            t2,
            weight: WeightKind::Uniform,
            kind: SlopeKind::Interval,
        })
    }
}

/// Per-arm slope with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmSlope {
    pub arm: ArmId,
    pub slope: f64,
    pub se: f64,
}

/// A fitted between-arm slope contrast with normal-approximation CI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeEstimate {
    /// Difference in average slope, target arm minus reference.
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub arm_slopes: Vec<ArmSlope>,
}

impl SlopeEstimate {
    pub fn from_parts(estimate: f64, se: f64, arm_slopes: Vec<ArmSlope>) -> Self {
        Self {
            estimate,
            se,
            ci_low: estimate - Z95 * se,
            ci_high: estimate + Z95 * se,
            arm_slopes,
        }
    }
}
