//! Patient-level trial data shared by the inference engine and the designs.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A treatment arm, stored as a zero-based index into the arm universe.
///
/// Arms are printed and serialized with their one-based label (`Arm(0)` is
/// arm "1"), which is how trial reports and the service API refer to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Arm(pub usize);

impl Arm {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn label(self) -> usize {
        self.0 + 1
    }

    pub fn from_label(label: usize) -> Option<Arm> {
        label.checked_sub(1).map(Arm)
    }

    /// All arms of a universe of size `n`.
    pub fn all(n: usize) -> Vec<Arm> {
        (0..n).map(Arm).collect()
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Serialize for Arm {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(self.label() as u64)
    }
}

impl<'de> Deserialize<'de> for Arm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = u64::deserialize(d)?;
        Arm::from_label(label as usize)
            .ok_or_else(|| serde::de::Error::custom("arm labels start at 1"))
    }
}

/// One-based enrollment number of a patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub u32);

impl PatientId {
    pub fn from_index(index: usize) -> Self {
        PatientId(index as u32 + 1)
    }

    pub fn index(self) -> Option<usize> {
        (self.0 as usize).checked_sub(1)
    }
}

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("biomarker vector has {got} components, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("biomarker values must be finite")]
    NonFinite,
    #[error("arm {0} is outside the arm universe")]
    ArmOutOfRange(Arm),
}

pub(crate) fn check_vector(x: &[f64], n_markers: usize) -> Result<(), DataError> {
    if x.len() != n_markers {
        return Err(DataError::Dimension {
            expected: n_markers,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite);
    }
    Ok(())
}

/// Row-major `n × K` matrix of biomarker profiles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BiomarkerMatrix {
    n_markers: usize,
    values: Vec<f64>,
}

impl BiomarkerMatrix {
    pub fn new(n_markers: usize) -> Self {
        Self {
            n_markers,
            values: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(n_markers: usize, rows: &[R]) -> Result<Self, DataError> {
        let mut m = Self::new(n_markers);
        for row in rows {
            m.push(row.as_ref())?;
        }
        Ok(m)
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), DataError> {
        check_vector(x, self.n_markers)?;
        self.values.extend_from_slice(x);
        Ok(())
    }

    pub fn n_markers(&self) -> usize {
        self.n_markers
    }

    pub fn len(&self) -> usize {
        if self.n_markers == 0 {
            0
        } else {
            self.values.len() / self.n_markers
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_markers..(i + 1) * self.n_markers]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_markers + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_markers.max(1))
    }

    /// Observed `(min, max)` of every marker, or `None` when there are no rows.
    pub fn column_ranges(&self) -> Option<Vec<(f64, f64)>> {
        if self.is_empty() {
            return None;
        }
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); self.n_markers];
        for row in self.rows() {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
        Some(ranges)
    }
}

/// Everything the posterior needs about enrolled patients.
///
/// Every enrolled patient contributes biomarkers (and therefore moves the
/// conditional medians); only patients with an arm and an observed outcome
/// contribute to the outcome counts. `version` changes on every mutation and
/// identifies the snapshot a posterior was built from.
#[derive(Debug, Clone, Default)]
pub struct TrialData {
    markers: BiomarkerMatrix,
    arms: Vec<Option<Arm>>,
    outcomes: Vec<Option<bool>>,
    version: u64,
}

impl TrialData {
    pub fn new(n_markers: usize) -> Self {
        Self {
            markers: BiomarkerMatrix::new(n_markers),
            ..Default::default()
        }
    }

    pub fn push(&mut self, x: &[f64], arm: Option<Arm>, outcome: Option<bool>) -> Result<usize, DataError> {
        self.markers.push(x)?;
        self.arms.push(arm);
        self.outcomes.push(outcome);
        self.version += 1;
        Ok(self.arms.len() - 1)
    }

    pub(crate) fn set_outcome(&mut self, i: usize, y: bool) {
        self.outcomes[i] = Some(y);
        self.version += 1;
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn n_markers(&self) -> usize {
        self.markers.n_markers()
    }

    pub fn markers(&self) -> &BiomarkerMatrix {
        &self.markers
    }

    pub fn arm(&self, i: usize) -> Option<Arm> {
        self.arms[i]
    }

    pub fn outcome(&self, i: usize) -> Option<bool> {
        self.outcomes[i]
    }

    /// `(arm, outcome)` when the patient contributes to outcome counts.
    pub fn observed(&self, i: usize) -> Option<(Arm, bool)> {
        Some((self.arms[i]?, self.outcomes[i]?))
    }

    pub fn n_observed(&self) -> usize {
        (0..self.len()).filter(|&i| self.observed(i).is_some()).count()
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_serializes_with_one_based_label() {
        assert_eq!(serde_json::to_string(&Arm(0)).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Arm>("3").unwrap(), Arm(2));
        assert!(serde_json::from_str::<Arm>("0").is_err());
    }

    #[test]
    fn matrix_rejects_wrong_dimension() {
        let mut m = BiomarkerMatrix::new(2);
        assert_eq!(
            m.push(&[1.0]),
            Err(DataError::Dimension {
                expected: 2,
                got: 1
            })
        );
        assert_eq!(m.push(&[1.0, f64::NAN]), Err(DataError::NonFinite));
        m.push(&[1.0, -2.0]).unwrap();
        m.push(&[0.5, 3.0]).unwrap();
        assert_eq!(m.column_ranges().unwrap(), vec![(0.5, 1.0), (-2.0, 3.0)]);
    }

    #[test]
    fn version_moves_on_every_mutation() {
        let mut d = TrialData::new(1);
        let v0 = d.version();
        let i = d.push(&[0.0], Some(Arm(0)), None).unwrap();
        assert!(d.version() > v0);
        let v1 = d.version();
        d.set_outcome(i, true);
        assert!(d.version() > v1);
        assert_eq!(d.observed(i), Some((Arm(0), true)));
    }
}
