use serde::{Deserialize, Serialize};

/// Counter-example recorded by a failed property check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    /// `(time index, node index)` for space-time checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<(usize, usize)>,
    pub margin: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<Vec<f64>>,
}

/// Outcome of a randomized or exhaustive inequality check.
///
/// `min_margin` is the smallest `lhs - rhs` seen (negative means the
/// inequality was violated before tolerance was applied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub failures: usize,
    pub min_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl PropertyReport {
    pub(crate) fn new(property: impl Into<String>) -> Self {
        PropertyReport {
            property: property.into(),
            trials: 0,
            failures: 0,
            min_margin: f64::INFINITY,
            witness: None,
            skipped: None,
        }
    }

    pub(crate) fn skipped(property: impl Into<String>, reason: impl Into<String>) -> Self {
        PropertyReport {
            skipped: Some(reason.into()),
            ..Self::new(property)
        }
    }

    /// Records one trial; `ok` is the tolerance-adjusted verdict.
    pub(crate) fn record(&mut self, margin: f64, ok: bool, witness: impl FnOnce() -> Witness) {
        self.trials += 1;
        if margin < self.min_margin {
            self.min_margin = margin;
        }
        if !ok {
            self.failures += 1;
            let worse = self.witness.as_ref().is_none_or(|w| margin < w.margin);
            if worse {
                self.witness = Some(witness());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }
}
