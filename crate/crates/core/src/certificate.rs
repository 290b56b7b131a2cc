//! Machine-readable verdicts of the kernel and semigroup checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateKind {
    MassConservation,
    EquiIntegrability,
    R1Threshold,
    Miyadera,
    Domination,
    Gronwall,
    MomentInequality,
    Commutation,
    Lipschitz,
    /// Mass ledger of a trajectory reconciles.
    MassLedger,
    /// Measured Picard factor against the predicted one.
    PicardContraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Result of one check.
///
/// `margin` is a signed slack: positive (or zero for non-strict checks) means
/// the condition holds with that much room, negative means it is violated by
/// that much. `statistic` carries the raw measured quantity (worst deviation,
/// largest ratio, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub verdict: Verdict,
    pub margin: f64,
    pub statistic: f64,
    /// Coordinates of the worst sample; meaning depends on `kind`.
    pub worst_point: Vec<f64>,
    pub samples_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Certificate {
    /// Builds a certificate whose verdict follows from the margin.
    /// Strict checks require `margin > 0`, others `margin >= 0`.
    pub fn from_margin(
        kind: CertificateKind,
        margin: f64,
        statistic: f64,
        worst_point: Vec<f64>,
        samples_used: usize,
        strict: bool,
    ) -> Self {
        let ok = if strict { margin > 0.0 } else { margin >= 0.0 };
        Self {
            kind,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            margin,
            statistic,
            worst_point,
            samples_used,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Forces a failing verdict (used for precondition refusals).
    pub fn refused(kind: CertificateKind, reason: impl Into<String>) -> Self {
        Self {
            kind,
            verdict: Verdict::Fail,
            margin: f64::NEG_INFINITY,
            statistic: f64::NAN,
            worst_point: Vec::new(),
            samples_used: 0,
            notes: vec![reason.into()],
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// Margin sign agrees with verdict.
    pub fn is_consistent(&self) -> bool {
        match self.verdict {
            Verdict::Pass => self.margin >= 0.0,
            Verdict::Fail => !(self.margin > 0.0),
        }
    }
}
