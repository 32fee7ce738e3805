//! Loss functions on binary outcomes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Log,
    CrossEntropy,
    ZeroOne,
    Squared,
    Hinge,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "log" => Self::Log,
            "cross-entropy" => Self::CrossEntropy,
            "zero-one" => Self::ZeroOne,
            "squared" => Self::Squared,
            "hinge" => Self::Hinge,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Log => "log",
            Self::CrossEntropy => "cross-entropy",
            Self::ZeroOne => "zero-one",
            Self::Squared => "squared",
            Self::Hinge => "hinge",
        }
    }
}

/// A loss and, for bounded kinds, its bound `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub bound: Option<f64>,
}

impl LossSpec {
    pub fn log() -> Self {
        Self { kind: LossKind::Log, bound: None }
    }

    pub fn new(kind: LossKind, bound: Option<f64>) -> Result<Self> {
        if !kind_is_density(kind) {
            match bound {
                Some(m) if m.is_finite() && m > 0.0 => {}
                _ => return Err(Error::Invalid(format!("{} loss needs a positive bound M", kind.name()))),
            }
        }
        Ok(Self { kind, bound })
    }

    /// Log and cross-entropy losses score a predictive density directly.
    pub fn is_density(&self) -> bool {
        kind_is_density(self.kind)
    }

    /// Loss of action `b` on label `y` (bounded kinds only).
    pub fn action_loss(&self, b: f64, y: u8) -> f64 {
        let yf = f64::from(y);
        match self.kind {
            LossKind::ZeroOne => f64::from(u8::from((b >= 0.5) != (y == 1))),
            LossKind::Squared => (b - yf) * (b - yf),
            LossKind::Hinge => (1.0 - (2.0 * yf - 1.0) * b).max(0.0),
            LossKind::Log | LossKind::CrossEntropy => {
                let p = if y == 1 { b } else { 1.0 - b };
                -p.ln()
            }
        }
    }

    /// Expected loss of `b` when `P(y = 1) = p`.
    pub fn expected_loss(&self, b: f64, p: f64) -> f64 {
        p * self.action_loss(b, 1) + (1.0 - p) * self.action_loss(b, 0)
    }

    /// Default finite action set for bounded kinds.
    pub fn default_candidates(&self) -> Vec<f64> {
        match self.kind {
            LossKind::ZeroOne => vec![0.0, 1.0],
            LossKind::Squared => (0..=100).map(|i| i as f64 / 100.0).collect(),
            LossKind::Hinge => (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect(),
            LossKind::Log | LossKind::CrossEntropy => (1..100).map(|i| i as f64 / 100.0).collect(),
        }
    }

    /// Action minimizing expected loss; ties go to the lowest index.
    pub fn best_action(&self, candidates: &[f64], p: f64) -> Result<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for &b in candidates {
            let l = self.expected_loss(b, p);
            if best.is_none_or(|(_, bl)| l < bl) {
                best = Some((b, l));
            }
        }
        best.ok_or(Error::EmptyCandidates)
    }
}

fn kind_is_density(kind: LossKind) -> bool {
    matches!(kind, LossKind::Log | LossKind::CrossEntropy)
}
