use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Per-slice attention weights for one volume: non-negative, summing to 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub patient_id: String,
    pub weights: Vec<f64>,
}

impl AttentionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(EvalError::Contract(format!("{}: no attention weights", self.patient_id)));
        }
        if let Some(w) = self.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(EvalError::Contract(format!("{}: invalid weight {w}", self.patient_id)));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(EvalError::Contract(format!("{}: weights sum to {sum}", self.patient_id)));
        }
        Ok(())
    }

    /// Shannon entropy in nats (`0·ln 0 = 0`).
    pub fn entropy(&self) -> f64 {
        -self.weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }

    /// Index of the largest weight; the first one wins ties.
    pub fn argmax(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub patient_id: String,
    pub weights: Vec<f64>,
    pub entropy: f64,
    pub max_slice: usize,
}

/// Validates every record and attaches entropy and peak-slice summaries.
pub fn export_attention(records: &[AttentionRecord]) -> Result<Vec<AttentionExport>> {
    records
        .iter()
        .map(|r| {
            r.validate()?;
            Ok(AttentionExport {
                patient_id: r.patient_id.clone(),
                weights: r.weights.clone(),
                entropy: r.entropy(),
                max_slice: r.argmax(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(weights: Vec<f64>) -> AttentionRecord {
        AttentionRecord { patient_id: "p".into(), weights }
    }

    #[test]
    fn uniform_and_one_hot() {
        let e = export_attention(&[rec(vec![1.0 / 16.0; 16])]).unwrap();
        assert!((e[0].entropy - 16f64.ln()).abs() < 1e-12);
        assert!((e[0].entropy - 2.7726).abs() < 1e-4);
        assert_eq!(e[0].max_slice, 0);

        let mut hot = vec![0.0; 5];
        hot[3] = 1.0;
        let e = export_attention(&[rec(hot)]).unwrap();
        assert_eq!(e[0].entropy, 0.0);
        assert_eq!(e[0].max_slice, 3);
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(export_attention(&[rec(vec![0.5, 0.4])]).is_err());
        assert!(export_attention(&[rec(vec![1.5, -0.5])]).is_err());
        assert!(export_attention(&[rec(vec![])]).is_err());
        assert!(export_attention(&[rec(vec![0.5, 0.5 + 5e-10])]).is_ok());
    }
}
