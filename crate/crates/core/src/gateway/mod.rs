//! Prediction access for any binary classifier.
//!
//! Backends produce raw logits in `(dismissal, approval)` order; this module
//! turns them into calibrated [`Prediction`]s. Two backends exist: the
//! in-process [`ReferenceClassifier`], whose response to any occlusion is
//! known in closed form, and [`RemoteClient`], which speaks the HTTP wire
//! protocol of an external model service.

mod calibration;
mod reference;
mod remote;

pub use calibration::{
    apply_temperature, fit_temperature, grid_search_temperature, mean_nll, CalibrationModel,
    CalibrationWarning, TemperatureFit, MAX_TEMPERATURE, MIN_TEMPERATURE,
};
pub use reference::ReferenceClassifier;
pub use remote::{Health, RemoteClient, RemoteConfig, LABEL_ORDER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Judgment;

/// Raw classifier output, index 0 = dismissal, index 1 = approval.
pub type Logits = [f64; 2];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("model backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("model backend protocol error: {0}")]
    ProtocolError(String),
    #[error("non-finite logit for input {index}")]
    NonFiniteLogit { index: usize },
    #[error("no texts to predict")]
    EmptyInput,
    #[error("validation set is empty or logits and labels differ in length")]
    InvalidValidationSet,
    #[error("reference weights: {0}")]
    Weights(String),
}

/// Calibrated prediction for one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub logits: Logits,
    pub probs: [f64; 2],
    pub predicted_label: Judgment,
    /// Calibrated probability of `predicted_label`.
    pub confidence: f64,
    /// Temperature the probabilities were computed with.
    pub temperature: f64,
}

impl Prediction {
    pub fn from_logits(
        instance_id: impl Into<String>,
        logits: Logits,
        calibration: &CalibrationModel,
    ) -> Result<Prediction, GatewayError> {
        let probs = apply_temperature(logits, calibration)?;
        // ties go to dismissal, like argmax over [dismissal, approval]
        let predicted_label = if probs[1] > probs[0] {
            Judgment::Approval
        } else {
            Judgment::Dismissal
        };
        Ok(Prediction {
            instance_id: instance_id.into(),
            logits,
            probs,
            predicted_label,
            confidence: probs[predicted_label.index()],
            temperature: calibration.temperature(),
        })
    }

    pub fn prob(&self, class: Judgment) -> f64 {
        self.probs[class.index()]
    }
}

/// Anything that maps texts to `(dismissal, approval)` logits.
pub trait Classifier: Sync {
    fn name(&self) -> String;

    /// One logit pair per text, in input order.
    fn logits(&self, texts: &[&str]) -> Result<Vec<Logits>, GatewayError>;
}

pub enum Backend {
    Reference(ReferenceClassifier),
    Remote(RemoteClient),
}

impl Classifier for Backend {
    fn name(&self) -> String {
        match self {
            Backend::Reference(r) => r.name(),
            Backend::Remote(r) => r.name(),
        }
    }

    fn logits(&self, texts: &[&str]) -> Result<Vec<Logits>, GatewayError> {
        match self {
            Backend::Reference(r) => r.logits(texts),
            Backend::Remote(r) => r.logits(texts),
        }
    }
}

/// Predicts `(instance_id, text)` pairs, preserving order.
pub fn predict_batch<C: Classifier + ?Sized>(
    classifier: &C,
    items: &[(&str, &str)],
    calibration: &CalibrationModel,
) -> Result<Vec<Prediction>, GatewayError> {
    if items.is_empty() {
        return Err(GatewayError::EmptyInput);
    }
    let texts: Vec<&str> = items.iter().map(|(_, t)| *t).collect();
    let logits = classifier.logits(&texts)?;
    if logits.len() != items.len() {
        return Err(GatewayError::ProtocolError(format!(
            "expected {} logit pairs, got {}",
            items.len(),
            logits.len()
        )));
    }
    items
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(index, ((id, _), l))| {
            if !l.iter().all(|x| x.is_finite()) {
                return Err(GatewayError::NonFiniteLogit { index });
            }
            Prediction::from_logits(*id, l, calibration)
        })
        .collect()
}
