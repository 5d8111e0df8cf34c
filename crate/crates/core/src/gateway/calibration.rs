//! Temperature scaling.
//!
//! Logits are divided by a scalar `T > 0` before the softmax. `T` is fitted by
//! minimizing the mean negative log-likelihood on a validation set with a
//! golden-section search over `[MIN_TEMPERATURE, MAX_TEMPERATURE]`. For a
//! binary head the NLL is convex in `1/T`, so it is unimodal in `T` and the
//! search converges to the constrained minimum.

use serde::{Deserialize, Serialize};

use super::{GatewayError, Logits};
use crate::corpus::Judgment;

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    temperature: f64,
}

impl CalibrationModel {
    /// Clamps `temperature` into the supported range; NaN maps to 1.
    pub fn new(temperature: f64) -> CalibrationModel {
        let t = if temperature.is_nan() {
            1.0
        } else {
            temperature
        };
        CalibrationModel {
            temperature: t.clamp(MIN_TEMPERATURE, MAX_TEMPERATURE),
        }
    }

    pub fn identity() -> CalibrationModel {
        CalibrationModel { temperature: 1.0 }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Default for CalibrationModel {
    fn default() -> Self {
        CalibrationModel::identity()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softmax(logits / T)`.
pub fn apply_temperature(
    logits: Logits,
    model: &CalibrationModel,
) -> Result<[f64; 2], GatewayError> {
    if !logits.iter().all(|l| l.is_finite()) {
        return Err(GatewayError::NonFiniteLogit { index: 0 });
    }
    let z = (logits[1] - logits[0]) / model.temperature;
    Ok([sigmoid(-z), sigmoid(z)])
}

/// `-ln sigmoid(m)` without overflow.
fn neg_log_sigmoid(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Mean negative log-likelihood of the labels under `softmax(logits / t)`.
pub fn mean_nll(logits: &[Logits], labels: &[Judgment], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(l, y)| {
            let margin = (l[y.index()] - l[y.other().index()]) / t;
            neg_log_sigmoid(margin)
        })
        .sum();
    total / logits.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationWarning {
    /// Fewer than two examples, or only one class present. The fitted value
    /// usually sits on a clamp boundary.
    DegenerateValidationSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub model: CalibrationModel,
    pub nll: f64,
    pub nll_at_one: f64,
    pub examples: usize,
    pub warning: Option<CalibrationWarning>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

pub fn fit_temperature(
    logits: &[Logits],
    labels: &[Judgment],
) -> Result<TemperatureFit, GatewayError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(GatewayError::InvalidValidationSet);
    }
    if let Some(index) = logits.iter().position(|l| !l.iter().all(|x| x.is_finite())) {
        return Err(GatewayError::NonFiniteLogit { index });
    }
    let nll = |t: f64| mean_nll(logits, labels, t);

    let (mut a, mut b) = (MIN_TEMPERATURE, MAX_TEMPERATURE);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (nll(c), nll(d));
    while b - a > 1e-9 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = nll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = nll(d);
        }
    }
    // T = 1 is kept unless something is strictly better; the bracket never
    // evaluates the endpoints themselves
    let mut best = (1.0, nll(1.0));
    for t in [(a + b) / 2.0, MIN_TEMPERATURE, MAX_TEMPERATURE] {
        let v = nll(t);
        if v < best.1 {
            best = (t, v);
        }
    }

    let has_both = labels.contains(&Judgment::Approval) && labels.contains(&Judgment::Dismissal);
    let warning = if logits.len() < 2 || !has_both {
        log::warn!(
            "temperature fitted on a degenerate validation set ({} examples)",
            logits.len()
        );
        Some(CalibrationWarning::DegenerateValidationSet)
    } else {
        None
    };
    Ok(TemperatureFit {
        model: CalibrationModel::new(best.0),
        nll: best.1,
        nll_at_one: nll(1.0),
        examples: logits.len(),
        warning,
    })
}

/// Exhaustive search over the clamp interval at the given step. Slow; used to
/// cross-check [`fit_temperature`].
pub fn grid_search_temperature(logits: &[Logits], labels: &[Judgment], step: f64) -> f64 {
    let steps = ((MAX_TEMPERATURE - MIN_TEMPERATURE) / step).round() as usize;
    let mut best = (MIN_TEMPERATURE, f64::INFINITY);
    for i in 0..=steps {
        let t = MIN_TEMPERATURE + i as f64 * step;
        let v = mean_nll(logits, labels, t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best.0
}
