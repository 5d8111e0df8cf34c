use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Classifier, GatewayError, Logits};

/// Bag-of-tokens linear classifier used as an analytic oracle.
///
/// The approval logit is `bias + sum(weight(token))` over the lowercased
/// whitespace tokens of the text; the dismissal logit is always 0. Removing a
/// span therefore moves the approval logit by exactly minus the weights of
/// its tokens.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceClassifier {
    weights: HashMap<String, f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WeightsFile {
    Full {
        #[serde(default)]
        bias: f64,
        weights: BTreeMap<String, f64>,
    },
    Flat(BTreeMap<String, f64>),
}

impl ReferenceClassifier {
    pub fn new<K: AsRef<str>>(weights: impl IntoIterator<Item = (K, f64)>, bias: f64) -> Self {
        let mut map = HashMap::new();
        for (k, w) in weights {
            *map.entry(k.as_ref().to_lowercase()).or_insert(0.0) += w;
        }
        ReferenceClassifier { weights: map, bias }
    }

    /// Accepts `{"bias": b, "weights": {token: w}}` or a flat `{token: w}` map.
    pub fn from_json(data: &str) -> Result<Self, GatewayError> {
        let file: WeightsFile =
            serde_json::from_str(data).map_err(|e| GatewayError::Weights(e.to_string()))?;
        Ok(match file {
            WeightsFile::Full { bias, weights } => ReferenceClassifier::new(weights, bias),
            WeightsFile::Flat(weights) => ReferenceClassifier::new(weights, 0.0),
        })
    }

    pub fn to_json(&self) -> String {
        let file = WeightsFile::Full {
            bias: self.bias,
            weights: self.weights.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("weights serialize")
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(0.0)
    }

    /// Sum of token weights of `text`, without the bias.
    pub fn weight_sum(&self, text: &str) -> f64 {
        text.split_whitespace().map(|t| self.weight(t)).sum()
    }

    pub fn approval_logit(&self, text: &str) -> f64 {
        self.bias + self.weight_sum(text)
    }

    pub fn logits_for(&self, text: &str) -> Logits {
        [0.0, self.approval_logit(text)]
    }
}

impl Classifier for ReferenceClassifier {
    fn name(&self) -> String {
        "reference".to_string()
    }

    fn logits(&self, texts: &[&str]) -> Result<Vec<Logits>, GatewayError> {
        Ok(texts.iter().map(|t| self.logits_for(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_lowercased_whitespace_splits() {
        let clf = ReferenceClassifier::new([("Guilty", 2.0), ("court.", -0.5)], 0.25);
        assert_eq!(
            clf.approval_logit("GUILTY\tguilty  court. court"),
            0.25 + 4.0 - 0.5
        );
        assert_eq!(clf.logits_for(""), [0.0, 0.25]);
    }

    #[test]
    fn weight_files() {
        let flat = ReferenceClassifier::from_json(r#"{"guilty": 2}"#).unwrap();
        assert_eq!(flat.logits_for("guilty"), [0.0, 2.0]);
        let full =
            ReferenceClassifier::from_json(r#"{"bias": -1, "weights": {"a": 0.5}}"#).unwrap();
        assert_eq!(full.approval_logit("a a"), 0.0);
        assert_eq!(
            ReferenceClassifier::from_json(&full.to_json()).unwrap(),
            full
        );
        assert!(matches!(
            ReferenceClassifier::from_json("[1,2]"),
            Err(GatewayError::Weights(_))
        ));
    }
}
