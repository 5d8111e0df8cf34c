//! HTTP client for an external model service.
//!
//! Wire protocol, JSON bodies:
//!
//! ```text
//! POST /predict  {"texts": [...]}  -> {"logits": [[d, a], ...], "label_order": ["dismissal", "approval"]}
//! POST /embed    {"texts": [...]}  -> {"embeddings": [[[f, ...], ...], ...]}
//! GET  /health                     -> {"status": "ok", "model": "<name>"}
//! ```
//!
//! Texts are sent in chunks of at most `max_batch`, with up to `concurrency`
//! chunks in flight. Transport failures and 5xx responses are retried with
//! exponential backoff; results come back in input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Classifier, GatewayError, Logits};
use crate::agreement::{EmbedError, TokenEmbedder, TokenVectors};

pub const LABEL_ORDER: [&str; 2] = ["dismissal", "approval"];

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra header sent with every request, e.g. `("Authorization", "Bearer ...")`.
    pub auth_header: Option<(String, String)>,
    pub max_batch: usize,
    pub concurrency: usize,
    pub attempts: u32,
    pub backoff_base: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            auth_header: None,
            max_batch: 32,
            concurrency: 8,
            attempts: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub model: String,
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct PredictResponse {
    logits: Vec<Vec<f64>>,
    label_order: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<Vec<f64>>>,
}

pub struct RemoteClient {
    config: RemoteConfig,
    http: Client,
}

enum Attempt {
    Retry(GatewayError),
    Fatal(GatewayError),
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let http = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        Ok(RemoteClient { config, http })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn send_once<T: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&TextsRequest>,
    ) -> Result<T, Attempt> {
        let mut req = match body {
            Some(b) => self.http.post(self.url(path)).json(b),
            None => self.http.get(self.url(path)),
        };
        if let Some((name, value)) = &self.config.auth_header {
            req = req.header(name.as_str(), value.as_str());
        }
        let resp = req
            .send()
            .map_err(|e| Attempt::Retry(GatewayError::BackendUnreachable(e.to_string())))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retry(GatewayError::ProtocolError(format!(
                "{path}: HTTP {status}"
            ))));
        }
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(GatewayError::ProtocolError(format!(
                "{path}: HTTP {status}: {detail}"
            ))));
        }
        resp.json::<T>()
            .map_err(|e| Attempt::Fatal(GatewayError::ProtocolError(format!("{path}: {e}"))))
    }

    fn send<T: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&TextsRequest>,
    ) -> Result<T, GatewayError> {
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.backoff_base;
        for attempt in 1..=attempts {
            match self.send_once(path, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt == attempts => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!(
                        "{path} attempt {attempt}/{attempts} failed: {e}; retrying in {delay:?}"
                    );
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    pub fn health(&self) -> Result<Health, GatewayError> {
        let h: Health = self.send("/health", None)?;
        if h.status != "ok" {
            return Err(GatewayError::ProtocolError(format!(
                "service status {:?}",
                h.status
            )));
        }
        Ok(h)
    }

    fn predict_chunk(&self, texts: &[&str]) -> Result<Vec<Logits>, GatewayError> {
        let resp: PredictResponse = self.send("/predict", Some(&TextsRequest { texts }))?;
        let swap = match resp
            .label_order
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()[..]
        {
            ["dismissal", "approval"] => false,
            ["approval", "dismissal"] => true,
            _ => {
                return Err(GatewayError::ProtocolError(format!(
                    "unsupported label_order {:?}",
                    resp.label_order
                )))
            }
        };
        if resp.logits.len() != texts.len() {
            return Err(GatewayError::ProtocolError(format!(
                "sent {} texts, received {} logit rows",
                texts.len(),
                resp.logits.len()
            )));
        }
        resp.logits
            .into_iter()
            .enumerate()
            .map(|(index, row)| {
                let [a, b]: [f64; 2] = row.try_into().map_err(|r: Vec<f64>| {
                    GatewayError::ProtocolError(format!("logit row of length {}", r.len()))
                })?;
                if !a.is_finite() || !b.is_finite() {
                    return Err(GatewayError::NonFiniteLogit { index });
                }
                Ok(if swap { [b, a] } else { [a, b] })
            })
            .collect()
    }

    /// Runs `f` over chunks of `texts` on up to `concurrency` threads and
    /// concatenates the results in input order.
    fn chunked<T: Send>(
        &self,
        texts: &[&str],
        f: impl Fn(&[&str]) -> Result<Vec<T>, GatewayError> + Sync,
    ) -> Result<Vec<T>, GatewayError> {
        let chunks: Vec<&[&str]> = texts.chunks(self.config.max_batch.max(1)).collect();
        type Slot<T> = Mutex<Option<Result<Vec<T>, GatewayError>>>;
        let slots: Vec<Slot<T>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.clamp(1, chunks.len().max(1));
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunks.len() {
                        break;
                    }
                    let r = f(chunks[i]);
                    let failed = r.is_err();
                    *slots[i].lock().expect("slot lock") = Some(r);
                    if failed {
                        // stop handing out new chunks
                        next.store(chunks.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for (i, slot) in slots.into_iter().enumerate() {
            match slot.into_inner().expect("slot lock") {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(GatewayError::ProtocolError(format!(
                        "chunk {i} was not processed"
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<TokenVectors>, GatewayError> {
        self.chunked(texts, |chunk| {
            let resp: EmbedResponse = self.send("/embed", Some(&TextsRequest { texts: chunk }))?;
            if resp.embeddings.len() != chunk.len() {
                return Err(GatewayError::ProtocolError(format!(
                    "sent {} texts, received {} embeddings",
                    chunk.len(),
                    resp.embeddings.len()
                )));
            }
            Ok(resp.embeddings)
        })
    }
}

impl Classifier for RemoteClient {
    fn name(&self) -> String {
        format!("remote:{}", self.config.base_url)
    }

    fn logits(&self, texts: &[&str]) -> Result<Vec<Logits>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.chunked(texts, |chunk| self.predict_chunk(chunk))
    }
}

impl TokenEmbedder for RemoteClient {
    fn embed(&self, texts: &[&str]) -> Result<Vec<TokenVectors>, EmbedError> {
        self.embed_texts(texts)
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))
    }
}
