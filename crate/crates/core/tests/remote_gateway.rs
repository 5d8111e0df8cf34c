use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use perturbaudit::agreement::{embed_score, TokenEmbedder};
use perturbaudit::gateway::{
    predict_batch, CalibrationModel, Classifier, GatewayError, ReferenceClassifier, RemoteClient,
    RemoteConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Default)]
struct Behaviour {
    swap_labels: bool,
    /// Answer this many requests with 503 before serving.
    failures: usize,
    bad_request: bool,
    short_response: bool,
    require_header: Option<(&'static str, &'static str)>,
}

struct Mock {
    clf: ReferenceClassifier,
    behaviour: Behaviour,
    requests: AtomicUsize,
    max_batch_seen: AtomicUsize,
}

type Shared = Arc<Mock>;

fn gate(m: &Mock, headers: &HeaderMap) -> Result<(), (StatusCode, String)> {
    let n = m.requests.fetch_add(1, Ordering::SeqCst);
    if let Some((k, v)) = m.behaviour.require_header {
        if headers.get(k).and_then(|h| h.to_str().ok()) != Some(v) {
            return Err((StatusCode::UNAUTHORIZED, "missing header".into()));
        }
    }
    if n < m.behaviour.failures {
        return Err((StatusCode::SERVICE_UNAVAILABLE, "warming up".into()));
    }
    if m.behaviour.bad_request {
        return Err((StatusCode::BAD_REQUEST, "malformed".into()));
    }
    Ok(())
}

fn texts(body: &Value) -> Vec<String> {
    body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_string())
        .collect()
}

async fn predict(
    State(m): State<Shared>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    gate(&m, &headers)?;
    let texts = texts(&body);
    m.max_batch_seen.fetch_max(texts.len(), Ordering::SeqCst);
    let mut logits: Vec<[f64; 2]> = texts.iter().map(|t| m.clf.logits_for(t)).collect();
    if m.behaviour.short_response {
        logits.pop();
    }
    if m.behaviour.swap_labels {
        let swapped: Vec<[f64; 2]> = logits.iter().map(|l| [l[1], l[0]]).collect();
        return Ok(Json(
            json!({"logits": swapped, "label_order": ["approval", "dismissal"]}),
        ));
    }
    Ok(Json(
        json!({"logits": logits, "label_order": ["dismissal", "approval"]}),
    ))
}

/// One unit vector per whitespace token, by token length.
async fn embed(
    State(m): State<Shared>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    gate(&m, &headers)?;
    let embeddings: Vec<Vec<Vec<f64>>> = texts(&body)
        .iter()
        .map(|t| {
            t.split_whitespace()
                .map(|w| {
                    let mut v = vec![0.0; 6];
                    v[w.chars().count() % 6] = 1.0;
                    v
                })
                .collect()
        })
        .collect();
    Ok(Json(json!({ "embeddings": embeddings })))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "model": "mock"}))
}

/// Serves the mock on a background runtime and returns its base URL.
fn serve(clf: ReferenceClassifier, behaviour: Behaviour) -> (String, Shared) {
    let state = Arc::new(Mock {
        clf,
        behaviour,
        requests: AtomicUsize::new(0),
        max_batch_seen: AtomicUsize::new(0),
    });
    let app = Router::new()
        .route("/predict", post(predict))
        .route("/embed", post(embed))
        .route("/health", get(health))
        .with_state(state.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), state)
}

fn weights() -> ReferenceClassifier {
    ReferenceClassifier::new([("guilty", 2.0), ("innocent", -1.5), ("court", 0.25)], -0.1)
}

fn client(url: &str) -> RemoteClient {
    let mut cfg = RemoteConfig::new(url);
    cfg.backoff_base = Duration::from_millis(10);
    cfg.timeout = Duration::from_secs(10);
    RemoteClient::new(cfg).unwrap()
}

fn random_texts(n: usize) -> Vec<String> {
    let vocab = [
        "guilty", "innocent", "court", "der", "Kläger", "GUILTY", "la", "corte",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..n)
        .map(|_| {
            (0..rng.gen_range(0..12))
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[test]
fn remote_matches_in_process_reference() {
    let (url, state) = serve(weights(), Behaviour::default());
    let remote = client(&url);
    assert_eq!(remote.health().unwrap().model, "mock");
    let texts = random_texts(1000);
    let items: Vec<(String, &str)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("t{i}"), t.as_str()))
        .collect();
    let items: Vec<(&str, &str)> = items.iter().map(|(i, t)| (i.as_str(), *t)).collect();
    let cal = CalibrationModel::new(1.7);
    let got = predict_batch(&remote, &items, &cal).unwrap();
    let want = predict_batch(&weights(), &items, &cal).unwrap();
    assert_eq!(got.len(), 1000);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.instance_id, w.instance_id);
        assert!((g.logits[1] - w.logits[1]).abs() < 1e-9);
        assert!((g.probs[0] + g.probs[1] - 1.0).abs() < 1e-6);
        assert_eq!(g.predicted_label, w.predicted_label);
    }
    assert!(state.max_batch_seen.load(Ordering::SeqCst) <= 32);
}

#[test]
fn swapped_label_order_is_normalized() {
    let (url, _) = serve(
        weights(),
        Behaviour {
            swap_labels: true,
            ..Default::default()
        },
    );
    let l = client(&url).logits(&["guilty court"]).unwrap();
    assert_eq!(l, vec![[0.0, -0.1 + 2.0 + 0.25]]);
}

#[test]
fn transient_failures_are_retried() {
    let (url, state) = serve(
        weights(),
        Behaviour {
            failures: 2,
            ..Default::default()
        },
    );
    let l = client(&url).logits(&["guilty"]).unwrap();
    assert_eq!(l[0][1], 1.9);
    assert_eq!(state.requests.load(Ordering::SeqCst), 3);

    let (url, state) = serve(
        weights(),
        Behaviour {
            failures: 3,
            ..Default::default()
        },
    );
    let err = client(&url).logits(&["guilty"]).unwrap_err();
    assert!(matches!(err, GatewayError::ProtocolError(_)), "{err:?}");
    assert_eq!(state.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, state) = serve(
        weights(),
        Behaviour {
            bad_request: true,
            ..Default::default()
        },
    );
    let err = client(&url).logits(&["x"]).unwrap_err();
    assert!(
        matches!(err, GatewayError::ProtocolError(ref m) if m.contains("400")),
        "{err:?}"
    );
    assert_eq!(state.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn short_responses_are_rejected() {
    let (url, _) = serve(
        weights(),
        Behaviour {
            short_response: true,
            ..Default::default()
        },
    );
    let err = client(&url).logits(&["a", "b"]).unwrap_err();
    assert!(matches!(err, GatewayError::ProtocolError(_)));
}

#[test]
fn unreachable_service() {
    let mut cfg = RemoteConfig::new("http://127.0.0.1:9");
    cfg.backoff_base = Duration::from_millis(1);
    let err = RemoteClient::new(cfg).unwrap().logits(&["x"]).unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable(_)));
}

#[test]
fn auth_header_is_sent() {
    let behaviour = Behaviour {
        require_header: Some(("authorization", "Bearer s3cret")),
        ..Default::default()
    };
    let (url, _) = serve(weights(), behaviour);
    assert!(client(&url).logits(&["x"]).is_err());
    let mut cfg = RemoteConfig::new(&url);
    cfg.auth_header = Some(("Authorization".into(), "Bearer s3cret".into()));
    assert!(RemoteClient::new(cfg).unwrap().logits(&["x"]).is_ok());
}

#[test]
fn embeddings_feed_the_agreement_score() {
    let (url, _) = serve(weights(), Behaviour::default());
    let remote = client(&url);
    let vecs = remote.embed(&["a bb ccc", ""]).unwrap();
    assert_eq!(vecs[0].len(), 3);
    assert!(vecs[1].is_empty());
    assert!((embed_score("ab cd", "ab cd", &remote).unwrap() - 1.0).abs() < 1e-12);
    // "ab" and "xyz" land on different axes
    assert_eq!(embed_score("ab", "xyz", &remote).unwrap(), 0.0);
}
