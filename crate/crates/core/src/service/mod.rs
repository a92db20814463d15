//! Read-mostly HTTP review service over a loaded corpus, its evidence,
//! exported attention traces and model predictions. The only mutation is
//! appending to the corrections ledger.

mod ledger;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CorrectionRecord, DataError, GapSample, Gender, Label, Mention};
use crate::evidence::{EvidenceSet, Span};
use crate::model::EvidenceTrace;
use crate::train::{gap_f1, Gold, PredictionRecord, ScoreReport};

pub use ledger::Ledger;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("ledger writer stopped")]
    WriterGone,
}

/// Everything the service reads. Immutable once built.
#[derive(Debug, Default)]
pub struct Corpus {
    pub samples: Vec<GapSample>,
    pub evidence: EvidenceSet,
    pub traces: HashMap<String, EvidenceTrace>,
    /// Named prediction sets, e.g. ("probert", ...), ("grep", ...).
    pub predictions: Vec<(String, Vec<PredictionRecord>)>,
}

struct AppState {
    corpus: Corpus,
    index: HashMap<String, usize>,
    predictions: Vec<(String, HashMap<String, [f64; 3]>)>,
    ledger: Ledger,
}

/// Cheap to clone; handlers share one state.
#[derive(Clone)]
pub struct Service(Arc<AppState>);

impl Service {
    /// Build the service, replaying any existing ledger at `ledger_path`.
    pub fn new(corpus: Corpus, ledger_path: PathBuf) -> Result<Self, ServiceError> {
        let mut index = HashMap::with_capacity(corpus.samples.len());
        for (i, s) in corpus.samples.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(ServiceError::DuplicateId(s.id.clone()));
            }
        }
        let ledger = Ledger::open(ledger_path, &corpus.samples)?;
        let predictions = corpus
            .predictions
            .iter()
            .map(|(name, ps)| (name.clone(), ps.iter().map(|p| (p.id.clone(), p.probs)).collect()))
            .collect();
        Ok(Self(Arc::new(AppState { corpus, index, predictions, ledger })))
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/samples", get(list_samples))
            .route("/samples/{id}", get(get_sample))
            .route("/samples/{id}/label", post(post_label))
            .route("/metrics", get(metrics))
            .with_state(self.clone())
    }

    pub fn ledger(&self) -> &Ledger {
        &self.0.ledger
    }
}

/// Serve until interrupted.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

impl AppState {
    fn lookup(&self, id: &str) -> Result<usize, ApiError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown sample {id}")))
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct Health {
    pub status: String,
    pub samples: usize,
    pub corrections: usize,
    pub providers: Vec<String>,
    pub models: Vec<String>,
}

async fn health(State(s): State<Service>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        samples: s.0.corpus.samples.len(),
        corrections: s.0.ledger.len(),
        providers: s.0.corpus.evidence.providers.clone(),
        models: s.0.predictions.iter().map(|(n, _)| n.clone()).collect(),
    })
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct SampleSummary {
    pub id: String,
    pub gold: Label,
    pub label: Label,
    pub corrected: bool,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct SamplePage {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<SampleSummary>,
}

async fn list_samples(State(s): State<Service>, page: Result<Query<Page>, axum::extract::rejection::QueryRejection>) -> ApiResult<SamplePage> {
    let Query(page) = page.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let limit = page.limit.clamp(1, 1000);
    let labels = s.0.ledger.labels();
    let items = s
        .0
        .corpus
        .samples
        .iter()
        .enumerate()
        .skip(page.offset)
        .take(limit)
        .map(|(i, x)| SampleSummary {
            id: x.id.clone(),
            gold: x.label(),
            label: labels[i],
            corrected: labels[i] != x.label(),
        })
        .collect();
    Ok(Json(SamplePage { total: labels.len(), offset: page.offset, items }))
}

/// A character range into the sample text, with the covered text.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SpanView {
    pub offset: usize,
    pub length: usize,
    pub text: String,
}

impl SpanView {
    fn of_span(text: &str, s: Span) -> Self {
        Self { offset: s.offset, length: s.length, text: text.chars().skip(s.offset).take(s.length).collect() }
    }

    fn of_mention(m: &Mention) -> Self {
        Self { offset: m.offset, length: m.char_len(), text: m.surface.clone() }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ClusterView {
    pub provider: String,
    /// Stable per provider across samples.
    pub color: usize,
    pub mentions: Vec<SpanView>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ProbRow {
    pub model: String,
    /// Over (A, B, NEITHER).
    pub probs: [f64; 3],
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SampleView {
    pub id: String,
    pub text: String,
    pub url: String,
    pub gender: Gender,
    pub pronoun: SpanView,
    pub a: SpanView,
    pub b: SpanView,
    pub gold: Label,
    pub label: Label,
    pub corrected: bool,
    pub corrections: Vec<CorrectionRecord>,
    pub clusters: Vec<ClusterView>,
    pub trace: Option<EvidenceTrace>,
    pub probs: Vec<ProbRow>,
}

async fn get_sample(State(s): State<Service>, Path(id): Path<String>) -> ApiResult<SampleView> {
    let st = &s.0;
    let i = st.lookup(&id)?;
    let x = &st.corpus.samples[i];
    let label = st.ledger.label(i);
    let ev = &st.corpus.evidence;
    let clusters = ev
        .get(&id)
        .iter()
        .map(|c| ClusterView {
            provider: c.provider.clone(),
            color: ev.providers.iter().position(|p| *p == c.provider).unwrap_or(ev.providers.len()),
            mentions: c.mentions.iter().map(|&m| SpanView::of_span(&x.text, m)).collect(),
        })
        .collect();
    let probs = st
        .predictions
        .iter()
        .filter_map(|(model, m)| m.get(&id).map(|&probs| ProbRow { model: model.clone(), probs }))
        .collect();
    Ok(Json(SampleView {
        id: id.clone(),
        text: x.text.clone(),
        url: x.url.clone(),
        gender: x.gender,
        pronoun: SpanView::of_mention(&x.pronoun),
        a: SpanView::of_mention(&x.a),
        b: SpanView::of_mention(&x.b),
        gold: x.label(),
        label,
        corrected: label != x.label(),
        corrections: st.ledger.records_for(&id),
        clusters,
        trace: st.corpus.traces.get(&id).cloned(),
        probs,
    }))
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct LabelRequest {
    pub new_label: Label,
    #[serde(default)]
    pub note: String,
}

async fn post_label(
    State(s): State<Service>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CorrectionRecord>), ApiError> {
    let i = s.0.lookup(&id)?;
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    match s.0.ledger.submit(i, id, req.new_label, req.note).await {
        Ok(Some(rec)) => Ok((StatusCode::CREATED, Json(rec))),
        Ok(None) => Err(ApiError(StatusCode::CONFLICT, format!("label is already {}", req.new_label))),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub model: String,
    pub report: ScoreReport,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct MetricsView {
    pub models: Vec<ModelScore>,
}

/// Scores of every loaded prediction set against the current labels.
async fn metrics(State(s): State<Service>) -> Json<MetricsView> {
    let labels = s.0.ledger.labels();
    let gold: Vec<Gold> = s
        .0
        .corpus
        .samples
        .iter()
        .zip(&labels)
        .map(|(x, &label)| Gold { id: x.id.clone(), label, gender: x.gender })
        .collect();
    let models = s
        .0
        .corpus
        .predictions
        .iter()
        .map(|(model, preds)| ModelScore { model: model.clone(), report: gap_f1(preds, &gold) })
        .collect();
    Json(MetricsView { models })
}
