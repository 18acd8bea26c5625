//! HTTP service for reviewing properties before question generation.
//!
//! Decisions are appended to the same ledger file the batch filter uses, so
//! the next `generate` run sees them.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use tailqa_core::backend::MockQuestionBackend;
use tailqa_core::error::FilterError;
use tailqa_core::filter::{Decision, LedgerEntry, LedgerFile, Screener, Suggestion, Verdict, VerdictSource};
use tailqa_core::generate::{qid_for, GenerationOutcome, Generator, PromptTemplate};
use tailqa_core::kg::{Catalog, PropertyId, Triplet};
use tailqa_core::sampler::Candidate;
use tailqa_core::text::derive_seed;

#[derive(Debug, thiserror::Error)]
pub enum TriageError {
    #[error("ledger: {0}")]
    Ledger(#[from] FilterError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageConfig {
    pub bind: SocketAddr,
    pub sample_size: usize,
    pub preview_count: usize,
    pub seed: u64,
    pub default_page_size: usize,
    pub max_page_size: usize,
    /// Directory of built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            sample_size: 5,
            preview_count: 3,
            seed: 0,
            default_page_size: 20,
            max_page_size: 200,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Kept,
    Rejected,
}

impl std::str::FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Status::Pending),
            "kept" => Ok(Status::Kept),
            "rejected" => Ok(Status::Rejected),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTriplet {
    pub subject: String,
    pub property: String,
    pub object: String,
    pub subject_label: String,
    pub property_label: String,
    pub object_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageCard {
    pub property_id: PropertyId,
    pub label: String,
    pub triplet_count: usize,
    pub suggestion: Suggestion,
    pub samples: Vec<SampleTriplet>,
    pub preview_questions: Vec<String>,
    pub status: Status,
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardPage {
    pub items: Vec<TriageCard>,
    pub page: usize,
    pub page_size: usize,
    pub total_items: usize,
    pub total_pages: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pending: usize,
    pub kept: usize,
    pub rejected: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub pending: usize,
    pub kept: usize,
    pub rejected: usize,
    pub total: usize,
    pub triplets: Counts,
}

/// Static part of a card, computed once at startup.
#[derive(Debug, Clone)]
struct CardBase {
    label: String,
    triplet_count: usize,
    suggestion: Suggestion,
    samples: Vec<SampleTriplet>,
    preview_questions: Vec<String>,
}

pub struct TriageState {
    cards: BTreeMap<PropertyId, CardBase>,
    ledger: Mutex<LedgerFile>,
    config: TriageConfig,
}

fn render(t: &Triplet, catalog: &Catalog) -> SampleTriplet {
    let label = |s: Option<&str>, fallback: &str| s.unwrap_or(fallback).to_owned();
    SampleTriplet {
        subject: t.subject.to_string(),
        property: t.property.to_string(),
        object: t.object.value().to_owned(),
        subject_label: label(catalog.entity(&t.subject).map(|e| e.label.as_str()), t.subject.as_str()),
        property_label: label(catalog.property(&t.property).map(|p| p.label.as_str()), t.property.as_str()),
        object_label: label(catalog.object_label(&t.object), t.object.value()),
    }
}

impl TriageState {
    /// Builds cards for every property that occurs among `candidates`.
    pub fn new(
        catalog: &Catalog,
        candidates: &[Candidate],
        screener: &Screener,
        ledger: LedgerFile,
        config: TriageConfig,
    ) -> Self {
        let mut by_property: BTreeMap<PropertyId, Vec<&Candidate>> = BTreeMap::new();
        for c in candidates {
            by_property.entry(c.triplet.property.clone()).or_default().push(c);
        }
        let template = PromptTemplate::default();
        let generator = Generator {
            template: &template,
            catalog,
            backend: &MockQuestionBackend,
            attempts: 1,
        };
        let mut cards = BTreeMap::new();
        for (pid, mut rows) in by_property {
            rows.sort_by(|a, b| a.triplet.cmp(&b.triplet));
            let triplets: Vec<Triplet> = rows.iter().map(|c| c.triplet.clone()).collect();
            let fallback = tailqa_core::kg::Property {
                id: pid.clone(),
                label: pid.to_string(),
            };
            let property = catalog.property(&pid).unwrap_or(&fallback);
            let suggestion = screener.screen(property, &triplets, catalog);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, pid.as_str()));
            let n = config.sample_size.min(rows.len());
            let mut picks = rand::seq::index::sample(&mut rng, rows.len(), n).into_vec();
            picks.sort_unstable();
            let samples: Vec<SampleTriplet> = picks.iter().map(|&i| render(&rows[i].triplet, catalog)).collect();
            let preview_questions = picks
                .iter()
                .take(config.preview_count)
                .enumerate()
                .filter_map(|(j, &i)| {
                    match generator.generate_question(qid_for("preview", j), rows[i]) {
                        GenerationOutcome::Generated(item) => Some(item.question),
                        GenerationOutcome::Failed(_) => None,
                    }
                })
                .collect();
            cards.insert(
                pid,
                CardBase {
                    label: property.label.clone(),
                    triplet_count: rows.len(),
                    suggestion,
                    samples,
                    preview_questions,
                },
            );
        }
        Self {
            cards,
            ledger: Mutex::new(ledger),
            config,
        }
    }

    pub fn config(&self) -> &TriageConfig {
        &self.config
    }

    fn verdicts(&self) -> BTreeMap<PropertyId, (Status, Verdict)> {
        let ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        ledger
            .ledger()
            .effective_map()
            .into_iter()
            .map(|(p, v)| {
                let status = match (v.source, v.decision) {
                    (VerdictSource::Heuristic, _) => Status::Pending,
                    (VerdictSource::Human, Decision::Keep) => Status::Kept,
                    (VerdictSource::Human, Decision::Reject) => Status::Rejected,
                };
                (p, (status, v))
            })
            .collect()
    }

    fn card(&self, pid: &PropertyId, base: &CardBase, verdict: Option<&(Status, Verdict)>) -> TriageCard {
        TriageCard {
            property_id: pid.clone(),
            label: base.label.clone(),
            triplet_count: base.triplet_count,
            suggestion: base.suggestion.clone(),
            samples: base.samples.clone(),
            preview_questions: base.preview_questions.clone(),
            status: verdict.map_or(Status::Pending, |(s, _)| *s),
            verdict: verdict.map(|(_, v)| v.clone()),
        }
    }

    /// Cards ordered pending first, then by descending triplet count and id.
    pub fn cards(&self, status: Option<Status>) -> Vec<TriageCard> {
        let verdicts = self.verdicts();
        let mut cards: Vec<TriageCard> = self
            .cards
            .iter()
            .map(|(pid, base)| self.card(pid, base, verdicts.get(pid)))
            .filter(|c| status.is_none_or(|s| c.status == s))
            .collect();
        cards.sort_by(|a, b| {
            (a.status != Status::Pending)
                .cmp(&(b.status != Status::Pending))
                .then(b.triplet_count.cmp(&a.triplet_count))
                .then(a.property_id.cmp(&b.property_id))
        });
        cards
    }

    pub fn page(&self, status: Option<Status>, page: usize, page_size: usize) -> CardPage {
        let all = self.cards(status);
        let total_items = all.len();
        CardPage {
            items: all
                .into_iter()
                .skip((page - 1).saturating_mul(page_size))
                .take(page_size)
                .collect(),
            page,
            page_size,
            total_items,
            total_pages: total_items.div_ceil(page_size),
        }
    }

    pub fn stats(&self) -> Stats {
        let mut props = Counts::default();
        let mut triplets = Counts::default();
        for card in self.cards(None) {
            let (p, t) = match card.status {
                Status::Pending => (&mut props.pending, &mut triplets.pending),
                Status::Kept => (&mut props.kept, &mut triplets.kept),
                Status::Rejected => (&mut props.rejected, &mut triplets.rejected),
            };
            *p += 1;
            *t += card.triplet_count;
            props.total += 1;
            triplets.total += card.triplet_count;
        }
        Stats {
            pending: props.pending,
            kept: props.kept,
            rejected: props.rejected,
            total: props.total,
            triplets,
        }
    }

    /// Appends a human decision and returns the refreshed card.
    pub fn decide(&self, pid: &PropertyId, verdict: Verdict) -> Result<Option<TriageCard>, FilterError> {
        let Some(base) = self.cards.get(pid) else {
            return Ok(None);
        };
        {
            let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
            ledger.append(LedgerEntry::new(pid.clone(), &verdict, Utc::now()))?;
        }
        let verdicts = self.verdicts();
        Ok(Some(self.card(pid, base, verdicts.get(pid))))
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    page: Option<String>,
    page_size: Option<String>,
}

fn parse_positive(raw: Option<&str>, name: &str, default: usize, max: usize) -> Result<usize, String> {
    let Some(raw) = raw else {
        return Ok(default);
    };
    match raw.parse::<usize>() {
        Ok(n) if n >= 1 && n <= max => Ok(n),
        _ => Err(format!("{name} must be an integer in 1..={max}")),
    }
}

async fn list_properties(State(state): State<Arc<TriageState>>, query: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let Ok(Query(q)) = query else {
        return error(StatusCode::BAD_REQUEST, "malformed query string");
    };
    let status = match q.status.as_deref().map(str::parse::<Status>).transpose() {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let cfg = state.config();
    let page = match parse_positive(q.page.as_deref(), "page", 1, usize::MAX) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let page_size = match parse_positive(q.page_size.as_deref(), "page_size", cfg.default_page_size, cfg.max_page_size) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    Json(state.page(status, page, page_size)).into_response()
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    verdict: Decision,
    #[serde(default)]
    reason: String,
}

async fn post_decision(
    State(state): State<Arc<TriageState>>,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Response {
    let Ok(pid) = PropertyId::new(id.clone()) else {
        return error(StatusCode::NOT_FOUND, format!("unknown property {id}"));
    };
    if !state.cards.contains_key(&pid) {
        return error(StatusCode::NOT_FOUND, format!("unknown property {id}"));
    }
    let body = match body {
        Ok(Json(b)) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let verdict = match Verdict::human(body.verdict, body.reason) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let state2 = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || state2.decide(&pid, verdict)).await;
    match result {
        Ok(Ok(Some(card))) => Json(card).into_response(),
        Ok(Ok(None)) => error(StatusCode::NOT_FOUND, format!("unknown property {id}")),
        Ok(Err(FilterError::MissingReason)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, FilterError::MissingReason.to_string())
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_stats(State(state): State<Arc<TriageState>>) -> Json<Stats> {
    Json(state.stats())
}

async fn placeholder() -> &'static str {
    "triage service is running; the UI assets are not installed"
}

pub fn router(state: Arc<TriageState>) -> Router {
    let api = Router::new()
        .route("/api/properties", get(list_properties))
        .route("/api/properties/{id}/decision", post(post_decision))
        .route("/api/stats", get(get_stats));
    let app = match &state.config().static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    };
    app.with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<TriageState>) -> Result<(), TriageError> {
    let addr = state.config().bind;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("triage service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
