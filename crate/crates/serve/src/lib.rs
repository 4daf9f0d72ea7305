//! HTTP service for step-wise elaboration of a ligand.
//!
//! Routes:
//! - `POST /sessions` with `{"smiles": ...}` or `{"complex": ...}`
//! - `GET /sessions/{id}/growth-vectors`
//! - `GET /sessions/{id}/posterior?atom=&view=&top=`
//! - `POST /sessions/{id}/apply` with `{"atom": ..., "motif": ...}`
//! - `POST /sessions/{id}/undo`
//! - `GET /sessions/{id}/molecule`
//!
//! Errors are `{"code": ..., "message": ...}` with a matching status.

pub mod engine;
pub mod place;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pqr::pipeline::{Pipeline, MODEL_2D_RECAL, VOCAB_B};
use pqr::posterior::View;
use pqr::shred::MotifKey;
use serde::Deserialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use engine::{ApiError, Engine, Models, Origin};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type Shared = State<Arc<Engine>>;

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    smiles: Option<String>,
    complex: Option<String>,
}

async fn create(State(e): Shared, Json(b): Json<CreateBody>) -> Result<impl IntoResponse, ApiError> {
    let origin = match (b.smiles, b.complex) {
        (Some(s), None) => Origin::Smiles(s),
        (None, Some(c)) => Origin::Complex(c),
        _ => return Err(ApiError::new(400, "bad_request", "give exactly one of smiles or complex")),
    };
    let v = blocking(move || e.create_session(origin)).await?;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn growth_vectors(State(e): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(e.growth_vectors(&id)?))
}

#[derive(Debug, Deserialize)]
struct PosteriorQuery {
    atom: usize,
    view: Option<String>,
    top: Option<usize>,
}

async fn posterior(State(e): Shared, Path(id): Path<String>, Query(q): Query<PosteriorQuery>) -> Result<impl IntoResponse, ApiError> {
    let view = match q.view.as_deref() {
        Some(v) => v.parse::<View>().map_err(|err| ApiError::new(400, "bad_request", err.to_string()))?,
        None => View::Pq,
    };
    let t = blocking(move || e.posterior(&id, q.atom, view, q.top)).await?;
    Ok(Json(t))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyBody {
    atom: usize,
    motif: String,
}

async fn apply(State(e): Shared, Path(id): Path<String>, Json(b): Json<ApplyBody>) -> Result<impl IntoResponse, ApiError> {
    let v = blocking(move || e.apply(&id, b.atom, &MotifKey(b.motif))).await?;
    Ok(Json(v))
}

async fn undo(State(e): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(e.undo(&id)?))
}

async fn molecule(State(e): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(e.molecule(&id)?))
}

async fn not_found() -> ApiError {
    ApiError::new(404, "not_found", "no such route")
}

/// Router over `engine`; `origin` restricts CORS to one UI origin.
pub fn router(engine: Arc<Engine>, origin: Option<&str>) -> anyhow::Result<Router> {
    let allow = match origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o)?),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/growth-vectors", get(growth_vectors))
        .route("/sessions/{id}/posterior", get(posterior))
        .route("/sessions/{id}/apply", post(apply))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/molecule", get(molecule))
        .fallback(not_found)
        .layer(cors)
        .with_state(engine))
}

/// Loads the recalibrated 2D model, the 3D model when trained, and the
/// complexes named in the pipeline configuration.
pub fn load_models(p: &Pipeline) -> anyhow::Result<Models> {
    let vb = p.vocab(VOCAB_B)?;
    let m2 = p.model_2d(MODEL_2D_RECAL, vb, "recalibrated")?;
    let m3 = match p.models() {
        Ok((_, m3)) => Some(m3),
        Err(e) => {
            log::warn!("serving without a 3D model: {e}");
            None
        }
    };
    let complexes: BTreeMap<_, _> = match p.complexes() {
        Ok(cs) => cs.into_iter().map(|c| (c.id.clone(), c)).collect(),
        Err(e) => {
            log::warn!("serving without complexes: {e}");
            BTreeMap::new()
        }
    };
    Ok(Models {
        m2,
        m3,
        complexes,
        env: p.cfg.model3d.env,
    })
}

pub async fn serve(p: Pipeline, addr: &str, sessions: Option<PathBuf>, origin: Option<String>) -> anyhow::Result<()> {
    let models = load_models(&p)?;
    let log_path = sessions.unwrap_or_else(|| engine::default_log_path(&p.cfg.paths.out));
    let engine = Arc::new(Engine::with_log(models, &log_path)?);
    log::info!("{} sessions restored from {}", engine.session_ids().len(), log_path.display());
    let app = router(engine, origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
