//! HTTP classification service with a simulated replica pool.
//!
//! Pipeline per request: base64 decode → PNG/JPEG decode → dispatch to a
//! replica → dequantize → bilinear resize to the model's input size →
//! forward → top-k. The replica then sleeps `base + U(0, jitter)` ms to
//! emulate the round-trip cost of a remote deployment. Model input sizes
//! and logits are never exposed.

pub mod api;
mod config;
mod dispatch;

pub use config::{ConfigError, DispatchPolicy, ServiceConfig, LISTEN_ENV};
pub use dispatch::{Dispatcher, QueueFull, Ticket};

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::classifier::{self, ClassifierError, Model, ModelSpec};
use crate::codec::{self, CodecError, ImageFormatKind};
use crate::rng::Rng;
use crate::tensor::QuantizedImage;
use api::{
    class_label, ClassifyRequest, ClassifyResponse, ErrorBody, PredictionWire, CLASSIFY_PATH,
    MODELS_PATH,
};

const BODY_LIMIT: usize = 32 * 1024 * 1024;

/// What the service saw for one successfully served request.
#[derive(Debug)]
pub struct ClassifyEvent<'a> {
    pub model: &'a str,
    pub image: &'a QuantizedImage,
    pub served_by: usize,
    pub top1: usize,
}

/// Hook invoked for every 200 response, before the response is written.
pub trait RequestObserver: Send + Sync {
    fn on_classify(&self, event: &ClassifyEvent<'_>);
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("queue full ({0} outstanding)")]
    QueueFull(usize),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn status_and_kind(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::Codec(CodecError::Base64(_)) => (StatusCode::BAD_REQUEST, "Base64Error"),
            ServiceError::Codec(CodecError::FormatUnsupported(_)) => {
                (StatusCode::BAD_REQUEST, "FormatUnsupported")
            }
            ServiceError::Codec(_) => (StatusCode::BAD_REQUEST, "DecodeError"),
            ServiceError::Classifier(ClassifierError::ModelNotFound(_)) => {
                (StatusCode::NOT_FOUND, "ModelNotFound")
            }
            ServiceError::Classifier(ClassifierError::BadTopK(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "BadTopK")
            }
            ServiceError::Classifier(_) => (StatusCode::INTERNAL_SERVER_ERROR, "ClassifierError"),
            ServiceError::QueueFull(_) => (StatusCode::SERVICE_UNAVAILABLE, "QueueFull"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = self.status_and_kind();
        let body = ErrorBody {
            error: self.to_string(),
            kind: kind.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("weights for {model}: {source}")]
    Weights {
        model: String,
        source: classifier::WeightFileError,
    },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceStats {
    pub served: u64,
    pub rejected: u64,
    pub per_replica: Vec<u64>,
}

struct AppState {
    config: ServiceConfig,
    models: BTreeMap<String, Arc<Model>>,
    model_order: Vec<String>,
    dispatcher: Dispatcher,
    jitter: Mutex<Rng>,
    observer: Option<Arc<dyn RequestObserver>>,
    served: AtomicU64,
    rejected: AtomicU64,
}

impl AppState {
    fn latency(&self) -> Duration {
        let jitter = self.jitter.lock().unwrap().uniform() * self.config.latency_jitter_ms;
        Duration::from_secs_f64((self.config.base_latency_ms + jitter) / 1000.0)
    }
}

/// A configured (not yet listening) service.
pub struct Service {
    state: Arc<AppState>,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Result<Self, StartError> {
        Self::with_observer(config, None)
    }

    pub fn with_observer(
        config: ServiceConfig,
        observer: Option<Arc<dyn RequestObserver>>,
    ) -> Result<Self, StartError> {
        config.validate()?;
        let mut models = BTreeMap::new();
        let mut model_order = Vec::new();
        for (name, seed) in &config.models {
            let model = match &config.weights_dir {
                Some(dir) => {
                    let ws = classifier::load_weights(dir.join(format!("{name}.tnw"))).map_err(
                        |source| StartError::Weights {
                            model: name.clone(),
                            source,
                        },
                    )?;
                    Model::from_weights(ModelSpec::by_name(name)?, &ws)?
                }
                None => Model::build(name, *seed)?,
            };
            if models.insert(name.clone(), Arc::new(model)).is_none() {
                model_order.push(name.clone());
            }
        }
        let dispatcher = Dispatcher::new(config.replicas, config.max_queue, config.dispatch);
        let jitter = Mutex::new(Rng::new(config.seed));
        Ok(Self {
            state: Arc::new(AppState {
                config,
                models,
                model_order,
                dispatcher,
                jitter,
                observer,
                served: AtomicU64::new(0),
                rejected: AtomicU64::new(0),
            }),
        })
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route(CLASSIFY_PATH, post(classify))
            .route(MODELS_PATH, get(list_models))
            .layer(DefaultBodyLimit::max(BODY_LIMIT))
            .with_state(self.state.clone())
    }

    /// Binds `config.listen` and serves in a background task.
    pub async fn spawn(self) -> Result<ServiceHandle, StartError> {
        let addr = self.state.config.listen.clone();
        let listener = TcpListener::bind(&addr)
            .await
            .map_err(|source| StartError::Bind {
                addr: addr.clone(),
                source,
            })?;
        let local = listener
            .local_addr()
            .map_err(|source| StartError::Bind { addr, source })?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = self.router();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        tracing::info!(%local, replicas = self.state.config.replicas, "service listening");
        Ok(ServiceHandle {
            addr: local,
            state: self.state,
            shutdown: Some(tx),
            task,
        })
    }
}

pub struct ServiceHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> ServiceStats {
        ServiceStats {
            served: self.state.served.load(Ordering::Relaxed),
            rejected: self.state.rejected.load(Ordering::Relaxed),
            per_replica: self.state.dispatcher.served(),
        }
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the task ends or ctrl-c arrives.
    pub async fn wait(mut self) -> std::io::Result<()> {
        tokio::select! {
            res = &mut self.task => res.unwrap_or_else(|e| Err(std::io::Error::other(e))),
            _ = tokio::signal::ctrl_c() => {
                self.shutdown().await;
                Ok(())
            }
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.model_order.clone())
}

async fn classify(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ClassifyRequest>,
) -> Result<Json<ClassifyResponse>, ServiceError> {
    let result = serve_classify(&state, req).await;
    if result.is_err() {
        state.rejected.fetch_add(1, Ordering::Relaxed);
    }
    result.map(Json)
}

async fn serve_classify(
    state: &AppState,
    req: ClassifyRequest,
) -> Result<ClassifyResponse, ServiceError> {
    let started = Instant::now();
    let model = state
        .models
        .get(&req.model)
        .cloned()
        .ok_or_else(|| ClassifierError::ModelNotFound(req.model.clone()))?;
    if !classifier::VALID_TOP_K.contains(&req.top_k) {
        return Err(ClassifierError::BadTopK(req.top_k).into());
    }
    let bytes = codec::base64_decode(&req.image)?;
    if !state.config.jpeg_enabled && codec::sniff_format(&bytes) == Some(ImageFormatKind::Jpeg) {
        return Err(CodecError::FormatUnsupported("jpeg uploads are disabled".into()).into());
    }
    let image = Arc::new(codec::decode_image(&bytes)?);

    let ticket = state
        .dispatcher
        .dispatch()
        .map_err(|full| ServiceError::QueueFull(full.outstanding))?;
    let _busy = ticket.acquire().await;

    let input = image.clone();
    let probs = tokio::task::spawn_blocking(move || {
        let side = model.spec().input_size;
        let x = codec::resize_bilinear(&input.dequantize(), side, side);
        model.forward(&x)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;

    tokio::time::sleep(state.latency()).await;

    let top1 = probs.top1();
    if let Some(observer) = &state.observer {
        observer.on_classify(&ClassifyEvent {
            model: &req.model,
            image: &image,
            served_by: ticket.replica(),
            top1,
        });
    }
    let predictions = classifier::top_k(probs.as_slice(), req.top_k, req.labels_only)?
        .into_iter()
        .map(|p| PredictionWire {
            label: class_label(p.class),
            probability: p.probability,
        })
        .collect();
    state.served.fetch_add(1, Ordering::Relaxed);
    Ok(ClassifyResponse {
        model: req.model,
        predictions,
        served_by: ticket.replica(),
        latency_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}
