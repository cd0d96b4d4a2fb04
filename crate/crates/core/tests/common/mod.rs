#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use dba_core::service::{ClassifyEvent, RequestObserver};
use dba_core::{QuantizedImage, Service, ServiceClient, ServiceConfig, ServiceHandle};

pub const MODEL: &str = "tinynet-a";

pub fn config(replicas: usize, base_ms: f64, jitter_ms: f64) -> ServiceConfig {
    ServiceConfig {
        listen: "127.0.0.1:0".into(),
        replicas,
        base_latency_ms: base_ms,
        latency_jitter_ms: jitter_ms,
        max_queue: 4096,
        ..ServiceConfig::default()
    }
}

pub async fn spawn(
    config: ServiceConfig,
    observer: Option<Arc<dyn RequestObserver>>,
) -> (ServiceHandle, ServiceClient) {
    let handle = Service::with_observer(config, observer)
        .unwrap()
        .spawn()
        .await
        .unwrap();
    let client = ServiceClient::connect(handle.base_url());
    (handle, client)
}

fn within(a: &[u8], b: &[u8], bound: u8) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.abs_diff(*y) <= bound)
}

/// Attributes every served image to a registered clean image within
/// `bound` (uint8 units) and counts requests per clean image.
pub struct PerturbationLog {
    bound: u8,
    cleans: RwLock<Vec<QuantizedImage>>,
    counts: Mutex<HashMap<usize, usize>>,
    checked: AtomicUsize,
    violations: AtomicUsize,
}

impl PerturbationLog {
    pub fn new(bound: u8) -> Arc<Self> {
        Arc::new(Self {
            bound,
            cleans: RwLock::new(Vec::new()),
            counts: Mutex::new(HashMap::new()),
            checked: AtomicUsize::new(0),
            violations: AtomicUsize::new(0),
        })
    }

    /// Registers clean images and returns their ids.
    pub fn register(&self, images: impl IntoIterator<Item = QuantizedImage>) -> Vec<usize> {
        let mut cleans = self.cleans.write().unwrap();
        images
            .into_iter()
            .map(|q| {
                cleans.push(q);
                cleans.len() - 1
            })
            .collect()
    }

    pub fn reset_counts(&self) {
        self.counts.lock().unwrap().clear();
    }

    pub fn count(&self, id: usize) -> usize {
        self.counts.lock().unwrap().get(&id).copied().unwrap_or(0)
    }

    pub fn checked(&self) -> usize {
        self.checked.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }
}

impl RequestObserver for PerturbationLog {
    fn on_classify(&self, event: &ClassifyEvent<'_>) {
        self.checked.fetch_add(1, Ordering::Relaxed);
        let cleans = self.cleans.read().unwrap();
        let hit = cleans
            .iter()
            .position(|c| within(c.data(), event.image.data(), self.bound));
        match hit {
            Some(id) => *self.counts.lock().unwrap().entry(id).or_default() += 1,
            None => {
                self.violations.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}
