mod common;

use std::time::{Duration, Instant};

use common::{config, spawn, MODEL};
use dba_core::client::{BatchItem, ClientConfig};
use dba_core::codec::{base64_decode, base64_encode};
use dba_core::harness::dataset_in_memory;
use dba_core::{ClientError, QueryBudget, Rng, ServiceClient};

#[tokio::test]
async fn budget_stops_at_limit() {
    let (handle, client) = spawn(config(4, 0.0, 0.0), None).await;
    let images = dataset_in_memory(5, 32, 1);
    let budget = QueryBudget::new(3);
    let items: Vec<BatchItem> = images
        .iter()
        .map(|i| BatchItem::charged(i, &budget))
        .collect();
    let err = client.query_batch(&items, MODEL, 1).await.unwrap_err();
    assert_eq!(err.failed_index(), Some(3));
    assert!(err.to_string().contains("exhausted"));
    assert_eq!(budget.used(), 3);
    assert!(budget.is_exhausted());
    assert_eq!(handle.stats().served, 3);
}

#[tokio::test]
async fn batch_results_keep_submission_order() {
    let (_handle, client) = spawn(config(8, 20.0, 30.0), None).await;
    let images = dataset_in_memory(12, 48, 2);
    let items: Vec<BatchItem> = images.iter().map(BatchItem::free).collect();
    let batch = client.query_batch(&items, MODEL, 8).await.unwrap();
    for (image, got) in images.iter().zip(&batch.results) {
        let single = client.query_one(image, MODEL, None).await.unwrap();
        assert_eq!(single.probs, got.probs);
        assert_eq!(single.top1, got.top1);
    }
}

#[tokio::test]
async fn workers_bound_concurrency() {
    let (_handle, client) = spawn(config(8, 100.0, 0.0), None).await;
    let images = dataset_in_memory(4, 32, 3);
    let items: Vec<BatchItem> = images.iter().map(BatchItem::free).collect();
    let started = Instant::now();
    client.query_batch(&items, MODEL, 1).await.unwrap();
    assert!(started.elapsed() >= Duration::from_millis(400));
    let started = Instant::now();
    client.query_batch(&items, MODEL, 4).await.unwrap();
    assert!(started.elapsed() < Duration::from_millis(300));
}

#[tokio::test]
async fn client_errors_are_not_retried_and_release_budget() {
    let (handle, client) = spawn(config(1, 0.0, 0.0), None).await;
    let image = &dataset_in_memory(1, 32, 4)[0];
    let budget = QueryBudget::new(10);
    match client.query_one(image, "vgg16", Some(&budget)).await {
        Err(ClientError::QueryFailed { attempts, reason }) => {
            assert_eq!(attempts, 1);
            assert!(reason.contains("ModelNotFound"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(budget.used(), 0);
    assert_eq!(handle.stats().rejected, 1);
}

#[tokio::test]
async fn transport_errors_retry_then_fail() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let client = ServiceClient::new(ClientConfig {
        backoff: Duration::from_millis(5),
        ..ClientConfig::new(format!("http://{addr}"))
    });
    let image = &dataset_in_memory(1, 8, 5)[0];
    let budget = QueryBudget::new(2);
    match client.query_one(image, MODEL, Some(&budget)).await {
        Err(ClientError::QueryFailed { attempts, .. }) => assert_eq!(attempts, 4),
        other => panic!("{other:?}"),
    }
    assert_eq!(budget.used(), 0);
}

#[tokio::test]
async fn identical_queries_identical_answers() {
    let (_handle, client) = spawn(config(3, 0.0, 5.0), None).await;
    let image = &dataset_in_memory(1, 96, 6)[0];
    let a = client.query_one(image, MODEL, None).await.unwrap();
    let b = client.query_one(image, MODEL, None).await.unwrap();
    assert_eq!(a.probs, b.probs);
    assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn base64_megabyte_round_trip() {
    let mut rng = Rng::new(42);
    let bytes: Vec<u8> = (0..1 << 20).map(|_| rng.next_u64() as u8).collect();
    assert_eq!(base64_decode(&base64_encode(&bytes)).unwrap(), bytes);
}
