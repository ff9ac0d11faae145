//! The provider never has more than `max_in_flight` calls outstanding.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use ivr_route::fixtures;
use ivr_route::provider::mock::OracleBackend;
use ivr_route::provider::{AttemptError, ChatBackend, ChatRequest, Provider, ProviderConfig};
use ivr_route::router::{self, DatasetFilter, RouteOptions};
use ivr_route::RoutingCondition;

struct Instrumented {
    inner: OracleBackend,
    current: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

#[async_trait]
impl ChatBackend for Instrumented {
    async fn send(&self, request: &ChatRequest, config: &ProviderConfig) -> Result<String, AttemptError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_micros(300)).await;
        let reply = self.inner.send(request, config).await;
        self.current.fetch_sub(1, Ordering::SeqCst);
        reply
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn peak_concurrency_is_bounded() {
    let ds = fixtures::agentnet_dataset();
    let tree = fixtures::agentnet_menu();
    for k in [1, 4, 16] {
        let backend = Arc::new(Instrumented {
            inner: OracleBackend::new(&ds.records),
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        });
        let provider = Provider::new(ProviderConfig { max_in_flight: k, ..ProviderConfig::default() }, backend.clone()).unwrap();
        let options = RouteOptions { filter: DatasetFilter::All, ..RouteOptions::default() };
        let run = router::route_all(&ds, RoutingCondition::FlattenedPaths, &tree, &provider, options).await.unwrap();

        assert_eq!(backend.calls.load(Ordering::SeqCst), 920);
        let peak = backend.peak.load(Ordering::SeqCst);
        assert!(peak <= k, "k={k} peak={peak}");
        if k > 1 {
            assert!(peak > 1, "k={k}: calls never overlapped");
        }
        let ids: Vec<_> = run.results.iter().map(|r| r.intent_id.as_str()).collect();
        let expected: Vec<_> = ds.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, expected, "results keep dataset order");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn clones_share_the_limit() {
    let ds = fixtures::agentnet_dataset();
    let backend = Arc::new(Instrumented {
        inner: OracleBackend::new(&ds.records),
        current: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
        calls: AtomicUsize::new(0),
    });
    let provider = Provider::new(ProviderConfig { max_in_flight: 3, ..ProviderConfig::default() }, backend.clone()).unwrap();
    let tree = fixtures::agentnet_menu();
    let a = router::route_all(&ds, RoutingCondition::DescriptiveMenu, &tree, &provider, RouteOptions::default());
    let clone = provider.clone();
    let b = router::route_all(&ds, RoutingCondition::FlattenedPaths, &tree, &clone, RouteOptions::default());
    let (a, b) = tokio::join!(a, b);
    assert!(a.is_ok() && b.is_ok());
    assert!(backend.peak.load(Ordering::SeqCst) <= 3);
}
