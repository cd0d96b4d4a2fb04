//! Replica pool behind a load balancer.
//!
//! Each replica handles one request at a time; further requests routed to
//! it wait in its FIFO queue. The per-replica outstanding counters are the
//! only shared mutable state and are updated under a single lock.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use tokio::sync::{Mutex as AsyncMutex, MutexGuard as AsyncMutexGuard};

use super::config::DispatchPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueFull {
    pub outstanding: usize,
    pub max_queue: usize,
}

#[derive(Debug)]
struct Replica {
    busy: AsyncMutex<()>,
    served: AtomicU64,
}

#[derive(Debug)]
pub struct Dispatcher {
    policy: DispatchPolicy,
    replicas: Vec<Replica>,
    /// Queued plus in-flight requests per replica.
    outstanding: Mutex<Vec<usize>>,
    next: AtomicUsize,
    max_queue: usize,
}

impl Dispatcher {
    pub fn new(replicas: usize, max_queue: usize, policy: DispatchPolicy) -> Self {
        assert!(replicas >= 1);
        Self {
            policy,
            replicas: (0..replicas)
                .map(|_| Replica {
                    busy: AsyncMutex::new(()),
                    served: AtomicU64::new(0),
                })
                .collect(),
            outstanding: Mutex::new(vec![0; replicas]),
            next: AtomicUsize::new(0),
            max_queue,
        }
    }

    pub fn replicas(&self) -> usize {
        self.replicas.len()
    }

    /// Picks a replica and reserves a slot in its queue.
    pub fn dispatch(&self) -> Result<Ticket<'_>, QueueFull> {
        let mut counts = self.outstanding.lock().unwrap();
        let total: usize = counts.iter().sum();
        if total >= self.max_queue {
            return Err(QueueFull {
                outstanding: total,
                max_queue: self.max_queue,
            });
        }
        let id = match self.policy {
            // min_by_key keeps the first minimum, i.e. the lowest id.
            DispatchPolicy::LeastBusy => (0..counts.len()).min_by_key(|&i| counts[i]).unwrap(),
            DispatchPolicy::RoundRobin => self.next.fetch_add(1, Ordering::Relaxed) % counts.len(),
        };
        counts[id] += 1;
        Ok(Ticket {
            dispatcher: self,
            id,
        })
    }

    pub fn outstanding(&self) -> Vec<usize> {
        self.outstanding.lock().unwrap().clone()
    }

    pub fn served(&self) -> Vec<u64> {
        self.replicas
            .iter()
            .map(|r| r.served.load(Ordering::Relaxed))
            .collect()
    }
}

/// A reserved slot on one replica; releases it when dropped.
#[derive(Debug)]
pub struct Ticket<'a> {
    dispatcher: &'a Dispatcher,
    id: usize,
}

impl<'a> Ticket<'a> {
    pub fn replica(&self) -> usize {
        self.id
    }

    /// Waits until the replica is free and holds it for the guard's life.
    pub async fn acquire(&self) -> AsyncMutexGuard<'a, ()> {
        let replica = &self.dispatcher.replicas[self.id];
        let guard = replica.busy.lock().await;
        replica.served.fetch_add(1, Ordering::Relaxed);
        guard
    }
}

impl Drop for Ticket<'_> {
    fn drop(&mut self) {
        let mut counts = self.dispatcher.outstanding.lock().unwrap();
        counts[self.id] -= 1;
    }
}
