//! Lossy fan-out to UI subscribers.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

/// What happens when a subscriber falls behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overflow {
    DropOldest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberPolicy {
    pub queue_depth: usize,
    pub overflow: Overflow,
}

impl SubscriberPolicy {
    pub fn drop_oldest(queue_depth: usize) -> Self {
        Self {
            queue_depth: queue_depth.max(1),
            overflow: Overflow::DropOldest,
        }
    }
}

impl Default for SubscriberPolicy {
    fn default() -> Self {
        Self::drop_oldest(64)
    }
}

/// Bounded queue that evicts its oldest item instead of blocking the
/// producer. Consumers can wait synchronously or asynchronously.
pub struct DropOldestQueue<T> {
    items: Mutex<VecDeque<T>>,
    depth: usize,
    ready: Condvar,
    notify: Notify,
    dropped: AtomicU64,
    delivered: AtomicU64,
    closed: std::sync::atomic::AtomicBool,
}

impl<T> DropOldestQueue<T> {
    pub fn new(depth: usize) -> Self {
        let depth = depth.max(1);
        Self {
            items: Mutex::new(VecDeque::with_capacity(depth)),
            depth,
            ready: Condvar::new(),
            notify: Notify::new(),
            dropped: AtomicU64::new(0),
            delivered: AtomicU64::new(0),
            closed: std::sync::atomic::AtomicBool::new(false),
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn push(&self, item: T) {
        let mut q = self.items.lock().expect("queue lock");
        if q.len() == self.depth {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(item);
        drop(q);
        self.ready.notify_one();
        self.notify.notify_one();
    }

    pub fn try_pop(&self) -> Option<T> {
        let item = self.items.lock().expect("queue lock").pop_front();
        if item.is_some() {
            self.delivered.fetch_add(1, Ordering::Relaxed);
        }
        item
    }

    /// Everything queued right now, oldest first.
    pub fn drain(&self) -> Vec<T> {
        let items: Vec<T> = self.items.lock().expect("queue lock").drain(..).collect();
        self.delivered
            .fetch_add(items.len() as u64, Ordering::Relaxed);
        items
    }

    pub fn pop_timeout(&self, timeout: Duration) -> Option<T> {
        let q = self.items.lock().expect("queue lock");
        let (mut q, _) = self
            .ready
            .wait_timeout_while(q, timeout, |q| {
                q.is_empty() && !self.closed.load(Ordering::Relaxed)
            })
            .expect("queue lock");
        let item = q.pop_front();
        if item.is_some() {
            self.delivered.fetch_add(1, Ordering::Relaxed);
        }
        item
    }

    /// Waits until an item may be available or the queue is closed.
    pub async fn wait(&self) {
        if !self.is_empty() || self.is_closed() {
            return;
        }
        self.notify.notified().await;
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Relaxed);
        self.ready.notify_all();
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberStatus {
    pub id: u64,
    pub queue_depth: usize,
    pub queued: usize,
    pub delivered: u64,
    pub dropped: u64,
}

struct Registry<T> {
    next_id: AtomicU64,
    subscribers: Mutex<HashMap<u64, Arc<DropOldestQueue<T>>>>,
}

/// Fan-out point. Publishing never blocks on a subscriber.
pub struct Broadcaster<T> {
    registry: Arc<Registry<T>>,
}

impl<T> Clone for Broadcaster<T> {
    fn clone(&self) -> Self {
        Self {
            registry: Arc::clone(&self.registry),
        }
    }
}

impl<T> Default for Broadcaster<T> {
    fn default() -> Self {
        Self {
            registry: Arc::new(Registry {
                next_id: AtomicU64::new(1),
                subscribers: Mutex::new(HashMap::new()),
            }),
        }
    }
}

impl<T: Clone> Broadcaster<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, policy: SubscriberPolicy) -> Subscription<T> {
        let id = self.registry.next_id.fetch_add(1, Ordering::Relaxed);
        let queue = Arc::new(DropOldestQueue::new(policy.queue_depth));
        self.registry
            .subscribers
            .lock()
            .expect("registry lock")
            .insert(id, Arc::clone(&queue));
        Subscription {
            id,
            queue,
            registry: Arc::downgrade(&self.registry),
        }
    }

    /// Offers `item` to every subscriber. Returns how many took it.
    pub fn publish(&self, item: &T) -> usize {
        let subs = self.registry.subscribers.lock().expect("registry lock");
        for q in subs.values() {
            q.push(item.clone());
        }
        subs.len()
    }

    pub fn subscriber_count(&self) -> usize {
        self.registry
            .subscribers
            .lock()
            .expect("registry lock")
            .len()
    }

    pub fn status(&self) -> Vec<SubscriberStatus> {
        let subs = self.registry.subscribers.lock().expect("registry lock");
        let mut out: Vec<SubscriberStatus> = subs
            .iter()
            .map(|(&id, q)| SubscriberStatus {
                id,
                queue_depth: q.depth(),
                queued: q.len(),
                delivered: q.delivered(),
                dropped: q.dropped(),
            })
            .collect();
        out.sort_by_key(|s| s.id);
        out
    }

    /// Wakes every waiting subscriber with its queue closed.
    pub fn close_all(&self) {
        for q in self
            .registry
            .subscribers
            .lock()
            .expect("registry lock")
            .values()
        {
            q.close();
        }
    }
}

/// A subscriber's end. Unsubscribes on drop.
pub struct Subscription<T> {
    id: u64,
    queue: Arc<DropOldestQueue<T>>,
    registry: Weak<Registry<T>>,
}

impl<T> Subscription<T> {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn queue(&self) -> &DropOldestQueue<T> {
        &self.queue
    }
}

impl<T> Drop for Subscription<T> {
    fn drop(&mut self) {
        if let Some(r) = self.registry.upgrade() {
            r.subscribers
                .lock()
                .expect("registry lock")
                .remove(&self.id);
        }
    }
}
