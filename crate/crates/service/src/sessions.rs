use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use prominence_core::search::SearchSession;

use crate::error::ApiError;

/// A session shared between requests; the lock serializes requests to it.
pub type SharedSession = Arc<Mutex<SearchSession>>;

struct Slot {
    created: Instant,
    session: SharedSession,
}

/// Live search sessions keyed by unguessable 128-bit ids.
///
/// Sessions expire `ttl` after creation and are evicted lazily on the next
/// insert or lookup.
pub struct SessionStore {
    slots: Mutex<HashMap<String, Slot>>,
    ttl: Duration,
    capacity: usize,
}

fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl SessionStore {
    pub fn new(ttl: Duration, capacity: usize) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            ttl,
            capacity,
        }
    }

    fn lock(&self) -> MutexGuard<'_, HashMap<String, Slot>> {
        // a panic while holding the map lock cannot leave it half-updated
        self.slots.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn purge(&self, slots: &mut HashMap<String, Slot>, now: Instant) {
        slots.retain(|_, s| now.duration_since(s.created) < self.ttl);
    }

    pub fn insert(&self, session: SearchSession) -> Result<(String, SharedSession), ApiError> {
        let mut slots = self.lock();
        let now = Instant::now();
        self.purge(&mut slots, now);
        if slots.len() >= self.capacity {
            return Err(ApiError::Unavailable(format!(
                "session capacity of {} reached",
                self.capacity
            )));
        }
        let mut id = new_id();
        while slots.contains_key(&id) {
            id = new_id();
        }
        let shared = Arc::new(Mutex::new(session));
        slots.insert(
            id.clone(),
            Slot {
                created: now,
                session: shared.clone(),
            },
        );
        Ok((id, shared))
    }

    pub fn get(&self, id: &str) -> Result<SharedSession, ApiError> {
        let mut slots = self.lock();
        self.purge(&mut slots, Instant::now());
        slots
            .get(id)
            .map(|s| s.session.clone())
            .ok_or_else(|| ApiError::NotFound(format!("unknown or expired session `{id}`")))
    }

    pub fn len(&self) -> usize {
        let mut slots = self.lock();
        self.purge(&mut slots, Instant::now());
        slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
