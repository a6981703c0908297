//! Concurrency and rate limiting shared by all gateway callers.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding in-flight LLM calls.
pub struct Semaphore {
    state: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        assert!(permits >= 1, "semaphore needs at least one permit");
        Self { state: Mutex::new(permits), available: Condvar::new() }
    }

    pub fn acquire(&self) -> SemaphorePermit<'_> {
        let mut permits = self.state.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphorePermit { semaphore: self }
    }

    fn release(&self) {
        let mut permits = self.state.lock().expect("semaphore lock");
        *permits += 1;
        self.available.notify_one();
    }
}

pub struct SemaphorePermit<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphorePermit<'_> {
    fn drop(&mut self) {
        self.semaphore.release();
    }
}

/// Token bucket over wall-clock time; `acquire` blocks until a token is
/// available. One token per request.
pub struct TokenBucket {
    state: Mutex<BucketState>,
    capacity: f64,
    refill_per_sec: f64,
}

struct BucketState {
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    pub fn new(requests_per_second: f64) -> Self {
        let capacity = requests_per_second.max(1.0);
        Self {
            state: Mutex::new(BucketState { tokens: capacity, last_refill: Instant::now() }),
            capacity,
            refill_per_sec: requests_per_second,
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                let elapsed = now.duration_since(state.last_refill).as_secs_f64();
                state.tokens = (state.tokens + elapsed * self.refill_per_sec).min(self.capacity);
                state.last_refill = now;
                if state.tokens >= 1.0 {
                    state.tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.tokens) / self.refill_per_sec)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Combined limiter: a permit bounds concurrency, then the bucket spaces
/// out request starts.
pub struct CallLimiter {
    semaphore: Semaphore,
    bucket: Option<TokenBucket>,
}

impl CallLimiter {
    pub fn new(max_concurrent: usize, requests_per_second: Option<f64>) -> Self {
        Self {
            semaphore: Semaphore::new(max_concurrent),
            bucket: requests_per_second.map(TokenBucket::new),
        }
    }

    pub fn acquire(&self) -> SemaphorePermit<'_> {
        let permit = self.semaphore.acquire();
        if let Some(bucket) = &self.bucket {
            bucket.acquire();
        }
        permit
    }
}
