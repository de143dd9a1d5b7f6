//! Shared request plumbing for the remote backends: an in-flight cap and
//! exponential backoff on rate limiting.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    owner: &'a InFlight,
}

impl InFlight {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("semaphore poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("semaphore poisoned");
        }
        *active += 1;
        Permit { owner: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.owner.active.lock().expect("semaphore poisoned");
        *active -= 1;
        self.owner.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub max_retries: u32,
    pub base: Duration,
    pub ceiling: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base: Duration::from_millis(500),
            ceiling: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based), never shorter than the
    /// server's retry-after hint.
    pub fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .base
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.ceiling);
        match retry_after {
            Some(hint) => exp.max(hint),
            None => exp,
        }
    }

    /// Runs `op`, retrying while `retry_hint` classifies the error as
    /// retryable (returning the server's hint, if any).
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retry_hint: impl Fn(&E) -> Option<Option<Duration>>,
    ) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => match retry_hint(&e) {
                    Some(hint) if attempt < self.max_retries => {
                        let d = self.delay(attempt, hint);
                        log::debug!("rate limited, retrying in {d:?} (attempt {})", attempt + 1);
                        std::thread::sleep(d);
                        attempt += 1;
                    }
                    _ => return Err(e),
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn delay_grows_and_respects_hint() {
        let b = Backoff {
            max_retries: 3,
            base: Duration::from_millis(10),
            ceiling: Duration::from_millis(50),
        };
        assert_eq!(b.delay(0, None), Duration::from_millis(10));
        assert_eq!(b.delay(2, None), Duration::from_millis(40));
        assert_eq!(b.delay(5, None), Duration::from_millis(50));
        assert_eq!(b.delay(0, Some(Duration::from_millis(30))), Duration::from_millis(30));
    }

    #[test]
    fn retries_until_success() {
        let b = Backoff {
            max_retries: 4,
            base: Duration::from_millis(1),
            ceiling: Duration::from_millis(2),
        };
        let mut calls = 0;
        let r: Result<u32, &str> = b.run(
            || {
                calls += 1;
                if calls < 3 {
                    Err("busy")
                } else {
                    Ok(7)
                }
            },
            |_| Some(None),
        );
        assert_eq!(r, Ok(7));
        assert_eq!(calls, 3);
    }

    #[test]
    fn gives_up_after_budget() {
        let b = Backoff {
            max_retries: 2,
            base: Duration::from_millis(1),
            ceiling: Duration::from_millis(1),
        };
        let mut calls = 0;
        let r: Result<(), &str> = b.run(
            || {
                calls += 1;
                Err("busy")
            },
            |_| Some(None),
        );
        assert!(r.is_err());
        assert_eq!(calls, 3);
    }

    #[test]
    fn in_flight_cap_holds() {
        let gate = Arc::new(InFlight::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
