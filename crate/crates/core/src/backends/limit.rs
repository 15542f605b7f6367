use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Token bucket: `rate` tokens per second, holding at most `burst`.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, burst: f64) -> Self {
        let burst = burst.max(1.0);
        Self {
            rate,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("bucket lock");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate).min(self.burst);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock");
        }
        *active += 1;
        InFlightGuard { owner: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().expect("in-flight lock")
    }
}

pub struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.owner.active.lock().expect("in-flight lock") -= 1;
        self.owner.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn bucket_paces_after_burst() {
        let bucket = TokenBucket::new(200.0, 2.0);
        let start = Instant::now();
        for _ in 0..6 {
            bucket.acquire();
        }
        // Four tokens beyond the burst at 200/s need about 20 ms.
        assert!(start.elapsed() >= Duration::from_millis(15));
    }

    #[test]
    fn in_flight_never_exceeds_limit() {
        let gate = InFlight::new(3);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..12 {
                s.spawn(|| {
                    let _g = gate.acquire();
                    peak.fetch_max(gate.active(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(gate.active(), 0);
    }
}
