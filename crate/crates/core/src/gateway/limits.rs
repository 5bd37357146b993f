//! Clocks, in-flight bounds, rate limiting and retry backoff.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A clock that only moves when someone sleeps on it.
#[derive(Default)]
pub struct SimulatedClock {
    nanos: AtomicU64,
    sleeps: Mutex<Vec<Duration>>,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn advance(&self, duration: Duration) {
        self.nanos.fetch_add(duration.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep(&self, duration: Duration) {
        self.sleeps.lock().unwrap_or_else(|e| e.into_inner()).push(duration);
        self.advance(duration);
    }
}

/// Counting semaphore bounding in-flight calls.
pub struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, usize> {
        self.available.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut available = self.lock();
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.lock() += 1;
        self.sem.freed.notify_one();
    }
}

/// Spaces calls at least `interval` apart. Callers over budget wait for
/// their slot; nothing is dropped.
pub struct RateLimiter {
    interval: Duration,
    next_free: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn new(interval: Duration) -> Self {
        RateLimiter {
            interval,
            next_free: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the caller's slot; returns the slot time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let (slot, wait) = {
            let mut next = self.next_free.lock().unwrap_or_else(|e| e.into_inner());
            let now = clock.now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            (slot, slot.saturating_sub(now))
        };
        if !wait.is_zero() {
            clock.sleep(wait);
        }
        slot
    }
}

/// Exponential backoff: attempt `n` (1-based) waits `base * 2^(n-1)`,
/// capped at `max_delay`, scaled by a jitter factor in [0.5, 1.0].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn max_attempts(&self) -> usize {
        self.retries as usize + 1
    }

    /// Jitter is derived from the request key so reruns back off identically.
    pub fn delay(&self, failed_attempts: u32, key: &str) -> Duration {
        let exp = failed_attempts.saturating_sub(1).min(20);
        let nominal = self.base_delay.saturating_mul(1 << exp).min(self.max_delay);
        if !self.jitter {
            return nominal;
        }
        let digest = Sha256::digest(format!("{key}:{failed_attempts}").as_bytes());
        let unit = u16::from_le_bytes([digest[0], digest[1]]) as f64 / u16::MAX as f64;
        nominal.mul_f64(0.5 + 0.5 * unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn limiter_delays_instead_of_dropping() {
        // 120 requests per minute: one slot every 500 ms.
        let clock = SimulatedClock::new();
        let limiter = RateLimiter::new(Duration::from_millis(500));
        let slots: Vec<Duration> = (0..5).map(|_| limiter.acquire(&clock)).collect();
        assert_eq!(slots.len(), 5);
        for pair in slots.windows(2) {
            assert!(pair[1] - pair[0] >= Duration::from_millis(500));
        }
        assert_eq!(slots[4], Duration::from_millis(2000));
        assert_eq!(clock.now(), Duration::from_millis(2000));
    }

    #[test]
    fn limiter_does_not_wait_when_idle() {
        let clock = SimulatedClock::new();
        let limiter = RateLimiter::new(Duration::from_millis(100));
        limiter.acquire(&clock);
        clock.advance(Duration::from_secs(1));
        limiter.acquire(&clock);
        assert_eq!(clock.sleeps(), Vec::<Duration>::new());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Semaphore::new(3);
        let current = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    let _p = sem.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert!(peak.load(Ordering::SeqCst) >= 1);
    }

    #[test]
    fn backoff_grows_exponentially() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(1, "k"), Duration::from_secs(1));
        assert_eq!(p.delay(2, "k"), Duration::from_secs(2));
        assert_eq!(p.delay(3, "k"), Duration::from_secs(4));
        assert_eq!(p.delay(10, "k"), Duration::from_secs(30));
        let j = RetryPolicy::default();
        assert_eq!(j.delay(2, "k"), j.delay(2, "k"));
        assert!(j.delay(2, "k") >= Duration::from_secs(1));
    }
}
