//! Injectable time source. Long-running loops (worker polls, restart backoff,
//! mock job timelines) only ever read time and sleep through a [`Clock`], so
//! tests can step time manually and stay deterministic.

use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use tokio::sync::oneshot;

pub type SharedClock = Arc<dyn Clock>;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, duration: Duration) -> Pin<Box<dyn Future<Output = ()> + Send>>;
}

/// Wall-clock time backed by tokio timers.
#[derive(Debug, Default, Clone)]
pub struct SystemClock;

impl SystemClock {
    pub fn shared() -> SharedClock {
        Arc::new(SystemClock)
    }
}

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, duration: Duration) -> Pin<Box<dyn Future<Output = ()> + Send>> {
        Box::pin(tokio::time::sleep(duration))
    }
}

/// Manually stepped clock. Time only moves when [`ManualClock::advance`] is
/// called; sleepers woken by an advance observe the new time before any later
/// advance happens.
#[derive(Debug)]
pub struct ManualClock {
    origin: DateTime<Utc>,
    inner: Mutex<ManualInner>,
}

#[derive(Debug)]
struct ManualInner {
    elapsed: Duration,
    sleepers: Vec<Sleeper>,
}

#[derive(Debug)]
struct Sleeper {
    due: Duration,
    wake: oneshot::Sender<()>,
}

impl ManualClock {
    /// Starts at a fixed origin so timestamps are reproducible run to run.
    pub fn new() -> Self {
        Self::starting_at(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap())
    }

    pub fn starting_at(origin: DateTime<Utc>) -> Self {
        ManualClock {
            origin,
            inner: Mutex::new(ManualInner {
                elapsed: Duration::ZERO,
                sleepers: Vec::new(),
            }),
        }
    }

    pub fn shared() -> Arc<ManualClock> {
        Arc::new(ManualClock::new())
    }

    pub fn elapsed(&self) -> Duration {
        self.inner.lock().unwrap().elapsed
    }

    /// Move time forward and wake every sleeper whose deadline has passed.
    pub fn advance(&self, duration: Duration) {
        let due = {
            let mut inner = self.inner.lock().unwrap();
            inner.elapsed += duration;
            let now = inner.elapsed;
            let mut due: Vec<Sleeper> = Vec::new();
            inner.sleepers.retain_mut(|s| {
                if s.due <= now {
                    // Sender is moved out via a placeholder channel.
                    let (placeholder, _) = oneshot::channel();
                    due.push(Sleeper {
                        due: s.due,
                        wake: std::mem::replace(&mut s.wake, placeholder),
                    });
                    false
                } else {
                    true
                }
            });
            due.sort_by_key(|s| s.due);
            due
        };
        for sleeper in due {
            let _ = sleeper.wake.send(());
        }
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        self.origin + chrono::Duration::from_std(self.elapsed()).unwrap()
    }

    fn sleep(&self, duration: Duration) -> Pin<Box<dyn Future<Output = ()> + Send>> {
        let rx = {
            let mut inner = self.inner.lock().unwrap();
            if duration.is_zero() {
                None
            } else {
                let due = inner.elapsed + duration;
                let (tx, rx) = oneshot::channel();
                inner.sleepers.push(Sleeper { due, wake: tx });
                Some(rx)
            }
        };
        Box::pin(async move {
            if let Some(rx) = rx {
                // A dropped clock resolves all pending sleeps.
                let _ = rx.await;
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn manual_clock_wakes_due_sleepers_only() {
        let clock = ManualClock::shared();
        let short = clock.sleep(Duration::from_secs(1));
        let long = clock.sleep(Duration::from_secs(5));
        tokio::pin!(short, long);

        clock.advance(Duration::from_secs(1));
        (&mut short).await;
        assert!(futures::poll!(&mut long).is_pending());

        clock.advance(Duration::from_secs(4));
        long.await;
    }

    #[tokio::test]
    async fn manual_clock_now_tracks_advances() {
        let clock = ManualClock::new();
        let t0 = clock.now();
        clock.advance(Duration::from_millis(1500));
        assert_eq!(clock.now() - t0, chrono::Duration::milliseconds(1500));
    }

    #[tokio::test]
    async fn zero_sleep_is_ready_immediately() {
        let clock = ManualClock::new();
        clock.sleep(Duration::ZERO).await;
    }
}
