use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Client-side request pacing. Holds up to `ceil(rate)` tokens (at least
/// one) and refills continuously at `rate` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<BucketState>,
}

#[derive(Debug)]
struct BucketState {
    tokens: f64,
    refreshed: Instant,
}

impl TokenBucket {
    pub fn new(rate: f64) -> Self {
        let capacity = rate.ceil().max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new(BucketState { tokens: capacity, refreshed: Instant::now() }),
        }
    }

    /// Takes a token if one is available, otherwise says how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("token bucket lock poisoned");
        let now = Instant::now();
        let elapsed = now.duration_since(state.refreshed).as_secs_f64();
        state.tokens = (state.tokens + elapsed * self.rate).min(self.capacity);
        state.refreshed = now;
        if state.tokens >= 1.0 {
            state.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - state.tokens) / self.rate))
        }
    }

    pub async fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            tokio::time::sleep(wait).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_empty() {
        let bucket = TokenBucket::new(3.0);
        for _ in 0..3 {
            assert!(bucket.try_acquire().is_ok());
        }
        let wait = bucket.try_acquire().unwrap_err();
        assert!(wait <= Duration::from_millis(334), "{wait:?}");
    }

    #[test]
    fn fractional_rate_has_one_token() {
        let bucket = TokenBucket::new(0.5);
        assert!(bucket.try_acquire().is_ok());
        let wait = bucket.try_acquire().unwrap_err();
        assert!(wait > Duration::from_secs(1));
    }

    #[tokio::test]
    async fn paces_requests() {
        let bucket = TokenBucket::new(50.0);
        let start = Instant::now();
        for _ in 0..60 {
            bucket.acquire().await;
        }
        // 50 from the initial burst, 10 more at 50/s
        assert!(start.elapsed() >= Duration::from_millis(150), "{:?}", start.elapsed());
    }
}
