//! Caption providers: the LMM-facing contract, a deterministic stub for
//! desk-scale runs, and the retry wrapper around generation calls.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::encoders::fnv1a_64;
use crate::error::{LatteError, Result};

/// One generation request. `class_name` is the zero-shot pseudo-label's
/// class name, which stands in for what a real LMM would see in the
/// pixels; real providers may ignore it.
#[derive(Debug, Clone)]
pub struct CaptionRequest {
    pub prompt: String,
    pub image_ids: Vec<String>,
    pub class_name: Option<String>,
    pub seed: u64,
}

pub trait CaptionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &CaptionRequest) -> Result<String>;
    /// Number of generate calls served so far, for idempotence tests.
    fn call_count(&self) -> usize;
}

const NOISE_WORDS: [&str; 16] = [
    "gleaming", "rustic", "vibrant", "muted", "angular", "weathered", "glossy", "faded",
    "textured", "ornate", "sparse", "dense", "crooked", "symmetric", "jagged", "smooth",
];

/// Deterministic caption stub. The text is derived from the pseudo-label
/// class name and member count, with noise words injected at a
/// configurable rate so end-to-end tests can control caption quality.
pub struct StubProvider {
    noise_level: f64,
    calls: AtomicUsize,
}

impl StubProvider {
    pub fn new(noise_level: f64) -> Self {
        StubProvider {
            noise_level,
            calls: AtomicUsize::new(0),
        }
    }
}

impl CaptionProvider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn generate(&self, request: &CaptionRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let class = request.class_name.as_deref().unwrap_or("subject");
        let mut text = if request.image_ids.len() > 1 {
            format!("{} photos sharing {} features", request.image_ids.len(), class)
        } else {
            format!("a {class} with distinctive features")
        };
        let mut key = fnv1a_64(request.prompt.as_bytes()) ^ request.seed;
        for id in &request.image_ids {
            key ^= fnv1a_64(id.as_bytes()).rotate_left(17);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        for _ in 0..3 {
            if rng.gen::<f64>() < self.noise_level {
                let word = NOISE_WORDS[rng.gen_range(0..NOISE_WORDS.len())];
                text.push(' ');
                text.push_str(word);
            }
        }
        Ok(text)
    }

    fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Retry policy for provider failures: up to `max_attempts` tries with
/// exponential backoff starting at `backoff_base`.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

/// Calls the provider with retries; the returned text is whitespace
/// trimmed. On exhaustion the last error surfaces and nothing is cached.
pub fn generate_with_retry(
    provider: &dyn CaptionProvider,
    request: &CaptionRequest,
    policy: &RetryPolicy,
) -> Result<String> {
    let mut last = String::new();
    for attempt in 0..policy.max_attempts {
        match provider.generate(request) {
            Ok(text) => return Ok(text.trim().to_string()),
            Err(e) => {
                last = e.to_string();
                if attempt + 1 < policy.max_attempts {
                    std::thread::sleep(policy.backoff_base * 2u32.pow(attempt));
                }
            }
        }
    }
    Err(LatteError::GenerationFailed {
        attempts: policy.max_attempts,
        reason: last,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Provider that fails its first `fail_first` calls, then delegates
    /// to a stub.
    pub struct FlakyProvider {
        pub fail_first: usize,
        pub inner: StubProvider,
        pub calls: AtomicUsize,
    }

    impl CaptionProvider for FlakyProvider {
        fn name(&self) -> &str {
            "flaky"
        }
        fn generate(&self, request: &CaptionRequest) -> Result<String> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(LatteError::BackendUnavailable("simulated timeout".into()));
            }
            self.inner.generate(request)
        }
        fn call_count(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }
}
