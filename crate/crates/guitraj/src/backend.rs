//! Uniform protocol to remote annotation models, plus a deterministic mock
//! for tests and desk-scale runs.
//!
//! A single wire shape covers all four stages: JSON request
//! `{stage, prompt, attachments, context}` POSTed to `{endpoint}/v1/{stage}`,
//! JSON response `{"text": ...}`. Vendor-specific adapters belong behind this
//! boundary; the pipeline core never sees vendor formats.
//!
//! Retries use exponential backoff with seeded jitter; 401/403 never retry.
//! Calls share a global rate limiter, and successful responses are cached on
//! disk keyed by a request digest so re-runs after a crash do not re-spend
//! annotation budget.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Score,
    Extract,
    Ground,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Classify => "classify",
            Stage::Score => "score",
            Stage::Extract => "extract",
            Stage::Ground => "ground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttachmentKind {
    Clip,
    Frame,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub kind: AttachmentKind,
    /// Video id for clips, frame path for frames.
    pub r#ref: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_range: Option<(f64, f64)>,
}

impl Attachment {
    pub fn clip(video_id: &str, start: f64, end: f64) -> Self {
        Attachment {
            kind: AttachmentKind::Clip,
            r#ref: video_id.to_string(),
            time_range: Some((start, end)),
        }
    }

    pub fn frame(path: &str) -> Self {
        Attachment {
            kind: AttachmentKind::Frame,
            r#ref: path.to_string(),
            time_range: None,
        }
    }

    pub fn none(r#ref: &str) -> Self {
        Attachment {
            kind: AttachmentKind::None,
            r#ref: r#ref.to_string(),
            time_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub stage: Stage,
    pub prompt: String,
    pub attachments: Vec<Attachment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl BackendRequest {
    /// Structural invariants: extract requests carry exactly one clip,
    /// ground requests exactly one frame.
    pub fn validate(&self) -> Result<(), BackendError> {
        let clips = self
            .attachments
            .iter()
            .filter(|a| a.kind == AttachmentKind::Clip)
            .count();
        let frames = self
            .attachments
            .iter()
            .filter(|a| a.kind == AttachmentKind::Frame)
            .count();
        match self.stage {
            Stage::Extract if clips != 1 => Err(BackendError::InvalidRequest(format!(
                "extract request must carry exactly one clip, got {clips}"
            ))),
            Stage::Ground if frames != 1 => Err(BackendError::InvalidRequest(format!(
                "ground request must carry exactly one frame, got {frames}"
            ))),
            _ => Ok(()),
        }
    }

    /// Stable digest over the canonical JSON encoding; cache and fixture key.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("AUTH_ERROR: status {status}")]
    Auth { status: u16 },
    #[error("BACKEND_EXHAUSTED: {attempts} attempts, last error: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("HTTP_ERROR: status {status}")]
    Http { status: u16 },
    #[error("TRANSPORT_ERROR: {0}")]
    Transport(String),
    #[error("INVALID_REQUEST: {0}")]
    InvalidRequest(String),
    #[error("INVALID_RESPONSE: {0}")]
    InvalidResponse(String),
    #[error("IO_ERROR: {0}")]
    Io(String),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Auth { .. } => "AUTH_ERROR",
            BackendError::Exhausted { .. } => "BACKEND_EXHAUSTED",
            BackendError::Http { .. } => "HTTP_ERROR",
            BackendError::Transport(_) => "TRANSPORT_ERROR",
            BackendError::InvalidRequest(_) => "INVALID_REQUEST",
            BackendError::InvalidResponse(_) => "INVALID_RESPONSE",
            BackendError::Io(_) => "IO_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub jitter_seed: u64,
    /// Requests per second across all callers; None disables limiting.
    pub rate_limit_rps: Option<f64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            jitter_seed: 0,
            rate_limit_rps: None,
        }
    }
}

/// Time source abstraction so rate limiting and backoff are testable against
/// a virtual clock.
pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary epoch.
    fn now(&self) -> f64;
    /// Block until `deadline` (no-op if already past).
    fn sleep_until(&self, deadline: f64);
}

pub struct RealClock {
    origin: std::time::Instant,
}

impl Default for RealClock {
    fn default() -> Self {
        RealClock {
            origin: std::time::Instant::now(),
        }
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_until(&self, deadline: f64) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(Duration::from_secs_f64(deadline - now));
        }
    }
}

/// Virtual clock: sleeping advances time instantly. Shared across threads.
#[derive(Default)]
pub struct VirtualClock {
    now: Mutex<f64>,
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: f64) {
        let mut now = self.now.lock().unwrap();
        if deadline > *now {
            *now = deadline;
        }
    }
}

/// Global request spacer: consecutive calls are at least `1/rps` apart.
pub struct RateLimiter {
    interval: f64,
    next_slot: Mutex<f64>,
}

impl RateLimiter {
    pub fn new(rps: f64) -> Self {
        RateLimiter {
            interval: if rps > 0.0 { 1.0 / rps } else { 0.0 },
            next_slot: Mutex::new(0.0),
        }
    }

    /// Reserve the next slot and block until it arrives.
    pub fn acquire(&self, clock: &dyn Clock) {
        if self.interval == 0.0 {
            return;
        }
        let slot = {
            let mut next = self.next_slot.lock().unwrap();
            let slot = next.max(clock.now());
            *next = slot + self.interval;
            slot
        };
        clock.sleep_until(slot);
    }
}

/// One transport attempt. Implementations must not retry internally.
pub trait Transport: Send + Sync {
    fn send(&self, request: &BackendRequest) -> Result<String, TransportFailure>;
}

/// Classification the retry loop needs: retryable or not.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    /// Connection errors, timeouts, 5xx: retried with backoff.
    Retryable(String),
    /// 401/403: never retried.
    Auth { status: u16 },
    /// Other HTTP errors (4xx): no point retrying.
    Fatal { status: u16 },
}

/// Attempt trace returned alongside the response for audit and tests.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallTrace {
    pub attempts: u32,
    /// Backoff delays slept between attempts, in order.
    pub backoffs: Vec<f64>,
}

/// Retry loop shared by every transport: exponential backoff x2 with seeded
/// jitter, global rate limit honored per attempt.
pub fn call_with_retry(
    transport: &dyn Transport,
    request: &BackendRequest,
    policy: &RetryPolicy,
    limiter: Option<&RateLimiter>,
    clock: &dyn Clock,
) -> (Result<String, BackendError>, CallTrace) {
    let mut trace = CallTrace::default();
    if let Err(e) = request.validate() {
        return (Err(e), trace);
    }
    let max_attempts = policy.max_attempts.max(1);
    let mut jitter =
        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(policy.jitter_seed);
    let mut last_error = String::new();

    for attempt in 0..max_attempts {
        if attempt > 0 {
            // base * 2^(attempt-1) * (1 + j), j in [0, 0.1): strictly
            // non-decreasing across attempts.
            let factor = 2f64.powi(attempt as i32 - 1);
            let j: f64 = rand::Rng::gen_range(&mut jitter, 0.0..0.1);
            let delay = policy.base_backoff.as_secs_f64() * factor * (1.0 + j);
            trace.backoffs.push(delay);
            clock.sleep_until(clock.now() + delay);
        }
        if let Some(limiter) = limiter {
            limiter.acquire(clock);
        }
        trace.attempts += 1;
        match transport.send(request) {
            Ok(text) => return (Ok(text), trace),
            Err(TransportFailure::Auth { status }) => {
                return (Err(BackendError::Auth { status }), trace)
            }
            Err(TransportFailure::Fatal { status }) => {
                return (Err(BackendError::Http { status }), trace)
            }
            Err(TransportFailure::Retryable(msg)) => last_error = msg,
        }
    }
    (
        Err(BackendError::Exhausted {
            attempts: trace.attempts,
            last: last_error,
        }),
        trace,
    )
}

/// On-disk response cache keyed by request digest.
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    fn path(&self, request: &BackendRequest) -> PathBuf {
        self.dir
            .join(request.stage.as_str())
            .join(format!("{}.txt", request.digest()))
    }

    pub fn get(&self, request: &BackendRequest) -> Option<String> {
        std::fs::read_to_string(self.path(request)).ok()
    }

    pub fn put(&self, request: &BackendRequest, response: &str) -> Result<(), BackendError> {
        crate::util::write_atomic(&self.path(request), response.as_bytes())
            .map_err(|e| BackendError::Io(e.to_string()))
    }
}

/// The interface every pipeline stage talks to.
pub trait AnnotationBackend: Send + Sync {
    fn call(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

// ---------------------------------------------------------------------------
// HTTP backend

#[derive(Serialize)]
struct WireRequest<'a> {
    stage: &'a str,
    prompt: &'a str,
    attachments: &'a [Attachment],
    #[serde(skip_serializing_if = "Option::is_none")]
    context: &'a Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    auth_token: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: &str, auth_token: Option<String>, timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("client builds");
        HttpTransport {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            auth_token,
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &BackendRequest) -> Result<String, TransportFailure> {
        let url = format!("{}/v1/{}", self.endpoint, request.stage.as_str());
        let body = WireRequest {
            stage: request.stage.as_str(),
            prompt: &request.prompt,
            attachments: &request.attachments,
            context: &request.context,
        };
        let mut builder = self.client.post(&url).json(&body);
        if let Some(token) = &self.auth_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => response
                .json::<WireResponse>()
                .map(|r| r.text)
                .map_err(|e| TransportFailure::Retryable(format!("bad response body: {e}"))),
            401 | 403 => Err(TransportFailure::Auth { status }),
            500..=599 => Err(TransportFailure::Retryable(format!("status {status}"))),
            _ => Err(TransportFailure::Fatal { status }),
        }
    }
}

/// HTTP annotation backend with retries, rate limiting, and response cache.
pub struct HttpBackend {
    transport: HttpTransport,
    policy: RetryPolicy,
    limiter: Option<RateLimiter>,
    cache: Option<ResponseCache>,
    clock: RealClock,
}

impl HttpBackend {
    pub fn new(
        endpoint: &str,
        auth_token: Option<String>,
        policy: RetryPolicy,
        cache_dir: Option<PathBuf>,
        timeout: Duration,
    ) -> Self {
        let limiter = policy.rate_limit_rps.map(RateLimiter::new);
        HttpBackend {
            transport: HttpTransport::new(endpoint, auth_token, timeout),
            policy,
            limiter,
            cache: cache_dir.map(ResponseCache::new),
            clock: RealClock::default(),
        }
    }
}

impl AnnotationBackend for HttpBackend {
    fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(request) {
                return Ok(hit);
            }
        }
        let (result, _trace) = call_with_retry(
            &self.transport,
            request,
            &self.policy,
            self.limiter.as_ref(),
            &self.clock,
        );
        let text = result?;
        if let Some(cache) = &self.cache {
            cache.put(request, &text)?;
        }
        Ok(text)
    }
}

// ---------------------------------------------------------------------------
// Deterministic mock

pub use crate::mock::MockBackend;

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn request(stage: Stage) -> BackendRequest {
        let attachments = match stage {
            Stage::Extract => vec![Attachment::clip("v1", 0.0, 240.0)],
            Stage::Ground => vec![Attachment::frame("frames/v1/1000.png")],
            _ => vec![Attachment::none("v1")],
        };
        BackendRequest {
            stage,
            prompt: "p".to_string(),
            attachments,
            context: None,
        }
    }

    struct Scripted {
        failures_before_success: u32,
        calls: AtomicU32,
        failure: fn(u16) -> TransportFailure,
        status: u16,
    }

    impl Scripted {
        fn flaky(failures: u32) -> Self {
            Scripted {
                failures_before_success: failures,
                calls: AtomicU32::new(0),
                failure: |_| TransportFailure::Retryable("boom".to_string()),
                status: 0,
            }
        }

        fn auth(status: u16) -> Self {
            Scripted {
                failures_before_success: u32::MAX,
                calls: AtomicU32::new(0),
                failure: |s| TransportFailure::Auth { status: s },
                status,
            }
        }
    }

    impl Transport for Scripted {
        fn send(&self, _request: &BackendRequest) -> Result<String, TransportFailure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures_before_success {
                Err((self.failure)(self.status))
            } else {
                Ok("ok".to_string())
            }
        }
    }

    #[test]
    fn retry_succeeds_after_two_failures() {
        let transport = Scripted::flaky(2);
        let clock = VirtualClock::default();
        let policy = RetryPolicy::default();
        let (result, trace) =
            call_with_retry(&transport, &request(Stage::Score), &policy, None, &clock);
        assert_eq!(result.unwrap(), "ok");
        assert_eq!(trace.attempts, 3);
        assert_eq!(trace.backoffs.len(), 2);
    }

    #[test]
    fn retry_exhausts() {
        let transport = Scripted::flaky(10);
        let clock = VirtualClock::default();
        let (result, trace) = call_with_retry(
            &transport,
            &request(Stage::Score),
            &RetryPolicy::default(),
            None,
            &clock,
        );
        assert!(matches!(
            result,
            Err(BackendError::Exhausted { attempts: 3, .. })
        ));
        assert_eq!(trace.attempts, 3);
    }

    #[test]
    fn auth_error_never_retries() {
        let transport = Scripted::auth(401);
        let clock = VirtualClock::default();
        let (result, trace) = call_with_retry(
            &transport,
            &request(Stage::Score),
            &RetryPolicy::default(),
            None,
            &clock,
        );
        assert_eq!(result, Err(BackendError::Auth { status: 401 }));
        assert_eq!(trace.attempts, 1);
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_delays_non_decreasing() {
        let transport = Scripted::flaky(10);
        let clock = VirtualClock::default();
        let policy = RetryPolicy {
            max_attempts: 5,
            jitter_seed: 17,
            ..RetryPolicy::default()
        };
        let (_, trace) = call_with_retry(&transport, &request(Stage::Score), &policy, None, &clock);
        assert_eq!(trace.backoffs.len(), 4);
        for pair in trace.backoffs.windows(2) {
            assert!(pair[1] >= pair[0], "backoffs decreased: {pair:?}");
        }
    }

    #[test]
    fn rate_limiter_spaces_calls_in_virtual_time() {
        let clock = VirtualClock::default();
        let limiter = RateLimiter::new(2.0);
        let start = clock.now();
        for _ in 0..4 {
            limiter.acquire(&clock);
        }
        // Slots at 0, 0.5, 1.0, 1.5: the batch takes at least one second.
        assert!(clock.now() - start >= 1.0, "elapsed {}", clock.now() - start);
    }

    #[test]
    fn request_invariants() {
        let mut bad_extract = request(Stage::Extract);
        bad_extract.attachments.clear();
        assert!(bad_extract.validate().is_err());

        let mut bad_ground = request(Stage::Ground);
        bad_ground
            .attachments
            .push(Attachment::frame("frames/v1/2000.png"));
        assert!(bad_ground.validate().is_err());

        assert!(request(Stage::Extract).validate().is_ok());
        assert!(request(Stage::Ground).validate().is_ok());
    }

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        let a = request(Stage::Score);
        let b = request(Stage::Score);
        assert_eq!(a.digest(), b.digest());
        let mut c = request(Stage::Score);
        c.prompt.push('x');
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = request(Stage::Score);
        assert!(cache.get(&req).is_none());
        cache.put(&req, "cached text").unwrap();
        assert_eq!(cache.get(&req).unwrap(), "cached text");
    }
}
