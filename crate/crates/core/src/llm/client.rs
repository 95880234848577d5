use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_concurrency: usize,
    pub requests_per_minute: u32,
    pub timeout_secs: u64,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    /// Transport or HTTP failures tolerated per request before giving up.
    pub max_retries: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "upstage/SOLAR-10.7B-Instruct-v1.0".into(),
            temperature: 0.0,
            max_concurrency: 4,
            requests_per_minute: 60,
            timeout_secs: 60,
            api_key_env: None,
            max_retries: 3,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::InvalidInput("endpoint max_concurrency must be at least 1".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(Error::InvalidInput("endpoint requests_per_minute must be at least 1".into()));
        }
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return Err(Error::InvalidInput("endpoint base_url and model_name are required".into()));
        }
        Ok(())
    }

    /// `model@host` style identifier stored with each annotation.
    pub fn endpoint_id(&self) -> String {
        format!("{}@{}", self.model_name, self.base_url)
    }
}

/// Sends one user message and returns the assistant's text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
    fn model(&self) -> &str;
    fn endpoint_id(&self) -> String;
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// At most `limit` grants in any window of `window` length.
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    clock: Arc<dyn Clock>,
    grants: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(limit: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter::new(limit as usize, Duration::from_secs(60), clock)
    }

    pub fn new(limit: usize, window: Duration, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            limit: limit.max(1),
            window,
            clock,
            grants: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request may be sent; returns the grant time.
    pub fn acquire(&self) -> Duration {
        // holding the lock while sleeping keeps waiters in order
        let mut grants = self.grants.lock().expect("rate limiter lock");
        loop {
            let now = self.clock.now();
            while grants.front().is_some_and(|&t| now >= t + self.window) {
                grants.pop_front();
            }
            if grants.len() < self.limit {
                grants.push_back(now);
                return now;
            }
            let wait = grants[0] + self.window - now;
            self.clock.sleep(wait);
        }
    }
}

pub struct HttpChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Endpoint(format!("environment variable `{var}` holding the API key is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpChatClient { config, agent, api_key })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Endpoint(format!("POST {url}: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Endpoint(format!("reading reply from {url}: {e}")))?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(Error::Endpoint(format!("POST {url}: HTTP {status}: {snippet}")));
        }
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Endpoint(format!("reply from {url} is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Endpoint(format!("reply from {url} has no choices[0].message.content")))
    }

    fn model(&self) -> &str {
        &self.config.model_name
    }

    fn endpoint_id(&self) -> String {
        self.config.endpoint_id()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;

    /// Virtual time that advances only when slept on.
    #[derive(Default)]
    struct FakeClock(AtomicU64);

    impl Clock for FakeClock {
        fn now(&self) -> Duration {
            Duration::from_millis(self.0.load(Ordering::SeqCst))
        }
        fn sleep(&self, d: Duration) {
            self.0.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
        }
    }

    #[test]
    fn limiter_never_exceeds_window() {
        let clock = Arc::new(FakeClock::default());
        let lim = RateLimiter::per_minute(5, clock.clone());
        let grants: Vec<Duration> = (0..23).map(|_| lim.acquire()).collect();
        for (i, g) in grants.iter().enumerate() {
            let in_window = grants[..=i].iter().filter(|&&t| *g < t + Duration::from_secs(60)).count();
            assert!(in_window <= 5);
        }
        assert_eq!(grants[5], Duration::from_secs(60));
        assert_eq!(grants[22], Duration::from_secs(240));
    }

    #[test]
    fn config_validation() {
        assert!(EndpointConfig::default().validate().is_ok());
        let c = EndpointConfig { max_concurrency: 0, ..EndpointConfig::default() };
        assert!(c.validate().is_err());
        let c = EndpointConfig { requests_per_minute: 0, ..EndpointConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_key_variable_is_an_endpoint_error() {
        let c = EndpointConfig {
            api_key_env: Some("ANNOBIAS_TEST_SURELY_UNSET_VAR".into()),
            ..EndpointConfig::default()
        };
        assert!(HttpChatClient::new(c).unwrap_err().is_endpoint());
    }

    #[test]
    fn debug_hides_key() {
        let mut c = HttpChatClient::new(EndpointConfig::default()).unwrap();
        c.api_key = Some("sk-secret".into());
        assert!(!format!("{c:?}").contains("sk-secret"));
    }
}
