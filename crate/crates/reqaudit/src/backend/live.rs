//! Live HTTP backend behind a pluggable transport seam.
//!
//! Only the request/response contract is fixed; the wire protocol lives in
//! the [`LiveTransport`] adapter. The built-in transport (feature `live`)
//! POSTs a JSON body and expects a JSON object with a `text` field back.
//! Tests inject instrumented transports instead of talking to a network.

use std::time::Duration;

use super::{Backend, BackendError, BackendRequest, BackendResponse, FinishStatus, UsageCounters};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("server error {status}")]
    ServerError { status: u16 },
    #[error("http error: {0}")]
    Other(String),
}

impl TransportError {
    /// Transient failures get exactly one retry.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            TransportError::Timeout
                | TransportError::Connect(_)
                | TransportError::ServerError { .. }
        )
    }
}

/// The adapter boundary for the live wire protocol.
pub trait LiveTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<String, TransportError>;
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub url: String,
    /// Environment variable holding the API credential; its *name* is
    /// configurable, its value is read at call time and never stored.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub parallelism: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:8080/v1/complete".into(),
            api_key_env: "REQAUDIT_API_KEY".into(),
            timeout_secs: 120,
            parallelism: 4,
        }
    }
}

pub struct LiveBackend {
    transport: Box<dyn LiveTransport>,
    config: LiveConfig,
}

impl LiveBackend {
    pub fn new(transport: Box<dyn LiveTransport>, config: LiveConfig) -> Self {
        Self { transport, config }
    }

    /// Live backend using the built-in HTTP transport.
    #[cfg(feature = "live")]
    pub fn over_http(config: LiveConfig) -> Self {
        Self::new(Box::new(HttpTransport::new()), config)
    }

    fn call_once(&self, request: &BackendRequest) -> Result<BackendResponse, TransportError> {
        let body = serde_json::json!({
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_output,
            "prompt": request.prompt,
        });
        let mut headers = vec![("content-type".to_string(), "application/json".to_string())];
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            headers.push(("authorization".to_string(), format!("Bearer {key}")));
        }
        let raw = self.transport.post_json(
            &self.config.url,
            &headers,
            &body.to_string(),
            Duration::from_secs(self.config.timeout_secs),
        )?;
        parse_wire_response(&raw)
    }
}

fn parse_wire_response(raw: &str) -> Result<BackendResponse, TransportError> {
    let value: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| TransportError::Other(format!("response is not JSON: {e}")))?;
    let text = value
        .get("text")
        .and_then(|v| v.as_str())
        .ok_or_else(|| TransportError::Other("response lacks a 'text' field".into()))?
        .to_string();
    let finish = match value.get("finish").and_then(|v| v.as_str()) {
        Some("truncated") => FinishStatus::Truncated,
        _ => FinishStatus::Complete,
    };
    let usage = value.get("usage").and_then(|u| {
        Some(UsageCounters {
            input_tokens: u.get("input_tokens")?.as_u64()?,
            output_tokens: u.get("output_tokens")?.as_u64()?,
        })
    });
    Ok(BackendResponse {
        text,
        finish,
        usage,
    })
}

impl Backend for LiveBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn send(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match self.call_once(request) {
            Ok(resp) => Ok(resp),
            Err(e) if e.is_transient() => match self.call_once(request) {
                Ok(resp) => Ok(resp),
                Err(TransportError::Timeout) => Err(BackendError::Timeout),
                Err(e) => Err(BackendError::Protocol(e.to_string())),
            },
            Err(TransportError::Timeout) => Err(BackendError::Timeout),
            Err(e) => Err(BackendError::Protocol(e.to_string())),
        }
    }

    fn parallelism(&self) -> usize {
        self.config.parallelism
    }
}

#[cfg(feature = "live")]
struct HttpTransport {
    client: reqwest::blocking::Client,
}

#[cfg(feature = "live")]
impl HttpTransport {
    fn new() -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
        }
    }
}

#[cfg(feature = "live")]
impl LiveTransport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<String, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .body(body.to_string());
        for (name, value) in headers {
            req = req.header(name.as_str(), value.as_str());
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else if e.is_connect() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(TransportError::ServerError {
                status: status.as_u16(),
            });
        }
        if !status.is_success() {
            return Err(TransportError::Other(format!("status {status}")));
        }
        resp.text().map_err(|e| TransportError::Other(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct FlakyTransport {
        calls: Arc<AtomicUsize>,
        fail_first: bool,
    }

    impl LiveTransport for FlakyTransport {
        fn post_json(
            &self,
            _url: &str,
            _headers: &[(String, String)],
            body: &str,
            _timeout: Duration,
        ) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail_first && n == 0 {
                return Err(TransportError::ServerError { status: 503 });
            }
            let req: serde_json::Value = serde_json::from_str(body).unwrap();
            Ok(serde_json::json!({
                "text": format!("answered:{}", req["prompt"].as_str().unwrap()),
                "finish": "complete",
            })
            .to_string())
        }
    }

    #[test]
    fn transient_failure_gets_exactly_one_retry() {
        let calls = Arc::new(AtomicUsize::new(0));
        let backend = LiveBackend::new(
            Box::new(FlakyTransport {
                calls: calls.clone(),
                fail_first: true,
            }),
            LiveConfig::default(),
        );
        let resp = backend.send(&BackendRequest::new("m", "ping")).unwrap();
        assert_eq!(resp.text, "answered:ping");
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    struct AlwaysDown;

    impl LiveTransport for AlwaysDown {
        fn post_json(
            &self,
            _url: &str,
            _headers: &[(String, String)],
            _body: &str,
            _timeout: Duration,
        ) -> Result<String, TransportError> {
            Err(TransportError::Timeout)
        }
    }

    #[test]
    fn persistent_timeout_surfaces_after_retry() {
        let backend = LiveBackend::new(Box::new(AlwaysDown), LiveConfig::default());
        assert!(matches!(
            backend.send(&BackendRequest::new("m", "ping")),
            Err(BackendError::Timeout)
        ));
    }

    #[test]
    fn wire_response_parsing_handles_usage_and_truncation() {
        let resp = parse_wire_response(
            r#"{"text":"t","finish":"truncated","usage":{"input_tokens":3,"output_tokens":5}}"#,
        )
        .unwrap();
        assert_eq!(resp.finish, FinishStatus::Truncated);
        assert_eq!(
            resp.usage,
            Some(UsageCounters {
                input_tokens: 3,
                output_tokens: 5
            })
        );
        assert!(parse_wire_response("not json").is_err());
        assert!(parse_wire_response(r#"{"no_text":1}"#).is_err());
    }
}
