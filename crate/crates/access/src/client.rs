use std::io::{BufRead, BufReader};
use std::time::Duration;

use organchain_core::identity::SigningKey;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::Method;
use serde_json::{json, Value};
use thiserror::Error;

use crate::routes::Request;
use crate::session::login_message;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    /// Non-2xx answer; `body` is the gateway's JSON error.
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: Value },
    #[error("not logged in")]
    NoSession,
    #[error("bad response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Status code plus JSON body of a successful call.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

/// Blocking HTTP client for the gateway. Not for use inside an async runtime.
pub struct GatewayClient {
    base: String,
    http: Client,
    token: Option<String>,
}

impl GatewayClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        Ok(GatewayClient { base: base_url.trim_end_matches('/').to_string(), http, token: None })
    }

    pub fn with_token(mut self, token: &str) -> Self {
        self.token = Some(token.to_string());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    /// Challenge-response login with the identity's own key.
    pub fn login(&mut self, key: &SigningKey) -> Result<Value, ClientError> {
        let id = key.identity_id();
        let challenge = self.send(self.http.post(self.url("/auth/login")).json(&json!({"identityId": id})))?;
        let nonce = challenge.body["nonce"].as_str().ok_or_else(|| ClientError::Decode("no nonce".into()))?.to_string();
        let signature = hex::encode(key.sign(&login_message(&nonce)).bytes);
        let session = self.send(
            self.http.post(self.url("/auth/login")).json(&json!({"identityId": id, "nonce": nonce, "signature": signature})),
        )?;
        let token = session.body["token"].as_str().ok_or_else(|| ClientError::Decode("no token".into()))?;
        self.token = Some(token.to_string());
        Ok(session.body)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn authed(&self, method: Method, path: &str) -> Result<RequestBuilder, ClientError> {
        let token = self.token.as_ref().ok_or(ClientError::NoSession)?;
        Ok(self.http.request(method, self.url(path)).bearer_auth(token))
    }

    fn send(&self, req: RequestBuilder) -> Result<Reply, ClientError> {
        let resp = req.send().map_err(|e| ClientError::Unreachable(e.to_string()))?;
        decode(resp)
    }

    pub fn request(&self, req: &Request) -> Result<Reply, ClientError> {
        let method = Method::from_bytes(req.http.as_bytes()).map_err(|e| ClientError::Decode(e.to_string()))?;
        let mut builder = self.authed(method, &req.path)?;
        if let Some(body) = &req.body {
            builder = builder.json(body);
        }
        self.send(builder)
    }

    pub fn get(&self, path: &str) -> Result<Reply, ClientError> {
        self.send(self.authed(Method::GET, path)?)
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<Reply, ClientError> {
        self.send(self.authed(Method::POST, path)?.json(body))
    }

    /// Reads a server-sent event stream, handing each `(id, data)` to `f`
    /// until it returns false or the stream ends.
    pub fn events(
        &self,
        path: &str,
        last_event_id: Option<u64>,
        mut f: impl FnMut(Option<String>, Value) -> bool,
    ) -> Result<(), ClientError> {
        let mut builder = self.authed(Method::GET, path)?.timeout(Duration::from_secs(24 * 3600));
        if let Some(id) = last_event_id {
            builder = builder.header("Last-Event-ID", id.to_string());
        }
        let resp = builder.send().map_err(|e| ClientError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return decode(resp).map(|_| ());
        }
        let (mut id, mut data) = (None, String::new());
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| ClientError::Unreachable(e.to_string()))?;
            if line.is_empty() {
                if !data.is_empty() {
                    let value = serde_json::from_str(&data).unwrap_or(Value::String(data.clone()));
                    if !f(id.take(), value) {
                        return Ok(());
                    }
                }
                data.clear();
            } else if let Some(v) = line.strip_prefix("id:") {
                id = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("data:") {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(v.trim_start());
            }
        }
        Ok(())
    }
}

fn decode(resp: Response) -> Result<Reply, ClientError> {
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| ClientError::Decode(e.to_string()))?;
    let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
    if (200..300).contains(&status) {
        Ok(Reply { status, body })
    } else {
        Err(ClientError::Status { status, body })
    }
}
