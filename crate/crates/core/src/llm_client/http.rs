use serde_json::{json, Value};
use ureq::Agent;

use super::ClientConfig;

pub(super) enum Failure {
    Transient(String),
    Permanent(String),
}

pub(super) struct Transport {
    agent: Agent,
}

impl Transport {
    pub fn new(config: &ClientConfig) -> Self {
        let agent = Agent::config_builder().timeout_global(Some(config.timeout())).http_status_as_error(false).build().into();
        Transport { agent }
    }

    /// One chat-completions round trip.
    pub fn send(&self, config: &ClientConfig, api_key: Option<&str>, prompt: &str) -> Result<String, Failure> {
        let body = json!({
            "model": config.model_id,
            "temperature": config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&config.endpoint).header("content-type", "application/json");
        if let Some(k) = api_key {
            req = req.header("authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Failure::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => return Err(Failure::Transient(format!("HTTP {status}"))),
            _ => return Err(Failure::Permanent(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Permanent(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Failure::Permanent("response has no choices[0].message.content".into()))
    }
}
