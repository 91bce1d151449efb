//! Minimal text-over-HTTP transport shared by the external providers.
//!
//! Every external provider speaks the same shape: `POST` a UTF-8 text body,
//! read a UTF-8 text response.

use std::time::Duration;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TextEndpoint {
    url: String,
    agent: ureq::Agent,
}

impl TextEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        TextEndpoint {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post(&self, provider: &str, body: &str) -> Result<String> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("content-type", "text/plain; charset=utf-8")
            .send(body)
            .map_err(|e| Error::provider(provider, format!("{}: {e}", self.url)))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::provider(provider, format!("{}: {e}", self.url)))
    }
}
