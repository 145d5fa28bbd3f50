use std::time::Duration;

use solarlink::server::{Notification, NotificationSink};

use crate::views;

/// Posts each notification as JSON to a fixed URL. Any non-2xx answer,
/// timeout or connection failure counts as a failed attempt.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(5)))
            .build()
            .into();
        WebhookSink {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl NotificationSink for WebhookSink {
    fn deliver(&mut self, n: &Notification) -> Result<(), String> {
        self.agent
            .post(&self.url)
            .send_json(views::notification(n))
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}
