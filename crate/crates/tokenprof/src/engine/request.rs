//! OpenAI-compatible request bodies, serialised before the stage starts so
//! dispatch never formats JSON.

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokenprof_core::workload::{PayloadMode, PromptInstance, SamplingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Api {
    #[default]
    Chat,
    Completions,
}

impl Api {
    pub fn path(self) -> &'static str {
        match self {
            Api::Chat => "/v1/chat/completions",
            Api::Completions => "/v1/completions",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RequestTemplate {
    pub api: Api,
    pub stream: bool,
    pub model: String,
    pub sampling: SamplingParams,
    pub payload: PayloadMode,
}

impl RequestTemplate {
    pub fn body(&self, prompt: &PromptInstance) -> Bytes {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.model));
        match (self.api, self.payload) {
            (Api::Chat, _) => {
                body.insert("messages".into(), json!([{ "role": "user", "content": prompt.text }]));
            }
            (Api::Completions, PayloadMode::Text) => {
                body.insert("prompt".into(), json!(prompt.text));
            }
            (Api::Completions, PayloadMode::TokenIds) => {
                body.insert("prompt".into(), json!(prompt.token_ids));
            }
        }
        body.insert("max_tokens".into(), json!(prompt.max_tokens));
        if self.sampling.enforce_min_tokens {
            body.insert("min_tokens".into(), json!(prompt.max_tokens));
        }
        if self.sampling.ignore_eos {
            body.insert("ignore_eos".into(), json!(true));
        }
        body.insert("temperature".into(), json!(self.sampling.temperature));
        if let Some(p) = self.sampling.top_p {
            body.insert("top_p".into(), json!(p));
        }
        if let Some(k) = self.sampling.top_k {
            body.insert("top_k".into(), json!(k));
        }
        body.insert("stream".into(), json!(self.stream));
        if self.stream {
            body.insert("stream_options".into(), json!({ "include_usage": true }));
        }
        for (k, v) in &self.sampling.extra {
            body.insert(k.clone(), v.clone());
        }
        Bytes::from(serde_json::to_vec(&Value::Object(body)).expect("json values serialise"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt() -> PromptInstance {
        PromptInstance { token_ids: vec![1, 2], text: "t1 t2".into(), input_token_count: 2, max_tokens: 7, prefix_id: None }
    }

    #[test]
    fn chat_body_carries_sampling() {
        let mut sampling = SamplingParams::default();
        sampling.extra.insert("seed".into(), json!(3));
        let t = RequestTemplate { api: Api::Chat, stream: true, model: "m".into(), sampling, payload: PayloadMode::Text };
        let v: Value = serde_json::from_slice(&t.body(&prompt())).unwrap();
        assert_eq!(v["messages"][0]["content"], "t1 t2");
        assert_eq!(v["max_tokens"], 7);
        assert_eq!(v["min_tokens"], 7);
        assert_eq!(v["temperature"], 1.0);
        assert_eq!(v["stream"], true);
        assert_eq!(v["seed"], 3);
        assert!(v.get("top_p").is_none());
    }

    #[test]
    fn completions_token_ids() {
        let t = RequestTemplate {
            api: Api::Completions,
            stream: false,
            model: "m".into(),
            sampling: SamplingParams { enforce_min_tokens: false, ..Default::default() },
            payload: PayloadMode::TokenIds,
        };
        let v: Value = serde_json::from_slice(&t.body(&prompt())).unwrap();
        assert_eq!(v["prompt"], json!([1, 2]));
        assert!(v.get("min_tokens").is_none());
        assert!(v.get("stream_options").is_none());
    }
}
