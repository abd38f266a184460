//! Incremental server-sent-event parser for completion streams.
//!
//! Bytes are fed in the order they arrive; every event completed by a feed
//! is attributed to that feed's receipt timestamp by the caller. A chunk
//! counts `token_count` tokens when present, one otherwise, and zero when
//! it carries no text.

use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SseEvent {
    Tokens(u32),
    Usage { prompt_tokens: Option<u32>, completion_tokens: u32 },
    Error(String),
    Done,
}

#[derive(Deserialize)]
struct Chunk {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    token_count: Option<u32>,
    #[serde(default)]
    usage: Option<Usage>,
    #[serde(default)]
    error: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    delta: Option<Delta>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<Delta>,
}

#[derive(Deserialize)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
pub(crate) struct Usage {
    #[serde(default)]
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: u32,
}

fn has_text(c: &Choice) -> bool {
    let nonempty = |s: &Option<String>| s.as_deref().map_or(false, |s| !s.is_empty());
    c.delta.as_ref().map_or(false, |d| nonempty(&d.content))
        || c.message.as_ref().map_or(false, |d| nonempty(&d.content))
        || nonempty(&c.text)
}

fn error_message(v: &serde_json::Value) -> String {
    v.get("message").and_then(|m| m.as_str()).map_or_else(|| v.to_string(), str::to_string)
}

#[derive(Debug, Default)]
pub struct SseParser {
    line: Vec<u8>,
    data: Vec<u8>,
    has_data: bool,
    done: bool,
}

impl SseParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Consumes `bytes`, appending every completed event to `out`.
    pub fn push(&mut self, bytes: &[u8], out: &mut Vec<SseEvent>) {
        let mut rest = bytes;
        while let Some(pos) = rest.iter().position(|&b| b == b'\n') {
            let (head, tail) = rest.split_at(pos);
            rest = &tail[1..];
            if self.line.is_empty() {
                self.line_complete(head, out);
            } else {
                let mut line = std::mem::take(&mut self.line);
                line.extend_from_slice(head);
                self.line_complete(&line, out);
            }
        }
        self.line.extend_from_slice(rest);
    }

    fn line_complete(&mut self, line: &[u8], out: &mut Vec<SseEvent>) {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() {
            if self.has_data {
                let data = std::mem::take(&mut self.data);
                self.has_data = false;
                self.dispatch(&data, out);
            }
            return;
        }
        if let Some(value) = line.strip_prefix(b"data:") {
            let value = value.strip_prefix(b" ").unwrap_or(value);
            if self.has_data {
                self.data.push(b'\n');
            }
            self.data.extend_from_slice(value);
            self.has_data = true;
        }
    }

    fn dispatch(&mut self, data: &[u8], out: &mut Vec<SseEvent>) {
        if data == b"[DONE]" {
            self.done = true;
            out.push(SseEvent::Done);
            return;
        }
        match serde_json::from_slice::<Chunk>(data) {
            Ok(chunk) => {
                if let Some(e) = chunk.error {
                    out.push(SseEvent::Error(error_message(&e)));
                    return;
                }
                if chunk.choices.iter().any(has_text) {
                    out.push(SseEvent::Tokens(chunk.token_count.unwrap_or(1)));
                }
                if let Some(u) = chunk.usage {
                    out.push(SseEvent::Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens });
                }
            }
            Err(e) => out.push(SseEvent::Error(format!("malformed stream chunk: {e}"))),
        }
    }
}

/// Token and usage counts of a non-streaming completion body.
pub fn parse_full_response(body: &[u8]) -> Result<(u32, Option<u32>), String> {
    let chunk: Chunk = serde_json::from_slice(body).map_err(|e| format!("malformed response: {e}"))?;
    if let Some(e) = chunk.error {
        return Err(error_message(&e));
    }
    let words: u32 = chunk
        .choices
        .iter()
        .map(|c| {
            let text = c.message.as_ref().and_then(|m| m.content.as_deref()).or(c.text.as_deref()).unwrap_or("");
            text.split_whitespace().count() as u32
        })
        .sum();
    let server = chunk.usage.map(|u| u.completion_tokens);
    Ok((server.unwrap_or(words), server))
}
