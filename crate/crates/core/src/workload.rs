//! Request payload generation with exact input-token accounting.
//!
//! Synthetic prompts are drawn as token ids and rendered through the
//! configured [`Tokenizer`], so the count the report claims is the count the
//! tokenizer measures. Each prompt index draws from its own ChaCha8 stream
//! (`seed_from_u64(seed)` then `set_stream(index)`), so any single prompt can
//! be regenerated without producing the ones before it.
//!
//! Dataset workloads are read from JSON lines, tokenised, truncated to
//! `truncation_limit` tokens and shuffled once with the workload seed. The
//! resulting order is the dispatch order.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("tokenizer '{0}' is not available")]
    TokenizerUnavailable(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

type Result<T> = std::result::Result<T, WorkloadError>;

/// Text <-> token-id mapping used for accounting.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn vocab_size(&self) -> u32;
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
}

/// Whitespace tokenizer over a synthetic vocabulary.
///
/// Id `i` renders as the word `t<i in hex>`; decoding joins words with single
/// spaces. Encoding splits on whitespace and maps every word to one id
/// (vocabulary words to their own id, anything else by FNV-1a hash), so
/// `encode(decode(ids)) == ids` for in-vocabulary ids and every word of free
/// text counts as exactly one token.
#[derive(Debug, Clone)]
pub struct WhitespaceTokenizer {
    vocab: u32,
}

pub const DEFAULT_VOCAB: u32 = 32_000;

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        Self { vocab: DEFAULT_VOCAB }
    }
}

impl WhitespaceTokenizer {
    fn word_id(&self, word: &str) -> u32 {
        if let Some(hex) = word.strip_prefix('t') {
            if !hex.is_empty() && hex.len() <= 8 && hex.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
                if let Ok(id) = u32::from_str_radix(hex, 16) {
                    if id < self.vocab && format!("{id:x}") == hex {
                        return id;
                    }
                }
            }
        }
        let mut h: u32 = 0x811c_9dc5;
        for b in word.bytes() {
            h ^= b as u32;
            h = h.wrapping_mul(0x0100_0193);
        }
        h % self.vocab
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn vocab_size(&self) -> u32 {
        self.vocab
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.word_id(w)).collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::with_capacity(ids.len() * 5);
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push('t');
            out.push_str(&format!("{id:x}"));
        }
        out
    }
}

/// Resolves a tokenizer by its configured name.
pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer>> {
    match name {
        "whitespace" => Ok(Box::new(WhitespaceTokenizer::default())),
        other => Err(WorkloadError::TokenizerUnavailable(other.to_string())),
    }
}

/// A fixed token count or a uniform range `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenCount {
    Fixed(u32),
    Uniform { min: u32, max: u32 },
}

impl TokenCount {
    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            TokenCount::Fixed(n) => n >= 1,
            TokenCount::Uniform { min, max } => min >= 1 && min <= max,
        };
        if ok {
            Ok(())
        } else {
            Err(WorkloadError::InvalidParam(format!("{what} must be >= 1 (and min <= max)")))
        }
    }

    fn upper(&self) -> u32 {
        match *self {
            TokenCount::Fixed(n) => n,
            TokenCount::Uniform { max, .. } => max,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            TokenCount::Fixed(n) => n,
            TokenCount::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSource {
    Synthetic,
    Dataset {
        path: PathBuf,
        #[serde(default = "default_prompt_field")]
        prompt_field: String,
    },
}

fn default_prompt_field() -> String {
    "prompt".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    /// Send the decoded prompt text as the user message.
    Text,
    /// Send raw token ids, for servers that accept them.
    TokenIds,
}

/// Sampling parameters forwarded with every request. The effective value of
/// each is always archived; unset optional fields are not sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub top_k: Option<u32>,
    /// Also send `min_tokens = max_tokens` so the server cannot stop early.
    #[serde(default = "default_true")]
    pub enforce_min_tokens: bool,
    #[serde(default = "default_true")]
    pub ignore_eos: bool,
    /// Additional pass-through request fields.
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_p: None,
            top_k: None,
            enforce_min_tokens: true,
            ignore_eos: true,
            extra: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub source: WorkloadSource,
    #[serde(default)]
    pub input_tokens: Option<TokenCount>,
    pub output_tokens: TokenCount,
    #[serde(default)]
    pub shared_prefix_fraction: f64,
    pub truncation_limit: u32,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default = "default_tokenizer")]
    pub tokenizer: String,
    #[serde(default = "default_payload")]
    pub payload: PayloadMode,
}

fn default_tokenizer() -> String {
    "whitespace".into()
}

fn default_payload() -> PayloadMode {
    PayloadMode::Text
}

impl WorkloadSpec {
    /// Fixed-length synthetic workload.
    pub fn synthetic(input_tokens: u32, output_tokens: u32, seed: u64) -> Self {
        Self {
            source: WorkloadSource::Synthetic,
            input_tokens: Some(TokenCount::Fixed(input_tokens)),
            output_tokens: TokenCount::Fixed(output_tokens),
            shared_prefix_fraction: 0.0,
            truncation_limit: input_tokens.max(1),
            seed,
            sampling: SamplingParams::default(),
            tokenizer: default_tokenizer(),
            payload: PayloadMode::Text,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shared_prefix_fraction) {
            return Err(WorkloadError::InvalidParam(format!(
                "shared_prefix_fraction must lie in [0, 1], got {}",
                self.shared_prefix_fraction
            )));
        }
        if self.truncation_limit == 0 {
            return Err(WorkloadError::InvalidParam("truncation_limit must be >= 1".into()));
        }
        self.output_tokens.validate("output_tokens")?;
        match &self.source {
            WorkloadSource::Synthetic => {
                let input = self.input_tokens.ok_or_else(|| {
                    WorkloadError::InvalidParam("synthetic workloads require input_tokens".into())
                })?;
                input.validate("input_tokens")?;
                if input.upper() > self.truncation_limit {
                    return Err(WorkloadError::InvalidParam(format!(
                        "input_tokens ({}) exceeds truncation_limit ({})",
                        input.upper(),
                        self.truncation_limit
                    )));
                }
            }
            WorkloadSource::Dataset { .. } => {
                if self.shared_prefix_fraction > 0.0 {
                    return Err(WorkloadError::InvalidParam(
                        "shared_prefix_fraction is only supported for synthetic workloads".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn index_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Requested output length of request `index`.
    pub fn output_tokens_for(&self, index: u64) -> u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6f75_7470_7574);
        rng.set_stream(index);
        self.output_tokens.draw(&mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub token_ids: Vec<u32>,
    pub text: String,
    pub input_token_count: u32,
    pub max_tokens: u32,
    pub prefix_id: Option<u64>,
}

fn instance(tok: &dyn Tokenizer, ids: Vec<u32>, max_tokens: u32, prefix_id: Option<u64>) -> PromptInstance {
    let text = tok.decode(&ids);
    PromptInstance { input_token_count: ids.len() as u32, token_ids: ids, text, max_tokens, prefix_id }
}

/// Synthetic prompt `index` with exactly the configured input length.
pub fn synth_prompt(spec: &WorkloadSpec, index: u64) -> Result<PromptInstance> {
    if spec.source != WorkloadSource::Synthetic {
        return Err(WorkloadError::InvalidParam("synth_prompt requires a synthetic source".into()));
    }
    spec.validate()?;
    let tok = tokenizer_by_name(&spec.tokenizer)?;
    let mut rng = spec.index_rng(index);
    let len = spec.input_tokens.expect("validated").draw(&mut rng);
    let vocab = tok.vocab_size();
    let ids = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    Ok(instance(tok.as_ref(), ids, spec.output_tokens_for(index), None))
}

/// Length of the shared prefix for an input length `input_len`:
/// `ceil(p * I)`.
pub fn shared_prefix_len(fraction: f64, input_len: u32) -> u32 {
    ((fraction * input_len as f64).ceil() as u32).min(input_len)
}

/// `n` synthetic prompts whose first `ceil(p * I)` tokens are identical.
///
/// The first suffix token of each prompt is drawn without replacement, so no
/// two prompts agree past the shared prefix (this needs `n <= vocab`). The
/// remaining suffix tokens are independent.
pub fn prefixed_prompts(spec: &WorkloadSpec, n: usize) -> Result<Vec<PromptInstance>> {
    spec.validate()?;
    if spec.source != WorkloadSource::Synthetic {
        return Err(WorkloadError::InvalidParam("prefixed prompts require a synthetic source".into()));
    }
    let input = match spec.input_tokens {
        Some(TokenCount::Fixed(i)) => i,
        _ => {
            return Err(WorkloadError::InvalidParam(
                "prefixed prompts require a fixed input_tokens count".into(),
            ))
        }
    };
    let tok = tokenizer_by_name(&spec.tokenizer)?;
    let vocab = tok.vocab_size();
    let prefix_len = shared_prefix_len(spec.shared_prefix_fraction, input);
    let suffix_len = input - prefix_len;
    if suffix_len > 0 && n > vocab as usize {
        return Err(WorkloadError::InvalidParam(format!(
            "cannot make {n} distinct suffixes from a vocabulary of {vocab}"
        )));
    }

    let mut shared_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7072_6566_6978);
    let prefix: Vec<u32> = (0..prefix_len).map(|_| shared_rng.gen_range(0..vocab)).collect();
    let heads: Vec<u32> = if suffix_len > 0 {
        index::sample(&mut shared_rng, vocab as usize, n).into_iter().map(|i| i as u32).collect()
    } else {
        Vec::new()
    };
    let prefix_id = (prefix_len > 0).then_some(0);

    Ok((0..n)
        .map(|i| {
            let mut rng = spec.index_rng(i as u64);
            let mut ids = prefix.clone();
            if suffix_len > 0 {
                ids.push(heads[i]);
                ids.extend((1..suffix_len).map(|_| rng.gen_range(0..vocab)));
            }
            instance(tok.as_ref(), ids, spec.output_tokens_for(i as u64), prefix_id)
        })
        .collect())
}

/// Loads, tokenises, truncates and shuffles a JSON-lines dataset.
pub fn load_dataset(spec: &WorkloadSpec) -> Result<Vec<PromptInstance>> {
    spec.validate()?;
    let (path, field) = match &spec.source {
        WorkloadSource::Dataset { path, prompt_field } => (path, prompt_field),
        WorkloadSource::Synthetic => {
            return Err(WorkloadError::InvalidParam("load_dataset requires a dataset source".into()))
        }
    };
    let tok = tokenizer_by_name(&spec.tokenizer)?;
    let prompts = read_prompts(path, field)?;
    let limit = spec.truncation_limit as usize;
    let mut out: Vec<PromptInstance> = prompts
        .into_iter()
        .filter_map(|text| {
            let mut ids = tok.encode(&text);
            if ids.is_empty() {
                return None;
            }
            ids.truncate(limit);
            Some(ids)
        })
        .enumerate()
        .map(|(i, ids)| instance(tok.as_ref(), ids, spec.output_tokens_for(i as u64), None))
        .collect();
    if out.is_empty() {
        return Err(WorkloadError::Format {
            path: path.clone(),
            line: 0,
            message: "dataset contains no non-empty prompts".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    out.shuffle(&mut rng);
    Ok(out)
}

fn read_prompts(path: &Path, field: &str) -> Result<Vec<String>> {
    let io = |source| WorkloadError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut prompts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let format = |message: String| WorkloadError::Format { path: path.to_path_buf(), line: i + 1, message };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| format(e.to_string()))?;
        let text = value
            .get(field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| format(format!("missing string field '{field}'")))?;
        prompts.push(text.to_string());
    }
    Ok(prompts)
}

/// Produces the `n` prompts for one stage in dispatch order. Dataset prompts
/// are reused cyclically when `n` exceeds the dataset size.
pub fn build_workload(spec: &WorkloadSpec, n: usize) -> Result<Vec<PromptInstance>> {
    spec.validate()?;
    match spec.source {
        WorkloadSource::Synthetic if spec.shared_prefix_fraction > 0.0 => prefixed_prompts(spec, n),
        WorkloadSource::Synthetic => (0..n as u64).map(|i| synth_prompt(spec, i)).collect(),
        WorkloadSource::Dataset { .. } => {
            let base = load_dataset(spec)?;
            Ok((0..n)
                .map(|i| {
                    let mut p = base[i % base.len()].clone();
                    p.max_tokens = spec.output_tokens_for(i as u64);
                    p
                })
                .collect())
        }
    }
}

/// Counts and digests describing a generated workload, embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadManifest {
    pub source: String,
    pub tokenizer: String,
    pub count: usize,
    pub seed: u64,
    pub truncation_limit: u32,
    pub total_input_tokens: u64,
    pub total_requested_output_tokens: u64,
    pub shared_prefix_tokens: u32,
    /// `ceil(p * I) / I`; the share of each prompt a prefix cache can reuse.
    pub cache_eligible_fraction: f64,
    pub sampling: SamplingParams,
    /// Hex SHA-256 over every prompt's token ids and max-token value.
    pub digest: String,
}

impl WorkloadManifest {
    pub fn describe(spec: &WorkloadSpec, prompts: &[PromptInstance]) -> Self {
        let mut h = Sha256::new();
        for p in prompts {
            h.update((p.token_ids.len() as u64).to_le_bytes());
            for id in &p.token_ids {
                h.update(id.to_le_bytes());
            }
            h.update(p.max_tokens.to_le_bytes());
        }
        let (prefix, fraction) = match (spec.source.clone(), spec.input_tokens) {
            (WorkloadSource::Synthetic, Some(TokenCount::Fixed(i))) if spec.shared_prefix_fraction > 0.0 => {
                let len = shared_prefix_len(spec.shared_prefix_fraction, i);
                (len, len as f64 / i as f64)
            }
            _ => (0, 0.0),
        };
        let source = match &spec.source {
            WorkloadSource::Synthetic => "synthetic".to_string(),
            WorkloadSource::Dataset { path, .. } => format!("dataset:{}", path.display()),
        };
        Self {
            source,
            tokenizer: spec.tokenizer.clone(),
            count: prompts.len(),
            seed: spec.seed,
            truncation_limit: spec.truncation_limit,
            total_input_tokens: prompts.iter().map(|p| p.input_token_count as u64).sum(),
            total_requested_output_tokens: prompts.iter().map(|p| p.max_tokens as u64).sum(),
            shared_prefix_tokens: prefix,
            cache_eligible_fraction: fraction,
            sampling: spec.sampling.clone(),
            digest: hex::encode(h.finalize()),
        }
    }
}

/// Length of the longest common prefix of two token sequences.
pub fn common_prefix_len(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}
