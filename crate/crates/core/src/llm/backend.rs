//! Completion backends: a JSON-over-HTTP client for real inference servers
//! and a deterministic mock selected by `mock://` endpoint URLs.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use url::Url;

use crate::error::{Error, Result};
use crate::llm::GenerationConfig;

pub struct Completion {
    pub text: String,
    pub latency_ms: f64,
}

pub trait CompletionBackend: Send + Sync {
    /// One completion for one prompt, truncated at the first stop sequence.
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<Completion>;
}

/// Cut `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let mut cut = text.len();
    for stop in stops {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(stop.as_str()) {
            cut = cut.min(pos);
        }
    }
    text[..cut].to_string()
}

/// Pick a backend from the endpoint URL scheme.
pub fn backend_for(config: &GenerationConfig) -> Result<Box<dyn CompletionBackend>> {
    let url = Url::parse(&config.endpoint_url)
        .map_err(|e| Error::InvalidConfig(format!("endpoint-url: {e}")))?;
    match url.scheme() {
        "mock" => Ok(Box::new(MockBackend::from_url(&url, config.seed)?)),
        "http" | "https" => Ok(Box::new(HttpBackend::new(config)?)),
        other => Err(Error::InvalidConfig(format!(
            "unsupported endpoint scheme {other:?}"
        ))),
    }
}

/// Env var holding the bearer token for HTTP endpoints, if any.
pub const API_KEY_VAR: &str = "SYNQUERY_API_KEY";

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &GenerationConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            url: config.endpoint_url.clone(),
            api_key: std::env::var(API_KEY_VAR).ok(),
        })
    }

    fn attempt(&self, prompt: &str, config: &GenerationConfig) -> Result<Completion> {
        let mut body = json!({
            "prompt": prompt,
            "max_tokens": config.max_new_tokens,
            "top_p": config.top_p,
            "stop": config.stop_sequences,
        });
        if let Some(seed) = config.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let started = Instant::now();
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Error::Transport {
                    attempts: 1,
                    reason: format!("timeout after {} ms", config.timeout_ms),
                }
            } else {
                Error::Transport {
                    attempts: 1,
                    reason: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::MalformedResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::EndpointStatus {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(e.to_string()))?;
        let completion = parsed
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| Error::MalformedResponse("missing \"text\" field".into()))?;
        Ok(Completion {
            text: truncate_at_stop(completion, &config.stop_sequences),
            latency_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<Completion> {
        let attempts = config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * u64::from(attempt)));
            }
            match self.attempt(prompt, config) {
                Ok(c) => return Ok(c),
                Err(e) => last = Some(e),
            }
        }
        match last.unwrap() {
            Error::Transport { reason, .. } => Err(Error::Transport { attempts, reason }),
            other => Err(other),
        }
    }
}

/// Deterministic stand-in for a completion endpoint.
///
/// `mock://generator?empty=0.03&dup=0.02&seed=5` draws per-document outcomes
/// from a hash of (seed, document text): a blank completion with rate
/// `empty`, the first example question with rate `dup`, otherwise a short
/// content question built from words of the document. Documents containing
/// the literal markers `[[EMPTY]]`, `[[DUP]]`, or `[[FAIL]]` force those
/// outcomes regardless of rates; `[[FAIL]]` simulates a transport failure.
///
/// Parsing assumption: the prompt's last line is "{question-label}:" and the
/// line above it is "{document-label}: {target document}", which is what
/// build_prompt emits.
pub struct MockBackend {
    empty_rate: f64,
    dup_rate: f64,
    seed: u64,
}

impl MockBackend {
    pub fn from_url(url: &Url, config_seed: Option<u64>) -> Result<Self> {
        let mut empty_rate = 0.0;
        let mut dup_rate = 0.0;
        let mut seed = config_seed.unwrap_or(0);
        for (k, v) in url.query_pairs() {
            match k.as_ref() {
                "empty" => {
                    empty_rate = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("mock empty={v}")))?
                }
                "dup" => {
                    dup_rate = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("mock dup={v}")))?
                }
                "seed" => {
                    seed = v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("mock seed={v}")))?
                }
                other => {
                    return Err(Error::InvalidConfig(format!("unknown mock param {other:?}")))
                }
            }
        }
        if !(0.0..=1.0).contains(&empty_rate) || !(0.0..=1.0).contains(&dup_rate) {
            return Err(Error::InvalidConfig("mock rates must be in [0, 1]".into()));
        }
        Ok(MockBackend {
            empty_rate,
            dup_rate,
            seed,
        })
    }

    fn doc_digest(&self, doc: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(doc.as_bytes());
        hasher.finalize().into()
    }

    fn content_question(&self, doc: &str) -> String {
        let words: Vec<&str> = doc.split_whitespace().collect();
        if words.is_empty() {
            return String::new();
        }
        let mut rng = ChaCha8Rng::from_seed(self.doc_digest(doc));
        let take = words.len().min(4);
        let mut picked = sample(&mut rng, words.len(), take).into_vec();
        picked.sort_unstable();
        let chosen: Vec<String> = picked
            .into_iter()
            .map(|i| words[i].to_lowercase())
            .collect();
        format!("What is {}?", chosen.join(" "))
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &str, config: &GenerationConfig) -> Result<Completion> {
        let mut lines = prompt.lines().rev();
        let tail = lines.next().unwrap_or("");
        if !tail.ends_with(':') {
            return Err(Error::MalformedResponse(
                "mock expects a prompt ending in a label".into(),
            ));
        }
        let question_label = &tail[..tail.len() - 1];
        let doc_line = lines.next().unwrap_or("");
        let doc = doc_line.split_once(": ").map(|(_, d)| d).unwrap_or(doc_line);

        if doc.contains("[[FAIL]]") {
            return Err(Error::Transport {
                attempts: config.max_retries + 1,
                reason: "mock forced failure".into(),
            });
        }

        let digest = self.doc_digest(doc);
        let h = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let u = h as f64 / u64::MAX as f64;
        let latency_ms = 5.0 + (h % 2000) as f64 / 100.0;

        let raw = if doc.contains("[[EMPTY]]") || u < self.empty_rate {
            "   \nleftover".to_string()
        } else if doc.contains("[[DUP]]") || u < self.empty_rate + self.dup_rate {
            // first example question in the prompt
            let prefix = format!("{question_label}: ");
            let echoed = prompt
                .lines()
                .find_map(|l| l.strip_prefix(prefix.as_str()))
                .unwrap_or("What?");
            format!(" {echoed}\nleftover")
        } else {
            format!(" {}\nleftover", self.content_question(doc))
        };
        Ok(Completion {
            text: truncate_at_stop(&raw, &config.stop_sequences),
            latency_ms,
        })
    }
}
