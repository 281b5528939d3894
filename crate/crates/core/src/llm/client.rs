use std::sync::{Condvar, Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{render_prompt, request_hash, Bindings, Exchange, LlmError, PromptSpec, ReplayStore};

/// How `complete` obtains a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    /// Call the chat-completion endpoint and record the exchange.
    Live,
    /// Serve from the replay store only. On a miss, use the deterministic
    /// fallback if allowed, otherwise fail with the request hash.
    Replay { fallback_on_miss: bool },
    /// Always use the deterministic fallback composer.
    Fallback,
}

/// Endpoint settings for live mode. The API key is read from the named
/// environment variable at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "G3D_LLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding concurrent live requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable completion client. Safe to use from several worker threads.
#[derive(Debug)]
pub struct LlmClient {
    mode: CompletionMode,
    store: Option<ReplayStore>,
    live: LiveConfig,
    gate: Gate,
    http: OnceLock<reqwest::blocking::Client>,
}

impl LlmClient {
    pub fn new(mode: CompletionMode, store: Option<ReplayStore>, live: LiveConfig) -> Self {
        let gate = Gate::new(live.max_in_flight);
        Self {
            mode,
            store,
            live,
            gate,
            http: OnceLock::new(),
        }
    }

    /// Client that never touches the network or disk.
    pub fn fallback() -> Self {
        Self::new(CompletionMode::Fallback, None, LiveConfig::default())
    }

    pub fn replay(store: ReplayStore, fallback_on_miss: bool) -> Self {
        Self::new(
            CompletionMode::Replay { fallback_on_miss },
            Some(store),
            LiveConfig::default(),
        )
    }

    pub fn mode(&self) -> CompletionMode {
        self.mode
    }

    pub fn store(&self) -> Option<&ReplayStore> {
        self.store.as_ref()
    }

    /// Resolves the prompt and returns the response text. `fallback` is only
    /// invoked in fallback mode or on an allowed replay miss.
    pub fn complete(
        &self,
        spec: &PromptSpec,
        bindings: &Bindings,
        fallback: impl FnOnce() -> String,
    ) -> Result<String, LlmError> {
        let (system, prompt) = render_prompt(spec, bindings)?;
        let hash = request_hash(&spec.name, &system, &prompt);
        match self.mode {
            CompletionMode::Fallback => Ok(fallback()),
            CompletionMode::Replay { fallback_on_miss } => {
                let hit = match &self.store {
                    Some(store) => store.get(&hash)?,
                    None => None,
                };
                match hit {
                    Some(ex) => Ok(ex.response),
                    None if fallback_on_miss => Ok(fallback()),
                    None => Err(LlmError::ReplayMiss {
                        hash,
                        name: spec.name.clone(),
                    }),
                }
            }
            CompletionMode::Live => {
                let response = self.call_live(&system, &prompt)?;
                if let Some(store) = &self.store {
                    let recorded = store.put(Exchange {
                        hash,
                        name: spec.name.clone(),
                        system,
                        prompt,
                        response,
                        timestamp: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map_or(0, |d| d.as_secs()),
                    })?;
                    return Ok(recorded.response);
                }
                Ok(response)
            }
        }
    }

    fn http(&self) -> Result<&reqwest::blocking::Client, LlmError> {
        if let Some(c) = self.http.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.live.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(self.http.get_or_init(|| client))
    }

    fn call_live(&self, system: &str, prompt: &str) -> Result<String, LlmError> {
        let key = std::env::var(&self.live.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(self.live.api_key_env.clone()))?;
        let url = format!(
            "{}/chat/completions",
            self.live.endpoint.trim_end_matches('/')
        );
        let body = json!({
            "model": self.live.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
        });
        let http = self.http()?;
        let attempts = self.live.max_retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.live.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let _pass = self.gate.acquire();
            let resp = match http.post(&url).bearer_auth(&key).json(&body).send() {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() || status.as_u16() == 429 {
                last_error = format!("HTTP {status}");
                continue;
            }
            if !status.is_success() {
                return Err(LlmError::Transport {
                    attempts: attempt + 1,
                    message: format!("HTTP {status}"),
                });
            }
            let value: serde_json::Value = resp
                .json()
                .map_err(|e| LlmError::BadResponse(e.to_string()))?;
            return value["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| LlmError::BadResponse(value.to_string()));
        }
        Err(LlmError::Transport {
            attempts,
            message: last_error,
        })
    }
}
