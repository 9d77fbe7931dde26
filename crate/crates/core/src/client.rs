//! Model clients for fact probing and text polishing.
//!
//! The live client speaks a minimal chat-completion protocol: it POSTs
//! `{"model": .., "messages": [{"role": "user", "content": ..}]}` and reads
//! `choices[0].message.content` from the reply. The mock client answers
//! probes from a closed-world lookup table and polishes by identity, so a
//! pipeline run against it is fully deterministic.

use std::collections::{HashMap, HashSet};
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Known,
    Unknown,
    Undecided,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("precondition failed: {0}")]
    Precondition(&'static str),
    #[error("environment variable `{0}` holding the API token is not set")]
    MissingToken(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Response(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientMode {
    Live,
    Mock,
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub parallelism: usize,
    pub mode: ClientMode,
    /// Log request and response bodies (token redacted).
    pub debug: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            token_env: "COK_API_TOKEN".into(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            parallelism: 4,
            mode: ClientMode::Mock,
            debug: false,
        }
    }
}

/// The two external-model duties of the pipeline, plus free-form completion
/// used for template generation.
pub trait ModelClient: Send + Sync {
    fn probe_fact(&self, sentence: &str) -> Result<Verdict, ClientError>;

    /// Rewrites `text` following `instruction`. Transport failures degrade to
    /// returning `text` unchanged.
    fn polish(&self, instruction: &str, text: &str) -> Result<String, ClientError>;

    /// Raw completion; `None` when the client cannot generate (mock mode).
    fn complete(&self, prompt: &str) -> Option<String>;
}

/// Instruction used when asking the model to smooth a templated answer.
pub const ANSWER_POLISH_INSTRUCTION: &str =
    "Make the following text read naturally. Keep every fact and every name exactly as given, and add nothing:";

/// Prompt asking the model whether it knows a fact. Only an exact `YES` or
/// `NO` reply is accepted.
pub fn probe_prompt(sentence: &str) -> String {
    format!(
        "Answer with exactly one word, YES or NO. Do you know for certain that the following statement is true?\nStatement: {sentence}"
    )
}

pub fn parse_probe_reply(reply: &str) -> Verdict {
    let word = reply.trim().trim_end_matches('.').to_ascii_uppercase();
    match word.as_str() {
        "YES" => Verdict::Known,
        "NO" => Verdict::Unknown,
        _ => Verdict::Undecided,
    }
}

/// Closed-world mock: a sentence is known iff it is in the table.
#[derive(Clone, Debug, Default)]
pub struct MockClient {
    known: HashSet<String>,
}

impl MockClient {
    pub fn new<I: IntoIterator<Item = String>>(known: I) -> Self {
        Self { known: known.into_iter().collect() }
    }
}

impl ModelClient for MockClient {
    fn probe_fact(&self, sentence: &str) -> Result<Verdict, ClientError> {
        if sentence.trim().is_empty() {
            return Err(ClientError::Precondition("probe sentence is empty"));
        }
        Ok(if self.known.contains(sentence) { Verdict::Known } else { Verdict::Unknown })
    }

    fn polish(&self, _instruction: &str, text: &str) -> Result<String, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::Precondition("text to polish is empty"));
        }
        Ok(text.to_owned())
    }

    fn complete(&self, _prompt: &str) -> Option<String> {
        None
    }
}

pub struct LiveClient {
    config: ClientConfig,
    token: String,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        let token = std::env::var(&config.token_env)
            .map_err(|_| ClientError::MissingToken(config.token_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, token, agent })
    }

    fn request_once(&self, prompt: &str) -> Result<String, ClientError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if self.config.debug {
            log::debug!("POST {} (authorization: Bearer [redacted]) {}", self.config.endpoint, body);
        }
        let response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(&body)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if self.config.debug {
            log::debug!("response {status}: {}", text.replace(&self.token, "[redacted]"));
        }
        if !status.is_success() {
            return Err(ClientError::Transport(format!("HTTP {status}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Response(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Response("missing choices[0].message.content".into()))
    }

    /// Sends `prompt`, retrying transport failures with capped exponential
    /// backoff.
    pub fn chat(&self, prompt: &str) -> Result<String, ClientError> {
        let mut attempt = 0;
        loop {
            match self.request_once(prompt) {
                Ok(reply) => return Ok(reply),
                Err(e @ ClientError::Transport(_)) if attempt < self.config.max_retries => {
                    let backoff = Duration::from_millis(100u64 << attempt.min(5)).min(Duration::from_secs(2));
                    log::warn!("request failed ({e}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl ModelClient for LiveClient {
    fn probe_fact(&self, sentence: &str) -> Result<Verdict, ClientError> {
        if sentence.trim().is_empty() {
            return Err(ClientError::Precondition("probe sentence is empty"));
        }
        match self.chat(&probe_prompt(sentence)) {
            Ok(reply) => Ok(parse_probe_reply(&reply)),
            Err(e) => {
                log::warn!("probe undecided: {e}");
                Ok(Verdict::Undecided)
            }
        }
    }

    fn polish(&self, instruction: &str, text: &str) -> Result<String, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::Precondition("text to polish is empty"));
        }
        match self.chat(&format!("{instruction} {text}")) {
            Ok(reply) => Ok(reply.trim().to_owned()),
            Err(e) => {
                log::warn!("polish failed, keeping original text: {e}");
                Ok(text.to_owned())
            }
        }
    }

    fn complete(&self, prompt: &str) -> Option<String> {
        self.chat(prompt).ok()
    }
}

pub fn build_client(
    config: &ClientConfig,
    known: impl IntoIterator<Item = String>,
) -> Result<Box<dyn ModelClient>, ClientError> {
    Ok(match config.mode {
        ClientMode::Mock => Box::new(MockClient::new(known)),
        ClientMode::Live => Box::new(LiveClient::new(config.clone())?),
    })
}

/// Memoizes probe verdicts so one fact gets one answer per run.
pub struct ProbeCache<'a> {
    client: &'a dyn ModelClient,
    cache: RwLock<HashMap<String, Verdict>>,
}

impl<'a> ProbeCache<'a> {
    pub fn new(client: &'a dyn ModelClient) -> Self {
        Self { client, cache: RwLock::new(HashMap::new()) }
    }

    pub fn probe(&self, sentence: &str) -> Verdict {
        if let Some(&v) = self.cache.read().expect("probe cache poisoned").get(sentence) {
            return v;
        }
        let verdict = self.client.probe_fact(sentence).unwrap_or(Verdict::Undecided);
        *self
            .cache
            .write()
            .expect("probe cache poisoned")
            .entry(sentence.to_owned())
            .or_insert(verdict)
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("probe cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn mock_probe_and_polish() {
        let m = MockClient::new(["a is b.".to_string()]);
        assert_eq!(m.probe_fact("a is b.").unwrap(), Verdict::Known);
        assert_eq!(m.probe_fact("c is d.").unwrap(), Verdict::Unknown);
        assert!(m.probe_fact("  ").is_err());
        assert_eq!(m.polish("x", "Some text.").unwrap(), "Some text.");
        assert!(matches!(m.polish("x", ""), Err(ClientError::Precondition(_))));
        assert_eq!(m.complete("hi"), None);
    }

    #[test]
    fn reply_parsing_is_strict() {
        assert_eq!(parse_probe_reply(" yes. "), Verdict::Known);
        assert_eq!(parse_probe_reply("NO"), Verdict::Unknown);
        assert_eq!(parse_probe_reply("Yes, I think so"), Verdict::Undecided);
    }

    struct Counting(AtomicUsize);

    impl ModelClient for Counting {
        fn probe_fact(&self, _s: &str) -> Result<Verdict, ClientError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(if n.is_multiple_of(2) { Verdict::Known } else { Verdict::Unknown })
        }
        fn polish(&self, _i: &str, t: &str) -> Result<String, ClientError> {
            Ok(t.into())
        }
        fn complete(&self, _p: &str) -> Option<String> {
            None
        }
    }

    #[test]
    fn cache_pins_first_verdict() {
        let flaky = Counting(AtomicUsize::new(0));
        let cache = ProbeCache::new(&flaky);
        assert_eq!(cache.probe("f"), Verdict::Known);
        assert_eq!(cache.probe("f"), Verdict::Known);
        assert_eq!(cache.probe("g"), Verdict::Unknown);
        assert_eq!(flaky.0.load(Ordering::SeqCst), 2);
    }

    /// Serves `replies` in order, one HTTP exchange per connection, and
    /// records request bodies.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<std::sync::Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (addr, seen)
    }

    fn chat_reply(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn live(endpoint: String, retries: u32, timeout: Duration) -> LiveClient {
        std::env::set_var("COK_TEST_TOKEN", "secret");
        LiveClient::new(ClientConfig {
            endpoint,
            token_env: "COK_TEST_TOKEN".into(),
            max_retries: retries,
            timeout,
            mode: ClientMode::Live,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn live_probe_round_trip() {
        let (addr, seen) = serve(vec![(200, chat_reply("YES")), (200, chat_reply("maybe"))]);
        let client = live(addr, 0, Duration::from_secs(5));
        assert_eq!(client.probe_fact("Paris is in France.").unwrap(), Verdict::Known);
        assert_eq!(client.probe_fact("Paris is in Peru.").unwrap(), Verdict::Undecided);
        let bodies = seen.lock().unwrap();
        let first: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(first["messages"][0]["role"], "user");
        assert!(first["messages"][0]["content"].as_str().unwrap().contains("Paris is in France."));
    }

    #[test]
    fn live_retries_then_succeeds() {
        let (addr, _) = serve(vec![(500, "{}".into()), (200, chat_reply("NO"))]);
        let client = live(addr, 1, Duration::from_secs(5));
        assert_eq!(client.probe_fact("x y z").unwrap(), Verdict::Unknown);
    }

    #[test]
    fn live_timeout_is_undecided() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/v1", listener.local_addr().unwrap());
        let hold = std::thread::spawn(move || {
            let conn = listener.accept();
            std::thread::sleep(Duration::from_millis(600));
            drop(conn);
        });
        let client = live(addr.clone(), 0, Duration::from_millis(200));
        assert_eq!(client.probe_fact("slow fact").unwrap(), Verdict::Undecided);
        assert_eq!(client.polish("rewrite", "keep me").unwrap(), "keep me");
        hold.join().unwrap();
    }

    #[test]
    fn missing_token_is_reported() {
        let cfg = ClientConfig { token_env: "COK_TOKEN_THAT_IS_NOT_SET".into(), mode: ClientMode::Live, ..Default::default() };
        assert!(matches!(LiveClient::new(cfg), Err(ClientError::MissingToken(_))));
    }
}
