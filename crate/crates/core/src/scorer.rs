//! Probe rating clients.
//!
//! A scorer turns a probe sample into four integer ratings in [1, 5]. The
//! wire contract for remote scorers is a JSON request `{"content": string}`
//! answered by exactly
//! `{"code_quality", "algorithm_and_engineering", "training_suitability", "knowledge_score"}`.
//! The system prompt for wiring a real LLM endpoint ships verbatim in
//! [`PROBE_PROMPT`]. Offline runs read ratings from a line-delimited JSON
//! file keyed by sample id.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System prompt for the external judge endpoint, shipped as-is.
pub const PROBE_PROMPT: &str = include_str!("../assets/probe_prompt.txt");

/// Name of the environment variable holding the scorer endpoint URL.
pub const SCORER_URL_ENV: &str = "GEOMINE_SCORER_URL";

const MAX_ATTEMPTS: usize = 3;

/// One probe's four ratings, each in [1, 5].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRating {
    pub code_quality: u8,
    pub algorithm_and_engineering: u8,
    pub training_suitability: u8,
    pub knowledge_score: u8,
}

impl ProbeRating {
    pub fn uniform(v: u8) -> Self {
        ProbeRating {
            code_quality: v,
            algorithm_and_engineering: v,
            training_suitability: v,
            knowledge_score: v,
        }
    }

    pub fn new(cq: u8, ae: u8, ts: u8, ks: u8) -> Self {
        ProbeRating {
            code_quality: cq,
            algorithm_and_engineering: ae,
            training_suitability: ts,
            knowledge_score: ks,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.code_quality as f64
            + self.algorithm_and_engineering as f64
            + self.training_suitability as f64
            + self.knowledge_score as f64)
            / 4.0
    }

    pub fn min(&self) -> f64 {
        *[
            self.code_quality,
            self.algorithm_and_engineering,
            self.training_suitability,
            self.knowledge_score,
        ]
        .iter()
        .min()
        .unwrap() as f64
    }

    fn check_range(&self) -> std::result::Result<(), ScorerError> {
        for (field, v) in [
            ("code_quality", self.code_quality),
            ("algorithm_and_engineering", self.algorithm_and_engineering),
            ("training_suitability", self.training_suitability),
            ("knowledge_score", self.knowledge_score),
        ] {
            if !(1..=5).contains(&v) {
                return Err(ScorerError::OutOfRange { field, value: v });
            }
        }
        Ok(())
    }
}

/// A probe sample handed to a scorer. Remote scorers need `content`;
/// id-keyed scorers (offline files, stubs) work from `id` alone.
#[derive(Debug, Clone)]
pub struct ProbeRequest {
    pub id: u64,
    pub content: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("rating {field} = {value} out of range [1, 5]")]
    OutOfRange { field: &'static str, value: u8 },
    #[error("probe {0} has no content for a remote scorer")]
    MissingContent(u64),
    #[error("no offline rating for sample {0}")]
    NotFound(u64),
}

enum Disposition {
    /// Worth another attempt; counts toward the retry budget.
    Retry,
    /// This probe will never rate; mark missing immediately.
    Miss,
    /// Abort the whole fetch.
    Fatal,
}

impl ScorerError {
    fn disposition(&self) -> Disposition {
        match self {
            ScorerError::Malformed(_) | ScorerError::OutOfRange { .. } => Disposition::Retry,
            ScorerError::NotFound(_) => Disposition::Miss,
            ScorerError::Unreachable(_) => Disposition::Fatal,
            ScorerError::MissingContent(_) => Disposition::Fatal,
        }
    }
}

pub trait Scorer: Send + Sync {
    fn rate(&self, probe: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError>;
}

/// Rate a batch of probes with bounded parallelism.
///
/// Malformed or out-of-range responses are retried up to 3 attempts and then
/// treated as missing (`None`). Unreachable endpoints abort after the same
/// attempt budget.
pub fn fetch_ratings(
    probes: &[ProbeRequest],
    scorer: &dyn Scorer,
    parallelism: usize,
) -> Result<Vec<Option<ProbeRating>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Other(format!("scorer pool: {e}")))?;
    pool.install(|| {
        probes
            .par_iter()
            .map(|probe| rate_with_retry(probe, scorer))
            .collect()
    })
}

fn rate_with_retry(probe: &ProbeRequest, scorer: &dyn Scorer) -> Result<Option<ProbeRating>> {
    let mut last_fatal: Option<ScorerError> = None;
    for attempt in 1..=MAX_ATTEMPTS {
        match scorer.rate(probe) {
            Ok(rating) => match rating.check_range() {
                Ok(()) => return Ok(Some(rating)),
                Err(e) => {
                    log::warn!("probe {}: attempt {attempt}: {e}", probe.id);
                }
            },
            Err(e) => match e.disposition() {
                Disposition::Retry => {
                    log::warn!("probe {}: attempt {attempt}: {e}", probe.id);
                }
                Disposition::Miss => return Ok(None),
                Disposition::Fatal => {
                    last_fatal = Some(e);
                }
            },
        }
        if last_fatal.is_some() && attempt == MAX_ATTEMPTS {
            break;
        }
    }
    match last_fatal {
        Some(e) => Err(Error::Scorer(e)),
        None => Ok(None),
    }
}

/// Fixed or id-keyed scorer for tests and dry runs.
pub struct StubScorer {
    by_id: HashMap<u64, ProbeRating>,
    default: Option<ProbeRating>,
}

impl StubScorer {
    pub fn fixed(rating: ProbeRating) -> Self {
        StubScorer {
            by_id: HashMap::new(),
            default: Some(rating),
        }
    }

    pub fn by_id(map: HashMap<u64, ProbeRating>, default: Option<ProbeRating>) -> Self {
        StubScorer {
            by_id: map,
            default,
        }
    }
}

impl Scorer for StubScorer {
    fn rate(&self, probe: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError> {
        self.by_id
            .get(&probe.id)
            .copied()
            .or(self.default)
            .ok_or(ScorerError::NotFound(probe.id))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OfflineLine {
    id: u64,
    code_quality: u8,
    algorithm_and_engineering: u8,
    training_suitability: u8,
    knowledge_score: u8,
}

/// Ratings preloaded from a line-delimited JSON file keyed by sample id.
pub struct OfflineScorer {
    ratings: HashMap<u64, ProbeRating>,
}

impl OfflineScorer {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut ratings = HashMap::new();
        for (ix, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: OfflineLine = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: ix + 1,
                reason: e.to_string(),
            })?;
            ratings.insert(
                rec.id,
                ProbeRating::new(
                    rec.code_quality,
                    rec.algorithm_and_engineering,
                    rec.training_suitability,
                    rec.knowledge_score,
                ),
            );
        }
        Ok(OfflineScorer { ratings })
    }
}

impl Scorer for OfflineScorer {
    fn rate(&self, probe: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError> {
        self.ratings
            .get(&probe.id)
            .copied()
            .ok_or(ScorerError::NotFound(probe.id))
    }
}

#[derive(Serialize)]
struct ScoreRequestBody<'a> {
    content: &'a str,
}

/// HTTP client posting `{"content": ...}` to a judge endpoint.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpScorer {
            url: url.into(),
            agent,
        }
    }
}

impl Scorer for HttpScorer {
    fn rate(&self, probe: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError> {
        let content = probe
            .content
            .as_deref()
            .ok_or(ScorerError::MissingContent(probe.id))?;
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(ScoreRequestBody { content })
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) => {
                    ScorerError::Malformed(format!("endpoint returned status {code}"))
                }
                other => ScorerError::Unreachable(other.to_string()),
            })?;
        let rating: ProbeRating = response
            .body_mut()
            .read_json()
            .map_err(|e| ScorerError::Malformed(e.to_string()))?;
        Ok(rating)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn stub_scorer_is_deterministic() {
        let stub = StubScorer::fixed(ProbeRating::new(4, 3, 5, 4));
        let probes: Vec<ProbeRequest> = (0..5)
            .map(|id| ProbeRequest { id, content: None })
            .collect();
        let ratings = fetch_ratings(&probes, &stub, 2).unwrap();
        for r in ratings {
            assert_eq!(r, Some(ProbeRating::new(4, 3, 5, 4)));
        }
    }

    #[test]
    fn schema_requires_exact_key_set() {
        let missing: std::result::Result<ProbeRating, _> = serde_json::from_str(
            r#"{"code_quality": 4, "algorithm_and_engineering": 4, "training_suitability": 4}"#,
        );
        assert!(missing.is_err());
        let extra: std::result::Result<ProbeRating, _> = serde_json::from_str(
            r#"{"code_quality": 4, "algorithm_and_engineering": 4, "training_suitability": 4, "knowledge_score": 4, "bonus": 1}"#,
        );
        assert!(extra.is_err());
    }

    #[test]
    fn out_of_range_rating_goes_missing() {
        struct SevenScorer;
        impl Scorer for SevenScorer {
            fn rate(&self, _: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError> {
                Ok(ProbeRating::uniform(7))
            }
        }
        let probes = vec![ProbeRequest { id: 1, content: None }];
        let ratings = fetch_ratings(&probes, &SevenScorer, 1).unwrap();
        assert_eq!(ratings[0], None);
    }

    #[test]
    fn retries_then_succeeds() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Flaky(AtomicUsize);
        impl Scorer for Flaky {
            fn rate(&self, _: &ProbeRequest) -> std::result::Result<ProbeRating, ScorerError> {
                if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(ScorerError::Malformed("truncated".into()))
                } else {
                    Ok(ProbeRating::uniform(3))
                }
            }
        }
        let probes = vec![ProbeRequest { id: 1, content: None }];
        let ratings = fetch_ratings(&probes, &Flaky(AtomicUsize::new(0)), 1).unwrap();
        assert_eq!(ratings[0], Some(ProbeRating::uniform(3)));
    }

    #[test]
    fn offline_scorer_reads_jsonl_and_misses_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ratings.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id": 10, "code_quality": 5, "algorithm_and_engineering": 4, "training_suitability": 5, "knowledge_score": 3}"#,
                "\n",
                r#"{"id": 11, "code_quality": 2, "algorithm_and_engineering": 2, "training_suitability": 1, "knowledge_score": 2}"#,
                "\n"
            ),
        )
        .unwrap();
        let scorer = OfflineScorer::load(&path).unwrap();
        let probes = vec![
            ProbeRequest { id: 10, content: None },
            ProbeRequest { id: 99, content: None },
        ];
        let ratings = fetch_ratings(&probes, &scorer, 1).unwrap();
        assert_eq!(ratings[0], Some(ProbeRating::new(5, 4, 5, 3)));
        assert_eq!(ratings[1], None);
    }

    /// Minimal one-shot HTTP server speaking just enough HTTP/1.1 for ureq.
    fn serve_once(listener: TcpListener, body: &'static str) -> std::thread::JoinHandle<String> {
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            let request = loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let text = String::from_utf8_lossy(&buf[..read]).to_string();
                if let Some(header_end) = text.find("\r\n\r\n") {
                    let content_length = text
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if read >= header_end + 4 + content_length {
                        break text;
                    }
                }
            };
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
            request
        })
    }

    #[test]
    fn http_scorer_posts_content_and_parses_reply() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = serve_once(
            listener,
            r#"{"code_quality": 4, "algorithm_and_engineering": 3, "training_suitability": 5, "knowledge_score": 2}"#,
        );
        let scorer = HttpScorer::new(format!("http://{addr}/rate"));
        let rating = scorer
            .rate(&ProbeRequest {
                id: 7,
                content: Some("fn main() {}".into()),
            })
            .unwrap();
        assert_eq!(rating, ProbeRating::new(4, 3, 5, 2));
        let request = handle.join().unwrap();
        let body_start = request.find("\r\n\r\n").unwrap() + 4;
        let body: serde_json::Value = serde_json::from_str(&request[body_start..]).unwrap();
        assert_eq!(body, serde_json::json!({"content": "fn main() {}"}));
    }

    #[test]
    fn http_scorer_unreachable_is_fatal() {
        let scorer = HttpScorer::new("http://127.0.0.1:9/rate");
        let probes = vec![ProbeRequest {
            id: 1,
            content: Some("x".into()),
        }];
        assert!(fetch_ratings(&probes, &scorer, 1).is_err());
    }

    #[test]
    fn prompt_asset_ships_with_placeholder_and_key_names() {
        assert!(PROBE_PROMPT.contains("$content"));
        for key in [
            "code_quality",
            "algorithm_and_engineering",
            "training_suitability",
            "knowledge_score",
        ] {
            assert!(PROBE_PROMPT.contains(key), "prompt missing {key}");
        }
    }
}
