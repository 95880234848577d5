use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::cache::{request_key, LlmAnnotation, ResponseCache};
use super::client::{ChatClient, RateLimiter};
use super::parse::parse_response;
use super::prompt::{PersonaProfile, PromptTemplate};
use crate::corpus::{text_fingerprint, Corpus, Label};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub template: PromptTemplate,
    /// Identifiers substituted for `{target_list}`.
    pub targets: Vec<String>,
    pub seed: u64,
    /// Replies that fail to parse are re-requested up to this many times in total.
    pub parse_attempts: u32,
    pub endpoint_retries: u32,
    pub max_concurrency: usize,
    /// Annotate only the first `n` records.
    pub limit: Option<usize>,
    /// Base wait between endpoint retries, doubled each time.
    pub backoff: Duration,
}

impl BatchOptions {
    pub fn new(template: PromptTemplate, targets: Vec<String>) -> Self {
        BatchOptions {
            template,
            targets,
            seed: 0,
            parse_attempts: 3,
            endpoint_retries: 3,
            max_concurrency: 4,
            limit: None,
            backoff: Duration::from_millis(500),
        }
    }
}

/// Result of a persona-conditioned pass over a human corpus.
#[derive(Debug)]
pub struct LlmBatch {
    /// Mirror of the human corpus with model labels; invalid replies are left out.
    pub corpus: Corpus,
    pub annotations: BTreeMap<String, LlmAnnotation>,
    /// Record ids whose replies never parsed.
    pub invalid: Vec<String>,
    pub network_calls: usize,
    pub cache_hits: usize,
}

impl LlmBatch {
    pub fn invalid_rate(&self) -> f64 {
        if self.annotations.is_empty() {
            0.0
        } else {
            self.invalid.len() as f64 / self.annotations.len() as f64
        }
    }
}

struct Job<'a> {
    key: String,
    post_id: &'a str,
    text: &'a str,
    persona: PersonaProfile,
    base: bool,
}

pub struct Annotator<'a> {
    pub client: &'a dyn ChatClient,
    pub limiter: Option<&'a RateLimiter>,
    pub cache: Option<&'a ResponseCache>,
    pub options: BatchOptions,
    calls: AtomicUsize,
    hits: AtomicUsize,
}

fn text_for<'t>(texts: &'t BTreeMap<String, String>, post_id: &str) -> Result<&'t str> {
    texts
        .get(post_id)
        .map(String::as_str)
        .ok_or_else(|| Error::InvalidInput(format!("no text for post `{post_id}`")))
}

impl<'a> Annotator<'a> {
    pub fn new(client: &'a dyn ChatClient, options: BatchOptions) -> Self {
        Annotator {
            client,
            limiter: None,
            cache: None,
            options,
            calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        }
    }

    pub fn with_limiter(mut self, limiter: &'a RateLimiter) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_cache(mut self, cache: &'a ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn network_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Cache namespace: template id and body digest, plus the seed when the
    /// body draws a random persona feature.
    fn template_key(&self, base: bool) -> String {
        let t = &self.options.template;
        let digest = sha256_hex(&[t.body.as_bytes()]);
        let mut key = format!("{}:{}", t.id.as_str(), &digest[..12]);
        if base {
            key.push_str(":base");
        } else if t.placeholders().contains(&"annotator_random_feature") {
            key.push_str(&format!(":seed{}", self.options.seed));
        }
        key
    }

    /// One persona-conditioned label per human record.
    pub fn annotate_corpus(&self, human: &Corpus, texts: &BTreeMap<String, String>) -> Result<LlmBatch> {
        let records = &human.records()[..self.options.limit.unwrap_or(usize::MAX).min(human.len())];
        let template_key = self.template_key(false);
        let mut jobs: Vec<Job> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        let mut record_job = Vec::with_capacity(records.len());
        for r in records {
            let text = text_for(texts, &r.post_id)?;
            let persona = PersonaProfile::of(r);
            let key = request_key(self.client.model(), &template_key, &persona.hash(), &text_fingerprint(text));
            let i = *slot.entry(key.clone()).or_insert_with(|| {
                jobs.push(Job {
                    key,
                    post_id: &r.post_id,
                    text,
                    persona,
                    base: false,
                });
                jobs.len() - 1
            });
            record_job.push(i);
        }
        let hits_before = self.hits.load(Ordering::Relaxed);
        let calls_before = self.network_calls();
        let results = self.run(&jobs)?;

        let mut annotations = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut invalid = Vec::new();
        for (r, &j) in records.iter().zip(&record_job) {
            let ann = &results[j];
            match ann.label {
                Some(l) => {
                    labels.insert(r.record_id.clone(), l);
                }
                None => invalid.push(r.record_id.clone()),
            }
            annotations.insert(r.record_id.clone(), ann.clone());
        }
        if !invalid.is_empty() {
            tracing::warn!(invalid = invalid.len(), total = records.len(), "replies that never parsed");
        }
        Ok(LlmBatch {
            corpus: human.with_labels(&labels)?,
            annotations,
            invalid,
            network_calls: self.network_calls() - calls_before,
            cache_hits: self.hits.load(Ordering::Relaxed) - hits_before,
        })
    }

    /// One persona-free label per post.
    pub fn annotate_base(
        &self,
        corpus: &Corpus,
        texts: &BTreeMap<String, String>,
    ) -> Result<BTreeMap<String, LlmAnnotation>> {
        let template_key = self.template_key(true);
        let persona = PersonaProfile::default();
        let mut jobs = Vec::new();
        for post_id in corpus.index().keys() {
            let text = text_for(texts, post_id)?;
            jobs.push(Job {
                key: request_key(self.client.model(), &template_key, &persona.hash(), &text_fingerprint(text)),
                post_id,
                text,
                persona: persona.clone(),
                base: true,
            });
        }
        let results = self.run(&jobs)?;
        Ok(jobs.iter().map(|j| j.post_id.to_string()).zip(results).collect())
    }

    fn run(&self, jobs: &[Job]) -> Result<Vec<LlmAnnotation>> {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        let out: Mutex<Vec<Option<LlmAnnotation>>> = Mutex::new(vec![None; jobs.len()]);
        let workers = self.options.max_concurrency.clamp(1, jobs.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() || abort.load(Ordering::Relaxed) {
                        break;
                    }
                    match self.one(&jobs[i]) {
                        Ok(a) => out.lock().expect("results lock")[i] = Some(a),
                        Err(e) => {
                            abort.store(true, Ordering::Relaxed);
                            first_error.lock().expect("error lock").get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().expect("error lock") {
            return Err(e);
        }
        Ok(out
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|a| a.expect("every job finished"))
            .collect())
    }

    fn one(&self, job: &Job) -> Result<LlmAnnotation> {
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(&job.key)? {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        let opts = &self.options;
        let prompt = if job.base {
            opts.template.render_base(job.text, &opts.targets)?
        } else {
            opts.template.render(&job.persona, job.text, &opts.targets, opts.seed)?
        };
        let mut ann = LlmAnnotation {
            post_id: job.post_id.to_string(),
            persona: job.persona.clone(),
            label: None,
            targets: Vec::new(),
            raw_response: String::new(),
            attempts: 0,
            endpoint_id: self.client.endpoint_id(),
        };
        while ann.attempts < opts.parse_attempts.max(1) {
            ann.attempts += 1;
            ann.raw_response = self.send(&prompt)?;
            let parsed = parse_response(&ann.raw_response);
            ann.targets = parsed.targets;
            if parsed.label.is_some() {
                ann.label = parsed.label;
                break;
            }
        }
        if let Some(cache) = self.cache {
            cache.put(&job.key, &ann)?;
        }
        Ok(ann)
    }

    fn send(&self, prompt: &str) -> Result<String> {
        let mut tries = 0;
        loop {
            if let Some(l) = self.limiter {
                l.acquire();
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.client.complete(prompt) {
                Ok(s) => return Ok(s),
                Err(e) if e.is_endpoint() && tries < self.options.endpoint_retries => {
                    tracing::debug!(error = %e, tries, "retrying endpoint");
                    std::thread::sleep(self.options.backoff * 2u32.saturating_pow(tries));
                    tries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Persona-conditioned LLM mirror of `human`.
pub fn build_llm_corpus(
    human: &Corpus,
    texts: &BTreeMap<String, String>,
    annotator: &Annotator,
) -> Result<LlmBatch> {
    annotator.annotate_corpus(human, texts)
}

/// Labels of an [`LlmBatch`] or base run keyed by their map key, valid ones only.
pub fn valid_labels(anns: &BTreeMap<String, LlmAnnotation>) -> BTreeMap<String, Label> {
    anns.iter().filter_map(|(k, a)| a.label.map(|l| (k.clone(), l))).collect()
}
