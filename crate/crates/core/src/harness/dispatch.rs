use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{OnceCell, Semaphore};

use super::cache::ResponseCache;
use super::endpoint::{ModelEndpoint, QueryJob, RunManifest};
use super::image::encode_image;
use super::parse::parse_response;
use super::HarnessError;
use crate::model::{Identity, ParseStatus, ResponseRecord, Task};
use crate::prompt::PromptBuilder;

type Slot = Arc<OnceCell<Result<ResponseRecord, HarnessError>>>;

/// Sends query jobs to one endpoint through a shared cache.
pub struct Dispatcher {
    endpoint: Arc<ModelEndpoint>,
    client: reqwest::Client,
    cache: Arc<ResponseCache>,
    permits: Semaphore,
    in_flight: Mutex<HashMap<String, Slot>>,
    payloads: Mutex<HashMap<String, Arc<String>>>,
    api_key: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(HarnessError),
    Fatal(HarnessError),
}

impl Dispatcher {
    pub fn new(endpoint: ModelEndpoint, cache: Arc<ResponseCache>) -> Result<Self, HarnessError> {
        endpoint.validate()?;
        let client = reqwest::Client::builder()
            .timeout(endpoint.timeout())
            .build()
            .map_err(|e| HarnessError::InvalidManifest(format!("http client: {e}")))?;
        let api_key = endpoint.api_key_env.as_ref().and_then(|var| match std::env::var(var) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("{var} is not set; sending requests without a bearer token");
                None
            }
        });
        Ok(Dispatcher {
            permits: Semaphore::new(endpoint.max_parallel),
            endpoint: Arc::new(endpoint),
            client,
            cache,
            in_flight: Mutex::new(HashMap::new()),
            payloads: Mutex::new(HashMap::new()),
            api_key,
        })
    }

    pub fn endpoint(&self) -> &Arc<ModelEndpoint> {
        &self.endpoint
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Returns the record for `job` and whether it came from the cache.
    ///
    /// Concurrent calls with the same cache key share one network request.
    pub async fn dispatch_query(&self, job: &QueryJob) -> Result<(ResponseRecord, bool), HarnessError> {
        if let Some(hit) = self.cache.get(&job.cache_key) {
            return Ok((hit, true));
        }
        let slot = self
            .in_flight
            .lock()
            .unwrap()
            .entry(job.cache_key.clone())
            .or_default()
            .clone();
        let fresh = AtomicBool::new(false);
        let result = slot
            .get_or_init(|| async {
                if let Some(hit) = self.cache.get(&job.cache_key) {
                    return Ok(hit);
                }
                fresh.store(true, Ordering::Relaxed);
                self.query(job).await
            })
            .await
            .clone();
        if result.is_err() {
            // Let a later call retry a failed cell.
            self.in_flight.lock().unwrap().remove(&job.cache_key);
        }
        result.map(|r| (r, !fresh.load(Ordering::Relaxed)))
    }

    async fn payload(&self, job: &QueryJob) -> Result<Arc<String>, HarnessError> {
        if let Some(p) = self.payloads.lock().unwrap().get(&job.image.image_id) {
            return Ok(p.clone());
        }
        let image = job.image.clone();
        let encoded = tokio::task::spawn_blocking(move || encode_image(&image))
            .await
            .map_err(|e| HarnessError::Cache(format!("encoder task: {e}")))??;
        let encoded = Arc::new(encoded);
        self.payloads
            .lock()
            .unwrap()
            .insert(job.image.image_id.clone(), encoded.clone());
        Ok(encoded)
    }

    async fn query(&self, job: &QueryJob) -> Result<ResponseRecord, HarnessError> {
        let image_url = self.payload(job).await?;
        let body = request_body(&self.endpoint, &image_url, &job.prompt.text);
        let url = self.endpoint.completions_url();
        let attempts = self.endpoint.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                tokio::time::sleep(self.endpoint.backoff(attempt - 1)).await;
            }
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore open");
                self.attempt(&url, &body).await
            };
            match outcome {
                Attempt::Done(raw_text) => return self.finish(job, raw_text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::debug!("{} attempt {attempt}/{attempts}: {e}", job.cache_key);
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(HarnessError::RateLimited { .. }) => HarnessError::RateLimited { attempts },
            Some(e) => HarnessError::EndpointUnreachable {
                url,
                attempts,
                last: e.to_string(),
            },
            None => unreachable!("at least one attempt"),
        })
    }

    async fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = match request.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(HarnessError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fatal(HarnessError::AuthFailure { status }),
            429 => return Attempt::Retry(HarnessError::RateLimited { attempts: 0 }),
            408 | 500..=599 => return Attempt::Retry(HarnessError::HttpStatus { status }),
            _ => return Attempt::Fatal(HarnessError::HttpStatus { status }),
        }
        let value: Value = match response.json().await {
            Ok(v) => v,
            Err(e) => return Attempt::Retry(HarnessError::Transport(e.to_string())),
        };
        match reply_text(&value) {
            Some(text) => Attempt::Done(text),
            None => Attempt::Fatal(HarnessError::BadResponse(truncate(&value.to_string(), 200))),
        }
    }

    fn finish(&self, job: &QueryJob, raw_text: String) -> Result<ResponseRecord, HarnessError> {
        let (parsed_label, parse_status) = parse_response(&raw_text, job.prompt.task);
        let record = ResponseRecord {
            model_id: self.endpoint.model_id.clone(),
            image_id: job.image.image_id.clone(),
            task: job.prompt.task,
            identity: job.prompt.identity,
            raw_text,
            parsed_label,
            parse_status,
            timestamp: Utc::now(),
            template_version: Some(job.prompt.template_version.clone()),
            cache_key: Some(job.cache_key.clone()),
        };
        self.cache.insert(record)
    }
}

/// One user message with an image part followed by a text part.
pub fn request_body(endpoint: &ModelEndpoint, image_url: &str, prompt: &str) -> Value {
    json!({
        "model": endpoint.model_id,
        "temperature": endpoint.temperature,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "image_url", "image_url": {"url": image_url}},
                {"type": "text", "text": prompt},
            ],
        }],
    })
}

/// Assistant text of the first choice; content may be a string or a list of
/// text parts.
pub fn reply_text(value: &Value) -> Option<String> {
    let content = value.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            (!texts.is_empty()).then(|| texts.join("\n"))
        }
        Value::Null => Some(String::new()),
        _ => None,
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub cells: usize,
    pub ok: usize,
    pub fuzzy: usize,
    pub unparseable: usize,
    pub cache_hits: usize,
    pub dispatched: usize,
    pub errors: usize,
}

impl RunStats {
    pub fn unparseable_rate(&self) -> f64 {
        let done = self.ok + self.fuzzy + self.unparseable;
        if done == 0 {
            0.0
        } else {
            self.unparseable as f64 / done as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub image_id: String,
    pub task: Task,
    pub identity: Option<Identity>,
    pub sample: u32,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Records in grid order: image, task, condition, sample.
    pub records: Vec<ResponseRecord>,
    pub stats: RunStats,
    pub failures: Vec<JobFailure>,
}

/// Every job of the manifest's grid, in grid order.
pub fn plan_jobs(manifest: &RunManifest, prompts: &PromptBuilder) -> Vec<QueryJob> {
    let endpoint = Arc::new(manifest.endpoint.clone());
    let conditions = manifest.identity_mode.conditions();
    let mut jobs = Vec::with_capacity(manifest.grid_size());
    for image in &manifest.images {
        for &task in &manifest.tasks {
            for &identity in &conditions {
                let prompt = prompts.build_prompt(task, identity);
                for sample in 0..manifest.repeat {
                    jobs.push(QueryJob::new(image.clone(), prompt.clone(), endpoint.clone(), sample));
                }
            }
        }
    }
    jobs
}

/// Runs the manifest's full grid, reusing cached cells. Per-job failures are
/// collected; only manifest, template or cache problems abort the run.
pub async fn run_evaluation(manifest: &RunManifest) -> Result<RunOutcome, HarnessError> {
    manifest.validate()?;
    let prompts = match &manifest.template_dir {
        Some(dir) => PromptBuilder::from_dir(dir).map_err(|e| HarnessError::InvalidManifest(e.to_string()))?,
        None => PromptBuilder::builtin(),
    };
    let cache = Arc::new(ResponseCache::open(&manifest.cache_path())?);
    let dispatcher = Dispatcher::new(manifest.endpoint.clone(), cache)?;
    run_jobs(&dispatcher, plan_jobs(manifest, &prompts)).await
}

type Indexed = (usize, Result<(ResponseRecord, bool), HarnessError>);

pub async fn run_jobs(dispatcher: &Dispatcher, jobs: Vec<QueryJob>) -> Result<RunOutcome, HarnessError> {
    let width = dispatcher.endpoint().max_parallel.max(1) * 2;
    let mut results: Vec<Indexed> = stream::iter(jobs.iter().enumerate())
        .map(|(i, job)| async move { (i, dispatcher.dispatch_query(job).await) })
        .buffer_unordered(width)
        .collect()
        .await;
    results.sort_by_key(|(i, _)| *i);

    let mut stats = RunStats {
        cells: jobs.len(),
        ..Default::default()
    };
    let mut records = Vec::with_capacity(jobs.len());
    let mut failures = Vec::new();
    for (i, result) in results {
        match result {
            Ok((record, hit)) => {
                if hit {
                    stats.cache_hits += 1;
                } else {
                    stats.dispatched += 1;
                }
                match record.parse_status {
                    ParseStatus::Ok => stats.ok += 1,
                    ParseStatus::Fuzzy => stats.fuzzy += 1,
                    ParseStatus::Unparseable => stats.unparseable += 1,
                }
                records.push(record);
            }
            Err(e) => {
                if matches!(e, HarnessError::Cache(_)) {
                    return Err(e);
                }
                let job = &jobs[i];
                stats.errors += 1;
                failures.push(JobFailure {
                    image_id: job.image.image_id.clone(),
                    task: job.prompt.task,
                    identity: job.prompt.identity,
                    sample: job.sample,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(RunOutcome {
        records,
        stats,
        failures,
    })
}

/// Blocking wrapper that owns a multi-threaded runtime.
pub fn run_evaluation_blocking(manifest: &RunManifest) -> Result<RunOutcome, HarnessError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| HarnessError::Cache(format!("runtime: {e}")))?
        .block_on(run_evaluation(manifest))
}
