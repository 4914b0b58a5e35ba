use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::ground_truth::ScoreScale;
use crate::model::{identity_grid, Identity, ImageRecord, Task};
use crate::prompt::RenderedPrompt;

fn default_parallel() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_repeat() -> u32 {
    1
}

/// A chat-completions compatible endpoint serving one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub model_id: String,
    /// Base URL without the `/chat/completions` suffix.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl ModelEndpoint {
    pub fn new(model_id: &str, base_url: &str) -> Self {
        ModelEndpoint {
            model_id: model_id.to_string(),
            base_url: base_url.to_string(),
            api_key_env: None,
            max_parallel: default_parallel(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::InvalidManifest(m));
        if self.model_id.trim().is_empty() {
            return fail("endpoint.model_id is empty".into());
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return fail(format!("endpoint.base_url `{}` is not an http(s) URL", self.base_url));
        }
        if self.max_parallel < 1 {
            return fail("endpoint.max_parallel must be at least 1".into());
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return fail("endpoint.timeout_secs must be positive".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return fail("endpoint.temperature must be non-negative".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Delay before retry number `attempt` (1-based), capped at 30 s.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor).min(30_000))
    }
}

/// Digest identifying one grid cell. The sample index enters only for
/// repeated sampling so single-sample keys stay stable.
pub fn cache_key(
    model_id: &str,
    image_id: &str,
    task: Task,
    identity: Option<Identity>,
    template_version: &str,
    sample: u32,
) -> String {
    let identity = identity.map_or_else(|| "default".to_string(), |g| g.to_string());
    let mut h = Sha256::new();
    for part in [model_id, image_id, task.as_str(), &identity, template_version] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    if sample > 0 {
        h.update(sample.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug)]
pub struct QueryJob {
    pub image: ImageRecord,
    pub prompt: RenderedPrompt,
    pub endpoint: Arc<ModelEndpoint>,
    pub sample: u32,
    pub cache_key: String,
}

impl QueryJob {
    pub fn new(image: ImageRecord, prompt: RenderedPrompt, endpoint: Arc<ModelEndpoint>, sample: u32) -> Self {
        let cache_key = cache_key(
            &endpoint.model_id,
            &image.image_id,
            prompt.task,
            prompt.identity,
            &prompt.template_version,
            sample,
        );
        QueryJob {
            image,
            prompt,
            endpoint,
            sample,
            cache_key,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityMode {
    DefaultOnly,
    IdentityOnly,
    #[default]
    Both,
}

impl IdentityMode {
    /// Prompt conditions in grid order: default first, then the 12 identities.
    pub fn conditions(self) -> Vec<Option<Identity>> {
        let mut out = Vec::new();
        if self != IdentityMode::IdentityOnly {
            out.push(None);
        }
        if self != IdentityMode::DefaultOnly {
            out.extend(identity_grid().into_iter().map(Some));
        }
        out
    }
}

/// A run description, stored as TOML. Relative paths are resolved against
/// the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Rating endpoints `[r, R]` of the dataset.
    pub scale: [f64; 2],
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub identity_mode: IdentityMode,
    #[serde(default = "default_repeat")]
    pub repeat: u32,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub template_dir: Option<PathBuf>,
    pub endpoint: ModelEndpoint,
    pub images: Vec<ImageRecord>,
}

impl RunManifest {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let manifest: RunManifest = toml::from_str(text).map_err(|e| HarnessError::InvalidManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::InvalidManifest(format!("{}: {e}", path.display())))?;
        let mut manifest = RunManifest::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            manifest.resolve_paths(dir);
        }
        Ok(manifest)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
        self.cache = self.cache.as_deref().map(resolve);
        self.template_dir = self.template_dir.as_deref().map(resolve);
        for image in &mut self.images {
            if !is_remote(&image.path_or_uri) && Path::new(&image.path_or_uri).is_relative() {
                image.path_or_uri = dir.join(&image.path_or_uri).display().to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::InvalidManifest(m.to_string()));
        ScoreScale::new(self.scale[0], self.scale[1]).map_err(|e| HarnessError::InvalidManifest(e.to_string()))?;
        if self.images.is_empty() {
            return fail("images is empty");
        }
        if self.tasks.is_empty() {
            return fail("tasks is empty");
        }
        if self.repeat < 1 {
            return fail("repeat must be at least 1");
        }
        let mut seen = HashSet::new();
        for image in &self.images {
            if !seen.insert(image.image_id.as_str()) {
                return Err(HarnessError::InvalidManifest(format!("duplicate image_id `{}`", image.image_id)));
            }
        }
        self.endpoint.validate()
    }

    pub fn score_scale(&self) -> ScoreScale {
        ScoreScale {
            r: self.scale[0],
            big_r: self.scale[1],
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| PathBuf::from("responses.jsonl"))
    }

    /// Number of records a complete run produces.
    pub fn grid_size(&self) -> usize {
        self.images.len() * self.tasks.len() * self.identity_mode.conditions().len() * self.repeat as usize
    }
}

pub(crate) fn is_remote(uri: &str) -> bool {
    ["http://", "https://", "data:"].iter().any(|p| uri.starts_with(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, Gender, ImageType};

    const MANIFEST: &str = r#"
run_id = "demo"
scale = [1.0, 5.0]
tasks = ["perception", "empathy"]
identity_mode = "both"

[endpoint]
model_id = "m"
base_url = "http://127.0.0.1:9"
max_parallel = 2

[[images]]
image_id = "a"
path_or_uri = "img/a.png"
image_type = "still life"
dataset = "para"
"#;

    #[test]
    fn manifest_round_trip_and_paths() {
        let m = RunManifest::from_toml_str(MANIFEST).unwrap();
        assert_eq!(m.endpoint.timeout_secs, 60.0);
        assert_eq!(m.endpoint.temperature, 0.0);
        assert_eq!(m.images[0].image_type, ImageType::StillLife);
        assert_eq!(m.grid_size(), 2 * 13);
        let again = RunManifest::from_toml_str(&m.to_toml_string()).unwrap();
        assert_eq!(again, m);
        let mut resolved = m.clone();
        resolved.resolve_paths(Path::new("/data"));
        assert_eq!(resolved.images[0].path_or_uri, "/data/img/a.png");
    }

    #[test]
    fn manifest_invariants() {
        let bad_scale = MANIFEST.replace("[1.0, 5.0]", "[5.0, 1.0]");
        assert!(RunManifest::from_toml_str(&bad_scale).is_err());
        let no_images = MANIFEST.split("[[images]]").next().unwrap().to_string() + "images = []\n";
        assert!(RunManifest::from_toml_str(&no_images).is_err());
        let zero_parallel = MANIFEST.replace("max_parallel = 2", "max_parallel = 0");
        assert!(RunManifest::from_toml_str(&zero_parallel).is_err());
        let mut m = RunManifest::from_toml_str(MANIFEST).unwrap();
        m.images.push(m.images[0].clone());
        assert!(m.validate().is_err());
        m.images.pop();
        m.endpoint.timeout_secs = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn grid_arithmetic() {
        let mut m = RunManifest::from_toml_str(MANIFEST).unwrap();
        m.tasks = Task::ALL.to_vec();
        m.images.push(ImageRecord {
            image_id: "b".into(),
            path_or_uri: "b.png".into(),
            image_type: ImageType::Animal,
            dataset: Dataset::Custom,
        });
        assert_eq!(m.grid_size(), 78);
        m.identity_mode = IdentityMode::DefaultOnly;
        assert_eq!(m.grid_size(), 6);
        m.identity_mode = IdentityMode::IdentityOnly;
        assert_eq!(m.grid_size(), 72);
    }

    #[test]
    fn cache_key_separates_fields() {
        let g = Some(Identity::Gender(Gender::Male));
        let base = cache_key("m", "i", Task::Perception, g, "1", 0);
        assert_eq!(base.len(), 64);
        assert_eq!(base, cache_key("m", "i", Task::Perception, g, "1", 0));
        for other in [
            cache_key("m2", "i", Task::Perception, g, "1", 0),
            cache_key("m", "i2", Task::Perception, g, "1", 0),
            cache_key("m", "i", Task::Empathy, g, "1", 0),
            cache_key("m", "i", Task::Perception, None, "1", 0),
            cache_key("m", "i", Task::Perception, g, "2", 0),
            cache_key("m", "i", Task::Perception, g, "1", 1),
            cache_key("mi", "", Task::Perception, g, "1", 0),
        ] {
            assert_ne!(base, other);
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let e = ModelEndpoint::new("m", "http://x");
        assert_eq!(e.backoff(1), Duration::from_millis(500));
        assert_eq!(e.backoff(3), Duration::from_millis(2000));
        assert_eq!(e.backoff(40), Duration::from_secs(30));
        assert_eq!(e.completions_url(), "http://x/chat/completions");
    }
}
