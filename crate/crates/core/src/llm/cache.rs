use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompt::PersonaProfile;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::util::{sha256_hex, write_atomic};

/// One model reply for a (persona, post) request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmAnnotation {
    pub post_id: String,
    pub persona: PersonaProfile,
    /// `None` once every parse attempt failed.
    pub label: Option<Label>,
    pub targets: Vec<String>,
    pub raw_response: String,
    pub attempts: u32,
    pub endpoint_id: String,
}

impl LlmAnnotation {
    pub fn is_valid(&self) -> bool {
        self.label.is_some()
    }
}

pub fn request_key(model: &str, template_id: &str, persona_hash: &str, fingerprint: &str) -> String {
    sha256_hex(&[
        model.as_bytes(),
        template_id.as_bytes(),
        persona_hash.as_bytes(),
        fingerprint.as_bytes(),
    ])
}

/// One JSON file per request key, sharded by the first two hex digits.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<LlmAnnotation>> {
        let path = self.path(key);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| Error::Cache {
                path,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, ann: &LlmAnnotation) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(ann).expect("annotation serialises");
        write_atomic(&self.path(key), &bytes)
    }
}
