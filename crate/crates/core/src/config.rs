//! Run configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeSchema, ColumnMapping};
use crate::error::{Error, Result};
use crate::llm::{EndpointConfig, TemplateId};
use crate::pipelines::AuditConfig;
use crate::util::sha256_hex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionPreset {
    #[default]
    Standard,
    GrayRows,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    /// Vocabulary file; the shipped vocabulary when unset.
    pub vocabulary: Option<PathBuf>,
    /// Exclusion file; overrides `preset`.
    pub exclusions: Option<PathBuf>,
    pub preset: ExclusionPreset,
    /// Column mapping for raw MHS exports.
    pub mapping: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub template: TemplateId,
    /// Custom template body; the shipped fixture when unset.
    pub template_file: Option<PathBuf>,
    pub parse_attempts: u32,
    pub cache_dir: PathBuf,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            template: TemplateId::FullPersona,
            template_file: None,
            parse_attempts: 3,
            cache_dir: PathBuf::from(".annobias/llm-cache"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Matrix cache directory; in-memory only when unset.
    pub cache_dir: Option<PathBuf>,
    pub schema: SchemaSection,
    pub audit: AuditConfig,
    pub llm: LlmSection,
    pub endpoint: EndpointConfig,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, name: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml_str(&s, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.cache_dir);
        rebase(base, &mut cfg.schema.vocabulary);
        rebase(base, &mut cfg.schema.exclusions);
        rebase(base, &mut cfg.schema.mapping);
        rebase(base, &mut cfg.llm.template_file);
        if cfg.llm.cache_dir.is_relative() {
            cfg.llm.cache_dir = base.join(&cfg.llm.cache_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.audit.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {a}")));
        }
        self.endpoint.validate()
    }

    pub fn attribute_schema(&self) -> Result<Arc<AttributeSchema>> {
        let s = &self.schema;
        let schema = match (&s.vocabulary, &s.exclusions) {
            (Some(v), excl) => AttributeSchema::load(v, excl.as_deref())?,
            (None, Some(e)) => {
                let text = std::fs::read_to_string(e).map_err(|err| Error::io(e, err))?;
                AttributeSchema::mhs_with_exclusions(&text)?
            }
            (None, None) => match s.preset {
                ExclusionPreset::Standard => AttributeSchema::mhs_default(),
                ExclusionPreset::GrayRows => AttributeSchema::mhs_gray_rows(),
            },
        };
        Ok(Arc::new(schema))
    }

    pub fn column_mapping(&self) -> Result<ColumnMapping> {
        match &self.schema.mapping {
            Some(p) => ColumnMapping::load(p),
            None => Ok(ColumnMapping::mhs_default()),
        }
    }

    /// Hash of the effective settings, recorded in run manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        sha256_hex(&[json.as_bytes()])
    }
}
