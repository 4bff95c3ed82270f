use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lexcheck::corpus::TruncationPolicy;
use lexcheck::prompt::default_template;
use lexcheck::provider::MOCK_PROVIDER;
use lexcheck::{ChunkConfig, PromptTemplate, ProviderConfig, RegulatoryArtifact, TemplateVariant};

use crate::{ChunkingArgs, ProviderArgs};

pub fn chunk_config(args: &ChunkingArgs) -> Result<ChunkConfig> {
    let cfg = ChunkConfig {
        token_limit: args.token_limit,
        truncation: if args.reject_over_limit {
            TruncationPolicy::Reject
        } else {
            TruncationPolicy::TruncateAtSentenceBoundary
        },
        ..ChunkConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_documents(paths: &[PathBuf]) -> Result<Vec<RegulatoryArtifact>> {
    let docs: Vec<RegulatoryArtifact> = paths
        .iter()
        .map(|p| {
            RegulatoryArtifact::from_file(p)
                .with_context(|| format!("cannot load document {}", p.display()))
        })
        .collect::<Result<_>>()?;
    let mut ids: Vec<&str> = docs.iter().map(|d| d.doc_id()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("two inputs share the document id {}", w[0]);
    }
    Ok(docs)
}

pub fn template(path: Option<&Path>, variant: TemplateVariant) -> Result<PromptTemplate> {
    match path {
        Some(p) => {
            let t = PromptTemplate::from_file(p)
                .with_context(|| format!("cannot load template {}", p.display()))?;
            if t.variant() != variant {
                bail!(
                    "{} is a {} template, expected {}",
                    p.display(),
                    t.variant().as_str(),
                    variant.as_str()
                );
            }
            Ok(t)
        }
        None => Ok(default_template(variant)),
    }
}

/// One config per `--provider-config`, or a single one built from flags,
/// with command-line overrides applied.
pub fn provider_configs(args: &ProviderArgs) -> Result<Vec<ProviderConfig>> {
    let mut configs = if args.provider_configs.is_empty() {
        vec![match args.provider.as_deref() {
            Some(MOCK_PROVIDER) => {
                ProviderConfig::mock(args.model.clone().unwrap_or_else(|| "mock-model".into()))
            }
            _ => ProviderConfig::default(),
        }]
    } else {
        args.provider_configs
            .iter()
            .map(|p| {
                ProviderConfig::from_file(p)
                    .with_context(|| format!("cannot load provider config {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?
    };
    for cfg in &mut configs {
        if let Some(name) = &args.provider {
            if name == MOCK_PROVIDER && cfg.provider_name != MOCK_PROVIDER {
                cfg.api_key_env.clear();
            }
            cfg.provider_name = name.clone();
        }
        if let Some(model) = &args.model {
            cfg.model_id = model.clone();
        }
        if let Some(fixture) = &args.mock_fixture {
            cfg.mock.fixture = Some(fixture.clone());
        }
        if let Some(n) = args.max_in_flight {
            cfg.max_in_flight = n;
        }
        cfg.validate()?;
    }
    let mut keys: Vec<_> = configs.iter().map(ProviderConfig::model_key).collect();
    keys.sort();
    if keys.windows(2).any(|w| w[0] == w[1]) {
        bail!("the same provider/model is configured twice");
    }
    Ok(configs)
}

pub fn timestamp(fixed: Option<&str>) -> String {
    match fixed {
        Some(ts) => ts.to_string(),
        None => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    }
}

/// File-name-safe form of a model id.
pub fn file_label(model_id: &str) -> String {
    model_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}
