//! Resolving dataset paths and globs into loaded groups.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gpo::data::{load_group_dataset, EmbeddingStore, GroupDataset};
use gpo::synth::EMBEDDINGS_FILE;

use crate::CliError;

/// Expands each argument as a glob when it contains glob metacharacters and
/// takes it literally otherwise. Glob matches are sorted, run manifests
/// among them are skipped and duplicates dropped.
pub fn expand(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = Vec::new();
    for p in patterns {
        if p.contains(['*', '?', '[']) {
            let mut hits: Vec<PathBuf> = glob::glob(p)
                .map_err(|e| CliError::Usage(format!("bad glob {p:?}: {e}")))?
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Runtime(gpo::Error::Io(e.into())))?;
            hits.retain(|h| !is_manifest(h));
            if hits.is_empty() {
                return Err(CliError::Usage(format!("glob {p:?} matched no files")));
            }
            hits.sort();
            out.extend(hits);
        } else {
            out.push(PathBuf::from(p));
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|p| seen.insert(p.clone()));
    Ok(out)
}

fn is_manifest(p: &Path) -> bool {
    p.file_name()
        .map(|n| n.to_string_lossy())
        .is_some_and(|n| n == crate::MANIFEST_FILE || n.ends_with(".manifest.json"))
}

/// Loads dataset files with their embedding stores. Without an explicit
/// store, each file uses the `embeddings.gpe` in its own directory.
#[derive(Default)]
pub struct Loader {
    explicit: Option<PathBuf>,
    stores: BTreeMap<PathBuf, Arc<EmbeddingStore>>,
    /// Every file read, in first-read order.
    pub files: Vec<PathBuf>,
}

impl Loader {
    pub fn new(embeddings: Option<PathBuf>) -> Self {
        Loader {
            explicit: embeddings,
            ..Default::default()
        }
    }

    fn store_for(&mut self, dataset: &Path) -> Result<Arc<EmbeddingStore>, CliError> {
        let path = match &self.explicit {
            Some(p) => p.clone(),
            None => dataset.parent().unwrap_or(Path::new(".")).join(EMBEDDINGS_FILE),
        };
        if let Some(s) = self.stores.get(&path) {
            return Ok(s.clone());
        }
        let store = Arc::new(EmbeddingStore::read(&path).map_err(|e| with_path(e, &path))?);
        self.files.push(path.clone());
        self.stores.insert(path, store.clone());
        Ok(store)
    }

    pub fn load(&mut self, patterns: &[String]) -> Result<Vec<GroupDataset>, CliError> {
        let paths = expand(patterns)?;
        if paths.is_empty() {
            return Err(CliError::Usage("no dataset files given".into()));
        }
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            let store = self.store_for(&p)?;
            out.push(load_group_dataset(&p, store).map_err(|e| with_path(e, &p))?);
            self.files.push(p);
        }
        Ok(out)
    }
}

/// Prefixes the message with the offending file, keeping the error kind.
fn with_path(e: gpo::Error, path: &Path) -> CliError {
    let p = path.display();
    CliError::Runtime(match e {
        gpo::Error::Io(io) => gpo::Error::Io(std::io::Error::new(io.kind(), format!("{p}: {io}"))),
        gpo::Error::Json(j) => gpo::Error::Format(format!("{p}: {j}")),
        gpo::Error::Format(m) => gpo::Error::Format(format!("{p}: {m}")),
        gpo::Error::Validation(m) => gpo::Error::Validation(format!("{p}: {m}")),
        gpo::Error::Dimension(m) => gpo::Error::Dimension(format!("{p}: {m}")),
        gpo::Error::Contract(m) => gpo::Error::Contract(format!("{p}: {m}")),
    })
}
