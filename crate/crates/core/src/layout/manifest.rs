use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

const BUILTIN: &str = include_str!("../../data/component_types.txt");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading manifest {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest is empty")]
    Empty,
    #[error("manifest lists `{0}` twice")]
    Duplicate(String),
    #[error("manifest has {0} categories; at most 65535 are supported")]
    TooLarge(usize),
}

/// Component category names; the line number of a name is its type id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeManifest {
    names: Vec<String>,
    index: HashMap<String, u16>,
}

impl TypeManifest {
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(ManifestError::Empty);
        }
        if names.len() > u16::MAX as usize {
            return Err(ManifestError::TooLarge(names.len()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as u16).is_some() {
                return Err(ManifestError::Duplicate(n.clone()));
            }
        }
        Ok(Self { names, index })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The 25 mobile UI component categories shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("builtin manifest is well formed")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<u16> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for TypeManifest {
    fn default() -> Self {
        Self::builtin()
    }
}
