//! Memory image files: a raw little-endian blob plus a JSON descriptor that
//! maps symbolic names to `{offset, length}` ranges of the blob.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MainMemory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Symbol {
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("symbol `{name}` [{offset}, +{length}) lies outside the {size}-byte blob")]
    SymbolOutOfRange { name: String, offset: u64, length: u64, size: usize },
    #[error("{blob}-byte image does not fit in {memory}-byte main memory")]
    TooLarge { blob: usize, memory: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryImage {
    pub blob: Vec<u8>,
    pub symbols: BTreeMap<String, Symbol>,
}

impl MemoryImage {
    pub fn new(blob: Vec<u8>, symbols: BTreeMap<String, Symbol>) -> Result<Self, ImageError> {
        for (name, s) in &symbols {
            let end = s.offset.checked_add(s.length);
            if end.is_none_or(|e| e > blob.len() as u64) {
                return Err(ImageError::SymbolOutOfRange {
                    name: name.clone(),
                    offset: s.offset,
                    length: s.length,
                    size: blob.len(),
                });
            }
        }
        Ok(MemoryImage { blob, symbols })
    }

    pub fn parse_descriptor(text: &str) -> Result<BTreeMap<String, Symbol>, ImageError> {
        serde_json::from_str(text).map_err(|e| ImageError::Descriptor(e.to_string()))
    }

    pub fn descriptor_json(&self) -> String {
        serde_json::to_string_pretty(&self.symbols).expect("symbol map serializes")
    }

    pub fn symbol(&self, name: &str) -> Option<Symbol> {
        self.symbols.get(name).copied()
    }

    pub fn read(blob: &Path, descriptor: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(blob).map_err(|e| io_error(blob, e))?;
        let text = std::fs::read_to_string(descriptor).map_err(|e| io_error(descriptor, e))?;
        Self::new(bytes, Self::parse_descriptor(&text)?)
    }

    pub fn write(&self, blob: &Path, descriptor: &Path) -> Result<(), ImageError> {
        std::fs::write(blob, &self.blob).map_err(|e| io_error(blob, e))?;
        std::fs::write(descriptor, self.descriptor_json()).map_err(|e| io_error(descriptor, e))
    }

    /// Copies the blob to address 0 of `memory`.
    pub fn install(&self, memory: &mut MainMemory) -> Result<(), ImageError> {
        if self.blob.len() > memory.size() {
            return Err(ImageError::TooLarge { blob: self.blob.len(), memory: memory.size() });
        }
        memory.store(0, &self.blob).expect("size checked");
        Ok(())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}
