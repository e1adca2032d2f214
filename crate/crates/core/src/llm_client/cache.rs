use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionExchange {
    pub prompt: String,
    pub response: String,
    pub cache_key: String,
    pub model_id: String,
}

/// Hex SHA-256 of the model id and prompt.
pub fn cache_key(model_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// One JSON file per exchange, named by its key.
#[derive(Debug)]
pub struct ExchangeCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ExchangeCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ExchangeCache { dir, write_lock: Mutex::new(()) })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<CompletionExchange>> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => {
                let ex: CompletionExchange =
                    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{key}: {e}")))?;
                Ok(Some(ex))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, ex: &CompletionExchange) -> io::Result<()> {
        let _guard = self.write_lock.lock().expect("lock");
        let tmp = self.dir.join(format!(".{}.tmp", ex.cache_key));
        let mut text = serde_json::to_string_pretty(ex).expect("serializable");
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(tmp, self.path(&ex.cache_key))
    }

    /// Every exchange in key order.
    pub fn entries(&self) -> io::Result<Vec<CompletionExchange>> {
        let mut keys: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
            .collect();
        keys.sort();
        keys.iter().filter_map(|k| self.get(k).transpose()).collect()
    }
}
