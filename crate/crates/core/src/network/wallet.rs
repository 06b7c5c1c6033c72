use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::identity::{IdentityId, SigningKey};

/// On-disk form of one wallet entry.
#[derive(Debug, Serialize, Deserialize)]
pub struct WalletFile {
    pub identity_id: IdentityId,
    pub secret_key_hex: String,
}

/// Signing keys by identity id.
#[derive(Clone, Default)]
pub struct Wallet {
    keys: BTreeMap<IdentityId, SigningKey>,
}

impl Wallet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: SigningKey) {
        self.keys.insert(key.identity_id().to_string(), key);
    }

    pub fn get(&self, identity_id: &str) -> Option<&SigningKey> {
        self.keys.get(identity_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Writes one `<identity>.json` file per key.
    pub fn save(&self, dir: &Path) -> Result<(), NetworkError> {
        std::fs::create_dir_all(dir)?;
        for (id, key) in &self.keys {
            let file = WalletFile { identity_id: id.clone(), secret_key_hex: key.to_secret_hex() };
            std::fs::write(dir.join(format!("{id}.json")), serde_json::to_vec_pretty(&file)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, NetworkError> {
        let mut wallet = Wallet::new();
        if !dir.exists() {
            return Ok(wallet);
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            wallet.insert(read_key_file(&path)?);
        }
        Ok(wallet)
    }
}

pub fn read_key_file(path: &Path) -> Result<SigningKey, NetworkError> {
    let file: WalletFile = serde_json::from_slice(&std::fs::read(path)?)?;
    Ok(SigningKey::from_secret_hex(&file.identity_id, &file.secret_key_hex)?)
}
