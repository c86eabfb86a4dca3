//! File-backed persistence: one JSON snapshot per session, MDPs stored once
//! under their SHA-256.

use std::collections::HashMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use dubsynth_core::mdp::SNAPSHOT_VERSION;
use dubsynth_core::TreeMdp;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::session::Session;

const MDP_CACHE: usize = 4;

/// Content address of a stored MDP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdpRef {
    pub sha256: String,
    pub states: usize,
}

#[derive(Serialize)]
struct MdpDocOut<'a> {
    version: u32,
    mdp: &'a TreeMdp,
}

#[derive(Deserialize)]
struct MdpDocIn {
    version: u32,
    mdp: TreeMdp,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    ids: Mutex<()>,
    mdps: Mutex<HashMap<String, Arc<TreeMdp>>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(ServiceError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(ServiceError::io(path))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, ServiceError> {
        let root = root.into();
        for sub in ["sessions", "mdp", "index"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(ServiceError::io(&dir))?;
        }
        Ok(Store {
            root,
            ids: Mutex::new(()),
            mdps: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn mdp_path(&self, sha: &str) -> PathBuf {
        self.root.join("mdp").join(format!("{sha}.json"))
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.json"))
    }

    fn cache(&self, sha: &str, m: Arc<TreeMdp>) {
        let mut cache = self.mdps.lock().unwrap();
        if cache.len() >= MDP_CACHE && !cache.contains_key(sha) {
            cache.clear();
        }
        cache.insert(sha.to_string(), m);
    }

    /// Stores `m` unless an identical snapshot is already present.
    pub fn put_mdp(&self, m: Arc<TreeMdp>) -> Result<MdpRef, ServiceError> {
        let bytes = serde_json::to_vec(&MdpDocOut {
            version: SNAPSHOT_VERSION,
            mdp: &m,
        })
        .map_err(ServiceError::json("mdp snapshot"))?;
        let sha = hex::encode(Sha256::digest(&bytes));
        let path = self.mdp_path(&sha);
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        let states = m.len();
        self.cache(&sha, m);
        Ok(MdpRef { sha256: sha, states })
    }

    pub fn get_mdp(&self, r: &MdpRef) -> Result<Arc<TreeMdp>, ServiceError> {
        if let Some(m) = self.mdps.lock().unwrap().get(&r.sha256) {
            return Ok(Arc::clone(m));
        }
        let path = self.mdp_path(&r.sha256);
        let bytes = fs::read(&path).map_err(ServiceError::io(&path))?;
        if hex::encode(Sha256::digest(&bytes)) != r.sha256 {
            return Err(ServiceError::Corrupt(format!("mdp {}: digest mismatch", r.sha256)));
        }
        let doc: MdpDocIn = serde_json::from_slice(&bytes).map_err(ServiceError::json(path.display().to_string()))?;
        if doc.version != SNAPSHOT_VERSION || doc.mdp.len() != r.states {
            return Err(ServiceError::Corrupt(format!("mdp {}: version or size mismatch", r.sha256)));
        }
        let m = Arc::new(doc.mdp);
        self.cache(&r.sha256, Arc::clone(&m));
        Ok(m)
    }

    /// MDP previously built for a scenario key.
    pub fn lookup(&self, key: &str) -> Result<Option<MdpRef>, ServiceError> {
        let path = self.root.join("index").join(key);
        match fs::read(&path) {
            Ok(bytes) => {
                let r: MdpRef = serde_json::from_slice(&bytes).map_err(ServiceError::json(path.display().to_string()))?;
                Ok(self.mdp_path(&r.sha256).exists().then_some(r))
            }
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ServiceError::io(path)(e)),
        }
    }

    pub fn remember(&self, key: &str, r: &MdpRef) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec(r).map_err(ServiceError::json("index"))?;
        write_atomic(&self.root.join("index").join(key), &bytes)
    }

    /// Reserves the next free id `s0001`, `s0002`, ...
    pub fn allocate_id(&self) -> Result<String, ServiceError> {
        let _guard = self.ids.lock().unwrap();
        let dir = self.root.join("sessions");
        let mut next = 1;
        for entry in fs::read_dir(&dir).map_err(ServiceError::io(&dir))? {
            let name = entry.map_err(ServiceError::io(&dir))?.file_name();
            let n = name
                .to_str()
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.strip_prefix('s'))
                .and_then(|s| s.parse::<u64>().ok());
            if let Some(n) = n {
                next = next.max(n + 1);
            }
        }
        let id = format!("s{next:04}");
        let path = self.session_path(&id);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(ServiceError::io(&path))?;
        Ok(id)
    }

    pub fn save(&self, s: &Session) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(s).map_err(ServiceError::json("session snapshot"))?;
        write_atomic(&self.session_path(&s.id), &bytes)
    }

    pub fn load(&self, id: &str) -> Result<Session, ServiceError> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let path = self.session_path(id);
        if !valid || !path.exists() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let bytes = fs::read(&path).map_err(ServiceError::io(&path))?;
        if bytes.is_empty() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        serde_json::from_slice(&bytes).map_err(ServiceError::json(path.display().to_string()))
    }

    pub fn list(&self) -> Result<Vec<String>, ServiceError> {
        let dir = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(ServiceError::io(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|s| s.strip_suffix(".json")).map(String::from))
            .collect();
        ids.sort();
        Ok(ids)
    }
}
