use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetTopology, PolicyNet};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "qinit-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned policy parameters with their topology header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub topology: NetTopology,
    pub params: Vec<f64>,
}

impl PolicyCheckpoint {
    pub fn from_net(net: &PolicyNet) -> Self {
        PolicyCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            topology: net.topology().clone(),
            params: net.params().to_vec(),
        }
    }

    /// Rebuild the network, optionally insisting on a specific topology.
    pub fn to_net(&self, expected: Option<&NetTopology>) -> Result<PolicyNet> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if let Some(t) = expected {
            if t != &self.topology {
                return Err(Error::Shape(format!(
                    "checkpoint topology {:?} does not match expected {:?}",
                    self.topology, t
                )));
            }
        }
        PolicyNet::from_params(self.topology.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::random(NetTopology::with_memory(1, 4), 1.0, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        PolicyCheckpoint::from_net(&net).save(&path).unwrap();
        let back = PolicyCheckpoint::load(&path).unwrap().to_net(None).unwrap();
        assert_eq!(back, net);
        let other = NetTopology::default();
        assert!(PolicyCheckpoint::load(&path).unwrap().to_net(Some(&other)).is_err());
    }
}
