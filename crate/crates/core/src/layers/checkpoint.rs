//! Versioned JSON checkpoints.
//!
//! Layout: `{"format_version": 1, "network": {...}, "optimizer": {...}?,
//! "metadata": {...}}`. The network object lists its layers (tagged by
//! `kind`, with shapes and hyperparameters) and a flat parameter table of
//! `{name, role, trainable, value: {shape, data}}` entries whose positions
//! are the parameter ids layers refer to. Values are decimal and round-trip
//! exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::Network;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub network: Network,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<serde_json::Value>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Checkpoint { format_version: FORMAT_VERSION, network, optimizer: None, metadata: BTreeMap::new() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("unsupported checkpoint format_version {v}"))),
            None => return Err(Error::Schema("checkpoint lacks format_version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        Network::new(ck.network.in_dim, ck.network.layers.clone(), ck.network.store.clone())
            .map_err(|e| Error::Schema(e.to_string()))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Network {
    /// Hash of the network's canonical JSON form.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::classifier::{build_classifier, HeadKind, HeadParams};

    #[test]
    fn round_trip_is_exact() {
        for kind in HeadKind::ALL {
            let net = build_classifier(kind, 6, 5, 3, &HeadParams::default(), 4).unwrap();
            let ck = Checkpoint::new(net.clone());
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            assert_eq!(back.network, net);
            assert_eq!(back.network.content_hash().unwrap(), net.content_hash().unwrap());
        }
    }

    #[test]
    fn version_and_unknown_fields_checked() {
        let net = build_classifier(HeadKind::Mlp, 3, 2, 2, &HeadParams::default(), 0).unwrap();
        let mut v = serde_json::to_value(Checkpoint::new(net)).unwrap();
        v["format_version"] = 99.into();
        assert!(matches!(Checkpoint::from_json(&v.to_string()), Err(Error::Schema(_))));
        v["format_version"] = 1.into();
        v["surprise"] = true.into();
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }
}
