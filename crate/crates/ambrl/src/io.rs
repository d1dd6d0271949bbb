//! MDP file I/O.
//!
//! Instances are stored as pretty-printed JSON documents mirroring
//! [`MdpDef`]: a key-value tree with `horizon`, `levels`, `rewards`,
//! `transitions`, and `initial`. Probabilities round-trip losslessly (the
//! writer emits the shortest decimal that parses back to the same `f64`),
//! and serialization of the same instance is byte-identical across runs.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::mdp::{MdpDef, MdpError, TabularMdp};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

pub fn mdp_to_string(mdp: &TabularMdp) -> String {
    let mut s = serde_json::to_string_pretty(&mdp.to_def()).expect("MdpDef serializes");
    s.push('\n');
    s
}

pub fn mdp_from_str(text: &str) -> Result<TabularMdp, IoError> {
    let def: MdpDef = serde_json::from_str(text).map_err(|source| IoError::Parse {
        path: "<string>".into(),
        source,
    })?;
    Ok(TabularMdp::from_def(&def)?)
}

pub fn save_mdp(mdp: &TabularMdp, path: &Path) -> Result<(), IoError> {
    fs::write(path, mdp_to_string(mdp)).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    let def: MdpDef = serde_json::from_str(&text).map_err(|source| IoError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    Ok(TabularMdp::from_def(&def)?)
}
