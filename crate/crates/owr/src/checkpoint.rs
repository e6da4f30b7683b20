//! Versioned model checkpoints.
//!
//! A checkpoint is one JSON document carrying the whole incremental model:
//! network parameters (architecture descriptor plus row-major arrays),
//! prototypes, threshold state, exemplar memory and the known-class set.
//! Floats serialize in shortest round-trip form, so a load reproduces the
//! saved model bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::NnoBaseline;
use crate::error::{Error, Result};
use crate::protocol::OwrState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    version: u32,
    #[serde(flatten)]
    payload: T,
}

fn check_version(version: u32) -> Result<()> {
    if version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    Ok(())
}

pub fn checkpoint_to_string(state: &OwrState) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        version: CHECKPOINT_VERSION,
        payload: state,
    })?)
}

/// Parses and structurally validates a checkpoint document.
pub fn checkpoint_from_str(text: &str) -> Result<OwrState> {
    let envelope: Envelope<OwrState> = serde_json::from_str(text)?;
    check_version(envelope.version)?;
    envelope.payload.validate()?;
    Ok(envelope.payload)
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &OwrState) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<OwrState> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}

pub fn baseline_to_string(baseline: &NnoBaseline) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        version: CHECKPOINT_VERSION,
        payload: baseline,
    })?)
}

pub fn baseline_from_str(text: &str) -> Result<NnoBaseline> {
    let envelope: Envelope<NnoBaseline> = serde_json::from_str(text)?;
    check_version(envelope.version)?;
    envelope.payload.params().validate()?;
    envelope.payload.store().validate()?;
    Ok(envelope.payload)
}

pub fn save_baseline(path: impl AsRef<Path>, baseline: &NnoBaseline) -> Result<()> {
    std::fs::write(path, baseline_to_string(baseline)?)?;
    Ok(())
}

pub fn load_baseline(path: impl AsRef<Path>) -> Result<NnoBaseline> {
    baseline_from_str(&std::fs::read_to_string(path)?)
}
