//! Canonical step encoding, signatures and channel messages.
//!
//! Signed bytes layout (all integers big-endian):
//!
//! ```text
//! chain_id u64 | contract_id [32] | case_id u64 | seq u64
//! | len u32 | task_id utf-8 | len u32 | choice_data | len u32 | new_state
//! ```

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::machine::TaskRequest;
use crate::marking::{Marking, MarkingError};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Hash32(#[serde(with = "hex::serde")] pub [u8; 32]);

impl Hash32 {
    pub fn of(bytes: &[u8]) -> Self {
        Hash32(Sha256::digest(bytes).into())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// 32-byte contract identifier.
pub type ContractId = Hash32;
/// sha256 of a verifying key.
pub type Address = Hash32;

pub fn address_of(key: &VerifyingKey) -> Address {
    Hash32::of(key.as_bytes())
}

/// Deterministic key from an arbitrary seed string; test networks only.
pub fn derive_signing_key(seed: &[u8]) -> SigningKey {
    SigningKey::from_bytes(&Sha256::digest(seed).into())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepPayload {
    pub chain_id: u64,
    pub contract_id: ContractId,
    pub case_id: u64,
    pub seq: u64,
    pub task_id: String,
    #[serde(with = "hex::serde")]
    pub choice_data: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub new_state: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("{field} is {len} bytes, longer than a u32 length prefix allows")]
    FieldTooLong { field: &'static str, len: usize },
    #[error("missing signature for role {0}")]
    MissingSignature(String),
    #[error("signature for role {0} does not verify")]
    BadSignature(String),
    #[error("signature from role {0} is not part of the channel")]
    UnknownSigner(String),
}

fn put_var(out: &mut Vec<u8>, field: &'static str, bytes: &[u8]) -> Result<(), WireError> {
    let len = u32::try_from(bytes.len()).map_err(|_| WireError::FieldTooLong { field, len: bytes.len() })?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

pub fn encode_step(p: &StepPayload) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(68 + p.task_id.len() + p.choice_data.len() + p.new_state.len());
    out.extend_from_slice(&p.chain_id.to_be_bytes());
    out.extend_from_slice(&p.contract_id.0);
    out.extend_from_slice(&p.case_id.to_be_bytes());
    out.extend_from_slice(&p.seq.to_be_bytes());
    put_var(&mut out, "task_id", p.task_id.as_bytes())?;
    put_var(&mut out, "choice_data", &p.choice_data)?;
    put_var(&mut out, "new_state", &p.new_state)?;
    Ok(out)
}

impl StepPayload {
    pub fn state(&self, width: usize) -> Result<Marking, MarkingError> {
        Marking::from_bytes(&self.new_state, width)
    }

    pub fn request(&self, requester_role: &str) -> TaskRequest {
        TaskRequest {
            task_id: self.task_id.clone(),
            requester_role: requester_role.to_string(),
            choice_data: self.choice_data.clone(),
        }
    }

    pub fn digest(&self) -> Hash32 {
        Hash32::of(&encode_step(self).unwrap_or_default())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SigBytes(#[serde(with = "hex::serde")] pub Vec<u8>);

impl fmt::Debug for SigBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sig:{}", hex::encode(&self.0[..self.0.len().min(6)]))
    }
}

pub fn sign_step(p: &StepPayload, key: &SigningKey) -> Result<SigBytes, WireError> {
    Ok(SigBytes(key.sign(&encode_step(p)?).to_bytes().to_vec()))
}

/// False on any malformed key, signature or payload; never panics.
pub fn verify_step(p: &StepPayload, sig: &[u8], pubkey: &[u8]) -> bool {
    let Ok(bytes) = encode_step(p) else { return false };
    let Ok(key_bytes) = <[u8; 32]>::try_from(pubkey) else { return false };
    let Ok(key) = VerifyingKey::from_bytes(&key_bytes) else { return false };
    let Ok(sig) = Signature::from_slice(sig) else { return false };
    key.verify(&bytes, &sig).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedStep {
    pub payload: StepPayload,
    pub signatures: BTreeMap<String, SigBytes>,
}

impl SignedStep {
    pub fn new(payload: StepPayload) -> Self {
        SignedStep { payload, signatures: BTreeMap::new() }
    }

    pub fn add(&mut self, role: impl Into<String>, sig: SigBytes) {
        self.signatures.insert(role.into(), sig);
    }

    pub fn is_complete<S: AsRef<str>>(&self, roles: &[S]) -> bool {
        roles.iter().all(|r| self.signatures.contains_key(r.as_ref()))
    }

    /// Checks that every role signed and every signature verifies under
    /// `keys` (role → verifying key bytes). Extra signers are rejected.
    pub fn verify_complete(&self, keys: &BTreeMap<String, [u8; 32]>) -> Result<(), WireError> {
        if let Some(extra) = self.signatures.keys().find(|r| !keys.contains_key(*r)) {
            return Err(WireError::UnknownSigner(extra.clone()));
        }
        let bytes = encode_step(&self.payload)?;
        for (role, key) in keys {
            let sig = self.signatures.get(role).ok_or_else(|| WireError::MissingSignature(role.clone()))?;
            let ok = VerifyingKey::from_bytes(key)
                .ok()
                .zip(Signature::from_slice(&sig.0).ok())
                .is_some_and(|(k, s)| k.verify(&bytes, &s).is_ok());
            if !ok {
                return Err(WireError::BadSignature(role.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ChannelMessage {
    Propose { step: StepPayload, initiator: String, signature: SigBytes },
    Sign { step: StepPayload, signer: String, signature: SigBytes },
    Confirm { step: SignedStep },
}

impl ChannelMessage {
    pub fn payload(&self) -> &StepPayload {
        match self {
            ChannelMessage::Propose { step, .. } | ChannelMessage::Sign { step, .. } => step,
            ChannelMessage::Confirm { step } => &step.payload,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload() -> StepPayload {
        StepPayload {
            chain_id: 1,
            contract_id: Hash32([7; 32]),
            case_id: 0,
            seq: 1,
            task_id: "t".into(),
            choice_data: vec![],
            new_state: vec![0x02],
        }
    }

    #[test]
    fn layout() {
        let bytes = encode_step(&payload()).unwrap();
        assert_eq!(bytes.len(), 8 + 32 + 8 + 8 + 4 + 1 + 4 + 4 + 1);
        assert_eq!(&bytes[..8], &1u64.to_be_bytes());
        assert_eq!(&bytes[56..61], &[0, 0, 0, 1, b't']);
    }

    #[test]
    fn seq_changes_encoding() {
        let a = payload();
        let b = StepPayload { seq: 2, ..payload() };
        assert_ne!(encode_step(&a).unwrap(), encode_step(&b).unwrap());
        assert_eq!(encode_step(&a).unwrap(), encode_step(&a).unwrap());
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let a = StepPayload { task_id: "ab".into(), choice_data: vec![], ..payload() };
        let b = StepPayload { task_id: "a".into(), choice_data: vec![b'b'], ..payload() };
        assert_ne!(encode_step(&a).unwrap(), encode_step(&b).unwrap());
    }

    #[test]
    fn sign_verify() {
        let k = derive_signing_key(b"alice");
        let other = derive_signing_key(b"bob");
        let p = payload();
        let sig = sign_step(&p, &k).unwrap();
        assert!(verify_step(&p, &sig.0, k.verifying_key().as_bytes()));
        assert!(!verify_step(&p, &sig.0, other.verifying_key().as_bytes()));
        assert!(!verify_step(&p, &sig.0[..10], k.verifying_key().as_bytes()));
        assert!(!verify_step(&p, &sig.0, &[1, 2, 3]));
    }

    #[test]
    fn message_envelope_roundtrip() {
        let k = derive_signing_key(b"alice");
        let p = payload();
        let msg = ChannelMessage::Propose { signature: sign_step(&p, &k).unwrap(), step: p, initiator: "A".into() };
        let json = msg.to_json();
        assert!(json.contains(r#""kind":"Propose""#));
        assert_eq!(ChannelMessage::from_json(&json).unwrap(), msg);
    }
}
