use std::collections::HashMap;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use organchain_core::identity::{Membership, Signature};
use parking_lot::Mutex;
use rand::RngCore;
use serde::Serialize;

/// How long a login challenge stays usable.
const NONCE_TTL: Duration = Duration::from_secs(300);

/// Bytes a client signs to log in.
pub fn login_message(nonce: &str) -> Vec<u8> {
    format!("organchain-login:{nonce}").into_bytes()
}

#[derive(Clone, Debug, Serialize)]
pub struct ApiSession {
    pub token: String,
    #[serde(rename = "identityId")]
    pub identity_id: String,
    /// Unix milliseconds.
    pub expires_at: u64,
}

struct Live {
    identity_id: String,
    expires: Instant,
    expires_at: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum LoginError {
    UnknownIdentity,
    NoChallenge,
    BadSignature,
}

/// Bearer tokens and outstanding login challenges. An identity holds at
/// most one live token; logging in again revokes the previous one.
pub struct Sessions {
    ttl: Duration,
    tokens: Mutex<HashMap<String, Live>>,
    by_identity: Mutex<HashMap<String, String>>,
    nonces: Mutex<HashMap<String, (String, Instant)>>,
}

fn random_hex() -> String {
    let mut b = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut b);
    hex::encode(b)
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Sessions {
            ttl,
            tokens: Mutex::default(),
            by_identity: Mutex::default(),
            nonces: Mutex::default(),
        }
    }

    pub fn challenge(&self, identity_id: &str, membership: &Membership) -> Result<String, LoginError> {
        if membership.identity(identity_id).is_none() {
            return Err(LoginError::UnknownIdentity);
        }
        let nonce = random_hex();
        let mut nonces = self.nonces.lock();
        nonces.retain(|_, (_, at)| at.elapsed() < NONCE_TTL);
        nonces.insert(identity_id.to_string(), (nonce.clone(), Instant::now()));
        Ok(nonce)
    }

    /// Checks a signature over the outstanding challenge and issues a token.
    /// The challenge is consumed either way.
    pub fn login(
        &self,
        identity_id: &str,
        nonce: &str,
        signature_hex: &str,
        membership: &Membership,
    ) -> Result<ApiSession, LoginError> {
        if membership.identity(identity_id).is_none() {
            return Err(LoginError::UnknownIdentity);
        }
        match self.nonces.lock().remove(identity_id) {
            Some((n, at)) if n == nonce && at.elapsed() < NONCE_TTL => {}
            _ => return Err(LoginError::NoChallenge),
        }
        let bytes = hex::decode(signature_hex).map_err(|_| LoginError::BadSignature)?;
        let sig = Signature { signer: identity_id.to_string(), bytes };
        if !membership.verify(&sig, &login_message(nonce)) {
            return Err(LoginError::BadSignature);
        }
        let token = random_hex();
        let expires_at = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default() + self.ttl;
        let live = Live { identity_id: identity_id.to_string(), expires: Instant::now() + self.ttl, expires_at: expires_at.as_millis() as u64 };
        let session = ApiSession { token: token.clone(), identity_id: identity_id.to_string(), expires_at: live.expires_at };
        let mut tokens = self.tokens.lock();
        if let Some(old) = self.by_identity.lock().insert(identity_id.to_string(), token.clone()) {
            tokens.remove(&old);
        }
        tokens.insert(token, live);
        Ok(session)
    }

    /// Identity behind a live token.
    pub fn resolve(&self, token: &str) -> Option<String> {
        let mut tokens = self.tokens.lock();
        let live = tokens.get(token)?;
        if live.expires <= Instant::now() {
            let id = live.identity_id.clone();
            tokens.remove(token);
            self.by_identity.lock().remove(&id);
            return None;
        }
        Some(live.identity_id.clone())
    }
}
