//! Membership service: organizations, enrolled identities, signing keys and
//! the action-level authorization matrix.
//!
//! Certificates are modeled as registry entries binding an identity id to an
//! Ed25519 verification key. The registry never holds a signing key; the
//! only place one is observable is the return value of
//! [`Membership::enroll_identity`].

mod authz;

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use authz::{Action, AuthzMatrix, AuthzRule, Decision, Resource, Scope};

pub type OrgId = String;
pub type IdentityId = String;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("a government organization is already registered")]
    DuplicateGovernment,
    #[error("organization name must not be empty")]
    EmptyName,
    #[error("role {role:?} cannot be enrolled under an organization of kind {kind:?}")]
    RoleOrgMismatch { role: Role, kind: OrgKind },
    #[error("unknown identity `{0}`")]
    UnknownIdentity(IdentityId),
    #[error("unknown organization `{0}`")]
    UnknownOrg(OrgId),
    #[error("membership is sealed")]
    Sealed,
    #[error("invalid membership document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrgKind {
    #[serde(alias = "hospital")]
    Hospital,
    #[serde(alias = "government")]
    Government,
    #[serde(alias = "admin")]
    Admin,
    #[serde(alias = "transporter_pool")]
    TransporterPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Org {
    pub org_id: OrgId,
    pub display_name: String,
    pub kind: OrgKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(alias = "hospital_staff")]
    HospitalStaff,
    #[serde(alias = "administrator")]
    Administrator,
    #[serde(alias = "government_auditor")]
    GovernmentAuditor,
    #[serde(alias = "transporter")]
    Transporter,
    #[serde(alias = "patient")]
    Patient,
    /// Node identity of an endorsing/committing peer. Carries no user rights.
    Peer,
}

impl Role {
    pub fn compatible_with(self, kind: OrgKind) -> bool {
        matches!(
            (self, kind),
            (Role::HospitalStaff, OrgKind::Hospital)
                | (Role::Patient, OrgKind::Hospital)
                | (Role::Administrator, OrgKind::Admin)
                | (Role::GovernmentAuditor, OrgKind::Government)
                | (Role::Transporter, OrgKind::TransporterPool)
                | (Role::Peer, OrgKind::Hospital)
                | (Role::Peer, OrgKind::Government)
                | (Role::Peer, OrgKind::Admin)
        )
    }
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, IdentityError> {
        let bytes = hex::decode(s).map_err(|e| IdentityError::InvalidDocument(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| IdentityError::InvalidDocument("public key must be 32 bytes".into()))?;
        ed25519_dalek::VerifyingKey::from_bytes(&arr)
            .map_err(|e| IdentityError::InvalidDocument(e.to_string()))?;
        Ok(PublicKey(arr))
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
            return false;
        };
        key.verify(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Private signing half of an enrolled identity. Not `Debug` so it never
/// ends up in logs.
#[derive(Clone)]
pub struct SigningKey {
    signer: IdentityId,
    key: ed25519_dalek::SigningKey,
}

impl SigningKey {
    pub fn identity_id(&self) -> &str {
        &self.signer
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.key.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature {
            signer: self.signer.clone(),
            bytes: self.key.sign(message).to_bytes().to_vec(),
        }
    }

    /// Secret seed as hex, for writing wallet files.
    pub fn to_secret_hex(&self) -> String {
        hex::encode(self.key.to_bytes())
    }

    pub fn from_secret_hex(identity_id: &str, s: &str) -> Result<Self, IdentityError> {
        let bytes = hex::decode(s).map_err(|e| IdentityError::InvalidDocument(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| IdentityError::InvalidDocument("secret key must be 32 bytes".into()))?;
        Ok(SigningKey {
            signer: identity_id.to_string(),
            key: ed25519_dalek::SigningKey::from_bytes(&arr),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: IdentityId,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    #[serde(rename = "id")]
    pub identity_id: IdentityId,
    #[serde(rename = "org")]
    pub org_id: OrgId,
    pub role: Role,
    #[serde(rename = "public_key_hex")]
    pub public_key: PublicKey,
    /// For `Patient` identities, the patient record id they speak for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

/// JSON membership document used for CLI bootstrap.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MembershipDoc {
    pub orgs: Vec<Org>,
    pub identities: Vec<Identity>,
}

/// The membership registry.
#[derive(Debug, Clone, Default)]
pub struct Membership {
    orgs: BTreeMap<OrgId, Org>,
    identities: BTreeMap<IdentityId, Identity>,
    next_org: u64,
    next_identity: u64,
    sealed: bool,
    matrix: AuthzMatrix,
}

impl Membership {
    pub fn new() -> Self {
        Self::with_matrix(AuthzMatrix::default())
    }

    pub fn with_matrix(matrix: AuthzMatrix) -> Self {
        Membership { matrix, ..Default::default() }
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn register_org(&mut self, display_name: &str, kind: OrgKind) -> Result<Org, IdentityError> {
        let id = format!("org-{}", self.next_org + 1);
        self.register_org_with_id(&id, display_name, kind)
    }

    /// Registers an org under a caller-chosen id (topology files name orgs).
    pub fn register_org_with_id(
        &mut self,
        org_id: &str,
        display_name: &str,
        kind: OrgKind,
    ) -> Result<Org, IdentityError> {
        if self.sealed {
            return Err(IdentityError::Sealed);
        }
        if display_name.trim().is_empty() || org_id.trim().is_empty() {
            return Err(IdentityError::EmptyName);
        }
        if kind == OrgKind::Government && self.orgs.values().any(|o| o.kind == OrgKind::Government) {
            return Err(IdentityError::DuplicateGovernment);
        }
        if self.orgs.contains_key(org_id) {
            return Err(IdentityError::InvalidDocument(format!("duplicate org id `{org_id}`")));
        }
        let org = Org { org_id: org_id.to_string(), display_name: display_name.to_string(), kind };
        self.orgs.insert(org.org_id.clone(), org.clone());
        self.next_org += 1;
        Ok(org)
    }

    pub fn enroll_identity(
        &mut self,
        org: &Org,
        role: Role,
        display_name: &str,
    ) -> Result<(Identity, SigningKey), IdentityError> {
        self.enroll_with_rng(org, role, display_name, None, &mut OsRng)
    }

    /// Enrolls a `Patient` identity bound to a patient record id.
    pub fn enroll_patient(&mut self, org: &Org, patient_id: &str) -> Result<(Identity, SigningKey), IdentityError> {
        self.enroll_with_rng(org, Role::Patient, patient_id, Some(patient_id.to_string()), &mut OsRng)
    }

    pub fn enroll_with_rng<R: RngCore + CryptoRng>(
        &mut self,
        org: &Org,
        role: Role,
        display_name: &str,
        subject: Option<String>,
        rng: &mut R,
    ) -> Result<(Identity, SigningKey), IdentityError> {
        let registered = self.orgs.get(&org.org_id).ok_or_else(|| IdentityError::UnknownOrg(org.org_id.clone()))?;
        if !role.compatible_with(registered.kind) {
            return Err(IdentityError::RoleOrgMismatch { role, kind: registered.kind });
        }
        self.next_identity += 1;
        let slug: String = display_name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .take(16)
            .collect::<String>()
            .to_ascii_lowercase();
        let identity_id = if slug.is_empty() {
            format!("{}.id{}", org.org_id, self.next_identity)
        } else {
            format!("{}.{}{}", org.org_id, slug, self.next_identity)
        };
        let key = ed25519_dalek::SigningKey::generate(rng);
        let signing = SigningKey { signer: identity_id.clone(), key };
        let identity = Identity {
            identity_id: identity_id.clone(),
            org_id: org.org_id.clone(),
            role,
            public_key: signing.public_key(),
            subject,
        };
        self.identities.insert(identity_id, identity.clone());
        Ok((identity, signing))
    }

    pub fn org(&self, org_id: &str) -> Option<&Org> {
        self.orgs.get(org_id)
    }

    pub fn orgs(&self) -> impl Iterator<Item = &Org> {
        self.orgs.values()
    }

    pub fn government(&self) -> Option<&Org> {
        self.orgs.values().find(|o| o.kind == OrgKind::Government)
    }

    pub fn identity(&self, identity_id: &str) -> Option<&Identity> {
        self.identities.get(identity_id)
    }

    pub fn identities(&self) -> impl Iterator<Item = &Identity> {
        self.identities.values()
    }

    pub fn matrix(&self) -> &AuthzMatrix {
        &self.matrix
    }

    pub fn verify(&self, sig: &Signature, message: &[u8]) -> bool {
        self.identities
            .get(&sig.signer)
            .map(|id| id.public_key.verify(message, &sig.bytes))
            .unwrap_or(false)
    }

    pub fn authorize(&self, identity_id: &str, action: Action, resource: &Resource) -> Result<Decision, IdentityError> {
        let identity =
            self.identities.get(identity_id).ok_or_else(|| IdentityError::UnknownIdentity(identity_id.to_string()))?;
        Ok(self.matrix.decide(identity, action, resource))
    }

    pub fn export(&self) -> MembershipDoc {
        MembershipDoc {
            orgs: self.orgs.values().cloned().collect(),
            identities: self.identities.values().cloned().collect(),
        }
    }

    pub fn import(doc: MembershipDoc) -> Result<Self, IdentityError> {
        let mut m = Membership::new();
        for org in doc.orgs {
            m.register_org_with_id(&org.org_id, &org.display_name, org.kind)?;
        }
        for identity in doc.identities {
            let kind = m
                .orgs
                .get(&identity.org_id)
                .ok_or_else(|| IdentityError::UnknownOrg(identity.org_id.clone()))?
                .kind;
            if !identity.role.compatible_with(kind) {
                return Err(IdentityError::RoleOrgMismatch { role: identity.role, kind });
            }
            if m.identities.contains_key(&identity.identity_id) {
                return Err(IdentityError::InvalidDocument(format!(
                    "duplicate identity `{}`",
                    identity.identity_id
                )));
            }
            m.identities.insert(identity.identity_id.clone(), identity);
        }
        m.next_identity = m.identities.len() as u64;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn registry() -> (Membership, Org, Org) {
        let mut m = Membership::new();
        let gov = m.register_org("Gov", OrgKind::Government).unwrap();
        let hosp = m.register_org("City Hospital", OrgKind::Hospital).unwrap();
        (m, gov, hosp)
    }

    #[test]
    fn first_org_gets_org_1() {
        let mut m = Membership::new();
        let org = m.register_org("City Hospital", OrgKind::Hospital).unwrap();
        assert_eq!(org.org_id, "org-1");
        assert_eq!(org.kind, OrgKind::Hospital);
    }

    #[test]
    fn second_government_rejected() {
        let mut m = Membership::new();
        m.register_org("Gov", OrgKind::Government).unwrap();
        assert_eq!(m.register_org("Gov2", OrgKind::Government), Err(IdentityError::DuplicateGovernment));
    }

    #[test]
    fn empty_name_rejected() {
        let mut m = Membership::new();
        assert_eq!(m.register_org("  ", OrgKind::Hospital), Err(IdentityError::EmptyName));
    }

    #[test]
    fn sealed_registry_rejects_orgs() {
        let mut m = Membership::new();
        m.seal();
        assert_eq!(m.register_org("H", OrgKind::Hospital), Err(IdentityError::Sealed));
    }

    #[test]
    fn five_hospitals_have_distinct_ids() {
        let mut m = Membership::new();
        let ids: Vec<_> =
            (0..5).map(|i| m.register_org(&format!("H{i}"), OrgKind::Hospital).unwrap().org_id).collect();
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                if i != j {
                    assert_ne!(ids[i], ids[j]);
                }
            }
        }
    }

    #[test]
    fn enroll_checks_role_against_org_kind() {
        let (mut m, _gov, hosp) = registry();
        let (id, _) = m.enroll_identity(&hosp, Role::HospitalStaff, "Dr. A").unwrap();
        assert_eq!(id.role, Role::HospitalStaff);
        assert!(matches!(
            m.enroll_identity(&hosp, Role::GovernmentAuditor, "x"),
            Err(IdentityError::RoleOrgMismatch { .. })
        ));
    }

    #[test]
    fn sign_verify_round_trip_random_messages() {
        let (mut m, _gov, hosp) = registry();
        let (id, key) = m.enroll_identity(&hosp, Role::HospitalStaff, "Dr. A").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let len = rng.gen_range(0..256);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let sig = key.sign(&msg);
            assert!(id.public_key.verify(&msg, &sig.bytes));
            assert!(m.verify(&sig, &msg));
        }
    }

    #[test]
    fn other_key_does_not_verify() {
        let (mut m, _gov, hosp) = registry();
        let (_a, ka) = m.enroll_identity(&hosp, Role::HospitalStaff, "A").unwrap();
        let (b, _kb) = m.enroll_identity(&hosp, Role::HospitalStaff, "B").unwrap();
        let sig = ka.sign(b"hello");
        assert!(!b.public_key.verify(b"hello", &sig.bytes));
    }

    #[test]
    fn single_bit_flip_breaks_signature() {
        let (mut m, _gov, hosp) = registry();
        let (id, key) = m.enroll_identity(&hosp, Role::HospitalStaff, "A").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut msg: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
            let sig = key.sign(&msg);
            let bit = rng.gen_range(0..msg.len() * 8);
            msg[bit / 8] ^= 1 << (bit % 8);
            assert!(!id.public_key.verify(&msg, &sig.bytes));
        }
    }

    #[test]
    fn export_import_preserves_registry() {
        let (mut m, _gov, hosp) = registry();
        m.enroll_identity(&hosp, Role::HospitalStaff, "A").unwrap();
        m.enroll_patient(&hosp, "p1").unwrap();
        let doc = m.export();
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains("public_key_hex"));
        let back = Membership::import(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.export().identities, doc.identities);
        assert_eq!(back.export().orgs, doc.orgs);
    }

    #[test]
    fn unknown_identity_authorize_errors() {
        let (m, _, hosp) = registry();
        let r = m.authorize("nobody", Action::GetPatient, &Resource::owned_by(&hosp.org_id));
        assert_eq!(r, Err(IdentityError::UnknownIdentity("nobody".into())));
    }
}
