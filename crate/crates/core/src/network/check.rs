use std::collections::BTreeSet;

use super::policy::PolicyExpr;
use crate::identity::{Membership, Role};
use crate::ledger::{EndorsementCheck, Transaction, ValidationCode};

/// Commit-time check: the client signature and every endorsement signature
/// must verify (`BadSignature`), and the endorsing orgs must satisfy the
/// channel policy (`PolicyFailure`).
pub struct PolicyCheck<'a> {
    pub membership: &'a Membership,
    pub policy: &'a PolicyExpr,
}

impl EndorsementCheck for PolicyCheck<'_> {
    fn check(&self, tx: &Transaction) -> ValidationCode {
        let m = self.membership;
        let Some(client) = m.identity(&tx.submitter) else { return ValidationCode::BadSignature };
        if tx.client_signature.signer != tx.submitter || !m.verify(&tx.client_signature, &tx.signing_bytes()) {
            return ValidationCode::BadSignature;
        }
        let endorsed = tx.endorsed_bytes();
        let mut orgs = BTreeSet::new();
        for e in &tx.endorsements {
            let Some(peer) = m.identity(&e.signature.signer) else { return ValidationCode::BadSignature };
            if peer.role != Role::Peer || peer.org_id != e.org_id || !m.verify(&e.signature, &endorsed) {
                return ValidationCode::BadSignature;
            }
            orgs.insert(e.org_id.clone());
        }
        if !self.policy.evaluate(&orgs, &client.org_id) {
            return ValidationCode::PolicyFailure;
        }
        ValidationCode::Valid
    }
}
