use serde::{Deserialize, Serialize};

use super::{Identity, OrgId, Role};

/// Every guarded operation in the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    AddPatient,
    AddDonor,
    GetPatient,
    GetDonor,
    GetAllPatients,
    GetAllDonors,
    GetMyPatients,
    GetMyDonors,
    DeletePatient,
    DeleteDonor,
    FindMatch,
    SelectMatch,
    ReadMatchEvents,
    VerifyChain,
}

impl Action {
    pub const ALL: [Action; 14] = [
        Action::AddPatient,
        Action::AddDonor,
        Action::GetPatient,
        Action::GetDonor,
        Action::GetAllPatients,
        Action::GetAllDonors,
        Action::GetMyPatients,
        Action::GetMyDonors,
        Action::DeletePatient,
        Action::DeleteDonor,
        Action::FindMatch,
        Action::SelectMatch,
        Action::ReadMatchEvents,
        Action::VerifyChain,
    ];
}

/// What an action touches: the hospital owning the record(s), and the record
/// id when the action addresses a single record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub owner_hospital: Option<OrgId>,
    pub record_id: Option<String>,
}

impl Resource {
    pub fn any() -> Self {
        Resource::default()
    }

    pub fn owned_by(org: &str) -> Self {
        Resource { owner_hospital: Some(org.to_string()), record_id: None }
    }

    pub fn record(org: &str, id: &str) -> Self {
        Resource { owner_hospital: Some(org.to_string()), record_id: Some(id.to_string()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Any,
    /// The resource's owning hospital must be the caller's org.
    OwnHospital,
    /// The resource's record id must be the caller's bound subject.
    OwnRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthzRule {
    pub role: Role,
    pub action: Action,
    pub scope: Scope,
}

/// Role/action/scope table. Anything not granted by a rule is denied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthzMatrix {
    pub rules: Vec<AuthzRule>,
}

impl Default for AuthzMatrix {
    fn default() -> Self {
        use Action::*;
        use Role::*;
        use Scope::*;
        const TABLE: &[(Role, Action, Scope)] = &[
            (HospitalStaff, AddPatient, OwnHospital),
            (HospitalStaff, AddDonor, OwnHospital),
            (HospitalStaff, GetPatient, OwnHospital),
            (HospitalStaff, GetDonor, OwnHospital),
            (HospitalStaff, GetMyPatients, OwnHospital),
            (HospitalStaff, GetMyDonors, OwnHospital),
            (HospitalStaff, DeletePatient, OwnHospital),
            (HospitalStaff, DeleteDonor, OwnHospital),
            (HospitalStaff, FindMatch, OwnHospital),
            (HospitalStaff, SelectMatch, OwnHospital),
            (Administrator, GetPatient, Any),
            (Administrator, GetDonor, Any),
            (Administrator, GetAllPatients, Any),
            (Administrator, GetAllDonors, Any),
            (Administrator, GetMyPatients, Any),
            (Administrator, GetMyDonors, Any),
            (Administrator, DeletePatient, Any),
            (Administrator, DeleteDonor, Any),
            (Administrator, VerifyChain, Any),
            (GovernmentAuditor, GetPatient, Any),
            (GovernmentAuditor, GetDonor, Any),
            (GovernmentAuditor, GetAllPatients, Any),
            (GovernmentAuditor, GetAllDonors, Any),
            (GovernmentAuditor, GetMyPatients, Any),
            (GovernmentAuditor, GetMyDonors, Any),
            (GovernmentAuditor, ReadMatchEvents, Any),
            (GovernmentAuditor, VerifyChain, Any),
            (Patient, GetPatient, OwnRecord),
            (Transporter, ReadMatchEvents, Any),
        ];
        AuthzMatrix {
            rules: TABLE.iter().map(|&(role, action, scope)| AuthzRule { role, action, scope }).collect(),
        }
    }
}

impl AuthzMatrix {
    pub fn decide(&self, identity: &Identity, action: Action, resource: &Resource) -> Decision {
        let granted = self.rules.iter().filter(|r| r.role == identity.role && r.action == action).any(|r| match r.scope {
            Scope::Any => true,
            Scope::OwnHospital => resource.owner_hospital.as_deref() == Some(identity.org_id.as_str()),
            Scope::OwnRecord => {
                identity.subject.is_some() && resource.record_id.as_deref() == identity.subject.as_deref()
            }
        });
        if granted {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }
}
