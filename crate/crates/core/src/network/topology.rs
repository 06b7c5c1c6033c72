use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::PolicyExpr;
use super::NetworkError;
use crate::identity::{Membership, OrgId, OrgKind, Role};
use crate::ordering::OrderingConfig;

/// Channel whose policy must require a Government endorsement.
pub const DONATION_CHANNEL: &str = "donation-system";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub name: String,
    pub member_orgs: BTreeSet<OrgId>,
    pub endorsement_policy: PolicyExpr,
    /// Name of the ordering service this channel uses.
    #[serde(default = "default_orderer")]
    pub orderer: String,
    #[serde(default)]
    pub chaincodes: BTreeSet<String>,
}

fn default_orderer() -> String {
    "orderer".into()
}

impl ChannelConfig {
    pub fn new(name: &str, members: &[&str], policy: PolicyExpr, chaincodes: &[&str]) -> Self {
        ChannelConfig {
            name: name.to_string(),
            member_orgs: members.iter().map(|s| s.to_string()).collect(),
            endorsement_policy: policy,
            orderer: default_orderer(),
            chaincodes: chaincodes.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self, membership: &Membership) -> Result<(), NetworkError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(NetworkError::Config(format!("bad channel name {:?}", self.name)));
        }
        if self.member_orgs.is_empty() {
            return Err(NetworkError::Config(format!("channel {} has no member orgs", self.name)));
        }
        for org in &self.member_orgs {
            if membership.org(org).is_none() {
                return Err(NetworkError::UnknownOrg(org.clone()));
            }
        }
        self.endorsement_policy.validate().map_err(NetworkError::Config)?;
        for org in self.endorsement_policy.orgs() {
            if !self.member_orgs.contains(&org) {
                return Err(NetworkError::PolicyViolation(format!("policy names non-member org {org}")));
            }
        }
        if self.name == DONATION_CHANNEL {
            let gov = membership
                .government()
                .ok_or_else(|| NetworkError::PolicyViolation("no government org registered".into()))?;
            if !self.endorsement_policy.requires_org(&gov.org_id, &self.member_orgs) {
                return Err(NetworkError::PolicyViolation(format!(
                    "{DONATION_CHANNEL} policy {} does not require {}",
                    self.endorsement_policy, gov.org_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrgSpec {
    pub id: OrgId,
    #[serde(default)]
    pub name: String,
    pub kind: OrgKind,
    #[serde(default)]
    pub peers: usize,
}

/// A user identity to enroll at bootstrap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpec {
    pub org: OrgId,
    pub role: Role,
    pub name: String,
    /// Patient record id, for `Patient` identities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub members: Vec<OrgId>,
    pub policy: PolicyExpr,
    #[serde(default)]
    pub chaincodes: Vec<String>,
}

impl ChannelSpec {
    pub fn to_config(&self) -> ChannelConfig {
        ChannelConfig {
            name: self.name.clone(),
            member_orgs: self.members.iter().cloned().collect(),
            endorsement_policy: self.policy.clone(),
            orderer: default_orderer(),
            chaincodes: self.chaincodes.iter().cloned().collect(),
        }
    }
}

/// Network description consumed by `network up`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub orgs: Vec<OrgSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub orderer: OrderingConfig,
}

impl Topology {
    /// Reads YAML or JSON (JSON is valid YAML).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        serde_yaml::from_str(text).map_err(|e| NetworkError::Config(e.to_string()))
    }

    /// Government, admin, two hospitals and a transporter pool on one
    /// donation channel, solo ordering.
    pub fn sample() -> Self {
        let org = |id: &str, name: &str, kind, peers| OrgSpec { id: id.into(), name: name.into(), kind, peers };
        let user = |org: &str, role, name: &str| UserSpec { org: org.into(), role, name: name.into(), subject: None };
        Topology {
            orgs: vec![
                org("gov", "Government", OrgKind::Government, 1),
                org("admin", "Network Admin", OrgKind::Admin, 1),
                org("hospA", "Hospital A", OrgKind::Hospital, 2),
                org("hospB", "Hospital B", OrgKind::Hospital, 2),
                org("transport", "Transport Pool", OrgKind::TransporterPool, 0),
            ],
            users: vec![
                user("gov", Role::GovernmentAuditor, "auditor"),
                user("admin", Role::Administrator, "admin"),
                user("hospA", Role::HospitalStaff, "staff"),
                user("hospB", Role::HospitalStaff, "staff"),
                user("transport", Role::Transporter, "driver"),
            ],
            channels: vec![ChannelSpec {
                name: DONATION_CHANNEL.into(),
                members: vec!["gov".into(), "admin".into(), "hospA".into(), "hospB".into()],
                policy: PolicyExpr::parse("(and gov (submitter))").expect("valid policy"),
                chaincodes: vec!["donation".into()],
            }],
            orderer: OrderingConfig::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn membership() -> Membership {
        let mut m = Membership::new();
        m.register_org_with_id("gov", "Gov", OrgKind::Government).unwrap();
        m.register_org_with_id("hospA", "A", OrgKind::Hospital).unwrap();
        m.register_org_with_id("hospB", "B", OrgKind::Hospital).unwrap();
        m
    }

    #[test]
    fn donation_channel_needs_government() {
        let m = membership();
        let ok = ChannelConfig::new(
            DONATION_CHANNEL,
            &["gov", "hospA", "hospB"],
            PolicyExpr::parse("(and gov (submitter))").unwrap(),
            &["donation"],
        );
        assert!(ok.validate(&m).is_ok());
        let bad = ChannelConfig { endorsement_policy: PolicyExpr::parse("(or hospA)").unwrap(), ..ok.clone() };
        assert!(matches!(bad.validate(&m), Err(NetworkError::PolicyViolation(_))));
    }

    #[test]
    fn single_hospital_channel_is_fine() {
        let m = membership();
        let c = ChannelConfig::new("hospA-internal", &["hospA"], PolicyExpr::parse("hospA").unwrap(), &[]);
        assert!(c.validate(&m).is_ok());
    }

    #[test]
    fn unknown_and_non_member_orgs_are_rejected() {
        let m = membership();
        let c = ChannelConfig::new("x", &["hospA", "hospZ"], PolicyExpr::parse("hospA").unwrap(), &[]);
        assert!(matches!(c.validate(&m), Err(NetworkError::UnknownOrg(o)) if o == "hospZ"));
        let c = ChannelConfig::new("x", &["hospA"], PolicyExpr::parse("(and hospA hospB)").unwrap(), &[]);
        assert!(matches!(c.validate(&m), Err(NetworkError::PolicyViolation(_))));
    }

    #[test]
    fn topology_yaml_round_trips() {
        let t = Topology::sample();
        let yaml = serde_yaml::to_string(&t).unwrap();
        assert_eq!(Topology::parse(&yaml).unwrap(), t);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(Topology::parse(&json).unwrap(), t);
    }

    #[test]
    fn handwritten_topology_parses() {
        let t = Topology::parse(
            r#"
orgs:
  - { id: gov, name: Government, kind: government, peers: 1 }
  - { id: hospA, name: Hospital A, kind: hospital, peers: 2 }
users:
  - { org: hospA, role: hospital_staff, name: alice }
channels:
  - name: donation-system
    members: [gov, hospA]
    policy: "(and gov (submitter))"
    chaincodes: [donation]
orderer:
  mode: raft
  cluster: [1, 2, 3]
  batch_timeout: 200
"#,
        )
        .unwrap();
        assert_eq!(t.orgs[1].peers, 2);
        assert_eq!(t.users[0].role, Role::HospitalStaff);
        assert_eq!(t.orderer.cluster, vec![1, 2, 3]);
        assert_eq!(t.orderer.batch_timeout, std::time::Duration::from_millis(200));
    }
}
