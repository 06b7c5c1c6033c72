use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::identity::OrgId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Organ {
    Kidney,
    Liver,
    Heart,
    Lung,
    Pancreas,
}

impl Organ {
    pub const ALL: [Organ; 5] = [Organ::Kidney, Organ::Liver, Organ::Heart, Organ::Lung, Organ::Pancreas];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BloodGroup {
    #[serde(rename = "a+")]
    APos,
    #[serde(rename = "a-")]
    ANeg,
    #[serde(rename = "b+")]
    BPos,
    #[serde(rename = "b-")]
    BNeg,
    #[serde(rename = "ab+")]
    AbPos,
    #[serde(rename = "ab-")]
    AbNeg,
    #[serde(rename = "o+")]
    OPos,
    #[serde(rename = "o-")]
    ONeg,
}

impl BloodGroup {
    pub const ALL: [BloodGroup; 8] = [
        BloodGroup::APos,
        BloodGroup::ANeg,
        BloodGroup::BPos,
        BloodGroup::BNeg,
        BloodGroup::AbPos,
        BloodGroup::AbNeg,
        BloodGroup::OPos,
        BloodGroup::ONeg,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    M,
    F,
    O,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::M, Gender::F, Gender::O];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Waiting,
    Available,
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Patient,
    Donor,
}

impl RecordKind {
    pub fn prefix(self) -> &'static str {
        match self {
            RecordKind::Patient => "PAT_",
            RecordKind::Donor => "DON_",
        }
    }

    pub fn key(self, id: &str) -> String {
        format!("{}{id}", self.prefix())
    }

    /// Status of a freshly added record.
    pub fn initial_status(self) -> RecordStatus {
        match self {
            RecordKind::Patient => RecordStatus::Waiting,
            RecordKind::Donor => RecordStatus::Available,
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Patient => "patient",
            RecordKind::Donor => "donor",
        })
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" => Ok(RecordKind::Patient),
            "donor" => Ok(RecordKind::Donor),
            _ => Err(format!("unknown record kind {s:?}")),
        }
    }
}

/// Client-supplied fields of a new patient or donor. For donors
/// `organRequired` is the organ offered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordInput {
    #[serde(rename = "ID")]
    pub id: String,
    #[serde(rename = "firstName")]
    pub first_name: String,
    #[serde(rename = "lastName")]
    pub last_name: String,
    pub age: u32,
    #[serde(rename = "phoneNumber")]
    pub phone_number: String,
    pub address: String,
    #[serde(rename = "organRequired")]
    pub organ_required: Organ,
    pub bloodgroup: BloodGroup,
    pub gender: Gender,
    pub medhistory: String,
}

/// Stored patient or donor record. `match_id` is empty until matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    #[serde(rename = "ID")]
    pub id: String,
    #[serde(rename = "firstName")]
    pub first_name: String,
    #[serde(rename = "lastName")]
    pub last_name: String,
    pub age: u32,
    #[serde(rename = "phoneNumber")]
    pub phone_number: String,
    pub address: String,
    #[serde(rename = "organRequired")]
    pub organ_required: Organ,
    pub bloodgroup: BloodGroup,
    pub gender: Gender,
    pub medhistory: String,
    #[serde(rename = "hospitalId")]
    pub hospital_id: OrgId,
    #[serde(rename = "match")]
    pub match_id: String,
    pub status: RecordStatus,
}

impl Record {
    pub fn new(kind: RecordKind, input: RecordInput, hospital_id: OrgId) -> Self {
        Record {
            id: input.id,
            first_name: input.first_name,
            last_name: input.last_name,
            age: input.age,
            phone_number: input.phone_number,
            address: input.address,
            organ_required: input.organ_required,
            bloodgroup: input.bloodgroup,
            gender: input.gender,
            medhistory: input.medhistory,
            hospital_id,
            match_id: String::new(),
            status: kind.initial_status(),
        }
    }

    pub fn is_matched(&self) -> bool {
        self.status == RecordStatus::Matched
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical_json(self)
    }
}

pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json::Value keeps object keys in a BTreeMap, so this sorts them.
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_vec(&v).expect("serializable")
}

/// Eligibility of `donor` for `patient`: same blood group, organ and gender,
/// and the donor is still available.
pub fn is_candidate(patient: &Record, donor: &Record) -> bool {
    donor.bloodgroup == patient.bloodgroup
        && donor.organ_required == patient.organ_required
        && donor.gender == patient.gender
        && donor.status == RecordStatus::Available
}

/// Output of `findMatch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCandidateList {
    #[serde(rename = "patientId")]
    pub patient_id: String,
    pub candidates: Vec<String>,
    /// Committed height of the state the search ran against.
    pub produced_at: u64,
}

/// Payload of the `MatchSelected` chaincode event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSelected {
    #[serde(rename = "patientId")]
    pub patient_id: String,
    #[serde(rename = "donorId")]
    pub donor_id: String,
    pub organ: Organ,
    /// Donor's hospital.
    #[serde(rename = "sourceHospital")]
    pub source_hospital: OrgId,
    /// Patient's hospital.
    #[serde(rename = "destinationHospital")]
    pub destination_hospital: OrgId,
}

/// Payload of the `RecordAdded` chaincode event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordAdded {
    pub kind: RecordKind,
    #[serde(rename = "ID")]
    pub id: String,
    #[serde(rename = "hospitalId")]
    pub hospital_id: OrgId,
}
