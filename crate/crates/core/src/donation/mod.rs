//! Organ-donation contract: patient and donor registration, reads, deletes,
//! matchmaking and match selection.
//!
//! Records live at `PAT_<id>` and `DON_<id>` as canonical JSON. Listing
//! methods scan the kind's key prefix; the scan is recorded as a range read,
//! so a concurrent insert or delete under the prefix invalidates the reader
//! at commit.

mod record;

pub use record::{
    is_candidate, BloodGroup, Gender, MatchCandidateList, MatchSelected, Organ, Record, RecordAdded, RecordInput,
    RecordKind, RecordStatus,
};

use serde_json::json;

use crate::chaincode::{Chaincode, ChaincodeError, ErrorKind, TxContext};
use crate::identity::{Action, Resource};
use record::canonical_json;

pub const CHAINCODE_NAME: &str = "donation";
pub const EVENT_RECORD_ADDED: &str = "RecordAdded";
pub const EVENT_MATCH_SELECTED: &str = "MatchSelected";

/// Method name, guarding action, and whether it only reads.
pub const METHODS: [(&str, Action, bool); 12] = [
    ("addPatient", Action::AddPatient, false),
    ("addDonor", Action::AddDonor, false),
    ("getPatient", Action::GetPatient, true),
    ("getDonor", Action::GetDonor, true),
    ("getAllPatients", Action::GetAllPatients, true),
    ("getAllDonors", Action::GetAllDonors, true),
    ("getMyPatients", Action::GetMyPatients, true),
    ("getMyDonors", Action::GetMyDonors, true),
    ("deletePatient", Action::DeletePatient, false),
    ("deleteDonor", Action::DeleteDonor, false),
    ("findMatch", Action::FindMatch, true),
    ("selectMatch", Action::SelectMatch, false),
];

pub fn method_action(method: &str) -> Option<Action> {
    METHODS.iter().find(|(m, _, _)| *m == method).map(|(_, a, _)| *a)
}

pub fn is_query(method: &str) -> bool {
    METHODS.iter().any(|(m, _, q)| *m == method && *q)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DonationChaincode;

impl Chaincode for DonationChaincode {
    fn name(&self) -> &str {
        CHAINCODE_NAME
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, method: &str, args: &[String]) -> Result<Vec<u8>, ChaincodeError> {
        use RecordKind::{Donor, Patient};
        match method {
            "addPatient" => add_record(ctx, Patient, arg(args, 0)?),
            "addDonor" => add_record(ctx, Donor, arg(args, 0)?),
            "getPatient" => get_record(ctx, Patient, arg(args, 0)?),
            "getDonor" => get_record(ctx, Donor, arg(args, 0)?),
            "getAllPatients" => get_all_records(ctx, Patient),
            "getAllDonors" => get_all_records(ctx, Donor),
            "getMyPatients" => get_my_records(ctx, Patient, arg(args, 0)?),
            "getMyDonors" => get_my_records(ctx, Donor, arg(args, 0)?),
            "deletePatient" => delete_record(ctx, Patient, arg(args, 0)?),
            "deleteDonor" => delete_record(ctx, Donor, arg(args, 0)?),
            "findMatch" => find_match(ctx, arg(args, 0)?).map(|m| canonical_json(&m)),
            "selectMatch" => select_match(ctx, arg(args, 0)?, arg(args, 1)?),
            other => Err(ChaincodeError::new(ErrorKind::UnknownMethod, other)),
        }
    }
}

fn arg(args: &[String], i: usize) -> Result<&str, ChaincodeError> {
    args.get(i)
        .map(String::as_str)
        .ok_or_else(|| ChaincodeError::new(ErrorKind::BadArguments, format!("missing argument {i}")))
}

fn action(kind: RecordKind, patient: Action, donor: Action) -> Action {
    match kind {
        RecordKind::Patient => patient,
        RecordKind::Donor => donor,
    }
}

fn load(ctx: &mut TxContext<'_>, kind: RecordKind, id: &str) -> Result<Option<Record>, ChaincodeError> {
    match ctx.get_state(&kind.key(id)) {
        None => Ok(None),
        Some(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ChaincodeError::new(ErrorKind::ValidationError, format!("corrupt {kind} {id}: {e}"))),
    }
}

/// Loads a record and authorizes `act` on it. A missing record is reported
/// as `NotFound` only to callers who could have read it in their own scope.
fn load_authorized(ctx: &mut TxContext<'_>, kind: RecordKind, id: &str, act: Action) -> Result<Record, ChaincodeError> {
    match load(ctx, kind, id)? {
        Some(r) => {
            ctx.authorize(act, &Resource::record(&r.hospital_id, id))?;
            Ok(r)
        }
        None => {
            let own = ctx.caller().org_id.clone();
            ctx.authorize(act, &Resource::record(&own, id))?;
            Err(ChaincodeError::new(ErrorKind::NotFound, format!("{kind} {id} not found")))
        }
    }
}

fn store(ctx: &mut TxContext<'_>, kind: RecordKind, r: &Record) {
    ctx.put_state(&kind.key(&r.id), r.to_canonical_json());
}

fn add_record(ctx: &mut TxContext<'_>, kind: RecordKind, body: &str) -> Result<Vec<u8>, ChaincodeError> {
    let hospital = ctx.caller().org_id.clone();
    ctx.authorize(action(kind, Action::AddPatient, Action::AddDonor), &Resource::owned_by(&hospital))?;
    let input: RecordInput = serde_json::from_str(body)
        .map_err(|e| ChaincodeError::new(ErrorKind::ValidationError, format!("bad {kind} record: {e}")))?;
    if input.id.is_empty() || !input.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ChaincodeError::new(ErrorKind::ValidationError, "ID must be nonempty [A-Za-z0-9_-]"));
    }
    if input.age < 1 {
        return Err(ChaincodeError::new(ErrorKind::ValidationError, "age must be at least 1"));
    }
    let key = kind.key(&input.id);
    if ctx.get_state(&key).is_some() {
        return Err(ChaincodeError::new(ErrorKind::DuplicateId, format!("{key} already exists")));
    }
    let record = Record::new(kind, input, hospital.clone());
    store(ctx, kind, &record);
    ctx.set_event(
        EVENT_RECORD_ADDED,
        canonical_json(&RecordAdded { kind, id: record.id.clone(), hospital_id: hospital }),
    );
    Ok(canonical_json(&json!({ "key": key })))
}

fn get_record(ctx: &mut TxContext<'_>, kind: RecordKind, id: &str) -> Result<Vec<u8>, ChaincodeError> {
    let r = load_authorized(ctx, kind, id, action(kind, Action::GetPatient, Action::GetDonor))?;
    Ok(r.to_canonical_json())
}

fn scan_records(ctx: &mut TxContext<'_>, kind: RecordKind) -> Result<Vec<Record>, ChaincodeError> {
    ctx.scan_prefix(kind.prefix())
        .into_iter()
        .map(|(k, v)| {
            serde_json::from_slice(&v)
                .map_err(|e| ChaincodeError::new(ErrorKind::ValidationError, format!("corrupt record {k}: {e}")))
        })
        .collect()
}

fn get_all_records(ctx: &mut TxContext<'_>, kind: RecordKind) -> Result<Vec<u8>, ChaincodeError> {
    ctx.authorize(action(kind, Action::GetAllPatients, Action::GetAllDonors), &Resource::any())?;
    Ok(canonical_json(&scan_records(ctx, kind)?))
}

fn get_my_records(ctx: &mut TxContext<'_>, kind: RecordKind, hospital: &str) -> Result<Vec<u8>, ChaincodeError> {
    ctx.authorize(action(kind, Action::GetMyPatients, Action::GetMyDonors), &Resource::owned_by(hospital))?;
    let mine: Vec<Record> = scan_records(ctx, kind)?.into_iter().filter(|r| r.hospital_id == hospital).collect();
    Ok(canonical_json(&mine))
}

fn delete_record(ctx: &mut TxContext<'_>, kind: RecordKind, id: &str) -> Result<Vec<u8>, ChaincodeError> {
    let r = load_authorized(ctx, kind, id, action(kind, Action::DeletePatient, Action::DeleteDonor))?;
    if r.is_matched() {
        return Err(ChaincodeError::new(
            ErrorKind::MatchedRecordLocked,
            format!("{kind} {id} is matched to {}", r.match_id),
        ));
    }
    ctx.del_state(&kind.key(id));
    Ok(canonical_json(&json!({ "key": kind.key(id) })))
}

pub fn find_match(ctx: &mut TxContext<'_>, patient_id: &str) -> Result<MatchCandidateList, ChaincodeError> {
    let patient = load_authorized(ctx, RecordKind::Patient, patient_id, Action::FindMatch)?;
    if patient.is_matched() {
        return Err(ChaincodeError::new(
            ErrorKind::AlreadyMatched,
            format!("patient {patient_id} is matched to {}", patient.match_id),
        ));
    }
    let candidates = scan_records(ctx, RecordKind::Donor)?
        .into_iter()
        .filter(|d| is_candidate(&patient, d))
        .map(|d| d.id)
        .collect();
    Ok(MatchCandidateList { patient_id: patient_id.to_string(), candidates, produced_at: ctx.snapshot_height() })
}

fn select_match(ctx: &mut TxContext<'_>, patient_id: &str, donor_id: &str) -> Result<Vec<u8>, ChaincodeError> {
    let mut patient = load_authorized(ctx, RecordKind::Patient, patient_id, Action::SelectMatch)?;
    let Some(mut donor) = load(ctx, RecordKind::Donor, donor_id)? else {
        return Err(ChaincodeError::new(ErrorKind::NotFound, format!("donor {donor_id} not found")));
    };
    if patient.is_matched() {
        return Err(ChaincodeError::new(
            ErrorKind::AlreadyMatched,
            format!("patient {patient_id} is matched to {}", patient.match_id),
        ));
    }
    if donor.is_matched() {
        return Err(ChaincodeError::new(
            ErrorKind::AlreadyMatched,
            format!("donor {donor_id} is matched to {}", donor.match_id),
        ));
    }
    if !is_candidate(&patient, &donor) {
        return Err(ChaincodeError::new(
            ErrorKind::NotAMatch,
            format!("donor {donor_id} does not match patient {patient_id}"),
        ));
    }
    donor.match_id = patient.id.clone();
    donor.status = RecordStatus::Matched;
    patient.match_id = donor.id.clone();
    patient.status = RecordStatus::Matched;
    store(ctx, RecordKind::Donor, &donor);
    store(ctx, RecordKind::Patient, &patient);
    let event = MatchSelected {
        patient_id: patient.id.clone(),
        donor_id: donor.id.clone(),
        organ: patient.organ_required,
        source_hospital: donor.hospital_id.clone(),
        destination_hospital: patient.hospital_id.clone(),
    };
    ctx.set_event(EVENT_MATCH_SELECTED, canonical_json(&event));
    Ok(canonical_json(&json!({ "patientId": patient.id, "donorId": donor.id })))
}
