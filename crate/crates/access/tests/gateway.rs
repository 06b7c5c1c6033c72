mod common;

use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use common::{record, start, topology, up};
use organchain_access::{ClientError, GatewayClient, GatewayConfig};
use organchain_core::identity::Role;
use organchain_core::network::DONATION_CHANNEL;
use serde_json::{json, Value};

fn status(e: ClientError) -> (u16, String) {
    match e {
        ClientError::Status { status, body } => (status, body["error"].as_str().unwrap_or("").to_string()),
        other => panic!("expected an HTTP error, got {other}"),
    }
}

#[test]
fn login_is_required_and_tokens_are_checked() {
    let env = up();
    let anon = GatewayClient::new(&env.gateway.url()).unwrap().with_token("bogus");
    assert_eq!(status(anon.get("/patients").unwrap_err()).0, 401);
    let raw = reqwest::blocking::get(format!("{}/patients", env.gateway.url())).unwrap();
    assert_eq!(raw.status().as_u16(), 401);
    let staff = env.key("hospA", Role::HospitalStaff);
    let mut c = GatewayClient::new(&env.gateway.url()).unwrap();
    let session = c.login(&staff).unwrap();
    assert_eq!(session["identityId"], staff.identity_id());
    let first = c.token().unwrap().to_string();
    c.login(&staff).unwrap();
    let stale = GatewayClient::new(&env.gateway.url()).unwrap().with_token(&first);
    assert_eq!(status(stale.get("/hospitals/hospA/patients").unwrap_err()).0, 401);
    env.stop();
}

#[test]
fn records_round_trip_with_contract_errors_mapped() {
    let env = up();
    let a = env.client(&env.key("hospA", Role::HospitalStaff));
    let b = env.client(&env.key("hospB", Role::HospitalStaff));
    let added = a.post("/patients", &record("p1", "kidney", "o+")).unwrap();
    assert_eq!(added.status, 201);
    assert_eq!(added.body["flag"], "Valid");
    assert_eq!(added.body["key"], "PAT_p1");
    let tx_id = added.body["tx_id"].as_str().unwrap().to_string();

    assert_eq!(status(a.post("/patients", &record("p1", "kidney", "o+")).unwrap_err()), (409, "DuplicateID".into()));
    assert_eq!(status(a.post("/patients", &json!({"ID": "p2"})).unwrap_err()).0, 422);
    assert_eq!(status(a.post("/patients", &json!([1, 2])).unwrap_err()).0, 422);
    assert_eq!(status(a.get("/patients/nobody").unwrap_err()), (404, "NotFound".into()));
    assert_eq!(status(b.get("/patients/p1").unwrap_err()), (403, "Unauthorized".into()));
    assert_eq!(status(a.get("/patients").unwrap_err()).0, 403);

    let got = a.get("/patients/p1").unwrap();
    assert_eq!(got.body["ID"], "p1");
    assert_eq!(got.body["hospitalId"], "hospA");
    let mine = a.get("/hospitals/hospA/patients").unwrap();
    assert_eq!(mine.body.as_array().unwrap().len(), 1);

    let tx = a.get(&format!("/tx/{tx_id}")).unwrap();
    assert_eq!(tx.body["flag"], "Valid");
    assert_eq!(tx.body["channel"], DONATION_CHANNEL);
    assert_eq!(status(a.get("/tx/unknown").unwrap_err()).0, 404);

    let deleted = a.request(&organchain_access::request_for("deletePatient", &["p1".into()]).unwrap()).unwrap();
    assert_eq!(deleted.status, 200);
    assert_eq!(status(a.get("/patients/p1").unwrap_err()).0, 404);
    assert_eq!(status(a.get("/no/such/route").unwrap_err()).0, 404);
    env.stop();
}

#[test]
fn patient_status_reflects_the_match() {
    let env = up();
    let staff = env.client(&env.key("hospA", Role::HospitalStaff));
    let added = staff.post("/patients", &record("p1", "liver", "a+")).unwrap();
    staff.post("/donors", &record("d1", "liver", "a+")).unwrap();
    let patient = env.enroll("hospA", Role::Patient, "pat", Some("p1"));
    let me = env.client(&patient);

    let before = me.get("/patients/p1/status").unwrap().body;
    assert_eq!(before["status"], "Waiting");
    assert_eq!(before["matchedDonorId"], Value::Null);
    // Registration time is the timestamp of the block holding addPatient.
    let block = added.body["block_number"].as_u64().unwrap();
    let peer = env.net.channel(DONATION_CHANNEL).unwrap().peers()[0].clone();
    let ts = peer.channel(DONATION_CHANNEL).unwrap().ledger().read().store().block(block).unwrap().timestamp_ms;
    assert_eq!(before["registered_at"], ts);
    assert!(before["waiting_time_ms"].as_u64().is_some());

    let candidates = staff.post("/patients/p1/find-match", &json!({})).unwrap().body;
    assert_eq!(candidates["candidates"], json!(["d1"]));
    let sel = staff.post("/match/select", &json!({"patientId": "p1", "donorId": "d1"})).unwrap();
    assert_eq!((sel.status, sel.body["flag"].as_str()), (200, Some("Valid")));

    let after = me.get("/patients/p1/status").unwrap().body;
    assert_eq!(after["status"], "Matched");
    assert_eq!(after["matchedDonorId"], "d1");
    assert_eq!(status(me.get("/patients/p2/status").unwrap_err()).0, 403);
    env.stop();
}

#[test]
fn concurrent_selects_for_one_donor_yield_one_conflict() {
    // A long batch timeout puts both selections in one block.
    let env = start(&topology(400), None, GatewayConfig::default());
    let staff = env.key("hospA", Role::HospitalStaff);
    let c = env.client(&staff);
    for p in ["p1", "p2"] {
        c.post("/patients", &record(p, "heart", "b-")).unwrap();
    }
    c.post("/donors", &record("d1", "heart", "b-")).unwrap();
    let barrier = Arc::new(Barrier::new(2));
    let token = c.token().unwrap().to_string();
    let url = env.gateway.url();
    let handles: Vec<_> = ["p1", "p2"]
        .into_iter()
        .map(|p| {
            let (barrier, token, url) = (barrier.clone(), token.clone(), url.clone());
            std::thread::spawn(move || {
                let c = GatewayClient::new(&url).unwrap().with_token(&token);
                barrier.wait();
                c.post("/match/select", &json!({"patientId": p, "donorId": "d1"}))
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let ok: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    assert_eq!(ok.len(), 1);
    assert_eq!(ok[0].body["flag"], "Valid");
    let err = results.into_iter().find_map(Result::err).unwrap();
    assert_eq!(status(err), (409, "MVCCConflict".into()));
    env.stop();
}

#[test]
fn slow_commit_answers_202_and_the_tx_can_be_polled() {
    let config = GatewayConfig { await_timeout: Duration::from_millis(1), ..GatewayConfig::default() };
    let env = start(&topology(300), None, config);
    let c = env.client(&env.key("hospA", Role::HospitalStaff));
    let r = c.post("/patients", &record("p9", "lung", "ab+")).unwrap();
    assert_eq!(r.status, 202);
    assert_eq!(r.body["status"], "pending");
    let tx_id = r.body["tx_id"].as_str().unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let polled = loop {
        match c.get(&format!("/tx/{tx_id}")) {
            Ok(r) => break r.body,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("{e}"),
        }
    };
    assert_eq!(polled["flag"], "Valid");
    env.stop();
}

fn collect_notices(url: &str, token: &str, last: Option<u64>, want: usize) -> std::sync::mpsc::Receiver<(Option<String>, Value)> {
    let (tx, rx) = std::sync::mpsc::channel();
    let c = GatewayClient::new(url).unwrap().with_token(token);
    std::thread::spawn(move || {
        let mut n = 0;
        let _ = c.events("/events/transport", last, |id, v| {
            n += 1;
            tx.send((id, v)).is_ok() && n < want
        });
    });
    rx
}

#[test]
fn transporters_get_notices_and_resume_without_loss() {
    let env = up();
    let staff = env.client(&env.key("hospA", Role::HospitalStaff));
    let driver = env.client(&env.key("transport", Role::Transporter));
    let url = env.gateway.url();
    let rx = collect_notices(&url, driver.token().unwrap(), None, 10);
    std::thread::sleep(Duration::from_millis(200));

    let select = |i: u32| {
        staff.post("/patients", &record(&format!("p{i}"), "kidney", "o-")).unwrap();
        staff.post("/donors", &record(&format!("d{i}"), "kidney", "o-")).unwrap();
        staff.post("/match/select", &json!({"patientId": format!("p{i}"), "donorId": format!("d{i}")})).unwrap();
    };
    select(1);
    let (id, first) = rx.recv_timeout(Duration::from_secs(10)).unwrap();
    assert_eq!(id.as_deref(), Some("1"));
    assert_eq!(first["patientId"], "p1");
    assert_eq!(first["donorId"], "d1");
    assert_eq!(first["organ"], "kidney");
    assert_eq!(first["sourceHospital"], "hospA");
    // Exactly one notice per selection.
    assert!(rx.recv_timeout(Duration::from_millis(300)).is_err());

    // Three selections while a second transporter is away.
    for i in 2..=4 {
        select(i);
    }
    let replay = collect_notices(&url, driver.token().unwrap(), Some(1), 3);
    let ids: Vec<String> =
        (0..3).map(|_| replay.recv_timeout(Duration::from_secs(10)).unwrap()).map(|(id, _)| id.unwrap()).collect();
    assert_eq!(ids, ["2", "3", "4"]);

    let hospital = GatewayClient::new(&url).unwrap().with_token(staff.token().unwrap());
    let denied = hospital.events("/events/transport", None, |_, _| false).unwrap_err();
    assert_eq!(status(denied).0, 403);
    env.stop();
}

#[test]
fn chain_verify_and_admin_state_export() {
    let env = up();
    let staff = env.client(&env.key("hospA", Role::HospitalStaff));
    let admin = env.client(&env.key("admin", Role::Administrator));
    staff.post("/patients", &record("p1", "kidney", "o+")).unwrap();
    let report = admin.get("/chain/verify").unwrap().body;
    assert_eq!(report["ok"], true);
    assert_eq!(status(staff.get("/chain/verify").unwrap_err()).0, 403);

    let peers: Vec<String> = env.net.channel(DONATION_CHANNEL).unwrap().peers().iter().map(|p| p.peer_id().to_string()).collect();
    let dumps: Vec<Value> = peers
        .iter()
        .map(|p| admin.get(&format!("/admin/state?channel={DONATION_CHANNEL}&peer={p}")).unwrap().body)
        .collect();
    assert!(dumps.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(status(staff.get(&format!("/admin/state?channel={DONATION_CHANNEL}")).unwrap_err()).0, 403);

    let created = admin
        .post("/admin/channels", &json!({"name": "hospA-internal", "members": ["hospA"], "policy": "hospA"}))
        .unwrap();
    assert_eq!(created.status, 201);
    assert_eq!(created.body["height"], 1);
    let dup = admin.post("/admin/channels", &json!({"name": "hospA-internal", "members": ["hospA"], "policy": "hospA"}));
    assert_eq!(status(dup.unwrap_err()).0, 422);
    env.stop();
}

#[test]
fn restart_keeps_committed_data() {
    let dir = tempfile::tempdir().unwrap();
    let topo = topology(20);
    let env = start(&topo, Some(dir.path()), GatewayConfig::default());
    let key = env.key("hospA", Role::HospitalStaff);
    env.client(&key).post("/patients", &record("p1", "pancreas", "a-")).unwrap();
    env.stop();

    let env = start(&topo, Some(dir.path()), GatewayConfig::default());
    let c = env.client(&key);
    assert_eq!(c.get("/patients/p1").unwrap().body["organRequired"], "pancreas");
    env.stop();
}

#[test]
fn shutdown_endpoint_is_admin_only() {
    let env = up();
    let staff = env.client(&env.key("hospA", Role::HospitalStaff));
    assert_eq!(status(staff.post("/admin/shutdown", &json!({})).unwrap_err()).0, 403);
    let admin = env.client(&env.key("admin", Role::Administrator));
    assert_eq!(admin.post("/admin/shutdown", &json!({})).unwrap().status, 202);
    env.stop();
}
