//! Acceptance suite. Runs each criterion in turn, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use organchain_access::{request_for, ClientError, GatewayConfig, ROUTES};
use organchain_bench::{aggregate, run, NetworkTarget, Operation, Outcome, TxObservation, WorkloadConfig};
use organchain_core::chaincode::simulate;
use organchain_core::donation::DonationChaincode;
use organchain_core::identity::{Action, Decision, Membership, OrgKind, Resource, Role, SigningKey};
use organchain_core::ledger::{read_records, write_records, BlockStore, ChainStatus, KvWrite, ValidationCode, WorldState};
use organchain_core::network::{
    ChannelSpec, Network, NetworkError, OrgSpec, PolicyExpr, Topology, UserSpec, Wallet, DONATION_CHANNEL,
};
use organchain_core::ordering::{OrderingConfig, OrderingService};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome_ = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const ORGANS: [&str; 5] = ["kidney", "liver", "heart", "lung", "pancreas"];
const BLOODS: [&str; 8] = ["a+", "a-", "b+", "b-", "ab+", "ab-", "o+", "o-"];
const GENDERS: [&str; 3] = ["m", "f", "o"];

fn record(id: &str, organ: &str, blood: &str, gender: &str) -> String {
    json!({
        "ID": id, "firstName": "F", "lastName": "L", "age": 50, "phoneNumber": "555", "address": "X",
        "organRequired": organ, "bloodgroup": blood, "gender": gender, "medhistory": "-"
    })
    .to_string()
}

/// Government and one hospital, two peers each.
fn two_org_topology() -> Topology {
    let org = |id: &str, kind| OrgSpec { id: id.into(), name: id.into(), kind, peers: 2 };
    Topology {
        orgs: vec![org("gov", OrgKind::Government), org("hospA", OrgKind::Hospital)],
        users: vec![UserSpec { org: "hospA".into(), role: Role::HospitalStaff, name: "staff".into(), subject: None }],
        channels: vec![ChannelSpec {
            name: DONATION_CHANNEL.into(),
            members: vec!["gov".into(), "hospA".into()],
            policy: PolicyExpr::parse("(and gov (submitter))").unwrap(),
            chaincodes: vec!["donation".into()],
        }],
        orderer: OrderingConfig { batch_timeout: Duration::from_millis(20), ..OrderingConfig::default() },
    }
}

fn key_of(net: &Network, wallet: &Wallet, org: &str, role: Role) -> SigningKey {
    let m = net.membership();
    let id = m.identities().find(|i| i.org_id == org && i.role == role).unwrap().identity_id.clone();
    wallet.get(&id).unwrap().clone()
}

fn invoke(net: &Network, key: &SigningKey, method: &str, args: Vec<String>) -> Result<ValidationCode, NetworkError> {
    net.invoke(DONATION_CHANNEL, "donation", method, args, key).map(|r| r.flag)
}

fn exports(net: &Network) -> Vec<(String, Vec<u8>)> {
    net.peers()
        .iter()
        .filter_map(|p| p.channel(DONATION_CHANNEL).map(|c| (p.peer_id().to_string(), c.ledger().read().state().export())))
        .collect()
}

fn tamper_detection() -> Outcome_ {
    let dir = tempfile::tempdir().unwrap();
    let (net, wallet) = Network::bootstrap(&two_org_topology(), Some(dir.path())).unwrap();
    ensure!(net.peers().len() == 4, "expected 4 peers, got {}", net.peers().len());
    let staff = key_of(&net, &wallet, "hospA", Role::HospitalStaff);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut calls: Vec<(&str, Vec<String>)> = Vec::new();
    for i in 0..65 {
        let (o, b, g) = (*ORGANS.choose(&mut rng).unwrap(), *BLOODS.choose(&mut rng).unwrap(), *GENDERS.choose(&mut rng).unwrap());
        calls.push(("addPatient", vec![record(&format!("p{i}"), o, b, g)]));
        calls.push(("addDonor", vec![record(&format!("d{i}"), o, b, g)]));
    }
    for i in 0..40 {
        calls.push(("selectMatch", vec![format!("p{i}"), format!("d{i}")]));
    }
    for i in 50..65 {
        calls.push(("deletePatient", vec![format!("p{i}")]));
        calls.push(("deleteDonor", vec![format!("d{i}")]));
    }
    ensure!(calls.len() == 200, "workload has {} transactions", calls.len());
    for (method, args) in calls {
        let flag = invoke(&net, &staff, method, args).map_err(|e| format!("{method}: {e}"))?;
        ensure!(flag == ValidationCode::Valid, "{method} committed as {flag:?}");
    }

    let hosp: Vec<_> = net.peers().into_iter().filter(|p| p.org_id() == "hospA").collect();
    let gov: Vec<_> = net.peers().into_iter().filter(|p| p.org_id() == "gov").collect();
    let victim = hosp[1].clone();
    let pc = victim.channel(DONATION_CHANNEL).unwrap();
    let stored = String::from_utf8(pc.ledger().read().get_state("PAT_p40").unwrap().to_vec()).unwrap();
    pc.ledger().write().state_mut().overwrite_unchecked("PAT_p40", stored.replace("\"age\":50", "\"age\":51").into_bytes());

    let proposal = net.new_proposal(DONATION_CHANNEL, "donation", "selectMatch", vec!["p40".into(), "d40".into()], staff.identity_id());
    let honest = net.endorse(&proposal, &[gov[0].clone(), hosp[0].clone()]).map_err(|e| e.to_string())?;
    ensure!(Network::assemble(&proposal, &honest, &staff).is_ok(), "honest endorsements were rejected");
    let mixed = net.endorse(&proposal, &[gov[0].clone(), victim.clone()]).map_err(|e| e.to_string())?;
    match Network::assemble(&proposal, &mixed, &staff) {
        Err(NetworkError::EndorsementMismatch(_)) => {}
        other => return Err(format!("tampered endorsement not caught: {:?}", other.map(|t| t.tx_id))),
    }

    let height = pc.ledger().read().height();
    let path = dir.path().join("peers").join(victim.peer_id()).join(DONATION_CHANNEL).join("blocks.bin");
    net.shutdown();
    let mut blocks = read_records(&path).map_err(|e| e.to_string())?;
    let target = rng.gen_range(1..height) as usize;
    blocks[target].transactions[0].args.push("forged".into());
    write_records(&path, &blocks).map_err(|e| e.to_string())?;
    let reopened = BlockStore::open(&path).map_err(|e| e.to_string())?;
    let status = reopened.verify_chain();
    ensure!(status == ChainStatus::Corrupt(target as u64), "tampered block {target}, verify_chain said {status:?}");
    let honest_path = dir.path().join("peers").join(hosp[0].peer_id()).join(DONATION_CHANNEL).join("blocks.bin");
    ensure!(BlockStore::open(&honest_path).unwrap().verify_chain() == ChainStatus::Ok, "untouched store failed verification");
    Ok(format!("EndorsementMismatch raised; block {target} of {height} reported"))
}

fn mvcc_exclusivity() -> Outcome_ {
    let mut topo = Topology::sample();
    topo.orderer.batch_timeout = Duration::from_millis(20);
    let (net, wallet) = Network::bootstrap(&topo, None).unwrap();
    let staff = key_of(&net, &wallet, "hospA", Role::HospitalStaff);
    const ROUNDS: usize = 50;
    for r in 0..ROUNDS {
        let (o, b, g) = (ORGANS[r % 5], BLOODS[r % 8], GENDERS[r % 3]);
        for id in [format!("r{r}a"), format!("r{r}b")] {
            invoke(&net, &staff, "addPatient", vec![record(&id, o, b, g)]).map_err(|e| e.to_string())?;
        }
        invoke(&net, &staff, "addDonor", vec![record(&format!("r{r}d"), o, b, g)]).map_err(|e| e.to_string())?;
    }
    let mut tally = BTreeMap::new();
    for r in 0..ROUNDS {
        let barrier = Arc::new(Barrier::new(2));
        let flags: Vec<Result<ValidationCode, String>> = std::thread::scope(|s| {
            let hs: Vec<_> = ["a", "b"]
                .iter()
                .map(|side| {
                    let (net, staff, barrier) = (&net, &staff, barrier.clone());
                    s.spawn(move || {
                        let args = vec![format!("r{r}{side}"), format!("r{r}d")];
                        let p = net.new_proposal(DONATION_CHANNEL, "donation", "selectMatch", args, staff.identity_id());
                        let endorsed = net.endorse_proposal(&p).map_err(|e| e.to_string());
                        barrier.wait();
                        let tx = Network::assemble(&p, &endorsed?, staff).map_err(|e| e.to_string())?;
                        let rx = net.submit(tx).map_err(|e| e.to_string())?;
                        let r = net.await_commit(DONATION_CHANNEL, &p.tx_id, &rx, vec![]).map_err(|e| e.to_string())?;
                        Ok(r.flag)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let flags: Vec<ValidationCode> = flags.into_iter().collect::<Result<_, _>>()?;
        let valid = flags.iter().filter(|f| **f == ValidationCode::Valid).count();
        let conflict = flags.iter().filter(|f| **f == ValidationCode::MvccConflict).count();
        ensure!(valid == 1 && conflict == 1, "round {r}: {flags:?}");
        *tally.entry("rounds").or_insert(0) += 1;

        let get = |m: &str, id: String| -> Value {
            serde_json::from_slice(&net.query(DONATION_CHANNEL, "donation", m, vec![id], staff.identity_id()).unwrap()).unwrap()
        };
        let donor = get("getDonor", format!("r{r}d"));
        let winner = donor["match"].as_str().unwrap_or("").to_string();
        ensure!(winner == format!("r{r}a") || winner == format!("r{r}b"), "round {r}: donor matched to {winner:?}");
        let loser = if winner.ends_with('a') { format!("r{r}b") } else { format!("r{r}a") };
        let (w, l) = (get("getPatient", winner.clone()), get("getPatient", loser));
        ensure!(w["match"] == format!("r{r}d") && w["status"] == "matched", "round {r}: winner {w}");
        ensure!(l["match"] == "" && l["status"] == "waiting", "round {r}: loser {l}");
    }
    net.shutdown();
    Ok(format!("{ROUNDS} rounds, each one Valid + one MVCCConflict, matches bijective"))
}

fn replication_determinism() -> Outcome_ {
    let (net, wallet) = Network::bootstrap(&two_org_topology(), None).unwrap();
    let staff = key_of(&net, &wallet, "hospA", Role::HospitalStaff);
    const TOTAL: usize = 1000;
    const THREADS: usize = 4;
    let flags = Mutex::new(BTreeMap::<String, usize>::new());
    std::thread::scope(|s| {
        for t in 0..THREADS {
            let (net, staff, flags) = (&net, &staff, &flags);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t as u64);
                let (mut patients, mut donors) = (Vec::<String>::new(), Vec::<String>::new());
                let mut n = 0;
                let mut submitted = 0;
                while submitted < TOTAL / THREADS {
                    let roll = rng.gen_range(0..100);
                    let (o, b, g) = (ORGANS[rng.gen_range(0..2)], BLOODS[rng.gen_range(0..2)], GENDERS[rng.gen_range(0..2)]);
                    let (method, args) = if roll < 30 || patients.is_empty() {
                        n += 1;
                        patients.push(format!("t{t}p{n}"));
                        ("addPatient", vec![record(patients.last().unwrap(), o, b, g)])
                    } else if roll < 60 || donors.is_empty() {
                        n += 1;
                        donors.push(format!("t{t}d{n}"));
                        ("addDonor", vec![record(donors.last().unwrap(), o, b, g)])
                    } else if roll < 85 {
                        let p = patients.choose(&mut rng).unwrap().clone();
                        let d = donors.choose(&mut rng).unwrap().clone();
                        ("selectMatch", vec![p, d])
                    } else if roll < 93 {
                        ("deletePatient", vec![patients.swap_remove(rng.gen_range(0..patients.len()))])
                    } else {
                        ("deleteDonor", vec![donors.swap_remove(rng.gen_range(0..donors.len()))])
                    };
                    // Contract rejections at endorsement never reach the orderer.
                    if let Ok(flag) = invoke(net, staff, method, args) {
                        submitted += 1;
                        *flags.lock().unwrap().entry(flag.as_str().to_string()).or_default() += 1;
                    }
                }
            });
        }
    });
    let ex = exports(&net);
    ensure!(ex.len() == 4, "expected 4 peers");
    ensure!(ex.windows(2).all(|w| w[0].1 == w[1].1), "world states differ across peers");
    let tips: Vec<_> =
        net.peers().iter().map(|p| p.channel(DONATION_CHANNEL).unwrap().ledger().read().tip_hash()).collect();
    ensure!(tips.windows(2).all(|w| w[0] == w[1]), "chains differ across peers");

    let fresh = net.new_peer("hospA").map_err(|e| e.to_string())?;
    net.join_channel(fresh.peer_id(), DONATION_CHANNEL).map_err(|e| e.to_string())?;
    let replayed = fresh.channel(DONATION_CHANNEL).unwrap().ledger().read().state().export();
    ensure!(replayed == ex[0].1, "replayed peer's state differs");
    let height = net.channel(DONATION_CHANNEL).unwrap().height();
    net.shutdown();
    Ok(format!("{TOTAL} tx over {height} blocks, flags {:?}; 4 peers + replay byte-identical", flags.into_inner().unwrap()))
}

fn raft_resilience() -> Outcome_ {
    let mut topo = Topology::sample();
    topo.orderer = OrderingConfig {
        batch_timeout: Duration::from_millis(50),
        max_tx_per_block: 20,
        ..OrderingConfig::raft(vec![1, 2, 3])
    };
    let (net, wallet) = Network::bootstrap(&topo, None).unwrap();
    let staff = key_of(&net, &wallet, "hospA", Role::HospitalStaff);
    let channel = net.channel(DONATION_CHANNEL).unwrap();
    let orderer = channel.orderer().clone();
    let first_leader = orderer.wait_for_leader(Duration::from_secs(5)).ok_or("no leader elected")?;

    let deliveries = Arc::new(Mutex::new(Vec::<Instant>::new()));
    let feed = orderer.deliver(0).map_err(|e| e.to_string())?;
    let times = deliveries.clone();
    let watcher = std::thread::spawn(move || {
        while let Ok(_b) = feed.recv_timeout(Duration::from_secs(30)) {
            times.lock().unwrap().push(Instant::now());
        }
    });

    const RATE: f64 = 100.0;
    const TOTAL: u64 = 2000;
    let target = NetworkTarget::new(net.clone(), DONATION_CHANNEL, staff).map_err(|e| e.to_string())?;
    let workload = WorkloadConfig::fixed_rate("raft", Operation::CreateRecord, RATE, TOTAL).with_seed(0xa11);
    let start = Instant::now();
    let killer = {
        let orderer = orderer.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs(10).saturating_sub(start.elapsed()));
            let leader = orderer.leader().unwrap_or(first_leader);
            orderer.kill(leader);
            (leader, Instant::now())
        })
    };
    let report = run(&workload, &target).map_err(|e| e.to_string())?;
    let (killed, killed_at) = killer.join().unwrap();
    std::thread::sleep(Duration::from_millis(500));

    ensure!(report.metrics.success == TOTAL, "{} of {TOTAL} committed ({:?})", report.metrics.success, report.metrics.fail_reasons);
    let survivors: Vec<_> = orderer.members().into_iter().filter(|&m| m != killed).collect();
    let logs: Vec<_> = survivors.iter().map(|&id| orderer.node_log(id)).collect();
    ensure!(logs[0] == logs[1], "surviving orderers delivered different sequences");
    let dead = orderer.node_log(killed);
    ensure!(logs[0].len() >= dead.len() && logs[0][..dead.len()] == dead[..], "killed leader's log is not a prefix");
    ensure!(orderer.disagreements() == 0, "{} delivery disagreements", orderer.disagreements());

    let tx_ids: Vec<&str> = logs[0]
        .iter()
        .flat_map(|b| b.payload.transactions.iter())
        .filter(|t| t.method == "addDonor")
        .map(|t| t.tx_id.as_str())
        .collect();
    let unique: HashSet<&str> = tx_ids.iter().copied().collect();
    ensure!(tx_ids.len() == TOTAL as usize && unique.len() == tx_ids.len(), "{} delivered, {} unique", tx_ids.len(), unique.len());

    let resumed = deliveries.lock().unwrap().iter().copied().find(|t| *t > killed_at).ok_or("no delivery after the kill")?;
    let gap = resumed - killed_at;
    ensure!(gap < Duration::from_secs(5), "delivery resumed {gap:?} after the kill");
    net.shutdown();
    let _ = watcher.join();
    Ok(format!(
        "leader {killed} killed at {:.1}s; resumed after {gap:.2?}; {TOTAL} tx exactly once, identical order",
        (killed_at - start).as_secs_f64()
    ))
}

fn matchmaking_oracle() -> Outcome_ {
    let mut m = Membership::new();
    let a = m.register_org_with_id("hospA", "A", OrgKind::Hospital).unwrap();
    m.register_org_with_id("hospB", "B", OrgKind::Hospital).unwrap();
    let staff = m.enroll_identity(&a, Role::HospitalStaff, "s").unwrap().0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked_candidates = 0usize;
    for state_no in 0..1000 {
        let n = rng.gen_range(0..=1000);
        // Small attribute domains keep the candidate lists non-trivial.
        let organs = &ORGANS[..rng.gen_range(1..=ORGANS.len())];
        let bloods = &BLOODS[..rng.gen_range(1..=4)];
        let genders = &GENDERS[..rng.gen_range(1..=GENDERS.len())];
        let pick = |rng: &mut ChaCha8Rng| {
            (*organs.choose(rng).unwrap(), *bloods.choose(rng).unwrap(), *genders.choose(rng).unwrap())
        };
        let patient = pick(&mut rng);
        let mut writes = vec![];
        let row = |id: &str, kind_status: &str, hosp: &str, attrs: (&str, &str, &str), matched: &str| {
            json!({
                "ID": id, "firstName": "F", "lastName": "L", "age": 30, "phoneNumber": "1", "address": "a",
                "organRequired": attrs.0, "bloodgroup": attrs.1, "gender": attrs.2, "medhistory": "",
                "hospitalId": hosp, "match": matched, "status": kind_status,
            })
            .to_string()
            .into_bytes()
        };
        writes.push(KvWrite { key: "PAT_p".into(), value: Some(row("p", "waiting", "hospA", patient, "")) });
        let mut expected = Vec::new();
        for i in 0..n {
            let id = format!("d{i:04}");
            let attrs = pick(&mut rng);
            let available = rng.gen_bool(0.8);
            let hosp = if rng.gen_bool(0.5) { "hospA" } else { "hospB" };
            let (status, matched) = if available { ("available", "") } else { ("matched", "px") };
            writes.push(KvWrite { key: format!("DON_{id}"), value: Some(row(&id, status, hosp, attrs, matched)) });
            if available && attrs == patient {
                expected.push(id);
            }
        }
        expected.sort();
        let mut state = WorldState::new();
        state.apply_block(0, writes.into_iter().map(|w| (0, w)).collect()).unwrap();
        let sim = simulate(&DonationChaincode, &state, &m, &staff, "findMatch", &["p".to_string()])
            .map_err(|e| format!("state {state_no}: {e}"))?;
        let out: Value = serde_json::from_slice(&sim.payload).unwrap();
        let got: Vec<String> = out["candidates"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        ensure!(got == expected, "state {state_no}: got {} candidates, oracle {}", got.len(), expected.len());
        ensure!(sim.rwset.writes.is_empty(), "state {state_no}: findMatch wrote state");
        checked_candidates += expected.len();
    }
    Ok(format!("1000 states agree ({checked_candidates} candidates in total)"))
}

/// Independent recomputation of the report arithmetic.
fn oracle_metrics(obs: &[(f64, f64, bool)]) -> [f64; 6] {
    let mut issues: Vec<f64> = obs.iter().map(|o| o.0).collect();
    issues.sort_by(f64::total_cmp);
    let last_done = obs.iter().map(|o| o.1).fold(f64::MIN, f64::max);
    let window = last_done - issues[0];
    let send = obs.len() as f64 / (issues[issues.len() - 1] - issues[0]);
    let mut lat: Vec<f64> = obs.iter().filter(|o| o.2).map(|o| o.1 - o.0).collect();
    lat.sort_by(f64::total_cmp);
    let tput = lat.len() as f64 / window;
    if lat.is_empty() {
        return [window, send, tput, 0.0, 0.0, 0.0];
    }
    let avg = lat.iter().sum::<f64>() / lat.len() as f64;
    [window, send, tput, lat[0], lat[lat.len() - 1], avg]
}

/// Issuing threads for the open-loop runs.
const FIXED_RATE_WORKERS: u32 = 8;

/// Totals over several runs at one configured rate.
#[derive(Default, Clone, Copy)]
struct Pooled {
    issued: f64,
    success: f64,
    send_span_s: f64,
    window_s: f64,
    latency_sum_s: f64,
}

impl Pooled {
    fn add(&mut self, m: &organchain_bench::Metrics) {
        self.issued += m.issued as f64;
        self.success += m.success as f64;
        self.send_span_s += m.issued as f64 / m.actual_send_rate_tps;
        self.window_s += m.window_s;
        self.latency_sum_s += m.latency_avg_s * m.success as f64;
    }

    fn send_rate(&self) -> f64 {
        self.issued / self.send_span_s
    }

    fn throughput(&self) -> f64 {
        self.success / self.window_s
    }

    fn latency(&self) -> f64 {
        self.latency_sum_s / self.success
    }
}

fn bench_shape() -> Outcome_ {
    let (net, wallet) = Network::bootstrap(&Topology::sample(), None).unwrap();
    let staff = key_of(&net, &wallet, "hospA", Role::HospitalStaff);
    let target = NetworkTarget::new(net.clone(), DONATION_CHANNEL, staff).map_err(|e| e.to_string())?;
    let go = |w: WorkloadConfig| run(&w, &target).map_err(|e| e.to_string());

    // Warm-up round, not measured.
    go(WorkloadConfig::fixed_load("warm-up", Operation::CreateRecord, 100, 500).with_seed(0))?;

    // (a) identical fixed-load settings for both operations, interleaved and
    // pooled over a few runs each.
    let (mut create, mut read) = (Pooled::default(), Pooled::default());
    for round in 0..3u64 {
        let c = go(WorkloadConfig::fixed_load("create", Operation::CreateRecord, 100, 1000).with_seed(1 + round))?;
        let r = go(WorkloadConfig::fixed_load("read", Operation::ReadRecord, 100, 1000).with_seed(5 + round))?;
        ensure!(c.metrics.fail == 0 && r.metrics.fail == 0, "failures in fixed-load runs");
        create.add(&c.metrics);
        read.add(&r.metrics);
    }
    let (c_tps, r_tps) = (create.throughput(), read.throughput());
    ensure!(r_tps > c_tps, "(a) read {r_tps:.1} TPS does not exceed create {c_tps:.1} TPS");

    // (b) open-loop create runs past saturation. Each rate runs several
    // times in counterbalanced order (ABC CBA ...) so slow drifts in machine
    // speed hit every rate alike; per-rate figures pool all of its runs. A
    // closed-loop create run per repetition keeps the saturation reference
    // measured under the same conditions.
    let saturation = c_tps;
    const MULTS: [f64; 3] = [2.0, 4.0, 8.0];
    const REPEATS: usize = 20;
    let mut pooled = [Pooled::default(); 3];
    let mut seed = 100;
    for rep in 0..REPEATS {
        let c = go(WorkloadConfig::fixed_load("create", Operation::CreateRecord, 100, 1000).with_seed(50 + rep as u64))?;
        ensure!(c.metrics.fail == 0, "(b) failures in the saturation run");
        create.add(&c.metrics);
        let order: Vec<usize> = if rep % 2 == 0 { vec![0, 1, 2] } else { vec![2, 1, 0] };
        for i in order {
            seed += 1;
            let rate = saturation * MULTS[i];
            let mut w = WorkloadConfig::fixed_rate(&format!("rate-{}x", MULTS[i]), Operation::CreateRecord, rate, 1000)
                .with_seed(seed);
            w.workers = FIXED_RATE_WORKERS;
            let m = go(w)?.metrics;
            ensure!(m.fail == 0, "(b) {} failures at {rate:.0} TPS: {:?}", m.fail, m.fail_reasons);
            pooled[i].add(&m);
        }
    }
    net.shutdown();
    let reference = create.throughput();
    let summary: Vec<String> = pooled
        .iter()
        .zip(MULTS)
        .map(|(p, k)| format!("{k}x: send {:.0} tput {:.0} lat {:.3}s", p.send_rate(), p.throughput(), p.latency()))
        .collect();
    for (p, k) in pooled.iter().zip(MULTS) {
        ensure!(
            (p.throughput() - reference).abs() <= 0.25 * reference,
            "(b) throughput {:.1} at {k}x is outside ±25% of the saturation {reference:.1}; {}",
            p.throughput(),
            summary.join(", ")
        );
    }
    ensure!(
        pooled.windows(2).all(|w| w[0].latency() <= w[1].latency()),
        "(b) average latency decreased; {}",
        summary.join(", ")
    );
    let top_rate = saturation * MULTS[2];
    ensure!(
        pooled[2].send_rate() < top_rate,
        "(b) achieved send rate {:.0} reached the configured {top_rate:.0} TPS",
        pooled[2].send_rate()
    );

    // (c) report arithmetic against the oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for set in 0..100 {
        let n = rng.gen_range(2..500);
        let raw: Vec<(f64, f64, bool)> = (0..n)
            .map(|_| {
                let issued = rng.gen_range(0.0..60.0);
                (issued, issued + rng.gen_range(0.0..15.0), rng.gen_bool(0.9))
            })
            .collect();
        let obs: Vec<TxObservation> = raw
            .iter()
            .enumerate()
            .map(|(i, &(a, b, ok))| TxObservation {
                tx_id: i.to_string(),
                issued_at: Duration::from_secs_f64(a),
                completed_at: Duration::from_secs_f64(b),
                outcome: if ok { Outcome::Success } else { Outcome::Fail("x".into()) },
            })
            .collect();
        // Compare against the values the driver actually holds.
        let held: Vec<(f64, f64, bool)> =
            obs.iter().map(|o| (o.issued_at.as_secs_f64(), o.completed_at.as_secs_f64(), o.outcome == Outcome::Success)).collect();
        let m = aggregate(&obs).map_err(|e| e.to_string())?;
        let want = oracle_metrics(&held);
        let got = [m.window_s, m.actual_send_rate_tps, m.throughput_tps, m.latency_min_s, m.latency_max_s, m.latency_avg_s];
        for (g, w) in got.iter().zip(want) {
            let err = (g - w).abs() / w.abs().max(1.0);
            worst = worst.max(err);
            ensure!(err <= 1e-9, "(c) set {set}: {got:?} vs {want:?}");
        }
        ensure!(m.issued == n as u64 && m.success + m.fail == m.issued, "(c) set {set}: counts");
    }
    Ok(format!(
        "read {r_tps:.0} > create {c_tps:.0} TPS; saturation {reference:.0} TPS; {}; aggregate worst rel err {worst:.1e}",
        summary.join(", ")
    ))
}

fn action_of(method: &str) -> Action {
    organchain_core::donation::METHODS.iter().find(|(m, _, _)| *m == method).unwrap().1
}

fn api_contract() -> Outcome_ {
    let env = common::start(&common::topology(20), None, GatewayConfig::default());
    let staff_a = env.key("hospA", Role::HospitalStaff);
    // A separate account for fixtures; logging in again would revoke the caller's session.
    let seed = env.client(&env.enroll("hospA", Role::HospitalStaff, "fixtures", None));
    let patient_key = env.enroll("hospA", Role::Patient, "own", Some("own"));
    let callers: Vec<(&str, SigningKey)> = vec![
        ("staff-hospA", staff_a.clone()),
        ("staff-hospB", env.key("hospB", Role::HospitalStaff)),
        ("administrator", env.key("admin", Role::Administrator)),
        ("auditor", env.key("gov", Role::GovernmentAuditor)),
        ("transporter", env.key("transport", Role::Transporter)),
        ("patient", patient_key),
    ];
    let mut serial = 0;
    let mut fresh = |kind: &str| {
        serial += 1;
        format!("{kind}{serial}")
    };
    seed.post("/patients", &serde_json::from_str(&record("own", "kidney", "o+", "m")).unwrap()).unwrap();

    let mut deviations = Vec::new();
    let mut calls = 0;
    for (label, key) in &callers {
        let client = env.client(key);
        let identity = env.net.membership().identity(key.identity_id()).unwrap().clone();
        for route in ROUTES.iter() {
            // Each call gets its own records so that allowed calls can succeed.
            let (args, resource): (Vec<String>, Resource) = match route.method {
                "addPatient" => (vec![record(&fresh("np"), "liver", "a+", "f")], Resource::owned_by(&identity.org_id)),
                "addDonor" => (vec![record(&fresh("nd"), "liver", "a+", "f")], Resource::owned_by(&identity.org_id)),
                "getAllPatients" | "getAllDonors" => (vec![], Resource::any()),
                "getMyPatients" | "getMyDonors" => (vec!["hospA".into()], Resource::owned_by("hospA")),
                "getPatient" => (vec!["own".into()], Resource::record("hospA", "own")),
                "getDonor" | "deleteDonor" => {
                    let id = fresh("d");
                    seed.post("/donors", &serde_json::from_str(&record(&id, "heart", "b+", "m")).unwrap()).unwrap();
                    (vec![id.clone()], Resource::record("hospA", &id))
                }
                "deletePatient" | "findMatch" => {
                    let id = fresh("p");
                    seed.post("/patients", &serde_json::from_str(&record(&id, "heart", "b+", "m")).unwrap()).unwrap();
                    (vec![id.clone()], Resource::record("hospA", &id))
                }
                "selectMatch" => {
                    let (p, d) = (fresh("sp"), fresh("sd"));
                    seed.post("/patients", &serde_json::from_str(&record(&p, "lung", "o-", "o")).unwrap()).unwrap();
                    seed.post("/donors", &serde_json::from_str(&record(&d, "lung", "o-", "o")).unwrap()).unwrap();
                    (vec![p.clone(), d], Resource::record("hospA", &p))
                }
                other => return Err(format!("no fixture for {other}")),
            };
            let expected = env.net.membership().authorize(key.identity_id(), action_of(route.method), &resource).unwrap();
            let req = request_for(route.method, &args).map_err(|e| e.to_string())?;
            let (got, body) = match client.request(&req) {
                Ok(r) => (r.status, Value::Null),
                Err(ClientError::Status { status, body }) => (status, body),
                Err(e) => return Err(e.to_string()),
            };
            calls += 1;
            let ok = match expected {
                Decision::Allow => (200..300).contains(&got),
                Decision::Deny => got == 403,
            };
            if !ok {
                deviations.push(format!("{label} {} {} -> {got} {body} (expected {expected:?})", route.http, route.path));
            }
        }
        // Patient status view: own record only for patients, hospital scope otherwise.
        let status = match client.get("/patients/own/status") {
            Ok(r) => r.status,
            Err(ClientError::Status { status, .. }) => status,
            Err(e) => return Err(e.to_string()),
        };
        let allowed = env.net.membership().authorize(key.identity_id(), Action::GetPatient, &Resource::record("hospA", "own")).unwrap();
        calls += 1;
        if (allowed == Decision::Allow) != (status == 200) || (allowed == Decision::Deny && status != 403) {
            deviations.push(format!("{label} GET /patients/own/status -> {status}"));
        }
    }
    env.stop();
    ensure!(deviations.is_empty(), "{} deviations: {}", deviations.len(), deviations.join("; "));
    Ok(format!("{calls} route x role calls match the authorization matrix"))
}

fn main() {
    // Honour `cargo test <filter>` the way the default harness would.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<(&str, u64, fn() -> Outcome_)> = vec![
        ("tamper-detection", 30, tamper_detection),
        ("mvcc-exclusivity", 60, mvcc_exclusivity),
        ("replication-determinism", 120, replication_determinism),
        ("raft-resilience", 120, raft_resilience),
        ("matchmaking-oracle", 120, matchmaking_oracle),
        ("benchmark-shape", 600, bench_shape),
        ("api-contract", 300, api_contract),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, limit, f) in criteria {
        if filter.as_deref().is_some_and(|flt| !name.contains(flt)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = started.elapsed();
        let result = match result {
            Ok(_) if took > Duration::from_secs(limit) => Err(format!("took {took:.1?}, limit {limit}s")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {name} ({:.1}s): {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.1}s): {why}", took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
