use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_organchain");

struct Running {
    child: Child,
    summary: Value,
}

impl Running {
    fn url(&self) -> String {
        self.summary["gateway"].as_str().unwrap().to_string()
    }

    /// Key file of the first non-peer identity with this role.
    fn key(&self, role: &str, org: &str) -> PathBuf {
        let id = self.summary["identities"]
            .as_array()
            .unwrap()
            .iter()
            .find(|i| i["role"] == role && i["org"] == org)
            .unwrap()["id"]
            .as_str()
            .unwrap()
            .to_string();
        Path::new(self.summary["wallet"].as_str().unwrap()).join(format!("{id}.json"))
    }
}

fn network_up(dir: &Path, topology: &Path) -> Running {
    let mut child = Command::new(BIN)
        .args(["--topology", topology.to_str().unwrap(), "network", "up", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let summary: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"));
    Running { child, summary }
}

fn cli(url: &str, key: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(["--gateway-url", url, "--identity", key.to_str().unwrap(), "--output", "json"])
        .args(args)
        .output()
        .unwrap()
}

fn json_out(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn fast_topology(dir: &Path) -> PathBuf {
    let mut t = organchain_core::network::Topology::sample();
    t.orderer.batch_timeout = std::time::Duration::from_millis(20);
    let path = dir.join("topology.yaml");
    std::fs::write(&path, serde_json::to_string(&t).unwrap()).unwrap();
    path
}

#[test]
fn operator_workflow_over_the_gateway() {
    let tmp = tempfile::tempdir().unwrap();
    let topo = fast_topology(tmp.path());
    let net = network_up(&tmp.path().join("data"), &topo);
    let channels = net.summary["channels"].as_array().unwrap();
    assert_eq!(channels[0]["name"], "donation-system");
    assert_eq!(channels[0]["peers"].as_array().unwrap().len(), 6);
    let url = net.url();
    let staff = net.key("HospitalStaff", "hospA");
    let admin = net.key("Administrator", "admin");

    let body = tmp.path().join("p1.json");
    std::fs::write(
        &body,
        r#"{"ID":"p1","firstName":"A","lastName":"B","age":30,"phoneNumber":"1","address":"x","organRequired":"kidney","bloodgroup":"o+","gender":"f","medhistory":"-"}"#,
    )
    .unwrap();
    let inv = json_out(&cli(&url, &staff, &["invoke", "donation", "addPatient", "--json", body.to_str().unwrap()]));
    assert_eq!(inv["flag"], "Valid");
    assert!(inv["tx_id"].as_str().is_some());

    let q = json_out(&cli(&url, &staff, &["query", "donation", "getPatient", "p1"]));
    assert_eq!(q["ID"], "p1");

    // A contract error is a runtime failure with a JSON error line.
    let dup = cli(&url, &staff, &["invoke", "donation", "addPatient", "--json", body.to_str().unwrap()]);
    assert_eq!(dup.status.code(), Some(1));
    let err: Value = serde_json::from_slice(dup.stderr.trim_ascii()).unwrap();
    assert_eq!((err["error"].as_str(), err["status"].as_u64()), (Some("DuplicateID"), Some(409)));

    let peers: Vec<String> =
        channels[0]["peers"].as_array().unwrap().iter().map(|p| p.as_str().unwrap().to_string()).collect();
    let mut dumps = Vec::new();
    for p in &peers[..2] {
        let file = tmp.path().join(format!("{p}.json"));
        json_out(&cli(&url, &admin, &["state", "export", "--peer", p, "--out", file.to_str().unwrap()]));
        dumps.push(std::fs::read(&file).unwrap());
    }
    assert_eq!(dumps[0], dumps[1]);
    assert!(String::from_utf8_lossy(&dumps[0]).contains("PAT_p1"));

    assert_eq!(json_out(&cli(&url, &admin, &["chain", "verify"]))["ok"], true);
    let created = json_out(&cli(
        &url,
        &admin,
        &["channel", "create", "--name", "hospA-internal", "--members", "hospA", "--policy", "hospA"],
    ));
    assert_eq!(created["channel"], "hospA-internal");
    json_out(&cli(&url, &admin, &["chaincode", "deploy", "--channel", "hospA-internal", "--name", "donation"]));
    let denied = cli(&url, &staff, &["channel", "create", "--name", "x", "--members", "hospA", "--policy", "hospA"]);
    assert_eq!(denied.status.code(), Some(1));

    json_out(&cli(&url, &admin, &["network", "down"]));
    let mut child = net.child;
    assert!(child.wait().unwrap().success());
}

#[test]
fn bench_run_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let topo = fast_topology(tmp.path());
    let workloads = tmp.path().join("w.yaml");
    std::fs::write(
        &workloads,
        "rounds:\n  - {name: create, operation: CreateRecord, mode: FixedLoad, load: 5, total_tx: 30, seed: 1}\n  - {name: read, operation: ReadRecord, mode: FixedRate, rate_tps: 200, total_tx: 30, seed: 2}\n",
    )
    .unwrap();
    let out = tmp.path().join("reports.json");
    let run = Command::new(BIN)
        .args(["--topology", topo.to_str().unwrap(), "bench", "run", "--config"])
        .arg(&workloads)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = String::from_utf8(run.stdout).unwrap();
    assert!(table.contains("Throughput (TPS)"));
    let reports: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert_eq!(reports[0]["success"], 30);

    let report = Command::new(BIN).args(["bench", "report"]).arg(&out).output().unwrap();
    assert!(report.status.success());
    let rendered = String::from_utf8(report.stdout).unwrap();
    assert!(rendered.contains("create") && rendered.contains("read"));

    let bad = Command::new(BIN).args(["bench", "run", "--config", "/nonexistent.yaml"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
