#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use organchain_access::{spawn, Gateway, GatewayClient, GatewayConfig, RunningGateway};
use organchain_core::identity::{Role, SigningKey};
use organchain_core::network::{Network, Topology, Wallet};
use serde_json::{json, Value};

pub struct Env {
    pub net: Arc<Network>,
    pub wallet: Wallet,
    pub gateway: RunningGateway,
}

pub fn topology(batch_timeout_ms: u64) -> Topology {
    let mut t = Topology::sample();
    t.orderer.batch_timeout = Duration::from_millis(batch_timeout_ms);
    t
}

pub fn start(topo: &Topology, data_dir: Option<&Path>, config: GatewayConfig) -> Env {
    let (net, wallet) = Network::bootstrap(topo, data_dir).unwrap();
    let gw = Gateway::new(net.clone(), wallet.clone(), config).unwrap();
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let gateway = spawn(gw, addr).unwrap();
    Env { net, wallet, gateway }
}

pub fn up() -> Env {
    start(&topology(20), None, GatewayConfig::default())
}

impl Env {
    pub fn key(&self, org: &str, role: Role) -> SigningKey {
        let id = {
            let m = self.net.membership();
            let id = m.identities().find(|i| i.org_id == org && i.role == role).unwrap().identity_id.clone();
            id
        };
        self.wallet.get(&id).unwrap().clone()
    }

    /// Enrolls a new identity and gives the gateway its key.
    pub fn enroll(&self, org: &str, role: Role, name: &str, subject: Option<&str>) -> SigningKey {
        let (_, key) = self.net.enroll(org, role, name, subject.map(str::to_string)).unwrap();
        self.gateway.gateway().add_key(key.clone());
        key
    }

    pub fn client(&self, key: &SigningKey) -> GatewayClient {
        let mut c = GatewayClient::new(&self.gateway.url()).unwrap();
        c.login(key).unwrap();
        c
    }

    pub fn stop(self) {
        let Env { net, gateway, .. } = self;
        let gw = gateway.gateway().clone();
        gateway.stop();
        gw.notices().shutdown();
        net.shutdown();
    }
}

pub fn record(id: &str, organ: &str, blood: &str) -> Value {
    json!({
        "ID": id, "firstName": "A", "lastName": "B", "age": 40, "phoneNumber": "555",
        "address": "1 Main St", "organRequired": organ, "bloodgroup": blood, "gender": "m", "medhistory": "-"
    })
}
