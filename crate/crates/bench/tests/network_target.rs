use std::time::Duration;

use organchain_bench::{run, NetworkTarget, Operation, WorkloadConfig};
use organchain_core::identity::Role;
use organchain_core::network::{Network, Topology, DONATION_CHANNEL};

fn target() -> NetworkTarget {
    let mut topo = Topology::sample();
    topo.orderer.batch_timeout = Duration::from_millis(20);
    let (net, wallet) = Network::bootstrap(&topo, None).unwrap();
    let id = net
        .membership()
        .identities()
        .find(|i| i.org_id == "hospA" && i.role == Role::HospitalStaff)
        .unwrap()
        .identity_id
        .clone();
    NetworkTarget::new(net, DONATION_CHANNEL, wallet.get(&id).unwrap().clone()).unwrap()
}

#[test]
fn creates_and_reads_against_the_network() {
    let t = target();
    let create = run(&WorkloadConfig::fixed_load("create", Operation::CreateRecord, 10, 60).with_seed(1), &t).unwrap();
    assert_eq!((create.metrics.success, create.metrics.fail), (60, 0));
    assert!(create.max_in_flight <= 10);
    let read = run(&WorkloadConfig::fixed_load("read", Operation::ReadRecord, 10, 60).with_seed(2), &t).unwrap();
    assert_eq!((read.metrics.success, read.metrics.fail), (60, 0));
    let rate = run(&WorkloadConfig::fixed_rate("rate", Operation::CreateRecord, 50.0, 40).with_seed(3), &t).unwrap();
    assert_eq!(rate.metrics.success, 40);
    assert!(rate.metrics.throughput_tps <= rate.metrics.actual_send_rate_tps);
}

#[test]
fn repeating_a_seed_fails_creates_as_duplicates() {
    let t = target();
    let w = WorkloadConfig::fixed_load("create", Operation::CreateRecord, 5, 10).with_seed(7);
    run(&w, &t).unwrap();
    let again = run(&w, &t).unwrap();
    assert_eq!(again.metrics.fail, 10);
    assert_eq!(again.metrics.fail_reasons["DuplicateID"], 10);
}
