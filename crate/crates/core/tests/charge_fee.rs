//! End-to-end demo: charging conference fees against a distributed
//! account table, with ADD-merged write-backs.

use std::collections::BTreeMap;
use std::sync::Arc;

use tdorch_core::bsp::{Cluster, ClusterConfig};
use tdorch_core::orchestrate::{
    orchestrate, range_owner, ExecResult, OrchMachine, OrchSpec, StageOptions,
};
use tdorch_core::task::TaskContext;
use tdorch_core::wire::{Wire, WireResult};

#[derive(Debug, Clone, PartialEq)]
struct Account {
    conf_name: String,
    deposit: i64,
}

impl Wire for Account {
    fn put(&self, out: &mut Vec<u8>) {
        self.conf_name.put(out);
        self.deposit.put(out);
    }
    fn take(buf: &mut &[u8]) -> WireResult<Self> {
        Ok(Self {
            conf_name: String::take(buf)?,
            deposit: i64::take(buf)?,
        })
    }
}

fn charge_fee_spec() -> OrchSpec<Account, i64, ()> {
    OrchSpec {
        // f: charge the fee only for the matching conference.
        exec: Arc::new(|task: &TaskContext, data: &[Account]| {
            let fee = i64::from_bytes(&task.payload).unwrap();
            let charged = if data[0].conf_name == "SYSCONF" { fee } else { 0 };
            ExecResult {
                values: vec![charged],
                output: None,
            }
        }),
        get: Arc::new(|shard: &BTreeMap<u64, Account>, addr| shard[&addr].clone()),
        // wb: deduct the aggregated fees once.
        write_back: Arc::new(|shard, addr, aggr: i64| {
            shard.get_mut(&addr).unwrap().deposit -= aggr;
        }),
        combine: Arc::new(|a, b| a + b),
        chunk_size: 8,
        fanout: None,
    }
}

#[test]
fn two_fees_one_account() {
    let p = 2;
    let mut cluster = Cluster::new(ClusterConfig::new(p, 7), |m| OrchMachine::new(7, m));
    cluster.machine_mut(0).shard.insert(
        0,
        Account {
            conf_name: "SYSCONF".into(),
            deposit: 100,
        },
    );
    let owner = range_owner(2, p);
    let tasks = vec![
        vec![TaskContext::new(vec![0], 30i64.to_bytes(), 0, 0).unwrap()],
        vec![TaskContext::new(vec![0], 20i64.to_bytes(), 1, 0).unwrap()],
    ];
    let spec = charge_fee_spec();
    let outcome = orchestrate(&mut cluster, &owner, tasks, &spec, &StageOptions::default()).unwrap();
    assert_eq!(outcome.stats.executed_tasks, 2);
    assert_eq!(cluster.machine(0).shard[&0].deposit, 50);
}

#[test]
fn other_conference_is_not_charged() {
    let p = 4;
    let mut cluster = Cluster::new(ClusterConfig::new(p, 9), |m| OrchMachine::new(9, m));
    for addr in 0..4u64 {
        let owner_machine = (addr * p as u64 / 4) as usize;
        cluster.machine_mut(owner_machine).shard.insert(
            addr,
            Account {
                conf_name: if addr % 2 == 0 { "SYSCONF" } else { "OTHER" }.into(),
                deposit: 1000,
            },
        );
    }
    let owner = range_owner(4, p);
    let tasks: Vec<Vec<TaskContext>> = (0..p)
        .map(|m| {
            vec![TaskContext::new(vec![m as u64], 25i64.to_bytes(), m as u32, 0).unwrap()]
        })
        .collect();
    let spec = charge_fee_spec();
    orchestrate(&mut cluster, &owner, tasks, &spec, &StageOptions::default()).unwrap();
    for addr in 0..4u64 {
        let owner_machine = (addr * p as u64 / 4) as usize;
        let account = &cluster.machine(owner_machine).shard[&addr];
        let expect = if addr % 2 == 0 { 975 } else { 1000 };
        assert_eq!(account.deposit, expect, "addr {addr}");
    }
}
