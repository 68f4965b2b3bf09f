//! Cost reports against the all-on-chain baseline, and amortisation of the
//! channel's heavier deployment over repeated cases.

use std::collections::BTreeMap;
use std::sync::Arc;

use pchan_core::fixtures::Case;
use pchan_core::ledger::{CostRecord, Ledger, TxKind};
use pchan_core::machine::{ProcessStateMachine, TaskRequest};
use pchan_core::wire::{derive_signing_key, Address, ContractId};
use serde::{Deserialize, Serialize};

use crate::scenario::{run_scenario, ScenarioKind, ScenarioSpec};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCost {
    pub deploy_cost: u64,
    pub run_cost: u64,
    pub records: Vec<CostRecord>,
}

/// Deploys the baseline contract for `machine` on a fresh ledger and runs
/// `events` as one transaction each.
pub fn baseline_cost(machine: &Arc<ProcessStateMachine>, events: &[TaskRequest], chain_id: u64) -> Result<BaselineCost, HarnessError> {
    let mut ledger = Ledger::new(chain_id);
    let binding: BTreeMap<String, Address> = machine
        .role_ids
        .iter()
        .map(|r| (r.clone(), ledger.register_account(derive_signing_key(r.as_bytes()).verifying_key().to_bytes())))
        .collect();
    let id = ledger
        .deploy_baseline(machine.clone(), binding.clone())
        .map_err(|e| HarnessError::Scenario(format!("baseline deploy: {e}")))?;
    for req in events {
        let sender = binding
            .get(&req.requester_role)
            .ok_or_else(|| HarnessError::Scenario(format!("no role {}", req.requester_role)))?;
        ledger
            .on_chain_step(&id, req, *sender)
            .map_err(|e| HarnessError::Invariant(format!("baseline refused {}: {e}", req.task_id)))?;
    }
    let records = ledger.costs_for(&id);
    let (deploy, run): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.tx_kind == TxKind::Deploy);
    Ok(BaselineCost {
        deploy_cost: deploy.iter().map(|r| r.cost_units).sum(),
        run_cost: run.iter().map(|r| r.cost_units).sum(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub case: Case,
    pub variant: usize,
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Accepted channel-contract transactions, deployment included.
    pub records: Vec<CostRecord>,
    pub totals: BTreeMap<TxKind, u64>,
    pub deploy_cost: u64,
    /// Everything but the deployment.
    pub run_cost: u64,
    pub baseline: BaselineCost,
    /// Baseline run cost minus channel run cost; negative when the channel
    /// spent more.
    pub savings: i64,
}

impl CostReport {
    pub fn new(
        spec: &ScenarioSpec,
        ledger: &Ledger,
        contract: &ContractId,
        machine: &Arc<ProcessStateMachine>,
        events: &[TaskRequest],
    ) -> Result<Self, HarnessError> {
        let records = ledger.costs_for(contract);
        let mut totals = BTreeMap::new();
        for r in &records {
            *totals.entry(r.tx_kind).or_insert(0) += r.cost_units;
        }
        let deploy_cost = totals.get(&TxKind::Deploy).copied().unwrap_or(0);
        let run_cost = records.iter().map(|r| r.cost_units).sum::<u64>() - deploy_cost;
        let baseline = baseline_cost(machine, events, ledger.chain_id)?;
        Ok(CostReport {
            case: spec.case,
            variant: spec.variant,
            kind: spec.kind,
            seed: spec.seed,
            savings: baseline.run_cost as i64 - run_cost as i64,
            records,
            totals,
            deploy_cost,
            run_cost,
            baseline,
        })
    }

    pub fn total(&self) -> u64 {
        self.totals.values().sum()
    }
}

/// Mean per-run costs of one case over its variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseCosts {
    pub case: Case,
    pub channel_deploy: u64,
    pub baseline_deploy: u64,
    pub baseline_run: f64,
    pub best: f64,
    pub bad: f64,
    pub worst: f64,
    /// Close transaction cost of the best case; equal for every variant.
    pub close: u64,
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len().max(1) as f64
}

/// Measures best, bad and worst case runs for every variant of `case`;
/// bad and worst over `seeds` seeds each.
pub fn measure_case(case: Case, seeds: u64, window: u64) -> Result<CaseCosts, HarnessError> {
    let (mut best, mut bad, mut worst, mut base) = (vec![], vec![], vec![], vec![]);
    let (mut deploy, mut baseline_deploy, mut close) = (0, 0, None);
    for variant in 0..case.variant_count() {
        let run = run_scenario(&ScenarioSpec::new(case, variant, ScenarioKind::Best).window(window))?;
        let c = run.report.totals.get(&TxKind::Close).copied().unwrap_or(0);
        if close.is_some_and(|prev| prev != c) {
            return Err(HarnessError::Invariant(format!("{case}: close costs differ between variants")));
        }
        close = Some(c);
        deploy = run.report.deploy_cost;
        baseline_deploy = run.report.baseline.deploy_cost;
        best.push(run.report.run_cost);
        base.push(run.report.baseline.run_cost);
        for seed in 0..seeds.max(1) {
            let spec = ScenarioSpec::new(case, variant, ScenarioKind::Bad).seed(seed).window(window);
            bad.push(run_scenario(&spec)?.report.run_cost);
            let spec = ScenarioSpec { kind: ScenarioKind::Worst, ..spec };
            worst.push(run_scenario(&spec)?.report.run_cost);
        }
    }
    Ok(CaseCosts {
        case,
        channel_deploy: deploy,
        baseline_deploy,
        baseline_run: mean(&base),
        best: mean(&best),
        bad: mean(&bad),
        worst: mean(&worst),
        close: close.unwrap_or(0),
    })
}

/// Share of runs ending in each dispute kind; the rest are best cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub bad: f64,
    pub worst: f64,
}

impl Mix {
    pub const NONE: Mix = Mix { bad: 0.0, worst: 0.0 };

    /// `rate` of all runs disputed, split equally between bad and worst.
    pub fn disputes(rate: f64) -> Self {
        Mix { bad: rate / 2.0, worst: rate / 2.0 }
    }

    pub fn rate(&self) -> f64 {
        self.bad + self.worst
    }

    pub fn expected_run(&self, c: &CaseCosts) -> f64 {
        (1.0 - self.rate()) * c.best + self.bad * c.bad + self.worst * c.worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub case: Case,
    pub mix: Mix,
    pub per_run_savings: f64,
    /// First run count at which the channel has cost no more than the
    /// baseline; `None` if it never gets there.
    pub runs: Option<u64>,
    /// Cumulative savings after 1, 2, ... runs, deployments included.
    pub cumulative_savings: Vec<f64>,
}

pub fn break_even(c: &CaseCosts, mix: Mix, horizon: u64) -> BreakEven {
    let per_run = c.baseline_run - mix.expected_run(c);
    let head_start = c.baseline_deploy as f64 - c.channel_deploy as f64;
    let at = |k: u64| head_start + k as f64 * per_run;
    let runs = if at(1) >= 0.0 {
        Some(1)
    } else if per_run > 0.0 {
        Some(((-head_start / per_run).ceil() as u64).max(1))
    } else {
        None
    };
    BreakEven {
        case: c.case,
        mix,
        per_run_savings: per_run,
        runs,
        cumulative_savings: (1..=horizon).map(at).collect(),
    }
}
