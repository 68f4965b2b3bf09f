//! The two evaluation cases and their conforming variants.
//!
//! Both topologies are reconstructions from the published case descriptions,
//! not copies of the original diagrams.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::machine::{compile_model, CompileOptions, Compiled, TaskRequest};
use crate::model::{parse_choreography, ChoreographyModel};

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.bpmn");
const INCIDENT_MANAGEMENT: &str = include_str!("../fixtures/incident_management.bpmn");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    SupplyChain,
    IncidentManagement,
}

impl Case {
    pub const ALL: [Case; 2] = [Case::SupplyChain, Case::IncidentManagement];

    pub fn name(self) -> &'static str {
        match self {
            Case::SupplyChain => "supply-chain",
            Case::IncidentManagement => "incident-management",
        }
    }

    pub fn xml(self) -> &'static str {
        match self {
            Case::SupplyChain => SUPPLY_CHAIN,
            Case::IncidentManagement => INCIDENT_MANAGEMENT,
        }
    }

    pub fn model(self) -> ChoreographyModel {
        parse_choreography(self.xml().as_bytes()).expect("shipped fixture parses")
    }

    pub fn compile(self) -> Compiled {
        compile_model(&self.model(), CompileOptions::default()).expect("shipped fixture compiles")
    }

    /// Task ids of every conforming variant replayed in the evaluation.
    pub fn variant_tasks(self) -> Vec<Vec<&'static str>> {
        match self {
            Case::SupplyChain => vec![
                vec![
                    "order_goods",
                    "place_order",
                    "forward_order",
                    "order_transport",
                    "request_details",
                    "provide_details",
                    "deliver_supplies",
                    "report_delivery",
                ],
                vec![
                    "order_goods",
                    "place_order",
                    "order_transport",
                    "forward_order",
                    "request_details",
                    "provide_details",
                    "request_details",
                    "provide_details",
                    "deliver_supplies",
                    "report_delivery",
                ],
            ],
            Case::IncidentManagement => vec![
                vec!["report_problem", "request_details", "provide_details", "explain_solution", "confirm_resolution"],
                vec!["report_problem", "open_ticket", "resolve_ticket", "explain_solution", "confirm_resolution"],
                vec![
                    "report_problem",
                    "open_ticket",
                    "escalate_ticket",
                    "return_fix",
                    "explain_solution",
                    "confirm_resolution",
                ],
                vec![
                    "report_problem",
                    "open_ticket",
                    "escalate_ticket",
                    "ask_developer",
                    "provide_patch",
                    "explain_solution",
                    "confirm_resolution",
                ],
            ],
        }
    }

    pub fn variant_count(self) -> usize {
        self.variant_tasks().len()
    }

    /// Variant as a request list, each event addressed by its initiator.
    pub fn variant(self, index: usize) -> Option<Vec<TaskRequest>> {
        let model = self.model();
        let tasks = self.variant_tasks().into_iter().nth(index)?;
        Some(
            tasks
                .into_iter()
                .map(|id| {
                    let t = model.task(id).expect("variant names a fixture task");
                    TaskRequest::new(id, t.initiator.clone())
                })
                .collect(),
        )
    }

    pub fn variants(self) -> Vec<Vec<TaskRequest>> {
        (0..self.variant_count()).filter_map(|i| self.variant(i)).collect()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "supply-chain" | "supplyChain" | "supply_chain" => Ok(Case::SupplyChain),
            "incident-management" | "incidentMgmt" | "incident_management" => Ok(Case::IncidentManagement),
            other => Err(format!("unknown case {other}")),
        }
    }
}
