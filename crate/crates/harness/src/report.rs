//! Whole-evaluation summary: per-case costs and break-even under the usual
//! dispute rates, as a text table, JSON, or a CSV savings series.

use std::fmt::Write as _;
use std::io;

use pchan_core::fixtures::Case;
use serde::{Deserialize, Serialize};

use crate::cost::{break_even, measure_case, BreakEven, CaseCosts, Mix};
use crate::HarnessError;

pub const DISPUTE_RATES: [f64; 3] = [0.0, 0.05, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub cases: Vec<CaseCosts>,
    pub break_even: Vec<BreakEven>,
}

pub fn evaluate(seeds: u64, window: u64, horizon: u64) -> Result<Evaluation, HarnessError> {
    let cases = Case::ALL.iter().map(|&c| measure_case(c, seeds, window)).collect::<Result<Vec<_>, _>>()?;
    let break_even = cases
        .iter()
        .flat_map(|c| DISPUTE_RATES.iter().map(move |&r| break_even(c, Mix::disputes(r), horizon)))
        .collect();
    Ok(Evaluation { cases, break_even })
}

impl Evaluation {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "case", "deploy", "base dep.", "baseline", "best", "bad", "worst", "close"
        );
        for c in &self.cases {
            let _ = writeln!(
                s,
                "{:<20} {:>10} {:>10} {:>10.0} {:>10.0} {:>10.0} {:>10.0} {:>10}",
                c.case.name(),
                c.channel_deploy,
                c.baseline_deploy,
                c.baseline_run,
                c.best,
                c.bad,
                c.worst,
                c.close
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<20} {:>8} {:>14} {:>12}", "case", "disputes", "saved per run", "break-even");
        for b in &self.break_even {
            let runs = b.runs.map_or("never".to_string(), |r| r.to_string());
            let _ = writeln!(
                s,
                "{:<20} {:>7.0}% {:>14.0} {:>12}",
                b.case.name(),
                b.mix.rate() * 100.0,
                b.per_run_savings,
                runs
            );
        }
        s
    }

    pub fn structured(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation serialises")
    }

    /// `case,dispute_rate,runs,cumulative_savings` rows, one per run count.
    pub fn write_series<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["case", "dispute_rate", "runs", "cumulative_savings"])?;
        for b in &self.break_even {
            for (k, v) in b.cumulative_savings.iter().enumerate() {
                out.write_record([b.case.name().to_string(), b.mix.rate().to_string(), (k + 1).to_string(), format!("{v:.1}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
