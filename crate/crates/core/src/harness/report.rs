use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::Family;
use super::pipeline::{create_dir, write_rows, Manifest, ResultTree};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_vs_restarts, lower_median, perturbation_at_budget, query_efficiency_summary,
    FailurePolicy, TraceTable,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRow {
    pub attack: String,
    pub restarts: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgdRow {
    pub attack: String,
    pub model: String,
    pub inputs: usize,
    pub accuracy_first: f64,
    pub accuracy_final: f64,
    pub restarts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwRow {
    pub attack: String,
    pub model: String,
    pub inputs: usize,
    pub successes: usize,
    /// Mean over successful inputs of the smallest ℓ2 perturbation found.
    pub mean_perturbation: Option<f64>,
    pub median_perturbation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub attack: String,
    pub model: String,
    pub inputs: usize,
    pub success_rate: f64,
    pub average_queries: Option<f64>,
    pub median_queries: Option<f64>,
    pub mean_perturbation: Option<f64>,
    pub median_perturbation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRow {
    pub attack: String,
    pub model: String,
    pub budget: usize,
    pub median_perturbation: f64,
    pub beyond_horizon: bool,
}

/// Summary tables rebuilt from the traces on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub restarts: Vec<RestartRow>,
    pub pgd: Vec<PgdRow>,
    pub cw: Vec<CwRow>,
    pub simba: Vec<QueryRow>,
    pub rgf: Vec<QueryRow>,
    pub boundary: Vec<BoundaryRow>,
    /// Attacks listed in the manifest whose trace file is absent.
    pub missing: Vec<String>,
}

impl Report {
    pub fn query_row(&self, attack: &str) -> Option<&QueryRow> {
        self.simba
            .iter()
            .chain(&self.rgf)
            .find(|r| r.attack == attack)
    }

    pub fn restart_curve(&self, attack: &str) -> Vec<f64> {
        self.restarts
            .iter()
            .filter(|r| r.attack == attack)
            .map(|r| r.accuracy)
            .collect()
    }

    pub fn boundary_curve(&self, attack: &str) -> Vec<(usize, f64)> {
        self.boundary
            .iter()
            .filter(|r| r.attack == attack)
            .map(|r| (r.budget, r.median_perturbation))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        if !self.pgd.is_empty() {
            s.push_str("PGD (robust accuracy)\n");
            for r in &self.pgd {
                let _ = writeln!(
                    s,
                    "  {:<24} {:<8} n={:<4} first={:.4} after {}={:.4}",
                    r.attack, r.model, r.inputs, r.accuracy_first, r.restarts, r.accuracy_final
                );
            }
        }
        if !self.cw.is_empty() {
            s.push_str("C&W (mean l2 of successful inputs)\n");
            for r in &self.cw {
                let _ = writeln!(
                    s,
                    "  {:<24} {:<8} n={:<4} success={:<4} mean={} median={}",
                    r.attack,
                    r.model,
                    r.inputs,
                    r.successes,
                    opt(r.mean_perturbation),
                    opt(r.median_perturbation)
                );
            }
        }
        for (title, rows) in [("SimBA", &self.simba), ("RGF", &self.rgf)] {
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(s, "{title} (queries)");
            for r in rows {
                let _ = writeln!(
                    s,
                    "  {:<24} {:<8} n={:<4} success={:.4} avg={} median={} l2 mean={} median={}",
                    r.attack,
                    r.model,
                    r.inputs,
                    r.success_rate,
                    opt(r.average_queries),
                    opt(r.median_queries),
                    opt(r.mean_perturbation),
                    opt(r.median_perturbation)
                );
            }
        }
        if !self.boundary.is_empty() {
            s.push_str("Boundary (median l2 by queries)\n");
            for r in &self.boundary {
                let _ = writeln!(
                    s,
                    "  {:<24} {:<8} {:>6}: {:.4}{}",
                    r.attack,
                    r.model,
                    r.budget,
                    r.median_perturbation,
                    if r.beyond_horizon { " *" } else { "" }
                );
            }
            if self.boundary.iter().any(|r| r.beyond_horizon) {
                s.push_str("  * some traces end before this budget; their last distance is used\n");
            }
        }
        for m in &self.missing {
            let _ = writeln!(s, "MISSING trace for `{m}`");
        }
        if s.is_empty() {
            s.push_str("no attack results\n");
        }
        s
    }
}

fn cw_row(attack: &str, model: &str, trace: &TraceTable) -> CwRow {
    let mut best: BTreeMap<usize, Option<f64>> = BTreeMap::new();
    for r in trace.rows() {
        let e = best.entry(r.input_id).or_insert(None);
        if r.success {
            *e = Some(e.map_or(r.value, |v: f64| v.min(r.value)));
        }
    }
    let found: Vec<f64> = best.values().filter_map(|v| *v).collect();
    CwRow {
        attack: attack.into(),
        model: model.into(),
        inputs: best.len(),
        successes: found.len(),
        mean_perturbation: (!found.is_empty())
            .then(|| found.iter().sum::<f64>() / found.len() as f64),
        median_perturbation: lower_median(&found),
    }
}

fn query_row(attack: &str, model: &str, trace: &TraceTable) -> QueryRow {
    let s = query_efficiency_summary(trace, attack, FailurePolicy::Exclude);
    let mut finals: BTreeMap<usize, (usize, f64, bool)> = BTreeMap::new();
    for r in trace.rows() {
        let e = finals
            .entry(r.input_id)
            .or_insert((r.index, r.value, r.success));
        if r.index >= e.0 {
            *e = (r.index, r.value, r.success);
        }
    }
    let won: Vec<&(usize, f64, bool)> = finals.values().filter(|f| f.2).collect();
    let queries: Vec<f64> = won.iter().map(|f| f.0 as f64).collect();
    let mean_perturbation =
        (!won.is_empty()).then(|| won.iter().map(|f| f.1).sum::<f64>() / won.len() as f64);
    QueryRow {
        attack: attack.into(),
        model: model.into(),
        inputs: s.inputs,
        success_rate: s.success_rate,
        average_queries: s.average_queries,
        median_queries: lower_median(&queries),
        mean_perturbation,
        median_perturbation: s.median_perturbation,
    }
}

/// Rebuilds every summary from `traces/` and the manifest, writes
/// `summary/*.csv` and `report.txt`. Running it twice gives identical files.
/// A tree without a manifest yields header-only tables.
pub fn report(tree: &ResultTree) -> Result<Report> {
    let manifest = if tree.manifest().exists() {
        Manifest::load(&tree.manifest())?
    } else {
        Manifest::default()
    };
    let mut out = Report::default();
    for entry in &manifest.attacks {
        let path = tree.trace(&entry.name);
        if !path.exists() {
            out.missing.push(entry.name.clone());
            continue;
        }
        let trace = TraceTable::load(&path)?;
        if let Some(other) = trace.rows().iter().find(|r| r.method != entry.name) {
            return Err(Error::malformed(
                &path,
                format!(
                    "row for `{}` in the trace of `{}`",
                    other.method, entry.name
                ),
            ));
        }
        let (name, model) = (entry.name.as_str(), entry.model.label());
        match entry.family {
            Family::Pgd => {
                let curve = accuracy_vs_restarts(&trace)
                    .remove(name)
                    .unwrap_or_default();
                for (i, &a) in curve.iter().enumerate() {
                    out.restarts.push(RestartRow {
                        attack: name.into(),
                        restarts: i + 1,
                        accuracy: a,
                    });
                }
                let inputs = trace.by_input(name).len();
                out.pgd.push(PgdRow {
                    attack: name.into(),
                    model: model.into(),
                    inputs,
                    accuracy_first: curve.first().copied().unwrap_or(f64::NAN),
                    accuracy_final: curve.last().copied().unwrap_or(f64::NAN),
                    restarts: curve.len(),
                });
            }
            Family::Cw => out.cw.push(cw_row(name, model, &trace)),
            Family::Simba => out.simba.push(query_row(name, model, &trace)),
            Family::Rgf => out.rgf.push(query_row(name, model, &trace)),
            Family::Boundary => {
                for p in perturbation_at_budget(&trace, name, &entry.report_budgets) {
                    out.boundary.push(BoundaryRow {
                        attack: name.into(),
                        model: model.into(),
                        budget: p.budget,
                        median_perturbation: p.median,
                        beyond_horizon: p.beyond_horizon,
                    });
                }
            }
        }
    }

    let dir = tree.summary_dir();
    create_dir(&dir)?;
    write_rows(
        &dir.join("restarts.csv"),
        &out.restarts,
        &["attack", "restarts", "accuracy"],
    )?;
    write_rows(
        &dir.join("pgd.csv"),
        &out.pgd,
        &[
            "attack",
            "model",
            "inputs",
            "accuracy_first",
            "accuracy_final",
            "restarts",
        ],
    )?;
    write_rows(
        &dir.join("cw.csv"),
        &out.cw,
        &[
            "attack",
            "model",
            "inputs",
            "successes",
            "mean_perturbation",
            "median_perturbation",
        ],
    )?;
    let query_header = [
        "attack",
        "model",
        "inputs",
        "success_rate",
        "average_queries",
        "median_queries",
        "mean_perturbation",
        "median_perturbation",
    ];
    write_rows(&dir.join("simba.csv"), &out.simba, &query_header)?;
    write_rows(&dir.join("rgf.csv"), &out.rgf, &query_header)?;
    write_rows(
        &dir.join("boundary.csv"),
        &out.boundary,
        &[
            "attack",
            "model",
            "budget",
            "median_perturbation",
            "beyond_horizon",
        ],
    )?;
    std::fs::write(tree.report(), out.to_text()).map_err(|e| Error::io(tree.report(), e))?;
    Ok(out)
}
