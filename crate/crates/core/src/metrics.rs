//! Diversity and efficiency summaries over attack traces.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::MlpClassifier;
use crate::numcore::Tensor;

/// One observation: for restart traces `index` is the restart number and
/// `value` the restart's loss or perturbation; for query traces `index` is the
/// query count and `value` the ℓ2 perturbation at that point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub input_id: usize,
    pub method: String,
    pub index: usize,
    pub value: f64,
    pub success: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceTable {
    rows: Vec<TraceRow>,
}

impl TraceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<TraceRow>) -> Self {
        Self { rows }
    }

    pub fn push(&mut self, input_id: usize, method: &str, index: usize, value: f64, success: bool) {
        self.rows.push(TraceRow {
            input_id,
            method: method.to_string(),
            index,
            value,
            success,
        });
    }

    pub fn extend(&mut self, other: TraceTable) {
        self.rows.extend(other.rows);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Method labels in sorted order.
    pub fn methods(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.method.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Rows of `method` grouped by input id, each group in trace order.
    pub fn by_input(&self, method: &str) -> BTreeMap<usize, Vec<&TraceRow>> {
        let mut out: BTreeMap<usize, Vec<&TraceRow>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.method == method) {
            out.entry(r.input_id).or_default().push(r);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            w.write_record(["input_id", "method", "index", "value", "success"])
                .map_err(csv_err)?;
        }
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(csv_err)?;
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Malformed { reason, .. } => Error::malformed(path, reason),
            other => other,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::malformed("<csv>", e)
}

/// Lower median: the `⌊(n-1)/2⌋`-th smallest value.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Mean ℓ2 distance between the logits of all unordered pairs of `points`.
pub fn pairwise_output_distance(points: &[Tensor], model: &MlpClassifier) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let logits = points
        .iter()
        .map(|p| model.forward(p))
        .collect::<Result<Vec<_>>>()?;
    pairwise_distance(&logits)
}

/// Mean ℓ2 distance over all unordered pairs.
pub fn pairwise_distance(vectors: &[Tensor]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 points, got {}",
            vectors.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            total += vectors[i].l2_distance(&vectors[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Accuracy after `k + 1` restarts at position `k`, per method. An input
/// counts as broken from the first restart flagged successful on; inputs
/// whose trace stops early keep their last state. Restart indices start at 0.
pub fn accuracy_vs_restarts(trace: &TraceTable) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for method in trace.methods() {
        let groups = trace.by_input(&method);
        let horizon = groups
            .values()
            .flat_map(|rows| rows.iter().map(|r| r.index + 1))
            .max()
            .unwrap_or(0);
        let n = groups.len() as f64;
        let mut broken_at = vec![0usize; horizon];
        for rows in groups.values() {
            if let Some(first) = rows.iter().filter(|r| r.success).map(|r| r.index).min() {
                broken_at[first] += 1;
            }
        }
        let mut broken = 0;
        let curve = broken_at
            .iter()
            .map(|b| {
                broken += b;
                1.0 - broken as f64 / n
            })
            .collect();
        out.insert(method, curve);
    }
    out
}

/// How failed runs enter the median perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Bounded score attacks: failures carry no valid adversarial.
    Exclude,
    /// Decision attacks: the final distance counts even without reaching a goal.
    Include,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub method: String,
    pub inputs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean queries over successful runs only.
    pub average_queries: Option<f64>,
    pub median_perturbation: Option<f64>,
    pub failures: usize,
}

/// Success rate, average queries and median perturbation from each input's
/// final row (largest index) for `method`.
pub fn query_efficiency_summary(
    trace: &TraceTable,
    method: &str,
    policy: FailurePolicy,
) -> QuerySummary {
    let groups = trace.by_input(method);
    let finals: Vec<&TraceRow> = groups
        .values()
        .map(|rows| {
            *rows
                .iter()
                .max_by_key(|r| r.index)
                .expect("non-empty group")
        })
        .collect();
    let successes: Vec<&&TraceRow> = finals.iter().filter(|r| r.success).collect();
    let average_queries = (!successes.is_empty())
        .then(|| successes.iter().map(|r| r.index as f64).sum::<f64>() / successes.len() as f64);
    let perturbations: Vec<f64> = finals
        .iter()
        .filter(|r| r.success || policy == FailurePolicy::Include)
        .map(|r| r.value)
        .collect();
    let inputs = finals.len();
    QuerySummary {
        method: method.to_string(),
        inputs,
        successes: successes.len(),
        success_rate: if inputs == 0 {
            0.0
        } else {
            successes.len() as f64 / inputs as f64
        },
        average_queries,
        median_perturbation: lower_median(&perturbations),
        failures: inputs - successes.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: usize,
    pub median: f64,
    /// Some input's trace ends before `budget`; its last value was used.
    pub beyond_horizon: bool,
}

/// Per input, the smallest adversarial distance among rows with
/// `index ≤ budget` (infinite if none), then the lower median across inputs.
pub fn perturbation_at_budget(
    trace: &TraceTable,
    method: &str,
    budgets: &[usize],
) -> Vec<BudgetPoint> {
    let groups = trace.by_input(method);
    budgets
        .iter()
        .map(|&budget| {
            let mut beyond = false;
            let best: Vec<f64> = groups
                .values()
                .map(|rows| {
                    if rows.iter().map(|r| r.index).max().unwrap_or(0) < budget {
                        beyond = true;
                    }
                    rows.iter()
                        .filter(|r| r.index <= budget && r.success)
                        .map(|r| r.value)
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            BudgetPoint {
                budget,
                median: lower_median(&best).unwrap_or(f64::NAN),
                beyond_horizon: beyond,
            }
        })
        .collect()
}

/// Per-input best distance by `budget` (as used inside [`perturbation_at_budget`]).
pub fn best_by_budget(trace: &TraceTable, method: &str, budget: usize) -> BTreeMap<usize, f64> {
    trace
        .by_input(method)
        .into_iter()
        .map(|(id, rows)| {
            let v = rows
                .iter()
                .filter(|r| r.index <= budget && r.success)
                .map(|r| r.value)
                .fold(f64::INFINITY, f64::min);
            (id, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn identity2() -> MlpClassifier {
        MlpClassifier::linear(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let p = Tensor::vector(vec![0.2, 0.7]);
        assert_eq!(
            pairwise_output_distance(&[p.clone(), p], &identity2()).unwrap(),
            0.0
        );
    }

    #[test]
    fn three_four_five() {
        let pts = [
            Tensor::vector(vec![0.0, 0.0]),
            Tensor::vector(vec![3.0, 4.0]),
        ];
        assert_eq!(pairwise_output_distance(&pts, &identity2()).unwrap(), 5.0);
    }

    #[test]
    fn single_point_rejected() {
        assert!(pairwise_output_distance(&[Tensor::vector(vec![0.0, 0.0])], &identity2()).is_err());
    }

    #[test]
    fn pairwise_matches_double_loop() {
        let m = MlpClassifier::new(&[5, 7, 4], 3).unwrap();
        let mut rng = seeded(2);
        let pts: Vec<Tensor> = (0..9)
            .map(|_| Tensor::vector((0..5).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for a in &pts {
            for b in &pts {
                let za = m.logits(a.data()).unwrap();
                let zb = m.logits(b.data()).unwrap();
                sum += za
                    .iter()
                    .zip(&zb)
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                n += 1.0;
            }
        }
        // ordered pairs include the zero diagonal: mean = sum / (n - k)
        let expected = sum / (n - pts.len() as f64);
        let got = pairwise_output_distance(&pts, &m).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn lower_median_convention() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[5.0]), Some(5.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn all_failures_give_flat_curve() {
        let mut t = TraceTable::new();
        for i in 0..4 {
            for r in 0..3 {
                t.push(i, "pgd", r, 0.0, false);
            }
        }
        assert_eq!(accuracy_vs_restarts(&t)["pgd"], vec![1.0; 3]);
    }

    #[test]
    fn first_restart_success_floors_curve() {
        let mut t = TraceTable::new();
        for i in 0..4 {
            t.push(i, "pgd", 0, 0.0, true);
            t.push(i, "pgd", 1, 0.0, false);
        }
        assert_eq!(accuracy_vs_restarts(&t)["pgd"], vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn restart_curve_matches_recount(flags in proptest::collection::vec(
            proptest::collection::vec(any::<bool>(), 5), 1..20)) {
            let mut t = TraceTable::new();
            for (i, fs) in flags.iter().enumerate() {
                for (r, f) in fs.iter().enumerate() {
                    t.push(i, "m", r, 0.0, *f);
                }
            }
            let curve = &accuracy_vs_restarts(&t)["m"];
            for k in 0..5 {
                let robust = flags.iter().filter(|fs| !fs[..=k].iter().any(|f| *f)).count();
                prop_assert!((curve[k] - robust as f64 / flags.len() as f64).abs() < 1e-15);
                if k > 0 {
                    prop_assert!(curve[k] <= curve[k - 1]);
                }
            }
        }

        #[test]
        fn budget_curve_matches_scan(
            traces in proptest::collection::vec(
                proptest::collection::vec((1usize..50, 0.0f64..10.0, any::<bool>()), 1..12), 1..10),
            budgets in proptest::collection::vec(0usize..600, 1..6),
        ) {
            let mut t = TraceTable::new();
            for (i, rows) in traces.iter().enumerate() {
                let mut q = 0;
                for (dq, v, s) in rows {
                    q += dq;
                    t.push(i, "b", q, *v, *s);
                }
            }
            let mut sorted = budgets.clone();
            sorted.sort();
            let pts = perturbation_at_budget(&t, "b", &sorted);
            for (p, &b) in pts.iter().zip(&sorted) {
                let mut per: Vec<f64> = Vec::new();
                for rows in &traces {
                    let mut q = 0;
                    let mut best = f64::INFINITY;
                    for (dq, v, s) in rows {
                        q += dq;
                        if q <= b && *s && *v < best {
                            best = *v;
                        }
                    }
                    per.push(best);
                }
                per.sort_by(f64::total_cmp);
                let expect = per[(per.len() - 1) / 2];
                prop_assert!(p.median == expect || (p.median.is_nan() && expect.is_nan()));
            }
            for w in pts.windows(2) {
                prop_assert!(w[1].median <= w[0].median);
            }
            for (id, _) in traces.iter().enumerate() {
                let mut prev = f64::INFINITY;
                for &b in &sorted {
                    let v = best_by_budget(&t, "b", b)[&id];
                    prop_assert!(v <= prev);
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn monotone_trace_value_at_budget() {
        let mut t = TraceTable::new();
        for (q, d) in [(10, 5.0), (20, 4.0), (40, 2.5), (80, 1.0)] {
            t.push(0, "b", q, d, true);
        }
        let p = perturbation_at_budget(&t, "b", &[39, 40, 100]);
        assert_eq!(p[0].median, 4.0);
        assert_eq!(p[1].median, 2.5);
        assert_eq!(p[2].median, 1.0);
        assert!(!p[1].beyond_horizon);
        assert!(p[2].beyond_horizon);
    }

    #[test]
    fn single_success_average() {
        let mut t = TraceTable::new();
        t.push(0, "s", 40, 0.3, false);
        t.push(0, "s", 100, 0.5, true);
        let s = query_efficiency_summary(&t, "s", FailurePolicy::Exclude);
        assert_eq!(s.average_queries, Some(100.0));
        assert_eq!(s.success_rate, 1.0);
    }

    #[test]
    fn fixture_summary_recount() {
        // input: (final queries, final perturbation, success)
        let fixture = [
            (120, 1.5, true),
            (300, 2.0, true),
            (20000, 4.0, false),
            (80, 0.5, true),
            (20000, 3.0, false),
            (410, 1.0, true),
        ];
        let mut t = TraceTable::new();
        for (i, (q, d, s)) in fixture.iter().enumerate() {
            t.push(i, "simba", 1, 0.0, false);
            t.push(i, "simba", *q, *d, *s);
        }
        let ex = query_efficiency_summary(&t, "simba", FailurePolicy::Exclude);
        assert_eq!(ex.inputs, 6);
        assert_eq!(ex.successes, 4);
        assert_eq!(ex.failures, 2);
        assert!((ex.success_rate - 4.0 / 6.0).abs() < 1e-15);
        // (120 + 300 + 80 + 410) / 4
        assert_eq!(ex.average_queries, Some(227.5));
        // sorted successes 0.5 1.0 1.5 2.0 → lower median 1.0
        assert_eq!(ex.median_perturbation, Some(1.0));
        let inc = query_efficiency_summary(&t, "simba", FailurePolicy::Include);
        // 0.5 1.0 1.5 2.0 3.0 4.0 → 1.5
        assert_eq!(inc.median_perturbation, Some(1.5));
        assert_eq!(inc.average_queries, Some(227.5));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = TraceTable::new();
        t.push(3, "boundary-ods", 17, 0.125, true);
        t.push(4, "boundary-ods", 18, 1.0 / 3.0, false);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(TraceTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn empty_table_csv_is_header_only() {
        let mut buf = Vec::new();
        TraceTable::new().write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "input_id,method,index,value,success\n"
        );
        assert!(
            TraceTable::read_csv(&b"input_id,method,index,value,success\n"[..])
                .unwrap()
                .is_empty()
        );
    }
}
