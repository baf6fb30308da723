use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::decode::{DecodeConfig, LayoutCompleter};
use crate::layout::{LayoutTree, Order};
use crate::metrics::{evaluate_completions, CostTable, MetricReport};
use crate::model::Variant;
use crate::parallel::Execution;

/// Which cells the matrix evaluates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixSpec {
    pub variants: Vec<Variant>,
    pub orders: Vec<Order>,
    pub fractions: Vec<f64>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            orders: vec![Order::Bfs, Order::Dfs],
            fractions: vec![0.1, 0.5, 0.8],
        }
    }
}

/// One (variant, order, fraction) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub variant: Variant,
    pub order: Order,
    pub fraction: f64,
    pub strict: MetricReport,
    pub relaxed: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: Vec<MatrixRow>,
}

/// Reference relaxed next-element accuracy (percent) at 80% prefixes.
pub const REFERENCE_RELAXED_NEXT: [(Order, Variant, f64); 5] = [
    (Order::Bfs, Variant::Recursive, 95.3),
    (Order::Bfs, Variant::Pointer, 92.9),
    (Order::Dfs, Variant::Recursive, 93.4),
    (Order::Dfs, Variant::Pointer, 88.4),
    (Order::Dfs, Variant::Vanilla, 76.6),
];

/// Evaluates every cell: greedy completions of the test trees' prefixes
/// scored in strict and relaxed mode. The vanilla decoder only runs on
/// depth-first prefixes.
pub fn run_matrix(
    completers: &[(Variant, &dyn LayoutCompleter)],
    test: &[LayoutTree],
    spec: &MatrixSpec,
    costs: &CostTable,
    decode: &DecodeConfig,
    execution: Execution,
) -> Result<MatrixReport, HarnessError> {
    if test.is_empty() {
        return Err(HarnessError::Config("test set is empty".into()));
    }
    let mut rows = Vec::new();
    for &order in &spec.orders {
        for &variant in &spec.variants {
            if variant == Variant::Vanilla && order != Order::Dfs {
                continue;
            }
            let completer = completers
                .iter()
                .find(|(v, _)| *v == variant)
                .map(|(_, c)| *c)
                .ok_or_else(|| HarnessError::Config(format!("no model for {variant}")))?;
            for &fraction in &spec.fractions {
                let [strict, relaxed] = evaluate_completions(
                    completer, test, order, fraction, costs, decode, execution,
                )?;
                rows.push(MatrixRow {
                    variant,
                    order,
                    fraction,
                    strict,
                    relaxed,
                });
            }
        }
    }
    Ok(MatrixReport { rows })
}

fn percent(f: f64) -> String {
    format!("{}%", (f * 100.0).round())
}

impl MatrixReport {
    /// Tab-separated rows, one per cell and mode.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "order\tvariant\tfraction\tmode\tprecision\trecall\tf1\tnext\tedit\ttrees\n",
        );
        for r in &self.rows {
            for m in [&r.strict, &r.relaxed] {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.3}\t{}",
                    r.order,
                    r.variant,
                    r.fraction,
                    if m.relaxed { "relaxed" } else { "strict" },
                    m.precision,
                    m.recall,
                    m.f1,
                    m.next_accuracy,
                    m.edit_distance,
                    m.trees
                );
            }
        }
        out
    }

    /// One table per (mode, order): a row per model, F1 / Next / Edit per fraction.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut fractions: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !fractions.contains(&r.fraction) {
                fractions.push(r.fraction);
            }
        }
        let mut orders: Vec<Order> = Vec::new();
        for r in &self.rows {
            if !orders.contains(&r.order) {
                orders.push(r.order);
            }
        }
        for relaxed in [false, true] {
            for &order in &orders {
                let mode = if relaxed { "relaxed" } else { "strict" };
                let _ = writeln!(
                    out,
                    "{} partial trees ({mode})",
                    order.as_str().to_uppercase()
                );
                let _ = write!(out, "{:<10}", "");
                for f in &fractions {
                    let _ = write!(out, " | {:^20}", percent(*f));
                }
                out.push('\n');
                let _ = write!(out, "{:<10}", "Model");
                for _ in &fractions {
                    let _ = write!(out, " | {:>6} {:>6} {:>6}", "F1", "Next", "Edit");
                }
                out.push('\n');
                for v in Variant::ALL {
                    let cells: Vec<&MatrixRow> = self
                        .rows
                        .iter()
                        .filter(|r| r.order == order && r.variant == v)
                        .collect();
                    if cells.is_empty() {
                        continue;
                    }
                    let _ = write!(out, "{:<10}", v.display_name());
                    for f in &fractions {
                        match cells.iter().find(|r| r.fraction == *f) {
                            Some(r) => {
                                let m = if relaxed { &r.relaxed } else { &r.strict };
                                let _ = write!(
                                    out,
                                    " | {:>6.1} {:>6.1} {:>6.2}",
                                    m.f1, m.next_accuracy, m.edit_distance
                                );
                            }
                            None => {
                                let _ = write!(out, " | {:>20}", "-");
                            }
                        }
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        out.push_str("Reference relaxed next-element accuracy at 80% prefixes:");
        for (order, variant, value) in REFERENCE_RELAXED_NEXT {
            let _ = write!(
                out,
                " {} {} {value:.1};",
                order.as_str().to_uppercase(),
                variant.display_name()
            );
        }
        out.pop();
        out.push('\n');
        out.lines()
            .map(str::trim_end)
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}
