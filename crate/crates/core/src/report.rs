//! Data-only report tables (CSV/JSON for external plotting): relationship
//! distribution over the dataset, per-predicate recall, and Shannon entropy
//! of the transition rows.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::Dataset;
use crate::eval::MetricsReport;
use crate::knowledge::{transition_row_entropies, TemporalMatrixBank};

#[derive(Debug, Clone, Serialize)]
pub struct DistributionRow {
    pub id: usize,
    pub name: String,
    pub count: u64,
}

/// Ground-truth instance counts per predicate, most frequent first.
pub fn relationship_distribution(dataset: &Dataset) -> Vec<DistributionRow> {
    let mut counts = vec![0u64; dataset.num_predicates()];
    for video in &dataset.videos {
        for frame in &video.frames {
            for rel in &frame.relationships {
                for &p in &rel.predicates {
                    counts[p] += 1;
                }
            }
        }
    }
    let mut rows: Vec<DistributionRow> = counts
        .into_iter()
        .enumerate()
        .map(|(id, count)| DistributionRow {
            id,
            name: dataset.predicate_names[id].clone(),
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.id.cmp(&b.id)));
    rows
}

pub fn distribution_csv(rows: &[DistributionRow]) -> String {
    let mut out = String::from("id,name,count\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.id, r.name, r.count);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyRow {
    pub subject_class: usize,
    pub object_class: usize,
    pub from_predicate: usize,
    pub source_count: u64,
    /// Shannon entropy (nats) of the normalized transition row.
    pub entropy: f64,
}

pub fn entropy_table(bank: &TemporalMatrixBank) -> Vec<EntropyRow> {
    transition_row_entropies(bank)
        .into_iter()
        .map(|((i, j), x, n, h)| EntropyRow {
            subject_class: i,
            object_class: j,
            from_predicate: x,
            source_count: n,
            entropy: h,
        })
        .collect()
}

pub fn entropy_csv(rows: &[EntropyRow]) -> String {
    let mut out = String::from("subject_class,object_class,from_predicate,source_count,entropy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.subject_class, r.object_class, r.from_predicate, r.source_count, r.entropy
        );
    }
    out
}

pub fn per_predicate_csv(report: &MetricsReport) -> String {
    let mut out = String::from("id,name,gt_count");
    for k in &report.ks {
        let _ = write!(out, ",r_at_{k}");
    }
    out.push('\n');
    for row in &report.per_predicate {
        let _ = write!(out, "{},{},{}", row.id, row.name, row.gt_count);
        for k in &report.ks {
            let _ = write!(out, ",{}", row.r_at[&k.to_string()]);
        }
        out.push('\n');
    }
    out
}
