//! Aggregate tables: per-project mimicry counts, corpus totals, the Ochiai
//! distribution and the classifier headline.

use std::fmt::Write as _;

use mimicry_core::classifier::MetricsReport;
use mimicry_core::semantics::{Label, MutantLabel};
use serde::{Deserialize, Serialize};

/// Per-project counts, as read from a counts file or derived from labels.
/// The corpus has one vulnerability per project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectCounts {
    pub project: String,
    pub total: u64,
    pub mimicking: u64,
    #[serde(default)]
    pub ochiai_positive: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsFile {
    pub projects: Vec<ProjectCounts>,
}

impl ProjectCounts {
    pub fn from_labels(project: &str, labels: &[MutantLabel]) -> Self {
        ProjectCounts {
            project: project.to_string(),
            total: labels.len() as u64,
            mimicking: labels.iter().filter(|l| l.label == Label::Mimicking).count() as u64,
            ochiai_positive: labels.iter().filter(|l| l.ochiai > 0.0).count() as u64,
        }
    }
}

/// `num / den` as a percentage with `decimals` places; exact zero prints `0%`.
pub fn percent(num: u64, den: u64, decimals: usize) -> String {
    if num == 0 || den == 0 {
        return "0%".to_string();
    }
    format!("{:.*}%", decimals, 100.0 * num as f64 / den as f64)
}

/// Table cell in the `count, pct` shape, e.g. `8, 2.13%`.
pub fn count_cell(count: u64, total: u64) -> String {
    format!("{count}, {}", percent(count, total, 2))
}

pub fn headline(m: &MetricsReport) -> String {
    format!("MCC {:.2}, Precision {:.2}, Recall {:.2}", m.mcc, m.precision, m.recall)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRow {
    pub project: String,
    pub total: u64,
    pub mimicking: u64,
    pub mimicking_pct: String,
    pub ochiai_positive: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub mutants: u64,
    pub mimicking: u64,
    pub mimicking_pct: String,
    pub ochiai_positive: u64,
    pub ochiai_positive_pct: String,
    pub vulnerabilities: u64,
    pub vulnerabilities_mimicked: u64,
    pub vulnerabilities_mimicked_pct: String,
    pub vulnerabilities_ochiai_positive: u64,
    pub vulnerabilities_ochiai_positive_pct: String,
}

/// Ochiai values of all labeled mutants: exact zeros, then ten bins of width
/// 0.1 over (0, 1]; bin `i` holds `(i/10, (i+1)/10]` except that the first
/// bin starts just above zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub zero: u64,
    pub bins: [u64; 10],
}

impl Histogram {
    pub fn add(&mut self, ochiai: f64) {
        if ochiai <= 0.0 {
            self.zero += 1;
        } else {
            let i = ((ochiai * 10.0).ceil() as usize).clamp(1, 10) - 1;
            self.bins[i] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub headline: String,
    pub pooled: MetricsReport,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_mcc: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub projects: Vec<ProjectRow>,
    pub totals: Totals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ochiai_histogram: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierSummary>,
}

pub fn build(projects: &[ProjectCounts], histogram: Option<Histogram>, classifier: Option<ClassifierSummary>) -> Report {
    let rows: Vec<ProjectRow> = projects
        .iter()
        .filter(|p| p.total > 0)
        .map(|p| ProjectRow {
            project: p.project.clone(),
            total: p.total,
            mimicking: p.mimicking,
            mimicking_pct: percent(p.mimicking, p.total, 2),
            ochiai_positive: p.ochiai_positive,
        })
        .collect();
    let mutants = rows.iter().map(|r| r.total).sum();
    let mimicking = rows.iter().map(|r| r.mimicking).sum();
    let ochiai_positive = rows.iter().map(|r| r.ochiai_positive).sum();
    let vulnerabilities = rows.len() as u64;
    let mimicked = rows.iter().filter(|r| r.mimicking > 0).count() as u64;
    let coupled = rows.iter().filter(|r| r.ochiai_positive > 0).count() as u64;
    Report {
        totals: Totals {
            mutants,
            mimicking,
            mimicking_pct: percent(mimicking, mutants, 1),
            ochiai_positive,
            ochiai_positive_pct: percent(ochiai_positive, mutants, 1),
            vulnerabilities,
            vulnerabilities_mimicked: mimicked,
            vulnerabilities_mimicked_pct: percent(mimicked, vulnerabilities, 1),
            vulnerabilities_ochiai_positive: coupled,
            vulnerabilities_ochiai_positive_pct: percent(coupled, vulnerabilities, 1),
        },
        projects: rows,
        ochiai_histogram: histogram,
        classifier,
    }
}

pub fn render_markdown(r: &Report) -> String {
    let t = &r.totals;
    let mut s = String::from("# Mimicry report\n\n| Project | Mutants | Mimicking |\n|---|---:|---:|\n");
    for p in &r.projects {
        let _ = writeln!(s, "| {} | {} | {} |", p.project, p.total, count_cell(p.mimicking, p.total));
    }
    let _ = write!(
        s,
        "\n{} of the generated mutants ({} of {}) mimicked {} of the vulnerabilities ({} of {}).\n\n\
         {} of the mutants ({} of {}) have ochiai > 0, covering {} of the vulnerabilities ({} of {}).\n",
        t.mimicking_pct,
        t.mimicking,
        t.mutants,
        t.vulnerabilities_mimicked_pct,
        t.vulnerabilities_mimicked,
        t.vulnerabilities,
        t.ochiai_positive_pct,
        t.ochiai_positive,
        t.mutants,
        t.vulnerabilities_ochiai_positive_pct,
        t.vulnerabilities_ochiai_positive,
        t.vulnerabilities,
    );
    if let Some(h) = &r.ochiai_histogram {
        s.push_str("\n## Ochiai distribution\n\n| Ochiai | Mutants |\n|---|---:|\n");
        let _ = writeln!(s, "| 0 | {} |", h.zero);
        for (i, n) in h.bins.iter().enumerate() {
            let _ = writeln!(s, "| ({:.1}, {:.1}] | {n} |", i as f64 / 10.0, (i + 1) as f64 / 10.0);
        }
    }
    if let Some(c) = &r.classifier {
        let _ = write!(
            s,
            "\n## Classifier\n\n{} (pooled over {} folds)\n\nPer-fold mean: MCC {:.2}, Precision {:.2}, Recall {:.2}\n",
            c.headline, c.folds, c.mean_mcc, c.mean_precision, c.mean_recall
        );
    }
    s
}
