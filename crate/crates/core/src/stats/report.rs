use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cohort::{CohortTable, Column, ProjectedValue};
use super::{spearman, wilcoxon_paired, Correlation, SpearmanPMethod, StatsError, TestResult};
use crate::hazard::HazardKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub spearman: SpearmanPMethod,
    /// Bonferroni within each table. Off by default.
    pub correction: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { alpha: 0.05, spearman: SpearmanPMethod::default(), correction: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Notice {
    pub scope: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonRow {
    pub hazard: HazardKind,
    pub column: Column,
    pub result: TestResult,
    pub p_adjusted: f64,
    pub significant: bool,
}

impl WilcoxonRow {
    /// Direction of the A1 → A2 change in medians.
    pub fn direction(&self) -> &'static str {
        match (&self.result.x, &self.result.y) {
            (Some(a), Some(b)) if b.median < a.median => "decrease",
            (Some(a), Some(b)) if b.median > a.median => "increase",
            _ => "no change",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    /// "M_A2_all" or "S_<hazard>_A2".
    pub scope: String,
    pub sa: Column,
    pub tp: Column,
    pub n: usize,
    pub result: Option<Correlation>,
    pub p_adjusted: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: usize,
    pub participants: usize,
    pub imputed_rows: usize,
    pub config: AnalysisConfig,
    pub wilcoxon: Vec<WilcoxonRow>,
    pub correlations: Vec<CorrelationCell>,
    pub notices: Vec<Notice>,
}

fn align(a: &[ProjectedValue], b: &[ProjectedValue]) -> (Vec<f64>, Vec<f64>) {
    let bmap: BTreeMap<&str, f64> = b.iter().map(|p| (p.participant_id.as_str(), p.value)).collect();
    a.iter().filter_map(|p| bmap.get(p.participant_id.as_str()).map(|&y| (p.value, y))).unzip()
}

fn adjust(p: f64, family: usize, correction: bool) -> f64 {
    if correction {
        (p * family as f64).min(1.0)
    } else {
        p
    }
}

pub fn experiment_reports(cohort: &CohortTable, cfg: &AnalysisConfig) -> Result<AnalysisReport, StatsError> {
    if cohort.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let mut notices = Vec::new();
    let all_cols: Vec<Column> = Column::TP.into_iter().chain(Column::sa()).collect();

    let mut wilcoxon = Vec::new();
    for hazard in cohort.hazards() {
        for &col in &all_cols {
            let (a1, a2) = cohort.paired_attempts(hazard, col);
            if a1.len() < 3 {
                if col == Column::Ca {
                    notices.push(Notice {
                        scope: format!("Wilcoxon {hazard}"),
                        message: format!("only {} complete A1/A2 pairs; comparison skipped", a1.len()),
                    });
                }
                continue;
            }
            let result = wilcoxon_paired(&a1, &a2)?;
            wilcoxon.push(WilcoxonRow { hazard, column: col, p_adjusted: result.p_value, significant: false, result });
        }
    }
    let family = wilcoxon.len();
    for w in &mut wilcoxon {
        w.p_adjusted = adjust(w.result.p_value, family, cfg.correction);
        w.significant = w.result.method != super::Method::Degenerate && w.p_adjusted < cfg.alpha;
    }

    let mut scopes: Vec<(String, Box<dyn Fn(Column) -> Vec<ProjectedValue>>)> =
        vec![("M_A2_all".into(), Box::new(|c| cohort.m_a2_all(c)))];
    for hazard in cohort.hazards() {
        scopes.push((format!("S_{hazard}_A2"), Box::new(move |c| cohort.s_hazard_a2(hazard, c))));
    }
    let mut correlations = Vec::new();
    for (scope, project) in &scopes {
        let tp: Vec<(Column, Vec<ProjectedValue>)> = Column::TP.iter().map(|&c| (c, project(c))).collect();
        let start = correlations.len();
        let mut skipped = false;
        for sa in Column::sa() {
            let sa_vals = project(sa);
            for (tp_col, tp_vals) in &tp {
                let (x, y) = align(&sa_vals, tp_vals);
                if x.len() < 3 {
                    skipped = true;
                    continue;
                }
                let (result, note) = match spearman(&x, &y, cfg.spearman) {
                    Ok(c) => (Some(c), None),
                    Err(StatsError::Constant(which)) => {
                        let name = if which == "x" { sa.name() } else { tp_col.name() };
                        (None, Some(format!("undefined: {name} is constant")))
                    }
                    Err(e) => return Err(e),
                };
                correlations.push(CorrelationCell {
                    scope: scope.clone(),
                    sa,
                    tp: *tp_col,
                    n: x.len(),
                    result,
                    p_adjusted: None,
                    significant: false,
                    note,
                });
            }
        }
        if skipped {
            notices.push(Notice { scope: scope.clone(), message: "fewer than 3 participants for some pairs; those correlations skipped".into() });
        }
        let fam = correlations[start..].iter().filter(|c| c.result.is_some()).count();
        for c in &mut correlations[start..] {
            if let Some(r) = &c.result {
                let p = adjust(r.p_value, fam, cfg.correction);
                c.p_adjusted = Some(p);
                c.significant = p < cfg.alpha;
            }
        }
    }

    Ok(AnalysisReport {
        rows: cohort.rows.len(),
        participants: cohort.participants().len(),
        imputed_rows: cohort.rows.iter().filter(|r| r.all_deactivated).count(),
        config: cfg.clone(),
        wilcoxon,
        correlations,
        notices,
    })
}

impl AnalysisReport {
    pub fn correlation(&self, scope: &str, sa: Column, tp: Column) -> Option<&CorrelationCell> {
        self.correlations.iter().find(|c| c.scope == scope && c.sa == sa && c.tp == tp)
    }

    pub fn wilcoxon_row(&self, hazard: HazardKind, col: Column) -> Option<&WilcoxonRow> {
        self.wilcoxon.iter().find(|w| w.hazard == hazard && w.column == col)
    }

    pub const CSV_HEADER: &'static str = "section,scope,row,col,n,statistic,p_value,p_adjusted,method,strength,significant,a1_median,a1_q1,a1_q3,a2_median,a2_q1,a2_q3,note";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for w in &self.wilcoxon {
            let r = &w.result;
            let s = |o: &Option<super::Summary>| match o {
                Some(s) => format!("{},{},{}", s.median, s.q1, s.q3),
                None => ",,".into(),
            };
            let _ = writeln!(
                out,
                "wilcoxon,{},{},A1 vs A2,{},{},{},{},{:?},,{},{},{},{}",
                w.hazard,
                w.column,
                r.n_effective,
                r.statistic,
                r.p_value,
                w.p_adjusted,
                r.method,
                w.significant,
                s(&r.x),
                s(&r.y),
                w.direction()
            );
        }
        for c in &self.correlations {
            let (rho, p, method, strength) = match &c.result {
                Some(r) => (r.rho.to_string(), r.p_value.to_string(), format!("{:?}", r.method), r.strength.label().to_string()),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "spearman,{},{},{},{},{},{},{},{},{},{},,,,,,,{}",
                c.scope,
                c.sa,
                c.tp,
                c.n,
                rho,
                p,
                c.p_adjusted.map(|p| p.to_string()).unwrap_or_default(),
                method.to_lowercase(),
                strength,
                c.significant,
                c.note.clone().unwrap_or_default()
            );
        }
        for n in &self.notices {
            let _ = writeln!(out, "notice,{},,,,,,,,,,,,,,,,{}", n.scope, n.message.replace(',', ";"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Cohort: {} participant-tasks from {} participants ({} all-deactivated rows imputed to worst-case distance)",
            self.rows, self.participants, self.imputed_rows
        );
        let _ = writeln!(
            out,
            "Significance: p < {}{}; quartiles by inclusive linear interpolation",
            self.config.alpha,
            if self.config.correction { ", Bonferroni-corrected per table" } else { "" }
        );
        let _ = writeln!(out, "\n== A1 vs A2 (Wilcoxon signed-rank, paired) ==");
        let mut last = None;
        for w in &self.wilcoxon {
            if last != Some(w.hazard) {
                let _ = writeln!(out, "[{}]", w.hazard);
                last = Some(w.hazard);
            }
            let r = &w.result;
            let s = |o: &Option<super::Summary>| match o {
                Some(s) => format!("{:.2} (IQR {:.2}-{:.2})", s.median, s.q1, s.q3),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "  {:<8} n={:<3} A1 {}  A2 {}  W={:.1} p={:.4} {:?}{}",
                w.column.name(),
                r.n_effective,
                s(&r.x),
                s(&r.y),
                r.statistic,
                w.p_adjusted,
                r.method,
                if w.significant { format!("  significant {}", w.direction()) } else { String::new() }
            );
        }
        let mut scope = None;
        for c in &self.correlations {
            if scope.as_deref() != Some(c.scope.as_str()) {
                let _ = writeln!(out, "\n== SA vs TP (Spearman), {} ==", c.scope);
                scope = Some(c.scope.clone());
            }
            match &c.result {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "  {:<8} ~ {:<5} n={:<3} rho={:+.3} p={:.4} {}{}",
                        c.sa.name(),
                        c.tp.name(),
                        c.n,
                        r.rho,
                        c.p_adjusted.unwrap_or(r.p_value),
                        r.strength.label(),
                        if c.significant { " *" } else { "" }
                    );
                }
                None => {
                    let _ = writeln!(out, "  {:<8} ~ {:<5} n={:<3} {}", c.sa.name(), c.tp.name(), c.n, c.note.clone().unwrap_or_default());
                }
            }
        }
        if !self.notices.is_empty() {
            let _ = writeln!(out, "\n== Notices ==");
            for n in &self.notices {
                let _ = writeln!(out, "  {}: {}", n.scope, n.message);
            }
        }
        out
    }
}
