use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hazard::HazardKind;
use crate::sagat::{SaLevel, ScoringConfig};
use crate::session::{rescore, Attempt, SessionError, SessionLog, SessionReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CohortError {
    #[error("cannot read {path}: {source}")]
    Log { path: String, source: SessionError },
    #[error("{path} is not a completed session")]
    Incomplete { path: String },
    #[error("duplicate participant-task {participant} {hazard} {attempt:?}")]
    Duplicate { participant: String, hazard: HazardKind, attempt: Attempt },
    #[error("cannot list {0}: {1}")]
    Dir(String, String),
}

/// One participant-task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub participant_id: String,
    pub hazard_kind: HazardKind,
    pub attempt: Attempt,
    pub task_order_index: u32,
    pub ca: f64,
    pub na: f64,
    pub naq1: f64,
    pub naq2: f64,
    /// Every robot was lost; CA/NA/NAQ1/NAQ2 carry the grid diagonal.
    pub all_deactivated: bool,
    pub s_sagat: Option<f64>,
    pub levels: [Option<f64>; 3],
    pub dims: [Option<f64>; 6],
    pub s_sart: Option<f64>,
    pub d: Option<f64>,
    pub s: Option<f64>,
    pub u: Option<f64>,
    pub sart_mean: Option<f64>,
    pub ratings: Option<[u8; 10]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    Ca,
    Na,
    Naq1,
    Naq2,
    SSagat,
    Level(SaLevel),
    Dim(u8),
    SSart,
    D,
    S,
    U,
}

impl Column {
    pub const TP: [Column; 4] = [Column::Ca, Column::Na, Column::Naq1, Column::Naq2];

    pub fn sa() -> Vec<Column> {
        let mut v = vec![Column::SSagat, Column::Level(SaLevel::L1), Column::Level(SaLevel::L2), Column::Level(SaLevel::L3)];
        v.extend((1..=6).map(Column::Dim));
        v.extend([Column::SSart, Column::D, Column::S, Column::U]);
        v
    }

    pub fn name(self) -> String {
        match self {
            Column::Ca => "CA".into(),
            Column::Na => "NA".into(),
            Column::Naq1 => "NAQ1".into(),
            Column::Naq2 => "NAQ2".into(),
            Column::SSagat => "S_SAGAT".into(),
            Column::Level(l) => l.to_string(),
            Column::Dim(d) => format!("Dim{d}"),
            Column::SSart => "S_SART".into(),
            Column::D => "D".into(),
            Column::S => "S".into(),
            Column::U => "U".into(),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl CohortRow {
    pub fn get(&self, col: Column) -> Option<f64> {
        match col {
            Column::Ca => Some(self.ca),
            Column::Na => Some(self.na),
            Column::Naq1 => Some(self.naq1),
            Column::Naq2 => Some(self.naq2),
            Column::SSagat => self.s_sagat,
            Column::Level(l) => self.levels[l as usize],
            Column::Dim(d) => self.dims.get(usize::from(d).wrapping_sub(1)).copied().flatten(),
            Column::SSart => self.s_sart,
            Column::D => self.d,
            Column::S => self.s,
            Column::U => self.u,
        }
    }

    /// Builds a row from a session report; `diagonal` is the worst-case
    /// distance imputed when no robot survived.
    pub fn from_report(r: &SessionReport, diagonal: f64) -> Self {
        let tp = r.final_metrics.as_ref().and_then(|m| m.tp);
        let sagat = r.sagat.as_ref();
        let sart = r.sart.as_ref();
        CohortRow {
            participant_id: r.participant_id.clone(),
            hazard_kind: r.hazard_kind,
            attempt: r.attempt,
            task_order_index: r.task_order_index,
            ca: tp.map_or(diagonal, |t| t.ca),
            na: tp.map_or(diagonal, |t| t.na),
            naq1: tp.map_or(diagonal, |t| t.naq1),
            naq2: tp.map_or(diagonal, |t| t.naq2),
            all_deactivated: tp.is_none(),
            s_sagat: sagat.map(|s| s.overall),
            levels: SaLevel::ALL.map(|l| sagat.and_then(|s| s.level(l))),
            dims: [1, 2, 3, 4, 5, 6].map(|d| sagat.and_then(|s| s.dimension(d))),
            s_sart: sart.map(|s| f64::from(s.total)),
            d: sart.map(|s| f64::from(s.d)),
            s: sart.map(|s| f64::from(s.s)),
            u: sart.map(|s| f64::from(s.u)),
            sart_mean: sart.map(|s| s.mean_rating),
            ratings: sart.map(|s| s.ratings),
        }
    }
}

/// A participant's value under a projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedValue {
    pub participant_id: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub rows: Vec<CohortRow>,
}

impl CohortTable {
    /// Rejects duplicate participant-tasks; rows are sorted by
    /// (participant, hazard, attempt).
    pub fn new(mut rows: Vec<CohortRow>) -> Result<Self, CohortError> {
        rows.sort_by(|a, b| {
            (&a.participant_id, a.hazard_kind, a.attempt).cmp(&(&b.participant_id, b.hazard_kind, b.attempt))
        });
        for w in rows.windows(2) {
            if (&w[0].participant_id, w[0].hazard_kind, w[0].attempt) == (&w[1].participant_id, w[1].hazard_kind, w[1].attempt) {
                return Err(CohortError::Duplicate {
                    participant: w[0].participant_id.clone(),
                    hazard: w[0].hazard_kind,
                    attempt: w[0].attempt,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn participants(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.participant_id.as_str()).collect()
    }

    pub fn hazards(&self) -> BTreeSet<HazardKind> {
        self.rows.iter().map(|r| r.hazard_kind).collect()
    }

    pub fn row(&self, participant: &str, hazard: HazardKind, attempt: Attempt) -> Option<&CohortRow> {
        self.rows.iter().find(|r| r.participant_id == participant && r.hazard_kind == hazard && r.attempt == attempt)
    }

    /// M_A2_all: per participant, the mean of `col` over their A2 rows.
    pub fn m_a2_all(&self, col: Column) -> Vec<ProjectedValue> {
        let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.attempt == Attempt::A2) {
            if let Some(v) = r.get(col) {
                acc.entry(&r.participant_id).or_default().push(v);
            }
        }
        acc.into_iter()
            .map(|(p, v)| ProjectedValue { participant_id: p.to_string(), value: v.iter().sum::<f64>() / v.len() as f64 })
            .collect()
    }

    /// S_Hazard_A2: per participant, the value of `col` on the A2 row of `hazard`.
    pub fn s_hazard_a2(&self, hazard: HazardKind, col: Column) -> Vec<ProjectedValue> {
        self.rows
            .iter()
            .filter(|r| r.attempt == Attempt::A2 && r.hazard_kind == hazard)
            .filter_map(|r| r.get(col).map(|value| ProjectedValue { participant_id: r.participant_id.clone(), value }))
            .collect()
    }

    /// Participants with both attempts of `hazard`, as aligned (A1, A2) vectors.
    pub fn paired_attempts(&self, hazard: HazardKind, col: Column) -> (Vec<f64>, Vec<f64>) {
        let mut a1 = Vec::new();
        let mut a2 = Vec::new();
        for p in self.participants() {
            let x = self.row(p, hazard, Attempt::A1).and_then(|r| r.get(col));
            let y = self.row(p, hazard, Attempt::A2).and_then(|r| r.get(col));
            if let (Some(x), Some(y)) = (x, y) {
                a1.push(x);
                a2.push(y);
            }
        }
        (a1, a2)
    }

    pub const CSV_HEADER: &'static str = "participant_id,hazard,attempt,task_order,CA,NA,NAQ1,NAQ2,all_deactivated,S_SAGAT,L1,L2,L3,Dim1,Dim2,Dim3,Dim4,Dim5,Dim6,S_SART,D,S,U,SART_mean,instability,complexity,variability,arousal,concentration,division_of_attention,spare_capacity,information_quantity,information_quality,familiarity";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.participant_id.clone(),
                r.hazard_kind.to_string(),
                format!("{:?}", r.attempt),
                r.task_order_index.to_string(),
                r.ca.to_string(),
                r.na.to_string(),
                r.naq1.to_string(),
                r.naq2.to_string(),
                r.all_deactivated.to_string(),
                opt(r.s_sagat),
            ];
            cells.extend(r.levels.iter().map(|v| opt(*v)));
            cells.extend(r.dims.iter().map(|v| opt(*v)));
            cells.extend([opt(r.s_sart), opt(r.d), opt(r.s), opt(r.u), opt(r.sart_mean)]);
            match r.ratings {
                Some(rs) => cells.extend(rs.iter().map(|x| x.to_string())),
                None => cells.extend(std::iter::repeat_n(String::new(), 10)),
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Builds a table from parsed logs. With `scoring`, reports are rescored
/// instead of taken from the SessionEnd record.
pub fn build_cohort_from_logs(
    logs: &[(String, SessionLog)],
    scoring: Option<&ScoringConfig>,
) -> Result<CohortTable, CohortError> {
    let rows = logs
        .iter()
        .map(|(path, log)| {
            let Some((_, logged)) = log.end().filter(|_| log.is_complete()) else {
                return Err(CohortError::Incomplete { path: path.clone() });
            };
            let report = match scoring {
                Some(s) => rescore(log, s).map_err(|e| CohortError::Log { path: path.clone(), source: e })?,
                None => logged.clone(),
            };
            Ok(CohortRow::from_report(&report, log.header.world.diagonal()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    CohortTable::new(rows)
}

/// Reads every `*.jsonl` log in `dir` (not recursive).
pub fn build_cohort(dir: &Path, scoring: Option<&ScoringConfig>) -> Result<CohortTable, CohortError> {
    let listing = std::fs::read_dir(dir).map_err(|e| CohortError::Dir(dir.display().to_string(), e.to_string()))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let logs = paths
        .par_iter()
        .map(|p| {
            let name = p.display().to_string();
            SessionLog::read(p).map(|l| (name.clone(), l)).map_err(|e| CohortError::Log { path: name, source: e })
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_cohort_from_logs(&logs, scoring)
}
