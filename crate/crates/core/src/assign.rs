//! Unit tables, randomized plan assignment and CSV export.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ast::UnitsSpec;
use crate::error::{AssignError, ConditionError};
use crate::matrix::{declared_order, flatten_code, PlanMatrix};
use crate::variable::{ConditionCode, VariableSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unit {
    pub id: u64,
    /// Member ids of a cluster; empty for a single unit.
    pub members: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitTable {
    pub units: Vec<Unit>,
}

impl UnitTable {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

pub fn build_units(spec: UnitsSpec) -> Result<UnitTable, AssignError> {
    let units = match spec {
        UnitsSpec::Units(0) | UnitsSpec::Clusters(0, _) | UnitsSpec::Clusters(_, 0) => {
            return Err(AssignError::Empty("units"))
        }
        UnitsSpec::Units(n) => (1..=n).map(|id| Unit { id, members: Vec::new() }).collect(),
        UnitsSpec::Clusters(k, m) => (1..=k)
            .map(|id| Unit {
                id,
                members: ((id - 1) * m + 1..=id * m).collect(),
            })
            .collect(),
    };
    Ok(UnitTable { units })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    #[default]
    Strict,
    AllowUneven,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Policy::Strict),
            "allow-uneven" | "allow_uneven" => Ok(Policy::AllowUneven),
            other => Err(format!("unknown policy `{other}` (expected strict or allow-uneven)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub unit_id: u64,
    pub members: Vec<u64>,
    pub plan_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssignmentTable {
    pub rows: Vec<Assignment>,
    pub warnings: Vec<String>,
}

impl AssignmentTable {
    /// Units per plan, indexed by plan id.
    pub fn plan_counts(&self, plans: usize) -> Vec<usize> {
        let mut counts = vec![0; plans];
        for r in &self.rows {
            counts[r.plan_id] += 1;
        }
        counts
    }
}

/// Joins units to plans by shuffling a column of plan ids (each repeated equally often) with the seed.
pub fn match_units(units: &UnitTable, plans: &PlanMatrix, seed: u64, policy: Policy) -> Result<AssignmentTable, AssignError> {
    let (n, p) = (units.len(), plans.plans());
    if n == 0 {
        return Err(AssignError::Empty("units"));
    }
    if p == 0 {
        return Err(AssignError::Empty("plans"));
    }
    let mut warnings = Vec::new();
    let per_plan = if n % p == 0 {
        n / p
    } else if policy == Policy::Strict {
        return Err(AssignError::UnevenPartition { units: n, plans: p });
    } else {
        let needed = n.div_ceil(p) * p;
        warnings.push(format!(
            "{n} units cannot be split evenly across {p} plans; some plans get one unit fewer \
             (use {} or {needed} units for a balanced assignment)",
            n / p * p
        ));
        n.div_ceil(p)
    };
    let mut ids: Vec<usize> = (0..p).flat_map(|id| std::iter::repeat_n(id, per_plan)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(n);
    let rows = units
        .units
        .iter()
        .zip(ids)
        .map(|(u, plan_id)| Assignment {
            unit_id: u.id,
            members: u.members.clone(),
            plan_id,
        })
        .collect();
    Ok(AssignmentTable { rows, warnings })
}

/// Rows of the plan table: plan id, then one rendered condition per trial.
pub fn emit_plan_table(plans: &PlanMatrix, declared: &VariableSet) -> Result<Vec<Vec<String>>, ConditionError> {
    let flat = plans.in_declared_order(declared)?;
    Ok((0..flat.plans())
        .map(|r| {
            std::iter::once(r.to_string())
                .chain((0..flat.trials()).map(|c| flat.render_cell(r, c)))
                .collect()
        })
        .collect())
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

pub fn plans_csv(plans: &PlanMatrix, declared: &VariableSet) -> Result<String, ConditionError> {
    let mut w = writer();
    let header: Vec<String> = std::iter::once("plan_id".to_string())
        .chain((1..=plans.trials()).map(|k| format!("trial_{k}")))
        .collect();
    w.write_record(&header).expect("in-memory write");
    for row in emit_plan_table(plans, declared)? {
        w.write_record(&row).expect("in-memory write");
    }
    Ok(finish(w))
}

pub fn assignment_csv(table: &AssignmentTable) -> String {
    let mut w = writer();
    w.write_record(["unit_id", "members", "plan_id"]).expect("in-memory write");
    for r in &table.rows {
        let members = r.members.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        w.write_record([r.unit_id.to_string(), members, r.plan_id.to_string()])
            .expect("in-memory write");
    }
    let mut out = String::new();
    for warning in &table.warnings {
        out.push_str(&format!("# warning: {warning}\n"));
    }
    out + &finish(w)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

fn malformed(line: usize, message: impl Into<String>) -> TableError {
    TableError::Malformed {
        line,
        message: message.into(),
    }
}

/// Parses a plan table back into codes over `vs`, matching cells by their rendered text.
pub fn read_plans_csv(text: &str, vs: &VariableSet, declared: &VariableSet) -> Result<PlanMatrix, TableError> {
    let target = declared_order(vs, declared)?;
    let count = vs.condition_count();
    if count > 1 << 20 {
        return Err(malformed(0, "condition space too large to match rendered cells"));
    }
    let mut lookup = HashMap::new();
    for code in 0..count {
        let flat = flatten_code(ConditionCode(code), vs, &target)?;
        lookup.insert(target.render(flat)?, ConditionCode(code));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if headers.get(0) != Some("plan_id") || headers.len() < 2 {
        return Err(malformed(1, "expected header plan_id,trial_1,..."));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        if record.get(0).and_then(|s| s.trim().parse::<usize>().ok()) != Some(i) {
            return Err(malformed(line, format!("expected plan_id {i}")));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|cell| {
                lookup
                    .get(cell.trim())
                    .copied()
                    .ok_or_else(|| malformed(line, format!("`{cell}` is not a condition of this design")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed(2, "no plans"));
    }
    Ok(PlanMatrix::from_rows(rows, vs.clone())?)
}

/// Parses an assignment table (comment lines are returned as warnings).
pub fn read_assignment_csv(text: &str) -> Result<AssignmentTable, TableError> {
    let warnings = text
        .lines()
        .filter_map(|l| l.strip_prefix("# warning: "))
        .map(str::to_string)
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| malformed(line, e.to_string()))?;
        let num = |k: usize| -> Result<u64, TableError> {
            record
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed(line, format!("column {} is not a number", k + 1)))
        };
        let members = match record.get(1) {
            Some("") | None => Vec::new(),
            Some(s) => s
                .split(';')
                .map(|m| m.parse().map_err(|_| malformed(line, format!("bad member `{m}`"))))
                .collect::<Result<_, _>>()?,
        };
        rows.push(Assignment {
            unit_id: num(0)?,
            members,
            plan_id: num(2)? as usize,
        });
    }
    Ok(AssignmentTable { rows, warnings })
}
