//! Plan-matrix construction.
//!
//! Leaves are solved by backtracking search. In Kronecker mode, `cross` and
//! `nest` are then composed algebraically from their children's solutions;
//! in scoped mode a `nest` is searched as one problem so that every block may
//! hold a different inner solution.

mod csp;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{row_choices, DesignNode, LeafVar, NestMode, ResolvedDesign, Role};
use crate::error::{ConditionError, SolveError};
use crate::matrix::PlanMatrix;
use crate::variable::{combine_codes, ConditionCode};
use crate::verify;

use csp::{Outcome, Search};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_ENUMERATION_CAP: usize = 64;

/// Search nodes allowed in the first attempt; doubles after each restart.
const INITIAL_BUDGET: u64 = 20_000;

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub timeout: Duration,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

pub fn solve(rd: &ResolvedDesign, seed: u64) -> Result<PlanMatrix, SolveError> {
    solve_with(rd, seed, SolveOptions::default())
}

pub fn solve_with(rd: &ResolvedDesign, seed: u64, options: SolveOptions) -> Result<PlanMatrix, SolveError> {
    let deadline = Instant::now() + options.timeout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = solve_node(rd, &mut rng, deadline, options.timeout)?;
    let checks = verify::check_design(&m, rd).map_err(|e| SolveError::Unsatisfiable(e.to_string()))?;
    if let Some(bad) = checks.iter().find(|c| !c.pass) {
        return Err(SolveError::Unsatisfiable(format!(
            "{} on {} (composed solution failed verification)",
            bad.name, bad.variable
        )));
    }
    Ok(m)
}

fn solve_node(
    rd: &ResolvedDesign,
    rng: &mut ChaCha8Rng,
    deadline: Instant,
    timeout: Duration,
) -> Result<PlanMatrix, SolveError> {
    match &rd.node {
        DesignNode::Cross { left, right } => {
            let l = solve_node(left, rng, deadline, timeout)?;
            let r = solve_node(right, rng, deadline, timeout)?;
            solve_cross(&l, &r)
        }
        DesignNode::Nest { inner, outer } if rd.nest_mode == NestMode::Kron => {
            let o = solve_node(outer, rng, deadline, timeout)?;
            let i = solve_node(inner, rng, deadline, timeout)?;
            solve_nest_kron(&i, &o)
        }
        DesignNode::Leaf { vars, distinct_rows: true } if is_exhaustive(rd, vars) => Ok(every_row(rd, vars, rng)?),
        _ => search(rd, rng.next_u64(), deadline, timeout),
    }
}

fn is_exhaustive(rd: &ResolvedDesign, vars: &[LeafVar]) -> bool {
    let t = rd.shape.trials;
    let rows = vars.iter().fold(1u128, |acc, lv| {
        let n = rd.variables.variables()[lv.var].level_count();
        acc.saturating_mul(row_choices(lv.role, n, t, lv.start.is_some()))
    });
    rows == rd.shape.plans as u128
}

/// Level sequences one variable may take along a row.
fn sequences(lv: &LeafVar, levels: usize, trials: usize) -> Vec<Vec<usize>> {
    if lv.role == Role::Between {
        return match lv.start {
            Some(s) => vec![vec![s; trials]],
            None => (0..levels).map(|l| vec![l; trials]).collect(),
        };
    }
    let cap = match lv.role {
        Role::Counterbalanced | Role::Within if trials >= levels => trials / levels,
        Role::Counterbalanced | Role::Within => 1,
        _ => trials,
    };
    let mut out = Vec::new();
    let mut seq = Vec::with_capacity(trials);
    let mut used = vec![0; levels];
    fn go(seq: &mut Vec<usize>, used: &mut [usize], cap: usize, trials: usize, start: Option<usize>, out: &mut Vec<Vec<usize>>) {
        if seq.len() == trials {
            out.push(seq.clone());
            return;
        }
        for l in 0..used.len() {
            if used[l] == cap || (seq.is_empty() && start.is_some_and(|s| s != l)) {
                continue;
            }
            used[l] += 1;
            seq.push(l);
            go(seq, used, cap, trials, start, out);
            seq.pop();
            used[l] -= 1;
        }
    }
    go(&mut seq, &mut used, cap, trials, lv.start, &mut out);
    out
}

/// Every feasible row exactly once, in seeded order.
fn every_row(rd: &ResolvedDesign, vars: &[LeafVar], rng: &mut ChaCha8Rng) -> Result<PlanMatrix, ConditionError> {
    let t = rd.shape.trials;
    let per_var: Vec<Vec<Vec<usize>>> = vars
        .iter()
        .map(|lv| sequences(lv, rd.variables.variables()[lv.var].level_count(), t))
        .collect();
    let mut rows: Vec<Vec<ConditionCode>> = Vec::with_capacity(rd.shape.plans);
    let mut pick = vec![0; per_var.len()];
    let mut levels = vec![0; rd.variables.len()];
    loop {
        let row = (0..t)
            .map(|c| {
                for (k, lv) in vars.iter().enumerate() {
                    levels[lv.var] = per_var[k][pick[k]][c];
                }
                rd.variables.encode_indices(&levels)
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        // odometer over the per-variable choices
        let mut k = per_var.len();
        loop {
            if k == 0 {
                rows.shuffle(rng);
                return PlanMatrix::new(rd.shape.plans, t, rows.concat(), rd.variables.clone());
            }
            k -= 1;
            pick[k] += 1;
            if pick[k] < per_var[k].len() {
                break;
            }
            pick[k] = 0;
        }
    }
}

/// Seeded search with restarts on a growing node budget.
fn search(rd: &ResolvedDesign, seed: u64, deadline: Instant, timeout: Duration) -> Result<PlanMatrix, SolveError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut budget = INITIAL_BUDGET;
    loop {
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let mut s = Search::new(rd.shape, &rd.variables, &rd.constraints, Some(rng));
        match s.run(Some(budget), Some(deadline)) {
            Outcome::Found => {
                return Ok(PlanMatrix::new(
                    rd.shape.plans,
                    rd.shape.trials,
                    s.cells(),
                    rd.variables.clone(),
                )?)
            }
            Outcome::Exhausted => return Err(SolveError::Unsatisfiable(s.hardest_family().to_string())),
            Outcome::Timeout => return Err(SolveError::Timeout(timeout)),
            Outcome::Budget => budget = budget.saturating_mul(2),
        }
    }
}

/// Row-pairwise combination: row `(i, j)` holds `combine(left[i][c], right[j][c])`.
pub fn solve_cross(left: &PlanMatrix, right: &PlanMatrix) -> Result<PlanMatrix, SolveError> {
    if left.trials() != right.trials() {
        return Err(SolveError::CrossArityMismatch {
            left: left.trials(),
            right: right.trials(),
        });
    }
    let vs = left.variables().union(right.variables())?;
    let mut cells = Vec::with_capacity(left.plans() * right.plans() * left.trials());
    for i in 0..left.plans() {
        for j in 0..right.plans() {
            for c in 0..left.trials() {
                cells.push(combine_codes(left.get(i, c), right.get(j, c), right.variables()));
            }
        }
    }
    Ok(PlanMatrix::new(left.plans() * right.plans(), left.trials(), cells, vs)?)
}

/// Kronecker composition: block `(i_out, s)` holds the inner matrix with outer condition `outer[i_out][s]`.
pub fn solve_nest_kron(inner: &PlanMatrix, outer: &PlanMatrix) -> Result<PlanMatrix, SolveError> {
    if !outer.variables().is_disjoint(inner.variables()) {
        let shared = inner
            .variables()
            .base_names()
            .into_iter()
            .find(|n| outer.variables().base_names().contains(n))
            .unwrap_or_default()
            .to_string();
        return Err(SolveError::Condition(ConditionError::VariableOverlap(shared)));
    }
    let vs = outer.variables().union(inner.variables())?;
    let (ip, it) = inner.shape();
    let (op, ot) = outer.shape();
    let mut cells = Vec::with_capacity(ip * it * op * ot);
    for io in 0..op {
        for ii in 0..ip {
            for s in 0..ot {
                for c in 0..it {
                    cells.push(combine_codes(outer.get(io, s), inner.get(ii, c), inner.variables()));
                }
            }
        }
    }
    Ok(PlanMatrix::new(op * ip, ot * it, cells, vs)?)
}

/// Every matrix satisfying the resolved constraints, in row-major
/// lexicographic order of cell codes.
pub struct Enumeration {
    search: Search,
    remaining: Option<usize>,
    done: bool,
}

impl Enumeration {
    /// Advances to the next solution without building a matrix.
    pub fn advance(&mut self) -> bool {
        if self.done || self.remaining == Some(0) {
            return false;
        }
        match self.search.run(None, None) {
            Outcome::Found => {
                if let Some(r) = self.remaining.as_mut() {
                    *r -= 1;
                }
                true
            }
            _ => {
                self.done = true;
                false
            }
        }
    }

    /// Number of remaining solutions (up to the limit).
    pub fn count_all(mut self) -> usize {
        let mut n = 0;
        while self.advance() {
            n += 1;
        }
        n
    }

    fn current(&self) -> PlanMatrix {
        let shape = self.search.shape();
        PlanMatrix::new(
            shape.plans,
            shape.trials,
            self.search.cells(),
            self.search.variables().clone(),
        )
        .expect("search only assigns valid codes")
    }
}

impl Iterator for Enumeration {
    type Item = PlanMatrix;

    fn next(&mut self) -> Option<PlanMatrix> {
        self.advance().then(|| self.current())
    }
}

/// Enumerates with the default cell cap.
pub fn enumerate(rd: &ResolvedDesign, limit: Option<usize>) -> Result<Enumeration, SolveError> {
    enumerate_with_cap(rd, limit, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_with_cap(rd: &ResolvedDesign, limit: Option<usize>, cap: usize) -> Result<Enumeration, SolveError> {
    if limit.is_none() && rd.cells() > cap {
        return Err(SolveError::DesignTooLarge { cells: rd.cells(), cap });
    }
    Ok(Enumeration {
        search: Search::new(rd.shape, &rd.variables, &rd.constraints, None),
        remaining: limit,
        done: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::DesignAst;
    use crate::constraints::{resolve, resolve_with, ResolveOptions};
    use crate::variable::{ConditionCode, Variable, VariableSet};
    use crate::verify::{check_block_structure, check_fisher_latin_square};

    fn var(name: &str, n: usize) -> Variable {
        Variable::new(name, (0..n).map(|i| format!("{name}{i}"))).unwrap()
    }

    fn latin(n: usize) -> ResolvedDesign {
        let vs = VariableSet::new(vec![var("x", n)]).unwrap();
        resolve(&DesignAst::Empty.counterbalance("x").limit_plans(n as u64), &vs).unwrap()
    }

    fn is_latin(m: &PlanMatrix) -> bool {
        let n = m.plans();
        m.trials() == n
            && (0..n).all(|r| (0..n).map(|c| m.get(r, c)).collect::<std::collections::HashSet<_>>().len() == n)
            && (0..n).all(|c| (0..n).map(|r| m.get(r, c)).collect::<std::collections::HashSet<_>>().len() == n)
    }

    #[test]
    fn latin_square_counts() {
        assert_eq!(enumerate(&latin(1), None).unwrap().count_all(), 1);
        assert_eq!(enumerate(&latin(2), None).unwrap().count_all(), 2);
        assert_eq!(enumerate(&latin(3), None).unwrap().count_all(), 12);
        assert_eq!(enumerate(&latin(4), None).unwrap().count_all(), 576);
    }

    #[test]
    fn order_three_matches_brute_force() {
        // every 3x3 grid over 3 symbols, filtered by the Latin property
        let vs = VariableSet::new(vec![var("x", 3)]).unwrap();
        let mut brute = Vec::new();
        for g in 0..3u64.pow(9) {
            let cells: Vec<ConditionCode> = (0..9).map(|k| ConditionCode(g / 3u64.pow(8 - k) % 3)).collect();
            let m = PlanMatrix::new(3, 3, cells, vs.clone()).unwrap();
            if is_latin(&m) {
                brute.push(m);
            }
        }
        let found: Vec<PlanMatrix> = enumerate(&latin(3), None).unwrap().collect();
        assert_eq!(found, brute);
    }

    #[test]
    fn enumeration_cap_and_limit() {
        assert!(matches!(
            enumerate(&latin(9), None),
            Err(SolveError::DesignTooLarge { cells: 81, cap: 64 })
        ));
        assert_eq!(enumerate(&latin(9), Some(3)).unwrap().count(), 3);
    }

    #[test]
    fn solve_is_seeded_and_sound() {
        let rd = latin(6);
        let a = solve(&rd, 7).unwrap();
        assert!(is_latin(&a));
        assert_eq!(a, solve(&rd, 7).unwrap());
        let distinct: std::collections::HashSet<_> = (0..10).map(|s| solve(&rd, s).unwrap()).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn trivial_single_cell() {
        let m = solve(&latin(1), 0).unwrap();
        assert_eq!(m.shape(), (1, 1));
    }

    fn two(name: &str, a: &str, b: &str) -> VariableSet {
        VariableSet::new(vec![Variable::new(name, [a, b]).unwrap()]).unwrap()
    }

    fn m2(rows: [[u64; 2]; 2], vs: VariableSet) -> PlanMatrix {
        PlanMatrix::from_rows(
            rows.iter().map(|r| r.iter().map(|&c| ConditionCode(c)).collect()).collect(),
            vs,
        )
        .unwrap()
    }

    #[test]
    fn cross_of_two_squares() {
        let xy = m2([[0, 1], [1, 0]], two("u", "X", "Y"));
        let ab = m2([[0, 1], [1, 0]], two("v", "A", "B"));
        let m = solve_cross(&xy, &ab).unwrap();
        let rendered: Vec<String> = (0..4)
            .map(|r| format!("{}-{}", m.render_cell(r, 0).replace('-', ""), m.render_cell(r, 1).replace('-', "")))
            .collect();
        assert_eq!(rendered, ["XA-YB", "XB-YA", "YA-XB", "YB-XA"]);
        let one = PlanMatrix::from_rows(vec![vec![ConditionCode(0), ConditionCode(1)]], two("u", "X", "Y")).unwrap();
        assert_eq!(solve_cross(&one, &ab).unwrap().plans(), 2);
        let three = PlanMatrix::from_rows(vec![vec![ConditionCode(0); 3]], two("w", "P", "Q")).unwrap();
        assert!(matches!(solve_cross(&three, &ab), Err(SolveError::CrossArityMismatch { .. })));
    }

    #[test]
    fn cross_of_order_three_squares_is_balanced() {
        let vs = VariableSet::new(vec![var("a", 3), var("b", 3)]).unwrap();
        let a = solve(&resolve(&DesignAst::Empty.counterbalance("a").limit_plans(3), &vs).unwrap(), 1).unwrap();
        let b = solve(&resolve(&DesignAst::Empty.counterbalance("b").limit_plans(3), &vs).unwrap(), 2).unwrap();
        let m = solve_cross(&a, &b).unwrap();
        assert_eq!(m.shape(), (9, 3));
        for v in 0..2 {
            for r in 0..9 {
                let mut counts = [0; 3];
                for c in 0..3 {
                    counts[m.level(r, c, v)] += 1;
                }
                assert_eq!(counts, [1, 1, 1]);
            }
            for c in 0..3 {
                let mut counts = [0; 3];
                for r in 0..9 {
                    counts[m.level(r, c, v)] += 1;
                }
                assert_eq!(counts, [3, 3, 3]);
            }
        }
    }

    #[test]
    fn kronecker_of_latin_squares_is_latin() {
        let vs = VariableSet::new(vec![var("a", 3), var("b", 3)]).unwrap();
        let a = solve(&resolve(&DesignAst::Empty.counterbalance("a").limit_plans(3), &vs).unwrap(), 3).unwrap();
        let b = solve(&resolve(&DesignAst::Empty.counterbalance("b").limit_plans(3), &vs).unwrap(), 4).unwrap();
        let k = solve_nest_kron(&b, &a).unwrap();
        let ab = VariableSet::new(vec![Variable::compound(&[&var("a", 3), &var("b", 3)]).unwrap()]).unwrap();
        let fused = PlanMatrix::new(9, 9, k.cells().to_vec(), ab).unwrap();
        assert!(check_fisher_latin_square(&fused, "a-b").unwrap().pass);
    }

    #[test]
    fn kron_with_unit_outer_appends_condition() {
        let inner = m2([[0, 1], [1, 0]], two("v", "A", "B"));
        let outer = PlanMatrix::from_rows(vec![vec![ConditionCode(1)]], two("u", "X", "Y")).unwrap();
        let k = solve_nest_kron(&inner, &outer).unwrap();
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k.to_string(), "Y-A Y-B\nY-B Y-A\n");
        assert!(solve_nest_kron(&inner, &inner).is_err());
    }

    fn nested_squares(mode: NestMode) -> ResolvedDesign {
        let vs = VariableSet::new(vec![var("a", 2), var("b", 2)]).unwrap();
        let ast = DesignAst::nest(
            DesignAst::Empty.counterbalance("b").limit_plans(2),
            DesignAst::Empty.counterbalance("a").limit_plans(2),
        );
        resolve_with(&ast, &vs, ResolveOptions { nest_mode: mode, units: None }).unwrap()
    }

    #[test]
    fn nested_squares_block_structure() {
        let rd = nested_squares(NestMode::Kron);
        let m = solve(&rd, 0).unwrap();
        assert!(check_block_structure(&m, &rd.blocks[0]).unwrap().pass);
        assert_eq!(enumerate(&rd, None).unwrap().count(), 4);
    }

    #[test]
    fn scoped_nest_is_strict_subset_of_latin_squares() {
        let rd = nested_squares(NestMode::Scoped);
        let all: Vec<PlanMatrix> = enumerate(&rd, None).unwrap().collect();
        assert_eq!(all.len(), 32);
        assert!(all.iter().all(is_latin));
        let kron = nested_squares(NestMode::Kron);
        for m in enumerate(&kron, None).unwrap() {
            assert!(all.contains(&m));
        }
    }

    #[test]
    fn unsatisfiable_reports_family() {
        let vs = VariableSet::new(vec![var("x", 2)]).unwrap();
        let rd = resolve(&DesignAst::Empty.within_subjects("x").num_trials(2).limit_plans(1), &vs).unwrap();
        let mut rd = rd;
        rd.constraints.push(crate::constraints::Constraint::new(
            crate::constraints::ConstraintKind::ConstantInRow { var: 0 },
            crate::constraints::Scope::full(rd.shape),
        ));
        match solve(&rd, 0) {
            Err(SolveError::Unsatisfiable(f)) => assert!(f == "RowBalance" || f == "ConstantInRow", "{f}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_two_factor_counterbalance_lists_every_row() {
        let vs = VariableSet::new(vec![var("x", 3), var("y", 3)]).unwrap();
        let rd = resolve(&DesignAst::Empty.counterbalance("x").counterbalance("y").num_trials(6), &vs).unwrap();
        // 6!/(2!2!2!) orderings per factor
        assert_eq!(rd.shape.plans, 90 * 90);
        let m = solve(&rd, 3).unwrap();
        let rows: std::collections::HashSet<&[ConditionCode]> = m.rows().collect();
        assert_eq!(rows.len(), 8100);
        assert_ne!(m, solve(&rd, 4).unwrap());
    }

    #[test]
    fn full_orderings_with_fixed_start() {
        let vs = VariableSet::new(vec![var("x", 4)]).unwrap();
        let ast = DesignAst::Empty.counterbalance("x").start_with("x", "x2").limit_plans(6);
        let rd = resolve(&ast, &vs).unwrap();
        let m = solve(&rd, 0).unwrap();
        // first fixed, then any order of the other three levels
        let rows: std::collections::HashSet<&[ConditionCode]> = m.rows().collect();
        assert_eq!(rows.len(), 6);
        assert!(m.rows().all(|r| r[0] == ConditionCode(2)));
    }

    #[test]
    fn timeout_is_reported() {
        let rd = latin(30);
        let r = solve_with(&rd, 0, SolveOptions { timeout: Duration::ZERO });
        assert!(matches!(r, Err(SolveError::Timeout(_))));
    }
}
