//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::time::{Duration, Instant};

use common::{design_path, program, resolved, run_cli, CORPUS};
use expdesign::assign::{build_units, match_units, Policy};
use expdesign::error::{AssignError, ResolveError};
use expdesign::solver::{enumerate, solve, solve_nest_kron};
use expdesign::verify::{check_apa_balance, check_design, check_fisher_latin_square, classify, design_report};
use expdesign::{
    parse, render, resolve, resolve_program, resolve_with, ConditionCode, DesignAst, NestMode, PlanMatrix,
    ResolveOptions, Variable, VariableSet,
};

const FFL_LIMIT: Duration = Duration::from_secs(1);
const LS5_LIMIT: Duration = Duration::from_secs(600);
const FULL6_LIMIT: Duration = Duration::from_secs(300);
const LS10_LIMIT: Duration = Duration::from_secs(5);
const ORDER4_LATIN_SQUARES: usize = 576;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn path(name: &str) -> String {
    design_path(name).to_str().unwrap().to_string()
}

fn count_only(name: &str, extra: &[&str]) -> Result<usize, String> {
    let mut args = vec!["enumerate", "--count-only"];
    let p = path(name);
    args.push(&p);
    args.extend_from_slice(extra);
    let (code, out, err) = run_cli(&args);
    ensure(code == 0, format!("{name}: exit {code}: {err}"))?;
    out.trim().parse().map_err(|e| format!("{name}: {e}"))
}

fn ffl_reproduction() -> Outcome {
    let (p, rd) = resolved("ffl", NestMode::Kron);
    let (m, took) = timed(|| solve(&rd, p.assign.seed.unwrap()));
    let m = m.map_err(|e| e.to_string())?;
    ensure(took < FFL_LIMIT, format!("took {took:?}"))?;
    ensure((m.plans(), m.trials()) == (4, 4), format!("shape {}x{}", m.plans(), m.trials()))?;
    let report = design_report(&m, &rd).map_err(|e| e.to_string())?;
    ensure(report.passed(), format!("{:?}", report.failures().collect::<Vec<_>>()))?;

    // independent reading of the rendered cells
    let m = m.in_declared_order(&p.variables).map_err(|e| e.to_string())?;
    let cell = |r: usize, c: usize| -> Vec<String> { m.render_cell(r, c).split('-').map(str::to_string).collect() };
    let mut rows = HashSet::new();
    let mut column_counts: HashMap<(usize, usize, String), usize> = HashMap::new();
    for r in 0..4 {
        let cells: Vec<Vec<String>> = (0..4).map(|c| cell(r, c)).collect();
        for (c, parts) in cells.iter().enumerate() {
            let expected = if c < 2 { "creation" } else { "editing" };
            ensure(parts[2] == expected, format!("row {r} trial {c} is {}", parts[2]))?;
            for v in 0..2 {
                *column_counts.entry((c, v, parts[v].clone())).or_default() += 1;
            }
        }
        for v in 0..2 {
            let levels: Vec<&str> = cells.iter().map(|p| p[v].as_str()).collect();
            for level in &levels {
                ensure(levels.iter().filter(|l| *l == level).count() == 2, format!("row {r} unbalanced"))?;
            }
        }
        let pairs: HashSet<(String, String)> = cells.iter().map(|p| (p[0].clone(), p[1].clone())).collect();
        ensure(pairs.len() < 4, format!("row {r} holds every interface/task pair"))?;
        rows.insert(cells);
    }
    ensure(rows.len() == 4, "repeated plan")?;
    ensure(column_counts.values().all(|&n| n == 2), "column imbalance")?;
    Ok(format!("4x4, creation block first, balanced, distinct, partial pairs; {took:?} < {FFL_LIMIT:?}"))
}

fn latin_counts() -> Outcome {
    // brute-force oracle for order 3: filter all 3^9 grids
    let brute = (0..3u32.pow(9))
        .filter(|g| {
            let cell = |r: u32, c: u32| g / 3u32.pow(r * 3 + c) % 3;
            (0..3).all(|i| {
                let row: HashSet<u32> = (0..3).map(|c| cell(i, c)).collect();
                let col: HashSet<u32> = (0..3).map(|r| cell(r, i)).collect();
                row.len() == 3 && col.len() == 3
            })
        })
        .count();
    let one = count_only("latin1", &[])?;
    let three = count_only("latin3", &[])?;
    let (five, took) = timed(|| count_only("latin5", &[]));
    let five = five?;
    ensure(one == 1, format!("order 1: {one}"))?;
    ensure(three == brute && brute == 12, format!("order 3: {three}, brute force {brute}"))?;
    ensure(five == 161_280, format!("order 5: {five}"))?;
    ensure(took < LS5_LIMIT, format!("order 5 took {took:?}"))?;
    Ok(format!("1 / {three} / {five}; order 5 in {took:?} < {LS5_LIMIT:?}"))
}

fn nested_subset() -> Outcome {
    let (_, rd) = resolved("nested2x2", NestMode::Scoped);
    let members: Vec<PlanMatrix> = enumerate(&rd, None).map_err(|e| e.to_string())?.collect();
    for m in &members {
        // each combined condition code becomes one symbol
        let symbols = VariableSet::new(vec![Variable::new(
            "symbol",
            (0..m.variables().condition_count()).map(|i| i.to_string()),
        )
        .unwrap()])
        .unwrap();
        let latin = PlanMatrix::new(m.plans(), m.trials(), m.cells().to_vec(), symbols).map_err(|e| e.to_string())?;
        ensure(check_fisher_latin_square(&latin, "symbol").unwrap().pass, format!("not Latin:\n{m}"))?;
    }
    ensure(!members.is_empty() && members.len() < ORDER4_LATIN_SQUARES, format!("{} members", members.len()))?;
    Ok(format!("{} members, all Latin over combined symbols, < {ORDER4_LATIN_SQUARES}", members.len()))
}

fn full_counterbalance() -> Outcome {
    let (p, rd) = resolved("fullcb6", NestMode::Kron);
    let (m, took) = timed(|| solve(&rd, p.assign.seed.unwrap_or(0)));
    let m = m.map_err(|e| e.to_string())?;
    ensure(took < FULL6_LIMIT, format!("took {took:?}"))?;
    let rows: HashSet<&[ConditionCode]> = m.rows().collect();
    ensure(m.plans() == 720 && rows.len() == 720, format!("{} plans, {} distinct", m.plans(), rows.len()))?;
    for c in 0..m.trials() {
        let mut counts = HashMap::new();
        for r in 0..m.plans() {
            *counts.entry(m.get(r, c)).or_insert(0) += 1;
        }
        ensure(counts.len() == 6 && counts.values().all(|&n| n == 120), format!("column {c}: {counts:?}"))?;
    }
    let (p10, rd10) = resolved("latin10", NestMode::Kron);
    let (m10, took10) = timed(|| solve(&rd10, p10.assign.seed.unwrap_or(0)));
    let m10 = m10.map_err(|e| e.to_string())?;
    ensure(took10 < LS10_LIMIT, format!("order 10 took {took10:?}"))?;
    ensure(check_fisher_latin_square(&m10, "symbol").unwrap().pass, "order 10 not Latin")?;
    Ok(format!("720 distinct, 120 per column in {took:?} < {FULL6_LIMIT:?}; order-10 square in {took10:?} < {LS10_LIMIT:?}"))
}

fn assignment_arithmetic() -> Outcome {
    let (p, rd) = resolved("ffl", NestMode::Kron);
    let m = solve(&rd, 42).map_err(|e| e.to_string())?;
    let units = build_units(p.assigned_units()).map_err(|e| e.to_string())?;
    let table = match_units(&units, &m, 42, Policy::Strict).map_err(|e| e.to_string())?;
    ensure(table.plan_counts(4) == vec![7; 4], format!("{:?}", table.plan_counts(4)))?;

    let (p27, rd27) = resolved("ffl_27", NestMode::Kron);
    let m27 = solve(&rd27, 42).map_err(|e| e.to_string())?;
    let units27 = build_units(p27.assigned_units()).map_err(|e| e.to_string())?;
    let uneven = match_units(&units27, &m27, 42, Policy::Strict);
    ensure(matches!(uneven, Err(AssignError::UnevenPartition { .. })), format!("27 units: {uneven:?}"))?;

    let (pa, rda) = resolved("andalibi", NestMode::Kron);
    let ma = solve(&rda, pa.assign.seed.unwrap_or(0)).map_err(|e| e.to_string())?;
    let unitsa = build_units(pa.assigned_units()).map_err(|e| e.to_string())?;
    let a = match_units(&unitsa, &ma, 0, Policy::AllowUneven).map_err(|e| e.to_string())?;
    ensure(unitsa.len() == 51 && !a.warnings.is_empty(), "51 units gave no warning")?;
    let (code, _, err) = run_cli(&["assign", &path("andalibi"), "--policy", "allow-uneven", "--seed", "0"]);
    ensure(code == 0 && err.contains("warning"), format!("cli: exit {code}: {err}"))?;
    Ok(format!("28 -> 7 x 4; 27 -> UnevenPartition; 51 -> warning over {} plans", ma.plans()))
}

fn corpus_coverage() -> Outcome {
    for (name, expected) in CORPUS {
        for mode in [NestMode::Kron, NestMode::Scoped] {
            let (p, rd) = resolved(name, mode);
            let m = solve(&rd, p.assign.seed.unwrap_or(0)).map_err(|e| format!("{name}: {e}"))?;
            let report = design_report(&m, &rd).map_err(|e| format!("{name}: {e}"))?;
            ensure(report.passed(), format!("{name} ({mode:?}) failed self-verification"))?;
            let c = classify(&m);
            for (var, class) in *expected {
                let got = c.get(var).map(|s| serde_json::to_value(&s.class).unwrap());
                ensure(got.as_ref().is_some_and(|g| g == class), format!("{name}: {var} is {got:?}, want {class}"))?;
            }
        }
    }
    let rejected = resolve_program(&program("desai_chin"), NestMode::Kron);
    ensure(
        matches!(rejected, Err(ResolveError::PartialNestingUnsupported(_))),
        format!("desai_chin: {rejected:?}"),
    )?;
    Ok(format!("{} studies self-verify and classify in both nest modes; partial nesting rejected", CORPUS.len()))
}

fn property_suites() -> Outcome {
    // encode/decode over every code of a mixed-radix set
    let vs = VariableSet::new(
        [2usize, 3, 4, 1]
            .iter()
            .enumerate()
            .map(|(i, &n)| Variable::new(format!("v{i}"), (0..n).map(|l| format!("l{l}"))).unwrap())
            .collect(),
    )
    .unwrap();
    for code in 0..vs.condition_count() {
        let idx = vs.decode(ConditionCode(code)).unwrap();
        ensure(vs.encode_indices(&idx).unwrap() == ConditionCode(code), format!("code {code}"))?;
    }

    // parse/render over the corpus files
    let mut files = 0;
    for entry in fs::read_dir(common::designs_dir()).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let p = parse(&text).map_err(|e| e.to_string())?;
        ensure(parse(&render(&p)).map_err(|e| e.to_string())? == p, "render round trip")?;
        files += 1;
    }

    // soundness over several seeds
    for (name, _) in CORPUS {
        let (_, rd) = resolved(name, NestMode::Scoped);
        for seed in 0..3 {
            let m = solve(&rd, seed).map_err(|e| e.to_string())?;
            ensure(check_design(&m, &rd).unwrap().iter().all(|c| c.pass), format!("{name} seed {seed}"))?;
        }
    }

    // Kronecker solutions are scoped solutions
    for (a, b) in [(2usize, 2usize), (2, 3), (3, 2), (3, 3)] {
        let vs = VariableSet::new(vec![
            Variable::new("outer", (0..a).map(|i| format!("o{i}"))).unwrap(),
            Variable::new("inner", (0..b).map(|i| format!("i{i}"))).unwrap(),
        ])
        .unwrap();
        let sq = |v: &str, k: usize| DesignAst::Empty.counterbalance(v).limit_plans(k as u64);
        let scoped = resolve_with(
            &DesignAst::nest(sq("inner", b), sq("outer", a)),
            &vs,
            ResolveOptions { nest_mode: NestMode::Scoped, units: None },
        )
        .unwrap();
        let outer = resolve(&sq("outer", a), &vs).unwrap();
        let inner = resolve(&sq("inner", b), &vs).unwrap();
        for o in enumerate(&outer, None).unwrap() {
            for i in enumerate(&inner, None).unwrap() {
                let k = solve_nest_kron(&i, &o).map_err(|e| e.to_string())?;
                ensure(check_design(&k, &scoped).unwrap().iter().all(|c| c.pass), format!("order {a}x{b}"))?;
            }
        }
    }

    // Fisher implies APA over every 3x3 grid
    let one = VariableSet::new(vec![Variable::new("s", ["a", "b", "c"]).unwrap()]).unwrap();
    for g in 0..3u64.pow(9) {
        let cells = (0..9).map(|k| ConditionCode(g / 3u64.pow(k) % 3)).collect();
        let m = PlanMatrix::new(3, 3, cells, one.clone()).unwrap();
        if check_fisher_latin_square(&m, "s").unwrap().pass {
            ensure(check_apa_balance(&m, "s").unwrap().pass, format!("grid {g}"))?;
        }
    }

    // byte determinism end to end
    let spec = path("ffl");
    let first = run_cli(&["assign", &spec, "--seed", "9"]);
    let second = run_cli(&["assign", &spec, "--seed", "9"]);
    ensure(first.0 == 0 && first == second, "assign output differs between runs")?;

    Ok(format!("round trips ({files} programs), soundness, Kronecker containment, Fisher => APA, determinism"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("FFL reproduction", ffl_reproduction),
        ("Latin-square counts", latin_counts),
        ("nested squares are a strict Latin subset", nested_subset),
        ("full counterbalance scaling", full_counterbalance),
        ("assignment arithmetic", assignment_arithmetic),
        ("evaluation corpus coverage", corpus_coverage),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {} {name}: panicked", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
