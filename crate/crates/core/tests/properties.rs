mod common;

use std::collections::HashSet;

use expdesign::ast::{AssignDirective, DesignBinding, Method, UnitsBinding, VarRef};
use expdesign::constraints::{resolve_with, ResolveOptions};
use expdesign::solver::{enumerate, solve, solve_nest_kron};
use expdesign::verify::{check_apa_balance, check_design, check_fisher_latin_square};
use expdesign::{parse, render, ConditionCode, DesignAst, NestMode, PlanMatrix, Program, UnitsSpec, Variable, VariableSet};
use proptest::prelude::*;

fn var_set(levels: &[usize]) -> VariableSet {
    VariableSet::new(
        levels
            .iter()
            .enumerate()
            .map(|(i, &n)| Variable::new(format!("v{i}"), (0..n).map(|l| format!("l{l}"))).unwrap())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn encode_decode_round_trip(levels in prop::collection::vec(1usize..6, 1..5), seed in any::<u64>()) {
        let vs = var_set(&levels);
        let code = ConditionCode(seed % vs.condition_count());
        let idx = vs.decode(code).unwrap();
        prop_assert_eq!(vs.encode_indices(&idx).unwrap(), code);
        let names = vs.decode_names(code).unwrap();
        prop_assert_eq!(vs.encode(&names).unwrap(), code);
    }

    #[test]
    fn projection_agrees_with_decoding(levels in prop::collection::vec(1usize..5, 2..5), seed in any::<u64>(), pick in any::<u8>()) {
        let vs = var_set(&levels);
        let chosen: Vec<String> = vs.variables().iter().enumerate()
            .filter(|(i, _)| pick & (1 << i) != 0)
            .map(|(_, v)| v.name().to_string())
            .rev()
            .collect();
        let onto = vs.select(&chosen).unwrap();
        let code = ConditionCode(seed % vs.condition_count());
        let projected = vs.projector(&onto).unwrap().apply(code);
        let full = vs.decode_names(code).unwrap();
        let expected: Vec<&str> = chosen.iter().map(|n| full[vs.index_of(n).unwrap()]).collect();
        prop_assert_eq!(onto.decode_names(projected).unwrap(), expected);
    }

    #[test]
    fn parse_render_round_trip(p in program()) {
        let text = render(&p);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p);
    }

    #[test]
    fn solver_output_satisfies_constraints(n in 1usize..5, m in 1usize..4, seed in any::<u64>(), shape in 0u8..4, scoped in any::<bool>()) {
        let vs = var_set(&[n, m]);
        let square = |v: &str, k: usize| DesignAst::Empty.counterbalance(v).limit_plans(k as u64);
        let ast = match shape {
            0 => square("v0", n),
            1 => DesignAst::nest(square("v0", n), square("v1", m)),
            2 => DesignAst::nest(DesignAst::Empty.within_subjects("v0"), DesignAst::Empty.between_subjects("v1")),
            _ => DesignAst::Empty.between_subjects("v0").between_subjects("v1"),
        };
        let mode = if scoped { NestMode::Scoped } else { NestMode::Kron };
        let rd = resolve_with(&ast, &vs, ResolveOptions { nest_mode: mode, units: Some(4) }).unwrap();
        let out = solve(&rd, seed).unwrap();
        prop_assert!(check_design(&out, &rd).unwrap().iter().all(|c| c.pass));
    }
}

const LEVEL_CHARS: &[char] = &['a', 'b', 'Z', '1', '_', ' ', '"', '\\', '\n', '-', 'é'];

fn level_name() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(LEVEL_CHARS), 1..5).prop_map(|cs| cs.into_iter().collect())
}

fn var_ref(vars: usize) -> BoxedStrategy<VarRef> {
    let named = (0..vars).prop_map(|i| VarRef::Named(format!("v{i}")));
    if vars < 2 {
        return named.boxed();
    }
    let multi = prop::sample::subsequence((0..vars).collect::<Vec<_>>(), 2..=vars)
        .prop_map(|s| VarRef::Multifact(s.into_iter().map(|i| format!("v{i}")).collect()));
    prop_oneof![named, multi].boxed()
}

fn method(vars: usize, levels: Vec<Vec<String>>) -> impl Strategy<Value = Method> {
    prop_oneof![
        var_ref(vars).prop_map(Method::Counterbalance),
        var_ref(vars).prop_map(Method::WithinSubjects),
        var_ref(vars).prop_map(Method::BetweenSubjects),
        (1u64..50).prop_map(Method::LimitPlans),
        (1u64..50).prop_map(Method::NumTrials),
        (0..vars, any::<prop::sample::Index>()).prop_map(move |(i, l)| {
            let lv = &levels[i];
            Method::StartWith(VarRef::Named(format!("v{i}")), lv[l.index(lv.len())].clone())
        }),
    ]
}

fn design(vars: usize, levels: Vec<Vec<String>>, earlier: usize) -> impl Strategy<Value = DesignAst> {
    let with_methods = move |levels: Vec<Vec<String>>| prop::collection::vec(method(vars, levels), 0..3);
    let leaf = with_methods(levels.clone()).prop_map(|ms| ms.into_iter().fold(DesignAst::Empty, DesignAst::with));
    // a bare design name is only valid as an argument of cross or nest
    let reference = move || (0..earlier.max(1)).prop_map(move |i| if earlier == 0 { DesignAst::Empty } else { DesignAst::Ref(format!("d{i}")) });
    leaf.prop_recursive(3, 12, 2, move |inner| {
        let child = prop_oneof![inner, reference()];
        (any::<bool>(), child.clone(), child, with_methods(levels.clone())).prop_map(|(is_cross, a, b, ms)| {
            let base = if is_cross { DesignAst::cross(a, b) } else { DesignAst::nest(a, b) };
            ms.into_iter().fold(base, DesignAst::with)
        })
    })
}

fn program() -> impl Strategy<Value = Program> {
    prop::collection::vec(prop::collection::hash_set(level_name(), 1..4), 1..4)
        .prop_flat_map(|level_sets| {
            let levels: Vec<Vec<String>> = level_sets.into_iter().map(|s| {
                let mut v: Vec<String> = s.into_iter().collect();
                v.sort();
                v
            }).collect();
            let vars = levels.len();
            let designs: Vec<_> = (0..3).map(|k| design(vars, levels.clone(), k)).collect();
            let units = prop_oneof![
                (1u64..100).prop_map(UnitsSpec::Units),
                (1u64..10, 1u64..5).prop_map(|(k, m)| UnitsSpec::Clusters(k, m)),
            ];
            (Just(levels), designs, units, prop::option::of(any::<u64>()), 0usize..3)
        })
        .prop_map(|(levels, designs, units, seed, pick)| {
            let variables = VariableSet::new(
                levels.iter().enumerate().map(|(i, l)| Variable::new(format!("v{i}"), l.clone()).unwrap()).collect(),
            )
            .unwrap();
            Program {
                variables,
                designs: designs
                    .into_iter()
                    .enumerate()
                    .map(|(i, design)| DesignBinding { name: format!("d{i}"), design })
                    .collect(),
                units: vec![UnitsBinding { name: "people".into(), units }],
                assign: AssignDirective { units: "people".into(), design: format!("d{pick}"), seed },
            }
        })
        .prop_filter("compound levels must stay distinct", |p| {
            // joined level names can collide when a level contains '-'
            let check = |v: &VarRef| match v {
                VarRef::Multifact(ns) => {
                    let parts: Vec<&Variable> = ns.iter().map(|n| p.variables.get(n).unwrap()).collect();
                    Variable::compound(&parts).is_ok()
                }
                VarRef::Named(_) => true,
            };
            p.designs.iter().all(|d| methods(&d.design).iter().all(|m| match m {
                Method::Counterbalance(v) | Method::WithinSubjects(v) | Method::BetweenSubjects(v) | Method::StartWith(v, _) => check(v),
                _ => true,
            }))
        })
}

fn methods(d: &DesignAst) -> Vec<Method> {
    match d {
        DesignAst::Empty | DesignAst::Ref(_) => vec![],
        DesignAst::Cross(a, b) | DesignAst::Nest { inner: a, outer: b } => [methods(a), methods(b)].concat(),
        DesignAst::Method { base, method } => {
            let mut v = methods(base);
            v.push(method.clone());
            v
        }
    }
}

fn latin(n: usize) -> (VariableSet, expdesign::ResolvedDesign) {
    let vs = var_set(&[n]);
    let rd = expdesign::resolve(&DesignAst::Empty.counterbalance("v0").limit_plans(n as u64), &vs).unwrap();
    (vs, rd)
}

#[test]
fn fisher_implies_apa_over_order_three() {
    let (vs, rd) = latin(3);
    let squares: Vec<PlanMatrix> = enumerate(&rd, None).unwrap().collect();
    assert_eq!(squares.len(), 12);
    for m in &squares {
        assert!(check_fisher_latin_square(m, "v0").unwrap().pass);
        assert!(check_apa_balance(m, "v0").unwrap().pass);
    }
    // every 3x3 grid that is APA-balanced but not Latin breaks rows only
    let mut apa_only = 0;
    for g in 0..3u64.pow(9) {
        let cells = (0..9).map(|k| ConditionCode(g / 3u64.pow(8 - k) % 3)).collect();
        let m = PlanMatrix::new(3, 3, cells, vs.clone()).unwrap();
        let fisher = check_fisher_latin_square(&m, "v0").unwrap().pass;
        let apa = check_apa_balance(&m, "v0").unwrap().pass;
        assert!(!fisher || apa);
        if apa && !fisher {
            apa_only += 1;
        }
    }
    // column permutations of each symbol per column: 6^3 grids, 12 of them Latin
    assert_eq!(apa_only, 216 - 12);
}

#[test]
fn kronecker_solutions_are_scoped_solutions() {
    for (a, b) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        let vs = VariableSet::new(vec![
            Variable::new("outer", (0..a).map(|i| format!("o{i}"))).unwrap(),
            Variable::new("inner", (0..b).map(|i| format!("i{i}"))).unwrap(),
        ])
        .unwrap();
        let sq = |v: &str, k: usize| DesignAst::Empty.counterbalance(v).limit_plans(k as u64);
        let ast = DesignAst::nest(sq("inner", b), sq("outer", a));
        let scoped = resolve_with(&ast, &vs, ResolveOptions { nest_mode: NestMode::Scoped, units: None }).unwrap();
        let outer_rd = expdesign::resolve(&sq("outer", a), &vs).unwrap();
        let inner_rd = expdesign::resolve(&sq("inner", b), &vs).unwrap();
        let inners: Vec<PlanMatrix> = enumerate(&inner_rd, None).unwrap().collect();
        let mut seen = HashSet::new();
        for o in enumerate(&outer_rd, None).unwrap() {
            for i in &inners {
                let k = solve_nest_kron(i, &o).unwrap();
                assert!(check_design(&k, &scoped).unwrap().iter().all(|c| c.pass), "{a}x{b}\n{k}");
                seen.insert(k);
            }
        }
        assert_eq!(seen.len(), [0, 1, 2, 12][a] * [0, 1, 2, 12][b]);
    }
}

#[test]
fn full_counterbalance_has_every_ordering() {
    for n in 1..=5usize {
        let vs = var_set(&[n]);
        let rd = expdesign::resolve(&DesignAst::Empty.counterbalance("v0"), &vs).unwrap();
        let m = solve(&rd, n as u64).unwrap();
        let rows: HashSet<Vec<ConditionCode>> = m.rows().map(<[ConditionCode]>::to_vec).collect();
        assert_eq!(rows.len(), (1..=n).product::<usize>());
    }
}
