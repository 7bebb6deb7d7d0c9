#![allow(dead_code)]

use std::path::PathBuf;

use expdesign::{parse, resolve_program, NestMode, Program, ResolvedDesign};

pub fn designs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("designs")
}

pub fn design_path(name: &str) -> PathBuf {
    designs_dir().join(format!("{name}.pln"))
}

pub fn source(name: &str) -> String {
    std::fs::read_to_string(design_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn program(name: &str) -> Program {
    parse(&source(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn resolved(name: &str, mode: NestMode) -> (Program, ResolvedDesign) {
    let p = program(name);
    let rd = resolve_program(&p, mode).unwrap_or_else(|e| panic!("{name}: {e}"));
    (p, rd)
}

/// Studies the language expresses, with the method each declared variable should show.
pub const CORPUS: &[(&str, &[(&str, &str)])] = &[
    ("fuji", &[("pronoun", "within-random")]),
    ("skinergy", &[("gesture", "within-random")]),
    ("sun", &[("personalization", "between"), ("user_choice", "between")]),
    ("villa", &[("augmentation", "between"), ("avatar", "between")]),
    ("danry", &[("intervention", "between"), ("statement", "within-random")]),
    ("seated_wip", &[("footstep-posture", "counterbalanced")]),
    ("potts", &[("intensity", "counterbalanced"), ("emotion", "counterbalanced")]),
    ("rambler", &[("interface", "counterbalanced")]),
    ("jingu", &[("grain-electrode", "counterbalanced")]),
    ("artist", &[("task", "counterbalanced"), ("interface", "counterbalanced")]),
    ("mousering", &[("method", "within-random")]),
];

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("expdesign").chain(args.iter().copied());
    let code = expdesign::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
