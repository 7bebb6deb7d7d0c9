//! The `.pln` design language.
//!
//! ```text
//! program   := stmt* ;
//! stmt      := vardecl | designdecl | unitsdecl | assigndecl ;
//! vardecl   := "variable" IDENT "{" level+ "}" ;
//! level     := IDENT | STRING ;
//! designdecl:= "design" IDENT "=" designexp ;
//! designexp := "design" "(" ")" chain* | "cross" "(" ref "," ref ")" chain*
//!            | "nest" "(" ref "," ref ")" chain* ;
//! chain     := "." method "(" args? ")" ;
//! unitsdecl := "units" IDENT "=" ( "units" "(" INT ")"
//!            | "clusters" "(" INT "," "units" "(" INT ")" ")" ) ;
//! assigndecl:= "assign" IDENT "to" IDENT ("seed" INT)? ;
//! ref       := IDENT | designexp ;
//! ```
//!
//! Variable arguments accept `multifact(a, b, ...)` in place of a name.
//! `nest(inner, outer)` takes the inner design first. `#` starts a comment.

mod lexer;
mod parser;
mod render;

pub use parser::parse;
pub use render::{render, render_design};
