// SPDX-License-Identifier: Apache-2.0

//! A small P4 subset: JSON program format, validation, and a reference
//! interpreter.

mod exec;
mod ir;
mod load;
mod validate;
mod value;

pub use exec::*;
pub use ir::*;
pub use load::{from_json, load_entries, load_program, LoadError};
pub use validate::{has_errors, validate, Diagnostic, Severity};
pub use value::{format_mac, parse_literal, Value};
