//! The boundary between a concrete language grammar and the analyzer.
//!
//! An adapter turns source text into a flat, textually ordered stream of
//! [`SyntaxEvent`]s covering the five node categories the analyzer cares
//! about: class definitions, imports, function definitions, assignments whose
//! right-hand side is a call, and calls. Everything else about the language
//! stays behind the adapter, so adding a corpus language means adding an
//! adapter and nothing more.

use std::path::Path;

use serde::{Deserialize, Serialize};

/// Inclusive, 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

/// The syntactic shape of a call's callee.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Callee {
    /// `name(...)`
    Name { name: String },
    /// `receiver.method(...)` where the receiver is a dotted chain of names.
    Attribute { receiver: String, method: String },
    /// Anything else (`f()()`, `xs[0]()`, `a.b().c()`); never resolvable.
    Dynamic { text: String },
}

impl Callee {
    pub fn text(&self) -> String {
        match self {
            Callee::Name { name } => name.clone(),
            Callee::Attribute { receiver, method } => format!("{receiver}.{method}"),
            Callee::Dynamic { text } => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportedName {
    pub name: String,
    pub alias: Option<String>,
}

/// One syntactic fact, emitted in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxEvent {
    EnterClass {
        name: String,
        line: usize,
    },
    ExitClass,
    EnterFunction {
        name: String,
        span: LineSpan,
        /// Raw leading string literal of the body, still quoted.
        docstring_literal: Option<String>,
        /// Parameter names, including `*args` and `**kwargs` names.
        params: Vec<String>,
    },
    ExitFunction,
    /// `import a.b` / `import a.b as c`
    Import {
        module: String,
        alias: Option<String>,
        line: usize,
    },
    /// `from ..pkg import x as y, z`; `level` counts the leading dots.
    ImportFrom {
        module: Option<String>,
        level: usize,
        names: Vec<ImportedName>,
        line: usize,
    },
    /// `from m import *`
    WildcardImport {
        module: Option<String>,
        level: usize,
        line: usize,
    },
    /// Emitted after the right-hand side has been traversed. `targets` holds
    /// plain names (`a`) and `self.attr` style targets; `value_call` is the
    /// callee when the right-hand side is a call.
    Assign {
        targets: Vec<String>,
        value_call: Option<Callee>,
        line: usize,
    },
    Call {
        callee: Callee,
        line: usize,
        column: usize,
    },
}

/// A syntax error reported by an adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub trait GrammarAdapter: Send + Sync {
    /// Short identifier, mixed into cache keys.
    fn name(&self) -> &str;

    fn handles(&self, path: &Path) -> bool;

    /// Lowers `source` to syntax events, or reports why it could not.
    fn events(&self, source: &str) -> Result<Vec<SyntaxEvent>, Vec<SyntaxError>>;

    /// Turns a raw documentation literal into its text.
    fn decode_docstring(&self, literal: &str) -> Option<String>;

    /// Maps a repository-relative file path to the dotted module path and
    /// whether the file is a package initializer.
    fn module_path(&self, path: &str) -> (String, bool);
}
