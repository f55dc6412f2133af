//! Per-file symbol extraction.
//!
//! [`parse_file`] walks the syntax events of one source file and records the
//! facts needed to build a call graph: function definitions (qualified by
//! class and enclosing function), import aliases, variables bound to
//! constructor calls, and every call site inside each function body.
//! [`resolve_callee`] then maps a call site to a fully qualified identifier
//! using, in order, local definitions, constructed-object types, and imports.
//!
//! Qualified names follow Python's `__qualname__` convention prefixed with
//! the module path: `pkg.mod.Class.method`, `pkg.mod.outer.<locals>.inner`.

pub mod grammar;
pub mod python;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use grammar::{Callee, GrammarAdapter, LineSpan, SyntaxEvent};
pub use python::PythonGrammar;

/// Marker segment for functions and classes defined inside a function body.
pub const LOCALS: &str = "<locals>";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("no grammar adapter handles {0}")]
    GrammarUnsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    Syntax,
    WildcardImport,
    Shadowing,
    DuplicateFunction,
    ImportBeyondTopLevel,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub line: usize,
    pub message: String,
}

/// How a call site names its callee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalleeForm {
    Direct,
    Attribute,
    Aliased,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub callee: Callee,
    pub line: usize,
    pub column: usize,
    /// The callee's name (or receiver head) was an import alias at this point.
    pub aliased: bool,
    /// Class of the receiver as known at this point in the file: the
    /// enclosing class for `self`/`cls`, or the last constructor assigned to
    /// the receiver variable before the call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_class: Option<String>,
}

impl CallSite {
    pub fn form(&self) -> CalleeForm {
        match (&self.callee, self.aliased) {
            (Callee::Dynamic { .. }, _) => CalleeForm::Dynamic,
            (_, true) => CalleeForm::Aliased,
            (Callee::Name { .. }, false) => CalleeForm::Direct,
            (Callee::Attribute { .. }, false) => CalleeForm::Attribute,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub qualified_name: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub docstring: Option<String>,
    /// Full source lines covered by `source_span`, decorators included.
    pub body_text: String,
    pub source_span: LineSpan,
    /// In source order.
    pub call_sites: Vec<CallSite>,
}

/// A variable bound to the result of a constructor call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectBinding {
    /// Qualified name of the function owning the variable, the class for
    /// `self.attr` targets, or the module path for module-level variables.
    pub scope: String,
    pub variable: String,
    pub class_name: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileAnalysis {
    pub file_path: String,
    pub module: String,
    pub grammar: String,
    pub functions: Vec<FunctionRecord>,
    /// Module-qualified class names.
    pub classes: Vec<String>,
    /// Alias → fully qualified module path.
    pub imports: BTreeMap<String, String>,
    /// Constructor assignments in source order.
    pub object_types: Vec<ObjectBinding>,
    pub parse_errors: Vec<Diagnostic>,
    pub diagnostics: Vec<Diagnostic>,
}

impl FileAnalysis {
    pub fn function(&self, qualified_name: &str) -> Option<&FunctionRecord> {
        self.functions
            .iter()
            .find(|f| f.qualified_name == qualified_name)
    }

    /// Stable JSON encoding used by the analysis cache.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("FileAnalysis is always serializable")
    }
}

#[derive(Debug, Clone)]
enum Frame {
    Class { qualname: String },
    Function { index: usize, qualname: String },
}

fn child_qualname(frames: &[Frame], name: &str) -> String {
    match frames.last() {
        None => name.to_string(),
        Some(Frame::Class { qualname }) => format!("{qualname}.{name}"),
        Some(Frame::Function { qualname, .. }) => format!("{qualname}.{LOCALS}.{name}"),
    }
}

fn qualify(module: &str, relative: &str) -> String {
    if module.is_empty() {
        relative.to_string()
    } else {
        format!("{module}.{relative}")
    }
}

fn starts_uppercase(name: &str) -> bool {
    name.chars().next().is_some_and(char::is_uppercase)
}

fn split_head(dotted: &str) -> (&str, Option<&str>) {
    match dotted.split_once('.') {
        Some((head, rest)) => (head, Some(rest)),
        None => (dotted, None),
    }
}

/// Walks the function nesting of a relative qualname from the innermost
/// function outwards: `a.<locals>.b.<locals>.c` yields the three prefixes
/// ending at `c`, `b` and `a`.
fn enclosing_functions(relative: &str) -> Vec<&str> {
    let marker = format!(".{LOCALS}.");
    let mut scopes = vec![relative];
    let mut rest = relative;
    while let Some(pos) = rest.rfind(&marker) {
        rest = &rest[..pos];
        scopes.push(rest);
    }
    scopes
}

struct Analyzer<'a> {
    grammar: &'a dyn GrammarAdapter,
    module: String,
    is_package: bool,
    source_lines: Vec<&'a str>,
    /// Relative qualnames of every class in the file.
    class_names: HashSet<String>,
    frames: Vec<Frame>,
    module_scope: HashMap<String, String>,
    function_scopes: Vec<HashMap<String, String>>,
    /// Parameters and assigned names of each open function.
    local_names: Vec<HashSet<String>>,
    class_attrs: HashMap<String, HashMap<String, String>>,
    functions: Vec<FunctionRecord>,
    imports: BTreeMap<String, String>,
    object_types: Vec<ObjectBinding>,
    diagnostics: Vec<Diagnostic>,
}

impl<'a> Analyzer<'a> {
    fn slice_lines(&self, span: LineSpan) -> String {
        let start = span.start.saturating_sub(1).min(self.source_lines.len());
        let end = span.end.min(self.source_lines.len()).max(start);
        self.source_lines[start..end].join("\n")
    }

    fn innermost_function(&self) -> Option<(usize, &str)> {
        self.frames.iter().rev().find_map(|f| match f {
            Frame::Function { index, qualname } => Some((*index, qualname.as_str())),
            Frame::Class { .. } => None,
        })
    }

    /// Class of the nearest enclosing method, for `self` and `cls`.
    fn enclosing_method_class(&self) -> Option<&str> {
        self.frames
            .windows(2)
            .rev()
            .find_map(|w| match (&w[0], &w[1]) {
                (Frame::Class { qualname }, Frame::Function { .. }) => Some(qualname.as_str()),
                _ => None,
            })
    }

    fn package_base(&self, level: usize, module: Option<&str>) -> Option<String> {
        let mut parts: Vec<&str> = if self.module.is_empty() || level == 0 {
            Vec::new()
        } else {
            self.module.split('.').collect()
        };
        if level > 0 {
            if !self.is_package {
                parts.pop();
            }
            for _ in 1..level {
                parts.pop()?;
            }
        }
        if let Some(module) = module {
            parts.extend(module.split('.'));
        }
        Some(parts.join("."))
    }

    fn on_import_from(
        &mut self,
        module: Option<&str>,
        level: usize,
        names: &[grammar::ImportedName],
        line: usize,
    ) {
        let Some(base) = self.resolve_base(level, module, line) else {
            return;
        };
        for imported in names {
            let alias = imported
                .alias
                .clone()
                .unwrap_or_else(|| imported.name.clone());
            self.imports.insert(alias, qualify(&base, &imported.name));
        }
    }

    fn resolve_base(&mut self, level: usize, module: Option<&str>, line: usize) -> Option<String> {
        let base = self.package_base(level, module);
        if base.is_none() {
            self.diagnostics.push(Diagnostic {
                kind: DiagnosticKind::ImportBeyondTopLevel,
                line,
                message: format!("relative import with {level} dot(s) escapes the repository root"),
            });
        }
        base
    }

    /// Class path produced by calling `callee`, when it is a constructor.
    fn constructed_class(&self, callee: &Callee) -> Option<String> {
        match callee {
            Callee::Name { name } => {
                if let Some((_, current)) = self.innermost_function() {
                    for scope in enclosing_functions(current) {
                        let local = format!("{scope}.{LOCALS}.{name}");
                        if self.class_names.contains(&local) {
                            return Some(qualify(&self.module, &local));
                        }
                    }
                }
                if self.class_names.contains(name) {
                    return Some(qualify(&self.module, name));
                }
                match self.imports.get(name) {
                    Some(path) if starts_uppercase(path.rsplit('.').next().unwrap_or(path)) => {
                        Some(path.clone())
                    }
                    _ => None,
                }
            }
            Callee::Attribute { receiver, method } => {
                if !starts_uppercase(method) {
                    return None;
                }
                let nested = format!("{receiver}.{method}");
                if self.class_names.contains(&nested) {
                    return Some(qualify(&self.module, &nested));
                }
                let (head, rest) = split_head(receiver);
                let path = self.imports.get(head)?;
                Some(match rest {
                    Some(rest) => format!("{path}.{rest}.{method}"),
                    None => format!("{path}.{method}"),
                })
            }
            Callee::Dynamic { .. } => None,
        }
    }

    fn receiver_class(&self, receiver: &str) -> Option<String> {
        if receiver == "self" || receiver == "cls" {
            return self
                .enclosing_method_class()
                .map(|c| qualify(&self.module, c));
        }
        if receiver.starts_with("self.") {
            let class = self.enclosing_method_class()?;
            return self.class_attrs.get(class)?.get(receiver).cloned();
        }
        for scope in self.function_scopes.iter().rev() {
            if let Some(class) = scope.get(receiver) {
                return Some(class.clone());
            }
        }
        self.module_scope.get(receiver).cloned()
    }

    fn on_assign(&mut self, targets: &[String], value_call: Option<&Callee>, line: usize) {
        let class = value_call.and_then(|c| self.constructed_class(c));
        let function_scope = self
            .innermost_function()
            .map(|(_, q)| qualify(&self.module, q));
        for target in targets {
            let (scope_name, map) = if target.starts_with("self.") {
                let Some(owner) = self.enclosing_method_class().map(str::to_string) else {
                    continue;
                };
                (
                    qualify(&self.module, &owner),
                    self.class_attrs.entry(owner).or_default(),
                )
            } else if target.contains('.') {
                continue;
            } else if let (Some(scope), Some(name)) =
                (self.function_scopes.last_mut(), function_scope.as_ref())
            {
                if let Some(locals) = self.local_names.last_mut() {
                    locals.insert(target.clone());
                }
                (name.clone(), scope)
            } else {
                (self.module.clone(), &mut self.module_scope)
            };
            // The most recent assignment wins; a non-constructor value
            // forgets what was known about the variable.
            match &class {
                Some(class) => {
                    map.insert(target.clone(), class.clone());
                    self.object_types.push(ObjectBinding {
                        scope: scope_name,
                        variable: target.clone(),
                        class_name: class.clone(),
                        line,
                    });
                }
                None => {
                    map.remove(target);
                }
            }
        }
    }

    fn on_call(&mut self, callee: Callee, line: usize, column: usize) {
        let Some((index, _)) = self.innermost_function() else {
            return;
        };
        // A parameter or local variable of this or an enclosing function
        // hides module-level functions of the same name.
        let callee = match callee {
            Callee::Name { name } if self.local_names.iter().any(|l| l.contains(&name)) => {
                Callee::Dynamic { text: name }
            }
            other => other,
        };
        let (aliased, receiver_class) = match &callee {
            Callee::Name { name } => (self.imports.contains_key(name), None),
            Callee::Attribute { receiver, .. } => {
                let head = split_head(receiver).0;
                let aliased = self.imports.contains_key(head);
                (aliased, self.receiver_class(receiver))
            }
            Callee::Dynamic { .. } => (false, None),
        };
        self.functions[index].call_sites.push(CallSite {
            callee,
            line,
            column,
            aliased,
            receiver_class,
        });
    }

    fn run(&mut self, events: Vec<SyntaxEvent>) {
        // Class names are visible to constructor detection before their
        // definition is reached (functions run after the module body).
        let mut frames: Vec<String> = Vec::new();
        for event in &events {
            match event {
                SyntaxEvent::EnterClass { name, .. } => {
                    let qualname = match frames.last() {
                        Some(parent) => format!("{parent}.{name}"),
                        None => name.clone(),
                    };
                    self.class_names.insert(qualname.clone());
                    frames.push(qualname);
                }
                SyntaxEvent::EnterFunction { name, .. } => {
                    let qualname = match frames.last() {
                        Some(parent) => format!("{parent}.{name}.{LOCALS}"),
                        None => format!("{name}.{LOCALS}"),
                    };
                    frames.push(qualname);
                }
                SyntaxEvent::ExitClass | SyntaxEvent::ExitFunction => {
                    frames.pop();
                }
                _ => {}
            }
        }

        for event in events {
            match event {
                SyntaxEvent::EnterClass { name, .. } => {
                    let qualname = child_qualname(&self.frames, &name);
                    self.frames.push(Frame::Class { qualname });
                }
                SyntaxEvent::ExitClass => {
                    self.frames.pop();
                }
                SyntaxEvent::EnterFunction {
                    name,
                    span,
                    docstring_literal,
                    params,
                } => {
                    let relative = child_qualname(&self.frames, &name);
                    let class_context = match self.frames.last() {
                        Some(Frame::Class { qualname }) => Some(qualname.clone()),
                        _ => None,
                    };
                    let docstring = docstring_literal
                        .and_then(|lit| self.grammar.decode_docstring(&lit))
                        .filter(|d| !d.is_empty());
                    let record = FunctionRecord {
                        qualified_name: qualify(&self.module, &relative),
                        name,
                        class_context,
                        docstring,
                        body_text: self.slice_lines(span),
                        source_span: span,
                        call_sites: Vec::new(),
                    };
                    self.functions.push(record);
                    self.frames.push(Frame::Function {
                        index: self.functions.len() - 1,
                        qualname: relative,
                    });
                    self.function_scopes.push(HashMap::new());
                    self.local_names.push(params.into_iter().collect());
                }
                SyntaxEvent::ExitFunction => {
                    self.frames.pop();
                    self.function_scopes.pop();
                    self.local_names.pop();
                }
                SyntaxEvent::Import { module, alias, .. } => match alias {
                    Some(alias) => {
                        self.imports.insert(alias, module);
                    }
                    None => {
                        let head = split_head(&module).0.to_string();
                        self.imports.insert(head.clone(), head);
                    }
                },
                SyntaxEvent::ImportFrom {
                    module,
                    level,
                    names,
                    line,
                } => self.on_import_from(module.as_deref(), level, &names, line),
                SyntaxEvent::WildcardImport {
                    module,
                    level,
                    line,
                } => {
                    let dots = ".".repeat(level);
                    self.diagnostics.push(Diagnostic {
                        kind: DiagnosticKind::WildcardImport,
                        line,
                        message: format!(
                            "names from `from {dots}{} import *` are not resolved",
                            module.unwrap_or_default()
                        ),
                    });
                }
                SyntaxEvent::Assign {
                    targets,
                    value_call,
                    line,
                } => self.on_assign(&targets, value_call.as_ref(), line),
                SyntaxEvent::Call {
                    callee,
                    line,
                    column,
                } => self.on_call(callee, line, column),
            }
        }
    }

    fn finish(mut self, file_path: &str) -> FileAnalysis {
        // Python rebinds the name on redefinition, so the last one wins.
        let mut last_index: HashMap<&str, usize> = HashMap::new();
        for (i, f) in self.functions.iter().enumerate() {
            last_index.insert(f.qualified_name.as_str(), i);
        }
        let mut dropped = Vec::new();
        for (i, f) in self.functions.iter().enumerate() {
            if last_index[f.qualified_name.as_str()] != i {
                dropped.push(Diagnostic {
                    kind: DiagnosticKind::DuplicateFunction,
                    line: f.source_span.start,
                    message: format!(
                        "{} is redefined later in the file; this definition is ignored",
                        f.qualified_name
                    ),
                });
            }
        }
        let keep: BTreeSet<usize> = last_index.values().copied().collect();
        let functions: Vec<FunctionRecord> = std::mem::take(&mut self.functions)
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, f)| f)
            .collect();
        self.diagnostics.extend(dropped);

        for (alias, path) in &self.imports {
            let shadowed_fn = functions
                .iter()
                .any(|f| f.qualified_name == qualify(&self.module, alias));
            if shadowed_fn || self.class_names.contains(alias) {
                self.diagnostics.push(Diagnostic {
                    kind: DiagnosticKind::Shadowing,
                    line: 0,
                    message: format!(
                        "local definition `{alias}` shadows import of {path}; calls resolve locally"
                    ),
                });
            }
        }
        self.diagnostics.sort();

        let mut classes: Vec<String> = self
            .class_names
            .iter()
            .map(|c| qualify(&self.module, c))
            .collect();
        classes.sort();

        FileAnalysis {
            file_path: file_path.to_string(),
            module: self.module,
            grammar: self.grammar.name().to_string(),
            functions,
            classes,
            imports: self.imports,
            object_types: self.object_types,
            parse_errors: Vec::new(),
            diagnostics: self.diagnostics,
        }
    }
}

/// Extracts the function-level facts of one file.
///
/// Malformed source never fails: it yields an analysis with no functions and
/// the syntax errors listed in `parse_errors`.
pub fn parse_file(
    source_text: &str,
    file_path: &str,
    grammar: &dyn GrammarAdapter,
) -> Result<FileAnalysis, IngestError> {
    if !grammar.handles(Path::new(file_path)) {
        return Err(IngestError::GrammarUnsupported(file_path.to_string()));
    }
    let (module, is_package) = grammar.module_path(file_path);
    let mut analyzer = Analyzer {
        grammar,
        module,
        is_package,
        source_lines: source_text.split('\n').collect(),
        class_names: HashSet::new(),
        frames: Vec::new(),
        module_scope: HashMap::new(),
        function_scopes: Vec::new(),
        local_names: Vec::new(),
        class_attrs: HashMap::new(),
        functions: Vec::new(),
        imports: BTreeMap::new(),
        object_types: Vec::new(),
        diagnostics: Vec::new(),
    };
    match grammar.events(source_text) {
        Ok(events) => {
            analyzer.run(events);
            Ok(analyzer.finish(file_path))
        }
        Err(errors) => {
            let mut analysis = analyzer.finish(file_path);
            analysis.imports.clear();
            analysis.classes.clear();
            analysis.parse_errors = errors
                .into_iter()
                .map(|e| Diagnostic {
                    kind: DiagnosticKind::Syntax,
                    line: e.line,
                    message: format!("{} (column {})", e.message, e.column),
                })
                .collect();
            Ok(analysis)
        }
    }
}

/// Name lookups over one [`FileAnalysis`], built once per file.
pub struct Resolver<'a> {
    analysis: &'a FileAnalysis,
    functions: HashSet<&'a str>,
    classes: HashSet<&'a str>,
}

impl<'a> Resolver<'a> {
    pub fn new(analysis: &'a FileAnalysis) -> Self {
        Self {
            analysis,
            functions: analysis
                .functions
                .iter()
                .map(|f| f.qualified_name.as_str())
                .collect(),
            classes: analysis.classes.iter().map(String::as_str).collect(),
        }
    }

    fn local(&self, relative: &str) -> String {
        qualify(&self.analysis.module, relative)
    }

    fn function_or_constructor(&self, qualified: &str) -> Option<String> {
        if self.functions.contains(qualified) {
            return Some(qualified.to_string());
        }
        if self.classes.contains(qualified) {
            let init = format!("{qualified}.__init__");
            return self.functions.contains(init.as_str()).then_some(init);
        }
        None
    }

    /// Resolves `call`, made from inside `caller`, to a qualified identifier.
    ///
    /// Returns `None` for builtins, dynamic callees, wildcard-imported names,
    /// and anything else that is not statically visible in this file.
    pub fn resolve(&self, call: &CallSite, caller: &FunctionRecord) -> Option<String> {
        let module = &self.analysis.module;
        let caller_relative = if module.is_empty() {
            caller.qualified_name.as_str()
        } else {
            caller
                .qualified_name
                .strip_prefix(module.as_str())
                .and_then(|r| r.strip_prefix('.'))
                .unwrap_or(&caller.qualified_name)
        };
        match &call.callee {
            Callee::Name { name } => {
                for scope in enclosing_functions(caller_relative) {
                    let nested = self.local(&format!("{scope}.{LOCALS}.{name}"));
                    if let Some(found) = self.function_or_constructor(&nested) {
                        return Some(found);
                    }
                }
                if let Some(found) = self.function_or_constructor(&self.local(name)) {
                    return Some(found);
                }
                self.analysis.imports.get(name).cloned()
            }
            Callee::Attribute { receiver, method } => {
                if let Some(class) = &call.receiver_class {
                    let target = format!("{class}.{method}");
                    return if self.classes.contains(class.as_str()) {
                        self.functions.contains(target.as_str()).then_some(target)
                    } else {
                        Some(target)
                    };
                }
                if receiver == "self" || receiver == "cls" || receiver.starts_with("self.") {
                    return None;
                }
                let nested = self.local(&format!("{receiver}.{method}"));
                if self.classes.contains(self.local(receiver).as_str()) {
                    return self.function_or_constructor(&nested);
                }
                let (head, rest) = split_head(receiver);
                let path = self.analysis.imports.get(head)?;
                Some(match rest {
                    Some(rest) => format!("{path}.{rest}.{method}"),
                    None => format!("{path}.{method}"),
                })
            }
            Callee::Dynamic { .. } => None,
        }
    }
}

/// One-shot form of [`Resolver::resolve`].
pub fn resolve_callee(
    call: &CallSite,
    caller: &FunctionRecord,
    analysis: &FileAnalysis,
) -> Option<String> {
    Resolver::new(analysis).resolve(call, caller)
}
