//! Python grammar adapter backed by tree-sitter.

use std::path::Path;

use tree_sitter::{Node, Parser};

use super::grammar::{Callee, GrammarAdapter, ImportedName, LineSpan, SyntaxError, SyntaxEvent};

#[derive(Debug, Default, Clone, Copy)]
pub struct PythonGrammar;

enum Work<'t> {
    Visit(Node<'t>),
    Emit(SyntaxEvent),
}

impl GrammarAdapter for PythonGrammar {
    fn name(&self) -> &str {
        "python/tree-sitter-0.25"
    }

    fn handles(&self, path: &Path) -> bool {
        path.extension().is_some_and(|ext| ext == "py")
    }

    fn events(&self, source: &str) -> Result<Vec<SyntaxEvent>, Vec<SyntaxError>> {
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .expect("bundled python grammar matches the tree-sitter ABI");
        let Some(tree) = parser.parse(source, None) else {
            return Err(vec![SyntaxError {
                line: 1,
                column: 1,
                message: "parser produced no tree".into(),
            }]);
        };
        let root = tree.root_node();
        if root.has_error() {
            return Err(collect_errors(root));
        }
        Ok(lower(root, source))
    }

    fn decode_docstring(&self, literal: &str) -> Option<String> {
        decode_string_literal(literal).map(|s| clean_doc(&s))
    }

    fn module_path(&self, path: &str) -> (String, bool) {
        let trimmed = path.trim_start_matches("./");
        let stem = trimmed.strip_suffix(".py").unwrap_or(trimmed);
        let mut parts: Vec<&str> = stem.split('/').filter(|p| !p.is_empty()).collect();
        let is_package = parts.last() == Some(&"__init__");
        if is_package {
            parts.pop();
        }
        (parts.join("."), is_package)
    }
}

fn collect_errors(root: Node<'_>) -> Vec<SyntaxError> {
    let mut errors = Vec::new();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if node.is_error() || node.is_missing() {
            let pos = node.start_position();
            let message = if node.is_missing() {
                format!("missing {}", node.kind())
            } else {
                "unexpected syntax".to_string()
            };
            errors.push(SyntaxError {
                line: pos.row + 1,
                column: pos.column + 1,
                message,
            });
            continue;
        }
        if node.has_error() {
            let mut cursor = node.walk();
            let children: Vec<_> = node.children(&mut cursor).collect();
            stack.extend(children.into_iter().rev());
        }
    }
    errors.sort_by_key(|e| (e.line, e.column));
    errors
}

fn text<'s>(node: Node<'_>, source: &'s str) -> &'s str {
    &source[node.byte_range()]
}

fn line_of(node: Node<'_>) -> usize {
    node.start_position().row + 1
}

fn end_line_of(node: Node<'_>) -> usize {
    let end = node.end_position();
    if end.column == 0 && end.row > node.start_position().row {
        end.row
    } else {
        end.row + 1
    }
}

/// Pre-order walk producing events in source order. Iterative so deeply
/// nested expressions cannot exhaust the stack.
fn lower(root: Node<'_>, source: &str) -> Vec<SyntaxEvent> {
    let mut events = Vec::new();
    let mut stack = vec![Work::Visit(root)];
    while let Some(work) = stack.pop() {
        let node = match work {
            Work::Emit(event) => {
                events.push(event);
                continue;
            }
            Work::Visit(node) => node,
        };
        match node.kind() {
            "decorated_definition" => {
                // Decorators wrap the definition; they are not part of its body.
                if let Some(def) = node.child_by_field_name("definition") {
                    match def.kind() {
                        "function_definition" => {
                            enter_function(def, line_of(node), source, &mut events, &mut stack)
                        }
                        "class_definition" => enter_class(def, source, &mut events, &mut stack),
                        _ => {}
                    }
                }
            }
            "function_definition" => {
                enter_function(node, line_of(node), source, &mut events, &mut stack)
            }
            "class_definition" => enter_class(node, source, &mut events, &mut stack),
            "import_statement" => lower_import(node, source, &mut events),
            "import_from_statement" => lower_import_from(node, source, &mut events),
            "assignment" => lower_assignment(node, source, &mut stack),
            "call" => {
                let pos = node.start_position();
                if let Some(function) = node.child_by_field_name("function") {
                    events.push(SyntaxEvent::Call {
                        callee: callee_of(function, source),
                        line: pos.row + 1,
                        column: pos.column + 1,
                    });
                }
                push_children(node, &mut stack);
            }
            _ => push_children(node, &mut stack),
        }
    }
    events
}

fn push_children<'t>(node: Node<'t>, stack: &mut Vec<Work<'t>>) {
    let mut cursor = node.walk();
    let children: Vec<_> = node.named_children(&mut cursor).collect();
    stack.extend(children.into_iter().rev().map(Work::Visit));
}

fn enter_function<'t>(
    def: Node<'t>,
    start_line: usize,
    source: &str,
    events: &mut Vec<SyntaxEvent>,
    stack: &mut Vec<Work<'t>>,
) {
    let name = def
        .child_by_field_name("name")
        .map(|n| text(n, source).to_string())
        .unwrap_or_default();
    let body = def.child_by_field_name("body");
    events.push(SyntaxEvent::EnterFunction {
        name,
        span: LineSpan {
            start: start_line,
            end: end_line_of(def),
        },
        docstring_literal: body.and_then(|b| leading_string(b, source)),
        params: def
            .child_by_field_name("parameters")
            .map(|p| parameter_names(p, source))
            .unwrap_or_default(),
    });
    stack.push(Work::Emit(SyntaxEvent::ExitFunction));
    // Parameter defaults and annotations evaluate in the enclosing scope at
    // definition time; only the body belongs to the function.
    if let Some(body) = body {
        stack.push(Work::Visit(body));
    }
}

fn parameter_names(params: Node<'_>, source: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut cursor = params.walk();
    for param in params.named_children(&mut cursor) {
        let name = match param.kind() {
            "identifier" => Some(param),
            "default_parameter" | "typed_default_parameter" => param.child_by_field_name("name"),
            // `x: int`, `*args`, `**kwargs`: the first named child is the name.
            "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                param.named_child(0).and_then(|n| match n.kind() {
                    "identifier" => Some(n),
                    "list_splat_pattern" | "dictionary_splat_pattern" => n.named_child(0),
                    _ => None,
                })
            }
            _ => None,
        };
        if let Some(name) = name.filter(|n| n.kind() == "identifier") {
            names.push(text(name, source).to_string());
        }
    }
    names
}

fn enter_class<'t>(
    def: Node<'t>,
    source: &str,
    events: &mut Vec<SyntaxEvent>,
    stack: &mut Vec<Work<'t>>,
) {
    let name = def
        .child_by_field_name("name")
        .map(|n| text(n, source).to_string())
        .unwrap_or_default();
    events.push(SyntaxEvent::EnterClass {
        name,
        line: line_of(def),
    });
    stack.push(Work::Emit(SyntaxEvent::ExitClass));
    if let Some(body) = def.child_by_field_name("body") {
        stack.push(Work::Visit(body));
    }
}

fn leading_string(body: Node<'_>, source: &str) -> Option<String> {
    let mut cursor = body.walk();
    let first = body
        .named_children(&mut cursor)
        .find(|n| n.kind() != "comment")?;
    if first.kind() != "expression_statement" {
        return None;
    }
    let mut cursor = first.walk();
    let expr = first.named_children(&mut cursor).next()?;
    match expr.kind() {
        "string" | "concatenated_string" => Some(text(expr, source).to_string()),
        _ => None,
    }
}

fn dotted_name(node: Node<'_>, source: &str) -> Option<String> {
    match node.kind() {
        "identifier" => Some(text(node, source).to_string()),
        "attribute" => {
            let object = node.child_by_field_name("object")?;
            let attr = node.child_by_field_name("attribute")?;
            Some(format!(
                "{}.{}",
                dotted_name(object, source)?,
                text(attr, source)
            ))
        }
        "dotted_name" => {
            let mut cursor = node.walk();
            let parts: Vec<_> = node
                .named_children(&mut cursor)
                .map(|n| text(n, source))
                .collect();
            Some(parts.join("."))
        }
        _ => None,
    }
}

fn callee_of(function: Node<'_>, source: &str) -> Callee {
    match function.kind() {
        "identifier" => Callee::Name {
            name: text(function, source).to_string(),
        },
        "attribute" => {
            let receiver = function
                .child_by_field_name("object")
                .and_then(|o| dotted_name(o, source));
            let method = function.child_by_field_name("attribute");
            match (receiver, method) {
                (Some(receiver), Some(method)) => Callee::Attribute {
                    receiver,
                    method: text(method, source).to_string(),
                },
                _ => Callee::Dynamic {
                    text: text(function, source).to_string(),
                },
            }
        }
        _ => Callee::Dynamic {
            text: text(function, source).to_string(),
        },
    }
}

fn lower_import(node: Node<'_>, source: &str, events: &mut Vec<SyntaxEvent>) {
    let line = line_of(node);
    let mut cursor = node.walk();
    for name in node.children_by_field_name("name", &mut cursor) {
        match name.kind() {
            "dotted_name" => events.push(SyntaxEvent::Import {
                module: dotted_name(name, source).unwrap_or_default(),
                alias: None,
                line,
            }),
            "aliased_import" => {
                let module = name
                    .child_by_field_name("name")
                    .and_then(|n| dotted_name(n, source))
                    .unwrap_or_default();
                let alias = name
                    .child_by_field_name("alias")
                    .map(|a| text(a, source).to_string());
                events.push(SyntaxEvent::Import {
                    module,
                    alias,
                    line,
                });
            }
            _ => {}
        }
    }
}

fn lower_import_from(node: Node<'_>, source: &str, events: &mut Vec<SyntaxEvent>) {
    let line = line_of(node);
    let (module, level) = match node.child_by_field_name("module_name") {
        Some(m) if m.kind() == "relative_import" => {
            let mut level = 0;
            let mut module = None;
            let mut cursor = m.walk();
            for child in m.named_children(&mut cursor) {
                match child.kind() {
                    "import_prefix" => level = text(child, source).matches('.').count(),
                    "dotted_name" => module = dotted_name(child, source),
                    _ => {}
                }
            }
            (module, level)
        }
        Some(m) => (dotted_name(m, source), 0),
        None => (None, 0),
    };

    let mut cursor = node.walk();
    let wildcard = node
        .named_children(&mut cursor)
        .any(|c| c.kind() == "wildcard_import");
    if wildcard {
        events.push(SyntaxEvent::WildcardImport {
            module,
            level,
            line,
        });
        return;
    }

    let mut names = Vec::new();
    let mut cursor = node.walk();
    for name in node.children_by_field_name("name", &mut cursor) {
        match name.kind() {
            "dotted_name" => names.push(ImportedName {
                name: dotted_name(name, source).unwrap_or_default(),
                alias: None,
            }),
            "aliased_import" => names.push(ImportedName {
                name: name
                    .child_by_field_name("name")
                    .and_then(|n| dotted_name(n, source))
                    .unwrap_or_default(),
                alias: name
                    .child_by_field_name("alias")
                    .map(|a| text(a, source).to_string()),
            }),
            _ => {}
        }
    }
    events.push(SyntaxEvent::ImportFrom {
        module,
        level,
        names,
        line,
    });
}

fn assignment_target(node: Node<'_>, source: &str, out: &mut Vec<String>) {
    match node.kind() {
        "identifier" => out.push(text(node, source).to_string()),
        "attribute" => {
            let object = node.child_by_field_name("object");
            if let (Some(object), Some(attr)) = (object, node.child_by_field_name("attribute")) {
                if object.kind() == "identifier" {
                    out.push(format!("{}.{}", text(object, source), text(attr, source)));
                }
            }
        }
        "pattern_list" | "tuple_pattern" | "list_pattern" => {
            let mut cursor = node.walk();
            for child in node.named_children(&mut cursor) {
                assignment_target(child, source, out);
            }
        }
        _ => {}
    }
}

fn lower_assignment<'t>(node: Node<'t>, source: &str, stack: &mut Vec<Work<'t>>) {
    let line = line_of(node);
    let mut targets = Vec::new();
    let mut current = node;
    // `a = b = Foo()` nests assignments on the right.
    let value = loop {
        if let Some(left) = current.child_by_field_name("left") {
            assignment_target(left, source, &mut targets);
        }
        match current.child_by_field_name("right") {
            Some(right) if right.kind() == "assignment" => current = right,
            other => break other,
        }
    };
    let Some(value) = value else {
        // Bare annotation `x: int` binds nothing.
        return;
    };
    let unpacking = node
        .child_by_field_name("left")
        .is_some_and(|l| l.kind() != "identifier" && l.kind() != "attribute");
    let value_call = (value.kind() == "call" && !unpacking)
        .then(|| value.child_by_field_name("function"))
        .flatten()
        .map(|f| callee_of(f, source));
    stack.push(Work::Emit(SyntaxEvent::Assign {
        targets,
        value_call,
        line,
    }));
    stack.push(Work::Visit(value));
}

/// Strips prefix and quotes from a Python string literal and applies the
/// common escapes of non-raw strings. Concatenated literals are joined.
pub(crate) fn decode_string_literal(literal: &str) -> Option<String> {
    let literal = literal.trim();
    let prefix_len = literal
        .find(['"', '\''])
        .filter(|&i| literal[..i].chars().all(|c| "rRuUbBfF".contains(c)))?;
    let prefix = &literal[..prefix_len];
    let rest = &literal[prefix_len..];
    let quote = if rest.starts_with("\"\"\"") {
        "\"\"\""
    } else if rest.starts_with("'''") {
        "'''"
    } else if rest.starts_with('"') {
        "\""
    } else {
        "'"
    };
    let after_open = &rest[quote.len()..];
    let close = find_closing(after_open, quote)?;
    let body = &after_open[..close];
    let remainder = after_open[close + quote.len()..].trim_start();

    let mut decoded = if prefix.contains(['r', 'R']) {
        body.to_string()
    } else {
        unescape(body)
    };
    if !remainder.is_empty() {
        decoded.push_str(&decode_string_literal(remainder)?);
    }
    Some(decoded)
}

fn find_closing(s: &str, quote: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            // Even in raw strings a backslash keeps the quote from closing.
            i += 2;
            continue;
        }
        if s[i..].starts_with(quote) {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn unescape(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some('"') => out.push('"'),
            Some('\'') => out.push('\''),
            Some('\n') => {}
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Same normalisation as `inspect.cleandoc`: drop leading and trailing blank
/// lines, strip the first line, and remove the common indentation of the rest.
pub(crate) fn clean_doc(doc: &str) -> String {
    let expanded = doc.replace('\t', "        ");
    let lines: Vec<&str> = expanded.lines().collect();
    let margin = lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut cleaned: Vec<String> = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if i == 0 {
            cleaned.push(line.trim().to_string());
        } else {
            let cut = margin.min(line.len() - line.trim_start().len());
            cleaned.push(line[cut..].trim_end().to_string());
        }
    }
    while cleaned.first().is_some_and(|l| l.is_empty()) {
        cleaned.remove(0);
    }
    while cleaned.last().is_some_and(|l| l.is_empty()) {
        cleaned.pop();
    }
    cleaned.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(src: &str) -> Vec<SyntaxEvent> {
        PythonGrammar.events(src).expect("valid python")
    }

    #[test]
    fn parameter_names_cover_every_form() {
        let ev = events("def f(a, b: int, c=1, d: str = '', *args, e, **kw):\n    pass\n");
        match &ev[0] {
            SyntaxEvent::EnterFunction { params, .. } => {
                assert_eq!(params, &["a", "b", "c", "d", "args", "e", "kw"])
            }
            other => panic!("unexpected {other:?}"),
        }
        let ev = events("def g(self, /, x, *, y):\n    pass\n");
        match &ev[0] {
            SyntaxEvent::EnterFunction { params, .. } => assert_eq!(params, &["self", "x", "y"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn module_paths() {
        let g = PythonGrammar;
        assert_eq!(g.module_path("pkg/util.py"), ("pkg.util".into(), false));
        assert_eq!(g.module_path("pkg/__init__.py"), ("pkg".into(), true));
        assert_eq!(g.module_path("main.py"), ("main".into(), false));
    }

    #[test]
    fn literal_decoding() {
        assert_eq!(
            decode_string_literal(r#""""Sorts the list.""""#).as_deref(),
            Some("Sorts the list.")
        );
        assert_eq!(decode_string_literal(r"r'a\nb'").as_deref(), Some(r"a\nb"));
        assert_eq!(decode_string_literal(r"'a\nb'").as_deref(), Some("a\nb"));
        assert_eq!(
            decode_string_literal(r#""it\"s""#).as_deref(),
            Some("it\"s")
        );
        assert_eq!(decode_string_literal(r#""a" 'b'"#).as_deref(), Some("ab"));
        assert_eq!(decode_string_literal("not a string"), None);
    }

    #[test]
    fn cleandoc_dedents_continuation_lines() {
        let raw = "\n    Summary line.\n\n        indented\n    back\n    ";
        assert_eq!(clean_doc(raw), "Summary line.\n\n    indented\nback");
        assert_eq!(clean_doc("One liner."), "One liner.");
    }

    #[test]
    fn decorators_are_not_calls() {
        let ev = events("@cache(size=3)\ndef f():\n    g()\n");
        let calls: Vec<_> = ev
            .iter()
            .filter_map(|e| match e {
                SyntaxEvent::Call { callee, .. } => Some(callee.text()),
                _ => None,
            })
            .collect();
        assert_eq!(calls, vec!["g"]);
        match &ev[0] {
            SyntaxEvent::EnterFunction { span, .. } => {
                assert_eq!(*span, LineSpan { start: 1, end: 3 })
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chained_assignment_collects_every_target() {
        let ev = events("a = b = Foo()\n");
        assert!(ev.contains(&SyntaxEvent::Assign {
            targets: vec!["a".into(), "b".into()],
            value_call: Some(Callee::Name { name: "Foo".into() }),
            line: 1,
        }));
    }

    #[test]
    fn assignment_follows_its_value_calls() {
        let ev = events("x = Foo(make())\n");
        let kinds: Vec<_> = ev
            .iter()
            .map(|e| match e {
                SyntaxEvent::Call { callee, .. } => callee.text(),
                SyntaxEvent::Assign { .. } => "<assign>".into(),
                _ => "?".into(),
            })
            .collect();
        assert_eq!(kinds, vec!["Foo", "make", "<assign>"]);
    }

    #[test]
    fn relative_and_wildcard_imports() {
        let ev = events("from ..pkg import a as b, c\nfrom m import *\nimport x.y as z\n");
        assert_eq!(
            ev[0],
            SyntaxEvent::ImportFrom {
                module: Some("pkg".into()),
                level: 2,
                names: vec![
                    ImportedName {
                        name: "a".into(),
                        alias: Some("b".into())
                    },
                    ImportedName {
                        name: "c".into(),
                        alias: None
                    },
                ],
                line: 1,
            }
        );
        assert_eq!(
            ev[1],
            SyntaxEvent::WildcardImport {
                module: Some("m".into()),
                level: 0,
                line: 2
            }
        );
        assert_eq!(
            ev[2],
            SyntaxEvent::Import {
                module: "x.y".into(),
                alias: Some("z".into()),
                line: 3
            }
        );
    }

    #[test]
    fn dynamic_callees() {
        let ev = events("def f():\n    xs[0]()\n    a.b().c()\n");
        let callees: Vec<_> = ev
            .iter()
            .filter_map(|e| match e {
                SyntaxEvent::Call { callee, .. } => Some(callee.clone()),
                _ => None,
            })
            .collect();
        assert!(matches!(callees[0], Callee::Dynamic { .. }));
        assert!(matches!(callees[1], Callee::Dynamic { .. }));
        assert_eq!(
            callees[2],
            Callee::Attribute {
                receiver: "a".into(),
                method: "b".into()
            }
        );
    }

    #[test]
    fn syntax_errors_are_reported_with_positions() {
        let errs = PythonGrammar.events("def f(:\n    pass\n").unwrap_err();
        assert!(!errs.is_empty());
        assert_eq!(errs[0].line, 1);
    }
}
