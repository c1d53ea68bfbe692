//! Heuristic C scanner for file-scope fields and function definitions, and
//! the line-oriented symbol manifest.
//!
//! The scanner tokenizes, drops comments and preprocessor lines, and splits
//! file scope into declarations. It understands enough of C to flatten
//! structs into dot-paths of scalar leaves; anything else it cannot classify
//! is reported in [`ScanReport::skipped`] instead of failing.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FieldDecl, FunctionDecl, ScalarKind, SymbolTable};

const MAX_ARRAY_BOUND: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub symbols: SymbolTable,
    pub skipped: Vec<Skipped>,
}

impl ScanReport {
    fn merge(&mut self, other: ScanReport) {
        for f in other.symbols.fields {
            self.symbols.add_field(f);
        }
        for f in other.symbols.functions {
            self.symbols.add_function(f);
        }
        self.skipped.extend(other.skipped);
    }
}

/// Scans files and directories (recursively, `.c` and `.h` only). Results
/// are merged in path order; the first declaration of a field path wins.
pub fn scan_sources<P: AsRef<Path>>(paths: &[P]) -> Result<ScanReport> {
    let mut files = Vec::new();
    for p in paths {
        let p = p.as_ref();
        if p.is_dir() {
            for entry in walkdir::WalkDir::new(p).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::ScanIo {
                    path: e.path().map(Path::to_path_buf).unwrap_or_else(|| p.to_path_buf()),
                    source: e.into(),
                })?;
                let is_c = matches!(entry.path().extension().and_then(|e| e.to_str()), Some("c" | "h"));
                if entry.file_type().is_file() && is_c {
                    files.push(entry.into_path());
                }
            }
        } else {
            files.push(p.to_path_buf());
        }
    }
    files.sort();
    files.dedup();
    let mut report = ScanReport::default();
    for path in files {
        let text = std::fs::read(&path).map_err(|source| Error::ScanIo {
            path: path.clone(),
            source,
        })?;
        let text = String::from_utf8_lossy(&text);
        report.merge(scan_text(&display(&path), &text));
    }
    Ok(report)
}

fn display(p: &PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

/// Scans one translation unit held in memory.
pub fn scan_text(file: &str, text: &str) -> ScanReport {
    let tokens = lex(text);
    let mut scanner = Scanner {
        file,
        toks: &tokens,
        pos: 0,
        structs: HashMap::new(),
        typedefs: HashMap::new(),
        report: ScanReport::default(),
    };
    scanner.run();
    scanner.report
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Punct(char),
    /// String or character literal; contents are irrelevant.
    Literal,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

fn lex(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut line_start = true;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' && line_start {
            // preprocessor line, honouring backslash continuations
            while i < chars.len() && chars[i] != '\n' {
                if chars[i] == '\\' && chars.get(i + 1) == Some(&'\n') {
                    line += 1;
                    i += 1;
                }
                i += 1;
            }
            continue;
        }
        line_start = false;
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                if chars[i] == '\n' {
                    line += 1;
                }
                i += 1;
            }
            i += 2;
            continue;
        }
        if c == '"' || c == '\'' {
            let start_line = line;
            i += 1;
            while i < chars.len() && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i += 1;
            out.push(Token { tok: Tok::Literal, line: start_line });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Number(chars[start..i].iter().collect()),
                line,
            });
            continue;
        }
        out.push(Token { tok: Tok::Punct(c), line });
        i += 1;
    }
    out
}

fn primitive_kind(word: &str) -> Option<ScalarKind> {
    Some(match word {
        "float" | "double" => ScalarKind::Float,
        "_Bool" | "bool" => ScalarKind::Bool,
        "char" | "short" | "int" | "long" | "signed" | "unsigned" | "size_t" | "ssize_t" | "ptrdiff_t"
        | "intptr_t" | "uintptr_t" | "int8_t" | "int16_t" | "int32_t" | "int64_t" | "uint8_t" | "uint16_t"
        | "uint32_t" | "uint64_t" => ScalarKind::Int,
        _ => return None,
    })
}

const QUALIFIERS: &[&str] = &[
    "static", "extern", "const", "volatile", "register", "inline", "auto", "restrict", "_Thread_local",
];

#[derive(Debug, Clone)]
enum TypeRef {
    Scalar(ScalarKind),
    Struct(String),
    /// A typedef name, resolved lazily one level deep.
    Alias(String),
}

#[derive(Debug, Clone)]
struct Member {
    name: String,
    ty: TypeRef,
    dims: Vec<u64>,
    line: usize,
}

/// Outcome of resolving a type to scalar leaves.
enum Leaves {
    Scalar(ScalarKind),
    Struct(Vec<Member>),
}

struct Scanner<'a> {
    file: &'a str,
    toks: &'a [Token],
    pos: usize,
    structs: HashMap<String, Vec<Member>>,
    typedefs: HashMap<String, TypeRef>,
    report: ScanReport,
}

impl<'a> Scanner<'a> {
    fn skip(&mut self, line: usize, reason: impl Into<String>) {
        self.report.skipped.push(Skipped {
            file: self.file.to_string(),
            line,
            reason: reason.into(),
        });
    }

    /// Splits file scope into declarations and function definitions.
    fn run(&mut self) {
        let toks = self.toks;
        while self.pos < toks.len() {
            let start = self.pos;
            let mut depth = 0usize;
            let mut parens = 0usize;
            loop {
                let Some(t) = toks.get(self.pos) else {
                    if self.pos > start {
                        self.skip(toks[start].line, "declaration runs to end of file");
                    }
                    return;
                };
                match t.tok {
                    Tok::Punct('(') => parens += 1,
                    Tok::Punct(')') => parens = parens.saturating_sub(1),
                    Tok::Punct('{') => {
                        let prev = self.pos.checked_sub(1).map(|i| &toks[i].tok);
                        if depth == 0 && parens == 0 && prev == Some(&Tok::Punct(')')) {
                            let header = &toks[start..self.pos];
                            self.pos = skip_block(toks, self.pos);
                            self.function(header);
                            break;
                        }
                        depth += 1;
                    }
                    Tok::Punct('}') => {
                        if depth == 0 {
                            self.skip(t.line, "unbalanced `}`");
                            self.pos += 1;
                            break;
                        }
                        depth -= 1;
                    }
                    Tok::Punct(';') if depth == 0 && parens == 0 => {
                        let decl = &toks[start..self.pos];
                        self.pos += 1;
                        if !decl.is_empty() {
                            self.declaration(decl);
                        }
                        break;
                    }
                    _ => {}
                }
                self.pos += 1;
            }
        }
    }

    fn function(&mut self, header: &[Token]) {
        // The name is the identifier right before the first top-level `(`.
        let open = header.iter().position(|t| t.tok == Tok::Punct('('));
        match open.and_then(|i| i.checked_sub(1)).map(|i| &header[i]) {
            Some(Token { tok: Tok::Ident(name), line }) if primitive_kind(name).is_none() => {
                self.report.symbols.add_function(FunctionDecl {
                    name: name.clone(),
                    file: self.file.to_string(),
                    line: *line,
                });
            }
            _ => {
                let line = header.first().map_or(0, |t| t.line);
                self.skip(line, "function definition without a recognisable name");
            }
        }
    }

    fn declaration(&mut self, decl: &[Token]) {
        let line = decl[0].line;
        let mut i = 0;
        let mut is_typedef = false;
        while let Some(Tok::Ident(w)) = decl.get(i).map(|t| &t.tok) {
            if w == "typedef" {
                is_typedef = true;
            } else if !QUALIFIERS.contains(&w.as_str()) {
                break;
            }
            i += 1;
        }
        let (ty, rest) = match self.type_spec(&decl[i..]) {
            Ok(v) => v,
            Err(reason) => return self.skip(line, reason),
        };
        let declarators = match parse_declarators(rest) {
            Ok(d) => d,
            Err(reason) => return self.skip(line, reason),
        };
        if is_typedef {
            for d in declarators {
                match d {
                    Declarator::Plain { name, dims, .. } if dims.is_empty() => {
                        self.typedefs.insert(name, ty.clone());
                    }
                    Declarator::Plain { name, line, .. } => self.skip(line, format!("array typedef `{name}`")),
                    Declarator::Other { line, reason } => self.skip(line, reason),
                }
            }
            return;
        }
        for d in declarators {
            match d {
                Declarator::Plain { name, dims, line } => {
                    let mut visiting = HashSet::new();
                    self.emit(&name, &ty, &dims, line, &mut visiting);
                }
                Declarator::Other { line, reason } => self.skip(line, reason),
            }
        }
    }

    /// Parses a type specifier, registering any struct/enum definition it
    /// contains. Returns the type and the remaining declarator tokens.
    fn type_spec<'t>(&mut self, toks: &'t [Token]) -> std::result::Result<(TypeRef, &'t [Token]), String> {
        let word = |i: usize| match toks.get(i).map(|t| &t.tok) {
            Some(Tok::Ident(w)) => Some(w.as_str()),
            _ => None,
        };
        match word(0) {
            Some("struct" | "union") => {
                let mut i = 1;
                let tag = word(1).map(str::to_string);
                if tag.is_some() {
                    i += 1;
                }
                if toks.get(i).map(|t| &t.tok) == Some(&Tok::Punct('{')) {
                    let end = skip_block(toks, i);
                    let members = self.members(&toks[i + 1..end - 1])?;
                    let name = tag.unwrap_or_else(|| format!("<anon@{}>", toks[0].line));
                    self.structs.insert(name.clone(), members);
                    Ok((TypeRef::Struct(name), &toks[end..]))
                } else {
                    let tag = tag.ok_or("struct without tag or body")?;
                    Ok((TypeRef::Struct(tag), &toks[i..]))
                }
            }
            Some("enum") => {
                let mut i = 1;
                if word(1).is_some() {
                    i += 1;
                }
                if toks.get(i).map(|t| &t.tok) == Some(&Tok::Punct('{')) {
                    i = skip_block(toks, i);
                }
                Ok((TypeRef::Scalar(ScalarKind::Enum), &toks[i..]))
            }
            Some(w) if primitive_kind(w).is_some() || w == "void" => {
                let mut kind = primitive_kind(w);
                let mut i = 1;
                while let Some(w) = word(i) {
                    match primitive_kind(w) {
                        Some(k) => {
                            // `long double` is a float; `unsigned char` stays int
                            if k == ScalarKind::Float {
                                kind = Some(k);
                            }
                        }
                        None if QUALIFIERS.contains(&w) => {}
                        None => break,
                    }
                    i += 1;
                }
                match kind {
                    Some(k) => Ok((TypeRef::Scalar(k), &toks[i..])),
                    None => Ok((TypeRef::Alias("void".into()), &toks[i..])),
                }
            }
            Some(w) => Ok((TypeRef::Alias(w.to_string()), &toks[1..])),
            None => Err("declaration does not start with a type".into()),
        }
    }

    fn members(&mut self, body: &[Token]) -> std::result::Result<Vec<Member>, String> {
        let mut out = Vec::new();
        for decl in split_top(body, ';') {
            if decl.is_empty() {
                continue;
            }
            let mut i = 0;
            while let Some(Tok::Ident(w)) = decl.get(i).map(|t| &t.tok) {
                if !QUALIFIERS.contains(&w.as_str()) {
                    break;
                }
                i += 1;
            }
            let (ty, rest) = self.type_spec(&decl[i..])?;
            for d in parse_declarators(rest)? {
                match d {
                    Declarator::Plain { name, dims, line } => out.push(Member {
                        name,
                        ty: ty.clone(),
                        dims,
                        line,
                    }),
                    Declarator::Other { line, reason } => self.skip(line, reason),
                }
            }
        }
        Ok(out)
    }

    fn resolve(&self, ty: &TypeRef) -> std::result::Result<Leaves, String> {
        let structure = |tag: &str| {
            self.structs
                .get(tag)
                .cloned()
                .map(Leaves::Struct)
                .ok_or_else(|| format!("struct `{tag}` has no visible definition"))
        };
        match ty {
            TypeRef::Scalar(k) => Ok(Leaves::Scalar(*k)),
            TypeRef::Struct(tag) => structure(tag),
            TypeRef::Alias(name) => match self.typedefs.get(name) {
                None if name == "void" => Err("object of type void".into()),
                None => Err(format!("unknown type `{name}`")),
                Some(TypeRef::Scalar(k)) => Ok(Leaves::Scalar(*k)),
                Some(TypeRef::Struct(tag)) => structure(tag),
                Some(TypeRef::Alias(inner)) => Err(format!("typedef chain `{name}` → `{inner}` is deeper than one level")),
            },
        }
    }

    fn emit(&mut self, path: &str, ty: &TypeRef, dims: &[u64], line: usize, visiting: &mut HashSet<String>) {
        if let Some((&n, rest)) = dims.split_first() {
            for i in 0..n {
                self.emit(&format!("{path}[{i}]"), ty, rest, line, visiting);
            }
            return;
        }
        match self.resolve(ty) {
            Err(reason) => self.skip(line, format!("`{path}`: {reason}")),
            Ok(Leaves::Scalar(kind)) => {
                self.report.symbols.add_field(FieldDecl {
                    path: path.to_string(),
                    kind,
                    unit: None,
                });
            }
            Ok(Leaves::Struct(members)) => {
                let key = match ty {
                    TypeRef::Struct(t) | TypeRef::Alias(t) => t.clone(),
                    TypeRef::Scalar(_) => unreachable!(),
                };
                if !visiting.insert(key.clone()) {
                    return self.skip(line, format!("`{path}`: cyclic composite `{key}`"));
                }
                for m in members {
                    self.emit(&format!("{path}.{}", m.name), &m.ty, &m.dims, m.line, visiting);
                }
                visiting.remove(&key);
            }
        }
    }
}

enum Declarator {
    Plain { name: String, dims: Vec<u64>, line: usize },
    Other { line: usize, reason: String },
}

fn parse_declarators(toks: &[Token]) -> std::result::Result<Vec<Declarator>, String> {
    let mut out = Vec::new();
    for part in split_top(toks, ',') {
        let Some(first) = part.first() else { continue };
        let line = first.line;
        // Drop an initializer.
        let eq = part.iter().position(|t| t.tok == Tok::Punct('=')).unwrap_or(part.len());
        let part = &part[..eq];
        let ident = part
            .iter()
            .find_map(|t| match &t.tok {
                Tok::Ident(n) if !QUALIFIERS.contains(&n.as_str()) => Some(format!(" `{n}`")),
                _ => None,
            })
            .unwrap_or_default();
        let fn_ptr = matches!(part, [a, b, ..] if a.tok == Tok::Punct('(') && b.tok == Tok::Punct('*'));
        if fn_ptr {
            out.push(Declarator::Other { line, reason: format!("function pointer{ident}") });
            continue;
        }
        if part.iter().any(|t| t.tok == Tok::Punct('(')) {
            // a prototype, not a field
            continue;
        }
        if part.iter().any(|t| t.tok == Tok::Punct('*')) {
            out.push(Declarator::Other { line, reason: format!("pointer declarator{ident}") });
            continue;
        }
        let name = match part.first().map(|t| &t.tok) {
            Some(Tok::Ident(n)) if !QUALIFIERS.contains(&n.as_str()) => n.clone(),
            _ => {
                out.push(Declarator::Other { line, reason: "declarator without a name".into() });
                continue;
            }
        };
        let mut dims = Vec::new();
        let mut i = 1;
        let mut bad = None;
        while i < part.len() {
            match (&part[i].tok, part.get(i + 1).map(|t| &t.tok), part.get(i + 2).map(|t| &t.tok)) {
                (Tok::Punct('['), Some(Tok::Number(n)), Some(Tok::Punct(']'))) => {
                    match parse_c_int(n) {
                        Some(b) if b <= MAX_ARRAY_BOUND => dims.push(b),
                        _ => bad = Some(format!("array `{name}` bound `{n}` is not a literal ≤ {MAX_ARRAY_BOUND}")),
                    }
                    i += 3;
                }
                (Tok::Punct('['), _, _) => {
                    bad = Some(format!("array `{name}` has no literal bound"));
                    break;
                }
                (Tok::Punct(':'), _, _) => break, // bit-field width
                _ => {
                    bad = Some(format!("cannot classify declarator `{name}`"));
                    break;
                }
            }
        }
        out.push(match bad {
            Some(reason) => Declarator::Other { line, reason },
            None => Declarator::Plain { name, dims, line },
        });
    }
    Ok(out)
}

fn parse_c_int(text: &str) -> Option<u64> {
    let t = text.trim_end_matches(['u', 'U', 'l', 'L']);
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        t.parse().ok()
    }
}

/// Index just past the block whose opening brace is at `open`.
fn skip_block(toks: &[Token], open: usize) -> usize {
    let mut depth = 0usize;
    for (i, t) in toks.iter().enumerate().skip(open) {
        match t.tok {
            Tok::Punct('{') => depth += 1,
            Tok::Punct('}') => {
                depth -= 1;
                if depth == 0 {
                    return i + 1;
                }
            }
            _ => {}
        }
    }
    toks.len()
}

fn split_top(toks: &[Token], sep: char) -> Vec<&[Token]> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, t) in toks.iter().enumerate() {
        match t.tok {
            Tok::Punct('{' | '(' | '[') => depth += 1,
            Tok::Punct('}' | ')' | ']') => depth -= 1,
            Tok::Punct(c) if c == sep && depth == 0 => {
                out.push(&toks[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if start < toks.len() {
        out.push(&toks[start..]);
    }
    out
}

/// Renders a table as manifest text: `field <path> <kind> [<unit>]` and
/// `function <name> <file>:<line>`, one record per line.
pub fn manifest_to_string(table: &SymbolTable) -> String {
    let mut s = String::new();
    for f in &table.fields {
        let _ = write!(s, "field {} {}", f.path, f.kind.as_str());
        if let Some(u) = &f.unit {
            let _ = write!(s, " {u}");
        }
        s.push('\n');
    }
    for f in &table.functions {
        let _ = writeln!(s, "function {} {}:{}", f.name, f.file, f.line);
    }
    s
}

/// Parses manifest text. Blank lines and `#` comments are ignored.
pub fn parse_manifest(text: &str) -> Result<SymbolTable> {
    let mut table = SymbolTable::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::ManifestParse { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (record, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        match record {
            "field" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let (path, kind, unit) = match parts.as_slice() {
                    [p, k] => (*p, *k, None),
                    [p, k, u] => (*p, *k, Some(u.to_string())),
                    _ => return Err(err(format!("expected `field <path> <kind> [<unit>]`, got `{trimmed}`"))),
                };
                if !valid_path(path) {
                    return Err(err(format!("`{path}` is not a field path")));
                }
                let kind: ScalarKind = kind.parse().map_err(err)?;
                if !table.add_field(FieldDecl { path: path.to_string(), kind, unit }) {
                    return Err(err(format!("duplicate field `{path}`")));
                }
            }
            "function" => {
                let (name, loc) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| err(format!("expected `function <name> <file>:<line>`, got `{trimmed}`")))?;
                let (file, no) = loc
                    .trim()
                    .rsplit_once(':')
                    .ok_or_else(|| err(format!("`{loc}` is not `<file>:<line>`")))?;
                let no: usize = no.parse().map_err(|_| err(format!("`{no}` is not a line number")))?;
                if !is_ident(name) {
                    return Err(err(format!("`{name}` is not a function name")));
                }
                let decl = FunctionDecl {
                    name: name.to_string(),
                    file: file.to_string(),
                    line: no,
                };
                if !table.add_function(decl) {
                    return Err(err(format!("duplicate function `{name}` in `{file}`")));
                }
            }
            other => return Err(err(format!("unknown record `{other}`"))),
        }
    }
    Ok(table)
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn valid_path(path: &str) -> bool {
    path.split('.').all(|seg| {
        let mut s = seg;
        while let Some(head) = s.strip_suffix(']') {
            match head.rsplit_once('[') {
                Some((h, idx)) if !idx.is_empty() && idx.chars().all(|c| c.is_ascii_digit()) => s = h,
                _ => return false,
            }
        }
        is_ident(s)
    })
}

pub fn load_manifest(path: &Path) -> Result<SymbolTable> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn save_manifest(table: &SymbolTable, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(table))?;
    Ok(())
}
