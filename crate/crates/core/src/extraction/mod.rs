//! Codebase extraction: function and macro records, pointer typedefs,
//! direct call edges, and the candidate prefilter.

mod aliases;
pub(crate) mod parse;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use crate::syntax::Language;
pub use aliases::{AliasEntry, PointerAliasTable};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub struct SourceSpan {
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
}

impl SourceSpan {
    pub fn new(file: impl Into<String>, start_line: u32, end_line: u32) -> Self {
        let start_line = start_line.max(1);
        SourceSpan { file: file.into(), start_line, end_line: end_line.max(start_line) }
    }

    pub fn line(file: impl Into<String>, line: u32) -> Self {
        SourceSpan::new(file, line, line)
    }

    pub fn contains_line(&self, line: u32) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Function,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub name: String,
    pub return_type: String,
    pub params: Vec<Param>,
    /// Full definition text, starting at `span.start_line`.
    pub body: String,
    /// Direct callees in order of first occurrence.
    pub callees: Vec<String>,
    pub kind: RecordKind,
    pub span: SourceSpan,
    pub language: Language,
}

impl FunctionRecord {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: Option<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub extensions: Vec<String>,
    pub test_substring: String,
    pub entry_points: Vec<String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            extensions: ["c", "h", "cc", "cpp", "cxx", "hpp"].map(String::from).to_vec(),
            test_substring: "test".into(),
            entry_points: vec!["main".into(), "wmain".into()],
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("cannot read source root {path}: {source}")]
    UnreadableRoot { path: PathBuf, source: io::Error },
    #[error("no files with extensions {extensions:?} under {path}")]
    NoSources { path: PathBuf, extensions: Vec<String> },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Codebase {
    pub root: PathBuf,
    pub records: Vec<FunctionRecord>,
    pub alias_table: PointerAliasTable,
    pub call_graph_edges: BTreeMap<String, BTreeSet<String>>,
    /// Callee names with no record in the codebase.
    pub externals: BTreeSet<String>,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Codebase {
    pub fn from_records(root: impl Into<PathBuf>, records: Vec<FunctionRecord>, alias_table: PointerAliasTable) -> Self {
        let mut cb = Codebase { root: root.into(), records, alias_table, ..Default::default() };
        cb.rebuild();
        cb
    }

    /// Recomputes the name index, call edges and external set.
    pub fn rebuild(&mut self) {
        self.index.clear();
        for (i, r) in self.records.iter().enumerate() {
            self.index.entry(r.name.clone()).or_insert(i);
        }
        self.call_graph_edges.clear();
        self.externals.clear();
        for r in &self.records {
            let edges = self.call_graph_edges.entry(r.name.clone()).or_default();
            for c in &r.callees {
                edges.insert(c.clone());
                if !self.index.contains_key(c) {
                    self.externals.insert(c.clone());
                }
            }
        }
    }

    /// First record with this name in file order.
    pub fn get(&self, name: &str) -> Option<&FunctionRecord> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    /// Innermost function record in `file` whose span covers `line`.
    pub fn function_at(&self, file: &str, line: u32) -> Option<&FunctionRecord> {
        self.records
            .iter()
            .filter(|r| r.kind == RecordKind::Function && same_file(&r.span.file, file) && r.span.contains_line(line))
            .min_by_key(|r| r.span.end_line - r.span.start_line)
    }

    pub fn is_external(&self, name: &str) -> bool {
        !self.index.contains_key(name)
    }

    pub fn load(path: &Path) -> io::Result<Codebase> {
        let text = fs::read_to_string(path)?;
        let mut cb: Codebase = serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        cb.rebuild();
        Ok(cb)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(path, text + "\n")
    }
}

/// Analyzer reports may use absolute or differently rooted paths.
pub(crate) fn same_file(a: &str, b: &str) -> bool {
    let a = a.trim_start_matches("./");
    let b = b.trim_start_matches("./");
    a == b || a.ends_with(&format!("/{b}")) || b.ends_with(&format!("/{a}"))
}

/// Output of parsing one translation unit.
#[derive(Debug, Default)]
pub(crate) struct FileExtract {
    pub records: Vec<FunctionRecord>,
    pub typedefs: Vec<(String, String, bool)>,
    pub diagnostics: Vec<Diagnostic>,
}

fn collect_sources(root: &Path, config: &ExtractionConfig) -> Result<Vec<(String, PathBuf)>, ExtractionError> {
    let meta = fs::metadata(root).map_err(|source| ExtractionError::UnreadableRoot { path: root.into(), source })?;
    if meta.is_file() {
        let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| ExtractionError::UnreadableRoot {
            path: root.into(),
            source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk error")),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry.path().extension().and_then(|e| e.to_str()).unwrap_or("");
        if !config.extensions.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        out.push((rel, entry.path().to_path_buf()));
    }
    out.sort();
    Ok(out)
}

pub fn parse_codebase(root: &Path, config: &ExtractionConfig) -> Result<Codebase, ExtractionError> {
    let files = collect_sources(root, config)?;
    if files.is_empty() {
        return Err(ExtractionError::NoSources { path: root.into(), extensions: config.extensions.clone() });
    }
    let extracts: Vec<FileExtract> = files
        .par_iter()
        .map(|(rel, path)| match fs::read(path) {
            Ok(bytes) => {
                let source = String::from_utf8_lossy(&bytes);
                let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
                parse::extract_file(rel, &source, Language::from_extension(ext))
            }
            Err(e) => FileExtract {
                diagnostics: vec![Diagnostic { file: rel.clone(), line: None, message: format!("skipped: {e}") }],
                ..Default::default()
            },
        })
        .collect();

    let mut records = Vec::new();
    let mut typedefs = Vec::new();
    let mut diagnostics = Vec::new();
    for fx in extracts {
        records.extend(fx.records);
        typedefs.extend(fx.typedefs);
        diagnostics.extend(fx.diagnostics);
    }
    let alias_table = PointerAliasTable::build(typedefs);
    for name in alias_table.cyclic_names() {
        diagnostics.push(Diagnostic { file: String::new(), line: None, message: format!("typedef cycle broken at {name}") });
    }
    let mut cb = Codebase::from_records(root, records, alias_table);
    cb.diagnostics = diagnostics;
    Ok(cb)
}

pub fn is_entry_or_test(name: &str, config: &ExtractionConfig) -> bool {
    if config.entry_points.iter().any(|e| e == name) {
        return true;
    }
    !config.test_substring.is_empty() && name.to_lowercase().contains(&config.test_substring.to_lowercase())
}

/// Keeps macros and pointer-signature functions, dropping entry points and
/// test functions.
pub fn prefilter(codebase: &Codebase, config: &ExtractionConfig) -> Vec<FunctionRecord> {
    prefilter_records(&codebase.records, &codebase.alias_table, config)
}

pub fn prefilter_records(records: &[FunctionRecord], aliases: &PointerAliasTable, config: &ExtractionConfig) -> Vec<FunctionRecord> {
    records
        .iter()
        .filter(|r| !is_entry_or_test(&r.name, config))
        .filter(|r| match r.kind {
            RecordKind::Macro => true,
            RecordKind::Function => {
                aliases.is_pointer_type(&r.return_type) || r.params.iter().any(|p| aliases.is_pointer_type(&p.ty))
            }
        })
        .cloned()
        .collect()
}

/// Writes one JSON-lines document per translation unit under `dir`.
pub fn write_index(codebase: &Codebase, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut by_file: BTreeMap<&str, Vec<&FunctionRecord>> = BTreeMap::new();
    for r in &codebase.records {
        by_file.entry(&r.span.file).or_default().push(r);
    }
    let mut written = Vec::new();
    for (file, recs) in by_file {
        let path = dir.join(format!("{}.jsonl", file.replace(['/', '\\'], "__")));
        let mut out = io::BufWriter::new(fs::File::create(&path)?);
        for r in recs {
            serde_json::to_writer(&mut out, r).map_err(io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Parses a single in-memory source text.
pub fn parse_source(file: &str, source: &str, language: Language) -> (Vec<FunctionRecord>, PointerAliasTable, Vec<Diagnostic>) {
    let fx = parse::extract_file(file, source, language);
    (fx.records, PointerAliasTable::build(fx.typedefs), fx.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(src: &str) -> Vec<FunctionRecord> {
        parse_source("t.c", src, Language::C).0
    }

    #[test]
    fn minimal_main() {
        let rs = records("int main(void){return 0;}");
        assert_eq!(rs.len(), 1);
        assert_eq!(rs[0].name, "main");
        assert_eq!(rs[0].return_type, "int");
        assert!(rs[0].params.is_empty());
        assert_eq!(rs[0].kind, RecordKind::Function);
        assert_eq!(rs[0].span, SourceSpan::new("t.c", 1, 1));
    }

    #[test]
    fn pointer_return_and_params() {
        let rs = records("static char *\ndup(const char *s, int n)\n{\n  return strdup(s);\n}\n");
        let r = &rs[0];
        assert_eq!(r.name, "dup");
        assert_eq!(r.return_type, "char *");
        assert_eq!(r.params, vec![
            Param { name: "s".into(), ty: "const char *".into() },
            Param { name: "n".into(), ty: "int".into() },
        ]);
        assert_eq!(r.callees, vec!["strdup"]);
        assert_eq!((r.span.start_line, r.span.end_line), (1, 5));
    }

    #[test]
    fn callees_are_ordered_and_direct_only() {
        let rs = records("void f(void (*cb)(void)){ g(); h(1); g(); cb(); s.fn(); }");
        assert_eq!(rs[0].callees, vec!["g", "h"]);
    }

    #[test]
    fn function_like_macro_becomes_record() {
        let src = "#define SAFE_FREE(p) do { free(p); (p) = NULL; } while (0)\n#define LIMIT 4\n";
        let rs = records(src);
        assert_eq!(rs.len(), 1);
        assert_eq!(rs[0].name, "SAFE_FREE");
        assert_eq!(rs[0].kind, RecordKind::Macro);
        assert_eq!(rs[0].params[0].name, "p");
        assert_eq!(rs[0].callees, vec!["free"]);
    }

    #[test]
    fn pointer_typedef_is_pointer_like() {
        let (rs, table, _) = parse_source("t.c", "typedef struct S* SPtr;\ntypedef SPtr Handle;\ntypedef int Count;\nHandle get(Count c);\nHandle make(Count c){ return 0; }", Language::C);
        assert!(table.is_pointer_like("SPtr"));
        assert!(table.is_pointer_like("Handle"));
        assert!(!table.is_pointer_like("Count"));
        let cb = Codebase::from_records("/", rs, table);
        let kept = prefilter(&cb, &ExtractionConfig::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].name, "make");
    }

    #[test]
    fn prefilter_examples() {
        let src = "char *main(void){return 0;}\nint add(int a, int b){return a+b;}\n#define LOG_MSG() puts(\"x\")\nchar *test_alloc(void){return 0;}\nvoid *TestHelper(void){return 0;}\nvoid *keep(void){return 0;}\n";
        let (rs, table, _) = parse_source("t.c", src, Language::C);
        let cb = Codebase::from_records("/", rs, table);
        let kept: Vec<String> = prefilter(&cb, &ExtractionConfig::default()).into_iter().map(|r| r.name).collect();
        assert_eq!(kept, vec!["LOG_MSG", "keep"]);
    }

    #[test]
    fn array_parameters_are_not_pointers() {
        let (rs, table, _) = parse_source("t.c", "int sum(int xs[], int n){return 0;}", Language::C);
        let cb = Codebase::from_records("/", rs, table);
        assert!(prefilter(&cb, &ExtractionConfig::default()).is_empty());
    }

    #[test]
    fn cpp_methods_and_namespaces() {
        let src = "namespace a { struct B { int *get() { return new int; } }; }\nvoid a::C::run(int *p) { delete p; }\n";
        let (rs, _, _) = parse_source("t.cpp", src, Language::Cpp);
        let names: Vec<&str> = rs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["get", "a::C::run"]);
        assert_eq!(rs[0].return_type, "int *");
    }

    #[test]
    fn both_ifdef_arms_are_recorded() {
        let src = "#ifdef WIN32\nvoid *open_a(void){return 0;}\n#else\nvoid *open_b(void){return 0;}\n#endif\n";
        let names: Vec<String> = records(src).into_iter().map(|r| r.name).collect();
        assert_eq!(names, vec!["open_a", "open_b"]);
    }
}
