//! Prompt templates with `{name}` placeholders.
//!
//! Built-in defaults can be overridden from a directory holding
//! `<name>.system.txt` and/or `<name>.user.txt`. Each template carries a
//! content hash that is written into the trace, so a run records exactly
//! which wording produced it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::llm::marker::{self, Marker};
use crate::llm::ChatMessage;
use crate::util::fnv1a;

pub const RANKGPT: &str = "rankgpt";
pub const FIRST: &str = "first";
pub const RELEVANCE_GENERATION: &str = "relevance_generation";
pub const QUERY_GENERATION: &str = "query_generation";
pub const FINE_GRAINED: &str = "fine_grained";
pub const PRP: &str = "prp";
pub const TOURRANK: &str = "tourrank";

const RANKGPT_SYSTEM: &str = "You are RankGPT, an intelligent assistant that ranks passages by their relevance to a search query.";
const RANKGPT_USER: &str = "I will give you {num} passages, each marked with a numerical identifier in brackets. Rank them by relevance to the query: {query}

{items}

Search query: {query}
Rank the {num} passages above from most to least relevant. List every identifier exactly once, using the format [] > [], for example [2] > [1]. Reply with the ranking only.";

const FIRST_USER: &str = "I will give you {num} passages, each marked with a numerical identifier. Rank them by relevance to the query: {query}

{items}

Search query: {query}
Rank the {num} passages above from most to least relevant, in the format 2 > 1 > 3. Start your reply with the identifier of the most relevant passage.";

const RELGEN_USER: &str = "Passage: {doc}
Query: {query}
Does the passage answer the query? Answer yes or no.";

const QGEN_USER: &str = "Passage: {doc}
Please write a question that this passage answers.";

const FINE_GRAINED_USER: &str = "For the following query and document, judge whether they are {labels}.
Query: {query}
Document: {doc}
Output one of the labels only.";

const PRP_USER: &str = "Given the query \"{query}\", which of the following two passages is more relevant to the query?

Passage A: {docA}

Passage B: {docB}

Answer with the letter A or B only.";

const TOURRANK_SYSTEM: &str = "You are an intelligent assistant that selects the passages most relevant to a search query.";
const TOURRANK_USER: &str = "I will give you {num} passages, each marked with a numerical identifier in brackets. Select the {m} passages most relevant to the query: {query}

{items}

Search query: {query}
Reply with the identifiers of the {m} most relevant passages only, for example [3], [1].";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub system: String,
    pub user: String,
    /// Placeholders the calling model fills in; all must occur in the text.
    pub required: Vec<String>,
}

impl PromptTemplate {
    fn builtin(name: &str, system: &str, user: &str, required: &[&str]) -> Self {
        Self {
            name: name.to_owned(),
            system: system.to_owned(),
            user: user.to_owned(),
            required: required.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.user.trim().is_empty() {
            return Err(format!("template `{}` has an empty user part", self.name));
        }
        let text = format!("{}\n{}", self.system, self.user);
        for p in &self.required {
            if !text.contains(&format!("{{{p}}}")) {
                return Err(format!("template `{}` lacks placeholder {{{p}}}", self.name));
            }
        }
        Ok(())
    }

    /// `name@hash` where the hash covers both parts.
    pub fn version(&self) -> String {
        let h = fnv1a(format!("{}\u{0}{}", self.system, self.user).as_bytes());
        format!("{}@{:08x}", self.name, h as u32)
    }

    /// Renders system and user turns; the marker header goes on the user turn.
    pub fn render(&self, vars: &[(&str, &str)], marker: &Marker) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(2);
        if !self.system.trim().is_empty() {
            out.push(ChatMessage::system(substitute(&self.system, vars)));
        }
        out.push(ChatMessage::user(marker::attach(marker, &substitute(&self.user, vars))));
        out
    }
}

/// Replaces `{name}` occurrences of known names in one left-to-right pass;
/// substituted text is never rescanned.
pub fn substitute(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Read-only set of templates by name.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let list = [
            PromptTemplate::builtin(RANKGPT, RANKGPT_SYSTEM, RANKGPT_USER, &["query", "items"]),
            PromptTemplate::builtin(FIRST, RANKGPT_SYSTEM, FIRST_USER, &["query", "items"]),
            PromptTemplate::builtin(RELEVANCE_GENERATION, "", RELGEN_USER, &["query", "doc"]),
            PromptTemplate::builtin(QUERY_GENERATION, "", QGEN_USER, &["doc"]),
            PromptTemplate::builtin(FINE_GRAINED, "", FINE_GRAINED_USER, &["query", "doc"]),
            PromptTemplate::builtin(PRP, "", PRP_USER, &["query", "docA", "docB"]),
            PromptTemplate::builtin(TOURRANK, TOURRANK_SYSTEM, TOURRANK_USER, &["query", "items", "m"]),
        ];
        Self { templates: list.into_iter().map(|t| (t.name.clone(), t)).collect() }
    }
}

impl TemplateRegistry {
    pub fn get(&self, name: &str) -> Option<&PromptTemplate> {
        self.templates.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn insert(&mut self, template: PromptTemplate) -> Result<(), String> {
        template.validate()?;
        self.templates.insert(template.name.clone(), template);
        Ok(())
    }

    /// Defaults overlaid with `*.system.txt` / `*.user.txt` files from `dir`.
    ///
    /// A file for a built-in name replaces that part and inherits the
    /// built-in's required placeholders; a new name starts with no
    /// requirements and an empty system part.
    pub fn with_overrides(dir: &Path) -> io::Result<Self> {
        let mut reg = Self::default();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let file_name = entry.file_name().to_string_lossy().into_owned();
            let (name, part) = if let Some(n) = file_name.strip_suffix(".system.txt") {
                (n.to_owned(), "system")
            } else if let Some(n) = file_name.strip_suffix(".user.txt") {
                (n.to_owned(), "user")
            } else {
                continue;
            };
            let text = fs::read_to_string(entry.path())?;
            let text = text.strip_suffix('\n').unwrap_or(&text).to_owned();
            let t = reg.templates.entry(name.clone()).or_insert_with(|| PromptTemplate {
                name,
                system: String::new(),
                user: String::new(),
                required: Vec::new(),
            });
            if part == "system" {
                t.system = text;
            } else {
                t.user = text;
            }
        }
        for t in reg.templates.values() {
            t.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::marker::Intent;

    #[test]
    fn substitute_single_pass() {
        let s = substitute("Q: {query} D: {doc} {unknown} {", &[("query", "{doc}"), ("doc", "x")]);
        assert_eq!(s, "Q: {doc} D: x {unknown} {");
    }

    #[test]
    fn defaults_are_valid() {
        let reg = TemplateRegistry::default();
        for name in reg.names() {
            reg.get(name).unwrap().validate().unwrap();
        }
        assert_eq!(reg.names().count(), 7);
    }

    #[test]
    fn render_attaches_marker() {
        let reg = TemplateRegistry::default();
        let t = reg.get(RELEVANCE_GENERATION).unwrap();
        let m = Marker::new(Intent::Pointwise, "q1", vec!["d1".into()]);
        let msgs = t.render(&[("query", "who"), ("doc", "text")], &m);
        assert_eq!(msgs.len(), 1);
        assert!(msgs[0].content.starts_with("#intent:pointwise#"));
        assert!(msgs[0].content.contains("Passage: text\nQuery: who"));
    }

    #[test]
    fn overrides_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("prp.user.txt"), "Q {query}\nA {docA}\nB {docB}\n").unwrap();
        let reg = TemplateRegistry::with_overrides(dir.path()).unwrap();
        assert_eq!(reg.get(PRP).unwrap().user, "Q {query}\nA {docA}\nB {docB}");
        assert_ne!(reg.get(PRP).unwrap().version(), TemplateRegistry::default().get(PRP).unwrap().version());

        fs::write(dir.path().join("prp.user.txt"), "missing placeholders").unwrap();
        assert!(TemplateRegistry::with_overrides(dir.path()).is_err());
    }
}
