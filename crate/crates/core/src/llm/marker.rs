//! Structured intent header embedded in rendered prompts.
//!
//! The model layer prepends a single line of the form
//! `#intent:<kind># {"query_id":..,"doc_ids":[..]}` to the user turn. The
//! mock backend reads it to answer from its hidden score table; network
//! backends strip it before anything leaves the process.

use serde::{Deserialize, Serialize};

use super::{ChatMessage, Role};

const PREFIX: &str = "#intent:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Pointwise,
    Pairwise,
    Listwise,
    Select,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Pointwise => "pointwise",
            Intent::Pairwise => "pairwise",
            Intent::Listwise => "listwise",
            Intent::Select => "select",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pointwise" => Intent::Pointwise,
            "pairwise" => Intent::Pairwise,
            "listwise" => Intent::Listwise,
            "select" => Intent::Select,
            _ => return None,
        })
    }
}

/// Identifiers of the query and the documents shown in a prompt, in
/// prompt order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    #[serde(skip)]
    pub intent: Option<Intent>,
    pub query_id: String,
    pub doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl Marker {
    pub fn new(intent: Intent, query_id: impl Into<String>, doc_ids: Vec<String>) -> Self {
        Self {
            intent: Some(intent),
            query_id: query_id.into(),
            doc_ids,
            select: None,
            labels: None,
        }
    }

    pub fn header_line(&self) -> String {
        let intent = self.intent.map(Intent::as_str).unwrap_or("pointwise");
        let payload = serde_json::to_string(self).expect("marker payload serializes");
        format!("{PREFIX}{intent}# {payload}")
    }

    fn parse_line(line: &str) -> Option<Self> {
        let rest = line.strip_prefix(PREFIX)?;
        let (intent, payload) = rest.split_once('#')?;
        let intent = Intent::parse(intent)?;
        let mut marker: Marker = serde_json::from_str(payload.trim()).ok()?;
        marker.intent = Some(intent);
        Some(marker)
    }
}

fn is_marker_line(line: &str) -> bool {
    line.starts_with(PREFIX)
}

/// Prepends the marker header to `content`.
pub fn attach(marker: &Marker, content: &str) -> String {
    format!("{}\n{content}", marker.header_line())
}

/// Finds the first marker in any user turn.
pub fn find(messages: &[ChatMessage]) -> Option<Marker> {
    messages
        .iter()
        .filter(|m| m.role == Role::User)
        .flat_map(|m| m.content.lines())
        .find_map(Marker::parse_line)
}

/// Removes every marker line from the messages.
pub fn strip(messages: &[ChatMessage]) -> Vec<ChatMessage> {
    messages
        .iter()
        .map(|m| {
            if !m.content.lines().any(is_marker_line) {
                return m.clone();
            }
            let content = m
                .content
                .lines()
                .filter(|l| !is_marker_line(l))
                .collect::<Vec<_>>()
                .join("\n");
            ChatMessage { role: m.role, content }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attach_find_strip() {
        let mut marker = Marker::new(Intent::Select, "q1", vec!["d1".into(), "d\n2".into()]);
        marker.select = Some(1);
        let msgs = vec![
            ChatMessage::system("sys"),
            ChatMessage::user(attach(&marker, "Pick one.\n[1] a\n[2] b")),
        ];
        let found = find(&msgs).unwrap();
        assert_eq!(found, marker);

        let stripped = strip(&msgs);
        assert_eq!(stripped[0], msgs[0]);
        assert_eq!(stripped[1].content, "Pick one.\n[1] a\n[2] b");
        assert!(find(&stripped).is_none());
    }

    #[test]
    fn unknown_intent_is_ignored() {
        let msgs = vec![ChatMessage::user("#intent:dance# {\"query_id\":\"q\",\"doc_ids\":[]}")];
        assert!(find(&msgs).is_none());
    }
}
