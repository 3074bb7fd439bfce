//! Workload samples: four classes of synthetic coding-agent traffic with
//! gold labels, committed as JSONL with content hashes. The generator is a
//! pure function of (class, index) so the committed files can always be
//! reproduced bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::Message;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkloadClass {
    #[serde(rename = "WL1_edit")]
    Wl1Edit,
    #[serde(rename = "WL2_explain")]
    Wl2Explain,
    #[serde(rename = "WL3_chat")]
    Wl3Chat,
    #[serde(rename = "WL4_rag")]
    Wl4Rag,
}

impl WorkloadClass {
    pub const ALL: [WorkloadClass; 4] = [
        WorkloadClass::Wl1Edit,
        WorkloadClass::Wl2Explain,
        WorkloadClass::Wl3Chat,
        WorkloadClass::Wl4Rag,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WorkloadClass::Wl1Edit => "WL1_edit",
            WorkloadClass::Wl2Explain => "WL2_explain",
            WorkloadClass::Wl3Chat => "WL3_chat",
            WorkloadClass::Wl4Rag => "WL4_rag",
        }
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            WorkloadClass::Wl1Edit => "wl1_edit.jsonl",
            WorkloadClass::Wl2Explain => "wl2_explain.jsonl",
            WorkloadClass::Wl3Chat => "wl3_chat.jsonl",
            WorkloadClass::Wl4Rag => "wl4_rag.jsonl",
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            WorkloadClass::Wl1Edit => "wl1",
            WorkloadClass::Wl2Explain => "wl2",
            WorkloadClass::Wl3Chat => "wl3",
            WorkloadClass::Wl4Rag => "wl4",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadSample {
    pub id: String,
    pub class: WorkloadClass,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_trivial_gold: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_edit_gold: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_gold: Option<String>,
    pub content_hash: String,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read workload file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line} is not a valid sample: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("content hash mismatch for sample {id}")]
    IntegrityFailure { id: String },
}

/// Hash of the canonical message serialization; what `content_hash` pins.
pub fn message_hash(messages: &[Message]) -> String {
    let canonical = serde_json::to_string(messages).expect("messages serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Parse a workload JSONL file, verifying every sample's content hash.
pub fn load_workload(path: &Path) -> Result<Vec<WorkloadSample>, WorkloadError> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: WorkloadSample = serde_json::from_str(line)
            .map_err(|e| WorkloadError::Malformed { line: idx + 1, detail: e.to_string() })?;
        if message_hash(&sample.messages) != sample.content_hash {
            return Err(WorkloadError::IntegrityFailure { id: sample.id });
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Load all four committed class files from a directory.
pub fn load_all(dir: &Path) -> Result<Vec<(WorkloadClass, Vec<WorkloadSample>)>, WorkloadError> {
    WorkloadClass::ALL
        .iter()
        .map(|class| Ok((*class, load_workload(&dir.join(class.file_name()))?)))
        .collect()
}

pub fn write_workload_file(path: &Path, samples: &[WorkloadSample]) -> std::io::Result<()> {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&serde_json::to_string(sample).expect("sample serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

// ---------------------------------------------------------------------------
// Deterministic sample generation
// ---------------------------------------------------------------------------

const SUBSYSTEMS: [&str; 8] = [
    "scheduler", "parser", "session pool", "retry queue", "index writer", "token ledger",
    "migration runner", "config loader",
];
const ACTIONS: [&str; 6] =
    ["records", "validates", "re-reads", "serializes", "throttles", "checkpoints"];

/// Filler prose sized by sentence count; pure function of (topic, salt).
fn notes(topic: &str, sentences: usize, salt: usize) -> String {
    let mut out = String::new();
    for i in 0..sentences {
        let subsystem = SUBSYSTEMS[(salt + i) % SUBSYSTEMS.len()];
        let action = ACTIONS[(salt * 3 + i) % ACTIONS.len()];
        out.push_str(&format!(
            "Note {i} on {topic}: the {subsystem} {action} value {} during step {} of the run. ",
            (salt * 31 + i * 7) % 997,
            i % 9,
        ));
    }
    out
}

fn code_file(slug: &str, lines: usize) -> String {
    let mut out = String::new();
    for i in 1..=lines {
        out.push_str(&format!("pub fn item_{i:04}_{slug}() -> u32 {{ {i} * 3 }}\n"));
    }
    out
}

fn system_boilerplate(class: WorkloadClass, sentences: usize) -> String {
    format!(
        "You are a coding assistant operating on the {} workspace. Follow the project rules. {}",
        class.as_str(),
        notes("project conventions", sentences, 11),
    )
}

fn seal(mut sample: WorkloadSample) -> WorkloadSample {
    sample.content_hash = message_hash(&sample.messages);
    sample
}

fn sample(
    class: WorkloadClass,
    idx: usize,
    messages: Vec<Message>,
    trivial: bool,
    edit: bool,
    intent_gold: Option<&str>,
) -> WorkloadSample {
    seal(WorkloadSample {
        id: format!("{}-s{idx:02}", class.prefix()),
        class,
        messages,
        is_trivial_gold: Some(trivial),
        is_edit_gold: Some(edit),
        intent_gold: intent_gold.map(str::to_string),
        content_hash: String::new(),
    })
}

/// WL1 edit-heavy: 10 samples, 6 edits, 3 trivial; 8-20K token inputs.
fn generate_wl1() -> Vec<WorkloadSample> {
    let class = WorkloadClass::Wl1Edit;
    let system = system_boilerplate(class, 90);
    let mut samples = Vec::new();
    for idx in 0..6 {
        let id = format!("wl1-s{idx:02}");
        let body = code_file(&format!("mod{idx}"), 620 + idx * 9);
        let user = format!(
            "Ticket {id}: please change the retry limit constant used by item_{:04}_mod{idx} and \
             update the callers to match.\n```src/{id}_config.rs\n{body}```",
            120 + idx,
        );
        samples.push(sample(
            class,
            idx,
            vec![Message::system(system.clone()), Message::user(user)],
            false,
            true,
            if idx < 2 { Some("refactor") } else { None },
        ));
    }
    for idx in 6..9 {
        let id = format!("wl1-s{idx:02}");
        let user = format!(
            "Ticket {id}: what does the function item_0042_mod{idx} return?\nReference notes:\n{}",
            notes("the module under review", 250, idx),
        );
        samples.push(sample(
            class,
            idx,
            vec![Message::system(system.clone()), Message::user(user)],
            true,
            false,
            if idx < 8 { Some("explain") } else { None },
        ));
    }
    let user = format!(
        "Ticket wl1-s09: why does the session pool deadlock when two migrations run at once? \
         Walk through the locking order.\nReference notes:\n{}",
        notes("lock ordering", 290, 9),
    );
    samples.push(sample(
        class,
        9,
        vec![Message::system(system), Message::user(user)],
        false,
        false,
        Some("debug"),
    ));
    samples
}

/// WL2 explanation-heavy: 10 samples, 5 trivial, 1 edit; 4-12K token inputs.
fn generate_wl2() -> Vec<WorkloadSample> {
    let class = WorkloadClass::Wl2Explain;
    let system = system_boilerplate(class, 24);
    let mut samples = Vec::new();
    for (idx, subsystem) in SUBSYSTEMS.iter().enumerate().take(5) {
        let id = format!("wl2-s{idx:02}");
        let user = format!(
            "Ticket {id}: what does the {subsystem} do in this codebase?\nOnboarding notes:\n{}",
            notes("the onboarding tour", 180, idx),
        );
        samples.push(sample(
            class,
            idx,
            vec![Message::system(system.clone()), Message::user(user)],
            true,
            false,
            if idx % 2 == 0 { Some("explain") } else { None },
        ));
    }
    {
        let id = "wl2-s05";
        let body = code_file("limits", 140);
        let user = format!(
            "Ticket {id}: replace the constant in item_0007_limits with the documented default.\n\
             ```src/limits.rs\n{body}```\nContext:\n{}",
            notes("limit tuning", 120, 5),
        );
        samples.push(sample(
            class,
            5,
            vec![Message::system(system.clone()), Message::user(user)],
            false,
            true,
            None,
        ));
    }
    for idx in 6..10 {
        let id = format!("wl2-s{idx:02}");
        let user = format!(
            "Ticket {id}: walk me through the full lifecycle of a request in the {} and how \
             errors propagate between stages.\nOnboarding notes:\n{}",
            SUBSYSTEMS[idx % SUBSYSTEMS.len()],
            notes("request lifecycle", 220, idx),
        );
        samples.push(sample(
            class,
            idx,
            vec![Message::system(system.clone()), Message::user(user)],
            false,
            false,
            Some("explain"),
        ));
    }
    samples
}

/// WL3 mixed chat: 10 samples, 5 trivial, no edits; 0.5-4K token inputs.
fn generate_wl3() -> Vec<WorkloadSample> {
    let class = WorkloadClass::Wl3Chat;
    let mut samples = Vec::new();
    let quick_asks = [
        "what year did unix time start?",
        "give me a one-line description of a bloom filter.",
        "what is the plural of index in technical writing?",
        "name the http status for too many requests.",
        "how many bytes in a megabyte, using SI units?",
    ];
    for (idx, ask) in quick_asks.iter().enumerate() {
        let id = format!("wl3-s{idx:02}");
        let user = format!("Ticket {id}: {ask}\n{}", notes("quick question context", 24, idx));
        samples.push(sample(class, idx, vec![Message::user(user)], true, false, None));
    }
    for idx in 5..10 {
        let id = format!("wl3-s{idx:02}");
        let history_seed = notes("the earlier discussion", 60, idx);
        let messages = vec![
            Message::user(format!("Earlier context: {history_seed}")),
            Message::assistant(format!(
                "Summary so far: {}",
                notes("assistant recap", 30, idx + 1)
            )),
            Message::user(format!(
                "Ticket {id}: given all that, compare the two approaches and recommend one, \
                 considering failure modes and operational cost.",
            )),
        ];
        samples.push(sample(class, idx, messages, false, false, None));
    }
    samples
}

/// WL4 RAG-heavy: 10 samples, 2 trivial, no edits; 10-40K token inputs with
/// long retrieved context. Retrieved chunks naturally contain edit keywords,
/// which is what makes the diff tactic over-trigger on this class.
fn generate_wl4() -> Vec<WorkloadSample> {
    let class = WorkloadClass::Wl4Rag;
    let mut samples = Vec::new();
    for idx in 0..10 {
        let id = format!("wl4-s{idx:02}");
        let system = format!(
            "{}\nRetrieved chunks:\n{}",
            system_boilerplate(class, 30),
            notes("the retrieved corpus", 420, idx),
        );
        let doc = format!(
            "Release notes excerpt (retrieved):\nThe change introduced in v{idx}.2 moved the \
             {} behind a feature gate.\n{}",
            SUBSYSTEMS[idx % SUBSYSTEMS.len()],
            notes("the release document", 430, idx + 3),
        );
        let (ask, trivial, intent) = if idx >= 8 {
            ("quote the version where the feature gate was added.", true, None)
        } else {
            (
                "summarize what changed across these documents and what operators must do \
                 before upgrading.",
                false,
                Some("search"),
            )
        };
        let user = format!("Ticket {id}: {ask}\n{doc}");
        samples.push(sample(
            class,
            idx,
            vec![Message::system(system), Message::user(user)],
            trivial,
            false,
            intent,
        ));
    }
    samples
}

/// All four classes, generated deterministically.
pub fn builtin_workloads() -> Vec<(WorkloadClass, Vec<WorkloadSample>)> {
    vec![
        (WorkloadClass::Wl1Edit, generate_wl1()),
        (WorkloadClass::Wl2Explain, generate_wl2()),
        (WorkloadClass::Wl3Chat, generate_wl3()),
        (WorkloadClass::Wl4Rag, generate_wl4()),
    ]
}

/// Write the committed class files into `dir`.
pub fn write_workload_files(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (class, samples) in builtin_workloads() {
        write_workload_file(&dir.join(class.file_name()), &samples)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::count_tokens;
    use crate::types::Role;

    #[test]
    fn every_class_has_ten_samples_with_declared_fractions() {
        let workloads = builtin_workloads();
        assert_eq!(workloads.len(), 4);
        let expect = [
            (WorkloadClass::Wl1Edit, 3usize, 6usize),
            (WorkloadClass::Wl2Explain, 5, 1),
            (WorkloadClass::Wl3Chat, 5, 0),
            (WorkloadClass::Wl4Rag, 2, 0),
        ];
        for ((class, samples), (expected_class, trivial, edits)) in workloads.iter().zip(expect) {
            assert_eq!(*class, expected_class);
            assert_eq!(samples.len(), 10);
            let trivial_count =
                samples.iter().filter(|s| s.is_trivial_gold == Some(true)).count();
            let edit_count = samples.iter().filter(|s| s.is_edit_gold == Some(true)).count();
            assert_eq!(trivial_count, trivial, "{class:?} trivial fraction");
            assert_eq!(edit_count, edits, "{class:?} edit fraction");
        }
    }

    #[test]
    fn input_sizes_sit_in_class_ranges() {
        for (class, samples) in builtin_workloads() {
            for s in &samples {
                let tokens: u64 = s.messages.iter().map(|m| count_tokens(&m.content, None)).sum();
                let (low, high) = match class {
                    WorkloadClass::Wl1Edit => (8_000, 20_000),
                    WorkloadClass::Wl2Explain => (4_000, 12_000),
                    WorkloadClass::Wl3Chat => (500, 4_000),
                    WorkloadClass::Wl4Rag => (10_000, 40_000),
                };
                assert!(
                    (low..=high).contains(&tokens),
                    "{} has {tokens} estimated tokens, outside [{low}, {high}]",
                    s.id
                );
            }
        }
    }

    #[test]
    fn ids_appear_in_a_user_message() {
        // scripted-mock rules key on the id being somewhere in the request text
        for (_, samples) in builtin_workloads() {
            for s in &samples {
                let tagged = s
                    .messages
                    .iter()
                    .any(|m| m.role == Role::User && m.content.contains(&s.id));
                assert!(tagged, "{} missing its id marker", s.id);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let first = builtin_workloads();
        let second = builtin_workloads();
        for ((_, a), (_, b)) in first.iter().zip(second.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.content_hash, y.content_hash);
            }
        }
    }

    #[test]
    fn round_trip_file_verifies_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wl3_chat.jsonl");
        let (_, samples) = &builtin_workloads()[2];
        write_workload_file(&path, samples).unwrap();
        let loaded = load_workload(&path).unwrap();
        assert_eq!(loaded.len(), 10);
        assert_eq!(loaded[0].id, "wl3-s00");
    }

    #[test]
    fn tampered_line_is_an_integrity_error_naming_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wl3_chat.jsonl");
        let (_, samples) = &builtin_workloads()[2];
        write_workload_file(&path, samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("what year did unix time start?", "what year was MY EDIT?", 1);
        std::fs::write(&path, tampered).unwrap();
        match load_workload(&path) {
            Err(WorkloadError::IntegrityFailure { id }) => assert_eq!(id, "wl3-s00"),
            other => panic!("expected integrity failure, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_valid_empty_workload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_workload(&path).unwrap().is_empty());
    }

    // Regeneration tool for the committed workload files:
    //   cargo test -p splitter regenerate_committed_workload_files -- --ignored
    #[test]
    #[ignore]
    fn regenerate_committed_workload_files() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workloads");
        write_workload_files(&dir).unwrap();
    }

    #[test]
    fn committed_files_match_the_generator() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workloads");
        for (class, generated) in builtin_workloads() {
            let committed = load_workload(&dir.join(class.file_name()))
                .unwrap_or_else(|e| panic!("committed workload {class:?} unreadable: {e}"));
            assert_eq!(committed.len(), generated.len());
            for (c, g) in committed.iter().zip(generated.iter()) {
                assert_eq!(c.id, g.id);
                assert_eq!(c.content_hash, g.content_hash, "{} drifted from generator", c.id);
            }
        }
    }
}
