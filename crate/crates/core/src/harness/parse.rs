use std::sync::OnceLock;

use regex::Regex;

use crate::model::{OutputLabel, ParseStatus, Task};

struct TaskPatterns {
    /// Whole line `<key>: <label>`, case-insensitive, optional trailing period.
    strict: Regex,
    /// Any label of the task as a whole word.
    any_label: Regex,
}

fn alternation(task: Task) -> String {
    task.labels().iter().map(|l| l.as_str()).collect::<Vec<_>>().join("|")
}

fn patterns(task: Task) -> &'static TaskPatterns {
    static CACHE: OnceLock<[TaskPatterns; 3]> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        Task::ALL.map(|t| {
            let keys = match t {
                Task::Assessment => "aesthetic|assessment".to_string(),
                other => other.response_key().to_string(),
            };
            let labels = alternation(t);
            TaskPatterns {
                strict: Regex::new(&format!(r"(?im)^\s*(?:{keys})\s*:\s*({labels})\s*\.?\s*$")).unwrap(),
                any_label: Regex::new(&format!(r"(?i)\b({labels})\b")).unwrap(),
            }
        })
    });
    &all[Task::ALL.iter().position(|&t| t == task).unwrap()]
}

fn distinct_labels<'a>(captures: impl Iterator<Item = &'a str>) -> Vec<OutputLabel> {
    let mut found: Vec<OutputLabel> = Vec::new();
    for text in captures {
        if let Ok(label) = text.parse::<OutputLabel>() {
            if !found.contains(&label) {
                found.push(label);
            }
        }
    }
    found
}

/// Maps a raw reply to a label of `task`.
///
/// The strict pass looks for a line of the requested response format
/// (`empathy: awe`). Failing that, the fuzzy pass accepts a reply in which
/// exactly one distinct label of the task appears as a whole word. Anything
/// else is unparseable. Never fails.
pub fn parse_response(raw_text: &str, task: Task) -> (Option<OutputLabel>, ParseStatus) {
    let p = patterns(task);
    let strict = distinct_labels(
        p.strict
            .captures_iter(raw_text)
            .filter_map(|c| c.get(1).map(|m| m.as_str())),
    );
    if let [label] = strict.as_slice() {
        return (Some(*label), ParseStatus::Ok);
    }
    let fuzzy = distinct_labels(p.any_label.find_iter(raw_text).map(|m| m.as_str()));
    match fuzzy.as_slice() {
        [label] => (Some(*label), ParseStatus::Fuzzy),
        _ => (None, ParseStatus::Unparseable),
    }
}
