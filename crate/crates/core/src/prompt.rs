//! Prompt templates in default and identity-conditioned form.
//!
//! Templates live in data files (`templates/<task>.txt`) so wording changes
//! show up as diffs. The first line of a template file is a front-matter line
//! `task=<task> template_version=<version>`; the rest is the prompt with the
//! literal `[demographic]` placeholder inside the leading `As a [demographic], `
//! clause.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Identity, IdentityCategory, Task};

pub const PLACEHOLDER: &str = "[demographic]";
pub const LEADING_CLAUSE: &str = "As a [demographic], ";

const RESPONSE_FORMAT_HEADING: &str = "## Response Format";
const NOTE_HEADING: &str = "## Note";

const BUILTIN_TEMPLATES: [(Task, &str); 3] = [
    (Task::Perception, include_str!("../templates/perception.txt")),
    (Task::Assessment, include_str!("../templates/assessment.txt")),
    (Task::Empathy, include_str!("../templates/empathy.txt")),
];
const BUILTIN_PHRASES: &str = include_str!("../data/phrases.toml");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template front matter: {0}")]
    FrontMatter(String),
    #[error("template for {task}: {reason}")]
    Malformed { task: Task, reason: String },
    #[error("phrase table: {0}")]
    Phrases(String),
    #[error("no template for task {0}")]
    MissingTemplate(Task),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: Task,
    pub version: String,
    /// Task paragraph holding the placeholder clause.
    pub body: String,
    pub response_format_line: String,
    /// Note lines without their leading `- ` bullet.
    pub notes: Vec<String>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let text = text.replace("\r\n", "\n");
        let (front, rest) = text
            .split_once('\n')
            .ok_or_else(|| PromptError::FrontMatter("empty template".into()))?;
        let mut task = None;
        let mut version = None;
        for field in front.split_whitespace() {
            match field.split_once('=') {
                Some(("task", v)) => {
                    task = Some(v.parse::<Task>().map_err(|e| PromptError::FrontMatter(e.to_string()))?)
                }
                Some(("template_version", v)) => version = Some(v.to_string()),
                _ => return Err(PromptError::FrontMatter(format!("unexpected field `{field}`"))),
            }
        }
        let task = task.ok_or_else(|| PromptError::FrontMatter("missing task".into()))?;
        let version = version.ok_or_else(|| PromptError::FrontMatter("missing template_version".into()))?;
        let malformed = |reason: &str| PromptError::Malformed {
            task,
            reason: reason.to_string(),
        };

        let (body, tail) = rest
            .split_once(&format!("\n{RESPONSE_FORMAT_HEADING}\n"))
            .ok_or_else(|| malformed("missing response format section"))?;
        let (format_section, note_section) = tail
            .split_once(&format!("\n{NOTE_HEADING}\n"))
            .ok_or_else(|| malformed("missing note section"))?;

        let body = body.trim_end().to_string();
        if body.matches(PLACEHOLDER).count() != 1 || body.matches(LEADING_CLAUSE).count() != 1 {
            return Err(malformed("body must contain exactly one `As a [demographic], ` clause"));
        }
        let response_format_line = format_section.trim().to_string();
        if response_format_line.is_empty() || response_format_line.contains('\n') {
            return Err(malformed("response format must be a single line"));
        }
        let notes = note_section
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.trim_start_matches('-').trim().to_string())
            .collect();

        Ok(PromptTemplate {
            task,
            version,
            body,
            response_format_line,
            notes,
        })
    }

    fn assemble(&self, body: &str) -> String {
        let mut out = String::with_capacity(body.len() + 256);
        out.push_str(body);
        out.push_str("\n\n");
        out.push_str(RESPONSE_FORMAT_HEADING);
        out.push('\n');
        out.push_str(&self.response_format_line);
        out.push_str("\n\n");
        out.push_str(NOTE_HEADING);
        for note in &self.notes {
            out.push_str("\n- ");
            out.push_str(note);
        }
        out
    }

    /// Renders with the clause removed and the following letter capitalized.
    pub fn render_default(&self) -> String {
        let at = self.body.find(LEADING_CLAUSE).expect("validated at parse");
        let rest = &self.body[at + LEADING_CLAUSE.len()..];
        let mut chars = rest.chars();
        let capitalized: String = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        self.assemble(&format!("{}{}", &self.body[..at], capitalized))
    }

    pub fn render_with(&self, phrase: &str) -> String {
        self.assemble(&self.body.replacen(PLACEHOLDER, phrase, 1))
    }
}

/// Versioned mapping from identity to the phrase substituted for the
/// placeholder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseTable {
    pub version: String,
    phrases: BTreeMap<Identity, String>,
}

#[derive(Deserialize)]
struct PhraseFile {
    version: String,
    age: BTreeMap<String, String>,
    gender: BTreeMap<String, String>,
    education: BTreeMap<String, String>,
}

impl PhraseTable {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let file: PhraseFile = toml::from_str(text).map_err(|e| PromptError::Phrases(e.to_string()))?;
        let mut phrases = BTreeMap::new();
        for (category, entries) in [
            (IdentityCategory::Age, &file.age),
            (IdentityCategory::Gender, &file.gender),
            (IdentityCategory::Education, &file.education),
        ] {
            for (bin, phrase) in entries {
                let identity =
                    Identity::from_parts(category, bin).map_err(|e| PromptError::Phrases(e.to_string()))?;
                phrases.insert(identity, phrase.clone());
            }
        }
        if let Some(missing) = crate::model::identity_grid()
            .into_iter()
            .find(|g| !phrases.contains_key(g))
        {
            return Err(PromptError::Phrases(format!("no phrase for {missing}")));
        }
        Ok(PhraseTable {
            version: file.version,
            phrases,
        })
    }

    pub fn builtin() -> &'static PhraseTable {
        static TABLE: OnceLock<PhraseTable> = OnceLock::new();
        TABLE.get_or_init(|| PhraseTable::parse(BUILTIN_PHRASES).expect("builtin phrase table"))
    }

    pub fn phrase(&self, identity: Identity) -> &str {
        &self.phrases[&identity]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Identity, &String)> {
        self.phrases.iter()
    }
}

/// Phrase from the builtin table, e.g. `female viewer`.
pub fn demographic_phrase(identity: Identity) -> &'static str {
    PhraseTable::builtin().phrase(identity)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub task: Task,
    pub identity: Option<Identity>,
    pub template_version: String,
}

#[derive(Clone, Debug)]
pub struct PromptBuilder {
    templates: BTreeMap<Task, PromptTemplate>,
    phrases: PhraseTable,
}

impl PromptBuilder {
    pub fn builtin() -> Self {
        let templates = BUILTIN_TEMPLATES
            .iter()
            .map(|(task, text)| {
                let t = PromptTemplate::parse(text).expect("builtin template");
                assert_eq!(t.task, *task);
                (*task, t)
            })
            .collect();
        PromptBuilder {
            templates,
            phrases: PhraseTable::builtin().clone(),
        }
    }

    /// Loads `<task>.txt` for each task present in `dir`, falling back to the
    /// builtin template for the others. A `phrases.toml` in the same
    /// directory replaces the phrase table.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut builder = PromptBuilder::builtin();
        let read = |path: &Path| {
            fs::read_to_string(path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        for task in Task::ALL {
            let path = dir.join(format!("{}.txt", task.as_str()));
            if path.exists() {
                let template = PromptTemplate::parse(&read(&path)?)?;
                if template.task != task {
                    return Err(PromptError::FrontMatter(format!(
                        "{} declares task {}",
                        path.display(),
                        template.task
                    )));
                }
                builder.templates.insert(task, template);
            }
        }
        let phrases = dir.join("phrases.toml");
        if phrases.exists() {
            builder.phrases = PhraseTable::parse(&read(&phrases)?)?;
        }
        Ok(builder)
    }

    pub fn template(&self, task: Task) -> &PromptTemplate {
        &self.templates[&task]
    }

    pub fn phrases(&self) -> &PhraseTable {
        &self.phrases
    }

    /// Version stamp covering both the task template and the phrase table.
    pub fn template_version(&self, task: Task) -> String {
        format!("{}+phrases.{}", self.template(task).version, self.phrases.version)
    }

    pub fn build_prompt(&self, task: Task, identity: Option<Identity>) -> RenderedPrompt {
        let template = self.template(task);
        let text = match identity {
            None => template.render_default(),
            Some(g) => template.render_with(self.phrases.phrase(g)),
        };
        RenderedPrompt {
            text,
            task,
            identity,
            template_version: self.template_version(task),
        }
    }
}

impl Default for PromptBuilder {
    fn default() -> Self {
        PromptBuilder::builtin()
    }
}

pub fn build_prompt(task: Task, identity: Option<Identity>) -> RenderedPrompt {
    static BUILDER: OnceLock<PromptBuilder> = OnceLock::new();
    BUILDER.get_or_init(PromptBuilder::builtin).build_prompt(task, identity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_grid, AgeBin, Education, Gender};

    #[test]
    fn phrase_table_examples() {
        assert_eq!(demographic_phrase(Identity::Gender(Gender::Female)), "female viewer");
        assert_eq!(
            demographic_phrase(Identity::Age(AgeBin::From22To25)),
            "22 to 25 year old viewer"
        );
        assert_eq!(
            demographic_phrase(Identity::Education(Education::University)),
            "university-educated viewer"
        );
    }

    #[test]
    fn empathy_default_lists_all_emotions() {
        let p = build_prompt(Task::Empathy, None);
        assert!(p.text.contains("amusement/excitement/contentment/awe/disgust/sadness/fear/neutral"));
        assert!(p.text.starts_with("Please analyze the provided image"));
        assert!(!p.text.contains("viewer"));
        for (_, phrase) in PhraseTable::builtin().iter() {
            assert!(!p.text.contains(phrase.as_str()));
        }
    }

    #[test]
    fn personalized_render_leads_with_clause() {
        let p = build_prompt(Task::Perception, Some(Identity::Gender(Gender::Female)));
        assert!(p.text.starts_with("As a female viewer, please analyze the provided image"));
        assert!(p.text.contains("perception: positive/normal/negative"));
        assert!(p.text.ends_with("- Choose only one word from the available options."));
    }

    #[test]
    fn default_equals_personalized_with_clause_excised() {
        for task in Task::ALL {
            let default = build_prompt(task, None).text;
            for g in identity_grid() {
                let personal = build_prompt(task, Some(g)).text;
                let clause = format!("As a {}, p", demographic_phrase(g));
                let excised = personal.replacen(&clause, "P", 1);
                assert_eq!(excised, default, "{task} {g}");
            }
        }
    }

    #[test]
    fn personalized_renders_differ_only_in_phrase() {
        for task in Task::ALL {
            let renders: Vec<_> = identity_grid()
                .into_iter()
                .map(|g| (g, build_prompt(task, Some(g)).text))
                .collect();
            let reference = &renders[0];
            let ref_phrase = demographic_phrase(reference.0);
            let (pre, post) = reference.1.split_once(ref_phrase).unwrap();
            for (g, text) in &renders {
                let phrase = demographic_phrase(*g);
                assert_eq!(text.matches(phrase).count(), 1);
                assert_eq!(text, &format!("{pre}{phrase}{post}"));
            }
        }
    }

    #[test]
    fn renders_are_deterministic() {
        let a = build_prompt(Task::Assessment, Some(Identity::Age(AgeBin::From30To34)));
        let b = PromptBuilder::builtin().build_prompt(Task::Assessment, Some(Identity::Age(AgeBin::From30To34)));
        assert_eq!(a, b);
        assert_eq!(a.template_version, "1+phrases.1");
    }

    #[test]
    fn template_requires_placeholder_clause() {
        let bad = "task=perception template_version=x\nPlease look.\n\n## Response Format\nperception: positive\n\n## Note\n- one\n";
        assert!(matches!(PromptTemplate::parse(bad), Err(PromptError::Malformed { .. })));
        let no_front = "As a [demographic], hi";
        assert!(PromptTemplate::parse(no_front).is_err());
    }

    #[test]
    fn template_dir_override() {
        let dir = tempfile::tempdir().unwrap();
        let text = BUILTIN_TEMPLATES[0].1.replace("template_version=1", "template_version=2b");
        std::fs::write(dir.path().join("perception.txt"), text).unwrap();
        let b = PromptBuilder::from_dir(dir.path()).unwrap();
        assert_eq!(b.template_version(Task::Perception), "2b+phrases.1");
        assert_eq!(b.template_version(Task::Empathy), "1+phrases.1");
    }
}
