//! Best-effort importer for STAR-style dialog exports.
//!
//! Each exported dialog is a JSON object with a `Scenario` (task, domain and
//! happy/multi-task flags) and a list of `Events`. Only happy single-task
//! dialogs are kept. Wizard turns picked from suggestions become system turns
//! labelled with their action; free-typed wizard turns have no label and are
//! dropped and counted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, CorpusError, Dialog, Turn};
use crate::schema::ActionId;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StarImport {
    pub corpus: Corpus,
    pub dialogs_seen: usize,
    pub dialogs_skipped: usize,
    /// All turns kept (user, system and database).
    pub total_turns: usize,
    /// System turns kept, i.e. next-action prediction targets.
    pub system_turns: usize,
    pub skipped_events: usize,
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    path.iter().try_fold(v, |v, k| v.get(k))?.as_str()
}

fn bool_at(v: &Value, path: &[&str]) -> Option<bool> {
    path.iter().try_fold(v, |v, k| v.get(k))?.as_bool()
}

fn compact(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            keys.iter()
                .map(|k| format!("{k} {}", compact(&m[*k])))
                .collect::<Vec<_>>()
                .join(" ")
        }
        Value::Array(a) => a.iter().map(compact).collect::<Vec<_>>().join(" "),
        Value::String(s) => s.clone(),
        Value::Null => "none".into(),
        other => other.to_string(),
    }
}

fn convert(raw: &Value, out: &mut StarImport) -> Result<Option<Dialog>, CorpusError> {
    let id = match raw.get("DialogueID") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(CorpusError::Config("STAR dialog without DialogueID".into())),
    };
    let happy = bool_at(raw, &["Scenario", "Happy"]).unwrap_or(false);
    let multi = bool_at(raw, &["Scenario", "MultiTask"]).unwrap_or(true);
    let capability = raw.pointer("/Scenario/WizardCapabilities/0");
    let task = capability.and_then(|c| str_at(c, &["Task"]));
    let domain = capability.and_then(|c| str_at(c, &["Domain"]));
    let (Some(task), Some(domain), true, false) = (task, domain, happy, multi) else {
        return Ok(None);
    };
    let mut turns = Vec::new();
    for ev in raw
        .get("Events")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        let agent = str_at(ev, &["Agent"]).unwrap_or_default();
        let action = str_at(ev, &["Action"]).unwrap_or_default();
        let text = str_at(ev, &["Text"]).map(str::trim).unwrap_or_default();
        let turn = match (agent, action) {
            ("User", "utter") if !text.is_empty() => Some(Turn::user(text)),
            ("Wizard", "pick_suggestion") => str_at(ev, &["ActionLabel"])
                .filter(|l| !l.is_empty() && !text.is_empty())
                .map(|l| Turn::system(text, ActionId::new(l))),
            ("Wizard", "query") => {
                let constraints = ev.get("Constraints").map(compact).unwrap_or_default();
                Some(Turn::system(
                    format!("[QUERY] {constraints}").trim_end(),
                    ActionId::new("query"),
                ))
            }
            ("KnowledgeBase", _) => {
                let item = ev.get("Item").map(compact).unwrap_or_else(|| "none".into());
                Some(Turn::db(format!("RESULT: {item}")))
            }
            _ => None,
        };
        match turn {
            Some(t) => turns.push(t),
            None => out.skipped_events += 1,
        }
    }
    if !turns.iter().any(|t| t.action.is_some()) {
        return Ok(None);
    }
    Ok(Some(Dialog {
        id,
        task: task.to_string(),
        domain: domain.to_string(),
        turns,
    }))
}

/// Converts raw dialog objects (or arrays of them).
pub fn import_star(raw: impl IntoIterator<Item = Value>) -> Result<StarImport, CorpusError> {
    let mut out = StarImport::default();
    let mut dialogs = Vec::new();
    let mut queue: Vec<Value> = raw.into_iter().collect();
    queue.reverse();
    while let Some(v) = queue.pop() {
        if let Value::Array(items) = v {
            queue.extend(items.into_iter().rev());
            continue;
        }
        out.dialogs_seen += 1;
        match convert(&v, &mut out)? {
            Some(d) => dialogs.push(d),
            None => out.dialogs_skipped += 1,
        }
    }
    let corpus = Corpus::new(dialogs);
    corpus.check(None)?;
    out.total_turns = corpus.turn_count();
    out.system_turns = corpus.system_turn_count();
    out.corpus = corpus;
    Ok(out)
}

/// Imports every `*.json` file under `dir`, in file-name order.
pub fn import_star_dir(dir: impl AsRef<Path>) -> Result<StarImport, CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut values = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            column: e.column(),
            message: format!("{}: {e}", p.display()),
        })?;
        values.push(v);
    }
    import_star(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn dialog(id: u64, happy: bool, multi: bool) -> Value {
        json!({
            "DialogueID": id,
            "Scenario": {
                "Happy": happy,
                "MultiTask": multi,
                "WizardCapabilities": [{"Task": "bank_balance", "Domain": "bank"}]
            },
            "Events": [
                {"Agent": "UserGuide", "Action": "instruct", "Text": "Ask for your balance"},
                {"Agent": "User", "Action": "utter", "Text": "Hi, what's my balance?"},
                {"Agent": "Wizard", "Action": "pick_suggestion", "ActionLabel": "bank_ask_name", "Text": "Could I get your full name, please?"},
                {"Agent": "User", "Action": "utter", "Text": "Jane Doe"},
                {"Agent": "Wizard", "Action": "query", "Constraints": [{"Name": "Jane Doe"}]},
                {"Agent": "KnowledgeBase", "Action": "return_item", "Item": {"Balance": 12, "Name": "Jane Doe"}},
                {"Agent": "Wizard", "Action": "utter", "Text": "free-typed reply"},
                {"Agent": "Wizard", "Action": "pick_suggestion", "ActionLabel": "bank_inform_balance", "Text": "Your balance is 12."}
            ]
        })
    }

    #[test]
    fn keeps_happy_single_task_dialogs() {
        let imp = import_star([
            json!([dialog(1, true, false), dialog(2, false, false)]),
            dialog(3, true, true),
        ])
        .unwrap();
        assert_eq!(imp.dialogs_seen, 3);
        assert_eq!(imp.dialogs_skipped, 2);
        assert_eq!(imp.corpus.len(), 1);
        let d = &imp.corpus.dialogs[0];
        assert_eq!(d.id, "1");
        assert_eq!(
            (d.task.as_str(), d.domain.as_str()),
            ("bank_balance", "bank")
        );
        let texts: Vec<_> = d.turns.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts[3], "[QUERY] Name Jane Doe");
        assert_eq!(texts[4], "RESULT: Balance 12 Name Jane Doe");
        assert_eq!(imp.total_turns, 6);
        assert_eq!(imp.system_turns, 3);
        assert_eq!(imp.skipped_events, 2);
    }

    #[test]
    fn reads_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.json"),
            dialog(7, true, false).to_string(),
        )
        .unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let imp = import_star_dir(dir.path()).unwrap();
        assert_eq!(imp.corpus.len(), 1);
        std::fs::write(dir.path().join("b.json"), "{").unwrap();
        assert!(matches!(
            import_star_dir(dir.path()),
            Err(CorpusError::Parse { .. })
        ));
    }
}
