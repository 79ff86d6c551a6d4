//! Desk-scale stand-in for a crowd-sourced corpus: schemas built from a small
//! task catalog and dialogs sampled by walking them.

mod catalog;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Dialog, Turn};
use crate::schema::{ActionId, NodeId, NodeKind, SchemaGraph, SchemaNode, Variant};
use catalog::{Slot, TaskDef, CITIES, COLORS, DOMAINS, MONTHS, NAMES, WORDS};

const HELLO: &str = "Hello, how can I help you?";
const QUERY: &str = "Let me look that up for you.";
const ANYTHING_ELSE: &str = "Is there anything else I can help you with?";
const GOODBYE: &str = "Thank you, goodbye!";
const THANKS: &str = "Thank you.";
const NO_MORE: &str = "No, that is all.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_tasks: usize,
    pub num_domains: usize,
    pub slots_per_task: usize,
    pub dialogs_per_task: usize,
    /// Chance, at each slot question with a later slot still open, that the
    /// user answers it together with the next one.
    pub out_of_turn_rate: f64,
    /// Chance per dialog that the user asks an unrelated question instead of
    /// answering the first slot.
    pub subject_change_rate: f64,
    /// Chance per dialog that the user cannot answer the first slot.
    pub forgot_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_tasks: 6,
            num_domains: 2,
            slots_per_task: 4,
            dialogs_per_task: 40,
            out_of_turn_rate: 0.2,
            subject_change_rate: 0.1,
            forgot_rate: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        if self.num_domains < 2 || self.num_domains > DOMAINS.len() {
            return err(format!("num_domains must be in 2..={}", DOMAINS.len()));
        }
        if self.num_tasks < 4 || self.num_tasks > self.num_domains * 3 {
            return err(format!(
                "num_tasks must be in 4..={} for {} domains",
                self.num_domains * 3,
                self.num_domains
            ));
        }
        if !(2..=5).contains(&self.slots_per_task) {
            return err("slots_per_task must be in 2..=5".into());
        }
        if self.dialogs_per_task == 0 {
            return err("dialogs_per_task must be positive".into());
        }
        for (name, r) in [
            ("out_of_turn_rate", self.out_of_turn_rate),
            ("subject_change_rate", self.subject_change_rate),
            ("forgot_rate", self.forgot_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("{name} must be in [0, 1]"));
            }
        }
        if self.subject_change_rate + self.forgot_rate > 1.0 {
            return err("subject_change_rate + forgot_rate must not exceed 1".into());
        }
        Ok(())
    }

    /// Catalog tasks in use, spread round-robin over the domains.
    fn tasks(&self) -> Vec<(&'static str, &'static TaskDef)> {
        (0..self.num_tasks)
            .map(|i| {
                let d = &DOMAINS[i % self.num_domains];
                (d.id, &d.tasks[i / self.num_domains])
            })
            .collect()
    }
}

fn act(task: &TaskDef, name: &str) -> ActionId {
    ActionId::new(format!("{}_{name}", task.id))
}

fn node(id: impl Into<String>, kind: NodeKind, text: &str, action: Option<ActionId>) -> SchemaNode {
    SchemaNode {
        id: NodeId::new(id),
        kind,
        text: text.to_string(),
        action,
    }
}

fn sys(id: impl Into<String>, text: &str, action: ActionId) -> SchemaNode {
    node(id, NodeKind::SystemResponse, text, Some(action))
}

fn user(id: impl Into<String>, text: &str) -> SchemaNode {
    node(id, NodeKind::UserUtterance, text, None)
}

fn forgot_text(slot: &Slot) -> String {
    format!("I don't remember my {}.", slot.key.replace('_', " "))
}

/// Node ids used by both the schema builder and the dialog walker.
struct Ids;

impl Ids {
    fn ask(slot: &Slot) -> String {
        format!("ask_{}", slot.key)
    }
    fn answer(slot: &Slot) -> String {
        format!("u_{}", slot.key)
    }
    fn forgot(slot: &Slot) -> String {
        format!("u_forgot_{}", slot.key)
    }
}

/// User-aware schema of `task` restricted to its first `n` slots.
fn build_schema(domain: &str, task: &TaskDef, n: usize) -> SchemaGraph {
    let slots = &task.slots[..n];
    let mut nodes = vec![
        sys("hello", HELLO, ActionId::new("hello")),
        user("u_request", task.request),
    ];
    let mut edges: Vec<(String, String)> = vec![("hello".into(), "u_request".into())];
    let after = |k: usize| {
        if k + 1 < n {
            Ids::ask(&slots[k + 1])
        } else {
            "query".into()
        }
    };
    edges.push(("u_request".into(), Ids::ask(&slots[0])));
    for (k, s) in slots.iter().enumerate() {
        nodes.push(sys(
            Ids::ask(s),
            s.question,
            act(task, &format!("ask_{}", s.key)),
        ));
        nodes.push(user(Ids::answer(s), s.answer));
        edges.push((Ids::ask(s), Ids::answer(s)));
        edges.push((Ids::answer(s), after(k)));
        if k == 0 {
            let b = &task.backup;
            nodes.push(user(Ids::forgot(s), &forgot_text(s)));
            nodes.push(sys(
                Ids::ask(b),
                b.question,
                act(task, &format!("ask_{}", b.key)),
            ));
            nodes.push(user(Ids::answer(b), b.answer));
            nodes.push(user("u_faq", task.faq_question));
            nodes.push(sys("inform_faq", task.faq_answer, act(task, "inform_faq")));
            nodes.push(user("u_resume", s.answer));
            edges.extend([
                (Ids::ask(s), Ids::forgot(s)),
                (Ids::forgot(s), Ids::ask(b)),
                (Ids::ask(b), Ids::answer(b)),
                (Ids::answer(b), after(0)),
                (Ids::ask(s), "u_faq".into()),
                ("u_faq".into(), "inform_faq".into()),
                ("inform_faq".into(), "u_resume".into()),
                ("u_resume".into(), after(0)),
            ]);
        }
    }
    nodes.extend([
        sys("query", QUERY, ActionId::new("query")),
        node(
            "db_result",
            NodeKind::DatabaseResponse,
            task.db_result,
            None,
        ),
        sys("inform_result", task.inform, act(task, "inform_result")),
        user("u_thanks", THANKS),
        sys(
            "anything_else",
            ANYTHING_ELSE,
            ActionId::new("anything_else"),
        ),
        user("u_no", NO_MORE),
        sys("goodbye", GOODBYE, ActionId::new("goodbye")),
    ]);
    for pair in [
        ("query", "db_result"),
        ("db_result", "inform_result"),
        ("inform_result", "u_thanks"),
        ("u_thanks", "anything_else"),
        ("anything_else", "u_no"),
        ("u_no", "goodbye"),
    ] {
        edges.push((pair.0.into(), pair.1.into()));
    }
    SchemaGraph {
        task: task.id.to_string(),
        domain: domain.to_string(),
        variant: Variant::UserAware,
        start: NodeId::new("hello"),
        nodes,
        edges: edges
            .into_iter()
            .map(|(a, b)| (NodeId::new(a), NodeId::new(b)))
            .collect(),
    }
}

/// Replaces every `[KIND]` placeholder with a sampled value.
fn fill(template: &str, rng: &mut impl Rng) -> String {
    let mut out = template.to_string();
    while let Some(start) = out.find('[') {
        let Some(len) = out[start..].find(']') else {
            break;
        };
        let kind = &out[start + 1..start + len];
        let value = match kind {
            "NAME" => NAMES[rng.random_range(0..NAMES.len())].to_string(),
            "CITY" => CITIES[rng.random_range(0..CITIES.len())].to_string(),
            "NUMBER" => rng.random_range(1000..10000).to_string(),
            "DATE" => format!(
                "{} {}",
                MONTHS[rng.random_range(0..12)],
                rng.random_range(1..29)
            ),
            "TIME" => format!(
                "{} {}",
                rng.random_range(1..13),
                if rng.random_bool(0.5) { "am" } else { "pm" }
            ),
            "AMOUNT" => format!("{} dollars", rng.random_range(10..1000)),
            "COUNT" => rng.random_range(2..10).to_string(),
            "COLOR" => COLORS[rng.random_range(0..COLORS.len())].to_string(),
            _ => WORDS[rng.random_range(0..WORDS.len())].to_string(),
        };
        out.replace_range(start..start + len + 1, &value);
    }
    out
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_lowercase().chain(c).collect())
        .unwrap_or_default()
}

fn walk(
    id: String,
    domain: &str,
    task: &TaskDef,
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Dialog {
    let slots = &task.slots[..cfg.slots_per_task];
    let n = slots.len();
    let ask = |s: &Slot| Turn::system(s.question, act(task, &format!("ask_{}", s.key)));
    let said = |text: String, node: String| Turn::user(text).with_node(NodeId::new(node));
    let mut turns = vec![
        Turn::system(HELLO, ActionId::new("hello")),
        said(task.request.to_string(), "u_request".into()),
    ];
    let mut k = 0;
    while k < n {
        let s = &slots[k];
        turns.push(ask(s));
        if k == 0 {
            let roll: f64 = rng.random();
            if roll < cfg.subject_change_rate {
                turns.push(said(task.faq_question.to_string(), "u_faq".into()));
                turns.push(Turn::system(task.faq_answer, act(task, "inform_faq")));
                turns.push(said(format!("{}.", fill(s.answer, rng)), "u_resume".into()));
                k = 1;
                continue;
            }
            if roll < cfg.subject_change_rate + cfg.forgot_rate {
                let b = &task.backup;
                turns.push(said(forgot_text(s), Ids::forgot(s)));
                turns.push(ask(b));
                turns.push(said(format!("{}.", fill(b.answer, rng)), Ids::answer(b)));
                k = 1;
                continue;
            }
        }
        if k + 1 < n && rng.random_bool(cfg.out_of_turn_rate) {
            let next = &slots[k + 1];
            let text = format!(
                "{} and {}.",
                fill(s.answer, rng),
                lower_first(&fill(next.answer, rng))
            );
            turns.push(said(text, Ids::answer(next)));
            k += 2;
            continue;
        }
        turns.push(said(format!("{}.", fill(s.answer, rng)), Ids::answer(s)));
        k += 1;
    }
    turns.push(Turn::system(QUERY, ActionId::new("query")));
    turns.push(Turn::db(fill(task.db_result, rng)).with_node(NodeId::new("db_result")));
    turns.push(Turn::system(task.inform, act(task, "inform_result")));
    turns.push(said(THANKS.into(), "u_thanks".into()));
    turns.push(Turn::system(ANYTHING_ELSE, ActionId::new("anything_else")));
    turns.push(said(NO_MORE.into(), "u_no".into()));
    turns.push(Turn::system(GOODBYE, ActionId::new("goodbye")));
    Dialog {
        id,
        task: task.id.to_string(),
        domain: domain.to_string(),
        turns,
    }
}

/// Generates user-aware schemas and dialogs sampled from them. Every user
/// and database turn records the schema node it realizes.
pub fn generate_synthetic(
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<(Corpus, Vec<SchemaGraph>), CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogs = Vec::new();
    let mut schemas = Vec::new();
    for (domain, task) in cfg.tasks() {
        schemas.push(build_schema(domain, task, cfg.slots_per_task));
        for i in 0..cfg.dialogs_per_task {
            dialogs.push(walk(
                format!("{}-{i:03}", task.id),
                domain,
                task,
                cfg,
                &mut rng,
            ));
        }
    }
    Ok((Corpus::new(dialogs), schemas))
}
