use std::io::{BufRead, Write};

use anyhow::Result;
use sde_core::corpus::Turn;
use sde_service::{DbHook, Engine, Session, SessionTurn, StubDb};

/// Line-based chat on `input`. `/reset` starts over, `/quit` or end of input
/// leaves.
pub fn run(engine: &Engine, task: &str, input: impl BufRead, mut out: impl Write) -> Result<()> {
    let schema = engine.schema(task)?;
    let mut session = Session::new(schema, engine.model_id());
    greet(&session, &mut out)?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => continue,
            "/quit" => break,
            "/reset" => {
                session = Session::new(schema, engine.model_id());
                greet(&session, &mut out)?;
                continue;
            }
            _ => {}
        }
        let mut context = session.context();
        context.push(Turn::user(text));
        let p = engine.predict(task, &context)?;
        let top = p.top();
        let reply = SessionTurn {
            turn: Turn::system(
                top.template
                    .clone()
                    .unwrap_or_else(|| top.action.to_string()),
                top.action.clone(),
            ),
            db_result: StubDb.lookup(schema, &top.action, &context),
        };
        writeln!(out, "SYSTEM: {}", reply.turn.text)?;
        if let Some(row) = &reply.db_result {
            writeln!(out, "DB: {row}")?;
        }
        let ranked: Vec<String> = p
            .ranked
            .iter()
            .take(3)
            .map(|r| format!("{} {:.3}", r.action, r.probability))
            .collect();
        writeln!(out, "  actions: {}", ranked.join(", "))?;
        if let Some(a) = p.alignments.first() {
            writeln!(out, "  aligned: {} ({:.3})", a.node_id, a.p)?;
        }
        session.history.push(Turn::user(text).into());
        session.history.push(reply);
    }
    Ok(())
}

fn greet(session: &Session, out: &mut impl Write) -> std::io::Result<()> {
    for t in &session.history {
        writeln!(out, "SYSTEM: {}", t.turn.text)?;
    }
    Ok(())
}
