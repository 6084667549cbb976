use std::fmt::Write;

use super::model::*;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Canonical pretty-print. Attributes precede methods within a class; stereotype
/// strings are emitted on one line.
pub fn render(model: &PdlModel) -> String {
    let mut out = String::new();
    for class in &model.classes {
        let _ = writeln!(out, "class {} {{", class.name);
        for a in &class.attributes {
            if let Some(u) = &a.use_text {
                let _ = writeln!(out, "  <<use={}>>", quote(u));
            }
            for m in &a.mandatory_refs {
                let _ = writeln!(out, "  <<mandatory={}>>", quote(&m.to_string()));
            }
            for m in &a.optional_refs {
                let _ = writeln!(out, "  <<optional={}>>", quote(&m.to_string()));
            }
            let _ = writeln!(out, "  {} {};", a.type_name, a.name);
        }
        for m in &class.methods {
            if let Some(u) = &m.use_text {
                let _ = writeln!(out, "  <<use={}>>", quote(u));
            }
            if let Some(n) = &m.not_used_text {
                let _ = writeln!(out, "  <<notUsed={}>>", quote(n));
            }
            let _ = writeln!(out, "  {} {}();", m.return_type, m.name);
        }
        out.push_str("}\n");
    }
    out
}
