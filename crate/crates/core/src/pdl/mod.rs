//! Privacy Development Language: a small class-based modelling language whose
//! stereotypes tie a service's data attributes to the methods that use them.

mod model;
mod parser;
mod render;
mod validate;

pub use model::*;
pub use parser::normalize_text;
pub use render::render;
pub use validate::{validate, Finding, FindingCode, ValidationReport};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: expected {expected}, found {found}")]
    Syntax { line: usize, col: usize, expected: String, found: String },
    #[error("{line}:{col}: {message}")]
    Invalid { line: usize, col: usize, message: String },
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, col, .. } | ParseError::Invalid { line, col, .. } => (*line, *col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PdlError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("model has {} validation error(s)", .0.errors.len())]
    InvalidModel(ValidationReport),
    #[error("unknown method `{0}`")]
    UnknownMethod(MethodRef),
}

pub fn parse(text: &str) -> Result<PdlModel, ParseError> {
    parser::parse_named("<input>", text)
}

pub fn parse_named(source_name: &str, text: &str) -> Result<PdlModel, ParseError> {
    parser::parse_named(source_name, text)
}

fn require_valid(model: &PdlModel) -> Result<(), PdlError> {
    let report = validate(model);
    if report.is_valid() {
        Ok(())
    } else {
        Err(PdlError::InvalidModel(report))
    }
}

/// One edge per mandatory/optional reference, attributes in declaration order,
/// mandatory references before optional ones within an attribute.
pub fn access_edges(model: &PdlModel) -> Result<Vec<AccessEdge>, PdlError> {
    require_valid(model)?;
    Ok(edges_unchecked(model))
}

pub(crate) fn edges_unchecked(model: &PdlModel) -> Vec<AccessEdge> {
    let mut edges = Vec::new();
    for (attribute, attr) in model.attributes() {
        for m in &attr.mandatory_refs {
            edges.push(AccessEdge { attribute: attribute.clone(), method: m.clone(), kind: EdgeKind::Mandatory });
        }
        for m in &attr.optional_refs {
            edges.push(AccessEdge { attribute: attribute.clone(), method: m.clone(), kind: EdgeKind::Optional });
        }
    }
    edges
}

/// Optional iff at least one optional edge targets the method; Mandatory otherwise,
/// including methods no attribute references.
pub fn method_status(model: &PdlModel, m: &MethodRef) -> Result<MethodStatus, PdlError> {
    if model.method(m).is_none() {
        return Err(PdlError::UnknownMethod(m.clone()));
    }
    let optional = model.classes.iter().flat_map(|c| &c.attributes).any(|a| a.optional_refs.contains(m));
    Ok(if optional { MethodStatus::Optional } else { MethodStatus::Mandatory })
}

/// Guard for operations that require a model with zero validation errors.
pub fn ensure_valid(model: &PdlModel) -> Result<(), PdlError> {
    require_valid(model)
}

#[cfg(test)]
mod tests;
