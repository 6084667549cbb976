use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

use super::model::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCode {
    /// Reference to an undeclared method.
    V1,
    /// Optional method without both `use` and `notUsed`.
    V2,
    /// Method referenced both as mandatory and as optional.
    V3,
    /// `notUsed` on a method that is not optional.
    V4,
    /// Method without `use`.
    V5,
    /// Attribute without any declaration; unreachable by every service method.
    W1,
}

impl fmt::Display for FindingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    /// Qualified member name the finding is about.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error[{}] {}: {}", e.code, e.location, e.message)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning[{}] {}: {}", w.code, w.location, w.message)?;
        }
        write!(f, "{} error(s), {} warning(s)", self.errors.len(), self.warnings.len())
    }
}

pub fn validate(model: &PdlModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut mandatory_targets = BTreeSet::new();
    let mut optional_targets = BTreeSet::new();

    for (attr_id, attr) in model.attributes() {
        let refs = attr.mandatory_refs.iter().chain(&attr.optional_refs);
        for m in refs {
            if model.method(m).is_none() {
                report.errors.push(Finding {
                    code: FindingCode::V1,
                    location: attr_id.to_string(),
                    message: format!("reference to undeclared method `{m}`"),
                });
            }
        }
        mandatory_targets.extend(attr.mandatory_refs.iter().cloned());
        optional_targets.extend(attr.optional_refs.iter().cloned());
    }

    for (mref, method) in model.methods() {
        let loc = mref.to_string();
        let optional = optional_targets.contains(&mref);
        if optional && mandatory_targets.contains(&mref) {
            report.errors.push(Finding {
                code: FindingCode::V3,
                location: loc.clone(),
                message: "method is referenced both as mandatory and as optional".into(),
            });
        }
        if method.use_text.is_none() {
            report.errors.push(Finding {
                code: FindingCode::V5,
                location: loc.clone(),
                message: "method has no `use` stereotype".into(),
            });
        }
        if optional && (method.use_text.is_none() || method.not_used_text.is_none()) {
            report.errors.push(Finding {
                code: FindingCode::V2,
                location: loc.clone(),
                message: "optional method needs both `use` and `notUsed`".into(),
            });
        }
        if !optional && method.not_used_text.is_some() {
            report.errors.push(Finding {
                code: FindingCode::V4,
                location: loc,
                message: "`notUsed` on a method that is not optional".into(),
            });
        }
    }

    for (attr_id, attr) in model.attributes() {
        if !attr.is_declared() {
            report.warnings.push(Finding {
                code: FindingCode::W1,
                location: attr_id.to_string(),
                message: "attribute has no use declaration and no access edges; no service method may read it"
                    .into(),
            });
        }
    }
    report
}
