use serde::{Deserialize, Serialize};
use std::fmt;

use crate::ids::FieldId;

/// Parsed service data model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdlModel {
    pub source_name: String,
    pub classes: Vec<PdlClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdlClass {
    pub name: String,
    pub attributes: Vec<PdlAttribute>,
    pub methods: Vec<PdlMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdlAttribute {
    pub name: String,
    pub type_name: TypeRef,
    pub use_text: Option<String>,
    pub mandatory_refs: Vec<MethodRef>,
    pub optional_refs: Vec<MethodRef>,
}

/// A parameterless service method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdlMethod {
    pub name: String,
    pub return_type: TypeRef,
    pub use_text: Option<String>,
    pub not_used_text: Option<String>,
}

/// A possibly parameterized type reference such as `List<Person>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRef {
    pub name: String,
    pub arg: Option<Box<TypeRef>>,
}

impl TypeRef {
    pub fn simple(name: impl Into<String>) -> Self {
        Self { name: name.into(), arg: None }
    }

    pub fn generic(name: impl Into<String>, arg: TypeRef) -> Self {
        Self { name: name.into(), arg: Some(Box::new(arg)) }
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if let Some(arg) = &self.arg {
            write!(f, "<{arg}>")?;
        }
        Ok(())
    }
}

/// `Class.method`, serialized in that textual form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodRef {
    pub class_name: String,
    pub method_name: String,
}

impl MethodRef {
    pub fn new(class_name: impl Into<String>, method_name: impl Into<String>) -> Self {
        Self { class_name: class_name.into(), method_name: method_name.into() }
    }

    /// Parses `Class.method`; both halves must be identifiers.
    pub fn parse(text: &str) -> Option<Self> {
        let (class, method) = text.split_once('.')?;
        (is_ident(class) && is_ident(method)).then(|| Self::new(class, method))
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class_name, self.method_name)
    }
}

impl TryFrom<String> for MethodRef {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        MethodRef::parse(&value).ok_or_else(|| format!("not a Class.method reference: {value:?}"))
    }
}

impl From<MethodRef> for String {
    fn from(m: MethodRef) -> Self {
        m.to_string()
    }
}

pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Mandatory,
    Optional,
}

/// Status of a method as far as user choice is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodStatus {
    Mandatory,
    Optional,
}

/// "Attribute may be read by method", derived from a mandatory/optional stereotype.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessEdge {
    pub attribute: FieldId,
    pub method: MethodRef,
    pub kind: EdgeKind,
}

pub fn attribute_id(class: &str, attribute: &str) -> FieldId {
    FieldId(format!("{class}.{attribute}"))
}

impl PdlModel {
    pub fn empty(source_name: impl Into<String>) -> Self {
        Self { source_name: source_name.into(), classes: Vec::new() }
    }

    pub fn class(&self, name: &str) -> Option<&PdlClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn method(&self, m: &MethodRef) -> Option<&PdlMethod> {
        self.class(&m.class_name)?.methods.iter().find(|x| x.name == m.method_name)
    }

    pub fn attribute(&self, id: &FieldId) -> Option<&PdlAttribute> {
        let (class, attr) = id.as_str().split_once('.')?;
        self.class(class)?.attributes.iter().find(|a| a.name == attr)
    }

    /// All attributes with their qualified ids, in declaration order.
    pub fn attributes(&self) -> impl Iterator<Item = (FieldId, &PdlAttribute)> {
        self.classes
            .iter()
            .flat_map(|c| c.attributes.iter().map(move |a| (attribute_id(&c.name, &a.name), a)))
    }

    /// All methods with their references, in declaration order.
    pub fn methods(&self) -> impl Iterator<Item = (MethodRef, &PdlMethod)> {
        self.classes
            .iter()
            .flat_map(|c| c.methods.iter().map(move |m| (MethodRef::new(&c.name, &m.name), m)))
    }

    /// Semantic equality: same classes and members, ignoring the source name.
    pub fn same_model(&self, other: &PdlModel) -> bool {
        self.classes == other.classes
    }
}

impl PdlAttribute {
    /// Whether the attribute carries any privacy declaration at all.
    pub fn is_declared(&self) -> bool {
        self.use_text.is_some() || !self.mandatory_refs.is_empty() || !self.optional_refs.is_empty()
    }
}
