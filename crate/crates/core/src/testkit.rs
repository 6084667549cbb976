//! Random generators for valid PDL models and access scripts, shared by the
//! property tests, the acceptance suite and the benchmarks-by-example.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audit::{AccessScript, MethodScript};
use crate::ids::FieldId;
use crate::pdl::{normalize_text, MethodRef, PdlAttribute, PdlClass, PdlMethod, PdlModel, TypeRef};
use crate::rng::CryptoRngCore;

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub max_classes: usize,
    pub max_attributes: usize,
    pub max_methods: usize,
    /// Upper bound on methods that end up Optional.
    pub max_optional: usize,
    pub attribute_use_prob: f64,
    pub ref_prob: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { max_classes: 5, max_attributes: 4, max_methods: 4, max_optional: 10, attribute_use_prob: 0.3, ref_prob: 0.35 }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptParams {
    /// Chance that a method also reads an attribute it has no declaration for.
    pub stray_read_prob: f64,
    pub declared_read_prob: f64,
    pub call_prob: f64,
}

impl Default for ScriptParams {
    fn default() -> Self {
        Self { stray_read_prob: 0.08, declared_read_prob: 0.8, call_prob: 0.15 }
    }
}

const WORDS: &[&str] = &["collect", "the", "data", "to", "improve", "\"quoted\"", "back\\slash", "service", "  spaced  ", "ads", "care"];

fn text<R: CryptoRngCore>(rng: &mut R) -> String {
    let n = rng.gen_range(1..=5);
    let raw: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    let t = normalize_text(&raw.join(" "));
    if t.is_empty() {
        "purpose".into()
    } else {
        t
    }
}

fn type_ref<R: CryptoRngCore>(rng: &mut R) -> TypeRef {
    match rng.gen_range(0..4) {
        0 => TypeRef::simple("int"),
        1 => TypeRef::simple("String"),
        2 => TypeRef::generic("List", TypeRef::simple("Person")),
        _ => TypeRef::simple("Image"),
    }
}

/// A model with zero validation errors by construction.
pub fn random_model<R: CryptoRngCore>(rng: &mut R, params: &ModelParams) -> PdlModel {
    let n_classes = rng.gen_range(1..=params.max_classes.max(1));
    let mut model = PdlModel::empty("generated.pdl");
    let mut mandatory = Vec::new();
    let mut optional = Vec::new();
    for c in 0..n_classes {
        let class_name = format!("C{c}");
        let mut class = PdlClass { name: class_name.clone(), attributes: Vec::new(), methods: Vec::new() };
        for m in 0..rng.gen_range(0..=params.max_methods) {
            let name = format!("op{m}");
            let make_optional = optional.len() < params.max_optional && rng.gen_bool(0.5);
            let mref = MethodRef::new(&class_name, &name);
            if make_optional {
                optional.push(mref);
            } else {
                mandatory.push(mref);
            }
            class.methods.push(PdlMethod {
                name,
                return_type: type_ref(rng),
                use_text: Some(text(rng)),
                not_used_text: make_optional.then(|| text(rng)),
            });
        }
        model.classes.push(class);
    }
    for c in 0..n_classes {
        for a in 0..rng.gen_range(0..=params.max_attributes) {
            let use_text = rng.gen_bool(params.attribute_use_prob).then(|| text(rng));
            let mandatory_refs = mandatory.iter().filter(|_| rng.gen_bool(params.ref_prob)).cloned().collect();
            let optional_refs = optional.iter().filter(|_| rng.gen_bool(params.ref_prob)).cloned().collect();
            model.classes[c].attributes.push(PdlAttribute {
                name: format!("attr{a}"),
                type_name: type_ref(rng),
                use_text,
                mandatory_refs,
                optional_refs,
            });
        }
    }
    // Optional-by-intent methods nobody references optionally would carry a stray notUsed.
    for m in &optional {
        let referenced = model.classes.iter().flat_map(|c| &c.attributes).any(|a| a.optional_refs.contains(m));
        if referenced {
            continue;
        }
        let mut slots: Vec<(usize, usize)> = model
            .classes
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| (0..c.attributes.len()).map(move |ai| (ci, ai)))
            .collect();
        slots.shuffle(rng);
        match slots.first() {
            Some(&(ci, ai)) => model.classes[ci].attributes[ai].optional_refs.push(m.clone()),
            None => {
                let class = model.classes.iter_mut().find(|c| c.name == m.class_name).expect("own class");
                let method = class.methods.iter_mut().find(|x| x.name == m.method_name).expect("own method");
                method.not_used_text = None;
            }
        }
    }
    model
}

/// A script that mostly follows the model's declarations, with occasional
/// stray reads and inter-method calls.
pub fn random_script<R: CryptoRngCore>(rng: &mut R, model: &PdlModel, params: &ScriptParams) -> AccessScript {
    let attributes: Vec<(FieldId, bool, Vec<MethodRef>)> = model
        .attributes()
        .map(|(id, a)| {
            let refs = a.mandatory_refs.iter().chain(&a.optional_refs).cloned().collect();
            (id, a.use_text.is_some(), refs)
        })
        .collect();
    let methods: Vec<MethodRef> = model.methods().map(|(m, _)| m).collect();
    let mut script = AccessScript::default();
    for m in &methods {
        let mut body = MethodScript::default();
        for (id, service_wide, refs) in &attributes {
            let declared = refs.contains(m);
            let p = if declared {
                params.declared_read_prob
            } else if *service_wide {
                0.3
            } else {
                params.stray_read_prob
            };
            if rng.gen_bool(p) {
                body.reads.push(id.clone());
            }
        }
        if rng.gen_bool(params.call_prob) {
            if let Some(callee) = methods.choose(rng).filter(|c| *c != m) {
                body.calls.push(callee.clone());
            }
        }
        script.methods.insert(m.clone(), body);
    }
    script
}
