use super::*;
use crate::fixtures::CAMERA_CARE_PDL;
use crate::testkit;
use proptest::prelude::*;

fn camera_care() -> PdlModel {
    parse(CAMERA_CARE_PDL).unwrap()
}

#[test]
fn camera_care_structure() {
    let m = camera_care();
    let names: Vec<_> = m.classes.iter().map(|c| (c.name.as_str(), c.attributes.len(), c.methods.len())).collect();
    assert_eq!(names, vec![("Camera", 3, 0), ("Analysis", 0, 2)]);
    let loc = &m.classes[0].attributes[0];
    assert_eq!(loc.use_text.as_deref(), Some("Determine where to display image in house overview map."));
    let rp = &m.classes[0].attributes[1];
    assert_eq!(rp.type_name.to_string(), "List<Person>");
    assert_eq!(rp.mandatory_refs, vec![MethodRef::new("Analysis", "healthCritical")]);
    assert_eq!(rp.optional_refs, vec![MethodRef::new("Analysis", "getPersonalizedAd")]);
    let ad = &m.classes[1].methods[1];
    assert_eq!(ad.use_text.as_deref(), Some("Ad funded service"));
    assert_eq!(ad.not_used_text.as_deref(), Some("Fee is $1 per Month"));
    assert_eq!(
        m.classes[1].methods[0].use_text.as_deref(),
        Some("Determine whether resident is alone and needs help.")
    );
}

#[test]
fn empty_input_is_empty_model() {
    assert!(parse("").unwrap().classes.is_empty());
    assert!(parse("  // only a comment\n").unwrap().classes.is_empty());
    assert_eq!(render(&parse("").unwrap()), "");
}

#[test]
fn camera_care_validates_with_single_w1() {
    let report = validate(&camera_care());
    assert!(report.errors.is_empty(), "{report}");
    assert_eq!(report.warnings.len(), 1);
    assert_eq!(report.warnings[0].code, FindingCode::W1);
    assert_eq!(report.warnings[0].location, "Camera.stream");
}

#[test]
fn missing_not_used_is_v2() {
    let text = CAMERA_CARE_PDL.replace("<<notUsed=\"Fee is $1 per Month\">>", "");
    let report = validate(&parse(&text).unwrap());
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].code, FindingCode::V2);
    assert_eq!(report.errors[0].location, "Analysis.getPersonalizedAd");
}

#[test]
fn dangling_reference_is_v1() {
    let text = CAMERA_CARE_PDL.replace("Analysis.healthCritical\"", "Analysis.foo\"");
    let report = validate(&parse(&text).unwrap());
    assert!(report.errors.iter().any(|e| e.code == FindingCode::V1 && e.message.contains("Analysis.foo")));
}

#[test]
fn conflicting_status_is_v3_and_misplaced_not_used_is_v4() {
    let src = r#"
        class A {
          <<mandatory="B.m">> int x;
          <<optional="B.m">> int y;
        }
        class B {
          <<use="u">> <<notUsed="n">> int m();
          <<use="u">> <<notUsed="n">> int k();
          int bare();
        }"#;
    let report = validate(&parse(src).unwrap());
    let codes: Vec<_> = report.errors.iter().map(|e| (e.code, e.location.as_str())).collect();
    assert!(codes.contains(&(FindingCode::V3, "B.m")));
    assert!(codes.contains(&(FindingCode::V4, "B.k")));
    assert!(codes.contains(&(FindingCode::V5, "B.bare")));
    assert!(!codes.iter().any(|(c, _)| *c == FindingCode::V2));
}

#[test]
fn validation_is_deterministic() {
    let src = CAMERA_CARE_PDL.replace("Analysis.healthCritical\"", "Analysis.nope\"");
    let m = parse(&src).unwrap();
    assert_eq!(validate(&m), validate(&m));
}

#[test]
fn camera_care_edges_and_statuses() {
    let m = camera_care();
    let edges = access_edges(&m).unwrap();
    assert_eq!(edges.len(), 2);
    assert!(edges.iter().all(|e| e.attribute.as_str() == "Camera.recognizedPersons"));
    assert_eq!(method_status(&m, &MethodRef::new("Analysis", "healthCritical")).unwrap(), MethodStatus::Mandatory);
    assert_eq!(method_status(&m, &MethodRef::new("Analysis", "getPersonalizedAd")).unwrap(), MethodStatus::Optional);
    assert!(matches!(
        method_status(&m, &MethodRef::new("Analysis", "nothing")),
        Err(PdlError::UnknownMethod(_))
    ));
}

#[test]
fn unreferenced_method_is_mandatory_and_no_stereotypes_means_no_edges() {
    let m = parse("class A { <<use=\"x\">> int run(); int plain; }").unwrap();
    assert_eq!(method_status(&m, &MethodRef::new("A", "run")).unwrap(), MethodStatus::Mandatory);
    assert!(access_edges(&m).unwrap().is_empty());
}

#[test]
fn access_edges_rejects_invalid_models() {
    let text = CAMERA_CARE_PDL.replace("Analysis.healthCritical\"", "Analysis.foo\"");
    assert!(matches!(access_edges(&parse(&text).unwrap()), Err(PdlError::InvalidModel(_))));
}

#[test]
fn multiline_stereotype_renders_on_one_line() {
    let m = parse("class A {\n  <<use=\"first\n      second\tthird\">>\n  int x;\n}\n").unwrap();
    let out = render(&m);
    assert_eq!(out, "class A {\n  <<use=\"first second third\">>\n  int x;\n}\n");
}

#[test]
fn camera_care_round_trips() {
    let m = camera_care();
    let again = parse(&render(&m)).unwrap();
    assert!(m.same_model(&again));
    assert_eq!(render(&again), render(&m));
}

#[test]
fn escaped_quotes_round_trip() {
    let m = parse(r#"class A { <<use="say \"hi\" \\ bye">> int x; }"#).unwrap();
    assert_eq!(m.classes[0].attributes[0].use_text.as_deref(), Some(r#"say "hi" \ bye"#));
    assert!(m.same_model(&parse(&render(&m)).unwrap()));
}

#[test]
fn syntax_errors_carry_position() {
    let err = parse("class A {\n  int x\n}").unwrap_err();
    match err {
        ParseError::Syntax { line, col, ref expected, ref found } => {
            assert_eq!((line, col), (3, 1));
            assert_eq!(expected, "`;`");
            assert_eq!(found, "`}`");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(parse("class A { int f(int x); }").unwrap_err().position(), (1, 17));
    assert!(parse("class A { <<use=\"open }").is_err());
    assert!(parse("class A { <<purpose=\"x\">> int a; }").is_err());
    assert!(parse("class A { < <use=\"x\">> int a; }").is_err());
    assert!(parse("class A { <<mandatory=\"nodot\">> int a; }").is_err());
    assert!(parse("klass A {}").is_err());
    assert!(parse("class A { int a; } class A {}").is_err());
    assert!(parse("class A { int a; int a(); }").is_err());
    assert!(parse("class A { <<notUsed=\"x\">> int a; }").is_err());
    assert!(parse("class A { <<optional=\"A.m\">> int m(); }").is_err());
    assert!(parse("class A { <<use=\"   \">> int a; }").is_err());
    assert!(parse("class A { <<mandatory=\"B.m\">> <<optional=\"B.m\">> int a; }").is_err());
}

#[test]
fn nested_generic_types() {
    let m = parse("class A { Map<List<Person>> people; }").unwrap();
    assert_eq!(m.classes[0].attributes[0].type_name.to_string(), "Map<List<Person>>");
    assert!(parse("class A { List<Person> > people; }").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn render_parse_is_a_semantic_fixpoint(seed in any::<u64>()) {
        let model = testkit::random_model(&mut crate::rng::seeded(seed), &testkit::ModelParams::default());
        let text = render(&model);
        let reparsed = parse(&text).unwrap();
        prop_assert!(model.same_model(&reparsed));
        prop_assert_eq!(render(&reparsed), text);
    }

    #[test]
    fn edge_count_equals_stereotype_count(seed in any::<u64>()) {
        let model = testkit::random_model(&mut crate::rng::seeded(seed), &testkit::ModelParams::default());
        let text = render(&model);
        let stereos = text.matches("<<mandatory=").count() + text.matches("<<optional=").count();
        prop_assert_eq!(access_edges(&model).unwrap().len(), stereos);
    }

    #[test]
    fn optional_methods_of_valid_models_have_both_texts(seed in any::<u64>()) {
        let model = testkit::random_model(&mut crate::rng::seeded(seed), &testkit::ModelParams::default());
        prop_assert!(validate(&model).is_valid());
        for (m, method) in model.methods() {
            if method_status(&model, &m).unwrap() == MethodStatus::Optional {
                prop_assert!(method.use_text.is_some() && method.not_used_text.is_some());
            }
        }
    }
}
