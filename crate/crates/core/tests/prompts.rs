use proptest::prelude::*;

use vaudit_core::agents::{parse_verdict, render, TemplateId, VerdictLabel};

const ALL: [TemplateId; 6] = [
    TemplateId::Generator,
    TemplateId::Verifier,
    TemplateId::VerifierSingleTurn,
    TemplateId::Feedback,
    TemplateId::Judge,
    TemplateId::Labeler,
];

fn render_with(t: TemplateId, values: &[String]) -> String {
    let slots = t.slots();
    let pairs: Vec<(&str, &str)> = slots.iter().copied().zip(values.iter().map(|s| s.as_str())).collect();
    render(t, &pairs).unwrap()
}

fn slot_value() -> impl Strategy<Value = String> {
    "[^\n{}]{0,24}"
}

fn verdict_word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["CORRECT".to_string(), "INCORRECT".into(), "UNCERTAIN".into()])
}

fn values_for(t: TemplateId) -> BoxedStrategy<Vec<String>> {
    let n = t.slots().len();
    if t == TemplateId::Feedback {
        (verdict_word(), prop::collection::vec(slot_value(), n - 1))
            .prop_map(|(v, mut rest)| {
                rest.insert(0, v);
                rest
            })
            .boxed()
    } else {
        prop::collection::vec(slot_value(), n).boxed()
    }
}

fn template_and_two_assignments() -> impl Strategy<Value = (TemplateId, Vec<String>, Vec<String>)> {
    (0usize..ALL.len()).prop_flat_map(|i| {
        let t = ALL[i];
        (Just(t), values_for(t), values_for(t))
    })
}

proptest! {
    #[test]
    fn distinct_slot_values_give_distinct_prompts((t, a, b) in template_and_two_assignments()) {
        prop_assert_eq!(a == b, render_with(t, &a) == render_with(t, &b));
    }

    #[test]
    fn one_changed_slot_changes_the_prompt((t, a, _) in template_and_two_assignments(), pick in any::<prop::sample::Index>()) {
        let mut b = a.clone();
        let i = pick.index(b.len());
        b[i] = if t == TemplateId::Feedback && i == 0 {
            if a[0] == "CORRECT" { "INCORRECT".into() } else { "CORRECT".into() }
        } else {
            format!("{}x", b[i])
        };
        prop_assert_ne!(render_with(t, &a), render_with(t, &b));
    }

    #[test]
    fn rendering_only_replaces_slots(values in prop::collection::vec(slot_value(), 2)) {
        let out = render(TemplateId::Verifier, &[("question", &values[0]), ("answer", &values[1])]).unwrap();
        let expected = TemplateId::Verifier.text().replace("{question}", &values[0]).replace("{answer}", &values[1]);
        prop_assert_eq!(out, expected);
    }
}

#[test]
fn every_template_lists_its_slots() {
    assert_eq!(TemplateId::Generator.slots(), ["question"]);
    assert_eq!(TemplateId::Verifier.slots(), ["question", "answer"]);
    assert_eq!(TemplateId::VerifierSingleTurn.slots(), ["question", "answer"]);
    assert_eq!(TemplateId::Feedback.slots(), ["verdict", "question", "prev_answer", "explanation"]);
    assert_eq!(TemplateId::Judge.slots(), ["question", "reference_answer", "model_answer"]);
    assert_eq!(TemplateId::Labeler.slots(), ["question"]);
}

#[test]
fn missing_slot_is_an_error() {
    assert!(render(TemplateId::Judge, &[("question", "q")]).is_err());
}

#[test]
fn verdict_round_trip_through_synthetic_format() {
    for (label, word) in [
        (VerdictLabel::Correct, "CORRECT"),
        (VerdictLabel::Incorrect, "INCORRECT"),
        (VerdictLabel::Uncertain, "UNCERTAIN"),
    ] {
        let v = parse_verdict(&format!("Verdict: {word}\nConfidence: 0.75\nExplanation: looks fine"));
        assert_eq!(v.label, label);
        assert_eq!(v.confidence, Some(0.75));
        assert!(v.parse_clean);
    }
}
