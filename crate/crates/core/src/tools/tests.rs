use super::*;
use crate::backends::{FixtureDepth, FixtureDetector, ScriptedChat};
use crate::constraints::{LengthConstraint, LengthUnit};
use crate::dsl::{parse_action, Action};
use crate::testutil::png;
use crate::text::word_count;
use crate::vision::{BoundingBox, DepthMap};
use proptest::prelude::*;

fn words(n: usize) -> String {
    vec!["word"; n].join(" ")
}

fn bx(label: &str, x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> BoundingBox {
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
        label: label.into(),
        score,
    }
}

fn backends(chat: ScriptedChat, boxes: Vec<BoundingBox>, depth: FixtureDepth) -> ToolBackends {
    ToolBackends {
        chat: Arc::new(chat),
        detector: Arc::new(FixtureDetector::new(boxes)),
        depth: Arc::new(depth),
        config: ToolConfig::default(),
    }
}

#[test]
fn vqa_contract() {
    let chat = ScriptedChat::new(["A truck at dusk."]);
    assert_eq!(vqa(&png(), "Describe briefly", &chat).unwrap(), "A truck at dusk.");
    let idle = ScriptedChat::new(Vec::<String>::new());
    assert!(matches!(vqa(&png(), "  ", &idle), Err(ToolError::Precondition(_))));
    assert_eq!(idle.calls(), 0);
}

#[test]
fn sentiment_targets() {
    let chat = ScriptedChat::new(["A joyful red car."]);
    let t = SentimentTarget::parse("positive", None).unwrap();
    assert_eq!(modify_sentiment("A red car.", &t, &chat).unwrap(), "A joyful red car.");
    assert!(matches!(
        SentimentTarget::parse("ecstatic", None),
        Err(ToolError::Argument(_))
    ));
    assert_eq!(
        SentimentTarget::parse("ecstatic", Some("wistful")).unwrap().as_str(),
        "wistful"
    );
}

#[test]
fn expand_no_op_when_long_enough() {
    let chat = ScriptedChat::new(Vec::<String>::new());
    let target = LengthConstraint::min_words(3);
    let adj = expand_caption(&png(), "one two three", &target, &chat, 5).unwrap();
    assert!(adj.met);
    assert_eq!((adj.rounds, chat.calls()), (0, 0));
}

#[test]
fn expand_reaches_min_in_two_rounds() {
    // Each round is question, answer, merge.
    let chat = ScriptedChat::new([
        "What color is the car?",
        "Red.",
        "A red car parked outside.",
        "What is behind it?",
        "A brick wall.",
        "A red car parked outside in front of a brick wall.",
    ]);
    let target = LengthConstraint::min_words(10);
    let adj = expand_caption(&png(), "A car.", &target, &chat, 5).unwrap();
    assert_eq!(adj.rounds, 2);
    assert!(adj.met);
    assert_eq!(word_count(&adj.caption), 11);
    assert_eq!(chat.calls(), 6);
}

#[test]
fn expand_gives_up_after_budget() {
    let script: Vec<String> = (0..15)
        .map(|i| match i % 3 {
            0 => "Question?".to_string(),
            1 => "Answer.".to_string(),
            _ => words(2 + i / 3),
        })
        .collect();
    let chat = ScriptedChat::new(script);
    let target = LengthConstraint::min_words(50);
    let adj = expand_caption(&png(), "A car.", &target, &chat, 5).unwrap();
    assert_eq!(adj.rounds, 5);
    assert!(!adj.met);
    assert_eq!(word_count(&adj.caption), 6);
}

#[test]
fn expand_backend_error_keeps_best() {
    let chat = ScriptedChat::new(["Q?", "A.", "one two three four", "Q?"]);
    let target = LengthConstraint::min_words(10);
    let adj = expand_caption(&png(), "one two", &target, &chat, 5).unwrap();
    assert!(!adj.met);
    assert_eq!(adj.caption, "one two three four");
    assert!(adj.error.is_some());
}

#[test]
fn condense_contract() {
    let target = LengthConstraint::max_words(80);
    let chat = ScriptedChat::new([words(74)]);
    let adj = condense_caption(&words(120), &target, &chat, 3).unwrap();
    assert!(adj.met);
    assert_eq!(word_count(&adj.caption), 74);
    assert_eq!(adj.rounds, 1);

    let stubborn = ScriptedChat::new([words(100), words(90), words(95)]);
    let adj = condense_caption(&words(120), &target, &stubborn, 3).unwrap();
    assert!(!adj.met);
    assert_eq!(adj.rounds, 3);
    assert_eq!(word_count(&adj.caption), 90);

    let idle = ScriptedChat::new(Vec::<String>::new());
    let adj = condense_caption(&words(80), &target, &idle, 3).unwrap();
    assert!(adj.met);
    assert_eq!(idle.calls(), 0);
}

#[test]
fn length_tools_need_the_right_bound() {
    let chat = ScriptedChat::new(Vec::<String>::new());
    assert!(condense_caption("a b", &LengthConstraint::min_words(3), &chat, 3).is_err());
    assert!(expand_caption(&png(), "a b", &LengthConstraint::max_words(3), &chat, 3).is_err());
}

#[test]
fn count_objects_threshold() {
    let boxes = vec![
        bx("car", 0.0, 0.0, 0.1, 0.1, 0.9),
        bx("car", 0.2, 0.0, 0.3, 0.1, 0.8),
        bx("car", 0.4, 0.0, 0.5, 0.1, 0.4),
        bx("car", 0.6, 0.0, 0.7, 0.1, 0.2),
    ];
    let det = FixtureDetector::new(boxes);
    assert_eq!(count_objects(&png(), "car", &det, 0.35).unwrap().count, 3);
    assert_eq!(count_objects(&png(), "car", &det, 0.0).unwrap().count, 4);
    assert_eq!(count_objects(&png(), "bus", &det, 0.35).unwrap().count, 0);
}

#[test]
fn spatial_left_of_with_equal_depth() {
    let det = FixtureDetector::new(vec![
        bx("sofa", 0.2, 0.4, 0.4, 0.6, 0.9),
        bx("lamp", 0.6, 0.4, 0.8, 0.6, 0.9),
    ]);
    let depth = FixtureDepth::constant(10, 10, 2.0);
    let labels = vec!["sofa".to_string(), "lamp".to_string()];
    let r = spatial_relations(&png(), &labels, &det, &depth, &ToolConfig::default()).unwrap();
    assert_eq!(r.render(), "the sofa is left of the lamp.");
}

#[test]
fn spatial_absent_and_identical() {
    let det = FixtureDetector::new(vec![
        bx("sofa", 0.2, 0.4, 0.4, 0.6, 0.9),
        bx("chair", 0.2, 0.4, 0.4, 0.6, 0.9),
    ]);
    let depth = FixtureDepth::constant(10, 10, 2.0);
    let cfg = ToolConfig::default();
    let absent = vec!["sofa".to_string(), "lamp".to_string()];
    let r = spatial_relations(&png(), &absent, &det, &depth, &cfg).unwrap();
    assert_eq!(r.absent, vec!["lamp"]);
    assert!(r.render().contains("no lamp detected."));

    let same = vec!["sofa".to_string(), "chair".to_string()];
    let r = spatial_relations(&png(), &same, &det, &depth, &cfg).unwrap();
    assert_eq!(r.pairs[0].2, Vec::<Relation>::new());
    assert!(!r.render().contains(" is "));
}

#[test]
fn spatial_vertical_and_depth_thresholds() {
    // Gradient depth grows left to right: the left object is nearer.
    let det = FixtureDetector::new(vec![
        bx("cup", 0.0, 0.0, 0.2, 0.2, 0.9),
        bx("plate", 0.8, 0.5, 1.0, 0.7, 0.9),
    ]);
    let depth = FixtureDepth::new(
        DepthMap::new(10, 1, (0..10).map(|i| 1.0 + i as f64).collect()).unwrap(),
    );
    let labels = vec!["cup".to_string(), "plate".to_string()];
    let r = spatial_relations(&png(), &labels, &det, &depth, &ToolConfig::default()).unwrap();
    assert_eq!(
        r.render(),
        "the cup is left of the plate.\nthe cup is above the plate.\nthe cup is nearer than the plate."
    );
}

#[test]
fn describe_and_reparse() {
    assert_eq!(registry_describe(&ToolRegistry::new()), "");
    let reg = standard_registry(backends(
        ScriptedChat::new(Vec::<String>::new()),
        vec![],
        FixtureDepth::constant(1, 1, 1.0),
    ));
    let text = registry_describe(&reg);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    let names: Vec<String> = lines
        .iter()
        .map(|l| {
            let skeleton = l.split(" - ").next().unwrap();
            match parse_action(skeleton).unwrap() {
                Action::Call(c) => c.tool,
                other => panic!("not a call: {other:?}"),
            }
        })
        .collect();
    assert_eq!(names, STANDARD_TOOLS.to_vec());
}

#[test]
fn descriptors_match_signatures() {
    let reg = standard_registry(backends(
        ScriptedChat::new(Vec::<String>::new()),
        vec![],
        FixtureDepth::constant(1, 1, 1.0),
    ));
    let sig = |name: &str| -> Vec<(String, bool)> {
        reg.descriptors()
            .find(|d| d.name == name)
            .unwrap()
            .args
            .iter()
            .map(|a| (a.name.clone(), a.required))
            .collect()
    };
    let s = |v: &[(&str, bool)]| v.iter().map(|(n, r)| (n.to_string(), *r)).collect::<Vec<_>>();
    assert_eq!(sig("vqa"), s(&[("question", true)]));
    assert_eq!(sig("count_objects"), s(&[("label", true)]));
    assert_eq!(sig("spatial_relations"), s(&[("labels", true)]));
    assert_eq!(
        sig("expand_caption"),
        s(&[("caption", true), ("target", true), ("unit", false)])
    );
    assert_eq!(
        sig("modify_sentiment"),
        s(&[("caption", true), ("sentiment", true), ("tone", false)])
    );
}

struct Faulty;

impl Tool for Faulty {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "faulty".into(),
            summary: "always crashes".into(),
            args: vec![],
            returns: "nothing".into(),
        }
    }

    fn invoke(&self, _: &ToolContext<'_>, _: &ToolCall) -> Result<String, ToolError> {
        panic!("internal failure")
    }
}

#[test]
fn execute_turns_failures_into_observations() {
    let mut reg = standard_registry(backends(
        ScriptedChat::new(["canned answer"]),
        vec![],
        FixtureDepth::constant(1, 1, 1.0),
    ));
    reg.register(Arc::new(Faulty)).unwrap();
    assert!(matches!(
        reg.register(Arc::new(Faulty)),
        Err(RegistryError::Duplicate(_))
    ));
    let image = png();
    let ctx = ToolContext { image: &image };
    let call = |s: &str| match parse_action(s).unwrap() {
        Action::Call(c) => c,
        _ => unreachable!(),
    };
    assert_eq!(
        execute(&call(r#"call vqa(question="what?")"#), &reg, &ctx),
        "canned answer"
    );
    assert!(execute(&call("call nope()"), &reg, &ctx).starts_with("ERROR: unknown tool"));
    assert!(execute(&call("call vqa(q=1)"), &reg, &ctx).starts_with("ERROR: argument mismatch"));
    assert!(execute(&call("call vqa()"), &reg, &ctx).starts_with("ERROR: argument mismatch"));
    assert!(execute(&call("call vqa(question=3)"), &reg, &ctx).starts_with("ERROR: argument mismatch"));
    assert!(execute(&call("call faulty()"), &reg, &ctx).starts_with("ERROR:"));
    assert!(execute(&call(r#"call count_objects(label="")"#), &reg, &ctx).starts_with("ERROR:"));
}

fn unit_box() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0f64..0.9, 0.0f64..0.9, 0.01f64..0.1, 0.01f64..0.1)
        .prop_map(|(x, y, w, h)| (x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn count_is_monotone_in_threshold(
        scores in prop::collection::vec(0.0f64..=1.0, 0..40),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let boxes: Vec<BoundingBox> = scores.iter().map(|s| bx("x", 0.0, 0.0, 0.5, 0.5, *s)).collect();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(count_boxes(&boxes, hi) <= count_boxes(&boxes, lo));
    }

    #[test]
    fn swapping_labels_inverts_relations(
        a in unit_box(),
        b in unit_box(),
        da in 0.0f64..10.0,
        db in 0.0f64..10.0,
    ) {
        let pa = Placed { label: "a".into(), bbox: bx("a", a.0, a.1, a.2, a.3, 1.0), depth: da };
        let pb = Placed { label: "b".into(), bbox: bx("b", b.0, b.1, b.2, b.3, 1.0), depth: db };
        let cfg = ToolConfig::default();
        let forward: Vec<Relation> = relate(&pa, &pb, &cfg).into_iter().map(Relation::inverse).collect();
        prop_assert_eq!(forward, relate(&pb, &pa, &cfg));
    }

    #[test]
    fn condense_met_flag_is_truthful(
        start in 1usize..60,
        rewrites in prop::collection::vec(0usize..60, 0..4),
        max in 1u32..50,
    ) {
        let chat = ScriptedChat::new(rewrites.iter().map(|n| words(*n)));
        let target = LengthConstraint::max_words(max);
        if let Ok(adj) = condense_caption(&words(start), &target, &chat, 3) {
            prop_assert_eq!(adj.met, word_count(&adj.caption) <= max as usize);
        }
    }

    #[test]
    fn expand_met_flag_is_truthful(
        start in 1usize..20,
        merges in prop::collection::vec(0usize..40, 0..6),
        min in 1u32..30,
        sentences in any::<bool>(),
    ) {
        let mut script = Vec::new();
        for m in &merges {
            script.push("Q?".to_string());
            script.push("A.".to_string());
            script.push(if sentences { vec!["A b."; *m].join(" ") } else { words(*m) });
        }
        let chat = ScriptedChat::new(script);
        let unit = if sentences { LengthUnit::Sentences } else { LengthUnit::Words };
        let target = LengthConstraint::new(unit, Some(min), None).unwrap();
        let adj = expand_caption(&png(), &words(start), &target, &chat, 5).unwrap();
        prop_assert_eq!(adj.met, target.is_met_by(&adj.caption));
        prop_assert_eq!(adj.met, unit.measure(&adj.caption) >= min as usize);
    }
}
