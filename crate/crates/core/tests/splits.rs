use std::collections::BTreeSet;

use maosr::splits::{
    assign_group, build_combinations, build_test_groups, builtin_preset, check_correlation_invariants,
    AttributeDomain, Combination, CorrelationConfig, CorrelationKind, GroupTag, SplitPreset, TestGroup,
    PRESET_NAMES,
};
use maosr::Error;

fn pairs(v: &[(&str, &str)]) -> BTreeSet<Combination> {
    v.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]).collect()
}

fn labels(a: &str, b: &str) -> Vec<String> {
    vec![a.into(), b.into()]
}

fn mnist(kind: CorrelationKind) -> SplitPreset {
    builtin_preset("color-mnist", kind).unwrap()
}

fn combos(p: &SplitPreset) -> BTreeSet<Combination> {
    build_combinations(&p.domains, &p.config, 0).unwrap()
}

#[test]
fn color_mnist_correlated_pairs() {
    let expected = pairs(&[("0", "red"), ("1", "yellow"), ("2", "green"), ("3", "cyan"), ("4", "blue")]);
    assert_eq!(combos(&mnist(CorrelationKind::Correlated)), expected);
}

#[test]
fn color_mnist_semi_correlated_pairs() {
    let expected = pairs(&[
        ("0", "red"),
        ("0", "yellow"),
        ("1", "yellow"),
        ("1", "green"),
        ("2", "green"),
        ("2", "cyan"),
        ("3", "cyan"),
        ("3", "blue"),
        ("4", "blue"),
        ("4", "yellow"),
    ]);
    assert_eq!(combos(&mnist(CorrelationKind::SemiCorrelated)), expected);
}

#[test]
fn color_mnist_uncorrelated_is_full_product() {
    let p = mnist(CorrelationKind::Uncorrelated);
    let got = combos(&p);
    assert_eq!(got.len(), 25);
    for d in &p.domains[0].known_values {
        for c in &p.domains[1].known_values {
            assert!(got.contains(&labels(d, c)));
        }
    }
}

#[test]
fn ut_zappos_explicit_list() {
    let p = builtin_preset("ut-zappos", CorrelationKind::Explicit).unwrap();
    let expected = pairs(&[
        ("Faux.Leather", "Boots.Knee.High"),
        ("Faux.Leather", "Boots.Mid-Calf"),
        ("Faux.Leather", "Shoes.Flats"),
        ("Full.grain.leather", "Boots.Mid-Calf"),
        ("Full.grain.leather", "Shoes.Loafers"),
        ("Leather", "Shoes.Flats"),
        ("Leather", "Shoes.Heels"),
        ("Leather", "Shoes.Loafers"),
        ("Rubber", "Boots.Knee.High"),
        ("Rubber", "Boots.Mid-Calf"),
        ("Suede", "Boots.Knee.High"),
        ("Suede", "Shoes.Flats"),
        ("Suede", "Shoes.Heels"),
    ]);
    assert_eq!(combos(&p), expected);
}

#[test]
fn generated_configs_pass_their_invariant_checks() {
    for name in ["color-mnist", "color-object", "scene-object"] {
        for kind in [CorrelationKind::Uncorrelated, CorrelationKind::SemiCorrelated, CorrelationKind::Correlated] {
            let p = builtin_preset(name, kind).unwrap();
            if p.config.combinations.is_some() {
                continue;
            }
            for rotation in 0..4 {
                let c = build_combinations(&p.domains, &p.config, rotation).unwrap();
                check_correlation_invariants(&p.domains, kind, &c).unwrap();
            }
        }
    }
}

#[test]
fn pinned_color_mnist_semi_correlated_list_repeats_yellow() {
    // The published list pairs digit 4 with yellow instead of red, so red
    // occurs once and yellow three times.
    let p = mnist(CorrelationKind::SemiCorrelated);
    let c = combos(&p);
    let count = |v: &str| c.iter().filter(|t| t[1] == v).count();
    assert_eq!((count("red"), count("yellow"), count("green")), (1, 3, 2));
    let err = check_correlation_invariants(&p.domains, CorrelationKind::SemiCorrelated, &c).unwrap_err();
    assert!(err.to_string().contains("`red`"), "{err}");
    let cyclic = build_combinations(&p.domains, &CorrelationConfig::generated(CorrelationKind::SemiCorrelated), 0).unwrap();
    check_correlation_invariants(&p.domains, CorrelationKind::SemiCorrelated, &cyclic).unwrap();
    assert_eq!(cyclic.symmetric_difference(&c).count(), 2);
}

#[test]
fn cyclic_rule_gives_semi_correlated_pairs_for_six_values() {
    let p = builtin_preset("color-object", CorrelationKind::SemiCorrelated).unwrap();
    let c = combos(&p);
    let objects = &p.domains[0].known_values;
    let colors = &p.domains[1].known_values;
    let n = objects.len();
    let expected: BTreeSet<Combination> = (0..n)
        .flat_map(|i| [labels(&objects[i], &colors[i]), labels(&objects[i], &colors[(i + 1) % n])])
        .collect();
    assert_eq!(c, expected);
    assert_eq!(c.len(), 2 * n);
}

#[test]
fn rotation_changes_offset_and_is_deterministic() {
    let p = mnist(CorrelationKind::Correlated);
    let a = build_combinations(&p.domains, &CorrelationConfig::generated(CorrelationKind::Correlated), 1).unwrap();
    let b = build_combinations(&p.domains, &CorrelationConfig::generated(CorrelationKind::Correlated), 1).unwrap();
    assert_eq!(a, b);
    assert!(a.contains(&labels("0", "yellow")));
    assert!(!a.contains(&labels("0", "red")));
}

#[test]
fn mismatched_domain_sizes_are_rejected_for_correlated_kinds() {
    let domains = vec![
        AttributeDomain::new("a", vec!["a1", "a2", "a3"], vec!["a4"]).unwrap(),
        AttributeDomain::new("b", vec!["b1", "b2"], vec!["b3"]).unwrap(),
    ];
    for kind in [CorrelationKind::Correlated, CorrelationKind::SemiCorrelated] {
        let err = build_combinations(&domains, &CorrelationConfig::generated(kind), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
    let uc = build_combinations(&domains, &CorrelationConfig::generated(CorrelationKind::Uncorrelated), 0).unwrap();
    assert_eq!(uc.len(), 6);
}

#[test]
fn explicit_with_unknown_value_is_a_validation_error() {
    let p = mnist(CorrelationKind::Correlated);
    let config = CorrelationConfig::explicit(vec![labels("0", "red"), labels("7", "red")]);
    let err = build_combinations(&p.domains, &config, 0).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

#[test]
fn domains_reject_overlap_duplicates_and_empty_lists() {
    assert!(AttributeDomain::new("x", vec!["a", "b"], vec!["b"]).is_err());
    assert!(AttributeDomain::new("x", vec!["a", "a"], vec!["b"]).is_err());
    assert!(AttributeDomain::new("x", Vec::<&str>::new(), vec!["b"]).is_err());
    assert!(AttributeDomain::new("x", vec!["a"], Vec::<&str>::new()).is_err());
}

#[test]
fn color_mnist_test_groups_have_25_tuples_each() {
    let groups = build_test_groups(&mnist(CorrelationKind::Uncorrelated).domains).unwrap();
    assert_eq!(groups.len(), 4);
    for g in [TestGroup::Known, TestGroup::OodAttr(0), TestGroup::OodAttr(1), TestGroup::OodAll] {
        assert_eq!(groups[&g].len(), 25, "{g}");
    }
}

#[test]
fn minimal_domains_give_single_tuple_groups() {
    let domains = vec![
        AttributeDomain::new("a", vec!["k"], vec!["u"]).unwrap(),
        AttributeDomain::new("b", vec!["k2"], vec!["u2"]).unwrap(),
    ];
    let groups = build_test_groups(&domains).unwrap();
    assert_eq!(groups.len(), 4);
    assert!(groups.values().all(|g| g.len() == 1));
    assert_eq!(groups[&TestGroup::OodAttr(0)], pairs(&[("u", "k2")]));
}

#[test]
fn color_object_test_groups_have_36_tuples_each() {
    let groups = build_test_groups(&builtin_preset("color-object", CorrelationKind::Correlated).unwrap().domains).unwrap();
    assert!(groups.values().all(|g| g.len() == 36));
}

#[test]
fn unbalanced_domains_name_the_attribute() {
    let p = builtin_preset("ut-zappos", CorrelationKind::Explicit).unwrap();
    let err = build_test_groups(&p.domains).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    assert!(err.to_string().contains("`type`"), "{err}");
}

#[test]
fn assign_group_examples() {
    let p = mnist(CorrelationKind::Correlated);
    let train = combos(&p);
    let g = |a: &str, b: &str| assign_group(&labels(a, b), &p.domains, &train).unwrap();
    assert_eq!(g("0", "red"), GroupTag::KnownSeen);
    assert_eq!(g("0", "green"), GroupTag::KnownUnseenCombo);
    assert_eq!(g("7", "red"), GroupTag::OodAttr(0));
    assert_eq!(g("0", "rose"), GroupTag::OodAttr(1));
    assert_eq!(g("7", "rose"), GroupTag::OodAll);
    let err = assign_group(&labels("0", "teal"), &p.domains, &train).unwrap_err();
    assert!(matches!(err, Error::UnknownLabel { .. }), "{err}");
}

#[test]
fn assign_group_partitions_the_label_space() {
    let p = mnist(CorrelationKind::SemiCorrelated);
    let train = combos(&p);
    let all = |d: &AttributeDomain| d.known_values.iter().chain(&d.unknown_values).cloned().collect::<Vec<_>>();
    let mut counts = std::collections::BTreeMap::new();
    for a in all(&p.domains[0]) {
        for b in all(&p.domains[1]) {
            let tag = assign_group(&labels(&a, &b), &p.domains, &train).unwrap();
            let known_a = p.domains[0].is_known(&a);
            let known_b = p.domains[1].is_known(&b);
            let expected = match (known_a, known_b) {
                (true, true) if train.contains(&labels(&a, &b)) => GroupTag::KnownSeen,
                (true, true) => GroupTag::KnownUnseenCombo,
                (false, true) => GroupTag::OodAttr(0),
                (true, false) => GroupTag::OodAttr(1),
                (false, false) => GroupTag::OodAll,
            };
            assert_eq!(tag, expected, "({a}, {b})");
            *counts.entry(tag).or_insert(0) += 1;
        }
    }
    assert_eq!(counts.values().sum::<usize>(), 100);
    assert_eq!(counts[&GroupTag::KnownSeen], 10);
    assert_eq!(counts[&GroupTag::KnownUnseenCombo], 15);
}

#[test]
fn pooled_test_groups_have_half_unknown_per_attribute() {
    for name in ["color-mnist", "color-object", "scene-object"] {
        let p = builtin_preset(name, CorrelationKind::Correlated).unwrap();
        let groups = build_test_groups(&p.domains).unwrap();
        let tuples: Vec<&Combination> = groups.values().flatten().collect();
        for (m, d) in p.domains.iter().enumerate() {
            let unknown = tuples.iter().filter(|t| d.is_unknown(&t[m])).count();
            assert_eq!(2 * unknown, tuples.len(), "{name} attribute {m}");
        }
    }
}

#[test]
fn presets_are_listed_and_serialize() {
    assert_eq!(PRESET_NAMES, ["color-mnist", "color-object", "scene-object", "ut-zappos"]);
    let p = mnist(CorrelationKind::Correlated);
    let json = serde_json::to_value(&p).unwrap();
    assert_eq!(json["domains"][0]["name"], "digit");
    assert_eq!(json["colors"]["orange"], serde_json::json!([255, 128, 0]));
    assert!(builtin_preset("nope", CorrelationKind::Correlated).is_err());
    assert!(builtin_preset("ut-zappos", CorrelationKind::Correlated).is_err());
}

#[test]
fn preset_json_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let p = builtin_preset("scene-object", CorrelationKind::SemiCorrelated).unwrap();
    std::fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(SplitPreset::load(&path).unwrap(), p);
    let plan = p.plan(0).unwrap();
    assert_eq!(plan.train_combinations.len(), 12);
    assert_eq!(plan.test_groups.len(), 4);
}
