use rulex_web::{chance_of, membership_of, mixture_completion};

#[test]
fn membership_reports_rules_and_distance() {
    let m = membership_of("L3", "aabb").unwrap();
    assert!(m.member && m.r1 && m.r2);
    assert_eq!(m.min_completion, Some(0));
    let m = membership_of("L3", "aab").unwrap();
    assert!(!m.member && !m.r1 && m.r2);
    assert_eq!(m.min_completion, Some(1));
    let m = membership_of("L4", "([)]").unwrap();
    assert!(m.r1 && !m.r2 && m.min_completion.is_none());
    assert!(membership_of("L3", "abc").is_err());
    assert!(membership_of("L7", "ab").is_err());
}

#[test]
fn chance_levels() {
    assert!((chance_of("L1", "ood_r2_completion", 300).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    let l4 = chance_of("L4", "id_r1", 100).unwrap();
    assert!((0.0..=1.0).contains(&l4));
    assert!(chance_of("L1", "id_r3", 30).is_err());
    assert!(chance_of("L1", "id_r1", 100_000).is_err());
}

#[test]
fn mixture_prefers_the_intersection_with_enough_words() {
    let few = mixture_completion("bbaab", 2).unwrap();
    let many = mixture_completion("bbaab", 128).unwrap();
    let mass = |c: &rulex_web::MixtureCompletion| c.masses.iter().find(|(id, _)| id == "L3.r1_and_r2").unwrap().1;
    assert!(mass(&many) > 0.99);
    assert!(mass(&few) < mass(&many));
    assert_eq!(many.completion, "a$");
    assert_eq!(many.r1, Some(true));
}
