use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grammar::{check_rule, enumerate_words, is_member, Rule};
use crate::token::prompt_of;

const LETTER_LANGS: [Language; 3] = [Language::L1, Language::L2, Language::L3];

fn word(s: &str) -> Vec<Token> {
    s.chars()
        .map(|c| match c {
            'a' => Token::A,
            'b' => Token::B,
            _ => Token::C,
        })
        .collect()
}

fn index_of(cat: &[Machine], suffix: &str) -> usize {
    cat.iter().position(|m| m.id.ends_with(suffix)).unwrap()
}

#[test]
fn catalogues_parse_and_satisfy_kraft() {
    for lang in LETTER_LANGS {
        let cat = catalogue_for(lang).unwrap();
        assert_eq!(cat.len(), 4);
        assert!(log_kraft_sum(&cat) <= 0.0);
        for m in &cat {
            assert_eq!(m.description_bits(), 8 * m.canonical().len() as u64);
            let again = parse_catalogue(&format!("machine x\n{}", m.canonical()), "canon").unwrap();
            assert_eq!(again[0].canonical(), m.canonical());
        }
    }
    assert!(matches!(catalogue_for(Language::L4), Err(Error::Contract(_))));
}

#[test]
fn r2_is_shorter_than_intersection_on_l3() {
    let cat = catalogue_for(Language::L3).unwrap();
    let k = |s| cat[index_of(&cat, s)].description_bits();
    assert!(k(".r2") < k(".r1_and_r2"));
    assert!(k(".uniform") < k(".r2"));
}

#[test]
fn conditionals_are_semimeasures_everywhere() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for lang in LETTER_LANGS {
        let cat = catalogue_for(lang).unwrap();
        let mix = Mixture::fit(cat.clone(), &PretrainSet::default()).unwrap();
        for _ in 0..1000 {
            let len = rng.gen_range(0..40);
            let body: Vec<Token> = (0..len).map(|_| lang.alphabet()[rng.gen_range(0..2)]).collect();
            let prompt = prompt_of(&body);
            for m in &cat {
                let p = m.conditional(&m.run(&prompt).unwrap());
                assert!(p.iter().sum::<f64>() <= 1.0 + 1e-12);
                assert!(p.iter().all(|&x| x >= 0.0));
            }
            assert!(mix.predict(&prompt).unwrap().iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}

#[test]
fn intersection_machine_generates_only_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for lang in LETTER_LANGS {
        let cat = catalogue_for(lang).unwrap();
        let m = &cat[index_of(&cat, ".r1_and_r2")];
        for _ in 0..1000 {
            let mut s = m.start();
            let mut w = Vec::new();
            loop {
                let p = m.conditional(&s);
                let mut u = rng.gen::<f64>();
                let mut t = Token::EOS;
                for (i, &pi) in p.iter().enumerate() {
                    if u < pi {
                        t = Token(i as u8);
                        break;
                    }
                    u -= pi;
                }
                if t == Token::EOS {
                    break;
                }
                w.push(t);
                s = m.step(&s, t).unwrap();
            }
            assert!(is_member(lang, &w), "{lang}: {w:?}");
        }
    }
}

#[test]
fn likelihood_cases() {
    let cat = catalogue_for(Language::L3).unwrap();
    let uniform = &cat[index_of(&cat, ".uniform")];
    let ab = PretrainSet::from_words(&[word("ab")]);
    let ll = log_likelihood(uniform, &ab).unwrap();
    assert!((ll - 3.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);

    let r2 = &cat[index_of(&cat, ".r2")];
    let ba = PretrainSet::from_words(&[word("ba")]);
    assert_eq!(log_likelihood(r2, &ba).unwrap(), f64::NEG_INFINITY);
    let after_b = r2.run(&prompt_of(&word("b"))).unwrap();
    assert!((r2.conditional(&after_b).iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let d1 = PretrainSet::from_words(&[word("ab"), word("aabb")]);
    let d2 = PretrainSet::from_words(&[word("aaabbb")]);
    let both = PretrainSet::from_words(&[word("ab"), word("aabb"), word("aaabbb")]);
    for m in &cat {
        let sum = log_likelihood(m, &d1).unwrap() + log_likelihood(m, &d2).unwrap();
        assert!((log_likelihood(m, &both).unwrap() - sum).abs() < 1e-9);
    }
}

#[test]
fn posterior_cases() {
    let cat = catalogue_for(Language::L3).unwrap();
    let prior = posterior(&cat, &PretrainSet::default()).unwrap();
    let z = log_kraft_sum(&cat);
    for (e, m) in prior.entries.iter().zip(&cat) {
        assert!((e.log_posterior - (m.log_prior() - z)).abs() < 1e-12);
    }

    // Two hypotheses, one word: posterior odds = prior odds * likelihood ratio.
    let pair = vec![cat[0].clone(), cat[2].clone()];
    let d = PretrainSet::from_words(&[word("ab")]);
    let post = posterior(&pair, &d).unwrap();
    let odds = post.entries[0].log_posterior - post.entries[1].log_posterior;
    let expected = (pair[0].log_prior() - pair[1].log_prior())
        + (log_likelihood(&pair[0], &d).unwrap() - log_likelihood(&pair[1], &d).unwrap());
    assert!((odds - expected).abs() < 1e-9);

    let only = vec![cat[index_of(&cat, ".r1_and_r2")].clone()];
    assert!(matches!(
        posterior(&only, &PretrainSet::from_words(&[word("ba")])),
        Err(Error::DegeneratePosterior(_))
    ));
}

#[test]
fn incremental_posterior_equals_batch() {
    let cat = catalogue_for(Language::L3).unwrap();
    let words = enumerate_words(Language::L3, 40).unwrap();
    let batch = posterior(&cat, &PretrainSet::from_words(&words)).unwrap();
    let mut inc = PosteriorState::prior(&cat);
    for w in &words {
        inc.update(&cat, &completed(w)).unwrap();
    }
    for (a, b) in batch.entries.iter().zip(&inc.entries) {
        assert!((a.log_posterior - b.log_posterior).abs() < 1e-12 * a.log_posterior.abs().max(1.0));
    }
}

#[test]
fn full_l3_corpus_selects_the_intersection() {
    let cat = catalogue_for(Language::L3).unwrap();
    let words = enumerate_words(Language::L3, 256).unwrap();
    assert_eq!(words.len(), 128);
    let mix = Mixture::fit(cat.clone(), &PretrainSet::from_words(&words)).unwrap();
    assert!(mix.posterior.mass_of("L3.r1_and_r2").unwrap() >= 0.99);

    let bbaab = prompt_of(&word("bbaab"));
    let p = mix.predict(&bbaab).unwrap();
    assert!(p[Token::A.id()] + p[Token::EOS.id()] > 0.99);
    let c = mix.complete(&bbaab, 300, Completion::Greedy).unwrap();
    assert_eq!(c, vec![Token::A, Token::EOS]);
    let mut whole = word("bbaab");
    whole.push(Token::A);
    assert!(check_rule(Language::L3, Rule::R1, &whole).unwrap());

    let baba = prompt_of(&word("baba"));
    assert_eq!(mix.complete(&baba, 300, Completion::Greedy).unwrap(), vec![Token::EOS]);
}

#[test]
fn sampled_completions_respect_r1_often_enough() {
    let cat = catalogue_for(Language::L3).unwrap();
    let words = enumerate_words(Language::L3, 256).unwrap();
    let mix = Mixture::fit(cat, &PretrainSet::from_words(&words)).unwrap();
    let r1_mass = mix.posterior.mass_of("L3.r1").unwrap() + mix.posterior.mass_of("L3.r1_and_r2").unwrap();
    let prompt = prompt_of(&word("bbaab"));
    let n = 10_000;
    let mut ok = 0;
    for seed in 0..n {
        let c = mix.complete(&prompt, 300, Completion::Sample { seed }).unwrap();
        if c.last() == Some(&Token::EOS) {
            let mut w = word("bbaab");
            w.extend_from_slice(&c[..c.len() - 1]);
            ok += check_rule(Language::L3, Rule::R1, &w).unwrap() as usize;
        }
    }
    let freq = ok as f64 / n as f64;
    assert!(freq >= r1_mass - 0.01, "{freq} vs {r1_mass}");
}

#[test]
fn predictions_are_total() {
    let cat = catalogue_for(Language::L3).unwrap();
    let mix = Mixture::fit(cat, &PretrainSet::from_words(&[word("ab")])).unwrap();
    for s in ["", "b", "ba", "bbbbbbbbbba", "abab"] {
        assert!(mix.predict(&prompt_of(&word(s))).is_ok());
    }
    assert!(mix.predict(&word("ab")).is_err());
}

#[test]
fn mixture_matches_direct_bayesian_update() {
    let cat = catalogue_for(Language::L3).unwrap();
    for s in ["aab", "bba", "ab", "abba"] {
        let prompt = prompt_of(&word(s));
        let d = PretrainSet::from_sequences(vec![prompt.clone()]).unwrap();
        let mix = Mixture::fit(cat.clone(), &d).unwrap();
        let via_posterior = mix.predict(&prompt).unwrap();
        let direct = predictive_update(&cat, &prompt).unwrap();
        for (a, b) in via_posterior.iter().zip(&direct).skip(1) {
            assert!((a - b).abs() < 1e-12, "{s}: {via_posterior:?} vs {direct:?}");
        }
    }
}

#[test]
fn learning_order_curve_shows_r2_first() {
    let cat = catalogue_for(Language::L3).unwrap();
    let sizes: Vec<usize> = [0, 1, 2, 5, 10, 20, 50, 100, 200, 500].to_vec();
    let rows = learning_order_curve(&cat, Language::L3, &sizes, 16, 0).unwrap();
    let prior = PosteriorState::prior(&cat).weights();
    for (a, b) in rows[0].masses.iter().zip(&prior) {
        assert!((a - b).abs() < 1e-15);
    }
    let (r2, both) = (index_of(&cat, ".r2"), index_of(&cat, ".r1_and_r2"));
    assert!(crossover(&rows, r2, both).is_some());
    assert!(rows.last().unwrap().masses[both] >= 0.999);
    assert!(learning_order_curve(&cat, Language::L3, &[5, 5], 16, 0).is_err());
}

#[test]
fn artificial_prior_gap_delays_the_intersection() {
    let cat = catalogue_for(Language::L3).unwrap();
    let (r2, both) = (index_of(&cat, ".r2"), index_of(&cat, ".r1_and_r2"));
    let mut gapped = cat.clone();
    let k = gapped[both].description_bits();
    gapped[both] = gapped[both].clone().with_description_bits(k + 400);
    let sizes: Vec<usize> = (0..=400).collect();
    let natural = crossover(&learning_order_curve(&cat, Language::L3, &sizes, 16, 0).unwrap(), r2, both).unwrap();
    let delayed = crossover(&learning_order_curve(&gapped, Language::L3, &sizes, 16, 0).unwrap(), r2, both).unwrap();
    assert!(delayed > natural, "{natural} vs {delayed}");
}

#[test]
fn parse_errors_carry_lines() {
    let bad = "machine x\nalphabet a b\ncounters 0\nstart s\nemit s : a=2/3 b=2/3\non s a -> s\non s b -> s\nend\n";
    match parse_catalogue(bad, "t") {
        Err(Error::Format { line, .. }) => assert_eq!(line, 5),
        other => panic!("{other:?}"),
    }
    let uncovered = "machine x\nalphabet a b\ncounters 1\nstart s\nemit s c0=0 : a=1\non s a -> s c0+\non s b -> s\nend\n";
    assert!(parse_catalogue(uncovered, "t").is_err());
    let missing = "machine x\nalphabet a b\ncounters 0\nstart s\nemit s : a=1\non s a -> s\nend\n";
    assert!(parse_catalogue(missing, "t").is_err());
    assert!(parse_catalogue("machine x\n", "t").is_err());
    let saturating = "machine x\nalphabet a\ncounters 1\nstart s\nemit s * : a=1\non s a -> s c0+\nend\n";
    let m = &parse_catalogue(saturating, "t").unwrap()[0];
    let long = prompt_of(&vec![Token::A; 400]);
    assert_eq!(m.run(&long).unwrap().counters[0], COUNTER_BOUND);
}
