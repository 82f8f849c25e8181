use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::build_test_prompts;
use crate::model::{init_model, LinearConfig, ModelConfig, TraceRecord};

/// Linear model whose logits are its bias alone.
fn bias_model(lang: Language, bias: &[(Token, f64)]) -> ArModel {
    let cfg = ModelConfig::Linear(LinearConfig { window: 1, bias: true });
    let mut m = init_model(cfg, lang.vocab_size(), 0).unwrap();
    m.params.fill(0.0);
    let spec = m.param_specs().iter().find(|s| s.name == "bias").unwrap().clone();
    for &(t, v) in bias {
        m.params[spec.offset + t.0 as usize] = v;
    }
    m
}

/// Brute force over every completion of at most `budget` tokens.
fn brute_chance(lang: Language, metric: Metric, cutoff: usize) -> f64 {
    let support = Support::LettersEos.tokens(lang);
    let ps = build_test_prompts(lang, 0);
    let prompts = if metric.is_ood() { &ps.ood } else { &ps.id };
    let share = 1.0 / support.len() as f64;
    let mut total = 0.0;
    for p in prompts {
        let budget = cutoff - p.len();
        let mut frontier: Vec<Vec<Token>> = vec![vec![]];
        for depth in 1..=budget {
            let mut next = Vec::new();
            for c in &frontier {
                for &t in &support {
                    let mut c = c.clone();
                    c.push(t);
                    if t == Token::EOS {
                        let (r1, r2) = judge(lang, p, &c, metric.is_ood()).unwrap();
                        let ok = if metric.rule() == Rule::R1 { r1 } else { r2 };
                        if ok {
                            total += share.powi(depth as i32);
                        }
                    } else {
                        next.push(c);
                    }
                }
            }
            frontier = next;
        }
    }
    total / prompts.len() as f64
}

#[test]
fn greedy_ties_pick_eos() {
    let m = bias_model(Language::L3, &[]);
    let p = build_test_prompts(Language::L3, 0).id[0].clone();
    assert_eq!(decode_greedy(&m, &p, 300).unwrap(), vec![Token::EOS]);
    assert_eq!(argmax_no_sos(&[9.0, 1.0, 1.0, 3.0, 3.0]), Token(3));
}

#[test]
fn decoding_respects_cutoff_and_sos() {
    let m = bias_model(Language::L3, &[(Token(3), 5.0)]);
    let p = build_test_prompts(Language::L3, 0).id[0].clone();
    let out = decode_greedy(&m, &p, 20).unwrap();
    assert_eq!(p.len() + out.len(), 20);
    assert!(out.iter().all(|&t| t == Token(3)));
    assert!(decode_greedy(&m, &p[1..], 20).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(decode_sample(&m, &p, 20, 0.0, &mut rng).is_err());
}

#[test]
fn sampling_matches_softmax() {
    let logits = [5.0, 0.0, (2.0f64).ln(), (3.0f64).ln()];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 60_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[sample_no_sos(&logits, 1.0, &mut rng).0 as usize] += 1;
    }
    assert_eq!(counts[0], 0);
    let expected = [0.0, 1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
    let chi2: f64 = (1..4)
        .map(|i| {
            let e = expected[i] * n as f64;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    // 2 degrees of freedom, p = 0.001
    assert!(chi2 < 13.8, "chi2 {chi2}");
}

#[test]
fn eos_only_model_on_l2() {
    let m = bias_model(Language::L2, &[(Token::EOS, 5.0)]);
    let ps = build_test_prompts(Language::L2, 0);
    let r = evaluate(&m, &ps, Decoding::Greedy, DEFAULT_CUTOFF, None).unwrap();
    assert_eq!(r.accuracies.id_r2, Some(1.0));
    assert_eq!(r.id_terminated, ps.id.len());
    assert!(!r.flagged);
    let even = ps
        .id
        .iter()
        .filter(|p| p.iter().filter(|&&t| t == Token(3)).count() % 2 == 0)
        .count();
    assert_eq!(r.accuracies.id_r1, Some(even as f64 / ps.id.len() as f64));
}

#[test]
fn never_terminating_model_is_flagged() {
    let m = bias_model(Language::L1, &[(Token(4), 5.0)]);
    let ps = build_test_prompts(Language::L1, 0);
    let r = evaluate(&m, &ps, Decoding::Greedy, 16, None).unwrap();
    assert!(r.flagged);
    assert_eq!(r.id_terminated, 0);
    assert_eq!(r.accuracies, Accuracies::default());
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let m = bias_model(Language::L3, &[]);
    let ps = build_test_prompts(Language::L4, 0);
    assert!(matches!(
        evaluate(&m, &ps, Decoding::Greedy, 30, None),
        Err(Error::Shape(_))
    ));
}

#[test]
fn judge_requires_eos() {
    let p = prompt_of_letters(&[4, 3]);
    assert_eq!(judge(Language::L1, &p, &[Token(3)], false), None);
    assert_eq!(judge(Language::L1, &p, &[Token(3), Token::EOS], false), Some((true, true)));
    assert_eq!(judge(Language::L1, &p, &[Token::PAD, Token::EOS], false), Some((false, false)));
}

fn prompt_of_letters(ids: &[u8]) -> Vec<Token> {
    let body: Vec<Token> = ids.iter().map(|&i| Token(i)).collect();
    token::prompt_of(&body)
}

#[test]
fn l1_exact_chance_levels() {
    let s = Support::LettersEos;
    let id_r1 = chance_exact(Language::L1, Metric::IdR1, s, 300).unwrap();
    let ood_r1 = chance_exact(Language::L1, Metric::OodR1, s, 300).unwrap();
    let ood_r2 = chance_exact(Language::L1, Metric::OodR2Completion, s, 300).unwrap();
    assert!((id_r1 - 0.5).abs() < 1e-9, "{id_r1}");
    assert!((ood_r1 - 0.5).abs() < 1e-9, "{ood_r1}");
    assert!((ood_r2 - 1.0 / 3.0).abs() < 1e-12, "{ood_r2}");
    let with_pad = chance_exact(Language::L1, Metric::OodR2Completion, Support::LettersEosPad, 300).unwrap();
    // b first (1/4), then EOS before PAD (1/2)
    assert!((with_pad - 0.125).abs() < 1e-12, "{with_pad}");
}

#[test]
fn l3_ood_r1_chance() {
    let v = chance_exact(Language::L3, Metric::OodR1, Support::LettersEos, 300).unwrap();
    assert!((v - 0.154).abs() <= 0.002, "{v}");
}

#[test]
fn exact_agrees_with_brute_force() {
    for lang in [Language::L1, Language::L2, Language::L3, Language::L5, Language::L6] {
        for metric in Metric::ALL {
            let prompt_len = {
                let ps = build_test_prompts(lang, 0);
                if metric.is_ood() { ps.ood[0].len() } else { ps.id[0].len() }
            };
            let cutoff = prompt_len + 5;
            let exact = chance_exact(lang, metric, Support::LettersEos, cutoff).unwrap();
            let brute = brute_chance(lang, metric, cutoff);
            assert!((exact - brute).abs() < 1e-12, "{lang} {metric}: {exact} vs {brute}");
        }
    }
}

#[test]
fn exact_agrees_with_monte_carlo() {
    for lang in [Language::L1, Language::L2, Language::L3] {
        for metric in Metric::ALL {
            let exact = chance_exact(lang, metric, Support::LettersEos, 300).unwrap();
            let (mc, se) = chance_mc(lang, metric, Support::LettersEos, 300, 40_000, 3).unwrap();
            assert!((exact - mc).abs() <= 4.0 * se.max(1e-3), "{lang} {metric}: {exact} vs {mc} ± {se}");
        }
    }
}

#[test]
fn truncation_is_monotone() {
    for lang in [Language::L2, Language::L3, Language::L6] {
        for metric in Metric::ALL {
            let mut prev = 0.0;
            for cutoff in (10..40).step_by(3) {
                let v = chance_exact(lang, metric, Support::LettersEos, cutoff).unwrap();
                assert!(v + 1e-15 >= prev, "{lang} {metric} at {cutoff}");
                prev = v;
            }
        }
    }
}

#[test]
fn l4_has_no_exact_route() {
    assert!(matches!(
        chance_exact(Language::L4, Metric::IdR1, Support::LettersEos, 300),
        Err(Error::Contract(_))
    ));
    assert_eq!(default_method(Language::L4, 10, 0).label(), "monte_carlo");
    assert_eq!(default_method(Language::L3, 10, 0).label(), "exact_dp");
}

#[test]
fn chance_table_csv() {
    let rows = chance_table(&[Language::L1, Language::L3], Support::LettersEos, 300, 100, 0).unwrap();
    assert_eq!(rows.len(), 7);
    let mut buf = Vec::new();
    write_chance_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("language,metric,method,value,stderr"));
    assert!(text.contains("L1,ood_r2_completion,exact_dp,0.333333,"));
    assert_eq!(lines.count(), 7);
}

fn record(epoch: usize, loss: Option<f64>, acc: Option<Accuracies>) -> TraceRecord {
    TraceRecord {
        epoch,
        train_loss: 1.0,
        test_loss: loss,
        accuracies: acc,
        masses: None,
    }
}

#[test]
fn best_is_taken_per_metric() {
    assert!(aggregate_best(&TrainTrace::default()).is_err());
    let a = Accuracies {
        id_r1: Some(0.9),
        id_r2: Some(0.1),
        ood_r1: None,
        ood_r2_completion: Some(0.5),
    };
    let b = Accuracies {
        id_r1: Some(0.2),
        id_r2: Some(0.7),
        ood_r1: Some(0.3),
        ood_r2_completion: None,
    };
    let trace = TrainTrace {
        records: vec![record(0, Some(2.0), Some(a)), record(10, Some(1.5), Some(b)), record(20, None, None)],
        epochs_run: 20,
        stopped_early: false,
    };
    let best = aggregate_best(&trace).unwrap();
    assert_eq!(best.test_loss, Some(1.5));
    assert_eq!(
        best.accuracies,
        Accuracies {
            id_r1: Some(0.9),
            id_r2: Some(0.7),
            ood_r1: Some(0.3),
            ood_r2_completion: Some(0.5),
        }
    );
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
    assert!("id_r3".parse::<Metric>().is_err());
}
