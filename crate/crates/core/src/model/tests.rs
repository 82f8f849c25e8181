use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::token::{completed, prompt_of};

fn tiny(arch: Architecture, dropout: f64) -> ModelConfig {
    match arch {
        Architecture::Linear => ModelConfig::Linear(LinearConfig { window: 4, bias: true }),
        Architecture::Lstm => ModelConfig::Lstm(LstmConfig {
            embedding: 3,
            hidden: 4,
            layers: 2,
            dropout,
        }),
        Architecture::Transformer => ModelConfig::Transformer(TransformerConfig {
            layers: 2,
            dim: 4,
            heads: 2,
            feedforward: 6,
            dropout,
            ln_eps: 6e-3,
            max_positions: 12,
        }),
    }
}

const ARCHS: [Architecture; 3] = [Architecture::Linear, Architecture::Lstm, Architecture::Transformer];

fn toy_batch() -> Batch {
    let t = |ids: &[u8]| ids.iter().map(|&i| Token(i)).collect::<Vec<_>>();
    Batch::from_seqs(&[t(&[0, 3, 3, 4, 4, 1]), t(&[0, 3, 4, 1]), t(&[0, 4, 3, 3, 1])]).unwrap()
}

/// Perturb init so that biases and norms are not at symmetric values.
fn jittered(arch: Architecture, dropout: f64, seed: u64) -> ArModel {
    let mut m = init_model(tiny(arch, dropout), 5, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in &mut m.params {
        *p += rng.gen_range(-0.3..0.3);
    }
    m
}

fn loss_at(m: &ArModel, batch: &Batch, seed: Option<u64>) -> f64 {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    m.batch_loss(batch, false, rng.as_mut(), None).unwrap().mean()
}

fn check_gradients(arch: Architecture, dropout: f64) {
    let mut m = jittered(arch, dropout, 1);
    let batch = toy_batch();
    let seed = (dropout > 0.0).then_some(77);
    let mut grad = vec![0.0; m.num_params()];
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    m.batch_loss(&batch, false, rng.as_mut(), Some(&mut grad)).unwrap();
    let mut pick = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let i = pick.gen_range(0..m.num_params());
        let orig = m.params[i];
        m.params[i] = orig + h;
        let up = loss_at(&m, &batch, seed);
        m.params[i] = orig - h;
        let down = loss_at(&m, &batch, seed);
        m.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "{arch} dropout {dropout}: relative error {worst:e}");
}

#[test]
fn gradients_match_finite_differences() {
    for arch in ARCHS {
        check_gradients(arch, 0.0);
    }
}

#[test]
fn gradients_match_with_fixed_dropout_masks() {
    check_gradients(Architecture::Lstm, 0.3);
    check_gradients(Architecture::Transformer, 0.2);
}

#[test]
fn session_agrees_with_batched_forward() {
    let batch = toy_batch();
    for arch in ARCHS {
        let m = jittered(arch, 0.0, 2);
        let logits = m.batch_logits(&batch).unwrap();
        for b in 0..batch.rows() {
            let mut s = m.session();
            for t in 0..batch.steps() {
                let step = s.push(batch.input(b, t)).unwrap();
                let r = b * batch.steps() + t;
                for (x, y) in step.iter().zip(&logits[r * 5..(r + 1) * 5]) {
                    assert!((x - y).abs() < 1e-10, "{arch}");
                }
            }
        }
    }
}

#[test]
fn causal_for_every_architecture() {
    for arch in ARCHS {
        let m = jittered(arch, 0.0, 4);
        let a = vec![Token(0), Token(3), Token(4), Token(3), Token(3), Token(1)];
        let mut b = a.clone();
        b[4] = Token(4);
        b[5] = Token(2);
        let la = m.batch_logits(&Batch::from_seqs(&[a]).unwrap()).unwrap();
        let lb = m.batch_logits(&Batch::from_seqs(&[b]).unwrap()).unwrap();
        // Positions 0..=3 only see the shared prefix.
        assert_eq!(&la[..4 * 5], &lb[..4 * 5], "{arch}");
        assert_ne!(&la[4 * 5..], &lb[4 * 5..], "{arch}");
    }
}

#[test]
fn logits_normalize() {
    for arch in ARCHS {
        let m = jittered(arch, 0.0, 5);
        let l = m.next_token_logits(&prompt_of(&[Token(3), Token(4)])).unwrap();
        assert_eq!(l.len(), 5);
        let p = ops::softmax(&l);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sequence_log_prob_matches_stepwise_and_ignores_padding() {
    for arch in ARCHS {
        let m = jittered(arch, 0.0, 6);
        let seq = completed(&[Token(3), Token(3), Token(4)]);
        let whole = m.sequence_log_prob(&seq).unwrap();
        let mut step = 0.0;
        for k in 1..seq.len() {
            let l = m.next_token_logits(&seq[..k]).unwrap();
            step += ops::log_softmax(&l)[seq[k].id()];
        }
        assert!((whole - step).abs() < 1e-10);
        let mut padded = seq.clone();
        padded.extend([Token::PAD, Token::PAD]);
        assert_eq!(m.sequence_log_prob(&padded).unwrap(), whole);
        let batch = m
            .sequence_log_probs(&[seq.clone(), completed(&[Token(4)]), padded])
            .unwrap();
        assert!((batch[0] - whole).abs() < 1e-10 && (batch[2] - whole).abs() < 1e-10);
        let longer = completed(&[Token(3), Token(3), Token(4), Token(4)]);
        let mut prefix_joint = longer[..4].to_vec();
        prefix_joint.push(Token::EOS);
        assert!(m.sequence_log_prob(&longer).unwrap() < 0.0);
        assert!(m.sequence_log_prob(&prefix_joint).unwrap() < 0.0);
    }
}

#[test]
fn uniform_model_scores_log_uniform() {
    let mut m = init_model(tiny(Architecture::Linear, 0.0), 7, 0).unwrap();
    m.params.fill(0.0);
    let seq = completed(&[Token(3); 8]);
    let lp = m.sequence_log_prob(&seq).unwrap();
    assert!((lp - 9.0 * (1.0f64 / 7.0).ln()).abs() < 1e-12);
}

#[test]
fn transformer_head_dim_and_config_errors() {
    let m = init_model(ModelConfig::default_for(Architecture::Transformer), 5, 0).unwrap();
    assert_eq!(m.param_specs()[0].shape, vec![5, 10]);
    let bad = ModelConfig::Transformer(TransformerConfig {
        heads: 3,
        ..TransformerConfig::default()
    });
    assert!(matches!(init_model(bad, 5, 0), Err(Error::Config(_))));
}

#[test]
fn linear_parameter_count() {
    let m = init_model(ModelConfig::default_for(Architecture::Linear), 5, 0).unwrap();
    assert_eq!(m.num_params(), 5 * 256 * 5 + 5);
}

#[test]
fn init_is_deterministic() {
    for arch in ARCHS {
        let a = init_model(ModelConfig::default_for(arch), 7, 9).unwrap();
        let b = init_model(ModelConfig::default_for(arch), 7, 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = init_model(ModelConfig::default_for(arch), 7, 10).unwrap();
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn initial_loss_is_near_log_vocab() {
    let seqs: Vec<_> = (1..6).map(|n| completed(&vec![Token(3); n])).collect();
    for arch in ARCHS {
        let m = init_model(ModelConfig::default_for(arch), 5, 1).unwrap();
        let l = mean_loss(&m, &seqs, 128, false).unwrap().mean();
        assert!((l - 5f64.ln()).abs() < 0.1, "{arch}: {l}");
    }
}

#[test]
fn prefix_checks() {
    let m = init_model(tiny(Architecture::Transformer, 0.0), 5, 0).unwrap();
    assert!(matches!(m.next_token_logits(&[Token(3)]), Err(Error::Contract(_))));
    let long = prompt_of(&[Token(3); 12]);
    assert!(matches!(m.next_token_logits(&long), Err(Error::Contract(_))));
    assert!(matches!(m.next_token_logits(&[Token(0), Token(6)]), Err(Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = std::env::temp_dir().join(format!("rulex-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for arch in ARCHS {
        let m = jittered(arch, 0.1, 7);
        let path = dir.join(format!("{arch}.ckpt"));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params, m.params);
        for _ in 0..100 {
            let n = rng.gen_range(0..8);
            let body: Vec<Token> = (0..n).map(|_| Token(rng.gen_range(3..5))).collect();
            let p = prompt_of(&body);
            let (x, y) = (m.next_token_logits(&p).unwrap(), back.next_token_logits(&p).unwrap());
            assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }
    let path = dir.join("corrupt.ckpt");
    std::fs::write(&path, b"rulex-checkpoint\n{\"format_version\":1").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    let good = dir.join("linear.ckpt");
    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { line: 3, .. })));
    let text = String::from_utf8_lossy(&std::fs::read(&good).unwrap()).replace("\"format_version\":1", "\"format_version\":9");
    std::fs::write(&path, text.as_bytes()).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { line: 2, .. })));
}

#[test]
fn overfits_two_words() {
    use crate::data::Dataset;
    use crate::Language;
    let data = Dataset {
        language: Language::L3,
        words: vec![vec![Token(3), Token(4)], vec![Token(3), Token(3), Token(4), Token(4)]],
        max_len: 4,
        seed: 0,
    };
    let cfg = TrainConfig {
        epochs: 1500,
        eval_every: 500,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let configs = [
        ModelConfig::Lstm(LstmConfig { dropout: 0.0, ..LstmConfig::default() }),
        ModelConfig::Transformer(TransformerConfig { dropout: 0.0, ..TransformerConfig::default() }),
    ];
    for config in configs {
        let arch = config.architecture();
        let mut m = init_model(config, 5, 0).unwrap();
        let trace = train(&mut m, &data, &cfg, |_, _| Ok(Control::Continue)).unwrap();
        assert_eq!(trace.records.len(), 4);
        let l = m.next_token_logits(&[Token(0), Token(3), Token(4)]).unwrap();
        let p = ops::softmax(&l);
        assert!(p[1] + p[3] > 0.99, "{arch}: {p:?}");
    }
}

#[test]
fn training_is_deterministic() {
    use crate::data::build_training_set;
    use crate::Language;
    let data = build_training_set(Language::L1, 20, 8, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        eval_every: 1,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = init_model(tiny(Architecture::Transformer, 0.1), 5, 0).unwrap();
        let t = train(&mut m, &data, &cfg, |_, _| Ok(Control::Continue)).unwrap();
        (t, m.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn hook_can_stop_training() {
    use crate::data::build_training_set;
    use crate::Language;
    let data = build_training_set(Language::L1, 10, 6, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let mut m = init_model(tiny(Architecture::Lstm, 0.0), 5, 0).unwrap();
    let trace = train(&mut m, &data, &cfg, |_, r| {
        Ok(if r.epoch >= 10 { Control::Stop } else { Control::Continue })
    })
    .unwrap();
    assert_eq!(trace.epochs_run, 10);
    assert!(trace.stopped_early);
    let epochs: Vec<_> = trace.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, [0, 5, 10]);
}

#[test]
fn divergence_rolls_back() {
    use crate::data::build_training_set;
    use crate::Language;
    let data = build_training_set(Language::L1, 10, 6, 1).unwrap();
    let mut m = init_model(tiny(Architecture::Linear, 0.0), 5, 0).unwrap();
    m.params[0] = f64::NAN;
    let before = m.params.clone();
    let err = train(&mut m, &data, &TrainConfig { epochs: 2, ..TrainConfig::default() }, |_, _| {
        Ok(Control::Continue)
    });
    match err {
        Err(Error::Diverged { epoch: 1, last_good: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(m.params[0].is_nan() && m.params[1..] == before[1..]);
}

#[test]
fn resumed_training_reproduces_the_tail() {
    use crate::data::build_training_set;
    use crate::Language;
    let data = build_training_set(Language::L1, 30, 8, 2).unwrap();
    let cfg = |epochs| TrainConfig {
        batch_size: 8,
        epochs,
        eval_every: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let fresh = || init_model(tiny(Architecture::Lstm, 0.3), 5, 4).unwrap();
    let mut whole = fresh();
    let (full, end) = train_from(&mut whole, &data, &cfg(6), None, |_, _| Ok(Control::Continue)).unwrap();

    let mut first = fresh();
    let (_, mid) = train_from(&mut first, &data, &cfg(3), None, |_, _| Ok(Control::Continue)).unwrap();
    let dir = std::env::temp_dir().join(format!("rulex-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("state.bin");
    save_train_state(&mid, &path).unwrap();
    let mid = load_train_state(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();

    let mut resumed = fresh();
    let (tail, end2) = train_from(&mut resumed, &data, &cfg(6), Some(&mid), |_, _| Ok(Control::Continue)).unwrap();
    let expected: Vec<_> = full.records.iter().filter(|r| r.epoch > 3).cloned().collect();
    assert_eq!(tail.records, expected);
    assert_eq!(resumed.params, whole.params);
    assert_eq!(end2, end);

    let other = build_training_set(Language::L1, 31, 8, 2).unwrap();
    assert!(matches!(
        train_from(&mut fresh(), &other, &cfg(6), Some(&mid), |_, _| Ok(Control::Continue)),
        Err(Error::Shape(_))
    ));
}
