use mimicry_core::embedder::{build_vocab, grad_check, train, EmbedderConfig, EncoderDecoderModel, Params};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn m(a: &Array2<f64>) -> M {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn mul(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn add(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

fn add_row(a: &M, bias: &M) -> M {
    a.iter().map(|x| x.iter().zip(&bias[0]).map(|(u, v)| u + v).collect()).collect()
}

fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn attention(xq: &M, xkv: &M, wq: &M, wk: &M, wv: &M) -> M {
    let d = wq[0].len() as f64;
    let q = mul(xq, wq);
    let k = mul(xkv, wk);
    let v = mul(xkv, wv);
    let s = mul(&q, &transpose(&k));
    let a: M = s
        .iter()
        .map(|r| softmax(&r.iter().map(|x| x / d.sqrt()).collect::<Vec<_>>()))
        .collect();
    mul(&a, &v)
}

fn ffn(x: &M, w1: &M, b1: &M, w2: &M, b2: &M) -> M {
    let u: M = add_row(&mul(x, w1), b1)
        .into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect();
    add(x, &add_row(&mul(&u, w2), b2))
}

/// Mean per-position cross-entropy, recomputed with plain loops.
fn oracle_loss(p: &Params, ids: &[usize]) -> f64 {
    let l = ids.len();
    let tok = m(&p.tok);
    let pos = m(&p.pos);
    let dpos = m(&p.dec_pos);
    let x: M = (0..l).map(|t| tok[ids[t]].iter().zip(&pos[t]).map(|(a, b)| a + b).collect()).collect();
    let h1 = add(&x, &mul(&attention(&x, &x, &m(&p.wq), &m(&p.wk), &m(&p.wv)), &m(&p.wo)));
    let enc = ffn(&h1, &m(&p.w1), &m(&p.b1), &m(&p.w2), &m(&p.b2));
    let d = enc[0].len();
    let z: Vec<f64> = (0..d).map(|j| enc.iter().map(|r| r[j]).sum::<f64>() / l as f64).collect();
    let d0: M = (0..l).map(|t| dpos[t].iter().zip(&z).map(|(a, b)| a + b).collect()).collect();
    let d1 = add(&d0, &mul(&attention(&d0, &enc, &m(&p.cq), &m(&p.ck), &m(&p.cv)), &m(&p.co)));
    let d2 = ffn(&d1, &m(&p.w3), &m(&p.b3), &m(&p.w4), &m(&p.b4));
    let logits = add_row(&mul(&d2, &m(&p.wout)), &m(&p.bout));
    let mut total = 0.0;
    for (t, &id) in ids.iter().enumerate() {
        total -= softmax(&logits[t])[id].ln();
    }
    total / l as f64
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn toy_corpus(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(8..=20);
            (0..len).map(|_| format!("VAR_{}", rng.gen_range(0..30))).collect()
        })
        .collect()
}

fn non_increasing(losses: &[f64]) -> bool {
    losses.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn loss_matches_independent_scorer() {
    let corpus = toy_corpus(6, 4);
    let cfg = EmbedderConfig {
        embed_dim: 12,
        hidden_dim: 20,
        epochs: 2,
        max_len: 30,
        seed: 1,
        ..EmbedderConfig::default()
    };
    let model = train(&corpus, &cfg).unwrap();
    for seq in corpus.iter().chain([&toks("unseen VAR_1 tokens")]) {
        let ids = model.vocab.encode(seq);
        let got = model.score(seq).unwrap();
        let want = oracle_loss(&model.params, &ids);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn memorizes_a_repeated_sequence() {
    let seq = toks("TYPE_1 VAR_1 = new TYPE_1 ( ) ; if ( VAR_1 >= INT_1 ) return ;");
    let corpus = vec![seq.clone(); 32];
    let model = train(&corpus, &EmbedderConfig::default()).unwrap();
    assert_eq!(model.reconstruction_accuracy(&corpus).unwrap(), 1.0);
    assert_eq!(model.reconstruct(&seq).unwrap(), seq);
    assert!(non_increasing(&model.epoch_loss), "{:?}", model.epoch_loss);
}

#[test]
fn reconstructs_two_sequences() {
    let a = toks("VAR_1 = VAR_2 + INT_1 ;");
    let b = toks("return METHOD_1 ( VAR_3 , STRING_1 ) ;");
    let corpus: Vec<Vec<String>> = (0..32).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
    let model = train(&corpus, &EmbedderConfig::default()).unwrap();
    assert!(model.reconstruction_accuracy(&corpus).unwrap() >= 0.95);
}

#[test]
fn fifty_sequence_corpus() {
    let corpus = toy_corpus(50, 1);
    let model = train(&corpus, &EmbedderConfig::default()).unwrap();
    assert_eq!(model.epoch_loss.len(), 10);
    assert!(non_increasing(&model.epoch_loss), "{:?}", model.epoch_loss);
    assert!(model.reconstruction_accuracy(&corpus).unwrap() >= 0.95);
}

#[test]
fn bit_identical_retraining() {
    let corpus = toy_corpus(5, 2);
    let cfg = EmbedderConfig {
        embed_dim: 16,
        hidden_dim: 16,
        epochs: 3,
        seed: 11,
        ..EmbedderConfig::default()
    };
    let a = train(&corpus, &cfg).unwrap();
    let b = train(&corpus, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.embed(&corpus[0]).unwrap(), b.embed(&corpus[0]).unwrap());
}

#[test]
fn embeddings_are_order_sensitive() {
    let corpus = toy_corpus(50, 3);
    let model = train(&corpus, &EmbedderConfig::default()).unwrap();
    let mut differ = 0;
    for seq in toy_corpus(20, 99) {
        let rev: Vec<String> = seq.iter().rev().cloned().collect();
        if seq != rev && model.embed(&seq).unwrap() != model.embed(&rev).unwrap() {
            differ += 1;
        }
    }
    assert!(differ >= 19, "{differ}");
}

#[test]
fn full_window_shape() {
    let corpus = vec![toks("a b c")];
    let cfg = EmbedderConfig {
        epochs: 1,
        ..EmbedderConfig::default()
    };
    let model = train(&corpus, &cfg).unwrap();
    let long: Vec<String> = (0..150).map(|i| format!("VAR_{}", i % 7)).collect();
    assert_eq!(model.embed(&long).unwrap().len(), 64);
    let empty: Vec<String> = Vec::new();
    assert!(grad_check(&model, &empty, 1e-6) < 1e-4);
}

#[test]
fn gradient_check_two_step_sizes() {
    let cfg = EmbedderConfig {
        embed_dim: 8,
        hidden_dim: 16,
        max_len: 16,
        epochs: 1,
        seed: 5,
        ..EmbedderConfig::default()
    };
    let model = train(&toy_corpus(3, 8), &cfg).unwrap();
    let sample = &toy_corpus(1, 8)[0][..10];
    for eps in [1e-5, 1e-6] {
        let err = grad_check(&model, sample, eps);
        assert!(err < 1e-4, "eps {eps}: {err}");
    }
}

#[test]
fn saved_model_embeds_identically() {
    let corpus = toy_corpus(4, 6);
    let cfg = EmbedderConfig {
        embed_dim: 8,
        hidden_dim: 8,
        epochs: 1,
        ..EmbedderConfig::default()
    };
    let model = train(&corpus, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("embed.model.bin");
    model.write_to(std::fs::File::create(&path).unwrap()).unwrap();
    let back = EncoderDecoderModel::read_from(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back.embed(&corpus[1]).unwrap(), model.embed(&corpus[1]).unwrap());
    assert_eq!(back.vocab, build_vocab(&corpus, cfg.vocab_size).unwrap());
}
