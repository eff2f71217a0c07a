use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Vocab, PREFIX_BASE};
use crate::numerics::{grad_check_subset, Gradients};

const V: usize = 24;

fn tiny(hidden: usize) -> Model {
    let mut cfg = ModelConfig::tiny(V);
    cfg.hidden = hidden;
    Model::new(cfg, 3).unwrap()
}

fn regular(i: usize) -> usize {
    PREFIX_BASE + 2 + (i % (V - PREFIX_BASE - 2))
}

fn random_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::random_uniform(rows, cols, 1.0, rng)
}

#[test]
fn key_block_shape_and_determinism() {
    let m = tiny(8);
    let q = [regular(0), regular(3), EOS];
    let a = m.encode_key(&q).unwrap();
    assert_eq!(a.block.shape(), (2, 8));
    assert_eq!(a, m.encode_key(&q).unwrap());
    let v = m.encode_value(&q).unwrap();
    assert_eq!(v.block.shape(), (2, 8));
    assert_eq!(v, m.encode_value(&q).unwrap());
}

#[test]
fn over_length_input_is_rejected() {
    let m = tiny(8);
    let long = vec![regular(1); m.config().max_input_len];
    assert!(matches!(m.encode_key(&long), Err(Error::Input(_))));
    assert!(matches!(m.encode_value(&long), Err(Error::Input(_))));
    assert!(matches!(m.encode_key(&[]), Err(Error::Input(_))));
}

#[test]
fn single_token_change_changes_key_with_no_collisions() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut questions = HashSet::new();
    while questions.len() < 1000 {
        let len = rng.gen_range(2..6);
        let q: Vec<usize> = (0..len).map(|_| regular(rng.gen_range(0..100))).collect();
        questions.insert(q);
    }
    let mut seen = HashSet::new();
    for q in &questions {
        let k = m.encode_key(q).unwrap();
        let bits: Vec<u64> = k.block.data().iter().map(|v| v.to_bits()).collect();
        assert!(seen.insert(bits), "key collision for {q:?}");
    }
}

#[test]
fn value_differs_from_key_when_taps_differ() {
    let m = tiny(8);
    assert_ne!(m.config().key_layer, m.config().value_layer);
    let text = [regular(2), regular(5), EOS];
    assert_ne!(m.encode_key(&text).unwrap().block, m.encode_value(&text).unwrap().block);
}

#[test]
fn query_matches_key_bit_for_bit() {
    let m = tiny(16);
    let text = [regular(4), regular(1), regular(7), EOS];
    let (q, state) = m.encode_query(&text).unwrap();
    assert_eq!(q.block, m.encode_key(&text).unwrap().block);
    assert_eq!(q.flat, flatten(&q.block));
    assert_eq!(state.rows(), text.len() + m.prefix_len());
}

#[test]
fn flatten_and_similarity_examples() {
    let block = Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
    assert_eq!(flatten(&block), vec![2.0, 2.0]);

    let q = Query {
        block: Matrix::zeros(2, 2),
        flat: vec![1.0, 2.0],
    };
    assert_eq!(similarity(&q, &[3.0, 4.0]).unwrap(), 11.0);
    assert_eq!(similarity(&q, &q.flat.clone()).unwrap(), 5.0);
    assert_eq!(similarity(&q, &[0.0, 0.0]).unwrap(), 0.0);
    assert!(matches!(similarity(&q, &[1.0]), Err(Error::Input(_))));
}

proptest! {
    #[test]
    fn flatten_is_linear(
        a in proptest::collection::vec(-10.0f64..10.0, 6),
        b in proptest::collection::vec(-10.0f64..10.0, 6),
        alpha in -5.0f64..5.0,
        beta in -5.0f64..5.0,
    ) {
        let ma = Matrix::from_vec(2, 3, a).unwrap();
        let mb = Matrix::from_vec(2, 3, b).unwrap();
        let combo = ma.scale(alpha).add(&mb.scale(beta));
        let lhs = flatten(&combo);
        let (fa, fb) = (flatten(&ma), flatten(&mb));
        for i in 0..3 {
            prop_assert!((lhs[i] - (alpha * fa[i] + beta * fb[i])).abs() <= 1e-12);
        }
    }
}

#[test]
fn integrate_keys_shapes_and_degenerate_case() {
    let mut cfg = ModelConfig::tiny(V);
    cfg.top_k = 4;
    let m = Model::new(cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = Tape::new(m.params());
    let hidden = t.leaf(random_block(&mut rng, 5, 16));
    let keys: Vec<Var> = (0..4).map(|_| t.leaf(random_block(&mut rng, 2, 16))).collect();
    let out = m
        .integrate_keys_var(&mut t, hidden, &keys, &[4.0, 3.0, 2.0, 1.0])
        .unwrap();
    assert_eq!(t.value(out).shape(), (13, 16));
    assert_eq!(t.value(out).row(12), t.value(hidden).row(4));

    let same = m.integrate_keys_var(&mut t, hidden, &[], &[]).unwrap();
    assert_eq!(t.value(same), t.value(hidden));

    let err = m
        .integrate_keys_var(&mut t, hidden, &keys, &[1.0, 3.0, 2.0, 0.0])
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn rank_embeddings_distinguish_slots() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut t = Tape::new(m.params());
    let hidden = t.leaf(random_block(&mut rng, 3, 16));
    let a = t.leaf(random_block(&mut rng, 2, 16));
    let b = t.leaf(random_block(&mut rng, 2, 16));
    let ab = m.integrate_keys_var(&mut t, hidden, &[a, b], &[1.0, 1.0]).unwrap();
    let ba = m.integrate_keys_var(&mut t, hidden, &[b, a], &[1.0, 1.0]).unwrap();
    assert_ne!(t.value(ab), t.value(ba));
}

#[test]
fn integrate_values_locality() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut t = Tape::new(m.params());
    let hidden = t.leaf(random_block(&mut rng, 7, 16));
    let zero = t.leaf(Matrix::zeros(2, 16));
    let same = m.integrate_values_var(&mut t, hidden, &[zero, zero]).unwrap();
    assert_eq!(t.value(same), t.value(hidden));

    let v0 = t.leaf(random_block(&mut rng, 2, 16));
    let out = m.integrate_values_var(&mut t, hidden, &[v0, zero]).unwrap();
    let (before, after) = (t.value(hidden), t.value(out));
    for r in 0..7 {
        if r < 2 {
            assert_ne!(before.row(r), after.row(r));
        } else {
            assert_eq!(before.row(r), after.row(r));
        }
    }

    let too_many: Vec<Var> = (0..4).map(|_| zero).collect();
    assert!(matches!(
        m.integrate_values_var(&mut t, hidden, &too_many),
        Err(Error::Contract(_))
    ));
}

#[test]
fn value_addition_commutes_with_paired_slot_swap() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut t = Tape::new(m.params());
    let slot_a = random_block(&mut rng, 2, 16);
    let slot_b = random_block(&mut rng, 2, 16);
    let rest = random_block(&mut rng, 3, 16);
    let stack = |parts: [&Matrix; 3]| {
        let rows: Vec<Vec<f64>> = parts
            .iter()
            .flat_map(|m| (0..m.rows()).map(|r| m.row(r).to_vec()))
            .collect();
        Matrix::from_rows(&rows).unwrap()
    };
    let h_ab = t.leaf(stack([&slot_a, &slot_b, &rest]));
    let h_ba = t.leaf(stack([&slot_b, &slot_a, &rest]));
    let va = t.leaf(random_block(&mut rng, 2, 16));
    let vb = t.leaf(random_block(&mut rng, 2, 16));
    let out_ab = m.integrate_values_var(&mut t, h_ab, &[va, vb]).unwrap();
    let out_ba = m.integrate_values_var(&mut t, h_ba, &[vb, va]).unwrap();
    let (x, y) = (t.value(out_ab), t.value(out_ba));
    for r in 0..2 {
        assert_eq!(x.row(r), y.row(r + 2));
        assert_eq!(x.row(r + 2), y.row(r));
    }
    for r in 4..7 {
        assert_eq!(x.row(r), y.row(r));
    }
}

fn retrieved(rng: &mut ChaCha8Rng, m: &Model, k: usize) -> Vec<Retrieved> {
    (0..k)
        .map(|i| Retrieved {
            key: KeyEmbedding {
                block: random_block(rng, m.prefix_len(), m.hidden()),
            },
            value: ValueEmbedding {
                block: random_block(rng, m.prefix_len(), m.hidden()),
            },
            score: (k - i) as f64,
        })
        .collect()
}

#[test]
fn forward_logit_shape_and_sequence_growth() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let r = retrieved(&mut rng, &m, 2);
    let input = [regular(1), regular(2), EOS];
    let target = [regular(3), regular(4), EOS];
    let logits = m.forward(&input, &target, &r).unwrap();
    assert_eq!(logits.shape(), (3, V));

    let mut t = Tape::new(m.params());
    let rv = m.retrieved_leaves(&mut t, &r).unwrap();
    let enc = m
        .encode_with_memory_var(&mut t, &input, &rv, m.config().taps())
        .unwrap();
    let n = input.len() + m.prefix_len();
    assert_eq!(t.value(enc.output).rows(), n + m.prefix_len() * 2);
}

#[test]
fn no_retrieval_is_a_plain_encoder_decoder() {
    let m = tiny(16);
    let input = [regular(5), regular(6), EOS];
    let target = [regular(7), EOS];
    let with_memory_path = m.forward(&input, &target, &[]).unwrap();

    let mut t = Tape::new(m.params());
    let ids = m.prefixed(&input).unwrap();
    let x = m.embed_var(&mut t, &ids);
    let enc = m.encoder_layers_var(&mut t, x, 0..m.config().encoder_layers);
    let dec_in = m.teacher_input(&target).unwrap();
    let logits = m.decoder_logits_var(&mut t, enc, &dec_in);
    assert_eq!(t.value(logits), &with_memory_path);
}

#[test]
fn gradient_reaches_retrieved_blocks() {
    let m = tiny(16);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let r = retrieved(&mut rng, &m, 2);
    let mut t = Tape::new(m.params());
    let rv = m.retrieved_leaves(&mut t, &r).unwrap();
    let out = m
        .forward_var(&mut t, &[regular(1), EOS], &[regular(2), EOS], &rv)
        .unwrap();
    let loss = t.cross_entropy(out.logits, &[regular(2), EOS]);
    let grads = t.backward(loss);
    let nonzero = |v: Var| grads.var(v).is_some_and(|g| g.frobenius_norm() > 0.0);
    assert!(rv.iter().any(|r| nonzero(r.key)));
    assert!(rv.iter().any(|r| nonzero(r.value)));
}

#[test]
fn greedy_decode_stops_on_forced_eos_and_is_deterministic() {
    let mut m = tiny(16);
    let input = [regular(1), regular(2), EOS];
    let first = m.greedy_decode(&input, &[], 5).unwrap();
    assert_eq!(first, m.greedy_decode(&input, &[], 5).unwrap());
    assert!(first.len() <= 5);

    let bias = m.params().id("out.b").unwrap();
    m.params_mut().get_mut(bias).set(0, EOS, 1e6);
    assert!(m.greedy_decode(&input, &[], 5).unwrap().is_empty());
    assert!(m.greedy_decode(&input, &[], 0).is_err());
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn forward_gradient_check_on_selected_parameters() {
    let mut cfg = ModelConfig::tiny(V);
    cfg.top_k = 2;
    let mut model = Model::new(cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let r = retrieved(&mut rng, &model, 2);
    let input = [regular(1), regular(8), EOS];
    let target = [regular(2), regular(9), EOS];
    let names = [
        "key_conv.w_prev",
        "rank_emb",
        "enc.1.attn.wq",
        "dec.0.cross_attn.wv",
        "out.b",
    ];
    let ids: Vec<_> = names.iter().map(|n| model.params().id(n).unwrap()).collect();
    // `_var` methods only read weights through the tape, so a clone of the
    // model can drive the perturbed store.
    let m = model.clone();
    let report = grad_check_subset(model.params_mut(), &ids, 1e-5, 1e-4, |p| {
        let mut t = Tape::new(p);
        let rv = m.retrieved_leaves(&mut t, &r)?;
        let out = m.forward_var(&mut t, &input, &target, &rv)?;
        let loss = t.cross_entropy(out.logits, &target);
        let g: Gradients = t.backward(loss);
        Ok((t.scalar(loss), g))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn checkpoint_round_trip_and_bad_magic() {
    let m = tiny(8);
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build(&[words.join(" ")], V, 2).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &m, Some(&vocab)).unwrap();
    assert_eq!(&bytes[..4], b"EMAT");
    let (back, v) = read_checkpoint(&mut bytes.as_slice()).unwrap();
    assert_eq!(back.config(), m.config());
    for (id, name, value) in m.params().iter() {
        assert_eq!(back.params().get(id), value, "{name}");
    }
    assert_eq!(v.unwrap().tokens().len(), vocab.len());

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(matches!(
        read_checkpoint(&mut corrupt.as_slice()),
        Err(Error::Format(_))
    ));
    let truncated = &bytes[..bytes.len() / 2];
    assert!(matches!(read_checkpoint(&mut &truncated[..]), Err(Error::Format(_))));
}
