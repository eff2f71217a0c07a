//! Parameter layout and the encoder/decoder building blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::numerics::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayer {
    attn_norm: Norm,
    attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayer {
    self_norm: Norm,
    self_attn: Attention,
    cross_norm: Norm,
    cross_attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct KeyConv {
    /// Taps for rows t-1, t, t+1.
    pub(crate) w: [ParamId; 3],
    pub(crate) b: ParamId,
}

/// Ids of every parameter, grouped by component.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub(crate) tok_emb: ParamId,
    pub(crate) enc_pos: ParamId,
    pub(crate) dec_pos: ParamId,
    pub(crate) encoder: Vec<EncoderLayer>,
    pub(crate) key_conv: KeyConv,
    pub(crate) rank_emb: ParamId,
    pub(crate) memory_norm: Norm,
    pub(crate) decoder: Vec<DecoderLayer>,
    pub(crate) final_norm: Norm,
    pub(crate) out_w: ParamId,
    pub(crate) out_b: ParamId,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let m = Matrix::random_uniform(rows, cols, bound, &mut self.rng);
        self.store.add(name, m)
    }

    fn table(&mut self, name: String, rows: usize, hidden: usize) -> ParamId {
        let bound = 1.0 / (hidden as f64).sqrt();
        let m = Matrix::random_uniform(rows, hidden, bound, &mut self.rng);
        self.store.add(name, m)
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.store.add(name, Matrix::zeros(rows, cols))
    }

    fn norm(&mut self, name: &str, hidden: usize) -> Norm {
        Norm {
            gain: self.store.add(format!("{name}.gain"), Matrix::filled(1, hidden, 1.0)),
            bias: self.zeros(format!("{name}.bias"), 1, hidden),
        }
    }

    fn attention(&mut self, name: &str, hidden: usize) -> Attention {
        Attention {
            wq: self.weight(format!("{name}.wq"), hidden, hidden),
            wk: self.weight(format!("{name}.wk"), hidden, hidden),
            wv: self.weight(format!("{name}.wv"), hidden, hidden),
            wo: self.weight(format!("{name}.wo"), hidden, hidden),
        }
    }

    fn feed_forward(&mut self, name: &str, hidden: usize, inner: usize) -> FeedForward {
        FeedForward {
            w1: self.weight(format!("{name}.w1"), hidden, inner),
            b1: self.zeros(format!("{name}.b1"), 1, inner),
            w2: self.weight(format!("{name}.w2"), inner, hidden),
            b2: self.zeros(format!("{name}.b2"), 1, hidden),
        }
    }
}

impl Layout {
    /// Registers every parameter with seeded uniform initialization.
    pub(crate) fn init(cfg: &ModelConfig, seed: u64) -> (Layout, ParamStore) {
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let h = cfg.hidden;
        let tok_emb = init.table("tok_emb".into(), cfg.vocab_size, h);
        let enc_pos = init.table("enc_pos".into(), cfg.max_input_len, h);
        let dec_pos = init.table("dec_pos".into(), cfg.max_target_len, h);
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer {
                attn_norm: init.norm(&format!("enc.{i}.attn_norm"), h),
                attn: init.attention(&format!("enc.{i}.attn"), h),
                ff_norm: init.norm(&format!("enc.{i}.ff_norm"), h),
                ff: init.feed_forward(&format!("enc.{i}.ff"), h, cfg.ff_hidden),
            })
            .collect();
        let key_conv = KeyConv {
            w: [
                init.weight("key_conv.w_prev".into(), h, h),
                init.weight("key_conv.w_center".into(), h, h),
                init.weight("key_conv.w_next".into(), h, h),
            ],
            b: init.zeros("key_conv.b".into(), 1, h),
        };
        let rank_emb = init.table("rank_emb".into(), cfg.top_k.max(1), h);
        let memory_norm = init.norm("memory_norm", h);
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer {
                self_norm: init.norm(&format!("dec.{i}.self_norm"), h),
                self_attn: init.attention(&format!("dec.{i}.self_attn"), h),
                cross_norm: init.norm(&format!("dec.{i}.cross_norm"), h),
                cross_attn: init.attention(&format!("dec.{i}.cross_attn"), h),
                ff_norm: init.norm(&format!("dec.{i}.ff_norm"), h),
                ff: init.feed_forward(&format!("dec.{i}.ff"), h, cfg.ff_hidden),
            })
            .collect();
        let final_norm = init.norm("final_norm", h);
        let out_w = init.weight("out.w".into(), h, cfg.vocab_size);
        let out_b = init.zeros("out.b".into(), 1, cfg.vocab_size);
        (
            Layout {
                tok_emb,
                enc_pos,
                dec_pos,
                encoder,
                key_conv,
                rank_emb,
                memory_norm,
                decoder,
                final_norm,
                out_w,
                out_b,
            },
            store,
        )
    }
}

pub(crate) fn norm(t: &mut Tape, n: Norm, x: Var) -> Var {
    let (g, b) = (t.param(n.gain), t.param(n.bias));
    t.layer_norm(x, g, b)
}

pub(crate) fn attention(t: &mut Tape, a: Attention, heads: usize, query: Var, context: Var, causal: bool) -> Var {
    let (wq, wk, wv, wo) = (t.param(a.wq), t.param(a.wk), t.param(a.wv), t.param(a.wo));
    let q = t.matmul(query, wq);
    let k = t.matmul(context, wk);
    let v = t.matmul(context, wv);
    let hidden = t.value(q).cols();
    let dh = hidden / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                t.slice_cols(q, head * dh, dh),
                t.slice_cols(k, head * dh, dh),
                t.slice_cols(v, head * dh, dh),
            )
        };
        let scores = t.matmul_t(qh, kh);
        let scores = t.scale(scores, scale);
        let weights = if causal {
            t.causal_softmax_rows(scores)
        } else {
            t.softmax_rows(scores)
        };
        outs.push(t.matmul(weights, vh));
    }
    let joined = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
    t.matmul(joined, wo)
}

pub(crate) fn feed_forward(t: &mut Tape, f: FeedForward, x: Var) -> Var {
    let (w1, b1, w2, b2) = (t.param(f.w1), t.param(f.b1), t.param(f.w2), t.param(f.b2));
    let h = t.matmul(x, w1);
    let h = t.add_row(h, b1);
    let h = t.gelu(h);
    let o = t.matmul(h, w2);
    t.add_row(o, b2)
}

/// Pre-norm encoder block.
pub(crate) fn encoder_layer(t: &mut Tape, layer: &EncoderLayer, heads: usize, x: Var) -> Var {
    let n = norm(t, layer.attn_norm, x);
    let a = attention(t, layer.attn, heads, n, n, false);
    let x = t.add(x, a);
    let n = norm(t, layer.ff_norm, x);
    let f = feed_forward(t, layer.ff, n);
    t.add(x, f)
}

/// Pre-norm decoder block with causal self-attention and cross-attention.
pub(crate) fn decoder_layer(t: &mut Tape, layer: &DecoderLayer, heads: usize, x: Var, memory: Var) -> Var {
    let n = norm(t, layer.self_norm, x);
    let a = attention(t, layer.self_attn, heads, n, n, true);
    let x = t.add(x, a);
    let n = norm(t, layer.cross_norm, x);
    let c = attention(t, layer.cross_attn, heads, n, memory, false);
    let x = t.add(x, c);
    let n = norm(t, layer.ff_norm, x);
    let f = feed_forward(t, layer.ff, n);
    t.add(x, f)
}
