//! Layers built on the autodiff tape.

use rand::Rng;

use crate::autodiff::{AttentionLayout, Graph, Matrix, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, inp: usize, out: usize) -> Self {
        let weight = store.add_xavier(format!("{name}.w"), inp, out, rng);
        let bias = Some(store.add(format!("{name}.b"), Matrix::zeros(1, out)));
        Self { weight, bias }
    }

    pub fn without_bias<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        inp: usize,
        out: usize,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.w"), inp, out, rng);
        Self { weight, bias: None }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, width, 1.0)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize, heads: usize) -> Self {
        assert!(width % heads == 0, "model width {width} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, rng, &format!("{name}.q"), width, width),
            key: Linear::new(store, rng, &format!("{name}.k"), width, width),
            value: Linear::new(store, rng, &format!("{name}.v"), width, width),
            out: Linear::new(store, rng, &format!("{name}.o"), width, width),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, queries: Var, memory: Var, layout: AttentionLayout) -> Var {
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, memory);
        let v = self.value.forward(g, memory);
        let o = g.attention(q, k, v, self.heads, layout);
        self.out.forward(g, o)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, width: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(store, rng, &format!("{name}.up"), width, hidden),
            down: Linear::new(store, rng, &format!("{name}.down"), hidden, width),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Post-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), width, heads),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), width, ff_width),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, layout: AttentionLayout) -> Var {
        let a = self.attn.forward(g, x, x, layout);
        let x = g.add(x, a);
        let x = self.norm1.forward(g, x);
        let f = self.ff.forward(g, x);
        let x = g.add(x, f);
        self.norm2.forward(g, x)
    }
}

/// Post-norm decoder block: self-attention, cross-attention to `memory`,
/// feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

impl DecoderBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
    ) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, rng, &format!("{name}.self"), width, heads),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            cross_attn: MultiHeadAttention::new(store, rng, &format!("{name}.cross"), width, heads),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            ff: FeedForward::new(store, rng, &format!("{name}.ff"), width, ff_width),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), width),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var) -> Var {
        let a = self.self_attn.forward(g, x, x, AttentionLayout::Dense);
        let x = g.add(x, a);
        let x = self.norm1.forward(g, x);
        let c = self.cross_attn.forward(g, x, memory, AttentionLayout::Dense);
        let x = g.add(x, c);
        let x = self.norm2.forward(g, x);
        let f = self.ff.forward(g, x);
        let x = g.add(x, f);
        self.norm3.forward(g, x)
    }
}

/// Gated recurrent unit layer (reset/update/candidate gate order).
#[derive(Debug, Clone)]
pub struct GruLayer {
    input: Linear,
    hidden: Linear,
    width: usize,
}

impl GruLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, inp: usize, width: usize) -> Self {
        Self {
            input: Linear::new(store, rng, &format!("{name}.x"), inp, 3 * width),
            hidden: Linear::new(store, rng, &format!("{name}.h"), width, 3 * width),
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Runs over the rows of `xs` (`n × in`) from a zero state; returns the
    /// stacked hidden states `n × width`.
    pub fn forward(&self, g: &mut Graph<'_>, xs: Var) -> Var {
        let n = g.value(xs).rows();
        let w = self.width;
        let projected = self.input.forward(g, xs);
        let mut state = g.constant(Matrix::zeros(1, w));
        let mut outputs = Vec::with_capacity(n);
        for i in 0..n {
            let xp = g.slice_rows(projected, i, 1);
            let hp = self.hidden.forward(g, state);
            let (xr, hr) = (g.slice_cols(xp, 0, w), g.slice_cols(hp, 0, w));
            let (xz, hz) = (g.slice_cols(xp, w, w), g.slice_cols(hp, w, w));
            let (xn, hn) = (g.slice_cols(xp, 2 * w, w), g.slice_cols(hp, 2 * w, w));
            let r = g.add(xr, hr);
            let r = g.sigmoid(r);
            let z = g.add(xz, hz);
            let z = g.sigmoid(z);
            let gated = g.mul(r, hn);
            let cand = g.add(xn, gated);
            let cand = g.tanh(cand);
            let keep = g.affine(z, -1.0, 1.0);
            let fresh = g.mul(keep, cand);
            let carried = g.mul(z, state);
            state = g.add(fresh, carried);
            outputs.push(state);
        }
        g.concat_rows(&outputs)
    }
}

/// Fixed sinusoidal position table, `len × width`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Matrix {
    let mut m = Matrix::zeros(len, width);
    for pos in 0..len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10_000f64.powf(2.0 * pair / width as f64);
            let angle = pos as f64 * freq;
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::gradient_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positions_start_with_sin_zero_cos_one() {
        let pe = sinusoidal_positions(4, 6);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, &mut rng, "gru", 3, 4);
        let xs = store.add_normal("xs", 5, 3, &mut rng);
        let build = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let x = g.param(xs);
            let h = gru.forward(&mut g, x);
            let loss = g.sum_squares(h);
            (g.backward(loss), g.scalar(loss))
        };
        let (grads, _) = build(&store);
        let err = gradient_relative_error(&store, |s| build(s).1, &grads, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn encoder_and_decoder_blocks_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let enc = EncoderBlock::new(&mut store, &mut rng, "enc", 4, 2, 6);
        let dec = DecoderBlock::new(&mut store, &mut rng, "dec", 4, 2, 6);
        let x = store.add_normal("x", 3, 4, &mut rng);
        let run = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let xv = g.param(x);
            let e = enc.forward(&mut g, xv, AttentionLayout::Dense);
            let mem = g.slice_rows(e, 0, 1);
            let d = dec.forward(&mut g, e, mem);
            let loss = g.sum_squares(d);
            (g.backward(loss), g.scalar(loss))
        };
        let (grads, _) = run(&store);
        let err = gradient_relative_error(&store, |s| run(s).1, &grads, 1e-5);
        assert!(err < 1e-5, "relative error {err}");
    }
}
