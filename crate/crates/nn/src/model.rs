//! The Dis-Co DiT denoiser network.
//!
//! Discrete tokens are embedded through a table (with an extra row for the
//! mask token ω), each continuous vector through its own linear projection.
//! Learned slot embeddings and a query embedding at `i_t` are added. Blocks
//! apply adaLN-Zero modulation from the time embedding, with separate
//! modulation for discrete and continuous slots, around full self-attention
//! and a pointwise feed-forward layer.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use igd_core::state::{ElementLayout, Token};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoDitConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub mlp_dim: usize,
    pub time_embed_in: usize,
    pub time_embed_out: usize,
    pub frequency: f64,
    /// Continuous frequency multiplier; `None` uses the largest per-round K.
    pub t_c: Option<f64>,
}

impl Default for DiscoDitConfig {
    fn default() -> Self {
        Self {
            n_blocks: 2,
            n_heads: 4,
            model_dim: 128,
            mlp_dim: 512,
            time_embed_in: 256,
            time_embed_out: 128,
            frequency: 10000.0,
            t_c: None,
        }
    }
}

impl DiscoDitConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_heads, self.model_dim, self.mlp_dim, self.time_embed_out];
        if dims.contains(&0) {
            return Err(NnError::Config("all dimensions must be at least 1".into()));
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(NnError::Config(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.time_embed_in < 2 {
            return Err(NnError::Config("time_embed_in must be at least 2".into()));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(NnError::Config("frequency must be positive".into()));
        }
        if let Some(tc) = self.t_c {
            if !(tc > 0.0 && tc.is_finite()) {
                return Err(NnError::Config("t_c must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The sinusoidal features `[sin d, cos d, sin c, cos c]` with
/// `d[i] = k f^(−i/(d_in−1))` and `c[i] = t (T_C f)^(−i/(d_in−1))`.
pub fn time_features(t: usize, k: usize, d_in: usize, f: f64, t_c: f64) -> Vec<f64> {
    let mut y = vec![0.0; 4 * d_in];
    let denom = (d_in - 1) as f64;
    for i in 0..d_in {
        let e = -(i as f64) / denom;
        let d = k as f64 * f.powf(e);
        let c = t as f64 * (t_c * f).powf(e);
        y[i] = d.sin();
        y[d_in + i] = d.cos();
        y[2 * d_in + i] = c.sin();
        y[3 * d_in + i] = c.cos();
    }
    y
}

#[derive(Debug, Clone)]
struct Linear {
    w: usize,
    b: Option<usize>,
}

impl Linear {
    fn new<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = ps.normal(format!("{name}.w"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng);
        let b = Some(ps.zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    /// Without bias; used where a bias would have no effect on the output.
    fn unbiased<R: Rng + ?Sized>(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = ps.normal(format!("{name}.w"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng);
        Self { w, b: None }
    }

    fn zero(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = ps.zeros(format!("{name}.w"), fan_in, fan_out);
        let b = Some(ps.zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ada_discrete: Linear,
    ada_continuous: Linear,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ff_in: Linear,
    ff_out: Linear,
}

/// Network structure; parameter values live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct DiscoDit {
    cfg: DiscoDitConfig,
    layout: Arc<ElementLayout>,
    t_c: f64,
    tok_emb: usize,
    vec_in: Vec<Linear>,
    pos_emb: usize,
    query_emb: usize,
    time_in: Linear,
    time_out: Linear,
    blocks: Vec<Block>,
    final_discrete: Linear,
    final_continuous: Linear,
    head_discrete: Linear,
    head_continuous: Vec<Linear>,
}

/// Outputs of one forward pass.
pub struct NetOutput {
    /// `L1 × |X|` logits, absent when the layout has no discrete slots.
    pub logits: Option<Var>,
    /// One `1 × d_i` ε̂ row per continuous slot.
    pub eps: Vec<Var>,
}

/// One network query.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    pub tokens: &'a [Token],
    pub vectors: &'a [Vec<f64>],
    pub t: usize,
    pub k: usize,
    pub query: usize,
}

impl DiscoDit {
    /// Builds the structure and a freshly initialized parameter set.
    /// `default_t_c` is used when the config leaves `t_c` unset.
    pub fn new<R: Rng + ?Sized>(
        cfg: DiscoDitConfig,
        layout: Arc<ElementLayout>,
        default_t_c: f64,
        rng: &mut R,
    ) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let e = cfg.time_embed_out;
        let l = layout.len();
        let mut ps = ParamStore::new();
        let tok_emb = ps.normal("embed.tokens", layout.vocab_size() as usize + 1, d, 1.0, rng);
        let vec_in = layout
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &di)| Linear::new(&mut ps, &format!("embed.vector{i}"), di, d, rng))
            .collect();
        let pos_emb = ps.normal("embed.slots", l, d, 0.5, rng);
        let query_emb = ps.normal("embed.query", 1, d, 1.0, rng);
        let time_in = Linear::new(&mut ps, "time.mlp_in", 4 * cfg.time_embed_in, e, rng);
        let time_out = Linear::new(&mut ps, "time.mlp_out", e, e, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|b| Block {
                ada_discrete: Linear::zero(&mut ps, &format!("block{b}.ada_discrete"), e, 6 * d),
                ada_continuous: Linear::zero(&mut ps, &format!("block{b}.ada_continuous"), e, 6 * d),
                q: Linear::new(&mut ps, &format!("block{b}.attn.q"), d, d, rng),
                k: Linear::unbiased(&mut ps, &format!("block{b}.attn.k"), d, d, rng),
                v: Linear::new(&mut ps, &format!("block{b}.attn.v"), d, d, rng),
                o: Linear::new(&mut ps, &format!("block{b}.attn.o"), d, d, rng),
                ff_in: Linear::new(&mut ps, &format!("block{b}.ff.in"), d, cfg.mlp_dim, rng),
                ff_out: Linear::new(&mut ps, &format!("block{b}.ff.out"), cfg.mlp_dim, d, rng),
            })
            .collect();
        let final_discrete = Linear::zero(&mut ps, "final.ada_discrete", e, 2 * d);
        let final_continuous = Linear::zero(&mut ps, "final.ada_continuous", e, 2 * d);
        let head_discrete = Linear::new(&mut ps, "head.discrete", d, layout.vocab_size() as usize, rng);
        let head_continuous = layout
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &di)| Linear::new(&mut ps, &format!("head.vector{i}"), d, di, rng))
            .collect();
        let t_c = cfg.t_c.unwrap_or(default_t_c);
        let model = Self {
            cfg,
            layout,
            t_c,
            tok_emb,
            vec_in,
            pos_emb,
            query_emb,
            time_in,
            time_out,
            blocks,
            final_discrete,
            final_continuous,
            head_discrete,
            head_continuous,
        };
        Ok((model, ps))
    }

    pub fn config(&self) -> &DiscoDitConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Arc<ElementLayout> {
        &self.layout
    }

    pub fn t_c(&self) -> f64 {
        self.t_c
    }

    /// Checks that `ps` has this network's tensor names and shapes.
    pub fn check_params(&self, ps: &ParamStore) -> Result<()> {
        let mut rng = igd_core::rng::keyed_rng(0, &[]);
        let (_, reference) = Self::new(self.cfg.clone(), self.layout.clone(), self.t_c, &mut rng)?;
        if reference.names() != ps.names() {
            return Err(NnError::Checkpoint("parameter names do not match the model".into()));
        }
        for i in 0..ps.len() {
            if reference.get(i).dim() != ps.get(i).dim() {
                return Err(NnError::Checkpoint(format!("shape mismatch for {}", ps.name(i))));
            }
        }
        Ok(())
    }

    fn check(&self, tape: &Tape, v: Var, layer: &str) -> Result<()> {
        if tape.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(NnError::NonFinite {
                layer: layer.to_string(),
            })
        }
    }

    fn modulation(&self, tape: &mut Tape, cond: Var, disc: &Linear, cont: &Linear, kinds: &[usize]) -> Var {
        let md = disc.apply(tape, cond);
        let mc = cont.apply(tape, cond);
        let both = tape.concat_rows(&[md, mc]);
        tape.gather_rows(both, kinds)
    }

    fn modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Var {
        let n = tape.layer_norm(x);
        let s1 = tape.add_const(scale, 1.0);
        let y = tape.mul(n, s1);
        tape.add(y, shift)
    }

    fn attention(&self, tape: &mut Tape, blk: &Block, x: Var) -> Var {
        let d = self.cfg.model_dim;
        let dh = d / self.cfg.n_heads;
        let q = blk.q.apply(tape, x);
        let k = blk.k.apply(tape, x);
        let v = blk.v.apply(tape, x);
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.cfg.n_heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_nt(qh, kh);
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s);
                tape.matmul(p, vh)
            })
            .collect();
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        blk.o.apply(tape, cat)
    }

    /// Runs the network, recording every operation on `tape`.
    pub fn forward(&self, tape: &mut Tape, inp: NetInput<'_>) -> Result<NetOutput> {
        let layout = &self.layout;
        let (l1, l) = (layout.discrete_len(), layout.len());
        let d = self.cfg.model_dim;
        if inp.tokens.len() != l1 || inp.vectors.len() != layout.continuous_len() || inp.query >= l {
            return Err(NnError::Graph("input does not match the model layout".into()));
        }
        let y = time_features(inp.t, inp.k, self.cfg.time_embed_in, self.cfg.frequency, self.t_c);
        let y = tape.input(Array2::from_shape_vec((1, y.len()), y).expect("shape"));
        let h = self.time_in.apply(tape, y);
        let h = tape.silu(h);
        let temb = self.time_out.apply(tape, h);
        let cond = tape.silu(temb);

        let mut rows = Vec::with_capacity(l);
        if l1 > 0 {
            let vocab = layout.vocab_size();
            let idx = inp
                .tokens
                .iter()
                .map(|&t| {
                    if t < vocab {
                        Ok(t as usize)
                    } else if t == layout.mask_token() {
                        Ok(vocab as usize)
                    } else {
                        Err(NnError::Graph(format!("token {t} outside the vocabulary")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let table = tape.param(self.tok_emb);
            rows.push(tape.gather_rows(table, &idx));
        }
        for (i, (v, lin)) in inp.vectors.iter().zip(&self.vec_in).enumerate() {
            if v.len() != layout.dims()[i] {
                return Err(NnError::Graph(format!("vector {i} has the wrong dimension")));
            }
            let x = tape.input(Array2::from_shape_vec((1, v.len()), v.clone()).expect("shape"));
            rows.push(lin.apply(tape, x));
        }
        let x0 = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat_rows(&rows)
        };
        let pos = tape.param(self.pos_emb);
        let mut x = tape.add(x0, pos);
        let mut onehot = Array2::zeros((l, 1));
        onehot[[inp.query, 0]] = 1.0;
        let onehot = tape.input(onehot);
        let qe = tape.param(self.query_emb);
        let qrow = tape.matmul(onehot, qe);
        x = tape.add(x, qrow);
        self.check(tape, x, "embedding")?;

        let kinds: Vec<usize> = (0..l).map(|p| usize::from(p >= l1)).collect();
        for (b, blk) in self.blocks.iter().enumerate() {
            let m = self.modulation(tape, cond, &blk.ada_discrete, &blk.ada_continuous, &kinds);
            let part = |tape: &mut Tape, j: usize| tape.slice_cols(m, j * d, d);
            let (sh1, sc1, g1) = (part(tape, 0), part(tape, 1), part(tape, 2));
            let (sh2, sc2, g2) = (part(tape, 3), part(tape, 4), part(tape, 5));
            let h = Self::modulate(tape, x, sh1, sc1);
            let a = self.attention(tape, blk, h);
            let a = tape.mul(g1, a);
            x = tape.add(x, a);
            self.check(tape, x, &format!("block{b}.attention"))?;
            let h = Self::modulate(tape, x, sh2, sc2);
            let f = blk.ff_in.apply(tape, h);
            let f = tape.gelu(f);
            let f = blk.ff_out.apply(tape, f);
            let f = tape.mul(g2, f);
            x = tape.add(x, f);
            self.check(tape, x, &format!("block{b}.feedforward"))?;
        }

        let m = self.modulation(tape, cond, &self.final_discrete, &self.final_continuous, &kinds);
        let shift = tape.slice_cols(m, 0, d);
        let scale = tape.slice_cols(m, d, d);
        let h = Self::modulate(tape, x, shift, scale);
        let logits = if l1 > 0 {
            let idx: Vec<usize> = (0..l1).collect();
            let hd = tape.gather_rows(h, &idx);
            let out = self.head_discrete.apply(tape, hd);
            self.check(tape, out, "head.discrete")?;
            Some(out)
        } else {
            None
        };
        let mut eps = Vec::with_capacity(layout.continuous_len());
        for (i, lin) in self.head_continuous.iter().enumerate() {
            let hi = tape.gather_rows(h, &[l1 + i]);
            let out = lin.apply(tape, hi);
            self.check(tape, out, &format!("head.vector{i}"))?;
            eps.push(out);
        }
        Ok(NetOutput { logits, eps })
    }
}
