//! Parameter layouts, initialisation and forward graphs of the trainable families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{f32_round, DecoderSpec, Family, NetParams};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

enum Init {
    Zeros,
    /// Uniform in ±bound.
    Uniform(f64),
}

fn glorot(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// `(name, shape, init)` for every parameter, in forward order.
fn layout(spec: &DecoderSpec) -> Vec<(String, Vec<usize>, Init)> {
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let dense = |out: &mut Vec<_>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o], glorot(i, o)));
        out.push((format!("{name}.b"), vec![o], Init::Zeros));
    };
    match spec.family {
        Family::Linear => dense(&mut out, "head.out", spec.flat_dim(), 1),
        Family::Ffnn => {
            let hs = &spec.ffnn_hidden;
            dense(&mut out, "body.fc0", spec.flat_dim(), hs[0]);
            for k in 1..hs.len() {
                dense(&mut out, &format!("head.fc{k}"), hs[k - 1], hs[k]);
            }
            dense(&mut out, "head.out", *hs.last().expect("validated"), 1);
        }
        Family::LstmRnn | Family::SpeedRnn => {
            let (c, h) = (spec.input_channels, spec.lstm_hidden);
            let bound = 1.0 / (h as f64).sqrt();
            out.push(("body.lstm.wx".into(), vec![c, 4 * h], Init::Uniform(bound)));
            out.push(("body.lstm.wh".into(), vec![h, 4 * h], Init::Uniform(bound)));
            out.push(("body.lstm.b".into(), vec![4 * h], Init::Zeros));
            dense(&mut out, "head.fc1", h, spec.head_hidden);
            dense(&mut out, "head.out", spec.head_hidden, 1);
        }
        Family::TransformerEncoder => {
            let (c, e, k) = (spec.input_channels, spec.embed_dim, spec.conv_kernel);
            dense(&mut out, "body.proj", c, e);
            for blk in 0..spec.n_blocks {
                for m in ["wq", "wk", "wv"] {
                    out.push((format!("body.attn{blk}.{m}"), vec![e, e], glorot(e, e)));
                }
                dense(&mut out, &format!("body.attn{blk}.out"), e, e);
            }
            out.push(("body.conv.w".into(), vec![k, e, e], glorot(k * e, k * e)));
            out.push(("body.conv.b".into(), vec![e], Init::Zeros));
            dense(&mut out, "head.fc1", e, spec.head_hidden);
            dense(&mut out, "head.out", spec.head_hidden, 1);
        }
        Family::RandomForest => {}
    }
    out
}

/// Seeded initialisation; every value is `f32`-representable.
pub fn init(spec: &DecoderSpec) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.lstm_hidden;
    let tensors = layout(spec)
        .into_iter()
        .map(|(name, shape, init)| {
            let n: usize = shape.iter().product();
            let mut data: Vec<f64> = match init {
                Init::Zeros => vec![0.0; n],
                Init::Uniform(a) => (0..n).map(|_| f32_round(rng.random_range(-a..a))).collect(),
            };
            if name == "body.lstm.b" {
                // forget-gate bias 1
                data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
            (name, Tensor::new(&shape, data).expect("layout shape"))
        })
        .collect();
    NetParams { tensors }
}

struct Named<'a> {
    names: Vec<String>,
    vars: &'a [Var],
}

impl Named<'_> {
    fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::SpecMismatch(format!("missing parameter {name}")))
    }

    fn dense(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.get(&format!("{name}.w"))?;
        let b = self.get(&format!("{name}.b"))?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// `[B, 1]` or `[B, L, 1]`-style output to `[B]`.
fn squeeze(g: &mut Graph, y: Var) -> Result<Var> {
    let b = g.value(y).shape()[0];
    g.reshape(y, &[b])
}

/// Builds the forward graph; output is `[B]` in standardised target units.
pub fn forward(spec: &DecoderSpec, vars: &[Var], g: &mut Graph, x: Var) -> Result<Var> {
    let names: Vec<String> = layout(spec).into_iter().map(|(n, _, _)| n).collect();
    if names.len() != vars.len() {
        return Err(Error::SpecMismatch(format!(
            "{} expects {} parameter tensors, got {}",
            spec.family,
            names.len(),
            vars.len()
        )));
    }
    let p = Named { names, vars };
    match spec.family {
        Family::Linear => {
            let y = p.dense(g, x, "head.out")?;
            squeeze(g, y)
        }
        Family::Ffnn => {
            let mut h = p.dense(g, x, "body.fc0")?;
            h = g.relu(h);
            for k in 1..spec.ffnn_hidden.len() {
                h = p.dense(g, h, &format!("head.fc{k}"))?;
                h = g.relu(h);
            }
            let y = p.dense(g, h, "head.out")?;
            squeeze(g, y)
        }
        Family::LstmRnn | Family::SpeedRnn => {
            let h = lstm_body(spec, &p, g, x)?;
            let z = p.dense(g, h, "head.fc1")?;
            let z = g.relu(z);
            let y = p.dense(g, z, "head.out")?;
            squeeze(g, y)
        }
        Family::TransformerEncoder => transformer(spec, &p, g, x, &mut Vec::new()),
        Family::RandomForest => Err(Error::Argument("random_forest has no graph".into())),
    }
}

/// Final hidden state `[B, H]` after unrolling over the window.
fn lstm_body(spec: &DecoderSpec, p: &Named, g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[2] != spec.input_channels {
        return Err(Error::shape("lstm input", &[0, spec.window_len, spec.input_channels], &shape));
    }
    let (b, l) = (shape[0], shape[1]);
    let hd = spec.lstm_hidden;
    let wx = p.get("body.lstm.wx")?;
    let wh = p.get("body.lstm.wh")?;
    let bias = p.get("body.lstm.b")?;
    // input contributions for every step at once
    let xw = g.matmul(x, wx)?;
    let xw = g.add(xw, bias)?;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    for t in 0..l {
        let xt = g.slice(xw, 1, t, 1)?;
        let mut gates = g.reshape(xt, &[b, 4 * hd])?;
        if let Some(hp) = h {
            let rec = g.matmul(hp, wh)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice(gates, 1, 0, hd)?;
        let i = g.sigmoid(i);
        let f = g.slice(gates, 1, hd, hd)?;
        let f = g.sigmoid(f);
        let cand = g.slice(gates, 1, 2 * hd, hd)?;
        let cand = g.tanh(cand);
        let o = g.slice(gates, 1, 3 * hd, hd)?;
        let o = g.sigmoid(o);
        let ic = g.mul(i, cand)?;
        let cn = match c {
            Some(cp) => {
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(cn);
        h = Some(g.mul(o, tc)?);
        c = Some(cn);
    }
    h.ok_or_else(|| Error::Argument("empty sequence".into()))
}

/// Fixed sinusoidal position table `[L, E]`.
pub fn positional_table(l: usize, e: usize) -> Tensor {
    let mut data = vec![0.0; l * e];
    for t in 0..l {
        for i in 0..e {
            let k = (i / 2) as f64 * 2.0;
            let angle = t as f64 / 10000f64.powf(k / e as f64);
            data[t * e + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[l, e], data).expect("pe shape")
}

fn transformer(spec: &DecoderSpec, p: &Named, g: &mut Graph, x: Var, attn: &mut Vec<Var>) -> Result<Var> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[2] != spec.input_channels {
        return Err(Error::shape("transformer input", &[0, spec.window_len, spec.input_channels], &shape));
    }
    let (b, l) = (shape[0], shape[1]);
    let e = spec.embed_dim;
    let dh = e / spec.n_heads;
    let mut h = p.dense(g, x, "body.proj")?;
    if spec.positional_encoding {
        let pe = g.input(positional_table(l, e));
        h = g.add(h, pe)?;
    }
    for blk in 0..spec.n_blocks {
        let q = g.matmul(h, p.get(&format!("body.attn{blk}.wq"))?)?;
        let k = g.matmul(h, p.get(&format!("body.attn{blk}.wk"))?)?;
        let v = g.matmul(h, p.get(&format!("body.attn{blk}.wv"))?)?;
        let mut heads = Vec::with_capacity(spec.n_heads);
        for hi in 0..spec.n_heads {
            let qh = g.slice(q, 2, hi * dh, dh)?;
            let kh = g.slice(k, 2, hi * dh, dh)?;
            let vh = g.slice(v, 2, hi * dh, dh)?;
            let s = g.bmm(qh, kh, true)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax(s)?;
            attn.push(a);
            heads.push(g.bmm(a, vh, false)?);
        }
        let o = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2)? };
        let o = p.dense(g, o, &format!("body.attn{blk}.out"))?;
        h = g.add(h, o)?;
    }
    let c = g.conv1d(h, p.get("body.conv.w")?, p.get("body.conv.b")?)?;
    let c = g.relu(c);
    let pooled = g.mean_axis(c, 1)?;
    debug_assert_eq!(g.value(pooled).shape(), &[b, e]);
    let z = p.dense(g, pooled, "head.fc1")?;
    let z = g.relu(z);
    let y = p.dense(g, z, "head.out")?;
    squeeze(g, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckOptions};
    use crate::decoders::{Decoder, DecoderState};
    use rand::{Rng, SeedableRng};

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    fn small(family: Family, c: usize) -> DecoderSpec {
        let mut s = DecoderSpec::new(family, c).with_seed(3);
        s.ffnn_hidden = vec![16, 8];
        s.lstm_hidden = 8;
        s.head_hidden = 6;
        s.embed_dim = 8;
        s.n_heads = 2;
        s
    }

    pub(crate) fn check_family(spec: DecoderSpec, tol: f64) -> crate::autodiff::GradcheckReport {
        let d = Decoder::new(spec.clone()).unwrap();
        let DecoderState::Net(p) = &d.state else { unreachable!() };
        // nonzero biases so every path is exercised
        let mut params = p.tensors.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (_, t) in params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        let x = random_input(&d.input_shape(4), 5);
        let y = random_input(&[4], 6);
        let rep = gradcheck(
            &params,
            |g, vars| {
                let xi = g.input(x.clone());
                let out = forward(&spec, vars, g, xi)?;
                let yi = g.input(y.clone());
                g.mse(out, yi)
            },
            GradcheckOptions {
                tolerance: tol,
                samples: 64,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.n_checked >= 50, "{}", rep.n_checked);
        rep
    }

    #[test]
    fn gradcheck_linear() {
        let rep = check_family(small(Family::Linear, 4), 1e-6);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn gradcheck_ffnn() {
        assert!(check_family(small(Family::Ffnn, 3), 1e-4).passed);
    }

    #[test]
    fn gradcheck_lstm_20_steps() {
        let rep = check_family(small(Family::LstmRnn, 3), 1e-4);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn gradcheck_transformer() {
        let rep = check_family(small(Family::TransformerEncoder, 3), 1e-4);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn gradcheck_speed_rnn() {
        assert!(check_family(small(Family::SpeedRnn, 1), 1e-4).passed);
    }

    #[test]
    fn lstm_zero_input_gives_head_bias() {
        let spec = small(Family::LstmRnn, 3);
        let mut d = Decoder::new(spec).unwrap();
        let DecoderState::Net(p) = &mut d.state else { unreachable!() };
        for (n, t) in p.tensors.iter_mut() {
            if n.ends_with(".b") {
                let v = if n == "head.out.b" { 0.75 } else { 0.0 };
                t.data_mut().iter_mut().for_each(|x| *x = v);
            }
        }
        let out = d.predict(&Tensor::zeros(&[2, 20, 3])).unwrap();
        assert_eq!(out, vec![0.75, 0.75]);
    }

    #[test]
    fn untrained_lstm_is_deterministic() {
        let a = Decoder::new(small(Family::LstmRnn, 3)).unwrap();
        let b = Decoder::new(small(Family::LstmRnn, 3)).unwrap();
        let x = random_input(&[1, 20, 3], 1);
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn zero_linear_predicts_bias() {
        let mut d = Decoder::new(small(Family::Linear, 2)).unwrap();
        let DecoderState::Net(p) = &mut d.state else { unreachable!() };
        p.tensors[0].1.data_mut().iter_mut().for_each(|v| *v = 0.0);
        p.tensors[1].1.data_mut()[0] = -1.25;
        let out = d.predict(&random_input(&[3, 40], 2)).unwrap();
        assert_eq!(out, vec![-1.25; 3]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let spec = small(Family::TransformerEncoder, 3);
        let d = Decoder::new(spec.clone()).unwrap();
        let DecoderState::Net(p) = &d.state else { unreachable!() };
        let mut g = Graph::new();
        let vars: Vec<Var> = p.tensors.iter().map(|(_, t)| g.input(t.clone())).collect();
        let names = layout(&spec).into_iter().map(|(n, _, _)| n).collect();
        let named = Named { names, vars: &vars };
        let xi = g.input(random_input(&[2, 20, 3], 4));
        let mut attn = Vec::new();
        transformer(&spec, &named, &mut g, xi, &mut attn).unwrap();
        assert_eq!(attn.len(), spec.n_heads);
        for a in attn {
            assert_eq!(g.value(a).shape(), &[2, 20, 20]);
            for row in g.value(a).data().chunks(20) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transformer_permutation_invariance() {
        let mut spec = small(Family::TransformerEncoder, 3);
        spec.positional_encoding = false;
        spec.conv_kernel = 1;
        let d = Decoder::new(spec).unwrap();
        let x = random_input(&[1, 20, 3], 8);
        let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
        let mut xp = vec![0.0; 60];
        for (t, &src) in perm.iter().enumerate() {
            xp[t * 3..t * 3 + 3].copy_from_slice(&x.data()[src * 3..src * 3 + 3]);
        }
        let xp = Tensor::new(&[1, 20, 3], xp).unwrap();
        let (a, b) = (d.predict(&x).unwrap()[0], d.predict(&xp).unwrap()[0]);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        // with positions on, order matters
        let mut spec2 = small(Family::TransformerEncoder, 3);
        spec2.conv_kernel = 1;
        let d2 = Decoder::new(spec2).unwrap();
        assert!((d2.predict(&x).unwrap()[0] - d2.predict(&xp).unwrap()[0]).abs() > 1e-9);
    }

    #[test]
    fn body_head_partition_is_exhaustive() {
        for f in [Family::Linear, Family::Ffnn, Family::LstmRnn, Family::TransformerEncoder, Family::SpeedRnn] {
            for (name, _, _) in layout(&small(f, 2)) {
                assert!(name.starts_with("body.") ^ name.starts_with("head."), "{name}");
            }
        }
    }
}
