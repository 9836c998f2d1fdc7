//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Approximate number of coordinates to probe across all parameters.
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples: 64,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub n_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub n_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(params: &[(String, Tensor)], build: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok((g, vars, loss))
}

/// Compares analytic gradients of `build`'s scalar loss against central
/// differences on a seeded sample of parameter coordinates.
pub fn gradcheck<F>(params: &[(String, Tensor)], build: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = eval(params, &build)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get(*v).expect("trainable").to_vec()).collect();
    drop(g);

    let total: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let numel = params[p].1.numel();
        let want = (opts.samples * numel).div_ceil(total.max(1)).max(3).min(numel);
        let idx = sample(&mut rng, numel, want);
        let mut worst: f64 = 0.0;
        for i in idx.iter() {
            let orig = params[p].1.data()[i];
            work[p].1.data_mut()[i] = orig + opts.step;
            let (gp, _, lp) = eval(&work, &build)?;
            let up = gp.value(lp).item();
            work[p].1.data_mut()[i] = orig - opts.step;
            let (gm, _, lm) = eval(&work, &build)?;
            let down = gm.value(lm).item();
            work[p].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[p][i], numeric, opts.floor));
        }
        report.push(ParamCheck {
            name: params[p].0.clone(),
            n_checked: want,
            max_rel_error: worst,
        });
    }
    let max_rel_error = report.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let n_checked = report.iter().map(|r| r.n_checked).sum();
    Ok(GradcheckReport {
        params: report,
        max_rel_error,
        n_checked,
        tolerance: opts.tolerance,
        passed: max_rel_error <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn every_op_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&[2, 5, 3], &mut rng);
        let y = rand_tensor(&[2, 4, 4], &mut rng);
        let params = vec![
            ("w".to_string(), rand_tensor(&[3, 4], &mut rng)),
            ("b".to_string(), rand_tensor(&[4], &mut rng)),
            ("k".to_string(), rand_tensor(&[2, 4, 4], &mut rng)),
            ("kb".to_string(), rand_tensor(&[4], &mut rng)),
        ];
        let build = |g: &mut Graph, v: &[Var]| {
            let xi = g.input(x.clone());
            let h = g.matmul(xi, v[0])?;
            let h = g.add(h, v[1])?;
            let h1 = g.tanh(h);
            let h2 = g.sigmoid(h);
            let h3 = g.relu(h);
            let hm = g.mul(h1, h2)?;
            let hs = g.add(hm, h3)?;
            let att = g.bmm(hs, hs, true)?;
            let att = g.scale(att, 0.5);
            let att = g.softmax(att)?;
            let ctx = g.bmm(att, hs, false)?;
            let c = g.conv1d(ctx, v[2], v[3])?;
            let a = g.slice(c, 2, 0, 2)?;
            let b = g.slice(c, 2, 2, 2)?;
            let cat = g.concat(&[b, a], 2)?;
            let pooled = g.mean_axis(cat, 1)?;
            let r = g.reshape(pooled, &[8])?;
            let target = g.input(Tensor::new(&[8], y.data()[..8].to_vec())?);
            let l1 = g.mse(r, target)?;
            let l2 = g.mean(cat);
            let l3 = g.sum(r);
            let l = g.add(l1, l2)?;
            let l3 = g.scale(l3, 0.1);
            g.add(l, l3)
        };
        let rep = gradcheck(&params, build, GradcheckOptions { tolerance: 1e-6, ..Default::default() }).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.n_checked >= 50);
    }

    #[test]
    fn wrong_derivative_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = vec![("w".to_string(), rand_tensor(&[4, 4], &mut rng))];
        let build = |g: &mut Graph, v: &[Var]| {
            // sin with a cos-sign error
            let h = g.map(v[0], f64::sin, |x| -x.cos());
            Ok(g.sum(h))
        };
        let rep = gradcheck(&params, build, GradcheckOptions::default()).unwrap();
        assert!(!rep.passed);
        let good = |g: &mut Graph, v: &[Var]| {
            let h = g.map(v[0], f64::sin, f64::cos);
            Ok(g.sum(h))
        };
        assert!(gradcheck(&params, good, GradcheckOptions::default()).unwrap().passed);
    }

    #[test]
    fn backward_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_tensor(&[3, 3], &mut rng);
        let x = rand_tensor(&[4, 3], &mut rng);
        let grad_of = |a: f64, b: f64| {
            let mut g = Graph::new();
            let wv = g.param(w.clone());
            let xi = g.input(x.clone());
            let h = g.matmul(xi, wv).unwrap();
            let t = g.tanh(h);
            let l1 = g.mean(t);
            let s = g.sigmoid(h);
            let l2 = g.sum(s);
            let l1 = g.scale(l1, a);
            let l2 = g.scale(l2, b);
            let l = g.add(l1, l2).unwrap();
            g.backward(l).unwrap().get(wv).unwrap().to_vec()
        };
        let (g1, g2, g12) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0), grad_of(2.5, -0.7));
        for i in 0..9 {
            assert!((g12[i] - (2.5 * g1[i] - 0.7 * g2[i])).abs() < 1e-10);
        }
        assert_eq!(grad_of(1.0, 1.0), grad_of(1.0, 1.0));
    }
}
