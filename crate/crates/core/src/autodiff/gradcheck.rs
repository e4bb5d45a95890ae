//! Central finite-difference checks of the reverse pass, in double precision.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;

use super::layers::{Conv2d, Linear};
use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so that near-zero gradients are
/// compared absolutely (to `REL_TOL * REL_FLOOR`).
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>5} entries  max rel err {:.2e}  {}",
            self.name,
            self.checked,
            self.max_rel_error,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Indices to probe in a tensor of `n` entries: all of them, or an evenly
/// strided subset of `limit`.
fn probe_indices(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        (0..limit).map(|i| i * n / limit).collect()
    }
}

/// Compares analytic gradients of `loss_fn` against central differences for
/// every parameter in `params` and every tensor in `inputs`.
pub fn check<F>(
    name: &str,
    params: &mut ParamStore<f64>,
    inputs: &mut [Tensor<f64>],
    limit_per_tensor: usize,
    loss_fn: F,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |params: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new(params);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let (param_grads, input_grads) = {
        let mut tape = Tape::new(params);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input_with_grad(t.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        let pg = grads.param_grads();
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs.iter())
            .map(|(&v, t)| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let pg: Vec<Vec<f64>> = params
            .ids()
            .map(|id| pg.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; params.get(id).numel()]))
            .collect();
        (pg, ig)
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for i in probe_indices(params.get(id).numel(), limit_per_tensor) {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(params, inputs)?;
            params.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(params, inputs)?;
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(param_grads[id.index()][i], numeric));
            checked += 1;
        }
    }
    for k in 0..inputs.len() {
        for i in probe_indices(inputs[k].numel(), limit_per_tensor) {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(params, inputs)?;
            inputs[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(params, inputs)?;
            inputs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(input_grads[k][i], numeric));
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        checked,
        max_rel_error: worst,
        passed: worst < REL_TOL,
    })
}

pub fn randn(shape: &[usize], rng: &mut Pcg32) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Reduces any tensor to a scalar through a fixed random projection, so
/// every output entry gets a distinct upstream gradient.
fn project(tape: &mut Tape<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let flat = tape.flatten(x)?;
    let features = tape.value(flat).shape()[1];
    let w = tape.input(randn(&[1, features], &mut rng));
    let b = tape.input(Tensor::zeros(&[1]));
    let y = tape.linear(flat, w, b)?;
    tape.sum(y)
}

/// Finite-difference check of every layer in the catalog in isolation.
pub fn layer_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut out = Vec::new();
    let limit = usize::MAX;

    let run_unary = |name: &str,
                         shape: &[usize],
                         rng: &mut Pcg32,
                         f: &dyn Fn(&mut Tape<'_, f64>, Var) -> Result<Var>|
     -> Result<GradcheckReport> {
        let mut params = ParamStore::new();
        let mut inputs = vec![randn(shape, rng)];
        check(name, &mut params, &mut inputs, limit, |tape, v| {
            let y = f(tape, v[0])?;
            project(tape, y, 11)
        })
    };

    for (k, stride, pad) in [(3, 1, 1), (4, 2, 1), (3, 2, 0), (1, 1, 0)] {
        let mut params = ParamStore::new();
        let conv = Conv2d::new(&mut params, "conv", 3, 2, k, stride, pad, &mut rng);
        // non-zero bias so its gradient path is exercised with realistic values
        params.get_mut(conv.bias).data_mut().copy_from_slice(&[0.3, -0.2]);
        let mut inputs = vec![randn(&[2, 3, 6, 6], &mut rng)];
        let name = format!("conv2d k{k} s{stride} p{pad}");
        out.push(check(&name, &mut params, &mut inputs, limit, |tape, v| {
            let y = conv.forward(tape, v[0])?;
            project(tape, y, 12)
        })?);
    }

    {
        let mut params = ParamStore::new();
        let fc = Linear::new(&mut params, "fc", 5, 4, &mut rng);
        let mut inputs = vec![randn(&[2, 5], &mut rng)];
        out.push(check("linear", &mut params, &mut inputs, limit, |tape, v| {
            let y = fc.forward(tape, v[0])?;
            project(tape, y, 13)
        })?);
    }

    let s = [2, 3, 6, 6];
    out.push(run_unary("leaky_relu", &s, &mut rng, &|t, x| t.leaky_relu(x, 0.2))?);
    out.push(run_unary("relu", &s, &mut rng, &|t, x| t.relu(x))?);
    out.push(run_unary("sigmoid", &s, &mut rng, &|t, x| t.sigmoid(x))?);
    out.push(run_unary("scale", &s, &mut rng, &|t, x| t.scale(x, -1.7))?);
    out.push(run_unary("max_pool2", &s, &mut rng, &|t, x| t.max_pool2(x))?);
    out.push(run_unary("upsample2", &[2, 3, 3, 3], &mut rng, &|t, x| t.upsample2(x))?);
    out.push(run_unary("global_avg_pool", &s, &mut rng, &|t, x| t.global_avg_pool(x))?);
    out.push(run_unary("reshape", &s, &mut rng, &|t, x| t.reshape(x, &[2, 9, 2, 6]))?);
    out.push(run_unary("flatten", &s, &mut rng, &|t, x| t.flatten(x))?);
    out.push(run_unary("tile", &[2, 3], &mut rng, &|t, x| t.tile(x, 4, 5))?);
    out.push(run_unary("normalize_channels", &s, &mut rng, &|t, x| t.normalize_channels(x))?);
    out.push(run_unary("mean", &s, &mut rng, &|t, x| t.mean(x))?);
    out.push(run_unary("sum", &s, &mut rng, &|t, x| t.sum(x))?);

    {
        let mut params = ParamStore::new();
        let mut inputs = vec![randn(&[2, 3, 6, 6], &mut rng), randn(&[2, 2, 6, 6], &mut rng)];
        out.push(check("concat", &mut params, &mut inputs, limit, |tape, v| {
            let y = tape.concat(&[v[0], v[1]])?;
            project(tape, y, 14)
        })?);
    }
    {
        let mut params = ParamStore::new();
        let mut inputs = vec![randn(&[3, 4], &mut rng)];
        out.push(check("softmax_cross_entropy", &mut params, &mut inputs, limit, |tape, v| {
            tape.softmax_cross_entropy(v[0], &[1, 3, 0])
        })?);
    }
    {
        let target = randn(&[2, 3, 6, 6], &mut rng);
        let mask: Vec<bool> = (0..target.numel()).map(|i| i % 5 != 0).collect();
        let mut params = ParamStore::new();
        let mut inputs = vec![randn(&[2, 3, 6, 6], &mut rng)];
        out.push(check("l1_loss", &mut params, &mut inputs, limit, |tape, v| {
            tape.l1_loss(v[0], &target, Some(&mask))
        })?);
    }
    {
        let mut target = randn(&[2, 3, 6, 6], &mut rng);
        normalize_in_place(&mut target);
        let mask: Vec<bool> = (0..2 * 36).map(|i| i % 7 != 0).collect();
        let mut params = ParamStore::new();
        let mut inputs = vec![randn(&[2, 3, 6, 6], &mut rng)];
        out.push(check("cosine_loss", &mut params, &mut inputs, limit, |tape, v| {
            let p = tape.normalize_channels(v[0])?;
            tape.cosine_loss(p, &target, &mask)
        })?);
    }
    Ok(out)
}

fn normalize_in_place(t: &mut Tensor<f64>) {
    let [n, c, h, w] = t.dims4("normalize").expect("4-d");
    let hw = h * w;
    let d = t.data_mut();
    for b in 0..n {
        for p in 0..hw {
            let norm = (0..c).map(|ch| d[(b * c + ch) * hw + p].powi(2)).sum::<f64>().sqrt();
            for ch in 0..c {
                d[(b * c + ch) * hw + p] /= norm;
            }
        }
    }
}
