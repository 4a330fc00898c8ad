use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; all of them if the tensor is smaller.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            coords_per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares analytic parameter gradients of the scalar built by `build`
/// against central finite differences. Runs in eval mode, so dropout is off.
pub fn gradient_check<F>(store: &ParamStore, build: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Var,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::Config(format!("gradient check step must be positive, got {}", opts.eps)));
    }
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::eval(s);
        let loss = build(&mut g);
        let v = g.scalar(loss);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("loss is {v}")))
        }
    };
    eval(store)?;
    let analytic = {
        let mut g = Graph::eval(store);
        let loss = build(&mut g);
        g.backward(loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (id, p) in store.iter() {
        let n = p.value.len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = p.value.data[i];
            probe.get_mut(id).data[i] = orig + opts.eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data[i] = orig - opts.eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data[i] = orig;
            let fd = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.get(id).map_or(0.0, |t| t.data[i]);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((p.name.clone(), i));
            }
        }
    }
    Ok(report)
}
