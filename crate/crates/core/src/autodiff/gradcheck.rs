use alloc::vec::Vec;

use super::{AutodiffError, Graph, Result, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum over all components of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Same maximum, per checked input.
    pub per_input: Vec<f64>,
    /// Number of components compared.
    pub checked: usize,
    /// Components whose `±eps` probe crossed a kink or a rounding step and
    /// were compared at a nearby point or with a smaller step instead.
    pub nudged: usize,
    /// Components for which no clean probe was found.
    pub unresolved: usize,
}

/// Base-point shifts tried, in units of `eps`, when a probe straddles a kink.
const NUDGES: [f64; 8] = [3.0, -3.0, 7.0, -7.0, 13.0, -13.0, 29.0, -29.0];
/// Step reductions tried at the original point when every shift fails.
const SHRINK: [f64; 3] = [0.1, 0.01, 0.001];

/// Value and branch signature of `f` at `xs`.
fn eval<F>(f: &F, xs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = xs
        .iter()
        .map(|x| g.input(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    let value = v
        .item()
        .ok_or_else(|| AutodiffError::NotScalar(v.shape().to_vec()))?;
    Ok((value, g.branch_signature()))
}

/// Analytic gradient of component `i` of input `k` at `xs`.
fn analytic_at<F>(f: &F, xs: &[Tensor], k: usize, i: usize) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = xs
        .iter()
        .map(|x| g.param(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    Ok(grads.get_or_zeros(vars[k], &xs[k]).data()[i])
}

/// Checks the gradient of a scalar function of several tensors.
///
/// When the function's discrete branches (ReLU/abs signs, pooling winners,
/// rounded refinement cells) differ between `x - eps`, `x` and `x + eps`,
/// the comparison for that component moves to the first shifted base point
/// whose neighborhood is free of such changes, or failing that, to a
/// smaller step at the original point.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AutodiffError::Invalid("finite-difference step must be positive".into()));
    }
    let mut g = Graph::new();
    let vars = xs
        .iter()
        .map(|x| g.param(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let base_sig = g.branch_signature();
    let grads = g.backward(out)?;

    let mut per_input = Vec::with_capacity(xs.len());
    let mut checked = 0;
    let mut nudged = 0;
    let mut unresolved = 0;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (k, (x, &var)) in xs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(var, x);
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let orig = x.data()[i];
            let central = |probe: &mut Vec<Tensor>, at: f64, h: f64| -> Result<(f64, bool, u64)> {
                probe[k].data_mut()[i] = at + h;
                let (plus, sp) = eval(&f, probe)?;
                probe[k].data_mut()[i] = at - h;
                let (minus, sm) = eval(&f, probe)?;
                probe[k].data_mut()[i] = at;
                Ok(((plus - minus) / (2.0 * h), sp == sm, sp))
            };
            let (mut numeric, same, sig) = central(&mut probe, orig, eps)?;
            let mut reference = analytic.data()[i];
            if !(same && sig == base_sig) {
                let mut found = false;
                for shift in NUDGES {
                    let at = orig + shift * eps;
                    probe[k].data_mut()[i] = at;
                    let (_, centre_sig) = eval(&f, &probe)?;
                    let (n, same, sig) = central(&mut probe, at, eps)?;
                    if same && sig == centre_sig {
                        numeric = n;
                        reference = analytic_at(&f, &probe, k, i)?;
                        found = true;
                        break;
                    }
                }
                probe[k].data_mut()[i] = orig;
                if !found {
                    for factor in SHRINK {
                        let (n, same, sig) = central(&mut probe, orig, eps * factor)?;
                        if same && sig == base_sig {
                            numeric = n;
                            found = true;
                            break;
                        }
                    }
                }
                if found {
                    nudged += 1;
                } else {
                    unresolved += 1;
                }
            }
            let err = (reference - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            checked += 1;
        }
        per_input.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        checked,
        nudged,
        unresolved,
    })
}

/// Maximum relative error between the analytic gradient of `f` at `x` and
/// central finite differences with step `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), core::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}
