use super::{Graph, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences.
///
/// Returns `max_i |g_ad,i − g_fd,i| / max(1, |g_fd,i|)`. Any evaluation error
/// or non-finite gradient reports `f64::INFINITY`. `f` must be deterministic:
/// freeze any noise it draws.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var, TensorError>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let analytic = match analytic_grads(&f, inputs) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    let mut worst = 0.0_f64;
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + eps;
            let plus = eval(&f, &probe);
            probe[t].data_mut()[i] = orig - eps;
            let minus = eval(&f, &probe);
            probe[t].data_mut()[i] = orig;
            let (Ok(plus), Ok(minus)) = (plus, minus) else { return f64::INFINITY };
            let fd = (plus - minus) / (2.0 * eps);
            let ad = grad.data()[i];
            if !fd.is_finite() || !ad.is_finite() {
                return f64::INFINITY;
            }
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    worst
}

fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    Ok(g.value(root).item())
}
