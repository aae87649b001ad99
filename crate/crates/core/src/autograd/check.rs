use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Cosine of the angle between two equal-length vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `Σ |aᵢ − bᵢ|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Differentiable row-wise cosine similarity of two `[n, d]` batches, `-> [n]`.
pub fn cosine_rows<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.normalize_rows().mul(b.normalize_rows()).row_sum()
}

/// Differentiable row-wise L1 distance of two `[n, d]` batches, `-> [n]`.
pub fn l1_rows<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.sub(b).abs().row_sum()
}

/// Compares an analytic gradient against central differences.
///
/// Returns `max_i |analytic_i − fd_i| / max(1, |fd_i|)`.
pub fn finite_diff_check<F>(mut f: F, analytic: &[f64], theta: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {eps}")));
    }
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let mut point = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        point[i] = theta[i] + eps;
        let up = f(&point);
        point[i] = theta[i] - eps;
        let down = f(&point);
        point[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite value at coordinate {i}")));
        }
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}

/// Builds `graph` over fresh tapes to check the gradient of its scalar output
/// with respect to every input tensor.
pub fn check_graph<G>(graph: G, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    G: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let theta: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();

    let unpack = |flat: &[f64]| -> Vec<Tensor> {
        let mut off = 0;
        inputs
            .iter()
            .zip(&sizes)
            .map(|(t, &n)| {
                let v = Tensor::from_parts(t.shape().to_vec(), flat[off..off + n].to_vec());
                off += n;
                v
            })
            .collect()
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = graph(&tape, &vars);
    let grads = tape.backward(root)?;
    let analytic: Vec<f64> = vars
        .iter()
        .flat_map(|v| grads.get(v).into_data())
        .collect();

    finite_diff_check(
        |flat| {
            let tape = Tape::new();
            let vars: Vec<Var<'_>> = unpack(flat).into_iter().map(|t| tape.constant(t)).collect();
            graph(&tape, &vars).item()
        },
        &analytic,
        &theta,
        eps,
    )
}
