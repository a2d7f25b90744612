use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{record_score, Method, SaliencyMap, ScoreKind};
use crate::error::{Error, Result};
use crate::model::CnnModel;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothGradParams {
    pub n: usize,
    /// Noise standard deviation as a fraction of the input's value range.
    pub noise_level: f64,
    pub score: ScoreKind,
}

impl Default for SmoothGradParams {
    fn default() -> Self {
        Self {
            n: 50,
            noise_level: 0.5,
            score: ScoreKind::Logit,
        }
    }
}

/// Gradient of the class score with respect to the input, same shape as the
/// input.
pub fn vanilla_gradient(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    score: ScoreKind,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone().with_grad(true));
    let s = record_score(model, &mut tape, x, 0, class, score)?;
    let mut grads = tape.backward(s)?;
    Ok(grads
        .take(x)
        .unwrap_or_else(|| Tensor::zeros(input.shape())))
}

/// Max of |g| over the channel axis of an `h × w × c` gradient.
pub fn reduce_channels(grad: &Tensor) -> Result<Vec<f64>> {
    let (_, _, c) = grad.dims3()?;
    Ok(grad
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().fold(0.0f64, |m, g| m.max(g.abs())))
        .collect())
}

fn saliency(
    input: &Tensor,
    class: usize,
    values: Vec<f64>,
    params: serde_json::Value,
) -> Result<SaliencyMap> {
    let (height, width, _) = input.dims3()?;
    Ok(SaliencyMap {
        height,
        width,
        values,
        method: Method::Smoothgrad,
        class,
        params,
    })
}

/// Plain gradient saliency: channel-reduced |∂score/∂x|.
pub fn vanilla_saliency(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    score: ScoreKind,
) -> Result<SaliencyMap> {
    let grad = vanilla_gradient(model, input, class, score)?;
    saliency(
        input,
        class,
        reduce_channels(&grad)?,
        json!({ "n": 1, "noise_level": 0.0, "score": score }),
    )
}

/// One SmoothGrad draw: the input gradient at `input + N(0, sigma²)`.
/// `sigma = 0` adds nothing.
pub fn smoothgrad_sample(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    sigma: f64,
    score: ScoreKind,
    rng: &mut Rng,
) -> Result<Tensor> {
    if sigma == 0.0 {
        return vanilla_gradient(model, input, class, score);
    }
    let mut noisy = input.clone();
    for v in noisy.data_mut() {
        *v += sigma * rng.normal();
    }
    vanilla_gradient(model, &noisy, class, score)
}

/// Mean input gradient over `n` noisy copies, then channel-reduced. Draw `i`
/// uses stream `i` of a base taken from `rng`, and draws are averaged in index
/// order, so the result does not depend on thread count.
pub fn smoothgrad(
    model: &CnnModel,
    input: &Tensor,
    class: usize,
    params: &SmoothGradParams,
    rng: &mut Rng,
) -> Result<SaliencyMap> {
    if params.n == 0 {
        return Err(Error::Param("smoothgrad needs n >= 1".into()));
    }
    if !(params.noise_level >= 0.0 && params.noise_level.is_finite()) {
        return Err(Error::Param(format!(
            "noise level must be >= 0, got {}",
            params.noise_level
        )));
    }
    let sigma = params.noise_level * (input.max() - input.min());
    let base = rng.fork_base();
    let grads: Vec<Tensor> = (0..params.n)
        .into_par_iter()
        .map(|i| {
            smoothgrad_sample(
                model,
                input,
                class,
                sigma,
                params.score,
                &mut Rng::stream(base, i),
            )
        })
        .collect::<Result<_>>()?;
    // Running mean: identical draws average back to themselves exactly.
    let mut mean = Tensor::zeros(input.shape());
    for (i, g) in grads.iter().enumerate() {
        let k = (i + 1) as f64;
        for (m, v) in mean.data_mut().iter_mut().zip(g.data()) {
            *m += (v - *m) / k;
        }
    }
    saliency(
        input,
        class,
        reduce_channels(&mean)?,
        json!({ "n": params.n, "noise_level": params.noise_level, "sigma": sigma, "score": params.score }),
    )
}
