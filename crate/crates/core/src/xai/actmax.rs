use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CnnModel, Layer, Mode};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmParams {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for AmParams {
    fn default() -> Self {
        Self {
            steps: 256,
            step_size: 0.05,
        }
    }
}

/// Result of gradient ascent on an input image.
#[derive(Clone, Debug, PartialEq)]
pub struct AMImage {
    /// Synthesized input, values in [0, 1].
    pub image: Tensor,
    pub objective: f64,
    pub initial_objective: f64,
    pub steps: usize,
    /// Objective after every step (accepted or not, the value kept).
    pub trajectory: Vec<f64>,
}

/// The model cut off right after one convolution or dense layer, so the view
/// outputs that layer's pre-activation values. Borrows the parameters.
#[derive(Clone, Copy, Debug)]
pub struct LinearView<'m> {
    model: &'m CnnModel,
    layer: usize,
}

pub fn linear_view(model: &CnnModel, layer: usize) -> Result<LinearView<'_>> {
    match model.layers().get(layer) {
        Some(Layer::Conv2d { .. } | Layer::Dense { .. }) => Ok(LinearView { model, layer }),
        Some(other) => Err(Error::Index(format!(
            "layer {layer} is {:?}, not a convolution or dense layer",
            other.spec()
        ))),
        None => Err(Error::Index(format!(
            "layer {layer} of {}",
            model.layers().len()
        ))),
    }
}

impl LinearView<'_> {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.model.forward_to(input, Mode::Inference, self.layer)
    }

    /// Channel count (conv) or unit count (dense) of the output.
    pub fn units(&self) -> usize {
        match &self.model.layers()[self.layer] {
            Layer::Conv2d { kernels, .. } => kernels.shape()[0],
            Layer::Dense { weights, .. } => weights.shape()[0],
            _ => unreachable!("views are only built on conv and dense layers"),
        }
    }

    fn check_unit(&self, unit: usize) -> Result<()> {
        if unit >= self.units() {
            return Err(Error::Index(format!(
                "unit {unit} of layer {} (has {})",
                self.layer,
                self.units()
            )));
        }
        Ok(())
    }

    /// Mean activation of channel `unit` (conv) or the value of `unit`
    /// (dense), with its input gradient.
    pub fn objective_and_grad(&self, input: &Tensor, unit: usize) -> Result<(f64, Tensor)> {
        self.check_unit(unit)?;
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone().with_grad(true));
        let trace = self
            .model
            .record(&mut tape, x, Mode::Inference, false, self.layer)?;
        let objective = match self.model.layers()[self.layer] {
            Layer::Conv2d { .. } => tape.channel_mean(trace.last(), unit)?,
            _ => tape.select(trace.last(), unit)?,
        };
        let value = tape.value(objective).item()?;
        let mut grads = tape.backward(objective)?;
        let grad = grads
            .take(x)
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        Ok((value, grad))
    }
}

/// Gradient ascent from a uniform [0.45, 0.55] image. Each step moves by
/// `step_size` times the RMS-normalized gradient and clamps to [0, 1]; a step
/// that lowers the objective is rejected and the step size halved.
fn ascend(view: LinearView<'_>, unit: usize, params: &AmParams, rng: &mut Rng) -> Result<AMImage> {
    view.check_unit(unit)?;
    if !(params.step_size > 0.0 && params.step_size.is_finite()) {
        return Err(Error::Param(format!(
            "step size must be positive, got {}",
            params.step_size
        )));
    }
    let shape = view.model.input_shape();
    let numel = shape.iter().product::<usize>();
    let start: Vec<f64> = (0..numel).map(|_| rng.uniform_range(0.45, 0.55)).collect();
    let mut image = Tensor::new(&shape, start)?;
    let (mut objective, mut grad) = view.objective_and_grad(&image, unit)?;
    let initial_objective = objective;
    let mut step_size = params.step_size;
    let mut trajectory = Vec::with_capacity(params.steps);
    for _ in 0..params.steps {
        let rms = (grad.data().iter().map(|g| g * g).sum::<f64>() / numel as f64).sqrt();
        if rms == 0.0 || !rms.is_finite() {
            trajectory.push(objective);
            continue;
        }
        let mut candidate = image.clone();
        for (c, g) in candidate.data_mut().iter_mut().zip(grad.data()) {
            *c = (*c + step_size * g / rms).clamp(0.0, 1.0);
        }
        let (value, next_grad) = view.objective_and_grad(&candidate, unit)?;
        if value >= objective {
            image = candidate;
            objective = value;
            grad = next_grad;
        } else {
            step_size *= 0.5;
        }
        trajectory.push(objective);
    }
    Ok(AMImage {
        image,
        objective,
        initial_objective,
        steps: params.steps,
        trajectory,
    })
}

/// Image maximizing the mean pre-activation of one convolution filter.
/// `layer` is a model layer index.
pub fn maximize_filter(
    model: &CnnModel,
    layer: usize,
    filter: usize,
    params: &AmParams,
    rng: &mut Rng,
) -> Result<AMImage> {
    let view = linear_view(model, layer)?;
    if !matches!(model.layers()[layer], Layer::Conv2d { .. }) {
        return Err(Error::Index(format!(
            "layer {layer} is not a convolution layer"
        )));
    }
    ascend(view, filter, params, rng)
}

/// Image maximizing the raw logit of `class`.
pub fn maximize_class(
    model: &CnnModel,
    class: usize,
    params: &AmParams,
    rng: &mut Rng,
) -> Result<AMImage> {
    let view = linear_view(model, model.logits_layer())?;
    if class >= view.units() {
        return Err(Error::Index(format!("class {class} of {}", view.units())));
    }
    ascend(view, class, params, rng)
}
