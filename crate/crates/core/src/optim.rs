//! Plain stochastic gradient descent honoring per-parameter freeze flags.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// One SGD update: `value -= lr * grad` for every non-frozen parameter, then
/// every gradient is reset to zero.
///
/// Gradients are checked before anything is modified; a NaN or infinite
/// gradient aborts the step and leaves all parameters untouched.
pub fn sgd_step<'a, I>(params: I, learning_rate: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {learning_rate}"
        )));
    }
    if let Some(i) = params.iter().position(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient of parameter #{i}"),
        });
    }
    for p in params.iter_mut() {
        if !p.frozen {
            for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *v -= learning_rate * g;
            }
        }
        p.zero_grad();
    }
    Ok(())
}
