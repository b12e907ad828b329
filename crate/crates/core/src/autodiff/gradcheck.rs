use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{Graph, Var};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub enum GradCheckError {
    /// The function was not finite at a perturbed point.
    NonFinite { coordinate: usize },
    /// `eps` must be positive and finite.
    InvalidStep(f64),
    Graph(Error),
}

impl From<Error> for GradCheckError {
    fn from(e: Error) -> Self {
        GradCheckError::Graph(e)
    }
}

impl fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradCheckError::NonFinite { coordinate } => {
                write!(f, "function not finite when perturbing coordinate {coordinate}")
            }
            GradCheckError::InvalidStep(eps) => write!(f, "finite-difference step {eps} must be > 0"),
            GradCheckError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GradCheckError {}

fn scalar_of(g: &Graph, v: Var) -> Result<f64, Error> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss {
            shape: t.shape().to_vec(),
        });
    }
    Ok(t.data()[0])
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    crate::math::abs(analytic - numeric) / crate::math::abs(numeric).max(1.0)
}

/// Compares the reverse-mode gradient of a scalar function of one tensor
/// with central differences at `point`.
///
/// Returns `max_i |autodiff_i - fd_i| / max(1, |fd_i|)` over every coordinate
/// (or only over `coords` when given).
pub fn grad_check<F>(
    f: F,
    point: &Tensor,
    eps: f64,
    coords: Option<&[usize]>,
) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, Error>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GradCheckError::InvalidStep(eps));
    }
    let mut g = Graph::new();
    let x = g.variable(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .get(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.numel()]);

    let eval = |p: &Tensor| -> Result<f64, Error> {
        let mut g = Graph::new();
        let x = g.constant(p.clone());
        let y = f(&mut g, x)?;
        scalar_of(&g, y)
    };

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.numel()).collect();
            &all
        }
    };
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut p = point.clone();
        p.data_mut()[i] = point.data()[i] + eps;
        let fp = eval(&p)?;
        p.data_mut()[i] = point.data()[i] - eps;
        let fm = eval(&p)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GradCheckError::NonFinite { coordinate: i });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Same check with respect to entries of a parameter store.
///
/// `coords` lists `(parameter, flat element index)` pairs to perturb.
pub fn grad_check_params<F>(
    store: &ParamStore,
    coords: &[(ParamId, usize)],
    eps: f64,
    f: F,
) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, Error>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GradCheckError::InvalidStep(eps));
    }
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    let grads = g.backward(y)?;
    let mut analytic: Vec<Option<&[f64]>> = vec![None; store.len()];
    for (id, v) in g.params() {
        analytic[id.index()] = grads.get(v);
    }

    let eval = |s: &ParamStore| -> Result<f64, Error> {
        let mut g = Graph::new();
        let y = f(&mut g, s)?;
        scalar_of(&g, y)
    };

    let mut perturbed = store.clone();
    let mut worst: f64 = 0.0;
    for (n, &(id, i)) in coords.iter().enumerate() {
        let orig = store.get(id).data()[i];
        perturbed.get_mut(id).data_mut()[i] = orig + eps;
        let fp = eval(&perturbed)?;
        perturbed.get_mut(id).data_mut()[i] = orig - eps;
        let fm = eval(&perturbed)?;
        perturbed.get_mut(id).data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GradCheckError::NonFinite { coordinate: n });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[id.index()].map_or(0.0, |g| g[i]);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
