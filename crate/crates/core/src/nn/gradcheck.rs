//! Central finite-difference checks of autograd gradients.

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub var: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub probes: Vec<Probe>,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps coordinates whose true
/// gradient is essentially zero from dominating.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn set_element(var: &Var, index: usize, value: f64) -> Result<()> {
    let t = var.as_tensor();
    let mut data = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    data[index] = value;
    let next = Tensor::from_vec(data, t.dims(), t.device())?.to_dtype(t.dtype())?;
    var.set(&next)?;
    Ok(())
}

fn get_element(var: &Var, index: usize) -> Result<f64> {
    Ok(var.as_tensor().flatten_all()?.get(index)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Compares `d loss / d vars` from autograd with central differences of
/// step `h` at `coords` coordinates drawn uniformly over all elements.
/// Values are restored afterwards.
pub fn check(
    vars: &[Var],
    loss: impl Fn() -> Result<Tensor>,
    coords: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let sizes: Vec<usize> = vars.iter().map(|v| v.as_tensor().elem_count()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("no variables to check".into()));
    }
    let grads = loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    for _ in 0..coords {
        let mut flat = rng.random_range(0..total);
        let mut vi = 0;
        while flat >= sizes[vi] {
            flat -= sizes[vi];
            vi += 1;
        }
        let var = &vars[vi];
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.get(flat)?.to_dtype(DType::F64)?.to_scalar::<f64>()?,
            None => 0.0,
        };
        let orig = get_element(var, flat)?;
        set_element(var, flat, orig + h)?;
        let plus = scalar(&loss()?)?;
        set_element(var, flat, orig - h)?;
        let minus = scalar(&loss()?)?;
        set_element(var, flat, orig)?;
        let numeric = (plus - minus) / (2.0 * h);
        out.probes.push(Probe {
            var: vi,
            index: flat,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric, 1e-6),
        });
    }
    Ok(out)
}
