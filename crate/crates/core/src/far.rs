//! Feature-alignment regularizer: Gram-matrix channel statistics of an
//! image's trainable features, linearly mapped onto the statistics of a
//! frozen reference encoder.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::imagedata::ImageTensor;
use crate::models::{ImageEncoder, ReferenceEncoder};
use crate::nn::{Linear, ParamStore};

/// Smoothing of the Euclidean norm so its gradient stays finite at zero.
pub const NORM_EPS: f64 = 1e-8;

/// `(B, C, H, W)` → `(B, C, C)` with `G_jk = Σ_p e_j[p]·e_k[p] / (H·W)`.
pub fn gram(e: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = e.dims4()?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::Shape("gram of an empty feature map".into()));
    }
    let f = e.reshape((b, c, hw))?;
    Ok((f.matmul(&f.t()?)? / hw as f64)?)
}

/// Row mean and row max of the Gram matrix, each `(B, C)`.
pub fn descriptor(e: &Tensor) -> Result<(Tensor, Tensor)> {
    let g = gram(e)?;
    Ok((g.mean(2)?, g.max(2)?))
}

/// `sqrt(Σ v² + ε²) − ε` over the last dimension.
fn smooth_norm(v: &Tensor) -> Result<Tensor> {
    Ok(((v.sqr()?.sum(v.rank() - 1)? + NORM_EPS * NORM_EPS)?.sqrt()? - NORM_EPS)?)
}

/// Learnable maps `T_a`, `T_m` from `C_i` encoder channels to the `C_c`
/// reference channels.
pub struct AlignmentMaps {
    store: ParamStore,
    t_avg: Linear,
    t_max: Linear,
    c_in: usize,
    c_out: usize,
}

impl AlignmentMaps {
    pub const ARCH: &'static str = "far-maps";

    pub fn new(c_in: usize, c_out: usize, dtype: DType, seed: u64) -> Result<Self> {
        let store = ParamStore::new(dtype, seed);
        let vb = store.root();
        let t_avg = Linear::new(&vb.pp("t_avg"), c_in, c_out)?;
        let t_max = Linear::new(&vb.pp("t_max"), c_in, c_out)?;
        Ok(Self {
            store,
            t_avg,
            t_max,
            c_in,
            c_out,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.c_in, self.c_out)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Per-sample loss `(B,)`.
    pub fn loss_per_sample(&self, e_im: &Tensor, e_cl: &Tensor) -> Result<Tensor> {
        let (ci, cc) = (e_im.dim(1)?, e_cl.dim(1)?);
        if ci != self.c_in || cc != self.c_out {
            return Err(Error::Shape(format!(
                "alignment maps are {}→{}, features have {ci} and {cc} channels",
                self.c_in, self.c_out
            )));
        }
        let (avg_im, max_im) = descriptor(e_im)?;
        let (avg_cl, max_cl) = descriptor(e_cl)?;
        let da = (self.t_avg.forward(&avg_im)? - avg_cl)?;
        let dm = (self.t_max.forward(&max_im)? - max_cl)?;
        Ok((smooth_norm(&da)? + smooth_norm(&dm)?)?)
    }

    /// Batch mean of the per-sample loss.
    pub fn far_loss(&self, e_im: &Tensor, e_cl: &Tensor) -> Result<Tensor> {
        Ok(self.loss_per_sample(e_im, e_cl)?.mean_all()?)
    }
}

/// `Φ_far(y)` for a batch `(B, 3, H, W)`, per sample.
pub fn phi_far_batch(
    y: &Tensor,
    e_img: &ImageEncoder,
    reference: &ReferenceEncoder,
    maps: &AlignmentMaps,
) -> Result<Tensor> {
    let e_im = e_img.forward(y)?;
    let e_cl = reference.forward(y)?;
    maps.loss_per_sample(&e_im, &e_cl)
}

/// `Φ_far` of a single image as a plain number.
pub fn phi_far(
    y: &ImageTensor,
    e_img: &ImageEncoder,
    reference: &ReferenceEncoder,
    maps: &AlignmentMaps,
) -> Result<f64> {
    let t = y.to_tensor(maps.store().dtype())?;
    let v = phi_far_batch(&t, e_img, reference, maps)?;
    Ok(v.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
}
