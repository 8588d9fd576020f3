use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Variance floor used when fitting per-channel Gaussians.
pub const KL_VARIANCE_FLOOR: f64 = 1e-12;

/// Principal-subspace projection over the channel axis, shrinking `c` channels to `c / rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCodec {
    pub rate: usize,
    pub mean: Vec<f64>,
    /// `c × (c / rate)`, orthonormal columns, leading components first.
    pub components: DMatrix<f64>,
}

/// Fits the leading `c / rate` principal directions of the cell channel vectors.
pub fn fit_codec(samples: &[Tensor3], rate: usize) -> Result<LinearCodec> {
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientSamples {
            needed: rate.max(1),
            got: 0,
        });
    };
    let c = first.channels();
    if rate == 0 || c == 0 || c % rate != 0 {
        return Err(Error::config(
            "diffusion.rate",
            format!("must divide the channel count {c}, got {rate}"),
        ));
    }
    for s in samples {
        if s.channels() != c {
            return Err(Error::ShapeMismatch {
                expected: first.shape(),
                got: s.shape(),
            });
        }
    }
    let n: usize = samples.iter().map(|s| s.height() * s.width()).sum();
    if n < rate {
        return Err(Error::InsufficientSamples { needed: rate, got: n });
    }
    let cells = || samples.iter().flat_map(|s| s.cells());

    let mut mean = DVector::<f64>::zeros(c);
    for v in cells() {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(c, c);
    for v in cells() {
        let d = DVector::from_column_slice(v) - &mean;
        cov.syger(1.0, &d, &d, 1.0);
    }
    cov /= n as f64;
    cov.fill_upper_triangle_with_lower_triangle();

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let d = c / rate;
    let mut components = DMatrix::zeros(c, d);
    for (j, &i) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            col.neg_mut();
        }
        components.set_column(j, &col);
    }
    Ok(LinearCodec {
        rate,
        mean: mean.as_slice().to_vec(),
        components,
    })
}

impl LinearCodec {
    pub fn channels(&self) -> usize {
        self.components.nrows()
    }

    pub fn latent_channels(&self) -> usize {
        self.components.ncols()
    }

    pub fn encode(&self, feature: &Tensor3) -> Result<Tensor3> {
        let (h, w, c) = feature.shape();
        if c != self.channels() {
            return Err(Error::ShapeMismatch {
                expected: (h, w, self.channels()),
                got: feature.shape(),
            });
        }
        let d = self.latent_channels();
        let mut out = Vec::with_capacity(h * w * d);
        let mut centered = vec![0.0; c];
        for cell in feature.cells() {
            for ((dst, v), m) in centered.iter_mut().zip(cell).zip(&self.mean) {
                *dst = v - m;
            }
            for j in 0..d {
                out.push(
                    self.components
                        .column(j)
                        .iter()
                        .zip(&centered)
                        .map(|(a, b)| a * b)
                        .sum(),
                );
            }
        }
        Tensor3::from_vec(h, w, d, out)
    }

    pub fn decode(&self, latent: &Tensor3) -> Result<Tensor3> {
        let (h, w, d) = latent.shape();
        if d != self.latent_channels() {
            return Err(Error::ShapeMismatch {
                expected: (h, w, self.latent_channels()),
                got: latent.shape(),
            });
        }
        let c = self.channels();
        let mut out = Vec::with_capacity(h * w * c);
        for z in latent.cells() {
            for k in 0..c {
                let row = self.components.row(k);
                out.push(self.mean[k] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor3::from_vec(h, w, c, out)
    }

    /// Sum of squared differences between `feature` and its round trip.
    pub fn reconstruction_error(&self, feature: &Tensor3) -> Result<f64> {
        let rec = self.decode(&self.encode(feature)?)?;
        Ok(feature
            .as_slice()
            .iter()
            .zip(rec.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

fn channel_moments(f: &Tensor3) -> Vec<(f64, f64)> {
    let c = f.channels();
    let n = (f.height() * f.width()) as f64;
    let mut sum = vec![0.0; c];
    for cell in f.cells() {
        for (s, v) in sum.iter_mut().zip(cell) {
            *s += v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut var = vec![0.0; c];
    for cell in f.cells() {
        for ((acc, v), m) in var.iter_mut().zip(cell).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    mean.into_iter()
        .zip(var)
        .map(|(m, v)| (m, (v / n).max(KL_VARIANCE_FLOOR)))
        .collect()
}

/// `Σ_k KL(N(μ_k, σ_k²) ‖ N(μ̃_k, σ̃_k²))` with one Gaussian fitted per channel.
///
/// Variances are floored at [`KL_VARIANCE_FLOOR`] so constant channels stay finite.
pub fn cmp_loss(feature: &Tensor3, reconstructed: &Tensor3) -> Result<f64> {
    feature.ensure_same_shape(reconstructed)?;
    if feature.is_empty() {
        return Ok(0.0);
    }
    let p = channel_moments(feature);
    let q = channel_moments(reconstructed);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .map(|(&(mp, vp), &(mq, vq))| 0.5 * (vp / vq + (mq - mp) * (mq - mp) / vq - 1.0 + (vq / vp).ln()))
        .sum();
    Ok(kl.max(0.0))
}

/// Channel-axis concatenation `[ego | others…]`.
pub fn fuse_condition(ego: &Tensor3, others: &[Tensor3]) -> Result<Tensor3> {
    let (h, w, _) = ego.shape();
    for o in others {
        if o.height() != h || o.width() != w {
            return Err(Error::ShapeMismatch {
                expected: (h, w, o.channels()),
                got: o.shape(),
            });
        }
    }
    let total: usize = ego.channels() + others.iter().map(Tensor3::channels).sum::<usize>();
    let mut data = Vec::with_capacity(h * w * total);
    let mut iters: Vec<_> = std::iter::once(ego).chain(others).map(|t| t.cells()).collect();
    for _ in 0..h * w {
        for it in iters.iter_mut() {
            data.extend_from_slice(it.next().unwrap_or(&[]));
        }
    }
    Tensor3::from_vec(h, w, total, data)
}

/// `l_ldm + λ_cls·l_cls + λ_reg·l_reg`.
pub fn total_loss(l_ldm: f64, l_cls: f64, l_reg: f64, lambda_cls: f64, lambda_reg: f64) -> Result<f64> {
    let v = l_ldm + lambda_cls * l_cls + lambda_reg * l_reg;
    if !v.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok(v)
}
