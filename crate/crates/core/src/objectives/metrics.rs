//! Scale-invariant SDR and permutation-invariant assignment.
//!
//! Two forms of the metric live here. The plain function computes the
//! value in f64 for reporting: exact special cases, result clamped to
//! ±60 dB. The graph form builds the negated metric as a differentiable
//! loss; it stabilizes both log arguments with a small epsilon instead of
//! clamping, so gradients never die at the clamp.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Reporting range: values outside ±60 dB carry no information about
/// separation quality and are dominated by float noise.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

const LOSS_EPS: f64 = 1e-12;

/// Scale-invariant SDR of `estimate` against `reference`, in dB.
///
/// The reference is rescaled by `alpha = <e,r>/<r,r>` before comparison,
/// so the metric ignores gain. Accumulates in f64 regardless of `T`.
/// A silent reference is an error; a zero projection reports −60 dB and
/// an exact (scaled) match +60 dB.
pub fn si_sdr<T: Scalar>(estimate: &[T], reference: &[T]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "si-sdr length mismatch: estimate {}, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("si-sdr of empty signals".into()));
    }
    let mut rr = 0.0f64;
    let mut er = 0.0f64;
    for (&e, &r) in estimate.iter().zip(reference) {
        let (e, r) = (e.to_f64v(), r.to_f64v());
        rr += r * r;
        er += e * r;
    }
    if rr == 0.0 {
        return Err(Error::InvalidArgument(
            "si-sdr reference is silent".into(),
        ));
    }
    let alpha = er / rr;
    let num = alpha * alpha * rr;
    if num == 0.0 {
        return Ok(-SI_SDR_CLAMP_DB);
    }
    let mut den = 0.0f64;
    for (&e, &r) in estimate.iter().zip(reference) {
        let d = e.to_f64v() - alpha * r.to_f64v();
        den += d * d;
    }
    if den == 0.0 {
        return Ok(SI_SDR_CLAMP_DB);
    }
    Ok((10.0 * (num / den).log10()).clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))
}

/// SI-SDR gain over using the raw mixture as the estimate.
pub fn si_sdr_improvement<T: Scalar>(
    estimate: &[T],
    mixture: &[T],
    reference: &[T],
) -> Result<f64> {
    Ok(si_sdr(estimate, reference)? - si_sdr(mixture, reference)?)
}

/// `matrix[i][j]` = SI-SDR of estimate `i` against reference `j`.
pub fn si_sdr_matrix<T: Scalar>(
    estimates: &[Tensor<T>],
    references: &[Tensor<T>],
) -> Result<Vec<Vec<f64>>> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pit needs matching non-empty sets, got {} estimates and {} references",
            estimates.len(),
            references.len()
        )));
    }
    estimates
        .iter()
        .map(|e| {
            references
                .iter()
                .map(|r| si_sdr(e.as_slice(), r.as_slice()))
                .collect()
        })
        .collect()
}

/// Assignment `perm[i] = j` (estimate `i` explains reference `j`)
/// maximizing the mean of `matrix[i][perm[i]]`, by exhaustive search.
/// Returns the permutation and its mean score.
pub fn best_permutation(matrix: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(
            "permutation search needs a square non-empty score matrix".into(),
        ));
    }
    if n > 8 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive permutation search is limited to 8 sources, got {n}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = p.iter().enumerate().map(|(i, &j)| matrix[i][j]).sum();
        if best.as_ref().map_or(true, |(_, b)| score > *b) {
            best = Some((p.to_vec(), score));
        }
    });
    let (perm, total) = best.unwrap();
    Ok((perm, total / n as f64))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Differentiable negated SI-SDR: `10*log10(den/num)` with both log
/// arguments offset by 1e-12. `reference` is typically a constant node.
pub fn si_sdr_loss<T: Scalar>(g: &mut Graph<T>, estimate: Var, reference: Var) -> Result<Var> {
    let (es, rs) = (g.value(estimate).shape(), g.value(reference).shape());
    if es != rs {
        return Err(Error::ShapeMismatch {
            op: "si-sdr loss",
            expected: rs.to_vec(),
            got: es.to_vec(),
        });
    }
    let rr_val: f64 = g.value(reference).as_slice().iter().map(|r| {
        let r = r.to_f64v();
        r * r
    }).sum();
    if rr_val == 0.0 {
        return Err(Error::InvalidArgument(
            "si-sdr loss reference is silent".into(),
        ));
    }
    let eps = g.constant(Tensor::scalar(T::from_f64(LOSS_EPS)));
    let r2 = g.mul(reference, reference)?;
    let rr = g.sum(r2);
    let er_prod = g.mul(estimate, reference)?;
    let er = g.sum(er_prod);
    let alpha = g.div(er, rr)?;
    let target = g.mul(alpha, reference)?;
    let t2 = g.mul(target, target)?;
    let num_sum = g.sum(t2);
    let num = g.add(num_sum, eps)?;
    let diff = g.sub(estimate, target)?;
    let d2 = g.mul(diff, diff)?;
    let den_sum = g.sum(d2);
    let den = g.add(den_sum, eps)?;
    let ln_num = g.ln(num);
    let ln_den = g.ln(den);
    let ratio = g.sub(ln_den, ln_num)?;
    Ok(g.scale(ratio, T::from_f64(10.0 / std::f64::consts::LN_10)))
}

/// Order-preserving loss: estimate `i` is scored against reference `i`.
/// This is the audio-visual objective — the output order is anchored to
/// the video streams, so no permutation search happens.
pub fn ordered_loss<T: Scalar>(
    g: &mut Graph<T>,
    estimates: &[Var],
    references: &[Tensor<T>],
) -> Result<Var> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "ordered loss needs matching non-empty sets, got {} estimates and {} references",
            estimates.len(),
            references.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&e, r) in estimates.iter().zip(references) {
        let shape = g.value(e).shape().to_vec();
        let r = g.constant(r.reshape(shape)?);
        let l = si_sdr_loss(g, e, r)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(g.scale(total.unwrap(), T::from_f64(1.0 / estimates.len() as f64)))
}

/// Mean SI-SDR under the order-preserving assignment.
pub fn ordered_si_sdr<T: Scalar>(
    estimates: &[Tensor<T>],
    references: &[Tensor<T>],
) -> Result<f64> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::InvalidArgument(
            "ordered si-sdr needs matching non-empty sets".into(),
        ));
    }
    let mut total = 0.0;
    for (e, r) in estimates.iter().zip(references) {
        total += si_sdr(e.as_slice(), r.as_slice())?;
    }
    Ok(total / estimates.len() as f64)
}

/// Permutation-invariant loss: pick the assignment on metric values, then
/// build the graph loss through the chosen pairs only — gradients flow
/// solely through the winning permutation. Returns the mean loss node and
/// the assignment.
pub fn pit_loss<T: Scalar>(
    g: &mut Graph<T>,
    estimates: &[Var],
    references: &[Tensor<T>],
) -> Result<(Var, Vec<usize>)> {
    if estimates.len() != references.len() || estimates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "pit loss needs matching non-empty sets, got {} estimates and {} references",
            estimates.len(),
            references.len()
        )));
    }
    let est_values: Vec<Tensor<T>> = estimates.iter().map(|&v| g.value(v).clone()).collect();
    let ref_values: Vec<Tensor<T>> = references
        .iter()
        .zip(&est_values)
        .map(|(r, e)| {
            if r.numel() != e.numel() {
                return Err(Error::ShapeMismatch {
                    op: "pit loss",
                    expected: e.shape().to_vec(),
                    got: r.shape().to_vec(),
                });
            }
            r.reshape(e.shape().to_vec())
        })
        .collect::<Result<_>>()?;
    let matrix = si_sdr_matrix(&est_values, &ref_values)?;
    let (perm, _) = best_permutation(&matrix)?;

    let mut total: Option<Var> = None;
    for (i, &j) in perm.iter().enumerate() {
        let r = g.constant(ref_values[j].clone());
        let l = si_sdr_loss(g, estimates[i], r)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    let mean = g.scale(total.unwrap(), T::from_f64(1.0 / perm.len() as f64));
    Ok((mean, perm))
}
