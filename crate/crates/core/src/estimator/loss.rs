use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::EstimatorError;

/// Weighted squared error over `(v_x, v_y, v_z, h)`, summed over quantities
/// and averaged over the batch. Returns the loss and `dL/d(pred)`.
pub fn regression_loss(pred: ArrayView2<f64>, truth: ArrayView2<f64>, weights: &[f64; 4]) -> (f64, Array2<f64>) {
    let b = pred.nrows().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    for ((i, q), &p) in pred.indexed_iter() {
        let d = p - truth[(i, q)];
        loss += weights[q] * d * d;
        grad[(i, q)] = 2.0 * weights[q] * d / b;
    }
    (loss / b, grad)
}

#[derive(Debug, Clone)]
pub struct InfoNce {
    pub loss: f64,
    pub grad_anchors: Array2<f64>,
    pub grad_targets: Array2<f64>,
}

fn unit_rows(x: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>), EstimatorError> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(EstimatorError::ZeroNorm);
    }
    let unit = &x / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Back through `u = x / |x|`: `dx = (du - u (u . du)) / |x|`.
fn unit_backward(unit: &Array2<f64>, norms: &Array1<f64>, du: &Array2<f64>) -> Array2<f64> {
    let dots = (unit * du).sum_axis(Axis(1));
    let mut dx = du - &(unit * &dots.view().insert_axis(Axis(1)));
    dx /= &norms.view().insert_axis(Axis(1));
    dx
}

/// Contrastive loss with cosine similarity and temperature `tau`. Anchor `i`
/// is scored against every target, `positives[i]` being the matching one.
pub fn infonce_loss(
    anchors: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    positives: &[usize],
    tau: f64,
) -> Result<InfoNce, EstimatorError> {
    let n = anchors.nrows();
    if n < 2 || targets.nrows() < 2 {
        return Err(EstimatorError::BatchTooSmall(n.min(targets.nrows())));
    }
    if positives.len() != n || positives.iter().any(|&p| p >= targets.nrows()) {
        return Err(EstimatorError::Positives);
    }
    if anchors.ncols() != targets.ncols() {
        return Err(EstimatorError::Dimension {
            expected: anchors.ncols(),
            got: targets.ncols(),
        });
    }
    let (ua, na) = unit_rows(anchors)?;
    let (ut, nt) = unit_rows(targets)?;
    let logits = ua.dot(&ut.t()) / tau;
    let mut loss = 0.0;
    // dL/dlogits = (softmax - onehot) / n
    let mut g = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[positives[i]];
        for (j, &v) in row.iter().enumerate() {
            g[(i, j)] = (v - lse).exp() / n as f64;
        }
        g[(i, positives[i])] -= 1.0 / n as f64;
    }
    let g = g / tau;
    let grad_ua = g.dot(&ut);
    let grad_ut = g.t().dot(&ua);
    Ok(InfoNce {
        loss: loss / n as f64,
        grad_anchors: unit_backward(&ua, &na, &grad_ua),
        grad_targets: unit_backward(&ut, &nt, &grad_ut),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regression_arithmetic() {
        let t = array![[0.1, -0.2, 0.3, 0.5]];
        let (l, _) = regression_loss(t.view(), t.view(), &[1.0; 4]);
        assert_eq!(l, 0.0);
        let p = &t + 0.1;
        let (l, g) = regression_loss(p.view(), t.view(), &[1.0; 4]);
        assert!((l - 0.04).abs() < 1e-15);
        assert!(g.iter().all(|v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn identical_embeddings_give_log_n() {
        for n in [2usize, 5, 64] {
            let e = Array2::from_elem((n, 16), 0.3);
            let pos: Vec<usize> = (0..n).collect();
            let r = infonce_loss(e.view(), e.view(), &pos, 0.1).unwrap();
            assert!((r.loss - (n as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn separated_pair_closed_form() {
        let a = array![[1.0, 0.0], [-1.0, 0.0]];
        let r = infonce_loss(a.view(), a.view(), &[0, 1], 0.1).unwrap();
        let expect = (1.0 + (-20f64).exp()).ln();
        assert!((r.loss - expect).abs() < 1e-15, "{} vs {expect}", r.loss);
        assert!(r.loss > 0.0);
    }

    #[test]
    fn rejects_bad_batches() {
        let one = Array2::from_elem((1, 4), 1.0);
        assert!(matches!(infonce_loss(one.view(), one.view(), &[0], 0.1), Err(EstimatorError::BatchTooSmall(1))));
        let z = Array2::zeros((2, 4));
        assert!(matches!(infonce_loss(z.view(), z.view(), &[0, 1], 0.1), Err(EstimatorError::ZeroNorm)));
    }

    #[test]
    fn infonce_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
        let pos = [1, 0, 3, 2];
        let r = infonce_loss(a.view(), t.view(), &pos, 0.1).unwrap();
        let eps = 1e-6;
        for which in 0..2 {
            let (base, grad) = if which == 0 { (&a, &r.grad_anchors) } else { (&t, &r.grad_targets) };
            for idx in 0..base.len() {
                let bump = |d: f64| {
                    let mut m = base.clone();
                    *m.iter_mut().nth(idx).unwrap() += d;
                    let (aa, tt) = if which == 0 { (m, t.clone()) } else { (a.clone(), m) };
                    infonce_loss(aa.view(), tt.view(), &pos, 0.1).unwrap().loss
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let an = *grad.iter().nth(idx).unwrap();
                assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "{which}/{idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn loss_is_bounded_below_by_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let t = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
            let r = infonce_loss(a.view(), t.view(), &(0..8).collect::<Vec<_>>(), 0.1).unwrap();
            assert!(r.loss >= 0.0 && r.loss <= 8f64.ln() + 2.0 / 0.1);
        }
    }
}
