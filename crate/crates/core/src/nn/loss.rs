use crate::error::{Error, Result};
use crate::geometry::ControlVector;

use super::tensor::Tensor;

/// Added under the square root in the gradient so that a perfect prediction
/// has a finite derivative.
pub const LOSS_EPS: f32 = 1e-8;

fn check(pred: &Tensor, truth: &[ControlVector]) -> Result<usize> {
    let n = truth.len();
    if n == 0 || pred.shape() != [n, 2] {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match {n} labels",
            pred.shape()
        )));
    }
    Ok(n)
}

/// Mean Euclidean distance between predicted and true control vectors.
pub fn euclidean_loss(pred: &Tensor, truth: &[ControlVector]) -> Result<f32> {
    let n = check(pred, truth)?;
    let sum: f64 = pred
        .data()
        .chunks(2)
        .zip(truth)
        .map(|(p, t)| {
            let dx = p[0] as f64 - t.mx;
            let dy = p[1] as f64 - t.my;
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    Ok((sum / n as f64) as f32)
}

/// Gradient of [`euclidean_loss`] with respect to the prediction.
pub fn euclidean_loss_grad(pred: &Tensor, truth: &[ControlVector]) -> Result<Tensor> {
    let n = check(pred, truth)?;
    let mut g = Tensor::zeros(pred.shape());
    for ((gi, p), t) in g.data_mut().chunks_mut(2).zip(pred.data().chunks(2)).zip(truth) {
        let dx = p[0] - t.mx as f32;
        let dy = p[1] - t.my as f32;
        let d = (dx * dx + dy * dy + LOSS_EPS).sqrt() * n as f32;
        gi[0] = dx / d;
        gi[1] = dy / d;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(mx: f64, my: f64) -> ControlVector {
        ControlVector { mx, my }
    }

    #[test]
    fn hand_computed_values() {
        let pred = Tensor::from_vec(&[2, 2], vec![0.3, 0.4, 0.0, 0.0]).unwrap();
        let truth = [cv(0.0, 0.0), cv(0.0, 0.0)];
        assert!((euclidean_loss(&pred, &truth).unwrap() - 0.25).abs() < 1e-7);
        let g = euclidean_loss_grad(&pred, &truth).unwrap();
        assert!((g.data()[0] - 0.3).abs() < 1e-5 && (g.data()[1] - 0.4).abs() < 1e-5);
        // Zero residual gives a zero, finite gradient.
        assert_eq!(&g.data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let truth = [cv(0.1, -0.2), cv(-0.5, 0.3), cv(0.0, 0.9)];
        let base = vec![0.4f32, 0.1, -0.2, 0.25, 0.3, -0.6];
        let pred = Tensor::from_vec(&[3, 2], base.clone()).unwrap();
        let g = euclidean_loss_grad(&pred, &truth).unwrap();
        let h = 1e-3f32;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let lu = euclidean_loss(&Tensor::from_vec(&[3, 2], up).unwrap(), &truth).unwrap();
            let ld = euclidean_loss(&Tensor::from_vec(&[3, 2], dn).unwrap(), &truth).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-3, "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn mismatched_batch_is_an_error() {
        let pred = Tensor::zeros(&[2, 2]);
        assert!(euclidean_loss(&pred, &[cv(0.0, 0.0)]).is_err());
        assert!(euclidean_loss(&Tensor::zeros(&[0, 2]), &[]).is_err());
    }
}
