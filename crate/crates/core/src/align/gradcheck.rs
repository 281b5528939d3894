use ndarray::{Array2, ArrayView2};

use super::losses::{dice_grad, dice_loss, focal_grad, sigmoid_focal_loss, FocalParams};

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn numeric_gradient(f: &dyn Differentiable, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f.value(&probe);
            probe[i] = x[i] - h;
            let down = f.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` between analytic and numeric
/// gradient entries.
pub fn grad_check(f: &dyn Differentiable, x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0 && h <= 1e-3, "step must lie in (0, 1e-3]");
    let analytic = f.gradient(x);
    let numeric = numeric_gradient(f, x, h);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn as_matrix(x: &[f64], shape: (usize, usize)) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape(shape, x).expect("parameter length matches shape")
}

/// Focal loss as a function of its logits.
pub struct FocalObjective {
    pub targets: Array2<f64>,
    pub ignore: Option<Array2<bool>>,
    pub params: FocalParams,
}

impl Differentiable for FocalObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let z = as_matrix(x, self.targets.dim());
        sigmoid_focal_loss(z, self.targets.view(), self.ignore.as_ref().map(|m| m.view()), self.params).unwrap()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let z = as_matrix(x, self.targets.dim());
        focal_grad(z, self.targets.view(), self.ignore.as_ref().map(|m| m.view()), self.params)
            .unwrap()
            .into_iter()
            .collect()
    }
}

/// Dice loss as a function of its logits.
pub struct DiceObjective {
    pub targets: Array2<f64>,
    pub eps: f64,
}

impl Differentiable for DiceObjective {
    fn value(&self, x: &[f64]) -> f64 {
        dice_loss(as_matrix(x, self.targets.dim()), self.targets.view(), self.eps).unwrap()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        dice_grad(as_matrix(x, self.targets.dim()), self.targets.view(), self.eps)
            .unwrap()
            .into_iter()
            .collect()
    }
}

/// Focal loss of `A Bᵀ / η` as a function of `A`.
pub struct SimilarityFocalObjective {
    pub b: Array2<f64>,
    pub eta: f64,
    pub targets: Array2<f64>,
    pub params: FocalParams,
}

impl SimilarityFocalObjective {
    fn a_shape(&self) -> (usize, usize) {
        (self.targets.nrows(), self.b.ncols())
    }

    fn logits(&self, x: &[f64]) -> Array2<f64> {
        as_matrix(x, self.a_shape()).dot(&self.b.t()) / self.eta
    }
}

impl Differentiable for SimilarityFocalObjective {
    fn value(&self, x: &[f64]) -> f64 {
        sigmoid_focal_loss(self.logits(x).view(), self.targets.view(), None, self.params).unwrap()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let ds = focal_grad(self.logits(x).view(), self.targets.view(), None, self.params).unwrap();
        (ds.dot(&self.b) / self.eta).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn focal_at_zero() {
        let f = FocalObjective {
            targets: array![[1.0]],
            ignore: None,
            params: FocalParams::default(),
        };
        let h = 1e-5;
        let fd = (f.value(&[h]) - f.value(&[-h])) / (2.0 * h);
        assert!((f.gradient(&[0.0])[0] - fd).abs() < 1e-5);
        assert!(grad_check(&f, &[0.0], h) < 1e-5);
    }

    #[test]
    fn dice_random_eight_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Array2::from_shape_fn((1, 8), |_| f64::from(rng.gen_bool(0.5) as u8));
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        assert!(grad_check(&DiceObjective { targets: t, eps: 1.0 }, &x, 1e-5) < 1e-5);
    }

    #[test]
    fn ignored_entries_have_zero_gradient() {
        let f = FocalObjective {
            targets: array![[1.0, 0.0]],
            ignore: Some(array![[false, true]]),
            params: FocalParams::default(),
        };
        let g = f.gradient(&[0.4, 1.3]);
        assert_eq!(g[1], 0.0);
        assert!(numeric_gradient(&f, &[0.4, 1.3], 1e-5)[1].abs() < 1e-12);
    }

    #[test]
    fn similarity_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-0.3..0.3));
        let t = Array2::from_shape_fn((2, 4), |_| f64::from(rng.gen_bool(0.4) as u8));
        let f = SimilarityFocalObjective {
            b,
            eta: 0.1,
            targets: t,
            params: FocalParams::default(),
        };
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.3..0.3)).collect();
        assert!(grad_check(&f, &x, 1e-5) < 1e-4);
    }
}
