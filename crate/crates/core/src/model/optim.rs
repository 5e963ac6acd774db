use crate::layers::ParamStore;
use crate::tensor::{Float, Tensor};

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·epoch/total))`.
pub fn cosine_lr(lr_max: f64, lr_min: f64, epoch: usize, total: usize) -> f64 {
    let t = epoch as f64 / total.max(1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Stochastic gradient descent with velocity accumulation:
/// `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    /// One slot per store entry; created on the first update.
    pub velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Sgd<T> {
    pub fn new(momentum: f64, entries: usize) -> Self {
        Sgd {
            momentum,
            velocity: vec![None; entries],
        }
    }

    /// Updates every entry with a gradient, skipping those for which
    /// `frozen(name)` holds.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
        lr: f64,
        frozen: impl Fn(&str) -> bool,
    ) {
        let (mu, lr) = (T::lit(self.momentum), T::lit(lr));
        let ids: Vec<_> = store.entries().map(|(id, _)| id).collect();
        for id in ids {
            let Some(g) = &grads[id.index()] else { continue };
            if frozen(store.name(id)) {
                continue;
            }
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = mu * *vi + gi;
            }
            for (w, &vi) in store.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *w -= lr * vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_end_points() {
        assert_eq!(cosine_lr(0.1, 0.001, 0, 50), 0.1);
        assert!((cosine_lr(0.1, 0.001, 50, 50) - 0.001).abs() < 1e-15);
        assert!((cosine_lr(0.1, 0.001, 25, 50) - 0.0505).abs() < 1e-15);
    }

    fn one_param(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add_param("w", Tensor::full([1], w)).unwrap();
        s
    }

    #[test]
    fn first_step_from_rest() {
        let mut s = one_param(1.0);
        let mut opt = Sgd::new(0.9, 1);
        opt.step(&mut s, &[Some(Tensor::full([1], 0.5))], 0.1, |_| false);
        assert_eq!(opt.velocity[0].as_ref().unwrap().data(), &[0.5]);
        assert!((s.get(s.find("w").unwrap()).data()[0] - 0.95).abs() < 1e-15);
        opt.step(&mut s, &[Some(Tensor::full([1], 0.5))], 0.1, |_| false);
        // v = 0.9·0.5 + 0.5
        assert!((opt.velocity[0].as_ref().unwrap().data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_gradient_descent() {
        let mut s = one_param(2.0);
        let mut opt = Sgd::new(0.0, 1);
        for _ in 0..3 {
            opt.step(&mut s, &[Some(Tensor::full([1], 1.0))], 0.25, |_| false);
        }
        assert!((s.get(s.find("w").unwrap()).data()[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn frozen_entries_stay() {
        let mut s = one_param(2.0);
        let mut opt = Sgd::new(0.9, 1);
        opt.step(&mut s, &[Some(Tensor::full([1], 1.0))], 0.25, |n| n == "w");
        assert_eq!(s.get(s.find("w").unwrap()).data(), &[2.0]);
    }
}
