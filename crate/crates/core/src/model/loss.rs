use crate::error::{Error, Result};
use crate::tensor::{BackwardCtx, Float, Op, Tape, Tensor, Var};

struct CrossEntropy<T> {
    /// Row-wise softmax of the logits.
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Float> Op<T> for CrossEntropy<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        if !ctx.needs(0) {
            return vec![None];
        }
        let b = self.labels.len();
        let g = ctx.grad().data()[0] / T::lit(b as f64);
        let mut d = self.probs.clone();
        for (i, &l) in self.labels.iter().enumerate() {
            d[i * self.classes + l] -= T::one();
        }
        d.iter_mut().for_each(|v| *v *= g);
        vec![Some(Tensor::new(vec![b, self.classes], d).expect("logit shape"))]
    }
}

/// Mean over the batch of `−log softmax(logits)[label]`; `logits` is
/// `[B,c]`.
pub fn cross_entropy<T: Float>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = match *tape.shape(logits) {
        [b, c] => (b, c),
        ref s => return Err(Error::invalid("cross_entropy", format!("expected [B,c] logits, got {s:?}"))),
    };
    if labels.len() != b || b == 0 {
        return Err(Error::invalid("cross_entropy", format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid("cross_entropy", format!("label {l} out of range for {c} classes")));
    }
    let z = tape.value(logits).data();
    let mut probs = vec![T::zero(); b * c];
    let mut total = 0.0f64;
    for (i, (row, p)) in z.chunks_exact(c).zip(probs.chunks_exact_mut(c)).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (pj, &zj) in p.iter_mut().zip(row) {
            *pj = (zj - m).exp();
            s += *pj;
        }
        p.iter_mut().for_each(|v| *v /= s);
        // −log p_label = log Σ exp(z − m) − (z_label − m)
        total += (s.ln() - (row[labels[i]] - m)).as_f64();
    }
    let value = Tensor::scalar(T::lit(total / b as f64));
    Ok(tape.push(
        CrossEntropy {
            probs,
            labels: labels.to_vec(),
            classes: c,
        },
        &[logits],
        value,
    ))
}
