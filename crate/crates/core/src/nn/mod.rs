//! Dense tensors, a reverse-mode tape, Adam, and the scalar losses used in training.

mod adam;
mod tape;
mod tensor;

use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use tape::{Aggregator, Gradients, Neighborhoods, Tape, Var};
pub use tensor::{matmul, sigmoid, Tensor};

use crate::error::{Error, Result};

/// Huber penalty of a single residual.
pub fn huber_scalar(r: f64, gamma: f64) -> f64 {
    let a = r.abs();
    if a <= gamma {
        0.5 * r * r
    } else {
        gamma * (a - 0.5 * gamma)
    }
}

/// Mean Huber penalty over entries where `mask` is true.
pub fn huber(pred: &Tensor, target: &Tensor, mask: &[bool], gamma: f64) -> Result<f64> {
    if pred.shape() != target.shape() || mask.len() != pred.len() {
        return Err(Error::Shape(format!(
            "prediction {:?}, target {:?}, mask of {}",
            pred.shape(),
            target.shape(),
            mask.len()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config(format!("Huber threshold must be positive, got {gamma}")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((p, t), &m) in pred.data().iter().zip(target.data()).zip(mask) {
        if m {
            total += huber_scalar(p - t, gamma);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no entries selected for the loss".into()));
    }
    Ok(total / count as f64)
}

/// Element-wise `a ⊙ σ(b)`.
pub fn glu(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * sigmoid(*y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

/// Inverted dropout factors: 0 with probability `p`, otherwise `1/(1−p)`.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Evaluate `f` on a fresh tape with `params` bound to slots `0..` and return
/// the scalar loss with one gradient per parameter.
pub fn gradient<F>(params: &[Tensor], f: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.shape() != (1, 1) {
        return Err(Error::Shape(format!("loss must be a scalar, got {:?}", value.shape())));
    }
    let value = value.item();
    let grads = tape.backward(loss)?;
    let shapes: Vec<(usize, usize)> = params.iter().map(Tensor::shape).collect();
    Ok((value, grads.params(&shapes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn fd_check(params: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Copy) {
        let (_, grads) = gradient(params, f).unwrap();
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.len() {
                let eval = |delta: f64| {
                    let mut ps = params.to_vec();
                    ps[pi].data_mut()[k] += delta;
                    gradient(&ps, f).unwrap().0
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads[pi].data()[k];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!((fd - an).abs() / denom < 1e-5, "param {pi}[{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber_scalar(0.0, 1.0), 0.0);
        assert_eq!(huber_scalar(1.0, 1.0), 0.5);
        assert_eq!(huber_scalar(-2.0, 1.0), 1.5);
        let p = Tensor::from_vec(1, 3, vec![1.0, 5.0, 0.0]).unwrap();
        let t = Tensor::zeros(1, 3);
        assert_eq!(huber(&p, &t, &[true, false, true], 1.0).unwrap(), 0.25);
        assert!(huber(&p, &t, &[false; 3], 1.0).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let params = vec![Tensor::zeros(2, 2)];
        assert!(matches!(gradient(&params, |_, v| Ok(v[0])), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            Tensor::uniform(4, 3, 1.0, &mut rng),
            Tensor::uniform(3, 2, 1.0, &mut rng),
            Tensor::uniform(1, 2, 1.0, &mut rng),
            Tensor::uniform(4, 2, 1.0, &mut rng),
        ];
        fd_check(&params, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_bias(h, v[2])?;
            let g = t.glu(h, v[3])?;
            let e = t.exp(g);
            let l = t.log(e);
            let sq = t.mul(l, l)?;
            let c = t.constant(Tensor::full(4, 2, 0.1));
            let s = t.add(sq, c)?;
            let s = t.sqrt(s);
            let s = t.scale_rows(s, Rc::from(vec![1.0, -2.0, 0.5, 3.0]))?;
            let s = t.mul_const(s, Rc::from(vec![1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.5, 2.0]))?;
            let cat = t.concat_cols(&[s, h])?;
            let r = t.repeat_rows(cat, 2);
            let r = t.reshape(r, 4, 8)?;
            Ok(t.sum(r))
        });
    }

    #[test]
    fn aggregators_and_unfold_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = 5;
        let nbrs = Rc::new(Neighborhoods::new(vec![
            vec![1, 2],
            vec![0],
            vec![0, 1, 3],
            vec![],
            vec![0, 1, 2, 3],
        ]));
        let params = vec![
            Tensor::uniform(5 * steps, 3, 2.0, &mut rng),
            Tensor::uniform(9, 2, 1.0, &mut rng),
        ];
        let target = Rc::new(Tensor::uniform(5 * steps, 2, 1.0, &mut rng));
        let mask: Rc<[bool]> = (0..5 * steps * 2).map(|k| k % 3 != 0).collect::<Vec<_>>().into();
        for agg in [
            Aggregator::Mean,
            Aggregator::Softmax,
            Aggregator::Softmin,
            Aggregator::Std { eps: 1e-6 },
        ] {
            let (nbrs, target, mask) = (nbrs.clone(), target.clone(), mask.clone());
            let f = move |t: &mut Tape, v: &[Var]| {
                let a = t.aggregate(v[0], nbrs.clone(), steps, agg)?;
                let u = t.unfold_time(a, steps, 3)?;
                let y = t.matmul(u, v[1])?;
                t.huber(y, target.clone(), mask.clone(), 0.3)
            };
            let (_, grads) = gradient(&params, &f).unwrap();
            let h = 1e-6;
            for pi in 0..params.len() {
                for k in 0..params[pi].len() {
                    let eval = |d: f64| {
                        let mut ps = params.clone();
                        ps[pi].data_mut()[k] += d;
                        gradient(&ps, &f).unwrap().0
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let an = grads[pi].data()[k];
                    let denom = fd.abs().max(an.abs()).max(1e-7);
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "{agg:?} param {pi}[{k}]: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn isolated_nodes_aggregate_to_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(4, 2, 3.0));
        let nbrs = Rc::new(Neighborhoods::new(vec![vec![1], vec![]]));
        let a = t.aggregate(x, nbrs, 2, Aggregator::Softmax).unwrap();
        assert_eq!(t.value(a).data(), &[3.0, 3.0, 3.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = dropout_mask(100_000, 0.05, &mut rng);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.01);
        assert_eq!(dropout_mask(3, 0.0, &mut rng), vec![1.0; 3]);
    }
}
