use crate::error::Result;
use crate::tape::{NormStats, Tape, Var};
use crate::tensor::Scalar;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Whether a network runs with batch statistics or tracked statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated when `update_stats` is set.
    Train { update_stats: bool },
    Eval,
}

/// Batch normalization with running-statistics bookkeeping.
///
/// Returns the output and, in training mode with `update_stats`, the new
/// running mean and variance.
#[allow(clippy::type_complexity)]
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
    match mode {
        Mode::Eval => {
            let stats = NormStats::Running { mean: running_mean, var: running_var };
            let (y, _) = tape.batch_norm(input, gamma, beta, stats, BN_EPS)?;
            Ok((y, None))
        }
        Mode::Train { update_stats } => {
            let (y, batch) = tape.batch_norm(input, gamma, beta, NormStats::Batch, BN_EPS)?;
            let update = match (update_stats, batch) {
                (true, Some((mean, var))) => {
                    let m = T::of(BN_MOMENTUM);
                    let keep = T::one() - m;
                    let blend = |run: &[T], cur: &[T]| -> Vec<T> {
                        run.iter().zip(cur).map(|(&r, &c)| keep * r + m * c).collect()
                    };
                    Some((blend(running_mean, &mean), blend(running_var, &var)))
                }
                _ => None,
            };
            Ok((y, update))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn channel_moments(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4().unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| t.data()[(i * c + ch) * h * w..][..h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    fn input() -> Tensor<f64> {
        Tensor::from_fn([4, 3, 4, 4], |i| ((i * 37 % 101) as f64 * 0.13).sin() * 3.0 + (i % 3) as f64)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input());
        let g = tape.param(Tensor::ones([3]));
        let b = tape.param(Tensor::zeros([3]));
        let (y, upd) = batch_norm(&mut tape, x, g, b, &[0.0; 3], &[1.0; 3], Mode::Train { update_stats: true })
            .unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(tape.value(y), ch);
            assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-3, "channel {ch}: {m} {v}");
        }
        let (rm, rv) = upd.unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(tape.value(x), ch);
            assert!((rm[ch] - 0.1 * m).abs() < 1e-12);
            assert!((rv[ch] - (0.9 + 0.1 * v * 64.0 / 63.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input());
        let g = tape.param(Tensor::full([3], 2.0));
        let b = tape.param(Tensor::full([3], 3.0));
        let (y, upd) = batch_norm(&mut tape, x, g, b, &[0.0; 3], &[1.0; 3], Mode::Train { update_stats: false })
            .unwrap();
        assert!(upd.is_none());
        for ch in 0..3 {
            let (m, v) = channel_moments(tape.value(y), ch);
            assert!((m - 3.0).abs() < 1e-4 && (v.sqrt() - 2.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([1, 1, 2, 2], 5.0));
        let g = tape.param(Tensor::ones([1]));
        let b = tape.param(Tensor::zeros([1]));
        let (y, _) = batch_norm(&mut tape, x, g, b, &[1.0], &[4.0], Mode::Eval).unwrap();
        let want = 4.0 / (4.0f64 + BN_EPS).sqrt();
        assert!(tape.value(y).data().iter().all(|&v| (v - want).abs() < 1e-12));
    }
}
