use super::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.data().to_vec();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&Tensor::from_parts_unchecked(
            x.shape().to_vec(),
            probe.clone(),
        ));
        probe[i] = orig - h;
        let minus = f(&Tensor::from_parts_unchecked(
            x.shape().to_vec(),
            probe.clone(),
        ));
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::from_parts_unchecked(x.shape().to_vec(), grad)
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest [`relative_error`] over paired entries, with the index where it
/// occurs.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| (relative_error(*x, *y), i))
        .fold(
            (0.0, 0),
            |best, cur| if cur.0 > best.0 { cur } else { best },
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 2e-9), 1e-9);
        assert_eq!(relative_error(100.0, 101.0), 1.0 / 101.0);
        assert_eq!(max_relative_error(&[0.0, 5.0], &[0.1, 5.0]), (0.1, 0));
    }
}
