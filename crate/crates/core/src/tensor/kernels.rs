/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), where `op`
/// optionally transposes a row-major operand. Logical shapes are
/// `op(a): m×k`, `op(b): k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths asserted above cover every offset reachable
    // from these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Population mean and `1 / sqrt(var + eps)` of a slice.
pub(crate) fn moments(xs: &[f64], eps: f64) -> (f64, f64) {
    let len = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / len;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    (mean, 1.0 / (var + eps).sqrt())
}
