//! Numeric bodies of the compute kernels. Pure functions over slices so the
//! catalog wrappers stay thin and the math can be checked in isolation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::{Distribution, Functor};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples in `[0, 1)`.
pub fn seeded_uniform(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Uniform samples in `(0, 1]`, safe for `sqrt`.
pub fn seeded_positive(seed: u64, n: usize) -> Vec<f64> {
    seeded_uniform(seed, n).into_iter().map(|x| 1.0 - x).collect()
}

pub fn fill_random(dist: Distribution, seed: u64, n: usize) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    match dist {
        Distribution::Uniform => (0..n).map(|_| rng.gen::<f64>()).collect(),
        Distribution::Normal => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}

/// Row-major `m x k` times `k x n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cij, bpj) in row.iter_mut().zip(brow) {
                *cij += aip * bpj;
            }
        }
    }
    c
}

/// `y <- a*x + y`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y[idx[i]] += x[i]`.
pub fn scatter_add(x: &[f64], idx: &[usize], y: &mut [f64]) {
    assert_eq!(x.len(), idx.len());
    for (xi, &j) in x.iter().zip(idx) {
        y[j] += xi;
    }
}

/// Sum with four interleaved accumulators.
pub fn reduce_sum(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    let tail: f64 = rest.iter().sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn apply_functor(f: Functor, y: &mut [f64]) {
    match f {
        Functor::Square => y.iter_mut().for_each(|v| *v *= *v),
        Functor::Sqrt => y.iter_mut().for_each(|v| *v = v.sqrt()),
        Functor::Negate => y.iter_mut().for_each(|v| *v = -*v),
    }
}

/// In-place forward radix-2 transform (`exp(-2*pi*i*jk/n)` convention).
///
/// Panics if the length is not a power of two.
pub fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, ang * k as f64);
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Splits a power-of-two length into `transform_dim` power-of-two axis
/// lengths, as evenly as possible, each at least 2.
pub fn fft_shape(len: usize, transform_dim: usize) -> Option<Vec<usize>> {
    if !len.is_power_of_two() || len < 2 || transform_dim == 0 {
        return None;
    }
    let bits = len.trailing_zeros() as usize;
    if transform_dim > bits {
        return None;
    }
    let base = bits / transform_dim;
    let extra = bits % transform_dim;
    Some(
        (0..transform_dim)
            .map(|i| 1usize << (base + usize::from(i < extra)))
            .collect(),
    )
}

/// Separable multi-dimensional transform over a row-major array of shape `dims`.
pub fn fft_nd(buf: &mut [Complex64], dims: &[usize]) {
    assert_eq!(buf.len(), dims.iter().product::<usize>(), "shape mismatch");
    let total = buf.len();
    let mut scratch = Vec::new();
    let mut stride = total;
    for &len in dims {
        stride /= len;
        let outer = total / (len * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * len * stride + s;
                scratch.clear();
                scratch.extend((0..len).map(|i| buf[base + i * stride]));
                fft_in_place(&mut scratch);
                for (i, v) in scratch.iter().enumerate() {
                    buf[base + i * stride] = *v;
                }
            }
        }
    }
}

pub fn complex_checksum(buf: &[Complex64]) -> f64 {
    buf.iter().map(|c| c.re + c.im).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_scalar() {
        assert_eq!(matmul(&[2.0], &[3.0], 1, 1, 1), vec![6.0]);
    }

    #[test]
    fn matmul_identity() {
        let id = [1.0, 0.0, 0.0, 1.0];
        let b = [5.0, -1.0, 2.5, 7.0];
        assert_eq!(matmul(&id, &b, 2, 2, 2), b.to_vec());
    }

    #[test]
    fn matmul_ones() {
        let c = matmul(&[1.0; 9], &[1.0; 9], 3, 3, 3);
        assert!(c.iter().all(|&v| v == 3.0));
        let c = matmul(&[1.0; 6], &[1.0; 6], 2, 3, 2);
        assert_eq!(c, vec![3.0; 4]);
    }

    #[test]
    fn fft_impulse_and_dc() {
        let mut d = vec![Complex64::new(1.0, 0.0), Complex64::default(), Complex64::default(), Complex64::default()];
        fft_in_place(&mut d);
        for v in &d {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let mut ones = vec![Complex64::new(1.0, 0.0); 4];
        fft_in_place(&mut ones);
        assert!((ones[0] - Complex64::new(4.0, 0.0)).norm() < 1e-12);
        for v in &ones[1..] {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn fft_shape_splits() {
        assert_eq!(fft_shape(64, 1), Some(vec![64]));
        assert_eq!(fft_shape(64, 2), Some(vec![8, 8]));
        assert_eq!(fft_shape(32, 2), Some(vec![8, 4]));
        assert_eq!(fft_shape(4, 3), None);
        assert_eq!(fft_shape(12, 1), None);
    }

    #[test]
    fn scatter_add_hand_case() {
        let mut y = vec![0.0, 0.0];
        scatter_add(&[1.0, 2.0, 3.0], &[0, 1, 0], &mut y);
        assert_eq!(y, vec![4.0, 2.0]);
    }

    #[test]
    fn reduce_closed_form() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(reduce_sum(&v), 5050.0);
        assert_eq!(reduce_sum(&[4.25]), 4.25);
        assert_eq!(reduce_sum(&[]), 0.0);
    }

    #[test]
    fn negate_is_involution_and_square_fixes_ones() {
        let orig = seeded_uniform(3, 33);
        let mut y = orig.clone();
        apply_functor(Functor::Negate, &mut y);
        apply_functor(Functor::Negate, &mut y);
        assert_eq!(y, orig);
        let mut ones = vec![1.0; 8];
        apply_functor(Functor::Square, &mut ones);
        assert_eq!(ones, vec![1.0; 8]);
    }

    #[test]
    fn axpy_cases() {
        let mut y = vec![0.0; 5];
        axpy(1.0, &[1.0; 5], &mut y);
        assert_eq!(y.iter().sum::<f64>(), 5.0);
        let orig = seeded_uniform(9, 10);
        let mut y = orig.clone();
        axpy(0.0, &seeded_uniform(10, 10), &mut y);
        assert_eq!(y, orig);
    }

    mod oracles {
        use super::*;
        use rand::Rng;
        use proptest::prelude::*;

        fn triple_loop(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[i * k + p] * b[p * n + j];
                    }
                    c[i * n + j] = s;
                }
            }
            c
        }

        fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
            let n = x.len();
            (0..n)
                .map(|k| {
                    x.iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let ang = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                            v * Complex64::from_polar(1.0, ang)
                        })
                        .sum()
                })
                .collect()
        }

        fn close(a: f64, b: f64) -> bool {
            (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
        }

        fn ints(len: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec((-50i32..50).prop_map(f64::from), len)
        }

        fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
            (1usize..=8, 1usize..=8, 1usize..=8)
        }

        proptest! {
            #[test]
            fn matmul_integer_exact((m, k, n) in dims(), seed in any::<u64>()) {
                let mut r = seeded_rng(seed);
                let a: Vec<f64> = (0..m * k).map(|_| f64::from(r.gen_range(-50i32..50))).collect();
                let b: Vec<f64> = (0..k * n).map(|_| f64::from(r.gen_range(-50i32..50))).collect();
                prop_assert_eq!(matmul(&a, &b, m, k, n), triple_loop(&a, &b, m, k, n));
            }

            #[test]
            fn matmul_real_close((m, k, n) in dims(), seed in any::<u64>()) {
                let a = seeded_uniform(seed, m * k);
                let b = seeded_uniform(seed ^ 1, k * n);
                for (x, y) in matmul(&a, &b, m, k, n).iter().zip(triple_loop(&a, &b, m, k, n)) {
                    prop_assert!(close(*x, y));
                }
            }

            #[test]
            fn fft_matches_direct_dft(bits in 1u32..=6, seed in any::<u64>()) {
                let n = 1usize << bits;
                let raw = seeded_uniform(seed, 2 * n);
                let x: Vec<Complex64> = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                let mut got = x.clone();
                fft_in_place(&mut got);
                let want = direct_dft(&x);
                let scale = want.iter().map(|v| v.norm()).fold(1.0, f64::max);
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).norm() <= 1e-9 * scale);
                }
            }

            #[test]
            fn fft_2d_matches_row_column_dft(rb in 1u32..=3, cb in 1u32..=3, seed in any::<u64>()) {
                let (rows, cols) = (1usize << rb, 1usize << cb);
                let raw = seeded_uniform(seed, 2 * rows * cols);
                let x: Vec<Complex64> = raw.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                let mut got = x.clone();
                fft_nd(&mut got, &[rows, cols]);
                let mut want = Vec::with_capacity(x.len());
                for r in 0..rows {
                    want.extend(direct_dft(&x[r * cols..(r + 1) * cols]));
                }
                for c in 0..cols {
                    let col: Vec<Complex64> = (0..rows).map(|r| want[r * cols + c]).collect();
                    for (r, v) in direct_dft(&col).into_iter().enumerate() {
                        want[r * cols + c] = v;
                    }
                }
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).norm() <= 1e-9 * w.norm().max(1.0));
                }
            }

            #[test]
            fn axpy_matches_loop(a in -4.0f64..4.0, x in ints(64), y in ints(64)) {
                let mut got = y.clone();
                axpy(a, &x, &mut got);
                for i in 0..64 {
                    prop_assert_eq!(got[i], y[i] + a * x[i]);
                }
            }

            #[test]
            fn scatter_add_matches_loop(
                x in ints(64),
                idx in prop::collection::vec(0usize..10, 64),
                y in ints(10),
            ) {
                let mut got = y.clone();
                scatter_add(&x, &idx, &mut got);
                let mut want = y;
                for i in 0..x.len() {
                    want[idx[i]] += x[i];
                }
                prop_assert_eq!(got, want);
            }

            #[test]
            fn reduction_integer_exact(x in prop::collection::vec((-1000i32..1000).prop_map(f64::from), 0..=64)) {
                let mut want = 0.0;
                for v in &x {
                    want += v;
                }
                prop_assert_eq!(reduce_sum(&x), want);
            }

            #[test]
            fn reduction_real_close(n in 1usize..10_000, seed in any::<u64>()) {
                let x = seeded_uniform(seed, n);
                let mut want = 0.0;
                for v in &x {
                    want += v;
                }
                prop_assert!(close(reduce_sum(&x), want));
            }

            #[test]
            fn functors_match_loop(seed in any::<u64>(), n in 1usize..=64) {
                let x = seeded_positive(seed, n);
                for f in [Functor::Square, Functor::Sqrt, Functor::Negate] {
                    let mut got = x.clone();
                    apply_functor(f, &mut got);
                    for i in 0..n {
                        let want = match f {
                            Functor::Square => x[i] * x[i],
                            Functor::Sqrt => x[i].sqrt(),
                            Functor::Negate => -x[i],
                        };
                        prop_assert_eq!(got[i], want);
                    }
                }
            }
        }
    }
}
