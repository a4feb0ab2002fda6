//! Complex DFT: iterative radix-2 for powers of two, Bluestein's chirp-z
//! convolution for every other length. Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

enum Plan {
    Trivial,
    Radix2 {
        twiddles: Vec<Complex64>,
        bitrev: Vec<usize>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        kernel_fft: Vec<Complex64>,
        inner: Rc<Plan>,
    },
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<Plan>>> = RefCell::new(HashMap::new());
}

fn plan_for(n: usize) -> Rc<Plan> {
    if let Some(p) = PLANS.with(|c| c.borrow().get(&n).cloned()) {
        return p;
    }
    let plan = Rc::new(build_plan(n));
    PLANS.with(|c| c.borrow_mut().insert(n, plan.clone()));
    plan
}

fn build_plan(n: usize) -> Plan {
    if n <= 1 {
        return Plan::Trivial;
    }
    if n.is_power_of_two() {
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        return Plan::Radix2 { twiddles, bitrev };
    }
    let m = (2 * n - 1).next_power_of_two();
    // k² mod 2n keeps the chirp phase exact for large k.
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * k2 / n as f64)
        })
        .collect();
    let mut kernel = vec![Complex64::new(0.0, 0.0); m];
    kernel[0] = chirp[0].conj();
    for k in 1..n {
        kernel[k] = chirp[k].conj();
        kernel[m - k] = chirp[k].conj();
    }
    let inner = plan_for(m);
    run(&inner, &mut kernel);
    Plan::Bluestein {
        chirp,
        kernel_fft: kernel,
        inner,
    }
}

/// Forward (unscaled) transform in place.
fn run(plan: &Plan, buf: &mut [Complex64]) {
    match plan {
        Plan::Trivial => {}
        Plan::Radix2 { twiddles, bitrev } => {
            let n = buf.len();
            for i in 0..n {
                let j = bitrev[i];
                if i < j {
                    buf.swap(i, j);
                }
            }
            let mut len = 2;
            while len <= n {
                let half = len / 2;
                let stride = n / len;
                for start in (0..n).step_by(len) {
                    for k in 0..half {
                        let w = twiddles[k * stride];
                        let a = buf[start + k];
                        let b = buf[start + k + half] * w;
                        buf[start + k] = a + b;
                        buf[start + k + half] = a - b;
                    }
                }
                len <<= 1;
            }
        }
        Plan::Bluestein {
            chirp,
            kernel_fft,
            inner,
        } => {
            let n = buf.len();
            let m = kernel_fft.len();
            let mut work = vec![Complex64::new(0.0, 0.0); m];
            for k in 0..n {
                work[k] = buf[k] * chirp[k];
            }
            run(inner, &mut work);
            for (w, kf) in work.iter_mut().zip(kernel_fft) {
                *w *= kf;
            }
            // inverse of size m via conjugation
            for w in work.iter_mut() {
                *w = w.conj();
            }
            run(inner, &mut work);
            let scale = 1.0 / m as f64;
            for k in 0..n {
                buf[k] = work[k].conj() * scale * chirp[k];
            }
        }
    }
}

/// In-place DFT. The inverse transform includes the `1/n` factor.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 {
        return Err(Error::Dimension("FFT of an empty sequence".into()));
    }
    let plan = plan_for(n);
    if inverse {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        run(&plan, buf);
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    } else {
        run(&plan, buf);
    }
    Ok(())
}

/// Discrete Fourier transform of arbitrary length.
pub fn fft(values: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let mut buf = values.to_vec();
    fft_in_place(&mut buf, inverse)?;
    Ok(buf)
}

/// Forward DFT of a real sequence.
pub fn rfft(values: &[f64]) -> Result<Vec<Complex64>> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf, false)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let phase = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::from_polar(1.0, phase)
                    })
                    .sum()
            })
            .collect()
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn impulse_and_constant() {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let out = fft(&[one, zero, zero, zero], false).unwrap();
        assert!(max_err(&out, &[one; 4]) < 1e-15);

        let c = 0.75;
        let out = fft(&[Complex64::new(c, 0.0); 8], false).unwrap();
        assert!((out[0] - Complex64::new(8.0 * c, 0.0)).norm() < 1e-12);
        assert!(out[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn length_37_matches_naive_dft() {
        let mut rng = SplitMix64::new(37);
        let x: Vec<Complex64> = (0..37)
            .map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect();
        assert!(max_err(&fft(&x, false).unwrap(), &naive_dft(&x)) < 1e-9);
    }

    #[test]
    fn empty_is_a_dimension_error() {
        assert!(matches!(fft(&[], false), Err(Error::Dimension(_))));
    }

    #[test]
    fn inverse_round_trip_all_small_lengths() {
        let mut rng = SplitMix64::new(1);
        for n in 1..=256 {
            let x: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
                .collect();
            let back = fft(&fft(&x, false).unwrap(), true).unwrap();
            assert!(max_err(&back, &x) < 1e-9, "n = {n}");
        }
    }
}
