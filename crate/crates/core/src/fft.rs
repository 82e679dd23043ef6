//! In-place 3-D FFTs on cubic arrays stored x-fastest.
//!
//! Plans are cached per thread and per size. The forward transform is the raw
//! unnormalized DFT; the inverse divides by n³ so that `inverse(forward(f)) = f`.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

struct Plan {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<Plan>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
    static SCRATCH: RefCell<(Vec<C64>, Vec<C64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

fn plan(n: usize) -> Arc<Plan> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(pl) = p.1.get(&n) {
            return pl.clone();
        }
        let fwd = p.0.plan_fft_forward(n);
        let inv = p.0.plan_fft_inverse(n);
        let pl = Arc::new(Plan { fwd, inv });
        p.1.insert(n, pl.clone());
        pl
    })
}

/// 1-D transform of every contiguous length-`n` chunk of `data`.
pub fn fft_lines(data: &mut [C64], n: usize, inverse: bool) {
    let pl = plan(n);
    let f = if inverse { &pl.inv } else { &pl.fwd };
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let need = f.get_inplace_scratch_len();
        if s.0.len() < need {
            s.0.resize(need, C64::new(0.0, 0.0));
        }
        f.process_with_scratch(data, &mut s.0[..need]);
    });
}

fn transform(data: &mut [C64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n * n, "fft3 expects an n^3 array");
    let n2 = n * n;
    // x lines are contiguous
    fft_lines(data, n, inverse);
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        if s.1.len() < n * n * n {
            s.1.resize(n * n * n, C64::new(0.0, 0.0));
        }
    });
    let mut buf = SCRATCH.with(|s| std::mem::take(&mut s.borrow_mut().1));
    // y lines: transpose each z-plane
    for k in 0..n {
        let plane = &mut data[k * n2..(k + 1) * n2];
        let b = &mut buf[k * n2..(k + 1) * n2];
        for j in 0..n {
            for i in 0..n {
                b[j + n * i] = plane[i + n * j];
            }
        }
    }
    fft_lines(&mut buf[..n * n2], n, inverse);
    for k in 0..n {
        let plane = &mut data[k * n2..(k + 1) * n2];
        let b = &buf[k * n2..(k + 1) * n2];
        for i in 0..n {
            for j in 0..n {
                plane[i + n * j] = b[j + n * i];
            }
        }
    }
    // z lines: full transpose (xy, z) -> (z, xy)
    for k in 0..n {
        for p in 0..n2 {
            buf[k + n * p] = data[p + n2 * k];
        }
    }
    fft_lines(&mut buf[..n * n2], n, inverse);
    for p in 0..n2 {
        for k in 0..n {
            data[p + n2 * k] = buf[k + n * p];
        }
    }
    SCRATCH.with(|s| s.borrow_mut().1 = buf);
    if inverse {
        let scale = 1.0 / (n * n2) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

pub fn forward(data: &mut [C64], n: usize) {
    transform(data, n, false);
}

pub fn inverse(data: &mut [C64], n: usize) {
    transform(data, n, true);
}

/// Signed integer index of DFT bin `m` (Nyquist reported as -n/2).
#[inline]
pub fn signed_index(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}
