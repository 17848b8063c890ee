//! Minimal n-dimensional FFT on flat row-major buffers, for the
//! frequency-domain correlation path of the scan engine.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Next length >= `n` that factors into 2, 3 and 5 only.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut candidate = n.max(1);
    loop {
        let mut rem = candidate;
        for p in [2usize, 3, 5] {
            while rem % p == 0 {
                rem /= p;
            }
        }
        if rem == 1 {
            return candidate;
        }
        candidate += 1;
    }
}

/// Forward/inverse transforms over every axis of a row-major nd buffer.
pub(crate) struct NdFft {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    max_scratch: usize,
}

impl NdFft {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut strides = vec![1usize; dims.len()];
        for axis in (0..dims.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * dims[axis + 1];
        }
        let total = dims.iter().product();
        let max_scratch = forward
            .iter()
            .chain(inverse.iter())
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        NdFft {
            dims: dims.to_vec(),
            strides,
            total,
            forward,
            inverse,
            max_scratch,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn scratch(&self) -> Vec<Complex<f64>> {
        vec![Complex::default(); self.max_scratch.max(self.dims.iter().copied().max().unwrap_or(1))]
    }

    pub fn forward(&self, buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        self.transform(&self.forward, buf, scratch);
    }

    /// Unnormalized inverse; divide by `total()` to invert `forward`.
    pub fn inverse(&self, buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        self.transform(&self.inverse, buf, scratch);
    }

    fn transform(
        &self,
        plans: &[Arc<dyn Fft<f64>>],
        buf: &mut [Complex<f64>],
        scratch: &mut [Complex<f64>],
    ) {
        debug_assert_eq!(buf.len(), self.total);
        let d = self.dims.len();
        // Last axis is contiguous: one call transforms every line.
        plans[d - 1].process_with_scratch(buf, &mut scratch[..plans[d - 1].get_inplace_scratch_len()]);
        // Other axes: gather each strided line, transform, scatter back.
        for axis in 0..d - 1 {
            let len = self.dims[axis];
            let stride = self.strides[axis];
            let block = stride * len;
            let plan = &plans[axis];
            let scratch_len = plan.get_inplace_scratch_len();
            let mut line = vec![Complex::default(); len];
            for hi in 0..self.total / block {
                for lo in 0..stride {
                    let base = hi * block + lo;
                    for t in 0..len {
                        line[t] = buf[base + t * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch[..scratch_len]);
                    for t in 0..len {
                        buf[base + t * stride] = line[t];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(100), 100);
        assert_eq!(next_fast_len(101), 108);
        assert_eq!(next_fast_len(97), 100);
    }

    #[test]
    fn forward_inverse_roundtrip_2d() {
        let dims = [6usize, 10];
        let fft = NdFft::new(&dims);
        let mut buf: Vec<Complex<f64>> = (0..fft.total())
            .map(|i| Complex::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let original = buf.clone();
        let mut scratch = fft.scratch();
        fft.forward(&mut buf, &mut scratch);
        fft.inverse(&mut buf, &mut scratch);
        for (got, want) in buf.iter().zip(&original) {
            assert!((got / fft.total() as f64 - want).norm() < 1e-12);
        }
    }
}
