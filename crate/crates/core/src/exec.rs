//! Data-parallel execution helpers.
//!
//! Every helper returns results in input order and never lets the thread
//! count influence floating-point reduction order, so parallel and
//! sequential runs are bit-identical. Without the `parallel` feature the
//! parallel mode silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<I, T, F>(exec: Exec, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Fixed chunk width used by [`sum_gradients`]; part of the reduction order.
pub const GRAD_CHUNK: usize = 16;

/// Evaluates `f` on every item, letting it accumulate into a gradient
/// buffer, and returns the per-item outputs in order with the summed
/// gradient. Items are grouped into fixed-width chunks whose partial sums
/// are added left to right, so the result does not depend on the thread
/// count.
pub fn sum_gradients<I, T, F>(exec: Exec, items: &[I], dim: usize, f: F) -> (Vec<T>, Vec<f64>)
where
    I: Sync,
    T: Send,
    F: Fn(&I, &mut [f64]) -> T + Sync + Send,
{
    let chunks: Vec<&[I]> = items.chunks(GRAD_CHUNK).collect();
    let partials = map_slice(exec, &chunks, |c| {
        let mut grad = vec![0.0; dim];
        let outs: Vec<T> = c.iter().map(|item| f(item, &mut grad)).collect();
        (outs, grad)
    });
    let mut grad = vec![0.0; dim];
    let mut outs = Vec::with_capacity(items.len());
    for (o, g) in partials {
        outs.extend(o);
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    (outs, grad)
}

/// Child seed for a labelled sub-stream (iteration, worker, purpose ...),
/// mixed with SplitMix64 so nearby labels give unrelated streams.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut x = splitmix64(base);
    for &l in labels {
        x = splitmix64(x ^ splitmix64(l.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let seq = map_indexed(Exec::Sequential, 100, |i| i * i);
        let par = map_indexed(Exec::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn gradient_sum_is_mode_independent() {
        let items: Vec<f64> = (0..257).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let f = |x: &f64, g: &mut [f64]| {
            g[0] += x.cos();
            g[1] += x * 1e-7;
            x * 0.1
        };
        let a = sum_gradients(Exec::Sequential, &items, 2, f);
        let b = sum_gradients(Exec::Parallel, &items, 2, f);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1[0].to_bits(), b.1[0].to_bits());
        assert_eq!(a.1[1].to_bits(), b.1[1].to_bits());
    }

    #[test]
    fn derived_seeds_differ_by_label_and_order() {
        let a = derive_seed(7, &[1, 2]);
        assert_ne!(a, derive_seed(7, &[2, 1]));
        assert_ne!(a, derive_seed(8, &[1, 2]));
        assert_ne!(derive_seed(7, &[]), derive_seed(7, &[0]));
        assert_eq!(a, derive_seed(7, &[1, 2]));
    }
}
