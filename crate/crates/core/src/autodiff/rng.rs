use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Seeded ChaCha8 stream.
///
/// ChaCha8's output is specified bit-for-bit, and every derived quantity
/// (uniform reals, bounded integers, shuffles) is computed here rather than
/// through `rand`'s distribution types, so a seed yields the same sequence on
/// every platform and toolchain.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named purpose, derived from `seed`.
    pub fn derived(seed: u64, purpose: &str) -> Self {
        // FNV-1a over the purpose tag, mixed into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in purpose.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        Self::new(seed ^ h.rotate_left(17))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Kaiming-uniform (He) initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
///
/// This is the gain-√2 convention, so the sample variance is `2 / fan_in`.
pub fn kaiming_uniform<F: Real>(fan_in: usize, shape: &[usize], rng: &mut Rng) -> Result<Tensor<F>> {
    if fan_in == 0 {
        return Err(Error::Domain("kaiming_uniform: fan_in must be positive".into()));
    }
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| F::from_f64_lossy(rng.uniform(-bound, bound)))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Rng::new(1).next_u64(), Rng::new(2).next_u64());
    }

    #[test]
    fn derived_streams_differ() {
        assert_ne!(
            Rng::derived(7, "shuffle").next_u64(),
            Rng::derived(7, "init").next_u64()
        );
    }

    #[test]
    fn kaiming_bound_fan_in_six() {
        let mut rng = Rng::new(0);
        let t: Tensor<f64> = kaiming_uniform(6, &[50, 20], &mut rng).unwrap();
        assert!(t.data().iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn kaiming_variance() {
        let fan_in = 50;
        let mut rng = Rng::new(3);
        let t: Tensor<f64> = kaiming_uniform(fan_in, &[100_000], &mut rng).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / fan_in as f64;
        assert!((var - expected).abs() / expected < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn kaiming_rejects_zero_fan_in() {
        let mut rng = Rng::new(0);
        assert!(kaiming_uniform::<f32>(0, &[2], &mut rng).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(9).shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
