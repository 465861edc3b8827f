//! Deterministic PRNG: xoshiro256++ seeded through SplitMix64, with
//! uniform, Gaussian, and shuffling helpers.
//!
//! Everything here is fixed-algorithm and pure 64-bit float arithmetic, so
//! identical seeds produce bit-identical streams on any platform. The
//! Gaussian path deliberately avoids `f64::ln` (whose last bit can vary
//! between libm builds) in favor of a series evaluation.

/// One SplitMix64 step: advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless mix of one value (a single SplitMix64 output).
pub fn mix(x: u64) -> u64 {
    let mut s = x;
    splitmix64(&mut s)
}

/// xoshiro256++ with SplitMix64 seed expansion.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    gauss_spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            s,
            gauss_spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [lo, hi] (inclusive), by rejection-free modulo of
    /// a 64-bit draw; bias is negligible for the small ranges used here.
    pub fn range_u64(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.next_u64() % (hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via the polar Box-Muller transform; the pair's
    /// second value is cached.
    pub fn gauss(&mut self) -> f64 {
        if let Some(v) = self.gauss_spare.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * det_ln(s) / s).sqrt();
                self.gauss_spare = Some(v * m);
                return u * m;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}

/// Natural log by exponent extraction and an atanh series, using only
/// IEEE-exact operations so results are bit-stable across platforms.
/// Accurate to < 1 ulp of relative error for positive finite inputs.
pub fn det_ln(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    const LN2: f64 = std::f64::consts::LN_2;
    let bits = x.to_bits();
    let mut exp = ((bits >> 52) & 0x7FF) as i64 - 1023;
    let mut mant = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | (1023u64 << 52));
    if exp == -1023 {
        // subnormal: renormalize
        let m = x * (1u64 << 54) as f64 * 4.0; // x * 2^56
        return det_ln(m) - 56.0 * LN2;
    }
    // pull the mantissa into [sqrt(1/2), sqrt(2)) for a small series argument
    if mant > std::f64::consts::SQRT_2 {
        mant *= 0.5;
        exp += 1;
    }
    let t = (mant - 1.0) / (mant + 1.0);
    let t2 = t * t;
    // ln(m) = 2 atanh(t) = 2 (t + t^3/3 + t^5/5 + ...); |t| <= 0.1716 so
    // 13 odd terms reach below 1e-18 relative
    let mut term = t;
    let mut sum = t;
    for k in 1..=13u32 {
        term *= t2;
        sum += term / (2 * k + 1) as f64;
    }
    exp as f64 * LN2 + 2.0 * sum
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
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..10).filter(|_| a.next_u64() == b.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(7);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
            sum += x;
        }
        let mean = sum / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn det_ln_matches_std_ln() {
        let mut r = Rng::new(3);
        for _ in 0..10_000 {
            let x = r.next_f64() * 100.0 + 1e-9;
            let (a, b) = (det_ln(x), x.ln());
            assert!(
                (a - b).abs() <= b.abs().max(1e-300) * 1e-14 + 1e-16,
                "x={x}: {a} vs {b}"
            );
        }
        assert_eq!(det_ln(1.0), 0.0);
        let e = std::f64::consts::E;
        assert!((det_ln(e) - 1.0).abs() < 1e-15);
        assert!((det_ln(1e-300) - (-690.7755278982137)).abs() < 1e-10);
    }

    #[test]
    fn gauss_moments() {
        let mut r = Rng::new(11);
        let n = 50_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let g = r.gauss();
            m1 += g;
            m2 += g * g;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.02, "mean {m1}");
        assert!((m2 - 1.0).abs() < 0.03, "second moment {m2}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = Rng::new(5);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn mix_is_stateless() {
        assert_eq!(mix(123), mix(123));
        assert_ne!(mix(123), mix(124));
    }
}
