//! SplitMix64 streams keyed by `(global_seed, sample_id, epoch, view_index)`.
//!
//! The generator and the key derivation are fixed bit-for-bit so that other
//! implementations can reproduce every augmentation draw:
//!
//! ```text
//! next():   state += 0x9E3779B97F4A7C15
//!           z = state
//!           z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!           z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!           return z ^ (z >> 31)
//! key:      s = mix(global_seed); s = mix(s ^ sample_id);
//!           s = mix(s ^ epoch);   s = mix(s ^ view_index)
//! uniform:  (next() >> 11) * 2^-53
//! ```
//!
//! where `mix` is the output function of `next()` applied to `x + golden`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of one augmentation stream.
pub fn stream_seed(global_seed: u64, sample_id: u64, epoch: u64, view_index: u64) -> u64 {
    let mut s = mix(global_seed);
    s = mix(s ^ sample_id);
    s = mix(s ^ epoch);
    mix(s ^ view_index)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn keyed(global_seed: u64, sample_id: u64, epoch: u64, view_index: u64) -> Self {
        Self::new(stream_seed(global_seed, sample_id, epoch, view_index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; the tiny bias is irrelevant at these sizes
        // and keeps the draw count fixed at one per call.
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Adds `sigma ×` standard normals to `out`, two per accepted draw of
    /// the Marsaglia polar method.
    pub fn add_normal_noise(&mut self, out: &mut [f64], sigma: f64) {
        for pair in out.chunks_mut(2) {
            let (u, v, s) = loop {
                let u = 2.0 * self.next_f64() - 1.0;
                let v = 2.0 * self.next_f64() - 1.0;
                let s = u * u + v * v;
                if s > 0.0 && s < 1.0 {
                    break (u, v, s);
                }
            };
            let k = sigma * (-2.0 * s.ln() / s).sqrt();
            pair[0] += k * u;
            if let Some(x) = pair.get_mut(1) {
                *x += k * v;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
