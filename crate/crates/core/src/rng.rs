//! Random streams.
//!
//! Every replica owns independent streams derived from one root seed: the root seed keys a
//! ChaCha8 generator (`seed_from_u64`) and the stream id `4 * replica_id + purpose` selects the
//! ChaCha nonce. Streams are therefore reproducible per `(seed, replica_id, purpose)` and do not
//! overlap. Gaussian variates come from the Marsaglia polar method, which consumes uniforms in
//! pairs and caches the second variate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    /// Branching clocks, particle choice and offspring coin.
    Genealogy = 0,
    /// Gaussian innovations of particle motion.
    Motion = 1,
    /// Population-size continuation beyond the last simulated time.
    Continuation = 2,
    /// Anything else a caller needs (initial positions, resampling).
    Auxiliary = 3,
}

/// Derives the stream for `(seed, replica_id, purpose)`.
pub fn derive_stream(seed: u64, replica_id: u64, purpose: StreamPurpose) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica_id.wrapping_mul(4).wrapping_add(purpose as u64));
    rng
}

/// Standard normal variates by the Marsaglia polar method.
#[derive(Debug, Clone)]
pub struct NormalSource<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: Rng> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.rng.random::<f64>() - 1.0;
            let v = 2.0 * self.rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

/// The streams of one replica.
#[derive(Debug, Clone)]
pub struct ReplicaStreams {
    pub genealogy: SimRng,
    pub motion: NormalSource<SimRng>,
}

impl ReplicaStreams {
    pub fn new(seed: u64, replica_id: u64) -> Self {
        Self {
            genealogy: derive_stream(seed, replica_id, StreamPurpose::Genealogy),
            motion: NormalSource::new(derive_stream(seed, replica_id, StreamPurpose::Motion)),
        }
    }
}

/// Exponential waiting time with the given rate.
#[inline]
pub fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    -(1.0 - rng.random::<f64>()).ln() / rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = derive_stream(7, 3, StreamPurpose::Motion);
        let mut b = derive_stream(7, 3, StreamPurpose::Motion);
        let mut c = derive_stream(7, 3, StreamPurpose::Genealogy);
        let mut d = derive_stream(7, 4, StreamPurpose::Motion);
        let xa: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.random()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.random()).collect();
        let xd: Vec<u64> = (0..8).map(|_| d.random()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(xa, xd);
    }

    #[test]
    fn polar_normals_have_unit_moments() {
        let mut src = NormalSource::new(derive_stream(1, 0, StreamPurpose::Auxiliary));
        let n = 200_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = src.next_normal();
            s1 += z;
            s2 += z * z;
            s4 += z.powi(4);
        }
        let n = n as f64;
        assert!((s1 / n).abs() < 4.0 / n.sqrt());
        assert!((s2 / n - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
        assert!((s4 / n - 3.0).abs() < 4.0 * (96.0 / n).sqrt());
    }

    #[test]
    fn exponential_mean() {
        let mut rng = derive_stream(2, 0, StreamPurpose::Auxiliary);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| exponential(&mut rng, 4.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 4.0 * 0.25 / (n as f64).sqrt());
    }
}
