//! Mapping between metric depth and the normalised log-depth domain `[0, 1]`.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthMode {
    /// `log_b((b−1)·a + 1)` with `a` the affine position in the range.
    LogBase(f64),
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub near: f64,
    pub far: f64,
    pub mode: DepthMode,
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { near: 0.1, far: 200.0, mode: DepthMode::LogBase(10.0) }
    }
}

impl DepthRange {
    pub fn new(near: f64, far: f64, mode: DepthMode) -> Result<Self> {
        let r = Self { near, far, mode };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(Error::Config(format!(
                "depth range needs 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if let DepthMode::LogBase(b) = self.mode {
            if !(b > 1.0 && b.is_finite()) {
                return Err(Error::Config(format!("depth base must exceed 1, got {b}")));
            }
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        self.far - self.near
    }

    /// Normalised depth of `d`; out-of-range input is an error.
    pub fn encode(&self, d: f64) -> Result<f64> {
        if !(self.near..=self.far).contains(&d) {
            return Err(Error::DepthOutOfRange { depth: d, near: self.near, far: self.far });
        }
        Ok(self.encode_unchecked(d))
    }

    /// Clamps `d` into range first; the flag reports whether it moved.
    pub fn encode_clamped(&self, d: f64) -> (f64, bool) {
        let c = d.clamp(self.near, self.far);
        (self.encode_unchecked(c), c != d)
    }

    fn encode_unchecked(&self, d: f64) -> f64 {
        let a = (d - self.near) / self.span();
        match self.mode {
            DepthMode::Linear => a,
            // ln_1p keeps `a = 0` and `a = 1` exact and stays accurate for b → 1⁺.
            DepthMode::LogBase(b) => (a * (b - 1.0)).ln_1p() / (b - 1.0).ln_1p(),
        }
    }

    /// Metric depth of normalised `x`, clamping `x` into `[0, 1]` and the
    /// result into `[near, far]`. The flag reports whether `x` was clamped.
    pub fn decode_clamped(&self, x: f64) -> (f64, bool) {
        let c = x.clamp(0.0, 1.0);
        let a = match self.mode {
            DepthMode::Linear => c,
            DepthMode::LogBase(b) => (c * (b - 1.0).ln_1p()).exp_m1() / (b - 1.0),
        };
        let d = (a * self.span() + self.near).clamp(self.near, self.far);
        (d, c != x)
    }

    pub fn decode(&self, x: f64) -> f64 {
        self.decode_clamped(x).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::E;

    fn modes() -> [DepthRange; 3] {
        [
            DepthRange::default(),
            DepthRange { mode: DepthMode::LogBase(E), ..Default::default() },
            DepthRange { mode: DepthMode::Linear, ..Default::default() },
        ]
    }

    #[test]
    fn endpoints_are_exact() {
        for r in modes() {
            assert_eq!(r.encode(0.1).unwrap(), 0.0);
            assert_eq!(r.encode(200.0).unwrap(), 1.0);
            assert_eq!(r.decode(0.0), 0.1);
            assert_eq!(r.decode(1.0), 200.0);
        }
    }

    #[test]
    fn hundred_metres_base_ten() {
        // Direct evaluation of log10(9·(d − 0.1)/199.9 + 1).
        let oracle = (9.0 * (100.0 - 0.1) / 199.9 + 1.0f64).log10();
        let x = DepthRange::default().encode(100.0).unwrap();
        assert!((x - oracle).abs() < 1e-14);
        assert!((x - 0.7402).abs() < 5e-5);
    }

    #[test]
    fn out_of_range_is_an_error_unless_clamped() {
        let r = DepthRange::default();
        assert!(matches!(r.encode(0.05), Err(Error::DepthOutOfRange { .. })));
        assert!(r.encode(250.0).is_err());
        assert_eq!(r.encode_clamped(250.0), (1.0, true));
        assert!(!r.encode_clamped(50.0).1);
        assert_eq!(r.decode_clamped(-0.2), (0.1, true));
        assert_eq!(r.decode_clamped(1.5), (200.0, true));
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        assert!(DepthRange::new(0.0, 1.0, DepthMode::Linear).is_err());
        assert!(DepthRange::new(2.0, 1.0, DepthMode::Linear).is_err());
        assert!(DepthRange::new(0.1, 1.0, DepthMode::LogBase(1.0)).is_err());
    }

    #[test]
    fn roundtrip_over_random_depths() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for r in modes() {
            for _ in 0..1000 {
                let d = rng.random_range(r.near..=r.far);
                let back = r.decode(r.encode(d).unwrap());
                assert!(((back - d) / d).abs() <= 1e-9, "{d} -> {back}");
            }
        }
    }

    #[test]
    fn near_range_gets_more_resolution() {
        let r = DepthRange::default();
        let h = 1e-6;
        let slope_near = (r.encode(r.near + h).unwrap() - r.encode(r.near).unwrap()) / h;
        let slope_far = (r.encode(r.far).unwrap() - r.encode(r.far - h).unwrap()) / h;
        assert!(slope_near > slope_far);
    }

    #[test]
    fn base_near_one_approaches_linear() {
        let log = DepthRange { mode: DepthMode::LogBase(1.0 + 1e-6), ..Default::default() };
        let lin = DepthRange { mode: DepthMode::Linear, ..Default::default() };
        let mut worst: f64 = 0.0;
        for i in 0..=1000 {
            let d = 0.1 + 199.9 * i as f64 / 1000.0;
            worst = worst.max((log.encode(d).unwrap() - lin.encode(d).unwrap()).abs());
        }
        assert!(worst <= 1e-4);
    }

    proptest! {
        #[test]
        fn encode_and_decode_increase(a in 0.1f64..200.0, b in 0.1f64..200.0, base in 1.5f64..20.0) {
            prop_assume!(b - a > 1e-6);
            for r in [DepthRange { mode: DepthMode::LogBase(base), ..Default::default() },
                      DepthRange { mode: DepthMode::Linear, ..Default::default() }] {
                let (ea, eb) = (r.encode(a).unwrap(), r.encode(b).unwrap());
                prop_assert!(ea < eb);
                prop_assert!(r.decode(ea) < r.decode(eb));
            }
        }

        #[test]
        fn roundtrip_any_base(d in 0.1f64..=200.0, base in 1.01f64..50.0) {
            let r = DepthRange { mode: DepthMode::LogBase(base), ..Default::default() };
            let back = r.decode(r.encode(d).unwrap());
            prop_assert!(((back - d) / d).abs() <= 1e-9);
        }
    }
}
