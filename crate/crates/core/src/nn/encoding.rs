use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Frequency encoding `[p, sin(2^k π p), cos(2^k π p)]`, `k = 0..bands`.
///
/// Layout per band: three sines (x, y, z) followed by three cosines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionalEncoding {
    pub bands: u32,
    pub include_input: bool,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        PositionalEncoding {
            bands: 6,
            include_input: true,
        }
    }
}

impl PositionalEncoding {
    pub fn width(&self) -> usize {
        6 * self.bands as usize + if self.include_input { 3 } else { 0 }
    }

    /// Writes the encoding of `p` (normalized coordinates) into `out[..width]`.
    pub fn encode_into(&self, p: Vec3, out: &mut [f64]) {
        let mut i = 0;
        if self.include_input {
            out[..3].copy_from_slice(&p.to_array());
            i = 3;
        }
        let mut freq = std::f64::consts::PI;
        for _ in 0..self.bands {
            for a in 0..3 {
                let (s, c) = (freq * p[a]).sin_cos();
                out[i + a] = s;
                out[i + 3 + a] = c;
            }
            i += 6;
            freq *= 2.0;
        }
    }

    pub fn encode(&self, p: Vec3) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        self.encode_into(p, &mut v);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_encoding() {
        let e = PositionalEncoding::default();
        let v = e.encode(Vec3::ZERO);
        assert_eq!(v.len(), 39);
        assert!(v[..3].iter().all(|&x| x == 0.0));
        for k in 0..6 {
            let band = &v[3 + 6 * k..9 + 6 * k];
            assert_eq!(&band[..3], &[0.0; 3]);
            assert_eq!(&band[3..], &[1.0; 3]);
        }
    }

    #[test]
    fn parity() {
        let e = PositionalEncoding::default();
        let p = Vec3::new(0.3, -0.7, 0.11);
        let a = e.encode(p);
        let b = e.encode(-p);
        for i in 0..3 {
            assert_eq!(a[i], -b[i]);
        }
        for k in 0..6 {
            let o = 3 + 6 * k;
            for a_ in 0..3 {
                assert!((a[o + a_] + b[o + a_]).abs() < 1e-15);
                assert!((a[o + 3 + a_] - b[o + 3 + a_]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn band_frequencies() {
        let e = PositionalEncoding {
            bands: 3,
            include_input: false,
        };
        assert_eq!(e.width(), 18);
        let v = e.encode(Vec3::new(0.25, 0.0, 0.0));
        // sin(π/4), sin(π/2), sin(π)
        assert!((v[0] - (std::f64::consts::FRAC_PI_4).sin()).abs() < 1e-15);
        assert!((v[6] - 1.0).abs() < 1e-15);
        assert!(v[12].abs() < 1e-15);
    }
}
