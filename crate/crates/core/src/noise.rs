//! Hashed lattice value noise and fractal sums.

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lattice value in [-1, 1].
#[inline]
fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let h = mix64(
        seed ^ mix64((x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            ^ mix64((y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F).wrapping_add(1))
            ^ mix64((z as u64).wrapping_mul(0x1656_67B1_9E37_79F9).wrapping_add(2)),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// 2D value noise in [-1, 1].
pub fn value_noise_2d(seed: u64, x: f64, y: f64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (xi, yi) = (xf as i64, yf as i64);
    let (tx, ty) = (fade(x - xf), fade(y - yf));
    let a = lerp(lattice(seed, xi, yi, 0), lattice(seed, xi + 1, yi, 0), tx);
    let b = lerp(lattice(seed, xi, yi + 1, 0), lattice(seed, xi + 1, yi + 1, 0), tx);
    lerp(a, b, ty)
}

/// 3D value noise in [-1, 1].
pub fn value_noise_3d(seed: u64, x: f64, y: f64, z: f64) -> f64 {
    let (xf, yf, zf) = (x.floor(), y.floor(), z.floor());
    let (xi, yi, zi) = (xf as i64, yf as i64, zf as i64);
    let (tx, ty, tz) = (fade(x - xf), fade(y - yf), fade(z - zf));
    let plane = |z: i64| {
        let a = lerp(lattice(seed, xi, yi, z), lattice(seed, xi + 1, yi, z), tx);
        let b = lerp(lattice(seed, xi, yi + 1, z), lattice(seed, xi + 1, yi + 1, z), tx);
        lerp(a, b, ty)
    };
    lerp(plane(zi), plane(zi + 1), tz)
}

/// Fractal sum parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fbm {
    pub seed: u64,
    pub octaves: u32,
    pub lacunarity: f64,
    pub gain: f64,
}

impl Fbm {
    pub fn new(seed: u64, octaves: u32) -> Self {
        Self { seed, octaves, lacunarity: 2.0, gain: 0.5 }
    }

    fn total_amplitude(&self) -> f64 {
        (0..self.octaves).map(|i| self.gain.powi(i as i32)).sum()
    }

    /// Normalized fBm in [-1, 1].
    pub fn sample_2d(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let (mut amp, mut freq) = (1.0, 1.0);
        for o in 0..self.octaves {
            let s = self.seed.wrapping_add((o as u64).wrapping_mul(0x632B_E59B_D9B4_E019));
            sum += amp * value_noise_2d(s, x * freq, y * freq);
            amp *= self.gain;
            freq *= self.lacunarity;
        }
        sum / self.total_amplitude()
    }

    pub fn sample_3d(&self, x: f64, y: f64, z: f64) -> f64 {
        let mut sum = 0.0;
        let (mut amp, mut freq) = (1.0, 1.0);
        for o in 0..self.octaves {
            let s = self.seed.wrapping_add((o as u64).wrapping_mul(0x632B_E59B_D9B4_E019));
            sum += amp * value_noise_3d(s, x * freq, y * freq, z * freq);
            amp *= self.gain;
            freq *= self.lacunarity;
        }
        sum / self.total_amplitude()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_continuous() {
        let f = Fbm::new(17, 5);
        let mut prev = f.sample_2d(0.0, 0.3);
        for i in 1..5000 {
            let x = i as f64 * 1e-3;
            let v = f.sample_2d(x, 0.3);
            assert!((-1.0..=1.0).contains(&v));
            assert!((v - prev).abs() < 0.2);
            prev = v;
        }
        for i in 0..1000 {
            let v = f.sample_3d(i as f64 * 0.37, -(i as f64) * 0.11, 2.5);
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn lattice_points_reproduce() {
        assert_eq!(value_noise_2d(3, 4.0, -2.0), value_noise_2d(3, 4.0, -2.0));
        assert_ne!(value_noise_2d(3, 4.0, -2.0), value_noise_2d(4, 4.0, -2.0));
    }
}
