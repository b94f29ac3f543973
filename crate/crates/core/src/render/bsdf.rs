//! Lambertian diffuse plus GGX microfacet reflection.
//!
//! All directions are in the local shading frame (normal = +z).

use crate::math::Vec3;
use std::f64::consts::{FRAC_1_PI, PI};

const MIN_ALPHA: f64 = 1e-3;

/// Resolved surface response at one shading point.
#[derive(Debug, Clone, Copy)]
pub struct Bsdf {
    pub diffuse: Vec3,
    pub f0: Vec3,
    /// Scales the Fresnel rise toward 1 at grazing angles; 0 disables the lobe.
    pub fresnel_rise: f64,
    pub alpha: f64,
    /// Probability of sampling the specular lobe.
    pub spec_prob: f64,
}

impl Bsdf {
    pub fn new(base: Vec3, roughness: f64, metallic: f64, specular: f64) -> Self {
        let dielectric = Vec3::splat(0.08 * specular);
        let f0 = dielectric * (1.0 - metallic) + base * metallic;
        let diffuse = base * (1.0 - metallic);
        let f0_max = f0.max_component();
        let fresnel_rise = (50.0 * f0_max).clamp(0.0, 1.0);
        let spec_prob = if f0_max <= 0.0 {
            0.0
        } else if diffuse.max_component() <= 0.0 {
            1.0
        } else {
            let s = f0.luminance().max(0.04);
            (s / (s + diffuse.luminance())).clamp(0.1, 0.9)
        };
        let alpha = (roughness * roughness).max(MIN_ALPHA);
        Self { diffuse, f0, fresnel_rise, alpha, spec_prob }
    }

    fn fresnel(&self, cos: f64) -> Vec3 {
        let w = (1.0 - cos).clamp(0.0, 1.0).powi(5) * self.fresnel_rise;
        self.f0 + (Vec3::ONE - self.f0) * w
    }

    fn d(&self, cos_h: f64) -> f64 {
        let a2 = self.alpha * self.alpha;
        let t = cos_h * cos_h * (a2 - 1.0) + 1.0;
        a2 / (PI * t * t)
    }

    fn g1(&self, cos: f64) -> f64 {
        let a2 = self.alpha * self.alpha;
        2.0 * cos / (cos + (a2 + (1.0 - a2) * cos * cos).sqrt())
    }

    /// BSDF value (without the cosine factor).
    pub fn eval(&self, wo: Vec3, wi: Vec3) -> Vec3 {
        if wo.z <= 0.0 || wi.z <= 0.0 {
            return Vec3::ZERO;
        }
        let mut f = self.diffuse * FRAC_1_PI;
        if self.spec_prob > 0.0 {
            let h = (wo + wi).normalized();
            let spec = self.fresnel(wi.dot(h)) * (self.d(h.z) * self.g1(wo.z) * self.g1(wi.z) / (4.0 * wo.z * wi.z));
            f += spec;
        }
        f
    }

    /// Solid-angle density of [`Bsdf::sample`] producing `wi`.
    pub fn pdf(&self, wo: Vec3, wi: Vec3) -> f64 {
        if wo.z <= 0.0 || wi.z <= 0.0 {
            return 0.0;
        }
        let diffuse = wi.z * FRAC_1_PI;
        if self.spec_prob == 0.0 {
            return diffuse;
        }
        let h = (wo + wi).normalized();
        let spec = self.d(h.z) * h.z / (4.0 * wo.dot(h).abs().max(1e-12));
        self.spec_prob * spec + (1.0 - self.spec_prob) * diffuse
    }

    /// Samples an incident direction from `(u0, u1, u2)`; returns `(wi, f, pdf)`.
    pub fn sample(&self, wo: Vec3, u0: f64, u1: f64, u2: f64) -> Option<(Vec3, Vec3, f64)> {
        if wo.z <= 0.0 {
            return None;
        }
        let wi = if u0 < self.spec_prob {
            let a2 = self.alpha * self.alpha;
            let cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1);
            let cos_t = cos2.sqrt();
            let sin_t = (1.0 - cos2).max(0.0).sqrt();
            let phi = 2.0 * PI * u2;
            let h = Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t);
            h * (2.0 * wo.dot(h)) - wo
        } else {
            cosine_hemisphere(u1, u2)
        };
        if wi.z <= 0.0 {
            return None;
        }
        let pdf = self.pdf(wo, wi);
        (pdf > 0.0).then(|| (wi, self.eval(wo, wi), pdf))
    }
}

pub fn cosine_hemisphere(u1: f64, u2: f64) -> Vec3 {
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    Vec3::new(r * phi.cos(), r * phi.sin(), (1.0 - u1).max(0.0).sqrt())
}
