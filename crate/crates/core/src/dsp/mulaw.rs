const MU: f64 = 255.0;

/// Code of µ-law zero under the round-half-up quantizer.
pub const MU_LAW_ZERO: u8 = 128;

/// `F(x) = sign(x) · ln(1 + µ|x|) / ln(1 + µ)`.
pub fn mu_law_compand(x: f64) -> f64 {
    let f = libm::log1p(MU * x.abs()) / libm::log1p(MU);
    if x < 0.0 {
        -f
    } else {
        f
    }
}

/// 8-bit µ-law code, `floor((F(x) + 1) / 2 · 255 + 0.5)`. Inputs outside
/// `[-1, 1]` are clamped.
pub fn mu_law_encode(x: f32) -> u8 {
    let mut x = x as f64;
    if !(x.abs() <= 1.0) {
        log::warn!("mu-law input {x} clamped to [-1, 1]");
        x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    }
    let c = libm::floor((mu_law_compand(x) + 1.0) / 2.0 * MU + 0.5);
    c.clamp(0.0, 255.0) as u8
}

pub fn mu_law_decode(code: u8) -> f32 {
    let f = 2.0 * code as f64 / MU - 1.0;
    let mag = (libm::pow(1.0 + MU, f.abs()) - 1.0) / MU;
    (if f < 0.0 { -mag } else { mag }) as f32
}
