//! Minimal HSV to RGB conversion for the hue-based temporal colorization.

/// Convert HSV to RGB. Hue in degrees (wrapped into [0, 360)), saturation
/// and value in [0, 1]. Returns (r, g, b) in [0, 1].
pub fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    if s <= 0.0 {
        return (v, v, v);
    }
    let f = h.fract();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match h as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
