use nrlangevin_core::{Ordering, ReversibleMode};

/// Closed-form stationary variance of the isotropic 2D scheme.
pub fn table_variance(mode: ReversibleMode, ordering: Ordering, p: usize, a: f64, b: f64, h: f64) -> f64 {
    let e = (-2.0 * a * h).exp();
    let rf = ordering == Ordering::ReversibleFirst;
    match (mode, p) {
        (ReversibleMode::Exact, 1) => {
            let c = 1.0 + a * a * b * b * h * h;
            let den = 2.0 * a * (1.0 - e * c);
            if rf { (1.0 - e) * c / den } else { (1.0 - e) / den }
        }
        (ReversibleMode::Exact, 2) => {
            let q = a.powi(4) * b.powi(4) * h.powi(4);
            if rf {
                (1.0 - e) * (q + 4.0) / (2.0 * a * (4.0 - e * (q + 4.0)))
            } else {
                2.0 * (1.0 - e) / (a * (4.0 - e * (4.0 + q)))
            }
        }
        (ReversibleMode::ThetaHalf, 1) => {
            let den = 8.0 * a - 4.0 * a * a * b * b * h + 4.0 * a.powi(3) * b * b * h * h - a.powi(4) * b * b * h.powi(3);
            if rf { (4.0 + 4.0 * a * a * b * b * h * h) / den } else { 4.0 / den }
        }
        (ReversibleMode::ThetaHalf, 2) => {
            let den = a * (32.0 - a.powi(3) * b.powi(4) * h.powi(3) * (2.0 - a * h).powi(2));
            if rf { 4.0 * (4.0 + a.powi(4) * b.powi(4) * h.powi(4)) / den } else { 16.0 / den }
        }
        _ => unreachable!(),
    }
}
