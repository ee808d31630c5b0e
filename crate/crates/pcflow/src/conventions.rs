//! Normalizations shared across modules.
//!
//! Real coordinates are ordered x1, y1, x2, y2 with z_i = x_i + i y_i, so
//! d_i = (d_x - i d_y)/2 and d_ibar = (d_x + i d_y)/2. A Hermitian metric
//! g_{k lbar} realifies to G = 2 Re g on the x/y blocks, which makes the
//! identity metric G = 2 delta and dV = 2^n det g.
//!
//! J e_{x_i} = e_{y_i}. The Kahler form is omega(a, b) = G(J e_a, e_b) and the
//! torsion 3-form is T = d omega(J., J., J.).

/// |T|^2 of the real torsion 3-form divided by the raw (2,1) contraction tr Q1.
pub const T3_OVER_RAW: f64 = 6.0;

/// Volume of the flat torus with the identity Hermitian metric, n = 2.
pub fn flat_volume(n: usize) -> f64 {
    (2.0f64).powi(n as i32) * (2.0 * std::f64::consts::PI).powi(2 * n as i32)
}

/// Safety factor in dt <= C_CFL h^2 lam_min / lam_max.
pub const C_CFL: f64 = 0.1;
