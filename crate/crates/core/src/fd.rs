//! Central finite differences used as the default derivatives of user callables.

use nalgebra::{DMatrix, DVector};

/// Step for first derivatives: sqrt(eps) scaled by the coordinate magnitude.
pub fn first_step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + x.abs())
}

/// Step for second derivatives by second differences.
pub fn second_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

pub fn gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DVector<f64> {
    let mut z = x.clone();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|k| {
            let h = first_step(x[k]);
            z[k] = x[k] + h;
            let up = f(&z);
            z[k] = x[k] - h;
            let down = f(&z);
            z[k] = x[k];
            (up - down) / (2.0 * h)
        }),
    )
}

pub fn hessian<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut z = x.clone();
    let f0 = f(x);
    for a in 0..n {
        let ha = second_step(x[a]);
        z[a] = x[a] + ha;
        let fp = f(&z);
        z[a] = x[a] - ha;
        let fm = f(&z);
        z[a] = x[a];
        h[(a, a)] = (fp - 2.0 * f0 + fm) / (ha * ha);
        for b in 0..a {
            let hb = second_step(x[b]);
            let mut g = |sa: f64, sb: f64| {
                z[a] = x[a] + sa * ha;
                z[b] = x[b] + sb * hb;
                let v = f(&z);
                z[a] = x[a];
                z[b] = x[b];
                v
            };
            let v = (g(1.0, 1.0) - g(1.0, -1.0) - g(-1.0, 1.0) + g(-1.0, -1.0)) / (4.0 * ha * hb);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

/// Jacobian of a vector field; column k is the derivative along coordinate k.
pub fn jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut z = x.clone();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let h = first_step(x[k]);
        z[k] = x[k] + h;
        let up = f(&z);
        z[k] = x[k] - h;
        let down = f(&z);
        z[k] = x[k];
        cols.push((up - down) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |i, k| cols[k][i])
}
