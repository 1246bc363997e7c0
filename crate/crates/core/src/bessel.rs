//! Bessel functions of the first kind of integer order.
//!
//! Miller's backward recurrence, normalized with `J₀ + 2 Σ_k J_{2k} = 1`.
//! This is kept independent of the quadrature route in `rates` so that the two
//! can check each other.

/// `J_0(x) ..= J_{n_max}(x)`.
pub fn bessel_j_orders(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let top = (n_max as f64).max(ax);
    // Start well above both the requested order and the turning point.
    let mut start = (top + 30.0 + (40.0 * top).sqrt()) as usize;
    start += start % 2;

    let mut j_next = 0.0;
    let mut j_cur = 1e-300;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / ax * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        let order = k - 1;
        if order <= n_max {
            out[order] = j_cur;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * j_cur;
        }
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += j_cur;
    for (n, v) in out.iter_mut().enumerate() {
        *v /= norm;
        if x < 0.0 && n % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// `J_n(x)` for any integer order, using `J_{-n} = (-1)^n J_n`.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let k = n.unsigned_abs() as usize;
    let v = bessel_j_orders(k, x)[k];
    if n < 0 && k % 2 == 1 {
        -v
    } else {
        v
    }
}
