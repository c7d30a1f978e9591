//! Normal-distribution approximations used by the Shapiro-Wilk routine:
//! AS 111 (percentage points) and AS 66 (tail area).

/// Ascending-order polynomial `c[0] + c[1] x + c[2] x^2 + ...`.
pub(crate) fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Inverse standard normal CDF (AS 111).
pub(crate) fn ppnd(p: f64) -> f64 {
    const SPLIT: f64 = 0.42;
    const A: [f64; 4] = [
        2.50662823884,
        -18.61500062529,
        41.39119773534,
        -25.44106049637,
    ];
    const B: [f64; 4] = [
        -8.47351093090,
        23.08336743743,
        -21.06224101826,
        3.13082909833,
    ];
    const C: [f64; 4] = [-2.78718931138, -2.29796479134, 4.85014127135, 2.32121276858];
    const D: [f64; 2] = [3.54388924762, 1.63706781897];

    let q = p - 0.5;
    if q.abs() <= SPLIT {
        let r = q * q;
        return q * (((A[3] * r + A[2]) * r + A[1]) * r + A[0])
            / ((((B[3] * r + B[2]) * r + B[1]) * r + B[0]) * r + 1.0);
    }
    let r = if q > 0.0 { 1.0 - p } else { p };
    if r <= 0.0 {
        return 0.0;
    }
    let r = (-r.ln()).sqrt();
    let v = (((C[3] * r + C[2]) * r + C[1]) * r + C[0]) / ((D[1] * r + D[0]) * r + 1.0);
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// Standard normal tail area (AS 66): P(Z > x) when `upper`, else P(Z < x).
pub(crate) fn alnorm(x: f64, upper: bool) -> f64 {
    const LTONE: f64 = 7.0;
    const UTZERO: f64 = 38.0;
    const CON: f64 = 1.28;

    let mut up = upper;
    let mut z = x;
    if z.is_nan() || z <= 0.0 {
        up = !up;
        z = -z;
    }
    if !(z <= LTONE || (up && z <= UTZERO)) {
        return if up { 0.0 } else { 1.0 };
    }
    let y = 0.5 * z * z;
    let tail = if z <= CON {
        0.5 - z
            * (0.398942280444
                - 0.399903438504 * y
                    / (y + 5.75885480458
                        - 29.8213557808
                            / (y + 2.62433121679 + 48.6959930692 / (y + 5.92885724438))))
    } else {
        0.398942280385 * (-y).exp()
            / (z - 3.8052e-8
                + 1.00000615302
                    / (z + 3.98064794e-4
                        + 1.98615381364
                            / (z - 0.151679116635
                                + 5.29330324926
                                    / (z + 4.8385912808
                                        - 15.1508972451
                                            / (z + 0.742380924027
                                                + 30.789933034 / (z + 3.99019417011))))))
    };
    if up {
        tail
    } else {
        1.0 - tail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(ppnd(0.5), 0.0);
        assert!((ppnd(0.975) - 1.959963984540054).abs() < 1e-6);
        assert!((ppnd(0.01) + 2.3263478740408408).abs() < 1e-6);
    }

    #[test]
    fn tails() {
        assert!((alnorm(0.0, true) - 0.5).abs() < 1e-12);
        assert!((alnorm(1.959963984540054, true) - 0.025).abs() < 1e-9);
        assert!((alnorm(-1.0, false) - 0.15865525393145707).abs() < 1e-9);
        assert!((alnorm(1.0, false) - 0.8413447460685429).abs() < 1e-9);
    }

    #[test]
    fn horner_matches_expansion() {
        assert_eq!(poly(&[1.0, 2.0, 3.0], 2.0), 1.0 + 4.0 + 12.0);
        assert_eq!(poly(&[4.0], 9.0), 4.0);
    }
}
