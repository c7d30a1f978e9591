use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::normal::{alnorm, poly, ppnd};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StatTest {
    ShapiroWilk,
    TTwoSided,
}

/// Variance assumption of the two-sample t-test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TTestKind {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance.
    Student,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test: StatTest,
    pub statistic: f64,
    pub p_value: f64,
    pub n: Vec<usize>,
    /// Degrees of freedom (t-test only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub df: Option<f64>,
}

/// Largest sample accepted by the Royston approximation.
const SW_MAX_N: usize = 5000;

/// Shapiro-Wilk W test via Royston's AS R94 approximation.
pub fn shapiro_wilk(samples: &[f64]) -> Result<StatTestResult> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];
    const SMALL: f64 = 1e-19;

    let n = samples.len();
    if !(3..=SW_MAX_N).contains(&n) {
        return Err(Error::invalid(format!(
            "Shapiro-Wilk needs 3..={SW_MAX_N} values, got {n}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "Shapiro-Wilk input contains non-finite values",
        ));
    }

    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let pivot = x[n / 2];
    x.iter_mut().for_each(|v| *v -= pivot);

    let range = x[n - 1] - x[0];
    if range < SMALL {
        return Err(Error::Degenerate(
            "Shapiro-Wilk on a constant sample".into(),
        ));
    }

    // Half of the antisymmetric coefficient vector, largest first.
    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (0..half)
            .map(|i| ppnd((i as f64 + 1.0 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first_scaled, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first_scaled..half {
            a[i] = -m[i] / fac;
        }
    }

    // Full coefficients: -a[i] for the lower half, +a[i] mirrored above.
    let coef = |i: usize| -> f64 {
        if i < half {
            -a[i]
        } else if n % 2 == 1 && i == half {
            0.0
        } else {
            a[n - 1 - i]
        }
    };
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let sa = (0..n).map(coef).sum::<f64>() / an;
    let sx = xs.iter().sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, &xi) in xs.iter().enumerate() {
        let da = coef(i) - sa;
        let dx = xi - sx;
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let result = |statistic: f64, p: f64| StatTestResult {
        test: StatTest::ShapiroWilk,
        statistic,
        p_value: p.clamp(0.0, 1.0),
        n: vec![n],
        df: None,
    };

    if n == 3 {
        if w < 0.75 {
            return Ok(result(0.75, 0.0));
        }
        let pw = 1.0 - 6.0 / std::f64::consts::PI * w.sqrt().acos();
        return Ok(result(w, pw));
    }

    let y = w1.ln();
    let p = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            SMALL
        } else {
            let y = -(gamma - y).ln();
            let m = poly(&C3, an);
            let s = poly(&C4, an).exp();
            alnorm((y - m) / s, true)
        }
    } else {
        let xx = an.ln();
        let m = poly(&C5, xx);
        let s = poly(&C6, xx).exp();
        alnorm((y - m) / s, true)
    };
    Ok(result(w, p))
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided two-sample t-test. The statistic has the sign of
/// `mean(a) - mean(b)`.
pub fn t_test_two_sided(a: &[f64], b: &[f64], kind: TTestKind) -> Result<StatTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("t-test needs at least 2 values per group"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test input contains non-finite values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Degenerate(
            "t-test with zero variance in both groups".into(),
        ));
    }

    let (t, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((ma - mb) / se2.sqrt(), df)
        }
        TTestKind::Student => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
    };
    // P(|T| > |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2).
    let p = if t == 0.0 {
        1.0
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t * t))
    };
    Ok(StatTestResult {
        test: StatTest::TTwoSided,
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
        n: vec![a.len(), b.len()],
        df: Some(df),
    })
}
