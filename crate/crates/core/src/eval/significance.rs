use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sample t-test without assuming equal variances. Samples with zero
/// variance on both sides give p = 1 for equal means and p = 0 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        let equal = ma == mb;
        let t = if equal {
            0.0
        } else {
            f64::INFINITY.copysign(ma - mb)
        };
        return Some(TTest {
            t,
            df: na + nb - 2.0,
            p: if equal { 1.0 } else { 0.0 },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Some(TTest { t, df, p })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub metric: String,
    #[serde(flatten)]
    pub test: TTest,
}

/// Every pair of rows compared on their per-seed values of `metric`.
pub fn significance(
    rows: &[(String, Vec<f64>)],
    metric: &str,
) -> Result<Vec<PairwiseTest>, EvalError> {
    if let Some((row, v)) = rows.iter().find(|(_, v)| v.len() < 2) {
        return Err(EvalError::InsufficientSeeds {
            row: row.clone(),
            seeds: v.len(),
        });
    }
    let mut out = Vec::new();
    for (i, (a, va)) in rows.iter().enumerate() {
        for (b, vb) in &rows[i + 1..] {
            let test = welch_t_test(va, vb).expect("checked lengths");
            out.push(PairwiseTest {
                a: a.clone(),
                b: b.clone(),
                metric: metric.to_string(),
                test,
            });
        }
    }
    Ok(out)
}
