use crate::error::{Error, Result};

fn centered(series: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!("ESS needs at least 10 draws, got {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) || x.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSeries);
    }
    Ok((x, c0))
}

fn autocorrelation(x: &[f64], c0: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0)
}

/// Effective sample size `n / (1 + 2 sum_k rho_k)`, truncating the
/// autocorrelation sum with the initial monotone sequence of paired lags.
pub fn ess(series: &[f64]) -> Result<f64> {
    let (x, c0) = centered(series)?;
    let n = x.len();
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocorrelation(&x, c0, 2 * k) + autocorrelation(&x, c0, 2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    Ok(n as f64 / tau.max(1.0 / n as f64))
}

pub fn mean(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / series.len() as f64
}

pub fn variance(series: &[f64]) -> f64 {
    let m = mean(series);
    series.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (series.len() as f64 - 1.0)
}

/// Monte Carlo standard error of the mean, `sd / sqrt(ESS)`.
pub fn mcse_mean(series: &[f64]) -> Result<f64> {
    Ok((variance(series) / ess(series)?).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::SeededRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed, 0).rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_ess_near_n() {
        let x = normals(10_000, 1);
        let e = ess(&x).unwrap();
        assert!((8_000.0..=12_000.0).contains(&e), "{e}");
    }

    #[test]
    fn constant_is_degenerate() {
        assert_eq!(ess(&[2.5; 50]).unwrap_err(), Error::DegenerateSeries);
    }

    #[test]
    fn ar1_ess() {
        let rho = 0.5;
        let z = normals(100_000, 2);
        let mut x = vec![0.0; z.len()];
        for t in 1..z.len() {
            x[t] = rho * x[t - 1] + z[t];
        }
        let expected = z.len() as f64 * (1.0 - rho) / (1.0 + rho);
        let e = ess(&x).unwrap();
        assert!((e - expected).abs() / expected < 0.15, "{e} vs {expected}");
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5]) - 0.5).abs() < 1e-15);
    }
}
