//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

/// `1 - sup |F_n - F_m|`, scanning every observed value of either sample.
pub fn ks_score_oracle(real: &[f64], synth: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let mut sup: f64 = 0.0;
    for &x in real.iter().chain(synth) {
        sup = sup.max((cdf(real, x) - cdf(synth, x)).abs());
    }
    1.0 - sup
}

pub fn tvd_score_oracle(real: &[usize], synth: &[usize], levels: usize) -> f64 {
    let mut d = 0.0;
    for l in 0..levels {
        let r = real.iter().filter(|&&v| v == l).count() as f64 / real.len() as f64;
        let s = synth.iter().filter(|&&v| v == l).count() as f64 / synth.len() as f64;
        d += (r - s).abs();
    }
    1.0 - 0.5 * d
}

pub fn pair_tvd_oracle(
    real: (&[usize], &[usize]),
    synth: (&[usize], &[usize]),
    la: usize,
    lb: usize,
) -> f64 {
    let p = |x: &[usize], y: &[usize], a: usize, b: usize| {
        x.iter().zip(y).filter(|(&u, &v)| u == a && v == b).count() as f64 / x.len() as f64
    };
    let mut d = 0.0;
    for a in 0..la {
        for b in 0..lb {
            d += (p(real.0, real.1, a, b) - p(synth.0, synth.1, a, b)).abs();
        }
    }
    1.0 - 0.5 * d
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn corr_score_oracle(real: (&[f64], &[f64]), synth: (&[f64], &[f64])) -> f64 {
    1.0 - (pearson_oracle(real.0, real.1) - pearson_oracle(synth.0, synth.1)).abs() / 2.0
}

pub fn mixed_score_oracle(
    real_cat: &[usize],
    real_num: &[f64],
    synth_cat: &[usize],
    synth_num: &[f64],
    levels: usize,
) -> f64 {
    let mut loss = 0.0;
    for l in 0..levels {
        let r: Vec<f64> = real_cat
            .iter()
            .zip(real_num)
            .filter(|(&c, _)| c == l)
            .map(|(_, &v)| v)
            .collect();
        if r.is_empty() {
            continue;
        }
        let s: Vec<f64> = synth_cat
            .iter()
            .zip(synth_num)
            .filter(|(&c, _)| c == l)
            .map(|(_, &v)| v)
            .collect();
        let ks = if s.is_empty() {
            1.0
        } else {
            1.0 - ks_score_oracle(&r, &s)
        };
        loss += r.len() as f64 / real_cat.len() as f64 * ks;
    }
    1.0 - loss
}
