//! Small dense least-squares and interpolation helpers.

/// Solve `min |A c - y|` for a tall matrix given row by row, through a
/// modified Gram-Schmidt QR factorization (applied twice for stability).
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = rows.first()?.len();
    let n = rows.len();
    if n < m || y.len() != n {
        return None;
    }
    let mut q: Vec<Vec<f64>> = (0..m).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut r = vec![vec![0.0; m]; m];
    for j in 0..m {
        for _pass in 0..2 {
            for i in 0..j {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                r[i][j] += d;
                let qi = q[i].clone();
                for (v, w) in q[j].iter_mut().zip(&qi) {
                    *v -= d * w;
                }
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return None;
        }
        r[j][j] = norm;
        for v in q[j].iter_mut() {
            *v /= norm;
        }
    }
    let qty: Vec<f64> = q.iter().map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut c = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|k| r[i][k] * c[k]).sum();
        c[i] = (qty[i] - s) / r[i][i];
    }
    Some(c)
}

/// Ordinary linear regression `y = slope x + intercept`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2 { (rss / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Some(LineFit { slope, intercept, slope_se })
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, `y` monotone, at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Option<Pchip> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = del[0];
            d[1] = del[0];
        } else {
            for i in 1..n - 1 {
                if del[i - 1] * del[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], del[0], del[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        }
        Some(Pchip { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.d[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= 0.0 {
        0.0
    } else if del0 * del1 <= 0.0 && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_coefficients() {
        let xs: Vec<f64> = (1..50).map(|i| i as f64).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x.powf(-0.5), 1.0 / x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.0 - 3.0 * x.powf(-0.5) + 0.25 / x).collect();
        let c = least_squares(&rows, &y).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-9 && (c[1] + 3.0).abs() < 1e-9 && (c[2] - 0.25).abs() < 1e-9);
        let f = linear_fit(&xs, &xs.iter().map(|x| 1.5 * x - 2.0).collect::<Vec<_>>()).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12 && (f.intercept + 2.0).abs() < 1e-10);
    }

    #[test]
    fn pchip_is_monotone_and_interpolates() {
        let x: Vec<f64> = vec![0.0, 1.0, 1.5, 4.0, 4.1, 9.0];
        let y: Vec<f64> = vec![0.0, 0.1, 0.9, 0.91, 0.99, 1.0];
        let p = Pchip::new(x.clone(), y.clone()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((p.eval(*a) - b).abs() < 1e-15);
        }
        let mut last = -1.0;
        for i in 0..=9000 {
            let v = p.eval(i as f64 * 1e-3);
            assert!(v >= last - 1e-15);
            last = v;
        }
    }
}
