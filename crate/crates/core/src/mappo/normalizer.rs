/// Running per-dimension mean and (population) variance, merged batch by
/// batch with the parallel-variance update.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    count: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
}

const EPS: f64 = 1e-8;

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn from_parts(count: f64, mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len(), "normalizer moments differ in width");
        Self { count, mean, var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn update<R: AsRef<[f64]>>(&mut self, rows: &[R]) {
        if rows.is_empty() {
            return;
        }
        let d = self.dim();
        let n = rows.len() as f64;
        let mut b_mean = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), d, "normalizer width mismatch");
            b_mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        b_mean.iter_mut().for_each(|m| *m /= n);
        let mut b_var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in b_var.iter_mut().zip(r.as_ref()).zip(&b_mean) {
                *v += (x - m) * (x - m);
            }
        }
        b_var.iter_mut().for_each(|v| *v /= n);

        if self.count == 0.0 {
            self.mean = b_mean;
            self.var = b_var;
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..d {
            let delta = b_mean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + b_var[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    /// `(x - mean) / sqrt(var + eps)`; identity before any data is seen.
    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        if self.count == 0.0 {
            out.extend_from_slice(x);
            return;
        }
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((x, m), v)| (x - m) / (v + EPS).sqrt()),
        );
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }

    /// Standard deviation of dimension 0, used as a divisor for scalar
    /// streams such as rewards. Degenerate (constant or unseen) streams
    /// report 1 so they pass through unscaled.
    pub fn scale(&self) -> f64 {
        if self.count < 2.0 || self.var[0] < 1e-12 {
            1.0
        } else {
            self.var[0].sqrt()
        }
    }
}
