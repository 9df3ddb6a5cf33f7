/// Running statistics that let the critic regress standardized returns.
///
/// Mean and second moment are exponential averages with bias correction, so
/// early updates are not dragged toward zero. Until the first update the
/// transform is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNorm {
    pub beta: f64,
    pub mean: f64,
    pub mean_sq: f64,
    /// Accumulated weight of the averages, `1 - beta^updates`.
    pub debias: f64,
}

/// Variance floor, keeps near-constant returns from blowing up the scale.
const MIN_VAR: f64 = 1e-2;

impl Default for ValueNorm {
    fn default() -> Self {
        Self::new(0.99)
    }
}

impl ValueNorm {
    pub fn new(beta: f64) -> Self {
        Self { beta, mean: 0.0, mean_sq: 0.0, debias: 0.0 }
    }

    /// `(mean, std)` of the tracked targets.
    pub fn stats(&self) -> (f64, f64) {
        if self.debias <= 0.0 {
            return (0.0, 1.0);
        }
        let mu = self.mean / self.debias;
        let var = (self.mean_sq / self.debias - mu * mu).max(MIN_VAR);
        (mu, libm::sqrt(var))
    }

    pub fn update(&mut self, targets: &[f64]) {
        if targets.is_empty() {
            return;
        }
        let n = targets.len() as f64;
        let m = targets.iter().sum::<f64>() / n;
        let m2 = targets.iter().map(|x| x * x).sum::<f64>() / n;
        let b = self.beta;
        self.mean = b * self.mean + (1.0 - b) * m;
        self.mean_sq = b * self.mean_sq + (1.0 - b) * m2;
        self.debias = b * self.debias + (1.0 - b);
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let (mu, sd) = self.stats();
        (x - mu) / sd
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        let (mu, sd) = self.stats();
        y * sd + mu
    }
}
