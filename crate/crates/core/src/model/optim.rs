/// `base * min(1, sqrt(warmup / step))` for 1-based `step`: flat for the
/// first `warmup` steps, then decaying as `1 / sqrt(step)`.
pub fn inverse_sqrt_lr(base: f64, step: usize, warmup: usize) -> f64 {
    let step = step.max(1) as f64;
    base * (warmup.max(1) as f64 / step).sqrt().min(1.0)
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// First and second moment estimates.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Restore moments and step count saved from a run with equal length.
    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, t: u64) -> crate::error::Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(crate::error::Error::Shape(format!(
                "optimizer state for {} parameters, model has {}",
                m.len(),
                self.m.len()
            )));
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * self.weight_decay;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
