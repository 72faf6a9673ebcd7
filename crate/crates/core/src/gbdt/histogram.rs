use super::GbdtError;

/// Per-bin row count and residual sum for one feature at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub count: Vec<u64>,
    pub grad: Vec<f64>,
}

impl Histogram {
    pub fn zeros(n_bins: usize) -> Self {
        Self {
            count: vec![0; n_bins],
            grad: vec![0.0; n_bins],
        }
    }

    /// Accumulates `rows` in the order given.
    pub fn build(rows: &[u32], residuals: &[f64], bins: &[u16], n_bins: usize) -> Self {
        let mut h = Self::zeros(n_bins);
        for &r in rows {
            let b = bins[r as usize] as usize;
            h.count[b] += 1;
            h.grad[b] += residuals[r as usize];
        }
        h
    }

    pub fn total_count(&self) -> u64 {
        self.count.iter().sum()
    }

    pub fn total_grad(&self) -> f64 {
        self.grad.iter().sum()
    }

    pub fn add(&self, other: &Histogram) -> Histogram {
        Histogram {
            count: self.count.iter().zip(&other.count).map(|(a, b)| a + b).collect(),
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| a + b).collect(),
        }
    }

    /// Sibling of `child` under `self`.
    pub fn subtract(&self, child: &Histogram) -> Result<Histogram, GbdtError> {
        if self.count.len() != child.count.len() {
            return Err(GbdtError::Internal(format!(
                "histogram width {} vs {}",
                self.count.len(),
                child.count.len()
            )));
        }
        let count = self
            .count
            .iter()
            .zip(&child.count)
            .enumerate()
            .map(|(b, (p, c))| {
                p.checked_sub(*c).ok_or_else(|| {
                    GbdtError::Internal(format!("histogram subtraction underflow in bin {b}: {p} - {c}"))
                })
            })
            .collect::<Result<_, _>>()?;
        let grad = self
            .grad
            .iter()
            .zip(&child.grad)
            .zip(&child.count)
            .zip(&self.count)
            .map(|(((p, c), cc), pc)| if cc == pc { 0.0 } else { p - c })
            .collect();
        Ok(Histogram { count, grad })
    }
}
