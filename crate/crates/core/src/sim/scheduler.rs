//! Per-quantum CPU allocation.
//!
//! Capacity is shared max-min fairly in proportion to each node's weight
//! (its runnable thread count, mirroring a per-thread fair scheduler).
//! Each node is capped by its demand, its remaining quota and its
//! parallelism; capacity released by capped nodes is redistributed to the
//! others until nothing is left or everyone is capped.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpuRequest {
    /// CPU-seconds the node could use this quantum.
    pub demand: f64,
    /// CPU-seconds left in the node's quota period; infinite without quota.
    pub quota_remaining: f64,
    /// Runnable threads.
    pub parallelism: usize,
    pub weight: f64,
}

impl CpuRequest {
    /// Single-threaded request with no quota.
    pub fn simple(demand: f64) -> Self {
        Self {
            demand,
            quota_remaining: f64::INFINITY,
            parallelism: 1,
            weight: 1.0,
        }
    }

    fn cap(&self, quantum: f64) -> f64 {
        self.demand
            .min(self.quota_remaining)
            .min(self.parallelism as f64 * quantum)
            .max(0.0)
    }
}

/// Splits `capacity_cores * quantum` CPU-seconds among the requests.
pub fn allocate_cpu(requests: &[CpuRequest], capacity_cores: f64, quantum: f64) -> Vec<f64> {
    let mut grants = vec![0.0; requests.len()];
    let mut remaining = capacity_cores * quantum;
    let caps: Vec<f64> = requests.iter().map(|r| r.cap(quantum)).collect();
    let mut open: Vec<usize> = (0..requests.len())
        .filter(|&i| caps[i] > 0.0 && requests[i].weight > 0.0)
        .collect();

    while !open.is_empty() && remaining > 0.0 {
        let weight: f64 = open.iter().map(|&i| requests[i].weight).sum();
        let per_weight = remaining / weight;
        let (capped, rest): (Vec<usize>, Vec<usize>) = open
            .iter()
            .partition(|&&i| caps[i] <= per_weight * requests[i].weight);
        if capped.is_empty() {
            for &i in &rest {
                grants[i] = per_weight * requests[i].weight;
            }
            break;
        }
        for &i in &capped {
            grants[i] = caps[i];
            remaining -= caps[i];
        }
        open = rest;
    }
    grants
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q: f64 = 0.001;

    #[test]
    fn fair_split() {
        let g = allocate_cpu(&[CpuRequest::simple(Q), CpuRequest::simple(Q)], 1.0, Q);
        assert!((g[0] - 0.0005).abs() < 1e-15 && (g[1] - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn exhausted_quota_gets_nothing() {
        let a = CpuRequest {
            quota_remaining: 0.0,
            ..CpuRequest::simple(Q)
        };
        let g = allocate_cpu(&[a, CpuRequest::simple(Q)], 1.0, Q);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - Q).abs() < 1e-15);
    }

    #[test]
    fn water_filling() {
        // Two saturated two-thread nodes and one light node on one core:
        // the light node is served fully, the rest splits evenly.
        let high = CpuRequest {
            demand: 2.0 * Q,
            parallelism: 2,
            ..CpuRequest::simple(0.0)
        };
        let low = CpuRequest::simple(0.0001);
        let g = allocate_cpu(&[high, high, low], 1.0, Q);
        assert!((g[2] - 0.0001).abs() < 1e-15);
        assert!((g[0] - 0.00045).abs() < 1e-15);
        assert!((g[1] - 0.00045).abs() < 1e-15);
    }

    #[test]
    fn thread_weighting() {
        let many = CpuRequest {
            demand: 4.0 * Q,
            parallelism: 4,
            weight: 4.0,
            quota_remaining: f64::INFINITY,
        };
        let g = allocate_cpu(&[many, CpuRequest::simple(Q)], 1.0, Q);
        assert!((g[0] - 0.0008).abs() < 1e-15);
        assert!((g[1] - 0.0002).abs() < 1e-15);
    }
}
