use serde::{Deserialize, Serialize};

/// Simulated time is kept in integer microseconds.
pub type Micros = u64;

pub const MICROS_PER_SEC: f64 = 1_000_000.0;

pub fn secs_to_micros(s: f64) -> Micros {
    (s * MICROS_PER_SEC).round().max(0.0) as Micros
}

pub fn micros_to_secs(t: Micros) -> f64 {
    t as f64 / MICROS_PER_SEC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    /// Seconds of simulated time.
    pub duration: f64,
    pub seed: u64,
    /// CPU capacity of the machine, in cores.
    pub budget_cores: f64,
    #[serde(default = "default_quantum_ms")]
    pub quantum_ms: f64,
    /// Quota accounting period (cpu.max period).
    #[serde(default = "default_period_ms")]
    pub period_ms: f64,
    /// Interval between active-thread samples in the trace.
    #[serde(default = "default_sample_ms")]
    pub sample_ms: f64,
    /// Fraction of a node's grant lost per runnable thread beyond the cores
    /// it was granted (context switching under oversubscription).
    #[serde(default)]
    pub switch_overhead: f64,
}

fn default_quantum_ms() -> f64 {
    1.0
}

fn default_period_ms() -> f64 {
    100.0
}

fn default_sample_ms() -> f64 {
    20.0
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            duration: 5.0,
            seed: 0,
            budget_cores: 1.0,
            quantum_ms: default_quantum_ms(),
            period_ms: default_period_ms(),
            sample_ms: default_sample_ms(),
            switch_overhead: 0.0,
        }
    }
}

impl SimulationSettings {
    pub fn quantum(&self) -> Micros {
        secs_to_micros(self.quantum_ms / 1000.0)
    }

    pub fn period(&self) -> Micros {
        secs_to_micros(self.period_ms / 1000.0)
    }

    pub fn sample_interval(&self) -> Micros {
        secs_to_micros(self.sample_ms / 1000.0).max(self.quantum())
    }

    pub fn end(&self) -> Micros {
        secs_to_micros(self.duration)
    }

    pub fn with_duration(&self, duration: f64) -> Self {
        Self {
            duration,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(format!("sim.duration must be >= 0, got {}", self.duration));
        }
        if !(self.budget_cores > 0.0 && self.budget_cores.is_finite()) {
            return Err(format!(
                "sim.budget_cores must be > 0, got {}",
                self.budget_cores
            ));
        }
        if !(self.switch_overhead >= 0.0 && self.switch_overhead.is_finite()) {
            return Err(format!(
                "sim.switch_overhead must be >= 0, got {}",
                self.switch_overhead
            ));
        }
        if self.quantum() == 0 {
            return Err("sim.quantum_ms must be > 0".into());
        }
        if self.period() == 0 || !self.period().is_multiple_of(self.quantum()) {
            return Err("sim.period_ms must be a positive multiple of the quantum".into());
        }
        Ok(())
    }
}
