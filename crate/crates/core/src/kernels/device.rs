use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Host,
    Accelerator,
}

/// Execution target of a kernel.
///
/// Accelerator kernels run on host compute; their reported wall time is the
/// host time multiplied by `slowdown_factor`, padded with idle waiting when the
/// factor exceeds one. Values produced are identical to the host path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub kind: DeviceKind,
    pub slowdown_factor: f64,
}

impl Device {
    pub fn host() -> Self {
        Self {
            kind: DeviceKind::Host,
            slowdown_factor: 1.0,
        }
    }

    pub fn accelerator(slowdown_factor: f64) -> Result<Self, String> {
        if !(slowdown_factor.is_finite() && slowdown_factor > 0.0) {
            return Err(format!("slowdown_factor must be > 0, got {slowdown_factor}"));
        }
        Ok(Self {
            kind: DeviceKind::Accelerator,
            slowdown_factor,
        })
    }

    pub fn is_accelerator(&self) -> bool {
        self.kind == DeviceKind::Accelerator
    }
}

impl Default for Device {
    fn default() -> Self {
        Self::host()
    }
}
