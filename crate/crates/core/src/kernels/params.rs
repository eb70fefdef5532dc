//! Kernel invocations, parameter schemas and typed parameter access.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::device::{Device, DeviceKind};
use super::KernelError;

/// Raw kernel parameters as they appear in task documents.
pub type Params = BTreeMap<String, Value>;

/// One invocation of a catalog kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCall {
    pub kernel: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: Params,
}

impl KernelCall {
    pub fn new(kernel: impl Into<String>) -> Self {
        Self {
            kernel: kernel.into(),
            params: Params::new(),
        }
    }

    /// Builder-style parameter insertion.
    pub fn with(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    fn missing(&self, name: &str) -> KernelError {
        KernelError::MissingParameter {
            kernel: self.kernel.clone(),
            param: name.to_string(),
        }
    }

    fn invalid(&self, name: &str, reason: impl Into<String>) -> KernelError {
        KernelError::InvalidParameter {
            kernel: self.kernel.clone(),
            param: name.to_string(),
            reason: reason.into(),
        }
    }

    fn get(&self, name: &str) -> Option<&Value> {
        self.params.get(name)
    }

    /// Non-negative integer (byte sizes and element counts that may be zero).
    pub fn bytes(&self, name: &str) -> Result<u64, KernelError> {
        let v = self.get(name).ok_or_else(|| self.missing(name))?;
        v.as_u64()
            .ok_or_else(|| self.invalid(name, "expected a non-negative integer"))
    }

    pub fn bytes_or(&self, name: &str, default: u64) -> Result<u64, KernelError> {
        match self.get(name) {
            None => Ok(default),
            Some(_) => self.bytes(name),
        }
    }

    /// Strictly positive integer.
    pub fn count(&self, name: &str) -> Result<u64, KernelError> {
        let n = self.bytes(name)?;
        if n == 0 {
            return Err(self.invalid(name, "must be >= 1"));
        }
        Ok(n)
    }

    pub fn count_or(&self, name: &str, default: u64) -> Result<u64, KernelError> {
        match self.get(name) {
            None => Ok(default),
            Some(_) => self.count(name),
        }
    }

    pub fn real_or(&self, name: &str, default: f64) -> Result<f64, KernelError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.invalid(name, "expected a finite number")),
        }
    }

    pub fn flag_or(&self, name: &str, default: bool) -> Result<bool, KernelError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| self.invalid(name, "expected a boolean")),
        }
    }

    fn word(&self, name: &str) -> Result<Option<&str>, KernelError> {
        match self.get(name) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(Some)
                .ok_or_else(|| self.invalid(name, "expected a string")),
        }
    }

    /// Device parameter. Accepts `"host"`, `"accelerator"` (aliases `"cpu"`,
    /// `"gpu"`) or `{"kind": ..., "slowdown_factor": ...}`.
    pub fn device(&self, default_slowdown: f64) -> Result<Device, KernelError> {
        let Some(v) = self.get("device") else {
            return Ok(Device::host());
        };
        let parse_kind = |s: &str| match s {
            "host" | "cpu" => Ok(DeviceKind::Host),
            "accelerator" | "gpu" | "device" => Ok(DeviceKind::Accelerator),
            other => Err(self.invalid("device", format!("unknown device kind `{other}`"))),
        };
        match v {
            Value::String(s) => match parse_kind(s)? {
                DeviceKind::Host => Ok(Device::host()),
                DeviceKind::Accelerator => Device::accelerator(default_slowdown)
                    .map_err(|e| self.invalid("device", e)),
            },
            Value::Object(map) => {
                let kind = map
                    .get("kind")
                    .and_then(Value::as_str)
                    .ok_or_else(|| self.invalid("device", "object form needs a `kind` string"))?;
                let kind = parse_kind(kind)?;
                let factor = match map.get("slowdown_factor") {
                    None => default_slowdown,
                    Some(f) => f
                        .as_f64()
                        .ok_or_else(|| self.invalid("device", "slowdown_factor must be a number"))?,
                };
                match kind {
                    DeviceKind::Host if factor != 1.0 && map.contains_key("slowdown_factor") => {
                        Err(self.invalid("device", "host device has slowdown_factor 1"))
                    }
                    DeviceKind::Host => Ok(Device::host()),
                    DeviceKind::Accelerator => {
                        Device::accelerator(factor).map_err(|e| self.invalid("device", e))
                    }
                }
            }
            _ => Err(self.invalid("device", "expected a string or an object")),
        }
    }

    pub fn distribution(&self) -> Result<Distribution, KernelError> {
        match self.word("distribution")? {
            None | Some("uniform") => Ok(Distribution::Uniform),
            Some("normal") => Ok(Distribution::Normal),
            Some(other) => Err(self.invalid("distribution", format!("unknown distribution `{other}`"))),
        }
    }

    pub fn functor(&self) -> Result<Functor, KernelError> {
        match self.word("functor")? {
            None | Some("square") => Ok(Functor::Square),
            Some("sqrt") => Ok(Functor::Sqrt),
            Some("negate") => Ok(Functor::Negate),
            Some(other) => Err(self.invalid("functor", format!("unknown functor `{other}`"))),
        }
    }

    /// List of `(m, k, n)` triples.
    pub fn dim_list(&self, name: &str) -> Result<Vec<[usize; 3]>, KernelError> {
        let v = self.get(name).ok_or_else(|| self.missing(name))?;
        let arr = v
            .as_array()
            .ok_or_else(|| self.invalid(name, "expected a list of [m, k, n] triples"))?;
        arr.iter()
            .map(|t| {
                let dims = t
                    .as_array()
                    .filter(|d| d.len() == 3)
                    .ok_or_else(|| self.invalid(name, "each entry must be [m, k, n]"))?;
                let mut out = [0usize; 3];
                for (slot, d) in out.iter_mut().zip(dims) {
                    *slot = d
                        .as_u64()
                        .filter(|&x| x >= 1)
                        .ok_or_else(|| self.invalid(name, "dimensions must be positive integers"))?
                        as usize;
                }
                Ok(out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functor {
    Square,
    Sqrt,
    Negate,
}

/// Value class a parameter must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Integer >= 0.
    Bytes,
    /// Integer >= 1.
    Count,
    /// Integer power of two >= 2.
    PowerOfTwo,
    Real,
    PositiveReal,
    Flag,
    Device,
    Distribution,
    Functor,
    DimList,
    /// Only the complex double-width input type is supported.
    TypeIn,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamKind::Bytes => "bytes",
            ParamKind::Count => "count",
            ParamKind::PowerOfTwo => "power-of-two",
            ParamKind::Real => "real",
            ParamKind::PositiveReal => "positive-real",
            ParamKind::Flag => "flag",
            ParamKind::Device => "device",
            ParamKind::Distribution => "distribution",
            ParamKind::Functor => "functor",
            ParamKind::DimList => "dim-list",
            ParamKind::TypeIn => "type-in",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
}

/// Parameter descriptor attached to every registered kernel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamSchema {
    pub params: Vec<ParamSpec>,
}

impl ParamSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn required(mut self, name: &str, kind: ParamKind) -> Self {
        self.params.push(ParamSpec {
            name: name.to_string(),
            kind,
            required: true,
        });
        self
    }

    pub fn optional(mut self, name: &str, kind: ParamKind) -> Self {
        self.params.push(ParamSpec {
            name: name.to_string(),
            kind,
            required: false,
        });
        self
    }

    pub fn lookup(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Checks presence, membership and value class of every parameter.
    /// `repetitions` is accepted by every kernel.
    pub fn validate(&self, call: &KernelCall) -> Result<(), KernelError> {
        for spec in &self.params {
            if spec.required && !call.params.contains_key(&spec.name) {
                return Err(call.missing(&spec.name));
            }
        }
        for (name, value) in &call.params {
            if name == "repetitions" {
                call.count("repetitions")?;
                continue;
            }
            let spec = self
                .lookup(name)
                .ok_or_else(|| call.invalid(name, "not accepted by this kernel"))?;
            check_kind(call, name, spec.kind, value)?;
        }
        Ok(())
    }
}

fn check_kind(call: &KernelCall, name: &str, kind: ParamKind, value: &Value) -> Result<(), KernelError> {
    match kind {
        ParamKind::Bytes => call.bytes(name).map(|_| ()),
        ParamKind::Count => call.count(name).map(|_| ()),
        ParamKind::PowerOfTwo => {
            let n = call.bytes(name)?;
            if n < 2 || !n.is_power_of_two() {
                return Err(call.invalid(name, format!("{n} is not a power of two >= 2")));
            }
            Ok(())
        }
        ParamKind::Real => call.real_or(name, 0.0).map(|_| ()),
        ParamKind::PositiveReal => {
            let x = call.real_or(name, 0.0)?;
            if x <= 0.0 {
                return Err(call.invalid(name, "must be > 0"));
            }
            Ok(())
        }
        ParamKind::Flag => call.flag_or(name, false).map(|_| ()),
        ParamKind::Device => call.device(1.0).map(|_| ()),
        ParamKind::Distribution => call.distribution().map(|_| ()),
        ParamKind::Functor => call.functor().map(|_| ()),
        ParamKind::DimList => call.dim_list(name).map(|_| ()),
        ParamKind::TypeIn => match value.as_str() {
            Some("complex128") | Some("complex") | Some("complex_double") => Ok(()),
            _ => Err(call.invalid(name, "only complex128 input is supported")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn required_params_are_enforced() {
        let schema = ParamSchema::new().required("data_size", ParamKind::Bytes);
        let call = KernelCall::new("readNonMPI");
        assert!(matches!(
            schema.validate(&call),
            Err(KernelError::MissingParameter { .. })
        ));
        let call = call.with("data_size", 10);
        schema.validate(&call).unwrap();
    }

    #[test]
    fn unknown_param_rejected() {
        let schema = ParamSchema::new().required("data_size", ParamKind::Bytes);
        let call = KernelCall::new("x").with("data_size", 1).with("dat_size", 2);
        assert!(matches!(
            schema.validate(&call),
            Err(KernelError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn power_of_two_check() {
        let schema = ParamSchema::new().required("data_size", ParamKind::PowerOfTwo);
        for bad in [0u64, 1, 3, 6, 12] {
            let call = KernelCall::new("fft").with("data_size", bad);
            assert!(schema.validate(&call).is_err(), "{bad}");
        }
        for good in [2u64, 4, 1024] {
            let call = KernelCall::new("fft").with("data_size", good);
            schema.validate(&call).unwrap();
        }
    }

    #[test]
    fn device_forms() {
        let c = KernelCall::new("k").with("device", "gpu");
        let d = c.device(3.0).unwrap();
        assert_eq!(d.kind, DeviceKind::Accelerator);
        assert_eq!(d.slowdown_factor, 3.0);

        let c = KernelCall::new("k").with("device", json!({"kind": "accelerator", "slowdown_factor": 2.5}));
        assert_eq!(c.device(1.0).unwrap().slowdown_factor, 2.5);

        let c = KernelCall::new("k").with("device", json!({"kind": "accelerator", "slowdown_factor": 0.0}));
        assert!(c.device(1.0).is_err());

        let c = KernelCall::new("k").with("device", json!({"kind": "host", "slowdown_factor": 2.0}));
        assert!(c.device(1.0).is_err());
    }

    #[test]
    fn dim_list_parsing() {
        let c = KernelCall::new("matMulGeneral").with("dim_list", json!([[2, 3, 2], [1, 1, 1]]));
        assert_eq!(c.dim_list("dim_list").unwrap(), vec![[2, 3, 2], [1, 1, 1]]);
        let c = KernelCall::new("matMulGeneral").with("dim_list", json!([[2, 0, 2]]));
        assert!(c.dim_list("dim_list").is_err());
        let c = KernelCall::new("matMulGeneral").with("dim_list", json!([]));
        assert!(c.dim_list("dim_list").unwrap().is_empty());
    }
}
