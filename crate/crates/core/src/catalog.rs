//! Device catalog: the ordered list of devices a corpus is recorded for.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};

/// What a device column contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// Analogue reading; normalized and fed to forecasters.
    Reading,
    /// Operator setting; normalized, used by the labeler only.
    Setting,
    /// Digital device packing binary indicators into an integer value.
    StatusBits,
    /// Beam permit interlock: 1 allows beam, 0 prohibits it.
    Permit,
}

impl DeviceKind {
    pub fn code(self) -> u8 {
        match self {
            DeviceKind::Reading => 0,
            DeviceKind::Setting => 1,
            DeviceKind::StatusBits => 2,
            DeviceKind::Permit => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => DeviceKind::Reading,
            1 => DeviceKind::Setting,
            2 => DeviceKind::StatusBits,
            3 => DeviceKind::Permit,
            other => return Err(Error::invariant(format!("unknown device kind code {other}"))),
        })
    }

    /// Reading and Setting columns are z-scored; Permit and StatusBits are not.
    pub fn is_normalized(self) -> bool {
        matches!(self, DeviceKind::Reading | DeviceKind::Setting)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub kind: DeviceKind,
}

impl DeviceSpec {
    pub fn new(name: impl Into<String>, kind: DeviceKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Ordered device list plus the control-system tick clock. The order is
/// canonical: every file of a corpus stores columns in exactly this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceCatalog {
    pub devices: Vec<DeviceSpec>,
    pub tick_rate_hz: u32,
}

impl DeviceCatalog {
    pub fn new(devices: Vec<DeviceSpec>, tick_rate_hz: u32) -> Result<Arc<Self>> {
        let catalog = Self { devices, tick_rate_hz };
        catalog.validate()?;
        Ok(Arc::new(catalog))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tick_rate_hz == 0 {
            return Err(Error::invariant("tick_rate_hz must be > 0"));
        }
        let mut names = HashSet::new();
        for d in &self.devices {
            if !names.insert(d.name.as_str()) {
                return Err(Error::invariant(format!("duplicate device name {:?}", d.name)));
            }
        }
        let permits = self.indices_of(DeviceKind::Permit).len();
        if permits == 0 || permits > 2 {
            return Err(Error::invariant(format!(
                "catalog must have one or two permit devices, found {permits}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn indices_of(&self, kind: DeviceKind) -> Vec<usize> {
        self.devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the permit column used as the prediction target.
    /// `name = None` picks the first permit device in catalog order.
    pub fn target_permit(&self, name: Option<&str>) -> Result<usize> {
        match name {
            Some(n) => self
                .devices
                .iter()
                .position(|d| d.kind == DeviceKind::Permit && d.name == n)
                .ok_or_else(|| Error::config(format!("no permit device named {n:?}"))),
            None => self
                .devices
                .iter()
                .position(|d| d.kind == DeviceKind::Permit)
                .ok_or_else(|| Error::invariant("catalog has no permit device")),
        }
    }

    pub fn index_by_name(&self, name: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: &str, k: DeviceKind) -> DeviceSpec {
        DeviceSpec::new(n, k)
    }

    #[test]
    fn validates_permit_count() {
        let no_permit = DeviceCatalog {
            devices: vec![spec("r0", DeviceKind::Reading)],
            tick_rate_hz: 15,
        };
        assert!(no_permit.validate().is_err());

        let three = DeviceCatalog {
            devices: vec![
                spec("p0", DeviceKind::Permit),
                spec("p1", DeviceKind::Permit),
                spec("p2", DeviceKind::Permit),
            ],
            tick_rate_hz: 15,
        };
        assert!(three.validate().is_err());

        let two = DeviceCatalog {
            devices: vec![spec("p0", DeviceKind::Permit), spec("p1", DeviceKind::Permit)],
            tick_rate_hz: 15,
        };
        assert!(two.validate().is_ok());
    }

    #[test]
    fn rejects_duplicate_names() {
        let c = DeviceCatalog {
            devices: vec![spec("x", DeviceKind::Reading), spec("x", DeviceKind::Permit)],
            tick_rate_hz: 15,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn target_permit_selection() {
        let c = DeviceCatalog {
            devices: vec![
                spec("r0", DeviceKind::Reading),
                spec("up", DeviceKind::Permit),
                spec("down", DeviceKind::Permit),
            ],
            tick_rate_hz: 15,
        };
        assert_eq!(c.target_permit(None).unwrap(), 1);
        assert_eq!(c.target_permit(Some("down")).unwrap(), 2);
        assert!(c.target_permit(Some("missing")).is_err());
    }
}
