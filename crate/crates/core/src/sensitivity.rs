//! Power transfer and line outage distribution factors for a topology
//! snapshot, and the flow predictions built on them.
//!
//! PTDF columns are slack-referenced: a unit injection at bus `i` is
//! withdrawn at the slack bus. Entries that have no meaning for the
//! snapshot (rows of disconnected lines, columns of buses cut off from the
//! slack, LODF columns of bridges) hold NaN and are reported as errors by
//! the accessors instead of reading as zero.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::grid::{Grid, GridError};

/// Below this `|1 - φ_kk|` a line is treated as a bridge.
pub const BRIDGE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("bridge outage undefined: removing line index {0} islands the grid")]
    BridgeOutage(usize),
    #[error("line index {0} is already disconnected")]
    LineDisconnected(usize),
    #[error("line index {0} is already connected")]
    LineConnected(usize),
    #[error("sensitivity factors were built for a different topology")]
    TopologyMismatch,
    #[error("no valid factor for line index {line} and {what} {index}")]
    Invalid {
        line: usize,
        what: &'static str,
        index: usize,
    },
    #[error("island detected: adjustment at bus position {0} outside the slack island")]
    IslandDetected(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Stable 64-bit FNV-1a tag of a line-status vector.
pub fn topology_tag(status: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &s in status {
        h ^= s as u64 + 1;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= status.len() as u64;
    h.wrapping_mul(0x0000_0100_0000_01b3)
}

#[derive(Debug, Clone)]
pub struct SensitivitySet {
    topology_tag: u64,
    status: Vec<bool>,
    n_bus: usize,
    n_line: usize,
    /// L×N row-major.
    ptdf: Vec<f64>,
    /// L×L row-major, `lodf[l * L + k]`; `None` until computed.
    lodf: Option<Vec<f64>>,
    bridge: Vec<bool>,
}

impl SensitivitySet {
    /// PTDF and LODF for `status`.
    pub fn compute(grid: &Grid, status: &[bool]) -> Result<Self, SensError> {
        let mut s = Self::compute_ptdf(grid, status)?;
        s.compute_lodf(grid, status)?;
        Ok(s)
    }

    pub fn compute_ptdf(grid: &Grid, status: &[bool]) -> Result<Self, SensError> {
        if status.len() != grid.n_lines() {
            return Err(SensError::Dimension {
                expected: grid.n_lines(),
                got: status.len(),
            });
        }
        let n_bus = grid.n_buses();
        let n_line = grid.n_lines();
        let (b, rows) = grid.reduced_susceptance(status);
        let m = rows.len();
        let x = if m > 0 {
            b.lu()
                .try_inverse()
                .ok_or_else(|| GridError::SolveFailed("singular susceptance matrix".into()))?
        } else {
            DMatrix::zeros(0, 0)
        };
        let in_island = grid.slack_island(status);
        let mut row_of = vec![usize::MAX; n_bus];
        for (r, &i) in rows.iter().enumerate() {
            row_of[i] = r;
        }
        // reactance matrix entry X[a][i] with the slack row/column at zero
        let xa = |a: usize, i: usize| -> f64 {
            match (row_of[a], row_of[i]) {
                (ra, ri) if ra != usize::MAX && ri != usize::MAX => x[(ra, ri)],
                _ => 0.0,
            }
        };

        let mut ptdf = vec![f64::NAN; n_line * n_bus];
        for (l, line) in grid.lines.iter().enumerate() {
            if !status[l] {
                continue;
            }
            let (f, t) = grid.line_ends(l);
            let row = &mut ptdf[l * n_bus..(l + 1) * n_bus];
            for (i, entry) in row.iter_mut().enumerate() {
                if in_island[i] {
                    *entry = (xa(f, i) - xa(t, i)) / line.reactance;
                }
            }
        }
        Ok(Self {
            topology_tag: topology_tag(status),
            status: status.to_vec(),
            n_bus,
            n_line,
            ptdf,
            lodf: None,
            bridge: vec![false; n_line],
        })
    }

    /// Fills in the LODF matrix and the bridge flags from the PTDF.
    pub fn compute_lodf(&mut self, grid: &Grid, status: &[bool]) -> Result<(), SensError> {
        self.check_topology(status)?;
        let n_line = self.n_line;
        let in_island = grid.slack_island(&self.status);
        let mut lodf = vec![f64::NAN; n_line * n_line];
        for k in 0..n_line {
            if !self.status[k] {
                continue;
            }
            let (f, t) = grid.line_ends(k);
            if !in_island[f] {
                // operational but cut off from the slack: carries nothing and
                // has no outage response to speak of
                self.bridge[k] = true;
                continue;
            }
            let phi = |l: usize| self.ptdf[l * self.n_bus + f] - self.ptdf[l * self.n_bus + t];
            let denom = 1.0 - phi(k);
            if denom.abs() < BRIDGE_TOL {
                self.bridge[k] = true;
                continue;
            }
            for l in 0..n_line {
                if !self.status[l] {
                    continue;
                }
                lodf[l * n_line + k] = if l == k { -1.0 } else { phi(l) / denom };
            }
        }
        self.lodf = Some(lodf);
        Ok(())
    }

    pub fn topology_tag(&self) -> u64 {
        self.topology_tag
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn check_topology(&self, status: &[bool]) -> Result<(), SensError> {
        if topology_tag(status) == self.topology_tag && status == self.status.as_slice() {
            Ok(())
        } else {
            Err(SensError::TopologyMismatch)
        }
    }

    pub fn n_lines(&self) -> usize {
        self.n_line
    }

    pub fn n_buses(&self) -> usize {
        self.n_bus
    }

    pub fn is_bridge(&self, line: usize) -> bool {
        self.bridge[line]
    }

    pub fn bridge_flags(&self) -> &[bool] {
        &self.bridge
    }

    /// Flow change on `line` per MW injected at bus position `bus`.
    pub fn ptdf(&self, line: usize, bus: usize) -> Result<f64, SensError> {
        let v = self.ptdf[line * self.n_bus + bus];
        if v.is_nan() {
            Err(SensError::Invalid {
                line,
                what: "bus position",
                index: bus,
            })
        } else {
            Ok(v)
        }
    }

    /// Fraction of line `k`'s pre-outage flow picked up by `line`.
    pub fn lodf(&self, line: usize, k: usize) -> Result<f64, SensError> {
        if self.bridge[k] {
            return Err(SensError::BridgeOutage(k));
        }
        if !self.status[k] {
            return Err(SensError::LineDisconnected(k));
        }
        let lodf = self.lodf.as_ref().ok_or(SensError::Invalid {
            line,
            what: "outage (LODF not computed)",
            index: k,
        })?;
        let v = lodf[line * self.n_line + k];
        if v.is_nan() {
            Err(SensError::Invalid {
                line,
                what: "outage line",
                index: k,
            })
        } else {
            Ok(v)
        }
    }

    /// Raw PTDF matrix, NaN where undefined.
    pub fn ptdf_matrix(&self) -> &[f64] {
        &self.ptdf
    }

    pub fn lodf_matrix(&self) -> Option<&[f64]> {
        self.lodf.as_deref()
    }

    /// Flows after shifting generation by `delta_bus` (MW per bus position),
    /// with the slack absorbing the net change.
    pub fn predict_gen_adjust(&self, flows: &[f64], delta_bus: &[f64]) -> Result<Vec<f64>, SensError> {
        self.check_dims(flows)?;
        if delta_bus.len() != self.n_bus {
            return Err(SensError::Dimension {
                expected: self.n_bus,
                got: delta_bus.len(),
            });
        }
        let mut out = flows.to_vec();
        for (i, &d) in delta_bus.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (l, o) in out.iter_mut().enumerate() {
                if !self.status[l] {
                    continue;
                }
                let p = self.ptdf[l * self.n_bus + i];
                if p.is_nan() {
                    return Err(SensError::IslandDetected(i));
                }
                *o += p * d;
            }
        }
        Ok(out)
    }

    /// Flows after removing line `k`.
    pub fn predict_removal(&self, flows: &[f64], k: usize) -> Result<Vec<f64>, SensError> {
        self.check_dims(flows)?;
        if !self.status[k] {
            return Err(SensError::LineDisconnected(k));
        }
        if self.bridge[k] {
            return Err(SensError::BridgeOutage(k));
        }
        let fk = flows[k];
        let mut out = flows.to_vec();
        for (l, o) in out.iter_mut().enumerate() {
            if l == k {
                *o = 0.0;
            } else if self.status[l] {
                *o += self.lodf(l, k)? * fk;
            }
        }
        Ok(out)
    }

    fn check_dims(&self, flows: &[f64]) -> Result<(), SensError> {
        if flows.len() == self.n_line {
            Ok(())
        } else {
            Err(SensError::Dimension {
                expected: self.n_line,
                got: flows.len(),
            })
        }
    }
}

/// Flows after reconnecting line `k`, by exact re-solve of the restored
/// topology.
pub fn predict_reconnect(
    grid: &Grid,
    status: &[bool],
    injections: &[f64],
    k: usize,
) -> Result<Vec<f64>, SensError> {
    if status[k] {
        return Err(SensError::LineConnected(k));
    }
    let mut restored = status.to_vec();
    restored[k] = true;
    Ok(grid.solve_dc(injections, &restored)?.flows)
}
