//! Link adaptation: SNR → MCS → throughput.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub min_snr_db: f64,
    pub mcs_index: u8,
    pub spectral_efficiency_bps_per_hz: f64,
}

/// Rows ordered by strictly increasing `min_snr_db`; row 0 is the outage
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    rows: Vec<McsRow>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid MCS table: {0}")]
pub struct McsTableError(pub String);

impl McsTable {
    pub fn new(rows: Vec<McsRow>) -> Result<Self, McsTableError> {
        if rows.is_empty() {
            return Err(McsTableError("table is empty".into()));
        }
        for pair in rows.windows(2) {
            if !(pair[1].min_snr_db > pair[0].min_snr_db) {
                return Err(McsTableError("min_snr_db must be strictly increasing".into()));
            }
            if pair[1].mcs_index <= pair[0].mcs_index {
                return Err(McsTableError("mcs_index must be strictly increasing".into()));
            }
        }
        if rows.iter().any(|r| !r.min_snr_db.is_finite() || !(r.spectral_efficiency_bps_per_hz >= 0.0)) {
            return Err(McsTableError("thresholds must be finite and efficiencies >= 0".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[McsRow] {
        &self.rows
    }

    pub fn outage_threshold_db(&self) -> f64 {
        self.rows[0].min_snr_db
    }
}

impl Default for McsTable {
    fn default() -> Self {
        let thresholds = [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0];
        let efficiencies = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0];
        let rows = thresholds
            .iter()
            .zip(efficiencies)
            .enumerate()
            .map(|(i, (&min_snr_db, eff))| McsRow {
                min_snr_db,
                mcs_index: i as u8,
                spectral_efficiency_bps_per_hz: eff,
            })
            .collect();
        Self::new(rows).expect("default table is monotone")
    }
}

/// Highest row whose threshold is at or below `snr_db`; `None` is outage.
pub fn mcs_from_snr(snr_db: f64, table: &McsTable) -> Option<McsRow> {
    let n = table.rows.partition_point(|r| r.min_snr_db <= snr_db);
    n.checked_sub(1).map(|i| table.rows[i])
}

pub fn throughput_bps(mcs: Option<&McsRow>, bandwidth_hz: f64, overhead_fraction: f64) -> f64 {
    match mcs {
        None => 0.0,
        Some(row) => row.spectral_efficiency_bps_per_hz * bandwidth_hz * (1.0 - overhead_fraction),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outage_boundary_and_saturation() {
        let t = McsTable::default();
        assert_eq!(mcs_from_snr(-10.0, &t), None);
        assert_eq!(mcs_from_snr(9.0, &t).unwrap().mcs_index, 3);
        assert_eq!(mcs_from_snr(8.999, &t).unwrap().mcs_index, 2);
        assert_eq!(mcs_from_snr(0.0, &t).unwrap().mcs_index, 0);
        assert_eq!(mcs_from_snr(60.0, &t).unwrap().mcs_index, 7);
        assert_eq!(mcs_from_snr(f64::NAN, &t), None);
    }

    #[test]
    fn throughput_arithmetic() {
        let row = McsRow { min_snr_db: 15.0, mcs_index: 5, spectral_efficiency_bps_per_hz: 4.0 };
        assert_eq!(throughput_bps(Some(&row), 100e6, 0.25), 300e6);
        assert_eq!(throughput_bps(None, 100e6, 0.25), 0.0);
        assert_eq!(throughput_bps(Some(&row), 100e6, 0.0), 4.0 * 100e6);
    }

    #[test]
    fn rejects_non_monotone_tables() {
        let r = |s, i| McsRow { min_snr_db: s, mcs_index: i, spectral_efficiency_bps_per_hz: 1.0 };
        assert!(McsTable::new(vec![]).is_err());
        assert!(McsTable::new(vec![r(0.0, 0), r(0.0, 1)]).is_err());
        assert!(McsTable::new(vec![r(0.0, 1), r(3.0, 0)]).is_err());
    }
}
