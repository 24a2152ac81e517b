//! Per-frame transmission capacity of the subchannels allocated to the queue.
//!
//! Each subchannel's instantaneous SNR is Nakagami-m faded around the average
//! and quantized through an AMC table into packets per frame. Subchannels are
//! independent with the same average SNR, and capacity has no memory across
//! frames.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};
use crate::linalg::convolve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmcEntry {
    pub rate_id: u32,
    pub snr_threshold_db: f64,
    pub packets_per_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmcTable {
    entries: Vec<AmcEntry>,
}

impl AmcTable {
    pub fn new(mut entries: Vec<AmcEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Parameter {
                name: "amc",
                reason: "table is empty".into(),
            });
        }
        entries.sort_by_key(|e| e.rate_id);
        if entries[0].rate_id != 0 {
            return Err(Error::Parameter {
                name: "amc",
                reason: "no entry with rate id 0".into(),
            });
        }
        for pair in entries.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.rate_id == b.rate_id {
                return Err(Error::Parameter {
                    name: "amc",
                    reason: format!("rate id {} appears twice", a.rate_id),
                });
            }
            if !(b.snr_threshold_db > a.snr_threshold_db) {
                return Err(Error::Parameter {
                    name: "amc",
                    reason: format!("threshold of rate id {} does not exceed rate id {}", b.rate_id, a.rate_id),
                });
            }
            if b.packets_per_frame < a.packets_per_frame {
                return Err(Error::Parameter {
                    name: "amc",
                    reason: format!("packets per frame decrease at rate id {}", b.rate_id),
                });
            }
        }
        if entries.iter().any(|e| !e.snr_threshold_db.is_finite()) {
            return Err(Error::Parameter {
                name: "amc",
                reason: "thresholds must be finite".into(),
            });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[AmcEntry] {
        &self.entries
    }

    pub fn max_packets(&self) -> usize {
        self.entries.last().map_or(0, |e| e.packets_per_frame)
    }
}

impl Default for AmcTable {
    /// Rate ids 0–6 carrying 1–7 packets of 80 bits on a 1 ms frame; rate id
    /// 0 (BPSK 1/2 at 80 kbit/s) moves exactly one packet.
    fn default() -> Self {
        let thresholds = [-2.0, 4.0, 8.0, 11.0, 14.0, 17.0, 20.0];
        let entries = thresholds
            .iter()
            .enumerate()
            .map(|(i, &thr)| AmcEntry {
                rate_id: i as u32,
                snr_threshold_db: thr,
                packets_per_frame: i + 1,
            })
            .collect();
        Self { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelMode {
    Stochastic {
        avg_snr_db: f64,
        nakagami_m: f64,
        amc: AmcTable,
    },
    /// Every subchannel carries exactly this many packets each frame.
    Deterministic { packets: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub num_subchannels: usize,
    pub mode: ChannelMode,
}

impl ChannelModel {
    pub fn stochastic(num_subchannels: usize, avg_snr_db: f64, nakagami_m: f64, amc: AmcTable) -> Result<Self> {
        let model = Self {
            num_subchannels,
            mode: ChannelMode::Stochastic {
                avg_snr_db,
                nakagami_m,
                amc,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn deterministic(num_subchannels: usize, packets: usize) -> Result<Self> {
        let model = Self {
            num_subchannels,
            mode: ChannelMode::Deterministic { packets },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subchannels == 0 {
            return Err(Error::Parameter {
                name: "subchannels",
                reason: "at least one subchannel is required".into(),
            });
        }
        if let ChannelMode::Stochastic {
            avg_snr_db, nakagami_m, ..
        } = &self.mode
        {
            if !avg_snr_db.is_finite() {
                return Err(Error::Parameter {
                    name: "avg_snr_db",
                    reason: format!("must be finite, got {avg_snr_db}"),
                });
            }
            if !(*nakagami_m >= 0.5 && nakagami_m.is_finite()) {
                return Err(Error::Parameter {
                    name: "nakagami_m",
                    reason: format!("must be >= 0.5, got {nakagami_m}"),
                });
            }
        }
        Ok(())
    }

    pub fn avg_snr_db(&self) -> Option<f64> {
        match &self.mode {
            ChannelMode::Stochastic { avg_snr_db, .. } => Some(*avg_snr_db),
            ChannelMode::Deterministic { .. } => None,
        }
    }

    /// Copy with a different average SNR; deterministic channels are unchanged.
    pub fn with_avg_snr_db(&self, snr_db: f64) -> Self {
        let mut out = self.clone();
        if let ChannelMode::Stochastic { avg_snr_db, .. } = &mut out.mode {
            *avg_snr_db = snr_db;
        }
        out
    }

    /// Mass over packets carried by one subchannel in one frame.
    pub fn subchannel_rate_distribution(&self) -> Result<Vec<f64>> {
        self.validate()?;
        match &self.mode {
            ChannelMode::Deterministic { packets } => {
                let mut out = vec![0.0; packets + 1];
                out[*packets] = 1.0;
                Ok(out)
            }
            ChannelMode::Stochastic {
                avg_snr_db,
                nakagami_m,
                amc,
            } => Ok(nakagami_rate_mass(*avg_snr_db, *nakagami_m, amc)),
        }
    }

    pub fn capacity_distribution(&self) -> Result<CapacityDistribution> {
        let single = self.subchannel_rate_distribution()?;
        let mass = (1..self.num_subchannels).fold(single.clone(), |acc, _| convolve(&acc, &single));
        Ok(CapacityDistribution { mass })
    }
}

/// Pr(SNR ≥ threshold) for a Nakagami-m faded channel with average `avg` (linear).
fn exceed_probability(m: f64, threshold: f64, avg: f64) -> f64 {
    let x = m * threshold / avg;
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(m, x)
    }
}

fn nakagami_rate_mass(avg_snr_db: f64, m: f64, amc: &AmcTable) -> Vec<f64> {
    let avg = 10f64.powf(avg_snr_db / 10.0);
    let entries = amc.entries();
    let mut mass = vec![0.0; amc.max_packets() + 1];
    let first = m * 10f64.powf(entries[0].snr_threshold_db / 10.0) / avg;
    // Outage below the rate-0 threshold carries nothing.
    mass[0] += if first <= 0.0 { 0.0 } else if first.is_infinite() { 1.0 } else { gamma_lr(m, first) };
    for (i, entry) in entries.iter().enumerate() {
        let lo = exceed_probability(m, 10f64.powf(entry.snr_threshold_db / 10.0), avg);
        let hi = entries
            .get(i + 1)
            .map_or(0.0, |next| exceed_probability(m, 10f64.powf(next.snr_threshold_db / 10.0), avg));
        mass[entry.packets_per_frame] += (lo - hi).max(0.0);
    }
    mass
}

impl ChannelModel {
    /// Short label for reports.
    pub fn label(&self) -> String {
        match &self.mode {
            ChannelMode::Stochastic { avg_snr_db, nakagami_m, .. } => {
                format!("{} x nakagami(m={nakagami_m}) at {avg_snr_db} dB", self.num_subchannels)
            }
            ChannelMode::Deterministic { packets } => format!("{} x deterministic({packets})", self.num_subchannels),
        }
    }
}

/// Mass over the total packets `R` the allocated subchannels can carry in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityDistribution {
    mass: Vec<f64>,
}

impl CapacityDistribution {
    /// Wraps a mass vector indexed by packet count; it must be a probability vector.
    pub fn from_mass(mass: Vec<f64>) -> Result<Self> {
        let total: f64 = mass.iter().sum();
        if mass.is_empty() || mass.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter {
                name: "capacity",
                reason: format!("not a probability vector (sum {total})"),
            });
        }
        Ok(Self { mass })
    }

    pub fn point(packets: usize) -> Self {
        let mut mass = vec![0.0; packets + 1];
        mass[packets] = 1.0;
        Self { mass }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn max_capacity(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(r, p)| r as f64 * p).sum()
    }

    /// Mass of the number actually sent, `min(R, backlog)`.
    pub fn transmitted(&self, backlog: usize) -> Vec<f64> {
        let mut out = vec![0.0; backlog.min(self.max_capacity()) + 1];
        for (r, &p) in self.mass.iter().enumerate() {
            out[r.min(backlog)] += p;
        }
        out
    }

    /// `E[min(R, backlog)]`.
    pub fn expected_transmitted(&self, backlog: usize) -> f64 {
        self.mass.iter().enumerate().map(|(r, p)| r.min(backlog) as f64 * p).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_threshold(thr_db: f64) -> AmcTable {
        AmcTable::new(vec![AmcEntry {
            rate_id: 0,
            snr_threshold_db: thr_db,
            packets_per_frame: 1,
        }])
        .unwrap()
    }

    #[test]
    fn deterministic_point_mass() {
        let ch = ChannelModel::deterministic(1, 2).unwrap();
        assert_eq!(ch.subchannel_rate_distribution().unwrap(), vec![0.0, 0.0, 1.0]);
        let five = ChannelModel::deterministic(5, 1).unwrap();
        let cap = five.capacity_distribution().unwrap();
        assert_eq!(cap.max_capacity(), 5);
        assert_eq!(cap.mass()[5], 1.0);
    }

    #[test]
    fn rayleigh_single_threshold_closed_form() {
        // m = 1: Pr(SNR >= g1) = exp(-g1 / avg).
        for (thr_db, avg_db) in [(0.0, 5.0), (4.0, 2.0), (-2.0, 10.0)] {
            let ch = ChannelModel::stochastic(1, avg_db, 1.0, single_threshold(thr_db)).unwrap();
            let mass = ch.subchannel_rate_distribution().unwrap();
            let g1 = 10f64.powf(thr_db / 10.0);
            let avg = 10f64.powf(avg_db / 10.0);
            assert!((mass[1] - (-g1 / avg).exp()).abs() < 1e-13);
            assert!((mass[0] + mass[1] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn very_high_snr_uses_top_rate() {
        let ch = ChannelModel::stochastic(1, 250.0, 1.0, AmcTable::default()).unwrap();
        let mass = ch.subchannel_rate_distribution().unwrap();
        assert!((mass[7] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_of_two_fair_coins() {
        let single = CapacityDistribution::from_mass(vec![0.5, 0.5]).unwrap();
        let two = convolve(single.mass(), single.mass());
        assert_eq!(two, vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_tables_and_fading() {
        assert!(AmcTable::new(vec![]).is_err());
        let bad_order = vec![
            AmcEntry { rate_id: 0, snr_threshold_db: 3.0, packets_per_frame: 1 },
            AmcEntry { rate_id: 1, snr_threshold_db: 2.0, packets_per_frame: 2 },
        ];
        assert!(AmcTable::new(bad_order).is_err());
        assert!(ChannelModel::stochastic(5, 5.0, 0.2, AmcTable::default()).is_err());
        assert!(ChannelModel::stochastic(0, 5.0, 1.0, AmcTable::default()).is_err());
    }

    #[test]
    fn transmitted_caps_at_backlog() {
        let cap = CapacityDistribution::from_mass(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(cap.transmitted(0), vec![1.0]);
        assert_eq!(cap.transmitted(1), vec![0.2, 0.8]);
        assert!((cap.expected_transmitted(5) - 1.3).abs() < 1e-15);
    }
}
