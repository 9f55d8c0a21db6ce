use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    /// Prompt plus every response block other than the active one.
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Text => "text",
        }
    }
}

/// Refresh interval τ(g, m) per layer group (shallow to deep) and modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshSchedule {
    pub tau_text: Vec<usize>,
    pub tau_visual: Vec<usize>,
}

impl RefreshSchedule {
    pub fn new(tau_text: Vec<usize>, tau_visual: Vec<usize>) -> Result<Self> {
        let s = Self {
            tau_text,
            tau_visual,
        };
        validate_schedule(&s)?;
        Ok(s)
    }

    /// τ ≡ 1: every group refreshes every step.
    pub fn always(groups: usize) -> Self {
        Self {
            tau_text: vec![1; groups],
            tau_visual: vec![1; groups],
        }
    }

    pub fn groups(&self) -> usize {
        self.tau_text.len()
    }

    pub fn interval(&self, group: usize, modality: Modality) -> usize {
        match modality {
            Modality::Visual => self.tau_visual[group],
            Modality::Text => self.tau_text[group],
        }
    }
}

/// Accepts a schedule iff every interval is positive, each shallower
/// group's interval is an integer multiple of the next deeper one's (per
/// modality), and visual never refreshes more often than text.
///
/// Groups in error messages are 1-based, shallowest first.
pub fn validate_schedule(schedule: &RefreshSchedule) -> Result<()> {
    let groups = schedule.tau_text.len();
    if groups == 0 || schedule.tau_visual.len() != groups {
        return Err(Error::Config(format!(
            "schedule needs one text and one visual interval per group, got {} and {}",
            schedule.tau_text.len(),
            schedule.tau_visual.len()
        )));
    }
    for m in [Modality::Text, Modality::Visual] {
        for g in 0..groups {
            let tau = schedule.interval(g, m);
            if tau == 0 {
                return Err(Error::Schedule {
                    group: g + 1,
                    modality: m.as_str(),
                    reason: "interval must be positive".into(),
                });
            }
            if g > 0 {
                let shallow = schedule.interval(g - 1, m);
                if !shallow.is_multiple_of(tau) {
                    return Err(Error::Schedule {
                        group: g,
                        modality: m.as_str(),
                        reason: format!(
                            "τ(g={g})={shallow} is not an integer multiple of τ(g={})={tau}",
                            g + 1
                        ),
                    });
                }
            }
        }
    }
    for g in 0..groups {
        if schedule.tau_visual[g] < schedule.tau_text[g] {
            return Err(Error::Schedule {
                group: g + 1,
                modality: "visual",
                reason: format!(
                    "visual interval {} shorter than text interval {}",
                    schedule.tau_visual[g], schedule.tau_text[g]
                ),
            });
        }
    }
    Ok(())
}

/// `t mod τ(g, m) == 0`. Step 1's full initialization is the engine's job.
pub fn refresh_due(step: usize, group: usize, modality: Modality, schedule: &RefreshSchedule) -> bool {
    step.is_multiple_of(schedule.interval(group, modality))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_schedules_validate() {
        RefreshSchedule::new(vec![64, 32, 16, 8], vec![64, 32, 16, 8]).unwrap();
        RefreshSchedule::new(vec![64, 32, 16, 8], vec![128, 64, 32, 16]).unwrap();
        RefreshSchedule::new(vec![32; 4], vec![32; 4]).unwrap();
    }

    #[test]
    fn non_multiple_is_rejected_with_the_pair() {
        let err = RefreshSchedule::new(vec![48, 32, 16, 8], vec![48, 32, 16, 8]).unwrap_err();
        match err {
            Error::Schedule { group, modality, reason } => {
                assert_eq!(group, 1);
                assert_eq!(modality, "text");
                assert!(reason.contains("τ(g=1)=48") && reason.contains("τ(g=2)=32"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn visual_faster_than_text_is_rejected() {
        let err = RefreshSchedule::new(vec![64, 32, 16, 8], vec![64, 32, 8, 8]).unwrap_err();
        assert!(matches!(err, Error::Schedule { group: 3, modality: "visual", .. }));
        assert!(RefreshSchedule::new(vec![0; 2], vec![0; 2]).is_err());
        assert!(RefreshSchedule::new(vec![4, 2], vec![4]).is_err());
    }

    #[test]
    fn due_steps() {
        let s = RefreshSchedule::new(vec![64, 32, 16, 8], vec![64, 32, 16, 8]).unwrap();
        assert!(refresh_due(64, 0, Modality::Text, &s));
        assert!(!refresh_due(63, 0, Modality::Text, &s));
        let one = RefreshSchedule::always(4);
        assert!((1..50).all(|t| refresh_due(t, 2, Modality::Visual, &one)));
    }
}
