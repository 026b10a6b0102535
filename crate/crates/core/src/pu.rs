//! Primary-user activity: two-state exponential ON/OFF processes bound to
//! a channel and a disk-shaped interference region, plus the closed-form
//! probability that an affecting PU activates within a window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, UsageError};
use crate::types::{ChannelId, SimTime};

pub const DEFAULT_PU_RADIUS: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Position {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PuState {
    On,
    Off,
}

/// One primary user.
///
/// `lambda` parameterises the active (ON) dwell and `mu` the inactive (OFF)
/// dwell; both are exponential rates in 1/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuProcess {
    pub index: u16,
    pub channel: ChannelId,
    pub position: Position,
    pub interference_radius: f64,
    pub lambda: f64,
    pub mu: f64,
    pub state: PuState,
    pub next_toggle_at: SimTime,
    /// Time of the most recent OFF to ON transition, if any.
    #[serde(skip)]
    pub last_on_at: Option<SimTime>,
}

impl PuProcess {
    pub fn new(
        index: u16,
        channel: ChannelId,
        position: Position,
        interference_radius: f64,
        lambda: f64,
        mu: f64,
    ) -> Result<PuProcess, ConfigError> {
        check_rate(lambda)?;
        check_rate(mu)?;
        Ok(PuProcess {
            index,
            channel,
            position,
            interference_radius,
            lambda,
            mu,
            state: PuState::Off,
            next_toggle_at: 0.0,
            last_on_at: None,
        })
    }

    pub fn is_on(&self) -> bool {
        self.state == PuState::On
    }

    /// Rate of the dwell distribution for `state`.
    pub fn rate(&self, state: PuState) -> f64 {
        match state {
            PuState::On => self.lambda,
            PuState::Off => self.mu,
        }
    }

    /// Puts the process in `state` at `now` and draws its dwell.
    pub fn start<R: Rng + ?Sized>(&mut self, state: PuState, now: SimTime, rng: &mut R) {
        self.state = state;
        if state == PuState::On {
            self.last_on_at = Some(now);
        }
        let dwell = sample_dwell(self.rate(state), rng).expect("rates validated at construction");
        self.next_toggle_at = now + dwell;
    }

    /// Starts in the stationary distribution: ON with probability
    /// mu / (lambda + mu).
    pub fn start_stationary<R: Rng + ?Sized>(&mut self, now: SimTime, rng: &mut R) {
        let p_on = self.mu / (self.lambda + self.mu);
        let state = if rng.gen::<f64>() < p_on {
            PuState::On
        } else {
            PuState::Off
        };
        self.start(state, now, rng);
    }

    /// Flips the state at its scheduled toggle time and draws the next dwell.
    pub fn toggle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let now = self.next_toggle_at;
        let next = match self.state {
            PuState::On => PuState::Off,
            PuState::Off => PuState::On,
        };
        self.start(next, now, rng);
    }

    /// True if the interference disk covers `p`.
    pub fn covers(&self, p: &Position) -> bool {
        self.position.distance(p) <= self.interference_radius
    }

    /// True if the process turned ON at some point in `[from, to]` or is ON
    /// at `to`.
    pub fn active_during(&self, from: SimTime, to: SimTime) -> bool {
        self.is_on() || self.last_on_at.is_some_and(|t| t >= from && t <= to)
    }
}

fn check_rate(rate: f64) -> Result<(), ConfigError> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NonPositiveRate(rate))
    }
}

/// Exponential dwell time `-ln(U) / rate` with `U` uniform on (0, 1].
pub fn sample_dwell<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, ConfigError> {
    check_rate(rate)?;
    let u = 1.0 - rng.gen::<f64>();
    let d = -u.ln() / rate;
    // u == 1 gives exactly zero; keep dwell strictly positive
    Ok(if d > 0.0 { d } else { f64::MIN_POSITIVE })
}

/// Probability that at least one PU with the given activation rates turns
/// ON within `tau` seconds: `1 - exp(-tau * sum(lambdas))`.
pub fn p_active(lambdas: &[f64], tau: f64) -> Result<f64, UsageError> {
    if tau.is_nan() || tau < 0.0 {
        return Err(UsageError::Negative {
            what: "tau",
            value: tau,
        });
    }
    let mut sum = 0.0;
    for &l in lambdas {
        if l.is_nan() || l < 0.0 {
            return Err(UsageError::Negative {
                what: "lambda",
                value: l,
            });
        }
        sum += l;
    }
    Ok(-(-tau * sum).exp_m1())
}

/// PUs on `channel` whose interference disk contains either endpoint.
pub fn pus_affecting_link<'a>(
    sender: &Position,
    receiver: &Position,
    channel: ChannelId,
    pus: &'a [PuProcess],
) -> Vec<&'a PuProcess> {
    pus.iter()
        .filter(|pu| pu.channel == channel && (pu.covers(sender) || pu.covers(receiver)))
        .collect()
}
