//! Abstract slotted CSMA: one winner per slot among ready contenders, and
//! the per-receiver fate of a frame.

use rand::Rng;

/// Uniform winner among `contenders`; `None` when nobody is ready.
pub fn mac_grant_policy<T: Copy, R: Rng + ?Sized>(contenders: &[T], rng: &mut R) -> Option<T> {
    match contenders.len() {
        0 => None,
        1 => Some(contenders[0]),
        n => Some(contenders[rng.gen_range(0..n)]),
    }
}

/// One potential receiver of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverLink {
    pub p_link: f64,
    /// A PU covering this receiver was ON at some point during the frame.
    pub pu_at_receiver: bool,
}

/// Which receivers get the frame. `pu_interrupted` means an affecting PU
/// turned ON mid-air, which destroys the frame everywhere. Loss draws are
/// made for every receiver in order regardless, so the link stream
/// advances identically.
pub fn frame_outcome<R: Rng + ?Sized>(receivers: &[ReceiverLink], pu_interrupted: bool, rng: &mut R) -> Vec<bool> {
    receivers
        .iter()
        .map(|r| {
            let draw: f64 = rng.gen();
            !pu_interrupted && !r.pu_at_receiver && draw >= r.p_link
        })
        .collect()
}
