//! Synthetic fleets for the two lifetime policies.

use crate::transcript::{PseudonymRef, Transcript};

fn vehicle_name(v: usize) -> String {
    format!("vehicle-{v}")
}

/// Every vehicle picks its own lifetime and start, so no two vehicles ever
/// switch at the same instant: vehicle `v` switches only at times congruent
/// to `v` modulo the fleet size.
pub fn flexible_fleet(vehicles: usize, pseudonyms_each: usize, issuer: &str) -> Transcript {
    let m = vehicles.max(1) as u64;
    let mut t = Transcript::default();
    let mut serial = 0;
    for v in 0..vehicles {
        let lifetime = m * (50 + v as u64);
        let mut start = v as u64;
        for _ in 0..pseudonyms_each {
            serial += 1;
            t.observe(PseudonymRef::new(issuer, serial), start, start + lifetime, Some(&vehicle_name(v)));
            start += lifetime;
        }
    }
    t
}

/// Every vehicle holds the same grid-aligned lifetimes of length `tau`.
pub fn fixed_fleet(vehicles: usize, pseudonyms_each: usize, tau: u64, issuer: &str) -> Transcript {
    let mut t = Transcript::default();
    let mut serial = 0;
    for v in 0..vehicles {
        for k in 0..pseudonyms_each as u64 {
            serial += 1;
            t.observe(PseudonymRef::new(issuer, serial), k * tau, (k + 1) * tau, Some(&vehicle_name(v)));
        }
    }
    t
}
