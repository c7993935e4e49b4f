mod common;

use std::sync::Arc;

use common::*;
use vpki_core::messages::{ErrorCode, TicketOwner};
use vpki_core::{hash_bind, make_csr, generate_keypair, Interval, Rnd256, SerialNumber};

#[test]
fn registration_examples() {
    let f = Fixture::new(&["a"], 1000);
    let ltca = f.ltca("a");
    let car = register(ltca, "car-1", 1);
    assert_eq!(&car.ltc.issuer, ltca.id());
    let again = ltca.register_vehicle(&make_csr(&car.key), "car-1", iv(0, 10));
    assert_eq!(again.unwrap_err().code, ErrorCode::DuplicateSubject);
    let bad = ltca.register_vehicle(&bad_csr(3), "car-2", iv(0, 10));
    assert_eq!(bad.unwrap_err().code, ErrorCode::BadProofOfPossession);
}

#[test]
fn ltc_update_retires_old_certificate() {
    let f = Fixture::new(&["a"], 1000);
    let ltca = f.ltca("a");
    let car = register(ltca, "car-1", 1);
    let new_key = generate_keypair(Some([2; 32]));
    let new_ltc = ltca.update_ltc(&car.ltc, &make_csr(&new_key)).unwrap();
    assert_eq!(new_ltc.subject_id, "car-1");
    assert_eq!(new_ltc.public_key, new_key.public);

    let digest = hash_bind(&pca_a(), &Rnd256([1; 32]));
    let old = ltca.issue_ticket(digest, iv(0, 3600), &car.ltc).unwrap_err();
    assert_eq!(old.code, ErrorCode::RevokedCredential);
    assert!(ltca.issue_ticket(digest, iv(0, 3600), &new_ltc).is_ok());
    assert_eq!(ltca.vehicle("car-1").unwrap().ltc_history, vec![car.ltc.clone()]);

    ltca.revoke_ltc("car-1").unwrap();
    let revoked = ltca.update_ltc(&new_ltc, &make_csr(&new_key)).unwrap_err();
    assert_eq!(revoked.code, ErrorCode::RevokedCredential);

    let mut stranger = new_ltc.clone();
    stranger.subject_id = "nobody".into();
    assert_eq!(
        ltca.update_ltc(&stranger, &make_csr(&new_key)).unwrap_err().code,
        ErrorCode::UnknownSubject
    );
}

#[test]
fn ticket_interval_snaps_outward_and_blocks_overlap() {
    let f = Fixture::new(&["a"], 50);
    let ltca = f.ltca("a");
    let car = register(ltca, "car-1", 1);
    let other = register(ltca, "car-2", 2);
    let digest = hash_bind(&pca_a(), &Rnd256([1; 32]));

    let t = ltca.issue_ticket(digest, iv(100, 3500), &car.ltc).unwrap();
    assert_eq!(t.interval, iv(0, 3600));
    assert_eq!(t.tkt_expiry, 3600);
    assert_eq!(t.target_digest, digest);

    let clash = ltca.issue_ticket(digest, iv(1800, 5400), &car.ltc).unwrap_err();
    assert_eq!(clash.code, ErrorCode::OverlappingTicket);

    // The ledger is per subject.
    assert_eq!(ltca.issue_ticket(digest, iv(100, 3500), &other.ltc).unwrap().interval, iv(0, 3600));
    // Adjacent, non-overlapping period is fine.
    assert_eq!(ltca.issue_ticket(digest, iv(3600, 3700), &car.ltc).unwrap().interval, iv(3600, 7200));
}

#[test]
fn expired_entries_do_not_block_but_are_kept() {
    let f = Fixture::new(&["a"], 50);
    let ltca = f.ltca("a");
    let car = register(ltca, "car-1", 1);
    let digest = hash_bind(&pca_a(), &Rnd256([1; 32]));
    ltca.issue_ticket(digest, iv(0, 3600), &car.ltc).unwrap();
    f.clock.set(3601);
    // Overlaps the expired entry, which no longer blocks.
    assert_eq!(ltca.issue_ticket(digest, iv(0, 7200), &car.ltc).unwrap().interval, iv(0, 7200));
    assert_eq!(ltca.ledger_entries().len(), 2);
    // A period that is already over is not ticketed at all.
    let other = register(ltca, "car-2", 2);
    assert_eq!(
        ltca.issue_ticket(digest, iv(0, 3600), &other.ltc).unwrap_err().code,
        ErrorCode::IntervalViolation
    );
}

#[test]
fn revocation_blocks_tickets_and_is_idempotent() {
    let f = Fixture::new(&["a"], 50);
    let ltca = f.ltca("a");
    let car = register(ltca, "car-1", 1);
    ltca.revoke_ltc("car-1").unwrap();
    ltca.revoke_ltc("car-1").unwrap();
    let digest = hash_bind(&pca_a(), &Rnd256([1; 32]));
    assert_eq!(
        ltca.issue_ticket(digest, iv(0, 10), &car.ltc).unwrap_err().code,
        ErrorCode::RevokedCredential
    );
    assert_eq!(ltca.revoke_ltc("ghost").unwrap_err().code, ErrorCode::UnknownSubject);
}

#[test]
fn foreign_exchange_examples() {
    let f = Fixture::new(&["a", "b"], 50);
    let (home, foreign) = (f.ltca("a"), f.ltca("b"));
    let car = register(home, "car-1", 1);
    let (f_tkt, rnd) = ticket_for(home, &car, &ltca_b(), iv(0, 3600), 4);
    let digest_pca = hash_bind(&pca_b(), &Rnd256([5; 32]));

    let wrong = foreign.exchange_foreign_ticket(&f_tkt, &Rnd256([6; 32]), digest_pca, iv(0, 3600));
    assert_eq!(wrong.unwrap_err().code, ErrorCode::TicketBindingMismatch);

    let outside = foreign.exchange_foreign_ticket(&f_tkt, &rnd, digest_pca, iv(3000, 4000));
    assert_eq!(outside.unwrap_err().code, ErrorCode::IntervalViolation);

    let n = foreign.exchange_foreign_ticket(&f_tkt, &rnd, digest_pca, iv(100, 200)).unwrap();
    assert_eq!(n.issuer, ltca_b());
    assert_eq!(n.interval, iv(0, 3600));
    assert_eq!(n.target_digest, digest_pca);

    let reuse = foreign.exchange_foreign_ticket(&f_tkt, &rnd, digest_pca, iv(0, 3600));
    assert_eq!(reuse.unwrap_err().code, ErrorCode::TicketReused);

    let own = home.exchange_foreign_ticket(&f_tkt, &rnd, digest_pca, iv(0, 3600));
    assert_eq!(own.unwrap_err().code, ErrorCode::UnknownIssuer);

    // Resolution: the foreign LTCA points home, the home LTCA names the car.
    let r = foreign.resolve_ticket(n.serial, false).unwrap();
    assert_eq!(
        r.owner,
        TicketOwner::Foreign {
            home: ltca_a(),
            f_ticket_serial: f_tkt.serial
        }
    );
    assert_eq!(home.resolve_ticket(f_tkt.serial, false).unwrap().owner, TicketOwner::Subject("car-1".into()));
    assert_eq!(
        home.resolve_ticket(SerialNumber(999_999), false).unwrap_err().code,
        ErrorCode::UnknownTicket
    );
}

#[test]
fn native_and_foreign_requests_leave_identical_rows() {
    let f = Fixture::new(&["a", "b"], 50);
    let ltca = f.ltca("a");
    let c1 = register(ltca, "car-1", 1);
    let c2 = register(ltca, "car-2", 2);
    ticket_for(ltca, &c1, &pca_a(), iv(0, 3600), 1);
    ticket_for(ltca, &c2, &ltca_b(), iv(0, 3600), 1);
    let snap = ltca.snapshot();
    let (a, b) = (&snap.tickets[0], &snap.tickets[1]);
    let strip = |r: &vpki_core::snapshot::TicketRow| {
        let mut v = serde_json_value(r);
        for k in ["serial", "subject_id", "target_digest"] {
            v.as_object_mut().unwrap().remove(k);
        }
        v
    };
    assert_eq!(strip(a), strip(b));
    assert_eq!(a.target_digest.len(), b.target_digest.len());
}

fn serde_json_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap()
}

#[test]
fn state_holds_no_pca_identifier() {
    let f = Fixture::new(&["a", "b"], 50);
    let ltca = f.ltca("a");
    for i in 0..5u8 {
        let car = register(ltca, &format!("car-{i}"), i + 1);
        ticket_for(ltca, &car, &pca_a(), iv(0, 3600), i);
    }
    let json = serde_json::to_string(&ltca.snapshot()).unwrap();
    assert!(!json.contains(pca_a().as_str()));
    assert!(!json.contains("pca"));
    let fields = serde_json_value(&ltca.snapshot().tickets[0]);
    let mut keys: Vec<&String> = fields.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["interval", "issued_at", "serial", "subject_id", "target_digest"]);
}

#[test]
fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ltca.log");
    let plan = plan(&["a", "b"]);
    let d = plan.domain("a").unwrap();
    let config = vpki_authority::LtcaConfig {
        id: d.ltca.id.clone(),
        domain: "a".into(),
        policy: d.policy,
        registrar: None,
    };
    let trust = Arc::new(plan.trust.clone());
    let clock: Arc<dyn vpki_core::Clock> = Arc::new(vpki_core::time::ManualClock::new(10));
    let digest = hash_bind(&pca_a(), &Rnd256([1; 32]));
    let first_serial;
    {
        let ltca = vpki_authority::Ltca::open(config.clone(), d.ltca.key.clone(), trust.clone(), clock.clone(), &path).unwrap();
        let car = register(&ltca, "car-1", 1);
        first_serial = ltca.issue_ticket(digest, iv(0, 3600), &car.ltc).unwrap().serial;
        ltca.revoke_ltc("car-1").unwrap();
        register(&ltca, "car-2", 2);
    }
    let ltca = vpki_authority::Ltca::open(config, d.ltca.key.clone(), trust, clock, &path).unwrap();
    assert!(ltca.vehicle("car-1").unwrap().revoked);
    let car2 = ltca.vehicle("car-2").unwrap();
    let clash = ltca.issue_ticket(digest, iv(0, 3600), &car2.current_ltc).unwrap();
    assert!(clash.serial > first_serial);
    assert_eq!(ltca.issue_ticket(digest, iv(0, 10), &car2.current_ltc).unwrap_err().code, ErrorCode::OverlappingTicket);
    assert_eq!(ltca.resolve_ticket(first_serial, false).unwrap().owner, TicketOwner::Subject("car-1".into()));
}

/// Brute-force check over every pair of unexpired entries per subject.
fn ledger_violations(entries: &[vpki_authority::ltca::TicketLedgerEntry]) -> usize {
    let mut bad = 0;
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            if a.subject_id == b.subject_id && a.interval.overlaps(&b.interval) {
                bad += 1;
            }
        }
    }
    bad
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
    #[test]
    fn concurrent_requests_never_overlap(
        requests in proptest::collection::vec((0usize..4, 0u64..20_000, 1u64..8000), 20..120),
    ) {
        let f = Fixture::new(&["a"], 0);
        let ltca = f.ltca("a").clone();
        let cars: Vec<Arc<Car>> = (0..4).map(|i| Arc::new(register(&ltca, &format!("car-{i}"), i as u8 + 1))).collect();
        let handles: Vec<_> = requests
            .chunks(8)
            .map(|chunk| {
                let ltca = ltca.clone();
                let cars = cars.clone();
                let chunk = chunk.to_vec();
                std::thread::spawn(move || {
                    for (who, start, len) in chunk {
                        let digest = hash_bind(&pca_a(), &Rnd256([start as u8; 32]));
                        let _ = ltca.issue_ticket(digest, Interval::new(start, start + len).unwrap(), &cars[who].ltc);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let entries = ltca.ledger_entries();
        proptest::prop_assert_eq!(ledger_violations(&entries), 0);
        for e in &entries {
            proptest::prop_assert_eq!(e.interval.start() % 3600, 0);
            proptest::prop_assert_eq!(e.interval.end() % 3600, 0);
        }
    }
}
