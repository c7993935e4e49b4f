use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vpki_core::credential::{SignedCredential, ValidationResult};
use vpki_core::crypto::{self, generate_keypair, hash_bind, Digest256, Rnd256, Signature};
use vpki_core::{
    validate_chain, AuthorityCertificate, CaId, Canonical, Interval, Role, SerialNumber, Ticket,
    TrustStore,
};

#[test]
fn single_bit_mutations_never_verify() {
    let kp = generate_keypair(Some([9; 32]));
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for i in 0..1000 {
        let mut msg = vec![0u8; 1 + i % 200];
        rng.fill(&mut msg[..]);
        let sig = crypto::sign(&kp.private, &msg);
        assert!(crypto::verify(&kp.public, &msg, &sig));

        let mut bad_msg = msg.clone();
        let bit = rng.gen_range(0..bad_msg.len() * 8);
        bad_msg[bit / 8] ^= 1 << (bit % 8);
        assert!(!crypto::verify(&kp.public, &bad_msg, &sig), "message bit {bit} flip verified");

        let mut raw = sig.as_bytes().to_vec();
        let bit = rng.gen_range(0..raw.len() * 8);
        raw[bit / 8] ^= 1 << (bit % 8);
        assert!(
            !crypto::verify(&kp.public, &msg, &Signature::from_bytes(raw)),
            "signature bit {bit} flip verified"
        );
    }
}

fn store() -> (TrustStore, vpki_core::KeyPair) {
    let rca = generate_keypair(Some([1; 32]));
    let ltca = generate_keypair(Some([2; 32]));
    let validity = Interval::new(0, u64::MAX / 2).unwrap();
    let rca_id: CaId = "rca".parse().unwrap();
    let root = AuthorityCertificate::issue(
        rca_id.clone(), Role::Rca, "se".into(), rca.public.clone(), rca_id.clone(), validity, &rca.private,
    );
    let l = AuthorityCertificate::issue(
        "ltca-se".parse().unwrap(), Role::Ltca, "se".into(), ltca.public.clone(), rca_id, validity, &rca.private,
    );
    (TrustStore::from_certificates(vec![root, l]).unwrap(), ltca)
}

#[test]
fn mutated_ticket_fields_fail_chain_validation() {
    let (trust, ltca) = store();
    let digest = hash_bind(&"pca-se-1".parse().unwrap(), &Rnd256([5; 32]));
    let t = Ticket::issue(
        SerialNumber(1), digest, Interval::new(3600, 7200).unwrap(), 7200,
        "ltca-se".parse().unwrap(), &ltca.private,
    );
    assert_eq!(validate_chain(&t, &trust, 4000), ValidationResult::Valid);
    let bytes = t.to_canonical_bytes();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..300 {
        let mut m = bytes.clone();
        let bit = rng.gen_range(0..m.len() * 8);
        m[bit / 8] ^= 1 << (bit % 8);
        // Most flips break the framing; those that still decode must not validate.
        if let Ok(mt) = Ticket::from_canonical_bytes(&m) {
            assert_ne!(validate_chain(&mt, &trust, 4000), ValidationResult::Valid);
        }
    }
    let mut other = t.clone();
    other.target_digest = Digest256([0; 32]);
    assert_eq!(validate_chain(&other, &trust, 4000), ValidationResult::BadSignature);
    assert!(t.tbs_bytes().len() + 68 == bytes.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn sign_verify_round_trip(seed in proptest::array::uniform32(any::<u8>()), msg in proptest::collection::vec(any::<u8>(), 0..256)) {
        let kp = generate_keypair(Some(seed));
        let s = crypto::sign(&kp.private, &msg);
        prop_assert_eq!(s.as_bytes().len(), 64);
        prop_assert!(crypto::verify(&kp.public, &msg, &s));
        prop_assert_eq!(crypto::sign(&kp.private, &msg), s);
    }
}
