//! Exact integer arithmetic for residue-defined source routing.
//!
//! A route identifier is a single unsigned integer whose remainder modulo
//! each core switch identifier selects the egress port at that switch.
//! Given one `(modulus, port)` constraint per core hop, the Chinese
//! remainder theorem yields the smallest identifier that satisfies all of
//! them at once. The identifier travels in the packet's 6-octet
//! source-address field, which caps it at 48 bits.

use std::fmt;

use thiserror::Error;

/// Route identifiers must fit the 6-octet address field that carries them.
pub const ROUTE_ID_BITS: u32 = 48;

/// Largest representable route identifier (`2^48 - 1`).
pub const MAX_ROUTE_ID: u64 = (1 << ROUTE_ID_BITS) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResidueError {
    #[error("modulus {0} is invalid: switch identifiers must be at least 2")]
    InvalidModulus(u64),
    #[error("{a} has no inverse modulo {m}: values are not coprime")]
    NotCoprime { a: u64, m: u64 },
    #[error("moduli {0} and {1} share a common factor")]
    ModuliNotCoprime(u64, u64),
    #[error("modulus product exceeds the 48-bit route-id space")]
    RouteIdOverflow,
    #[error("residue {residue} is out of range for modulus {modulus}")]
    ResidueOutOfRange { residue: u64, modulus: u64 },
    #[error("constraint list is empty")]
    NoConstraints,
}

/// 48-bit route identifier carried in the packet source-address field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RouteId(u64);

impl RouteId {
    pub const ZERO: RouteId = RouteId(0);

    pub fn new(value: u64) -> Result<Self, ResidueError> {
        if value > MAX_ROUTE_ID {
            return Err(ResidueError::RouteIdOverflow);
        }
        Ok(RouteId(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Core switch identifier; doubles as the CRT modulus for that switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoreSwitchId(u64);

impl CoreSwitchId {
    pub fn new(modulus: u64) -> Result<Self, ResidueError> {
        if modulus < 2 {
            return Err(ResidueError::InvalidModulus(modulus));
        }
        Ok(CoreSwitchId(modulus))
    }

    pub fn modulus(self) -> u64 {
        self.0
    }
}

impl fmt::Display for CoreSwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One per-hop routing constraint: leave the switch with this identifier
/// through this port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidueConstraint {
    modulus: CoreSwitchId,
    residue: u64,
}

impl ResidueConstraint {
    pub fn new(modulus: CoreSwitchId, residue: u64) -> Result<Self, ResidueError> {
        if residue >= modulus.modulus() {
            return Err(ResidueError::ResidueOutOfRange {
                residue,
                modulus: modulus.modulus(),
            });
        }
        Ok(ResidueConstraint { modulus, residue })
    }

    pub fn modulus(&self) -> CoreSwitchId {
        self.modulus
    }

    pub fn residue(&self) -> u64 {
        self.residue
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Modular inverse by the extended Euclidean algorithm.
///
/// Returns the unique `x` in `[0, m)` with `(a * x) % m == 1`.
pub fn mod_inverse(a: u64, m: u64) -> Result<u64, ResidueError> {
    if m < 2 {
        return Err(ResidueError::InvalidModulus(m));
    }
    let a_red = a % m;
    let (mut r, mut new_r) = (m as i128, a_red as i128);
    let (mut t, mut new_t) = (0i128, 1i128);
    while new_r != 0 {
        let q = r / new_r;
        (r, new_r) = (new_r, r - q * new_r);
        (t, new_t) = (new_t, t - q * new_t);
    }
    if r != 1 {
        return Err(ResidueError::NotCoprime { a, m });
    }
    if t < 0 {
        t += m as i128;
    }
    Ok(t as u64)
}

/// Synthesizes the smallest route identifier satisfying every constraint.
///
/// The moduli must be pairwise coprime and their product must fit the
/// 48-bit route-id space; the result is the unique solution below the
/// product. Intermediates run in 128-bit arithmetic so the product check
/// never wraps.
pub fn crt_solve(constraints: &[ResidueConstraint]) -> Result<RouteId, ResidueError> {
    if constraints.is_empty() {
        return Err(ResidueError::NoConstraints);
    }
    for (i, a) in constraints.iter().enumerate() {
        for b in &constraints[i + 1..] {
            let (ma, mb) = (a.modulus.modulus(), b.modulus.modulus());
            if gcd(ma, mb) != 1 {
                return Err(ResidueError::ModuliNotCoprime(ma, mb));
            }
        }
    }
    let mut product: u128 = 1;
    for c in constraints {
        product *= c.modulus.modulus() as u128;
        if product > (1u128 << ROUTE_ID_BITS) {
            return Err(ResidueError::RouteIdOverflow);
        }
    }

    // Fold constraints together pairwise: keep a solution `x` modulo the
    // running product `m`, then lift it to also satisfy the next residue.
    let mut x: u128 = constraints[0].residue as u128;
    let mut m: u128 = constraints[0].modulus.modulus() as u128;
    for c in &constraints[1..] {
        let mi = c.modulus.modulus() as u128;
        let inv = mod_inverse((m % mi) as u64, mi as u64)? as u128;
        let diff = (c.residue as u128 + mi - x % mi) % mi;
        x += m * ((diff * inv) % mi);
        m *= mi;
    }
    debug_assert!(x < m);
    RouteId::new(x as u64)
}

/// The forwarding rule of a core switch: route identifier modulo switch
/// identifier gives the egress port. Total; the dataplane decides what an
/// unconnected port means.
pub fn modulo_forward(route: RouteId, switch: CoreSwitchId) -> u64 {
    route.value() % switch.modulus()
}

/// Big-endian 6-octet encoding of a route identifier, as written into the
/// packet's source-address field.
pub fn encode_route_field(route: RouteId) -> [u8; 6] {
    let bytes = route.value().to_be_bytes();
    [bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7]]
}

/// Inverse of [`encode_route_field`]. Any 6 octets decode to a valid id.
pub fn decode_route_field(field: [u8; 6]) -> RouteId {
    let mut bytes = [0u8; 8];
    bytes[2..].copy_from_slice(&field);
    RouteId(u64::from_be_bytes(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(m: u64, r: u64) -> ResidueConstraint {
        ResidueConstraint::new(CoreSwitchId::new(m).unwrap(), r).unwrap()
    }

    /// Independent oracle: ascending scan for the first value satisfying
    /// every congruence. Only usable when the modulus product is small.
    fn brute_force_crt(constraints: &[(u64, u64)]) -> Option<u64> {
        let product: u64 = constraints.iter().map(|&(m, _)| m).product();
        (0..product).find(|&r| constraints.iter().all(|&(m, p)| r % m == p))
    }

    #[test]
    fn mod_inverse_identity() {
        assert_eq!(mod_inverse(1, 7).unwrap(), 1);
    }

    #[test]
    fn mod_inverse_by_exhaustive_scan() {
        // 8 * 7 = 56, 56 mod 11 = 1
        assert_eq!(mod_inverse(8, 11).unwrap(), 7);
        // 3 * 5 = 15, 15 mod 7 = 1
        assert_eq!(mod_inverse(3, 7).unwrap(), 5);
        for m in [7u64, 11, 13] {
            for a in 1..m {
                let scan = (0..m).find(|x| (a * x) % m == 1).unwrap();
                assert_eq!(mod_inverse(a, m).unwrap(), scan);
            }
        }
    }

    #[test]
    fn mod_inverse_rejects_shared_factor() {
        assert_eq!(
            mod_inverse(4, 8),
            Err(ResidueError::NotCoprime { a: 4, m: 8 })
        );
    }

    #[test]
    fn mod_inverse_rejects_degenerate_modulus() {
        assert_eq!(mod_inverse(3, 1), Err(ResidueError::InvalidModulus(1)));
        assert_eq!(mod_inverse(3, 0), Err(ResidueError::InvalidModulus(0)));
    }

    #[test]
    fn crt_solves_worked_route() {
        // Brute force over [0, 11*19*17) confirms 133 is the smallest
        // solution of r%11==1, r%19==0, r%17==14.
        assert_eq!(
            brute_force_crt(&[(11, 1), (19, 0), (17, 14)]),
            Some(133)
        );
        let r = crt_solve(&[c(11, 1), c(19, 0), c(17, 14)]).unwrap();
        assert_eq!(r.value(), 133);
    }

    #[test]
    fn crt_all_zero_residues() {
        assert_eq!(crt_solve(&[c(11, 0), c(19, 0)]).unwrap(), RouteId::ZERO);
    }

    #[test]
    fn crt_single_constraint_is_residue() {
        assert_eq!(crt_solve(&[c(13, 5)]).unwrap().value(), 5);
    }

    #[test]
    fn crt_rejects_empty() {
        assert_eq!(crt_solve(&[]), Err(ResidueError::NoConstraints));
    }

    #[test]
    fn crt_rejects_shared_factor() {
        assert_eq!(
            crt_solve(&[c(10, 1), c(15, 2)]),
            Err(ResidueError::ModuliNotCoprime(10, 15))
        );
    }

    #[test]
    fn crt_rejects_product_above_48_bits() {
        // 2^47 and 3 are coprime but their product is 1.5 * 2^48.
        let big = CoreSwitchId::new(1 << 47).unwrap();
        let cs = [
            ResidueConstraint::new(big, 5).unwrap(),
            c(3, 1),
        ];
        assert_eq!(crt_solve(&cs), Err(ResidueError::RouteIdOverflow));
    }

    #[test]
    fn constraint_rejects_residue_at_modulus() {
        let err = ResidueConstraint::new(CoreSwitchId::new(11).unwrap(), 11);
        assert_eq!(
            err,
            Err(ResidueError::ResidueOutOfRange {
                residue: 11,
                modulus: 11
            })
        );
    }

    #[test]
    fn modulo_forward_worked_example() {
        let route = RouteId::new(133).unwrap();
        assert_eq!(modulo_forward(route, CoreSwitchId::new(11).unwrap()), 1);
        // Integer-division oracle: 133 - 19 * (133 / 19) == 0.
        assert_eq!(133 - 19 * (133 / 19), 0);
        assert_eq!(modulo_forward(route, CoreSwitchId::new(19).unwrap()), 0);
        assert_eq!(
            modulo_forward(RouteId::ZERO, CoreSwitchId::new(17).unwrap()),
            0
        );
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_route_field(RouteId::ZERO), [0; 6]);
        // 133 = 0x85 by base-16 conversion.
        assert_eq!(
            encode_route_field(RouteId::new(133).unwrap()),
            [0, 0, 0, 0, 0, 0x85]
        );
        assert_eq!(
            encode_route_field(RouteId::new(MAX_ROUTE_ID).unwrap()),
            [0xff; 6]
        );
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_route_field([0, 0, 0, 0, 0, 0x85]).value(), 133);
        assert_eq!(decode_route_field([0; 6]), RouteId::ZERO);
        assert_eq!(decode_route_field([0xff; 6]).value(), MAX_ROUTE_ID);
    }

    #[test]
    fn route_id_rejects_49_bit_value() {
        assert_eq!(RouteId::new(1 << 48), Err(ResidueError::RouteIdOverflow));
        assert!(RouteId::new(MAX_ROUTE_ID).is_ok());
    }

    /// Pairwise-coprime moduli sets built by assigning distinct primes
    /// (with small powers) to each slot, capped to the 48-bit product.
    fn coprime_moduli(max_product: u64) -> impl Strategy<Value = Vec<u64>> {
        const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
        (2usize..=5, proptest::collection::vec(1u32..=3, 12), any::<u64>()).prop_map(
            move |(k, exps, shuffle_seed)| {
                let mut order: Vec<usize> = (0..PRIMES.len()).collect();
                // Cheap deterministic shuffle driven by the seed.
                for i in (1..order.len()).rev() {
                    let j = (shuffle_seed

                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(i as u64))
                        as usize
                        % (i + 1);
                    order.swap(i, j);
                }
                let mut moduli = Vec::new();
                let mut product: u128 = 1;
                for &pi in order.iter().take(k) {
                    let mut m = PRIMES[pi];
                    for _ in 1..exps[pi] {
                        match m.checked_mul(PRIMES[pi]) {
                            Some(v) if (product * v as u128) <= max_product as u128 => m = v,
                            _ => break,
                        }
                    }
                    if product * m as u128 > max_product as u128 {
                        continue;
                    }
                    product *= m as u128;
                    moduli.push(m);
                }
                if moduli.is_empty() {
                    moduli.push(2);
                }
                moduli
            },
        )
    }

    fn constraints_for(moduli: &[u64], seed: u64) -> Vec<ResidueConstraint> {
        moduli
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let r = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(i as u64) % m;
                c(m, r)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(v in 0u64..=MAX_ROUTE_ID) {
            let route = RouteId::new(v).unwrap();
            prop_assert_eq!(decode_route_field(encode_route_field(route)), route);
        }

        #[test]
        fn crt_satisfies_every_constraint(
            moduli in coprime_moduli(MAX_ROUTE_ID),
            seed in any::<u64>(),
        ) {
            let cs = constraints_for(&moduli, seed);
            let route = crt_solve(&cs).unwrap();
            for k in &cs {
                prop_assert_eq!(modulo_forward(route, k.modulus()), k.residue());
            }
            let product: u128 = moduli.iter().map(|&m| m as u128).product();
            prop_assert!((route.value() as u128) < product);
        }

        #[test]
        fn crt_matches_brute_force_when_small(
            moduli in coprime_moduli(1_000_000),
            seed in any::<u64>(),
        ) {
            let cs = constraints_for(&moduli, seed);
            let expected = brute_force_crt(
                &cs.iter().map(|k| (k.modulus().modulus(), k.residue())).collect::<Vec<_>>(),
            );
            prop_assert_eq!(Some(crt_solve(&cs).unwrap().value()), expected);
        }

        #[test]
        fn crt_is_order_independent(
            moduli in coprime_moduli(MAX_ROUTE_ID),
            seed in any::<u64>(),
            rot in 0usize..5,
        ) {
            let cs = constraints_for(&moduli, seed);
            let mut rotated = cs.clone();
            rotated.rotate_left(rot % cs.len().max(1));
            prop_assert_eq!(crt_solve(&cs), crt_solve(&rotated));
        }
    }
}
