//! Small integer mixing helpers used to derive independent RNG streams and
//! counter-based noise from a single run seed.

/// splitmix64 finalizer. Bijective on u64, good avalanche; this is the same
/// construction commonly used to expand one seed into many.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a stream seed for a numbered domain (a link, a workload source)
/// from the run seed. Distinct domains get decorrelated streams; the same
/// (seed, domain) pair always yields the same stream.
pub(crate) fn derive_stream_seed(run_seed: u64, domain: u64) -> u64 {
    splitmix64(run_seed ^ splitmix64(domain.wrapping_add(0xA5A5_5A5A_0F0F_F0F0)))
}
