//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is seeded from one master seed through
//! a fixed splitmix64 mix, so a run is a pure function of (config, inputs,
//! master seed). Stage tags are documented constants; derived seeds never
//! depend on thread scheduling or wall-clock time.

/// Stage tags for [`derive`]. Per-class streams add the class index.
pub mod tag {
    pub const PREPARE: u64 = 1;
    pub const TRAIN_INIT: u64 = 2;
    pub const TRAIN_LOOP: u64 = 3;
    pub const RETRAIN_INIT: u64 = 4;
    pub const RETRAIN_LOOP: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    /// GAN for class `c` uses `GAN_BASE + c`.
    pub const GAN_BASE: u64 = 1000;
    /// Synthetic sampling for class `c` uses `SYNTH_BASE + c`.
    pub const SYNTH_BASE: u64 = 2000;
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a stream seed from a master seed and a stage tag.
pub fn derive(master: u64, tag: u64) -> u64 {
    mix(master ^ mix(tag))
}

/// Derive a per-step seed (e.g. a dropout mask for one mini-batch).
pub fn derive3(master: u64, a: u64, b: u64) -> u64 {
    mix(master ^ mix(a) ^ mix(b).rotate_left(17))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_distinct_seeds() {
        let s: Vec<u64> = (0..100).map(|t| derive(42, t)).collect();
        let mut uniq = s.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), s.len());
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive(7, tag::PREPARE), derive(7, tag::PREPARE));
        assert_ne!(derive(7, tag::PREPARE), derive(8, tag::PREPARE));
        assert_ne!(derive3(7, 1, 2), derive3(7, 2, 1));
    }
}
