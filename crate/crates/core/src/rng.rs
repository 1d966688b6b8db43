//! Counter-based random substreams.
//!
//! Every random draw in the toolkit comes from a ChaCha stream keyed by
//! `(seed, frame, index, domain)`, so results do not depend on the order in
//! which particles or tracks are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keeping the streams of different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    World = 1,
    Detector = 2,
    Render = 3,
    DetectionSample = 4,
    Dynamics = 5,
    Resample = 6,
    OutputFrame = 7,
    Regenerate = 8,
    GridTrack = 9,
    GridSubsample = 10,
    Init = 11,
    BirthSample = 12,
    Birth = 13,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent generator for one `(seed, frame, index, domain)`.
pub fn substream(seed: u64, frame: u64, index: u64, domain: Domain) -> StreamRng {
    let mut k = splitmix(seed);
    k = splitmix(k ^ frame);
    k = splitmix(k ^ index.rotate_left(17));
    k = splitmix(k ^ (domain as u64).rotate_left(41));
    ChaCha8Rng::seed_from_u64(k)
}

/// Random-stream handle for one processing stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStreams {
    pub seed: u64,
    pub frame: u64,
}

impl FrameStreams {
    pub fn new(seed: u64, frame: u64) -> Self {
        FrameStreams { seed, frame }
    }

    pub fn stream(&self, index: u64, domain: Domain) -> StreamRng {
        substream(self.seed, self.frame, index, domain)
    }
}
