use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Draw {
    /// No candidates; callers fill with the region center.
    Empty,
    /// Exactly `k` `(candidate position, padded)` pairs.
    Picks(Vec<(usize, bool)>),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream per `(seed, proposal, frame)`; execution order never
/// affects which stream a region gets.
pub fn stream_seed(seed: u64, proposal_id: usize, frame_index: u32) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ proposal_id as u64) ^ u64::from(frame_index))
}

/// Picks `k` of `count` candidates uniformly without replacement. With fewer
/// than `k` candidates all are taken in order and then repeated cyclically,
/// the repeats flagged as padded.
pub fn draw(count: usize, k: usize, stream: u64) -> Draw {
    if count == 0 {
        return Draw::Empty;
    }
    if count < k {
        return Draw::Picks((0..k).map(|n| (n % count, n >= count)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut order: Vec<usize> = (0..count).collect();
    for i in 0..k {
        let j = rng.gen_range(i..count);
        order.swap(i, j);
    }
    Draw::Picks(order[..k].iter().map(|&p| (p, false)).collect())
}
