//! Open-addressing map from packed voxel coordinates to slot indices.

/// Sentinel returned by [`VoxelHash::get`] for absent keys.
pub const EMPTY: u32 = u32::MAX;

const MIN_CAPACITY: usize = 16;

/// Packs `(i + 2^31, j + 2^31)` into one word.
#[inline]
pub fn pack(i: i32, j: i32) -> u64 {
    let hi = (i64::from(i) + (1 << 31)) as u64;
    let lo = (i64::from(j) + (1 << 31)) as u64;
    (hi << 32) | lo
}

#[inline]
pub fn unpack(key: u64) -> (i32, i32) {
    let i = (key >> 32) as i64 - (1 << 31);
    let j = (key & 0xffff_ffff) as i64 - (1 << 31);
    (i as i32, j as i32)
}

/// Neighbouring `j` share a block of this many buckets, so a row of voxels
/// probes a few cache lines instead of one per voxel.
const BLOCK: u64 = 4;

/// Home bucket: the block of `(i, j / BLOCK)` through the finalizer, then
/// `j mod BLOCK` within it.
#[inline]
fn home(key: u64, mask: usize) -> usize {
    let within = key % BLOCK;
    ((mix(key - within) as usize) & mask & !(BLOCK as usize - 1)) | within as usize
}

/// 64-bit finalizer (MurmurHash3 fmix64).
#[inline]
fn mix(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// Interning table from packed keys to dense ids `0, 1, 2, ...` in
/// insertion order. Linear probing over a power-of-two table of ids kept at
/// most half full; keys live densely by id, so the probed table is 4 bytes
/// per bucket.
#[derive(Debug, Clone)]
pub struct VoxelHash {
    table: Vec<u32>,
    keys: Vec<u64>,
}

impl Default for VoxelHash {
    fn default() -> Self {
        Self::with_capacity(0)
    }
}

impl VoxelHash {
    /// Table sized for `entries` keys without growing.
    pub fn with_capacity(entries: usize) -> Self {
        let cap = (entries.max(1) * 2).next_power_of_two().max(MIN_CAPACITY);
        Self {
            table: vec![EMPTY; cap],
            keys: Vec::with_capacity(entries),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.table.len()
    }

    /// Key of id `id`.
    #[inline]
    pub fn key(&self, id: u32) -> u64 {
        self.keys[id as usize]
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    #[inline]
    fn mask(&self) -> usize {
        self.table.len() - 1
    }

    /// Id of `key`, or [`EMPTY`].
    #[inline]
    pub fn get(&self, key: u64) -> u32 {
        let mask = self.mask();
        let mut pos = home(key, mask);
        loop {
            let id = self.table[pos];
            if id == EMPTY || self.keys[id as usize] == key {
                return id;
            }
            pos = (pos + 1) & mask;
        }
    }

    /// Id of `key`, assigning the next id when absent. The flag is true when
    /// a new entry was created.
    #[inline]
    pub fn get_or_insert(&mut self, key: u64) -> (u32, bool) {
        if (self.keys.len() + 1) * 2 > self.capacity() {
            self.grow();
        }
        let mask = self.mask();
        let mut pos = home(key, mask);
        loop {
            let id = self.table[pos];
            if id == EMPTY {
                let id = self.keys.len() as u32;
                assert_ne!(id, EMPTY, "voxel hash is full");
                self.table[pos] = id;
                self.keys.push(key);
                return (id, true);
            }
            if self.keys[id as usize] == key {
                return (id, false);
            }
            pos = (pos + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let cap = self.capacity() * 2;
        self.table = vec![EMPTY; cap];
        let mask = cap - 1;
        for (id, &key) in self.keys.iter().enumerate() {
            let mut pos = home(key, mask);
            while self.table[pos] != EMPTY {
                pos = (pos + 1) & mask;
            }
            self.table[pos] = id as u32;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u32)> + '_ {
        self.keys.iter().enumerate().map(|(id, &k)| (k, id as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn pack_round_trip_extremes() {
        for (i, j) in [
            (0, 0),
            (-1, 1),
            (i32::MIN, i32::MAX),
            (i32::MAX, i32::MIN),
            (2, -1),
        ] {
            assert_eq!(unpack(pack(i, j)), (i, j));
        }
        assert_ne!(pack(0, 1), pack(1, 0));
    }

    #[test]
    fn matches_std_hashmap() {
        let mut table = VoxelHash::default();
        let mut reference = HashMap::new();
        let mut state = 0x1234_5678_u64;
        for _ in 0..20_000 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let i = ((state >> 33) % 300) as i32 - 150;
            let j = ((state >> 13) % 300) as i32 - 150;
            let key = pack(i, j);
            let next = reference.len() as u32;
            let expected = *reference.entry(key).or_insert(next);
            assert_eq!(table.get_or_insert(key).0, expected);
        }
        assert_eq!(table.len(), reference.len());
        assert!(table.capacity() >= 2 * table.len());
        assert!(table.capacity().is_power_of_two());
        for (k, v) in &reference {
            assert_eq!(table.get(*k), *v);
        }
        assert_eq!(table.get(pack(10_000, 10_000)), EMPTY);
        assert_eq!(table.iter().count(), reference.len());
        assert!(table.iter().all(|(k, id)| table.key(id) == k));
    }
}
