//! Fixed-capacity FIFO replay memory with uniform sampling.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    /// Next write slot once the ring is full.
    head: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(4096)), capacity, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Insert, evicting the oldest entry once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform sample with replacement; empty when fewer than `batch`
    /// transitions are stored.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        if self.items.len() < batch {
            return Vec::new();
        }
        (0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eviction_is_strictly_fifo() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(i);
        }
        // 0 and 1 evicted, 2..4 retained.
        let mut contents: Vec<i32> = buf.iter().cloned().collect();
        contents.sort_unstable();
        assert_eq!(contents, vec![2, 3, 4]);
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn sampling_only_returns_contained_items() {
        let mut buf = ReplayBuffer::new(10);
        for i in 100..107 {
            buf.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            for &&x in &buf.sample(4, &mut rng) {
                assert!((100..107).contains(&x));
            }
        }
    }

    #[test]
    fn undersized_buffer_yields_no_batch() {
        let mut buf = ReplayBuffer::new(10);
        buf.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(buf.sample(2, &mut rng).is_empty());
    }
}
