use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FifoError {
    #[error("push after end-of-stream")]
    Closed,
    #[error("chunk of {len} bytes exceeds the {max}-byte chunk size")]
    Oversized { len: usize, max: usize },
}

/// Outcome of a push. A full channel is a blocking condition for the
/// caller, not an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Push {
    Accepted,
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pop {
    Chunk(Vec<u8>),
    /// Nothing queued yet; the consumer must wait.
    Empty,
    EndOfStream,
}

/// Bounded chunk queue backing a streaming register.
#[derive(Clone, Debug)]
pub struct FifoChannel {
    chunk_bytes: usize,
    capacity: usize,
    queue: VecDeque<Vec<u8>>,
    reserved: usize,
    closed: bool,
    pushed_bytes: usize,
    popped_bytes: usize,
}

impl FifoChannel {
    pub fn new(chunk_bytes: usize, capacity: usize) -> Self {
        FifoChannel {
            chunk_bytes,
            capacity,
            queue: VecDeque::with_capacity(capacity),
            reserved: 0,
            closed: false,
            pushed_bytes: 0,
            popped_bytes: 0,
        }
    }

    pub fn chunk_bytes(&self) -> usize {
        self.chunk_bytes
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Queued chunks plus reserved slots.
    pub fn occupancy(&self) -> usize {
        self.queue.len() + self.reserved
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn pushed_bytes(&self) -> usize {
        self.pushed_bytes
    }

    pub fn popped_bytes(&self) -> usize {
        self.popped_bytes
    }

    fn check(&self, chunk: &[u8]) -> Result<(), FifoError> {
        if self.closed {
            return Err(FifoError::Closed);
        }
        if chunk.len() > self.chunk_bytes {
            return Err(FifoError::Oversized { len: chunk.len(), max: self.chunk_bytes });
        }
        Ok(())
    }

    pub fn push(&mut self, chunk: Vec<u8>) -> Result<Push, FifoError> {
        self.check(&chunk)?;
        if self.occupancy() >= self.capacity {
            return Ok(Push::Full);
        }
        self.pushed_bytes += chunk.len();
        self.queue.push_back(chunk);
        Ok(Push::Accepted)
    }

    /// Claims a slot for a chunk that will be pushed later. Returns false
    /// when the channel is full.
    pub fn try_reserve(&mut self) -> bool {
        if self.closed || self.occupancy() >= self.capacity {
            return false;
        }
        self.reserved += 1;
        true
    }

    /// Pushes into a slot previously claimed with [`try_reserve`](Self::try_reserve).
    /// Allowed after [`close`](Self::close): a reservation outlives it.
    pub fn push_reserved(&mut self, chunk: Vec<u8>) -> Result<(), FifoError> {
        if chunk.len() > self.chunk_bytes {
            return Err(FifoError::Oversized { len: chunk.len(), max: self.chunk_bytes });
        }
        assert!(self.reserved > 0, "push_reserved without a reservation");
        self.reserved -= 1;
        self.pushed_bytes += chunk.len();
        self.queue.push_back(chunk);
        Ok(())
    }

    pub fn pop(&mut self) -> Pop {
        match self.queue.pop_front() {
            Some(chunk) => {
                self.popped_bytes += chunk.len();
                Pop::Chunk(chunk)
            }
            None if self.closed && self.reserved == 0 => Pop::EndOfStream,
            None => Pop::Empty,
        }
    }

    pub fn close(&mut self) {
        self.closed = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fifo_order() {
        let mut ch = FifoChannel::new(4, 16);
        assert_eq!(ch.push(b"A".to_vec()), Ok(Push::Accepted));
        assert_eq!(ch.push(b"B".to_vec()), Ok(Push::Accepted));
        assert_eq!(ch.pop(), Pop::Chunk(b"A".to_vec()));
        assert_eq!(ch.pop(), Pop::Chunk(b"B".to_vec()));
        assert_eq!(ch.pop(), Pop::Empty);
    }

    #[test]
    fn full_channel_blocks_until_pop() {
        let mut ch = FifoChannel::new(1, 16);
        for i in 0..16u8 {
            assert_eq!(ch.push(vec![i]), Ok(Push::Accepted));
        }
        assert_eq!(ch.push(vec![16]), Ok(Push::Full));
        assert_eq!(ch.occupancy(), 16);
        assert_eq!(ch.pop(), Pop::Chunk(vec![0]));
        assert_eq!(ch.push(vec![16]), Ok(Push::Accepted));
    }

    #[test]
    fn end_of_stream() {
        let mut ch = FifoChannel::new(8, 2);
        ch.close();
        assert_eq!(ch.pop(), Pop::EndOfStream);
        assert_eq!(ch.push(vec![1]), Err(FifoError::Closed));
    }

    #[test]
    fn reservations_count_toward_capacity() {
        let mut ch = FifoChannel::new(8, 2);
        assert!(ch.try_reserve());
        assert!(ch.try_reserve());
        assert!(!ch.try_reserve());
        assert_eq!(ch.push(vec![0]), Ok(Push::Full));
        ch.close();
        assert_eq!(ch.pop(), Pop::Empty);
        ch.push_reserved(vec![1]).unwrap();
        ch.push_reserved(vec![2]).unwrap();
        assert_eq!(ch.pop(), Pop::Chunk(vec![1]));
        assert_eq!(ch.pop(), Pop::Chunk(vec![2]));
        assert_eq!(ch.pop(), Pop::EndOfStream);
    }

    #[test]
    fn oversized_chunk() {
        let mut ch = FifoChannel::new(2, 2);
        assert_eq!(ch.push(vec![0; 3]), Err(FifoError::Oversized { len: 3, max: 2 }));
    }

    proptest! {
        #[test]
        fn conservation(chunks in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..8), 0..64),
                        pops in prop::collection::vec(any::<bool>(), 0..128)) {
            let mut ch = FifoChannel::new(8, 4);
            let mut pushed = Vec::new();
            let mut popped = Vec::new();
            let mut source = chunks.into_iter();
            let mut next = source.next();
            for pop_now in pops {
                if pop_now {
                    if let Pop::Chunk(c) = ch.pop() { popped.extend(c); }
                } else if let Some(c) = next.clone() {
                    if ch.push(c.clone()).unwrap() == Push::Accepted {
                        pushed.extend(c);
                        next = source.next();
                    }
                }
                prop_assert!(ch.occupancy() <= ch.capacity());
            }
            ch.close();
            while let Pop::Chunk(c) = ch.pop() { popped.extend(c); }
            prop_assert_eq!(ch.pop(), Pop::EndOfStream);
            prop_assert_eq!(&pushed, &popped);
            prop_assert_eq!(ch.pushed_bytes(), ch.popped_bytes());
        }
    }
}
