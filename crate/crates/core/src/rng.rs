//! Named, independently seeded random streams derived from one master seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The stochastic components of the workload; each gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamId {
    Arrival,
    Exec,
    Depth,
    Routing,
    Communication,
}

impl StreamId {
    pub const ALL: [StreamId; 5] = [
        StreamId::Arrival,
        StreamId::Exec,
        StreamId::Depth,
        StreamId::Routing,
        StreamId::Communication,
    ];

    fn index(self) -> u64 {
        match self {
            StreamId::Arrival => 1,
            StreamId::Exec => 2,
            StreamId::Depth => 3,
            StreamId::Routing => 4,
            StreamId::Communication => 5,
        }
    }
}

/// One deterministic random sequence: ChaCha8 keyed by the master seed, with the
/// stream id selecting the ChaCha stream. Same `(seed, id)` gives the same draws
/// on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.index());
        RngStream { seed, id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Next value in `[0, 1)`.
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The full set of streams for one simulation run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub arrival: RngStream,
    pub exec: RngStream,
    pub depth: RngStream,
    pub routing: RngStream,
    pub communication: RngStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            arrival: RngStream::new(seed, StreamId::Arrival),
            exec: RngStream::new(seed, StreamId::Exec),
            depth: RngStream::new(seed, StreamId::Depth),
            routing: RngStream::new(seed, StreamId::Routing),
            communication: RngStream::new(seed, StreamId::Communication),
        }
    }
}
