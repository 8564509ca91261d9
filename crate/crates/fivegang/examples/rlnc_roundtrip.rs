//! Random linear network coding end to end: a source encodes a generation,
//! a relay recodes without decoding, and the sink recovers the data by
//! Gaussian elimination the moment it holds K independent combinations.

use fivegang::rlnc::{self, Decoder, Generation, Insert};
use fivegang::rng::stream_rng;

fn main() {
    let message = b"telemetry burst from sensor 7: bearing vibration profile";
    let k = 6;
    let generation = Generation::pack(0, message, k).expect("non-empty generation");
    println!(
        "source: {} bytes split into K={} symbols of {} bytes",
        message.len(),
        generation.k(),
        generation.symbol_len()
    );

    let mut source_rng = stream_rng(1, "source");
    let mut relay_rng = stream_rng(1, "relay");
    let mut relay_buffer = Vec::new();
    let mut decoder = Decoder::new(0, k, generation.symbol_len());

    // The source broadcasts coded packets; the relay buffers what it hears
    // and forwards fresh recoded combinations. The sink hears only the
    // relay.
    let mut emitted = 0;
    loop {
        emitted += 1;
        let packet = rlnc::encode(&generation, &mut source_rng);
        relay_buffer.push(packet);
        let recoded = rlnc::recode(&relay_buffer, &mut relay_rng).expect("buffer non-empty");
        match decoder.insert(&recoded).expect("same generation") {
            Insert::Innovative { rank } => {
                println!("packet {emitted}: innovative, rank {rank}/{k}");
            }
            Insert::Redundant => println!("packet {emitted}: redundant"),
            Insert::Complete(recovered) => {
                println!("packet {emitted}: generation complete");
                let bytes = recovered.unpack().expect("length prefix intact");
                println!(
                    "recovered {} bytes, exact match: {}",
                    bytes.len(),
                    bytes == message
                );
                assert_eq!(bytes, message);
                break;
            }
        }
    }
}
