//! Topic pub/sub with at-least-once delivery: retransmissions carry the
//! same (publisher, seq) and the broker deduplicates them, so subscribers
//! see each unique message exactly once.

use fivegang::cloud::Broker;

fn main() {
    let mut broker = Broker::new();
    let vibration = broker.subscribe("analytics", "plant/+/vibration").unwrap();
    let everything_line1 = broker.subscribe("audit", "plant/line1/+").unwrap();

    let publishes = [
        ("plant/line1/vibration", 0u64),
        ("plant/line1/vibration", 0), // retransmission
        ("plant/line1/temp", 1),
        ("plant/line2/vibration", 0),
        ("plant/line2/temp", 1),
    ];
    for (topic, seq) in publishes {
        let delivered = broker
            .publish(topic, b"reading", &format!("pub:{topic}"), seq)
            .unwrap();
        println!("publish {topic:<24} seq={seq} -> {delivered} deliveries");
    }

    // One retransmission arrived; the duplicate never reached a queue.
    let analytics = broker.drain(vibration);
    let audit = broker.drain(everything_line1);
    println!(
        "analytics got {} messages: {:?}",
        analytics.len(),
        analytics.iter().map(|d| d.topic.as_str()).collect::<Vec<_>>()
    );
    println!(
        "audit got {} messages: {:?}",
        audit.len(),
        audit.iter().map(|d| d.topic.as_str()).collect::<Vec<_>>()
    );
    println!("dedup dropped: {}", broker.dedup_dropped);
    assert_eq!(analytics.len(), 2);
    assert_eq!(audit.len(), 2);
}
