//! Append-only request intake shared between producers and the engine.

use std::collections::VecDeque;
use std::sync::Mutex;

use crate::procedure::Request;

#[derive(Debug, Default)]
pub struct IntakeQueue {
    pending: Mutex<VecDeque<Request>>,
}

impl IntakeQueue {
    pub fn new() -> IntakeQueue {
        IntakeQueue::default()
    }

    pub fn submit(&self, req: Request) {
        self.pending.lock().expect("intake lock").push_back(req);
    }

    pub fn len(&self) -> usize {
        self.pending.lock().expect("intake lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Takes everything submitted so far, in arrival order.
    pub fn drain(&self) -> Vec<Request> {
        self.pending.lock().expect("intake lock").drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn concurrent_producers_lose_nothing() {
        let q = Arc::new(IntakeQueue::new());
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let q = Arc::clone(&q);
                std::thread::spawn(move || {
                    for i in 0..50 {
                        let id = format!("r{t}-{i}");
                        q.submit(Request::parse(&id, "u", "rpa_test()", 0.0).unwrap());
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let got = q.drain();
        assert_eq!(got.len(), 200);
        assert!(q.is_empty());
        for t in 0..4 {
            let mine: Vec<_> = got
                .iter()
                .filter(|r| r.request_id.starts_with(&format!("r{t}-")))
                .collect();
            assert!(mine.windows(2).all(|w| {
                let n = |r: &Request| r.request_id.rsplit('-').next().unwrap().parse::<u32>().unwrap();
                n(w[0]) < n(w[1])
            }));
        }
    }
}
